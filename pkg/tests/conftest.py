import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sensefuse.core import validate_config
from sensefuse.synth import CohortSpec, generate


@pytest.fixture(scope="session")
def small_cohort():
    """A 40-participant cohort shared by the integration-style tests."""
    spec = CohortSpec(n_participants=40, seed=11, days=5, n_social_features=12,
                      n_phone_static=8, n_heart_derived=4)
    universe, debug = generate(spec)
    return universe, debug


@pytest.fixture()
def fast_config():
    """A config small enough for per-test pipeline runs."""
    return validate_config({
        "seed": 11, "folds": 4, "top_k_per_modality": 8,
        "social_pca_components": 4,
        "hon_orders": [1, 2], "hon_pca_components": 3,
        "constructs": ["irb", "alcohol", "ocb", "sleep"],
        "candidates": [["ols", {}], ["ridge", {"alpha": 1.0}],
                       ["cart", {"min_leaf": 5, "max_depth": 3}]],
        "k_clusters": 3,
        "gemm_restarts": 2, "gemm_iters": 10, "gemm_top_features": 2,
        "bootstrap_samples": 200,
    })


@pytest.fixture(autouse=True)
def _quiet_expected_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield
