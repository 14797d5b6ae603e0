import math

import pytest

from sensefuse.core import (
    ConstructId,
    clamp_to_range,
    construct_registry,
    load_config,
    validate_config,
)
from sensefuse.errors import InvalidConfig, NonFiniteValue


def test_empty_config_fills_documented_defaults():
    cfg = validate_config({})
    assert cfg.folds == 5
    assert cfg.top_k_per_modality == 20
    assert cfg.social_pca_components == 200
    assert cfg.hon_orders == (1, 2, 3, 4, 5)
    assert cfg.hon_pca_components == 5
    assert cfg.slot_minutes == 30


def test_folds_below_two_rejected():
    with pytest.raises(InvalidConfig) as err:
        validate_config({"folds": 1})
    assert err.value.field == "folds"


def test_single_hon_order_accepted():
    cfg = validate_config({"hon_orders": [3]})
    assert cfg.hon_orders == (3,)


def test_unknown_field_rejected():
    with pytest.raises(InvalidConfig):
        validate_config({"not_a_field": 1})


@pytest.mark.parametrize("bad", [
    {"top_k_per_modality": 0},
    {"hon_orders": []},
    {"hon_orders": [0]},
    {"slot_minutes": 0},
    {"holdout_fraction": 1.0},
    {"selection_method": "kendall"},
    {"smape_definition": "classic-100"},
    {"imputation_policy": [["wearable", "magic"]]},
    {"construct_ranges": [["irb", 7, 1]]},
    {"constructs": ["irb", "irb"]},
])
def test_invariant_violations_rejected(bad):
    with pytest.raises(InvalidConfig):
        validate_config(bad)


def test_registry_has_exactly_19_unique_constructs():
    registry = construct_registry()
    assert len(registry) == 19
    ids = [c.id for c in registry.values()]
    assert len(set(ids)) == 19
    assert all(c.lo < c.hi for c in registry.values())


def test_clamp_examples():
    registry = construct_registry()
    irb = registry[ConstructId.IRB]          # [1, 7]
    sleep = registry[ConstructId.SLEEP]      # [0, 21]
    assert clamp_to_range(irb, 9.2) == 7
    assert clamp_to_range(irb, 3.5) == 3.5
    assert clamp_to_range(sleep, -0.3) == 0


def test_clamp_rejects_non_finite():
    irb = construct_registry()[ConstructId.IRB]
    with pytest.raises(NonFiniteValue):
        clamp_to_range(irb, math.nan)
    with pytest.raises(NonFiniteValue):
        clamp_to_range(irb, math.inf)


def test_clamp_idempotent():
    import numpy as np
    rng = np.random.default_rng(0)
    registry = construct_registry()
    for construct in registry.values():
        for v in rng.normal(scale=100, size=50):
            once = clamp_to_range(construct, float(v))
            assert clamp_to_range(construct, once) == once


def test_range_override_and_classification_kind():
    cfg = validate_config({
        "construct_ranges": [["tobacco", 0, 50]],
        "classification_constructs": ["tobacco"],
    })
    registry = cfg.registry()
    tob = registry[ConstructId.TOBACCO]
    assert (tob.lo, tob.hi) == (0.0, 50.0)
    assert tob.kind == "classification"
    assert registry[ConstructId.IRB].kind == "regression"


def test_load_config_nested_sections_and_seed_override(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "seed: 4\n"
        "folds: 3\n"
        "hon:\n  orders: [1, 2]\n  pca_components: 2\n",
        encoding="utf-8")
    cfg = load_config(str(path))
    assert cfg.seed == 4
    assert cfg.folds == 3
    assert cfg.hon_orders == (1, 2)
    assert cfg.hon_pca_components == 2
    cfg2 = load_config(str(path), seed_override=99)
    assert cfg2.seed == 99


def test_config_hash_stable_and_sensitive():
    a = validate_config({"seed": 1})
    b = validate_config({"seed": 1})
    c = validate_config({"seed": 2})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
