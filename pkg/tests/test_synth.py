import filecmp

import numpy as np
import pytest

from oracles import pearson
from sensefuse.core import ConstructId, ModalityKind, construct_registry
from sensefuse.errors import InvalidConfig
from sensefuse.evaluation import kendall_tau
from sensefuse.synth import CohortSpec, generate, write_cohort


def test_spec_invariants_enforced():
    with pytest.raises(InvalidConfig):
        CohortSpec(n_participants=5)
    with pytest.raises(InvalidConfig):
        CohortSpec(n_participants=20, feature_missing_rate=1.5)
    with pytest.raises(InvalidConfig):
        CohortSpec(n_participants=20, snr=-1.0)
    with pytest.raises(InvalidConfig):
        CohortSpec(n_participants=20, days=1)


def test_construct_values_respect_ranges():
    universe, _ = generate(CohortSpec(n_participants=50, seed=1, days=3))
    registry = construct_registry()
    for cid, construct in registry.items():
        values = universe.ground_truth.column(cid)
        assert np.all(values >= construct.lo)
        assert np.all(values <= construct.hi)


def test_missing_rates_within_two_percent():
    spec = CohortSpec(n_participants=250, seed=2, days=3,
                      feature_missing_rate=0.10, modality_missing_rate=0.0,
                      n_social_features=60)
    universe, _ = generate(spec)
    social = universe.matrices[ModalityKind.SOCIAL_MEDIA]
    rate = float(np.isnan(social.values).mean())
    assert abs(rate - 0.10) <= 0.02


def test_zero_missing_rates_give_complete_tables():
    spec = CohortSpec(n_participants=20, seed=3, days=3,
                      feature_missing_rate=0.0, modality_missing_rate=0.0)
    universe, _ = generate(spec)
    for fm in universe.matrices.values():
        assert not np.isnan(fm.values).any()
    wearable = universe.series[ModalityKind.WEARABLE]
    assert len(wearable) == 2 * 20


def test_modality_missingness_drops_whole_streams():
    spec = CohortSpec(n_participants=100, seed=4, days=3,
                      feature_missing_rate=0.0, modality_missing_rate=0.3)
    universe, _ = generate(spec)
    wearable_pids = {pid for pid, _ in universe.series[ModalityKind.WEARABLE]}
    assert len(wearable_pids) < 100
    social = universe.matrices[ModalityKind.SOCIAL_MEDIA]
    full_rows = np.isnan(social.values).all(axis=1)
    assert 0.15 <= full_rows.mean() <= 0.45


def test_same_seed_byte_identical_csvs(tmp_path):
    spec = CohortSpec(n_participants=15, seed=5, days=3)
    for sub in ("a", "b"):
        universe, _ = generate(CohortSpec(n_participants=15, seed=5, days=3))
        write_cohort(universe, str(tmp_path / sub))
    for name in ("wearable.csv", "phone.csv", "beacon.csv", "social.csv",
                 "phone_features.csv", "heart_derived.csv", "ground_truth.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name


def test_different_seed_changes_output():
    u1, _ = generate(CohortSpec(n_participants=15, seed=6, days=3))
    u2, _ = generate(CohortSpec(n_participants=15, seed=7, days=3))
    a = u1.ground_truth.column(ConstructId.IRB)
    b = u2.ground_truth.column(ConstructId.IRB)
    assert not np.array_equal(a, b)


def test_snr_zero_construct_uncorrelated_with_latents():
    inside = 0
    n_seeds = 10
    for seed in range(n_seeds):
        spec = CohortSpec(n_participants=300, seed=seed, days=2,
                          snr={ConstructId.SLEEP: 0.0})
        universe, debug = generate(spec)
        y = universe.ground_truth.column(ConstructId.SLEEP)
        signal = debug.latents @ debug.construct_weights[ConstructId.SLEEP]
        if abs(pearson(signal, y)) < 0.15:
            inside += 1
    assert inside >= 0.8 * n_seeds


def test_snr_controls_signal_strength():
    spec = CohortSpec(n_participants=400, seed=9, days=2,
                      snr={ConstructId.IRB: 4.0, ConstructId.ITP: 0.25})
    universe, debug = generate(spec)
    r_strong = abs(pearson(debug.latents @ debug.construct_weights[ConstructId.IRB],
                           universe.ground_truth.column(ConstructId.IRB)))
    r_weak = abs(pearson(debug.latents @ debug.construct_weights[ConstructId.ITP],
                         universe.ground_truth.column(ConstructId.ITP)))
    assert r_strong > 0.8
    assert r_weak < 0.6


def test_regime_dynamics_carry_signal_beyond_level_stats():
    """Transition behavior of the true regime sequence tracks the tilt latent
    better than the plain mean of the emitted values does."""
    spec = CohortSpec(n_participants=150, seed=10, days=6,
                      feature_missing_rate=0.0, modality_missing_rate=0.0,
                      keep_debug=True)
    universe, debug = generate(spec)
    tilt = debug.regime_tilt["heart_rate"]
    stay_prob, mean_hr = [], []
    for i, pid in enumerate(universe.participants):
        states = debug.regime_states[(pid, "heart_rate")]
        stays = np.mean(states[1:] == states[:-1])
        stay_prob.append(stays)
        mean_hr.append(universe.series[ModalityKind.WEARABLE][
            (pid, "heart_rate")].v.mean())
    tau_dynamics = abs(kendall_tau(stay_prob, tilt))
    tau_level = abs(kendall_tau(mean_hr, tilt))
    assert tau_dynamics > tau_level + 0.2


def test_construct_latent_weight_override():
    weights = {cid: np.zeros(6) for cid in ConstructId}
    for k, cid in enumerate(ConstructId):
        weights[cid][k % 6] = 1.0
    spec = CohortSpec(n_participants=200, seed=11, days=2, latent_dim=6,
                      construct_latent_weights=weights, snr=5.0)
    universe, debug = generate(spec)
    y = universe.ground_truth.column(ConstructId.IRB)
    planted = debug.latents[:, 0]
    other = debug.latents[:, 1]
    assert abs(pearson(planted, y)) > 0.7
    assert abs(pearson(other, y)) < 0.25
