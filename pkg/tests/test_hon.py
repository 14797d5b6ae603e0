import numpy as np
import pytest

from oracles import hon_window_counts
from sensefuse.errors import EmptySeries, OrderTooHigh, RankDeficientWarning
from sensefuse.hon import (
    BinSpec,
    DiscreteSeries,
    HonFeaturizer,
    build_hon,
    discretize,
    embed,
    quantile_bins,
    slot_means,
    vectorize_cohort,
)
from sensefuse.ingest import TimeSeries

SLOT = 30 * 60


def _ts(slot_values, slot_minutes=30, participant="p1", gaps=()):
    """One sample per slot; listed slot indices in ``gaps`` are skipped."""
    t, v = [], []
    for i, value in enumerate(slot_values):
        if i in gaps:
            continue
        t.append(i * slot_minutes * 60 + 60)
        v.append(value)
    return TimeSeries(participant, "hr", np.asarray(t, dtype=np.int64),
                      np.asarray(v, dtype=float))


def _ds(symbols, participant="p"):
    return DiscreteSeries(participant, 30,
                          [np.asarray(seg, dtype=int) for seg in symbols])


def test_discretize_constant_three_hours():
    ts = _ts([70.0] * 6)
    ds = discretize(ts, 30, BinSpec(edges=(60.0, 90.0)))
    assert len(ds.segments) == 1
    assert list(ds.segments[0]) == [1] * 6


def test_discretize_hand_binned_symbols():
    ts = _ts([62.0, 95.0, 130.0])
    ds = discretize(ts, 30, BinSpec(edges=(80.0, 110.0)))
    assert list(ds.segments[0]) == [0, 1, 2]


def test_discretize_gap_splits_segments():
    # slot 2 missing: 45-minute hole in 30-minute slots
    ts = _ts([70, 70, 70, 70, 70], gaps=(2,))
    ds = discretize(ts, 30, BinSpec(edges=(60.0,)))
    assert len(ds.segments) == 2
    model = build_hon(ds, 1)
    # transitions: within-segment only -> (2-1) + (2-1) = 2 windows
    total = sum(model.counts.values())
    oracle_counts, _, _ = hon_window_counts([list(s) for s in ds.segments], 1)
    assert total == sum(oracle_counts.values()) == 2


def test_discretize_empty_series():
    ts = TimeSeries("p1", "hr", np.asarray([], dtype=np.int64),
                    np.asarray([], dtype=float))
    with pytest.raises(EmptySeries):
        discretize(ts, 30, BinSpec(edges=(1.0,)))


def test_slot_means_average_within_slot():
    t = np.asarray([0, 600, 1200, SLOT + 60], dtype=np.int64)
    v = np.asarray([60.0, 70.0, 80.0, 100.0])
    slots, means = slot_means(TimeSeries("p", "hr", t, v), 30)
    assert list(slots) == [0, 1]
    assert means[0] == pytest.approx(70.0)
    assert means[1] == pytest.approx(100.0)


def test_build_hon_first_order_example():
    model = build_hon(_ds([[0, 0, 1]]), 1)
    assert model.prob((0,), 0) == pytest.approx(0.5)
    assert model.prob((0,), 1) == pytest.approx(0.5)


def test_build_hon_second_order_distinguishes_history():
    # 80->120 after 80 differs from 80->120 after 100
    seq = [0, 0, 2, 1, 0, 2]
    model = build_hon(_ds([seq]), 2)
    assert model.prob((0, 0), 2) == 1.0
    assert model.prob((1, 0), 2) == 1.0
    assert ((0, 0), 2) in model.counts and ((1, 0), 2) in model.counts


def test_build_hon_periodic_alternation():
    model = build_hon(_ds([[0, 1] * 10]), 1)
    assert model.prob((0,), 1) == 1.0
    assert model.prob((1,), 0) == 1.0


def test_build_hon_order_too_high():
    with pytest.raises(OrderTooHigh):
        build_hon(_ds([[0, 1]]), 2)


def test_hon_matches_brute_force_on_random_sequences():
    rng = np.random.default_rng(42)
    for _ in range(100):
        length = int(rng.integers(5, 120))
        alphabet = int(rng.integers(2, 6))
        seq = rng.integers(0, alphabet, size=length).tolist()
        for order in (1, 2, 3):
            if length <= order:
                continue
            model = build_hon(_ds([seq]), order)
            counts, totals, probs = hon_window_counts([seq], order)
            assert model.counts == counts
            assert model.context_totals == totals
            for key, p in model.probabilities.items():
                assert abs(p - probs[key]) <= 1e-12


def test_hon_normalization_property():
    rng = np.random.default_rng(1)
    seq = rng.integers(0, 4, size=300).tolist()
    for order in (1, 2, 3):
        model = build_hon(_ds([seq]), order)
        by_ctx = {}
        for (ctx, nxt), p in model.probabilities.items():
            by_ctx[ctx] = by_ctx.get(ctx, 0.0) + p
        for total in by_ctx.values():
            assert abs(total - 1.0) <= 1e-12


def test_vectorize_disjoint_participants_block_sparse():
    models = {
        "a": {1: build_hon(_ds([[0, 0, 0, 0]]), 1)},
        "b": {1: build_hon(_ds([[1, 1, 1, 1]]), 1)},
    }
    pids, keys, matrix = vectorize_cohort(models)
    assert pids == ["a", "b"]
    assert matrix.shape == (2, 2)
    assert np.count_nonzero(matrix) == 2
    assert matrix[0, 1] == 0 and matrix[1, 0] == 0


def test_vectorize_identical_participants_identical_rows():
    seq = [0, 1, 0, 1, 2, 0]
    models = {p: {1: build_hon(_ds([seq]), 1)} for p in ("a", "b", "c")}
    _, _, matrix = vectorize_cohort(models)
    assert np.array_equal(matrix[0], matrix[1])
    assert np.array_equal(matrix[1], matrix[2])


def test_vectorize_column_count_matches_key_union_oracle():
    rng = np.random.default_rng(7)
    models, union = {}, set()
    for i in range(10):
        seq = rng.integers(0, 3, size=60).tolist()
        per = {}
        for order in (1, 2):
            per[order] = build_hon(_ds([seq], participant=f"p{i}"), order)
            counts, _, _ = hon_window_counts([seq], order)
            union.update((order, ctx, nxt) for ctx, nxt in counts)
        models[f"p{i}"] = per
    _, keys, matrix = vectorize_cohort(models)
    assert len(keys) == len(union)
    assert matrix.shape == (10, len(union))


def test_vectorize_row_permutation_only():
    rng = np.random.default_rng(3)
    seqs = {f"p{i}": rng.integers(0, 3, size=40).tolist() for i in range(5)}
    models = {p: {1: build_hon(_ds([s], participant=p), 1)}
              for p, s in seqs.items()}
    pids1, keys1, m1 = vectorize_cohort(models)
    shuffled = dict(reversed(list(models.items())))
    pids2, keys2, m2 = vectorize_cohort(shuffled)
    assert keys1 == keys2
    assert pids1 == pids2  # participants are sorted, so order is canonical
    assert np.array_equal(m1, m2)


def test_sparsity_density_non_increasing_with_order():
    rng = np.random.default_rng(17)
    for trial in range(10):
        models = {}
        for i in range(8):
            seq = rng.integers(0, 4, size=150).tolist()
            models[f"p{i}"] = {o: build_hon(_ds([seq], participant=f"p{i}"), o)
                               for o in (1, 2, 3)}
        _, keys, matrix = vectorize_cohort(models)
        for i in range(8):
            densities = []
            for order in (1, 2, 3):
                cols = [j for j, key in enumerate(keys) if key[0] == order]
                nz = np.count_nonzero(matrix[i, cols])
                densities.append(nz / len(cols))
            assert densities[0] >= densities[1] >= densities[2]


def test_embed_rank_one_matrix():
    base = np.outer(np.arange(1, 7, dtype=float), np.ones(4))
    Z, model = embed(base + 0.0, components=1)
    assert model.explained_variance_ratio_[0] >= 0.99999


def test_embed_identical_rows_identical_embeddings():
    with pytest.warns(RankDeficientWarning):
        Z, _ = embed(np.ones((5, 3)) * 2.0 + np.array([[0, 1, 2]] * 5),
                     components=2)
    assert np.allclose(Z, Z[0])


def test_embed_pads_and_warns_when_rank_deficient():
    rng = np.random.default_rng(0)
    line = np.outer(rng.normal(size=6), np.array([1.0, 2.0, 3.0]))
    with pytest.warns(RankDeficientWarning):
        Z, _ = embed(line, components=3)
    assert Z.shape == (6, 3)
    assert np.allclose(Z[:, 1:], 0.0)


def test_featurizer_single_order_builds_only_that_order(small_cohort):
    universe, _ = small_cohort
    from sensefuse.core import ModalityKind
    series = {pid: ts for (pid, sig), ts in
              universe.series[ModalityKind.WEARABLE].items()
              if sig == "heart_rate"}
    featurizer = HonFeaturizer(orders=(3,), n_bins=3, slot_minutes=30,
                               n_components=2).fit(series)
    assert {key[0] for key in featurizer.keys_} == {3}


def test_featurizer_transform_shape_and_missing(small_cohort):
    universe, _ = small_cohort
    from sensefuse.core import ModalityKind
    series = {pid: ts for (pid, sig), ts in
              universe.series[ModalityKind.WEARABLE].items()
              if sig == "heart_rate"}
    pids = sorted(series)
    featurizer = HonFeaturizer(orders=(1, 2), n_bins=3, slot_minutes=30,
                               n_components=3).fit(series)
    Z = featurizer.transform(series, pids + ["ghost"])
    assert Z.shape == (len(pids) + 1, 3)
    assert np.isnan(Z[-1]).all()
    assert np.isfinite(Z[:-1]).all()


def test_quantile_bins_terciles():
    bins = quantile_bins(np.arange(1.0, 10.0), n_bins=3)
    assert bins.n_bins == 3
    symbols = bins.assign(np.array([1.0, 5.0, 9.0]))
    assert list(symbols) == [0, 1, 2]


def test_edge_list_dump(tmp_path):
    from sensefuse.hon import dump_edge_list
    model = build_hon(_ds([[0, 0, 1, 0, 1]]), 1)
    path = tmp_path / "edges.csv"
    dump_edge_list(model, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "context,next,count,prob"
    parsed = {}
    for line in lines[1:]:
        ctx, nxt, count, prob = line.split(",")
        parsed[(ctx, int(nxt))] = (int(count), float(prob))
    # transitions in [0,0,1,0,1]: 0->0 once, 0->1 twice, 1->0 once
    assert parsed[("0", 0)] == (1, pytest.approx(1 / 3))
    assert parsed[("0", 1)] == (2, pytest.approx(2 / 3))
    assert parsed[("1", 0)] == (1, 1.0)
