import numpy as np
import pytest

from mkdmts.errors import DataError
from mkdmts.kernels import (
    KernelSet,
    build_kernelset,
    build_or_load_kernelset,
    cross_kernel,
    dtw,
    load_kernelset,
    pairwise_dtw,
    psd_repair,
    save_kernelset,
)
from mkdmts.mtsdata import Dataset, SynthConfig, TimeSeries, synth_dataset


def dtw_enumerate(a, b):
    """Independent oracle: explicit DFS over every monotone alignment path."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    best = [np.inf]

    def walk(i, j, acc):
        step = a[i] - b[j]
        acc += step * step
        if acc >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = acc
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def test_dtw_known_small_cases():
    assert dtw([0, 1, 2], [0, 2]) == pytest.approx(1.0, abs=1e-12)
    assert dtw([5.0], [3.0]) == pytest.approx(4.0, abs=1e-12)


def test_dtw_identity_and_symmetry(rng):
    for _ in range(20):
        x = rng.normal(size=rng.integers(1, 10))
        y = rng.normal(size=rng.integers(1, 10))
        assert dtw(x, x) == 0.0
        assert dtw(x, y) == pytest.approx(dtw(y, x), abs=1e-12)
        assert dtw(x, y) >= 0.0


def test_dtw_matches_exhaustive_enumeration(rng):
    for _ in range(300):
        a = rng.normal(size=rng.integers(1, 7))
        b = rng.normal(size=rng.integers(1, 7))
        assert dtw(a, b) == pytest.approx(dtw_enumerate(a, b), abs=1e-12)


def test_dtw_rejects_empty():
    with pytest.raises(ValueError):
        dtw([], [1.0])


def _dataset(values_list, labels=None):
    seqs = []
    for i, vals in enumerate(values_list):
        label = labels[i] if labels else 0
        seqs.append(TimeSeries(id=f"s{i}", values=np.asarray(vals, dtype=float), label=label))
    return Dataset(seqs, role="seen")


def test_kernelset_identical_sequences_all_ones():
    vals = [[0.0, 1.0, 2.0], [3.0, 1.0, 0.5]]
    ds = _dataset([vals, vals])
    with pytest.warns(UserWarning, match="falling back"):
        ks = build_kernelset(ds)
    for k in ks.kernels:
        np.testing.assert_allclose(k, np.ones((2, 2)), atol=1e-10)


def test_kernelset_degenerate_dimension_warns():
    vals = [[1.0, 1.0], [0.0, 1.0]]
    other = [[1.0, 1.0], [5.0, 2.0]]  # dim 0 identical across sequences
    ds = _dataset([vals, other])
    with pytest.warns(UserWarning, match="falling back"):
        ks = build_kernelset(ds)
    assert ks.bandwidths[0] == 1.0


def test_kernelset_matches_direct_recomputation(rng):
    seqs = [rng.normal(size=(2, rng.integers(4, 8))) for _ in range(3)]
    ds = _dataset(seqs)
    ks = build_kernelset(ds)
    for l in range(2):
        d = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                d[i, j] = dtw(seqs[i][l], seqs[j][l])
        off = d[np.triu_indices(3, k=1)]
        delta = np.median(off)
        expected, _ = psd_repair(np.exp(-d / delta))
        np.testing.assert_allclose(ks.kernels[l], expected, atol=1e-10)
        assert ks.bandwidths[l] == pytest.approx(delta)


def test_kernel_monotonicity():
    # larger DTW distance gives strictly smaller kernel value at fixed bandwidth
    d1, d2, delta = 1.0, 2.5, 3.0
    assert np.exp(-d2 / delta) < np.exp(-d1 / delta)


def test_cross_kernel_self_match(rng):
    seqs = [rng.normal(size=(2, 6)) for _ in range(4)]
    ds = _dataset(seqs)
    ks = build_kernelset(ds)
    z = TimeSeries(id="z", values=seqs[2].copy())
    ck = cross_kernel(ds, z, ks.bandwidths)
    for l in range(2):
        assert ck.cross[l][2] == pytest.approx(1.0, abs=1e-12)
        assert ((ck.cross[l] > 0) & (ck.cross[l] <= 1.0)).all()
        assert ck.self_k[l] == 1.0
    # spot check one entry against direct recomputation
    expect = np.exp(-dtw(z.values[1], seqs[0][1]) / ks.bandwidths[1])
    assert ck.cross[1][0] == pytest.approx(expect, rel=1e-12)


def test_cross_kernel_dimension_mismatch(rng):
    ds = _dataset([rng.normal(size=(2, 5)) for _ in range(2)])
    z = TimeSeries(id="z", values=rng.normal(size=(3, 5)))
    with pytest.raises(DataError, match="dimensions"):
        cross_kernel(ds, z, np.ones(2))


def test_psd_repair_two_by_two_by_hand():
    repaired, shift = psd_repair(np.array([[1.0, 2.0], [2.0, 1.0]]))
    np.testing.assert_allclose(repaired, [[1.5, 1.5], [1.5, 1.5]], atol=1e-12)
    assert shift == pytest.approx(1.0)


def test_psd_repair_leaves_psd_untouched(rng):
    w = rng.normal(size=(4, 6))
    m = w @ w.T
    repaired, shift = psd_repair(m)
    np.testing.assert_allclose(repaired, m, atol=1e-10)
    assert shift == 0.0


def test_psd_repair_idempotent(rng):
    m = rng.normal(size=(5, 5))
    m = (m + m.T) / 2
    once, _ = psd_repair(m)
    twice, shift2 = psd_repair(once)
    np.testing.assert_allclose(once, twice, atol=1e-10)
    assert shift2 <= 1e-10
    assert np.linalg.eigvalsh(once).min() >= -1e-10


def test_cache_round_trip_and_invalidation(tmp_path, rng):
    seen, _, _ = synth_dataset(SynthConfig(seed=3, samples_per_class=2, length_range=(16, 20)))
    ks = build_kernelset(seen)
    save_kernelset(ks, tmp_path / "cache")
    back = load_kernelset(tmp_path / "cache")
    assert back.dataset_hash == ks.dataset_hash
    np.testing.assert_array_equal(back.bandwidths, ks.bandwidths)
    for a, b in zip(back.kernels, ks.kernels):
        np.testing.assert_array_equal(a, b)

    # same hash: loads without rebuilding (bit-identical)
    again = build_or_load_kernelset(seen, tmp_path / "cache")
    for a, b in zip(again.kernels, ks.kernels):
        np.testing.assert_array_equal(a, b)

    # different dataset: hash mismatch forces a rebuild
    other, _, _ = synth_dataset(SynthConfig(seed=4, samples_per_class=2, length_range=(16, 20)))
    rebuilt = build_or_load_kernelset(other, tmp_path / "cache")
    assert rebuilt.dataset_hash == other.hash() != ks.dataset_hash


def test_pairwise_dtw_symmetric(rng):
    series = [rng.normal(size=rng.integers(3, 7)) for _ in range(4)]
    d = pairwise_dtw(series)
    np.testing.assert_array_equal(d, d.T)
    assert (np.diag(d) == 0).all()
