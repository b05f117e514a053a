"""Per-dimension DTW distances and Gaussian kernel matrices.

For each dimension l the seen-vs-seen Gram is K_l(i, j) =
exp(-dtw(dim l of Y_i, dim l of Y_j) / delta_l).  DTW of warped curves is
not a metric, so the exponentiated matrix can be indefinite; it is
repaired by clipping negative eigenvalues to zero.  Cross-kernel vectors
against single unseen sequences are left unrepaired.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .ioutil import read_json, read_matrix, write_json, write_matrix
from .mtsdata import Dataset, TimeSeries

log = logging.getLogger(__name__)

CACHE_FORMAT = "kernel-cache-v1"


@dataclass(frozen=True)
class KernelSet:
    """Per-dimension repaired Gram matrices over the seen set."""

    kernels: list[np.ndarray]
    bandwidths: np.ndarray
    repair_shift: np.ndarray
    dataset_hash: str

    @property
    def dims(self) -> int:
        return len(self.kernels)

    @property
    def n(self) -> int:
        return self.kernels[0].shape[0]

    def diag_sum(self) -> float:
        """Sum of all diagonal entries, the loss of the all-zero coding."""
        return float(sum(np.trace(k) for k in self.kernels))

    def subset(self, indices, dataset_hash: str) -> "KernelSet":
        idx = np.asarray(indices)
        return KernelSet(
            kernels=[k[np.ix_(idx, idx)] for k in self.kernels],
            bandwidths=self.bandwidths,
            repair_shift=self.repair_shift,
            dataset_hash=dataset_hash,
        )


@dataclass(frozen=True)
class CrossKernel:
    """Kernel values between every seen sequence and one unseen sequence."""

    cross: list[np.ndarray]
    self_k: np.ndarray
    dataset_hash: str

    @property
    def dims(self) -> int:
        return len(self.cross)


def dtw(a, b) -> float:
    """Dynamic time warping cost with squared-difference local cost.

    Full window, steps (1,0), (0,1), (1,1); returns the accumulated cost
    of the optimal monotone alignment (no square root).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw: empty input sequence")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("dtw: non-finite input")

    # Anti-diagonal sweep: every cell on diagonal i+j = d depends only on
    # diagonals d-1 and d-2, so the update vectorizes while keeping the
    # exact per-cell rounding D[i,j] = fl(c[i,j] + min(neighbors)).
    # Rounding is monotone, so this equals the minimum over all monotone
    # alignment paths of their left-to-right accumulated costs, bit for bit.
    n, m = a.size, b.size
    diff = a[:, None] - b[None, :]
    cost = diff * diff  # plain multiply; scalar x**2 may take a libm path
    if n == 1 or m == 1:
        # single monotone path; cumsum keeps left-to-right accumulation
        return float(cost.ravel().cumsum()[-1])
    flat = cost.ravel()
    stride = flat.strides[0] * (m - 1)

    def diag_view(d, lo, hi):
        # cells (i, d - i) for i in [lo, hi]; flat offset d + i*(m-1)
        return np.lib.stride_tricks.as_strided(
            flat[d + lo * (m - 1):], shape=(hi - lo + 1,), strides=(stride,)
        )

    prev = np.array([flat[0]])
    prev_lo = 0
    prevprev, pp_lo = None, 0
    for d in range(1, n + m - 1):
        lo = max(0, d - m + 1)
        hi = min(n - 1, d)
        length = hi - lo + 1
        best = np.full(length, np.inf)
        # up neighbor (i-1, j): cells with i >= 1
        s = max(lo, 1)
        if s <= hi:
            best[s - lo:] = prev[s - 1 - prev_lo: hi - prev_lo]
        # left neighbor (i, j-1): cells with j >= 1, i.e. i <= d-1
        e = min(hi, d - 1)
        if e >= lo:
            np.minimum(best[: e - lo + 1], prev[lo - prev_lo: e + 1 - prev_lo], out=best[: e - lo + 1])
        # diagonal neighbor (i-1, j-1): cells with i >= 1 and i <= d-1
        if prevprev is not None:
            ds, de = max(lo, 1), min(hi, d - 1)
            if ds <= de:
                np.minimum(
                    best[ds - lo: de - lo + 1],
                    prevprev[ds - 1 - pp_lo: de - pp_lo],
                    out=best[ds - lo: de - lo + 1],
                )
        best += diag_view(d, lo, hi)
        prevprev, pp_lo = prev, prev_lo
        prev, prev_lo = best, lo
    return float(prev[-1])


def pairwise_dtw(series: list[np.ndarray]) -> np.ndarray:
    """Symmetric matrix of DTW costs between all pairs of 1-d series.

    Pairs are independent pure computations; any evaluation order or
    parallel schedule yields the same matrix.
    """
    n = len(series)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw(series[i], series[j])
    return d


def psd_repair(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip negative eigenvalues to zero; returns (repaired, clip magnitude).

    The clip magnitude is the absolute value of the most negative
    eigenvalue removed (0.0 when the input was already PSD).
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise NumericalError("psd_repair: non-finite input matrix")
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"psd_repair: eigendecomposition failed ({exc})") from exc
    shift = float(max(0.0, -vals.min()))
    clipped = np.clip(vals, 0.0, None)
    repaired = (vecs * clipped) @ vecs.T
    return (repaired + repaired.T) / 2.0, shift


def _select_bandwidth(distances: np.ndarray, bandwidth, dim: int) -> float:
    if bandwidth != "median":
        return float(bandwidth)
    n = distances.shape[0]
    off = distances[np.triu_indices(n, k=1)]
    med = float(np.median(off)) if off.size else 0.0
    if med <= 0.0:
        warnings.warn(
            f"dimension {dim}: all pairwise DTW distances are zero, falling back to bandwidth 1.0"
        )
        return 1.0
    return med


def build_kernelset(seen: Dataset, bandwidth="median") -> KernelSet:
    """Compute per-dimension Gaussian-of-DTW Grams over the seen set.

    ``bandwidth`` is either "median" (median off-diagonal DTW distance per
    dimension) or a fixed positive number applied to every dimension.
    """
    if len(seen) < 2:
        raise DataError("kernel construction needs at least 2 sequences")
    kernels, deltas, shifts = [], [], []
    for l in range(seen.dims):
        d = pairwise_dtw([s.dim(l) for s in seen.sequences])
        delta = _select_bandwidth(d, bandwidth, l)
        k = np.exp(-d / delta)
        k, shift = psd_repair(k)
        kernels.append(k)
        deltas.append(delta)
        shifts.append(shift)
        if shift > 0:
            log.info("dimension %d: clipped eigenvalues down to -%.3e", l, shift)
    return KernelSet(
        kernels=kernels,
        bandwidths=np.asarray(deltas),
        repair_shift=np.asarray(shifts),
        dataset_hash=seen.hash(),
    )


def cross_kernel(seen: Dataset, z: TimeSeries, bandwidths) -> CrossKernel:
    """Kernel values of one unseen sequence against every seen sequence."""
    if z.dims != seen.dims:
        raise DataError(
            f"sequence {z.id!r} has {z.dims} dimensions, seen set has {seen.dims}"
        )
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    if bandwidths.shape != (seen.dims,):
        raise DataError("bandwidth vector does not match the dimension count")
    cross = []
    for l in range(seen.dims):
        dists = np.array([dtw(z.dim(l), s.dim(l)) for s in seen.sequences])
        cross.append(np.exp(-dists / bandwidths[l]))
    return CrossKernel(
        cross=cross,
        self_k=np.ones(seen.dims),
        dataset_hash=seen.hash(),
    )


def save_kernelset(ks: KernelSet, cache_dir: str | Path) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    write_json(
        cache_dir / "meta.json",
        {
            "format": CACHE_FORMAT,
            "n": ks.n,
            "f": ks.dims,
            "bandwidths": [float(x) for x in ks.bandwidths],
            "repair_shift": [float(x) for x in ks.repair_shift],
            "dataset_hash": ks.dataset_hash,
        },
    )
    for l, k in enumerate(ks.kernels):
        write_matrix(cache_dir / f"dim{l:03d}.bin", k)


def load_kernelset(cache_dir: str | Path) -> KernelSet:
    cache_dir = Path(cache_dir)
    meta = read_json(cache_dir / "meta.json")
    if meta.get("format") != CACHE_FORMAT:
        raise DataError(f"{cache_dir}: unknown kernel cache format {meta.get('format')!r}")
    kernels = [read_matrix(cache_dir / f"dim{l:03d}.bin") for l in range(meta["f"])]
    for l, k in enumerate(kernels):
        if k.shape != (meta["n"], meta["n"]):
            raise DataError(f"{cache_dir}: dimension {l} matrix has shape {k.shape}")
    return KernelSet(
        kernels=kernels,
        bandwidths=np.asarray(meta["bandwidths"], dtype=np.float64),
        repair_shift=np.asarray(meta["repair_shift"], dtype=np.float64),
        dataset_hash=meta["dataset_hash"],
    )


def build_or_load_kernelset(seen: Dataset, cache_dir: str | Path, bandwidth="median") -> KernelSet:
    """Load the cached kernels when the dataset hash matches, else rebuild."""
    cache_dir = Path(cache_dir)
    meta_path = cache_dir / "meta.json"
    if meta_path.exists():
        try:
            ks = load_kernelset(cache_dir)
            if ks.dataset_hash == seen.hash():
                return ks
            log.info("kernel cache %s is stale (dataset hash changed)", cache_dir)
        except DataError as exc:
            log.warning("ignoring unreadable kernel cache %s: %s", cache_dir, exc)
    ks = build_kernelset(seen, bandwidth=bandwidth)
    save_kernelset(ks, cache_dir)
    return ks
