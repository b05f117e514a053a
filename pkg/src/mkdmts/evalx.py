"""Clustering metrics, the spectral baseline, and experiment orchestration.

Clustering error (CE) is one minus the accuracy of the best injective
cluster-to-class matching on the contingency table.  NMI normalizes
mutual information by the square root of the two partition entropies
(natural logarithm).  The spectral baseline clusters the unseen set
directly on its averaged per-dimension Gaussian-of-DTW affinities.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, NumericalError
from .kernels import dtw
from .mtsdata import Dataset

log = logging.getLogger(__name__)

# Published results for this method family on the four motion benchmarks
# (Cricket, CMU, Words, Squat); kept as report context only, the datasets
# themselves are not redistributable.
BENCHMARK_REFERENCE = {
    "dra_percent": {"cricket": 76.4, "cmu": 84.5, "words": 80.2, "squat": 62.6},
    "ce_percent": {"words": 12.31, "squat": 0.0, "cmu": 9.28, "cricket": 0.0},
    "nmi": {"words": 0.89, "squat": 1.0, "cmu": 0.92, "cricket": 1.0},
}


@dataclass(frozen=True)
class ClusterScore:
    ce: float
    nmi: float
    contingency: np.ndarray


def _aligned(pred: dict[str, int], truth: dict[str, int]):
    if set(pred) != set(truth):
        raise DataError("prediction and truth cover different id sets")
    ids = sorted(pred)
    p = np.array([pred[i] for i in ids])
    t = np.array([truth[i] for i in ids])
    return p, t


def contingency_table(pred: dict[str, int], truth: dict[str, int]) -> np.ndarray:
    p, t = _aligned(pred, truth)
    p_vals, p_inv = np.unique(p, return_inverse=True)
    t_vals, t_inv = np.unique(t, return_inverse=True)
    table = np.zeros((len(p_vals), len(t_vals)), dtype=np.int64)
    np.add.at(table, (p_inv, t_inv), 1)
    return table


def clustering_error(pred: dict[str, int], truth: dict[str, int]) -> float:
    """1 - accuracy of the optimal injective cluster-to-class matching."""
    table = contingency_table(pred, truth)
    n = table.sum()
    side = max(table.shape)
    padded = np.zeros((side, side), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    matched = padded[rows, cols].sum()
    return 1.0 - matched / n


def nmi(pred: dict[str, int], truth: dict[str, int]) -> float:
    """Mutual information normalized by sqrt of the partition entropies."""
    table = contingency_table(pred, truth).astype(np.float64)
    n = table.sum()
    pij = table / n
    pi = pij.sum(axis=1)
    pj = pij.sum(axis=0)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / np.outer(pi, pj)[nz])))
    hi = float(-np.sum(pi[pi > 0] * np.log(pi[pi > 0])))
    hj = float(-np.sum(pj[pj > 0] * np.log(pj[pj > 0])))
    if hi == 0.0 and hj == 0.0:
        return 1.0  # both single-cluster partitions are identical
    if hi == 0.0 or hj == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, mi / np.sqrt(hi * hj))))


def score_clustering(pred: dict[str, int], truth: dict[str, int]) -> ClusterScore:
    return ClusterScore(
        ce=clustering_error(pred, truth),
        nmi=nmi(pred, truth),
        contingency=contingency_table(pred, truth),
    )


def _kmeans(points: np.ndarray, k: int, seed: int, n_init: int = 8, iters: int = 100):
    """Seeded k-means with k-means++ style initialization."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    best_labels, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[int(rng.integers(n))]
        closest = ((points - centers[0]) ** 2).sum(1)
        for j in range(1, k):
            total = closest.sum()
            if total <= 0:
                centers[j] = points[int(rng.integers(n))]
                continue
            probs = closest / total
            centers[j] = points[int(rng.choice(n, p=probs))]
            closest = np.minimum(closest, ((points - centers[j]) ** 2).sum(1))
        labels = None
        for _ in range(iters):
            d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            new_labels = np.argmin(d, axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for j in range(k):
                mask = labels == j
                if mask.any():
                    centers[j] = points[mask].mean(0)
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_inertia, best_labels = inertia, labels.copy()
    return best_labels


def spectral_baseline(unseen: Dataset, bandwidths, num_clusters: int, seed: int = 0) -> dict[str, int]:
    """Normalized spectral clustering on the unseen set's own affinities.

    Affinity between two unseen sequences averages the per-dimension
    Gaussian-of-DTW kernels (same bandwidths as the seen-side kernels).
    """
    if num_clusters < 2:
        raise ValueError("spectral baseline needs at least 2 clusters")
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    if bandwidths.shape != (unseen.dims,):
        raise DataError("bandwidth vector does not match the dimension count")
    n = len(unseen)
    sim = np.zeros((n, n))
    for l in range(unseen.dims):
        series = [s.dim(l) for s in unseen.sequences]
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = dtw(series[i], series[j])
        sim += np.exp(-d / bandwidths[l])
    sim /= unseen.dims

    deg = sim.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    lap = np.eye(n) - inv_sqrt[:, None] * sim * inv_sqrt[None, :]
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"spectral baseline eigensolver failed ({exc})") from exc
    basis = vecs[:, :num_clusters]
    norms = np.linalg.norm(basis, axis=1, keepdims=True)
    basis = basis / np.maximum(norms, 1e-300)
    labels = _kmeans(basis, num_clusters, seed)
    return {seq.id: int(labels[i]) for i, seq in enumerate(unseen.sequences)}


def run_experiment(config: dict, out_dir) -> dict:
    """Synthesize, train, encode, cluster, and score one end-to-end run.

    ``config`` mirrors the CLI defaults; every stage runs with seeds
    derived from the global seed so reruns are bit-identical.  Artifacts
    and the report land in ``out_dir``; the report dict is returned.
    """
    from pathlib import Path

    from . import __version__
    from .inclust import ClusterConfig, Dendrogram
    from .ioutil import write_json
    from .kernels import build_or_load_kernelset, cross_kernel
    from .mkd import TrainConfig, train
    from .mtsdata import SynthConfig, save_dataset, synth_dataset
    from .zeroshot import encode, encoding_matrix, reconstruction_report

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = "setup"
    timings: dict[str, float] = {}
    try:
        stage = "synth"
        t0 = time.time()
        synth_cfg = SynthConfig(**config.get("synth", {}))
        seen, unseen, provenance = synth_dataset(synth_cfg)
        save_dataset(seen, out_dir / "data", "seen")
        save_dataset(unseen, out_dir / "data", "unseen")
        write_json(out_dir / "data" / "provenance.json", provenance)
        timings[stage] = time.time() - t0

        stage = "kernels"
        t0 = time.time()
        ks = build_or_load_kernelset(seen, out_dir / "kernels", config.get("bandwidth", "median"))
        timings[stage] = time.time() - t0

        stage = "train"
        t0 = time.time()
        train_cfg = TrainConfig(**config.get("train", {}))
        result = train(seen, ks, train_cfg)
        timings[stage] = time.time() - t0

        stage = "encode"
        t0 = time.time()
        seen_labels = seen.labels()
        threshold = float(config.get("threshold", 0.1))
        t_x = train_cfg.t_x
        encodings = []
        reports = []
        for seq in unseen.sequences:
            ck = cross_kernel(seen, seq, ks.bandwidths)
            x = encode(result.dictionary, ks, ck, t_x)
            encodings.append((seq.id, encoding_matrix(result.dictionary, x, seq.id)))
            reports.append((seq.id, reconstruction_report(result.dictionary, ks, ck, x, seen_labels, threshold)))
        timings[stage] = time.time() - t0

        stage = "cluster"
        t0 = time.time()
        cl_conf = config.get("cluster", {})
        tree = Dendrogram(ClusterConfig(**{k: v for k, v in cl_conf.items() if k != "order_seed"}))
        order = np.random.default_rng(cl_conf.get("order_seed", synth_cfg.seed)).permutation(len(encodings))
        for idx in order:
            sid, enc = encodings[idx]
            tree.insert(sid, enc.values)
        tree.save(out_dir / "tree.json")
        timings[stage] = time.time() - t0

        stage = "score"
        t0 = time.time()
        truth = {seq.id: int(seq.label) for seq in unseen.sequences}
        pred = tree.flat_clusters()
        ours = score_clustering(pred, truth)
        spectral_pred = spectral_baseline(
            unseen, ks.bandwidths, num_clusters=synth_cfg.num_unseen_classes, seed=synth_cfg.seed
        )
        spectral = score_clustering(spectral_pred, truth)
        timings[stage] = time.time() - t0
    except Exception as exc:
        try:
            wrapped = type(exc)(f"[stage {stage}] {exc}")
        except Exception:
            wrapped = RuntimeError(f"[stage {stage}] {exc}")
        raise wrapped from exc

    dra_values = [rep.dra for _, rep in reports]
    attribution_rows = []
    for sid, rep in reports:
        attribution_rows.append(
            {
                "id": sid,
                "dra": rep.dra,
                "per_dim_error": [float(e) for e in rep.per_dim_error],
                "attribution": rep.attribution,
            }
        )
    report = {
        "version": __version__,
        "config": config,
        "loss_trace": [float(x) for x in result.loss_trace],
        "dra_mean": float(np.mean(dra_values)),
        "attribution": attribution_rows,
        "clustering": {
            "incremental": {"ce": ours.ce, "nmi": ours.nmi, "clusters": len(set(pred.values()))},
            "spectral_baseline": {"ce": spectral.ce, "nmi": spectral.nmi},
        },
        "benchmark_reference": BENCHMARK_REFERENCE,
        "timings_sec": {k: round(v, 3) for k, v in timings.items()},
    }
    write_json(out_dir / "score.json", report)
    (out_dir / "report.txt").write_text(render_report(report), encoding="utf-8")
    return report


def render_report(report: dict) -> str:
    """Plain-text rendering of a run report."""
    lines = []
    lines.append(f"mkdmts run report (version {report['version']})")
    trace = report["loss_trace"]
    lines.append(f"training loss: {trace[0]:.4f} -> {trace[-1]:.4f} over {len(trace) - 1} iterations")
    lines.append(f"mean DRA over unseen sequences: {100 * report['dra_mean']:.1f}%")
    inc = report["clustering"]["incremental"]
    spec = report["clustering"]["spectral_baseline"]
    lines.append(f"incremental clustering: CE {100 * inc['ce']:.2f}%  NMI {inc['nmi']:.3f}  ({inc['clusters']} clusters)")
    lines.append(f"spectral baseline:      CE {100 * spec['ce']:.2f}%  NMI {spec['nmi']:.3f}")
    lines.append("")
    lines.append("published benchmark context (not reproduced here):")
    ref = report["benchmark_reference"]
    for name in ("cricket", "cmu", "words", "squat"):
        lines.append(
            f"  {name:8s} DRA {ref['dra_percent'][name]:5.1f}%  CE {ref['ce_percent'][name]:5.2f}%  NMI {ref['nmi'][name]:.2f}"
        )
    lines.append("")
    lines.append("timings (s): " + ", ".join(f"{k}={v}" for k, v in report["timings_sec"].items()))
    return "\n".join(lines) + "\n"
