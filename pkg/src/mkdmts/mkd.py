"""Multiple-kernel dictionary model and its alternating-optimization trainer.

A dictionary atom is a non-negative combination of training samples
(column of the sample-weight matrix A, shape N x k) on a non-negative
combination of dimensions (column of the dimension-weight matrix B, shape
f x k), living in the stacked per-dimension kernel feature space.  All
quantities are computed purely from the per-dimension Gram matrices; no
explicit feature vectors are ever formed.

Conventions:
  - atom t embeds as sum_l sqrt(B[l,t]) * (feature map of dim l) @ A[:,t]
  - data sample n embeds with all-ones dimension weights
  - codes X have shape k x N, column n coding sample n
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import read_json, read_matrix, write_json, write_matrix
from .kernels import KernelSet
from .mtsdata import Dataset
from .nqp import QuadProgram, nqp_solve, objective

log = logging.getLogger(__name__)

MODEL_FORMAT = "mkd-model-v1"
_NORM_FLOOR = 1e-12


@dataclass
class Dictionary:
    """Sample weights A (N x k) and dimension weights B (f x k) of k atoms."""

    sample_weights: np.ndarray
    dim_weights: np.ndarray
    dataset_hash: str

    def __post_init__(self):
        a = np.asarray(self.sample_weights, dtype=np.float64)
        b = np.asarray(self.dim_weights, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ValueError(f"inconsistent shapes A{a.shape} B{b.shape}")
        if (a < 0).any() or (b < 0).any():
            raise ValueError("dictionary weights must be non-negative")
        self.sample_weights = a
        self.dim_weights = b

    @property
    def k(self) -> int:
        return self.sample_weights.shape[1]

    @property
    def n(self) -> int:
        return self.sample_weights.shape[0]

    @property
    def dims(self) -> int:
        return self.dim_weights.shape[0]

    def atom_norms_sq(self, ks: KernelSet) -> np.ndarray:
        """Feature-space squared norm of every atom."""
        a, b = self.sample_weights, self.dim_weights
        out = np.zeros(self.k)
        for l, kl in enumerate(ks.kernels):
            out += b[l] * np.einsum("nt,nm,mt->t", a, kl, a)
        return out


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the alternating trainer.

    Sparsity limits are maximum nonzero counts: t_x for codes, t_a for an
    atom's sample weights, t_beta for its dimension weights.  ``t_a=None``
    defaults to max(1, ceil(N/10)); ``t_beta=None`` defaults to f.
    """

    k: int = 8
    t_x: int = 2
    t_a: int | None = None
    t_beta: int | None = None
    max_iters: int = 30
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        for name in ("t_x", "t_a", "t_beta"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def resolve(self, n: int, dims: int) -> "TrainConfig":
        t_a = self.t_a if self.t_a is not None else max(1, math.ceil(n / 10))
        t_beta = self.t_beta if self.t_beta is not None else dims
        return replace(self, t_a=min(t_a, n), t_beta=min(t_beta, dims))


@dataclass
class TrainResult:
    dictionary: Dictionary
    codes: np.ndarray
    loss_trace: list[float]


def atom_gram(d: Dictionary, ks: KernelSet) -> np.ndarray:
    """k x k Gram of the atoms: G[t,u] = sum_l sqrt(B[l,t] B[l,u]) A[:,t]' K_l A[:,u]."""
    a, b = d.sample_weights, d.dim_weights
    g = np.zeros((d.k, d.k))
    for l, kl in enumerate(ks.kernels):
        s = np.sqrt(b[l])
        m = a.T @ kl @ a
        g += np.outer(s, s) * m
    return (g + g.T) / 2.0


def atom_data_cross(d: Dictionary, ks: KernelSet) -> np.ndarray:
    """k x N inner products between atoms and data embeddings.

    Data samples embed with all-ones dimension weights, so entry (t, n) is
    sum_l sqrt(B[l,t]) * (A[:,t]' K_l[:,n]).
    """
    a, b = d.sample_weights, d.dim_weights
    c = np.zeros((d.k, d.n))
    for l, kl in enumerate(ks.kernels):
        c += np.sqrt(b[l])[:, None] * (a.T @ kl)
    return c


def compute_loss(d: Dictionary, ks: KernelSet, codes: np.ndarray) -> float:
    """Frobenius reconstruction loss of the coded data, clamped at zero."""
    cross = atom_data_cross(d, ks)
    gram = atom_gram(d, ks)
    loss = ks.diag_sum() - 2.0 * float(np.sum(codes * cross)) + float(np.sum(codes * (gram @ codes)))
    if loss < 0.0:
        if loss < -1e-8:
            log.debug("loss clamped to 0 from %.3e", loss)
        loss = 0.0
    return loss


def update_codes(d: Dictionary, ks: KernelSet, t_x: int) -> np.ndarray:
    """Re-solve every sample's sparse code against the current dictionary.

    Columns are independent problems; the result does not depend on the
    order they are solved in.
    """
    gram = atom_gram(d, ks)
    cross = atom_data_cross(d, ks)
    codes = np.zeros((d.k, d.n))
    limit = min(t_x, d.k)
    for n in range(d.n):
        codes[:, n] = nqp_solve(QuadProgram(gram, -cross[:, n], limit))
    return codes


def _weighted_gram(d: Dictionary, ks: KernelSet, i: int) -> np.ndarray:
    """K weighted by atom i's dimension weights: sum_l B[l,i] K_l."""
    b = d.dim_weights[:, i]
    out = np.zeros((d.n, d.n))
    for l, kl in enumerate(ks.kernels):
        if b[l] != 0.0:
            out += b[l] * kl
    return out


def _per_sample_errors(d: Dictionary, ks: KernelSet, codes: np.ndarray) -> np.ndarray:
    cross = atom_data_cross(d, ks)
    gram = atom_gram(d, ks)
    diag = np.zeros(d.n)
    for kl in ks.kernels:
        diag += np.diag(kl)
    return diag - 2.0 * np.sum(codes * cross, axis=0) + np.sum(codes * (gram @ codes), axis=0)


def _reinit_dead_atom(d: Dictionary, ks: KernelSet, codes: np.ndarray, i: int) -> None:
    """Re-seed a dead atom on the worst-reconstructed training sample.

    The atom's code row is zeroed first, so the swap itself leaves the
    loss untouched; zeroing the row never increases it (the dead paths
    fire only when the row contributes non-negatively).
    """
    codes[i, :] = 0.0
    errors = _per_sample_errors(d, ks, codes)
    worst = int(np.argmax(errors))
    a = np.zeros(d.n)
    a[worst] = 1.0
    b = np.ones(d.dims)
    norm_sq = float(sum(kl[worst, worst] for kl in ks.kernels))
    if norm_sq <= _NORM_FLOOR:
        norm_sq = 1.0
    d.sample_weights[:, i] = a / math.sqrt(norm_sq)
    d.dim_weights[:, i] = b
    log.debug("atom %d re-seeded on sample %d", i, worst)


def update_atom_samples(d: Dictionary, ks: KernelSet, codes: np.ndarray, i: int, t_a: int) -> None:
    """Block update of atom i's sample weights, in place.

    Solves the induced non-negative sparse quadratic in a_i, keeps the
    better of {old, new} so the loss never increases, renormalizes the
    atom to unit feature norm, and rescales code row i to compensate.
    """
    xrow = codes[i, :]
    weight = float(xrow @ xrow)
    if weight <= 0.0:
        _reinit_dead_atom(d, ks, codes, i)
        return

    a, b = d.sample_weights, d.dim_weights
    k_beta = _weighted_gram(d, ks, i)
    h = weight * k_beta

    term1 = np.zeros(d.n)
    for l, kl in enumerate(ks.kernels):
        if b[l, i] != 0.0:
            term1 += math.sqrt(b[l, i]) * (kl @ xrow)
    term2 = np.zeros(d.n)
    rho = codes @ xrow
    for t in range(d.k):
        if t == i or rho[t] == 0.0:
            continue
        gt = np.zeros(d.n)
        for l, kl in enumerate(ks.kernels):
            w = math.sqrt(b[l, i] * b[l, t])
            if w != 0.0:
                gt += w * (kl @ a[:, t])
        term2 += rho[t] * gt
    c = -term1 + term2

    limit = min(t_a, d.n)
    # plain greedy here: the keep-better guard below already enforces
    # monotonicity, and swap polishing is too slow at n = N
    new = nqp_solve(QuadProgram(h, c, limit), refine_swaps=False)
    if not new.any():
        _reinit_dead_atom(d, ks, codes, i)
        return
    old = a[:, i]
    if np.count_nonzero(old) <= limit and objective(h, c, new) > objective(h, c, old):
        new = old.copy()

    norm_sq = float(new @ k_beta @ new)
    if norm_sq <= _NORM_FLOOR:
        _reinit_dead_atom(d, ks, codes, i)
        return
    scale = math.sqrt(norm_sq)
    d.sample_weights[:, i] = new / scale
    codes[i, :] = xrow * scale


def update_atom_dims(d: Dictionary, ks: KernelSet, codes: np.ndarray, i: int, t_beta: int) -> None:
    """Block update of atom i's dimension weights, in place.

    Substituting u_l = sqrt(beta_l) turns the block into a diagonal
    non-negative sparse quadratic; beta = u^2 afterwards.  Same keep-the-
    better and renormalize-with-compensation discipline as the sample
    update (here the normalization is absorbed by scaling beta).
    """
    xrow = codes[i, :]
    weight = float(xrow @ xrow)
    if weight <= 0.0:
        _reinit_dead_atom(d, ks, codes, i)
        return

    a, b = d.sample_weights, d.dim_weights
    ai = a[:, i]
    f = d.dims
    m = np.zeros(f)
    p = np.zeros(f)
    q = np.zeros(f)
    rho = codes @ xrow
    for l, kl in enumerate(ks.kernels):
        kl_ai = kl @ ai
        m[l] = float(ai @ kl_ai)
        p[l] = float(xrow @ (kl.T @ ai))
        acc = 0.0
        for t in range(d.k):
            if t == i or rho[t] == 0.0:
                continue
            w = math.sqrt(b[l, t])
            if w != 0.0:
                acc += rho[t] * w * float(kl_ai @ a[:, t])
        q[l] = acc

    h = np.diag(2.0 * weight * m)
    c = -2.0 * p + 2.0 * q

    limit = min(t_beta, f)
    u = nqp_solve(QuadProgram(h, c, limit))
    if not u.any():
        _reinit_dead_atom(d, ks, codes, i)
        return
    u_old = np.sqrt(b[:, i])
    if np.count_nonzero(u_old) <= limit and objective(h, c, u) > objective(h, c, u_old):
        u = u_old.copy()

    beta = u * u
    norm_sq = float(beta @ m)
    if norm_sq <= _NORM_FLOOR:
        _reinit_dead_atom(d, ks, codes, i)
        return
    d.dim_weights[:, i] = beta / norm_sq
    codes[i, :] = xrow * math.sqrt(norm_sq)


def init_dictionary(ks: KernelSet, cfg: TrainConfig, labels: np.ndarray | None = None) -> Dictionary:
    """Atoms seeded on distinct training samples.

    With labels available the seeded draw is stratified (classes visited
    round-robin, seeded shuffle within each class): a uniform draw can
    leave a class with too few atoms to cover its dimensions, a hole the
    alternating updates never escape because under-used twin atoms keep
    sharing codes instead of dying.

    Dimension weights start all-ones when the sparsity bound allows it;
    under a tighter bound the initial columns must already satisfy it, so
    they start one-hot, rotating through the dimensions per class (per
    atom when unlabeled).  A dense start under a tight bound would force
    the first sweep to collapse every atom onto its first dimension.
    """
    n = ks.n
    if cfg.k > n:
        raise DataError(f"k={cfg.k} atoms exceed the {n} training samples")
    cfg = cfg.resolve(n, ks.dims)
    rng = np.random.default_rng(cfg.seed)
    atom_class = [0] * cfg.k
    if labels is None:
        picks = [int(j) for j in rng.choice(n, size=cfg.k, replace=False)]
        atom_class = list(range(cfg.k))
    else:
        pools = {int(c): list(rng.permutation(np.flatnonzero(labels == c))) for c in np.unique(labels)}
        picks = []
        while len(picks) < cfg.k:
            for cls, pool in pools.items():
                if pool and len(picks) < cfg.k:
                    atom_class[len(picks)] = cls
                    picks.append(int(pool.pop()))
    a = np.zeros((n, cfg.k))
    if cfg.t_beta >= ks.dims:
        b = np.ones((ks.dims, cfg.k))
    else:
        b = np.zeros((ks.dims, cfg.k))
        rotation: dict[int, int] = {}
        for i in range(cfg.k):
            slot = rotation.get(atom_class[i], 0)
            b[slot % ks.dims, i] = 1.0
            rotation[atom_class[i]] = slot + 1
    for i, j in enumerate(picks):
        norm_sq = float(sum(b[l, i] * kl[j, j] for l, kl in enumerate(ks.kernels)))
        a[j, i] = 1.0 / math.sqrt(max(norm_sq, _NORM_FLOOR))
    return Dictionary(sample_weights=a, dim_weights=b, dataset_hash=ks.dataset_hash)


def train(seen: Dataset, ks: KernelSet, cfg: TrainConfig) -> TrainResult:
    """Alternating optimization: codes, then a samples-and-dimensions sweep per atom.

    The loss trace starts with the zero-code loss of the initial
    dictionary and appends one value per outer iteration; training stops
    at ``max_iters`` or when the relative loss change drops below ``tol``.
    """
    if ks.dataset_hash != seen.hash():
        raise DataError("kernel set was built on a different dataset")
    cfg = cfg.resolve(ks.n, ks.dims)
    d = init_dictionary(ks, cfg, labels=seen.labels())
    codes = np.zeros((cfg.k, ks.n))
    trace = [compute_loss(d, ks, codes)]
    for it in range(cfg.max_iters):
        codes = update_codes(d, ks, cfg.t_x)
        for i in range(cfg.k):
            update_atom_samples(d, ks, codes, i, cfg.t_a)
            update_atom_dims(d, ks, codes, i, cfg.t_beta)
        loss = compute_loss(d, ks, codes)
        trace.append(loss)
        prev = trace[-2]
        if abs(prev - loss) / max(prev, _NORM_FLOOR) < cfg.tol:
            break
    log.info("trained k=%d atoms, loss %.4f -> %.4f in %d iterations", cfg.k, trace[0], trace[-1], len(trace) - 1)
    return TrainResult(dictionary=d, codes=codes, loss_trace=trace)


def _stratified_folds(labels: np.ndarray, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Deal each class round-robin into folds after a seeded shuffle."""
    classes, counts = np.unique(labels, return_counts=True)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    if counts.min() < n_folds:
        warnings.warn("a class has fewer samples than folds; using unstratified folds")
        order = rng.permutation(len(labels))
        for pos, idx in enumerate(order):
            folds[pos % n_folds].append(int(idx))
    else:
        for cls in classes:
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(len(idx))]
            for pos, j in enumerate(idx):
                folds[pos % n_folds].append(int(j))
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def _holdout_error(d: Dictionary, sub_ks: KernelSet, full_ks: KernelSet, train_idx, held_idx, t_x: int) -> float:
    """Mean relative reconstruction error of held-out samples (all dimensions)."""
    a, b = d.sample_weights, d.dim_weights
    gram = atom_gram(d, sub_ks)
    k = d.k
    train_idx = np.asarray(train_idx)
    errors = []
    for j in held_idx:
        cvec = np.zeros(k)
        self_k = 0.0
        for l, kl in enumerate(full_ks.kernels):
            col = kl[train_idx, j]
            cvec += np.sqrt(b[l]) * (a.T @ col)
            self_k += kl[j, j]
        x = nqp_solve(QuadProgram(gram, -cvec, min(t_x, k)))
        resid = self_k - 2.0 * float(x @ cvec) + float(x @ gram @ x)
        errors.append(max(0.0, resid) / max(self_k, _NORM_FLOOR))
    return float(np.mean(errors))


def tune(seen: Dataset, ks: KernelSet, grid: list[tuple[int, int]], base: TrainConfig, n_folds: int = 5) -> TrainConfig:
    """Pick (k, t_x) from ``grid`` by stratified cross-validated held-out error.

    Ties prefer smaller k, then smaller t_x.  Fold assignment and training
    are fully determined by ``base.seed``.
    """
    if len(seen) < 2 * n_folds:
        raise DataError(f"cross-validation needs at least {2 * n_folds} samples")
    labels = seen.labels()
    rng = np.random.default_rng(base.seed)
    folds = _stratified_folds(labels, n_folds, rng)
    all_idx = np.arange(len(seen))
    scores: dict[tuple[int, int], float] = {}
    for k, t_x in sorted(set(grid)):
        fold_errors = []
        for held in folds:
            train_idx = np.setdiff1d(all_idx, held)
            sub = seen.subset(train_idx)
            sub_ks = ks.subset(train_idx, sub.hash())
            cfg = replace(base, k=min(k, len(train_idx)), t_x=t_x)
            result = train(sub, sub_ks, cfg)
            fold_errors.append(_holdout_error(result.dictionary, sub_ks, ks, train_idx, held, t_x))
        scores[(k, t_x)] = float(np.mean(fold_errors))
        log.info("tune k=%d t_x=%d -> held-out error %.4f", k, t_x, scores[(k, t_x)])
    best = min(sorted(scores), key=lambda kt: (scores[kt], kt))
    return replace(base, k=best[0], t_x=best[1])


def save_model(result: TrainResult, model_dir, cfg: TrainConfig, bandwidths) -> None:
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    d = result.dictionary
    write_json(
        model_dir / "meta.json",
        {
            "format": MODEL_FORMAT,
            "k": d.k,
            "n": d.n,
            "f": d.dims,
            "t_x": cfg.t_x,
            "t_a": cfg.t_a,
            "t_beta": cfg.t_beta,
            "seed": cfg.seed,
            "dataset_hash": d.dataset_hash,
            "bandwidths": [float(x) for x in np.asarray(bandwidths)],
            "loss_trace": [float(x) for x in result.loss_trace],
        },
    )
    write_matrix(model_dir / "sample_weights.bin", d.sample_weights)
    write_matrix(model_dir / "dim_weights.bin", d.dim_weights)
    write_matrix(model_dir / "codes.bin", result.codes)


def load_model(model_dir) -> tuple[Dictionary, dict]:
    model_dir = Path(model_dir)
    meta = read_json(model_dir / "meta.json")
    if meta.get("format") != MODEL_FORMAT:
        raise DataError(f"{model_dir}: unknown model format {meta.get('format')!r}")
    d = Dictionary(
        sample_weights=read_matrix(model_dir / "sample_weights.bin"),
        dim_weights=read_matrix(model_dir / "dim_weights.bin"),
        dataset_hash=meta["dataset_hash"],
    )
    if d.k != meta["k"] or d.n != meta["n"] or d.dims != meta["f"]:
        raise DataError(f"{model_dir}: matrix shapes disagree with meta.json")
    return d, meta
