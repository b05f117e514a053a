"""Encoding and dimension-level description of unseen sequences.

An unseen sequence is sparse-coded against the trained dictionary through
its cross-kernel values alone.  Its reconstruction can be scored on any
subset of dimensions (relative feature-space residual), summarized as the
fraction of dimensions reconstructed below an error threshold, and
expanded into an N x f encoding matrix attributing each dimension to the
training samples (and hence classes) that rebuilt it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kernels import CrossKernel, KernelSet
from .mkd import Dictionary, atom_gram
from .nqp import QuadProgram, nqp_solve

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True)
class EncodingMatrix:
    """N x f non-negative descriptor; column l weights each training
    sample's contribution to reconstructing dimension l."""

    values: np.ndarray
    source_id: str


@dataclass(frozen=True)
class ReconstructionReport:
    """Per-dimension relative errors plus the derived accuracy summary.

    ``attribution[l]`` is the seen class contributing most to dimension l,
    present exactly for dimensions whose error meets the threshold.
    """

    per_dim_error: np.ndarray
    dra: float
    attribution: list[int | None]
    threshold: float


def _check_provenance(d: Dictionary, ck: CrossKernel) -> None:
    if d.dataset_hash != ck.dataset_hash:
        raise DataError("cross-kernel and dictionary come from different seen datasets")


def _atom_cross_values(d: Dictionary, ck: CrossKernel) -> np.ndarray:
    """Per-atom inner products with the unseen embedding: c_t = sum_l sqrt(B[l,t]) a_t' kappa_l."""
    a, b = d.sample_weights, d.dim_weights
    vals = np.zeros(d.k)
    for l in range(d.dims):
        vals += np.sqrt(b[l]) * (a.T @ ck.cross[l])
    return vals


def encode(d: Dictionary, ks: KernelSet, ck: CrossKernel, t_x: int) -> np.ndarray:
    """Sparse non-negative code of one unseen sequence."""
    _check_provenance(d, ck)
    if ck.dims != d.dims:
        raise DataError("cross-kernel dimension count does not match the dictionary")
    gram = atom_gram(d, ks)
    c = -_atom_cross_values(d, ck)
    return nqp_solve(QuadProgram(gram, c, min(t_x, d.k)))


def partial_error(d: Dictionary, ks: KernelSet, ck: CrossKernel, x: np.ndarray, dims) -> float:
    """Relative reconstruction error restricted to a dimension subset.

    Per dimension l the residual is
    selfK_l - 2 sum_t x_t sqrt(B[l,t]) a_t' kappa_l
            + sum_{t,t'} x_t x_t' sqrt(B[l,t] B[l,t']) a_t' K_l a_t',
    summed over the subset and divided by the subset's self-kernel mass
    (1 per dimension).  Round-off below zero is clamped.
    """
    _check_provenance(d, ck)
    dims = sorted(set(int(l) for l in dims))
    if not dims:
        raise ValueError("dimension subset must be non-empty")
    if dims[0] < 0 or dims[-1] >= d.dims:
        raise ValueError(f"dimension subset out of range 0..{d.dims - 1}")
    a, b = d.sample_weights, d.dim_weights
    x = np.asarray(x, dtype=np.float64)
    numer = 0.0
    denom = 0.0
    for l in dims:
        s = np.sqrt(b[l])
        lin = float((x * s) @ (a.T @ ck.cross[l]))
        w = a @ (x * s)
        quad = float(w @ ks.kernels[l] @ w)
        numer += float(ck.self_k[l]) - 2.0 * lin + quad
        denom += float(ck.self_k[l])
    if numer < 0.0:
        if numer < -1e-8:
            log.debug("partial error clamped to 0 from %.3e", numer)
        numer = 0.0
    return numer / denom


def encoding_matrix(d: Dictionary, x: np.ndarray, source_id: str = "") -> EncodingMatrix:
    """R = A diag(x) B', the sample-by-dimension contribution weights."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d.k,):
        raise ValueError(f"code has shape {x.shape}, expected ({d.k},)")
    values = (d.sample_weights * x[None, :]) @ d.dim_weights.T
    return EncodingMatrix(values=values, source_id=source_id)


def reconstruction_report(
    d: Dictionary,
    ks: KernelSet,
    ck: CrossKernel,
    x: np.ndarray,
    seen_labels: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
) -> ReconstructionReport:
    """Score every dimension and attribute the well-reconstructed ones.

    A dimension passing the error threshold is attributed to the seen
    class whose samples carry the largest total weight in that dimension's
    encoding column; ties go to the lowest class id.
    """
    seen_labels = np.asarray(seen_labels)
    if seen_labels.shape != (d.n,):
        raise DataError(f"need one label per training sample ({d.n}), got {seen_labels.shape}")
    errors = np.array([partial_error(d, ks, ck, x, [l]) for l in range(d.dims)])
    r = encoding_matrix(d, x).values
    classes = np.unique(seen_labels)
    attribution: list[int | None] = []
    for l in range(d.dims):
        if errors[l] <= threshold:
            totals = np.array([r[seen_labels == cls, l].sum() for cls in classes])
            attribution.append(int(classes[int(np.argmax(totals))]))
        else:
            attribution.append(None)
    dra = float(np.mean(errors <= threshold))
    return ReconstructionReport(
        per_dim_error=errors, dra=dra, attribution=attribution, threshold=threshold
    )
