"""Core data model, dataset ingestion, and synthetic dataset generation.

Sequences live in CSV files (one row per time step, one column per
dimension) referenced by a JSON-lines manifest with one record per
sequence: {"id": ..., "path": ..., "label": optional}.  The synthetic
generator builds seen classes from per-dimension smooth templates and
unseen classes as dimension-level recombinations of seen classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import content_hash, read_json, write_json

ROLE_SEEN = "seen"
ROLE_UNSEEN = "unseen"


@dataclass(frozen=True)
class TimeSeries:
    """One multivariate sequence; rows are dimensions, columns time steps."""

    id: str
    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(
                f"sequence {self.id!r}: expected a (dims x steps) matrix, got shape {v.shape}"
            )
        if not np.isfinite(v).all():
            bad = np.argwhere(~np.isfinite(v))[0]
            raise DataError(
                f"sequence {self.id!r}: non-finite value at dimension {bad[0]}, step {bad[1]}"
            )
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def dim(self, l: int) -> np.ndarray:
        return self.values[l]


@dataclass
class Dataset:
    """An ordered collection of sequences sharing a dimension count.

    For role "seen" every sequence must carry a label.  For role "unseen"
    labels are optional and only used for evaluation.
    """

    sequences: list[TimeSeries]
    role: str = ROLE_SEEN
    label_names: dict[int, str] | None = None

    def __post_init__(self):
        if self.role not in (ROLE_SEEN, ROLE_UNSEEN):
            raise DataError(f"unknown dataset role {self.role!r}")
        if not self.sequences:
            raise DataError("empty dataset")
        dims = self.sequences[0].dims
        for seq in self.sequences:
            if seq.dims != dims:
                raise DataError(
                    f"sequence {seq.id!r} has {seq.dims} dimensions, expected {dims}"
                )
        if self.role == ROLE_SEEN:
            for seq in self.sequences:
                if seq.label is None:
                    raise DataError(f"seen sequence {seq.id!r} is missing a label")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def dims(self) -> int:
        return self.sequences[0].dims

    @property
    def label_set(self) -> set[int]:
        return {s.label for s in self.sequences if s.label is not None}

    def labels(self) -> np.ndarray:
        if any(s.label is None for s in self.sequences):
            raise DataError("dataset has unlabeled sequences")
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def subset(self, indices) -> "Dataset":
        seqs = [self.sequences[i] for i in indices]
        return Dataset(seqs, role=self.role, label_names=self.label_names)

    def hash(self) -> str:
        def chunks():
            for s in self.sequences:
                yield s.id.encode()
                yield str(s.label).encode()
                yield np.ascontiguousarray(s.values).tobytes()

        return content_hash(chunks())


def _load_csv(path: Path, seq_id: str) -> np.ndarray:
    """Parse one sequence file: rows are time steps, columns dimensions."""
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"{path}: file not found (sequence {seq_id!r})") from None
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DataError(f"{path}: row {lineno} has {len(cells)} columns, expected {width}")
        row = []
        for col, cell in enumerate(cells, start=1):
            try:
                val = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {lineno}, column {col}: not a number: {cell!r}") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: row {lineno}, column {col}: non-finite value {cell!r}")
            row.append(val)
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty sequence file")
    return np.asarray(rows, dtype=np.float64).T


def load_dataset(manifest_path: str | Path, role: str = ROLE_SEEN) -> Dataset:
    """Load a dataset from a JSON-lines manifest.

    String labels are interned to dense integer ids in first-seen order;
    the mapping is kept on the returned Dataset (``label_names``).
    """
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"{manifest_path}: manifest not found") from None

    base = manifest_path.parent
    intern: dict[str, int] = {}
    sequences: list[TimeSeries] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except ValueError as exc:
            raise DataError(f"{manifest_path}: line {lineno}: invalid JSON ({exc})") from None
        if "id" not in rec or "path" not in rec:
            raise DataError(f"{manifest_path}: line {lineno}: record needs 'id' and 'path'")
        label = rec.get("label")
        if isinstance(label, str):
            if label not in intern:
                intern[label] = len(intern)
            label = intern[label]
        elif label is not None:
            label = int(label)
        values = _load_csv(base / rec["path"], rec["id"])
        sequences.append(TimeSeries(id=str(rec["id"]), values=values, label=label))
    if not sequences:
        raise DataError(f"{manifest_path}: manifest lists no sequences")
    names = {v: k for k, v in intern.items()} if intern else None
    return Dataset(sequences, role=role, label_names=names)


def save_dataset(dataset: Dataset, out_dir: str | Path, name: str = "manifest") -> Path:
    """Write sequences as CSV plus a JSON-lines manifest; returns the manifest path.

    Values are written with repr-precision so a reload is bit-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq_dir = out_dir / name
    seq_dir.mkdir(exist_ok=True)
    records = []
    for seq in dataset.sequences:
        rel = f"{name}/{seq.id}.csv"
        with open(out_dir / rel, "w", encoding="utf-8") as fh:
            for t in range(seq.length):
                fh.write(",".join(repr(float(x)) for x in seq.values[:, t]) + "\n")
        rec = {"id": seq.id, "path": rel}
        if seq.label is not None:
            rec["label"] = int(seq.label)
        records.append(rec)
    manifest = out_dir / f"{name}.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if dataset.label_names:
        write_json(out_dir / f"{name}.labels.json", {str(k): v for k, v in dataset.label_names.items()})
    return manifest


@dataclass(frozen=True)
class SynthConfig:
    """Configuration for the synthetic composite-class generator."""

    num_seen_classes: int = 4
    num_unseen_classes: int = 2
    dims: int = 2
    length_range: tuple[int, int] = (60, 90)
    samples_per_class: int = 20
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_seen_classes < 2:
            raise DataError("need at least 2 seen classes")
        if self.num_unseen_classes < 1:
            raise DataError("need at least 1 unseen class")
        if self.dims < 2:
            raise DataError("need at least 2 dimensions")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        lo, hi = self.length_range
        if lo < 8 or hi < lo:
            raise DataError(f"invalid length_range {self.length_range}")
        if self.samples_per_class < 1:
            raise DataError("samples_per_class must be positive")


def _template_bank(rng: np.random.Generator, num_classes: int, dims: int):
    """Per (class, dimension) smooth prototype functions on u in [0, 1].

    Each dimension uses one shape family (sinusoid, bump, plateau, ramp);
    classes are told apart by well-separated level offsets plus family
    texture with a small seeded jitter.  Level separation is deliberate:
    monotone time warping cannot shrink a pointwise value gap, so
    per-dimension class identity survives warping and noise.
    """
    spacing = 2.0

    def make(cls: int, dim: int):
        family = dim % 4
        jit = rng.uniform(-1.0, 1.0, size=3)
        offset = spacing * cls + 0.1 * jit[2]
        if family == 0:
            freq = 0.9 + 0.1 * jit[0]
            phase = 0.4 * cls + 0.15 * jit[1]
            return lambda u: offset + 0.5 * np.sin(2.0 * np.pi * freq * u + phase)
        if family == 1:
            center = 0.35 + 0.3 * ((cls % 2) + 0.2 * jit[0])
            width = 0.16 + 0.02 * jit[1]
            return lambda u: offset + 0.5 * np.exp(-((u - center) ** 2) / (2.0 * width**2))
        if family == 2:
            center = 0.45 + 0.05 * jit[0]
            steep = 12.0 + 2.0 * jit[1]
            return lambda u: offset + 0.5 / (1.0 + np.exp(-steep * (u - center)))
        slope = (0.8 + 0.1 * jit[0]) * (1.0 if cls % 2 == 0 else -1.0)
        return lambda u: offset + slope * (u - 0.5)

    return {(c, d): make(c, d) for c in range(num_classes) for d in range(dims)}


def _monotone_warp(rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
    """Random monotone remap of [0, 1] onto itself (piecewise linear)."""
    knots_x = np.sort(rng.uniform(0.15, 0.85, size=3))
    knots_y = np.sort(rng.uniform(0.15, 0.85, size=3))
    xs = np.concatenate(([0.0], knots_x, [1.0]))
    ys = np.concatenate(([0.0], knots_y, [1.0]))
    return np.interp(u, xs, ys)


def _emit_sample(rng, templates, cfg: SynthConfig) -> np.ndarray:
    lo, hi = cfg.length_range
    if cfg.noise_std == 0.0:
        length = (lo + hi) // 2
        u = np.linspace(0.0, 1.0, length)
        return np.vstack([templates[d](u) for d in range(cfg.dims)])
    base = (lo + hi) // 2
    length = int(np.clip(round(base * rng.uniform(0.8, 1.2)), lo, hi))
    u = _monotone_warp(rng, np.linspace(0.0, 1.0, length))
    rows = []
    for d in range(cfg.dims):
        rows.append(templates[d](u) + rng.normal(0.0, cfg.noise_std, size=length))
    return np.vstack(rows)


def synth_dataset(cfg: SynthConfig):
    """Generate a (seen, unseen, provenance) triple.

    Each unseen class recombines dimension templates from two distinct seen
    classes: the first ceil(f/2) dimensions come from one class, the rest
    from another.  ``provenance`` maps each unseen class label to the seen
    class sourcing each dimension.  Identical seeds give identical output.
    """
    rng = np.random.default_rng(cfg.seed)
    c, f = cfg.num_seen_classes, cfg.dims
    bank = _template_bank(rng, c, f)

    pairs = [(a, b) for a in range(c) for b in range(c) if a != b]
    if cfg.num_unseen_classes > len(pairs):
        raise DataError(
            f"{cfg.num_unseen_classes} unseen classes requested but only "
            f"{len(pairs)} distinct seen-class combinations exist"
        )
    order = rng.permutation(len(pairs))
    chosen = [pairs[i] for i in order[: cfg.num_unseen_classes]]

    seen_seqs = []
    for cls in range(c):
        templates = {d: bank[(cls, d)] for d in range(f)}
        for i in range(cfg.samples_per_class):
            values = _emit_sample(rng, templates, cfg)
            seen_seqs.append(TimeSeries(id=f"seen-{cls}-{i:03d}", values=values, label=cls))

    half = math.ceil(f / 2)
    unseen_seqs = []
    provenance: dict[str, dict] = {}
    for u, (a, b) in enumerate(chosen):
        label = c + u
        source = {d: (a if d < half else b) for d in range(f)}
        provenance[str(label)] = {
            "sources": {str(d): int(s) for d, s in source.items()},
            "mixed_from": [int(a), int(b)],
        }
        templates = {d: bank[(source[d], d)] for d in range(f)}
        for i in range(cfg.samples_per_class):
            values = _emit_sample(rng, templates, cfg)
            unseen_seqs.append(TimeSeries(id=f"unseen-{label}-{i:03d}", values=values, label=label))

    seen = Dataset(seen_seqs, role=ROLE_SEEN)
    unseen = Dataset(unseen_seqs, role=ROLE_UNSEEN)
    return seen, unseen, provenance


def load_provenance(path: str | Path) -> dict:
    return read_json(path)
