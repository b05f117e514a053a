"""Online incremental clustering of encoded sequences into a dendrogram.

Each arriving sequence carries an N x f encoding matrix.  It joins the
closest sufficiently-similar node (squared Frobenius distance to the
node's running mean), or starts a new top-level leaf.  After a leaf grows
it is tentatively split in two; depending on how much tighter the parts
are than the whole, the leaf is replaced by them, keeps them as children,
or stays as it was.

Node statistics (mean encoding and mean squared distance to it) cover the
node's whole subtree and are maintained incrementally with Welford
updates; structural changes recompute them from the stored members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

_SPLIT_ITERS = 50


@dataclass
class ClusterConfig:
    """Thresholds of the insertion rule.

    ``k_rmv`` gates replacing a leaf by its two halves, ``k_clust`` gates
    keeping the halves as children; both compare the halves' mean intra
    distance to the whole leaf's.  ``gamma`` scales the similarity floor
    that lets thin nodes accept joiners (a multiple of the running median
    accepted-join distance; the median resists poisoning by one early
    cross-cluster join).  With squared distances a fresh point sits about
    twice as far from a singleton as the typical accepted join, so the
    default floor factor is 2.5; at 1.0 well-separated streams shatter
    into singletons.  ``split_min`` defers the tentative split until a
    leaf has enough members for meaningful part statistics; two-member
    leaves always split into singleton halves with a zero ratio, so
    gating on size is what keeps growing clusters intact.  ``dup_eps``
    joins unconditionally when the distance is below this fraction of the
    encoding's own squared norm: near-identical descriptors belong
    together no matter how tight the target node is.
    """

    k_clust: float = 0.7
    k_rmv: float = 0.3
    gamma: float = 2.5
    split_min: int = 6
    dup_eps: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.k_clust <= 1.0):
            raise ValueError("k_clust must be in (0, 1]")
        if not (0.0 < self.k_rmv <= 1.0):
            raise ValueError("k_rmv must be in (0, 1]")
        if self.k_rmv > self.k_clust:
            raise ValueError("k_rmv must not exceed k_clust")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.split_min < 2:
            raise ValueError("split_min must be at least 2")
        if self.dup_eps < 0.0:
            raise ValueError("dup_eps must be non-negative")


@dataclass
class DendroNode:
    """One cluster node; direct members live only on leaves."""

    node_id: int
    parent: "DendroNode | None" = None
    children: list["DendroNode"] = field(default_factory=list)
    member_ids: list[str] = field(default_factory=list)
    member_r: list[np.ndarray] = field(default_factory=list)
    count: int = 0
    mean: np.ndarray | None = None
    m2: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def intra(self) -> float:
        """Mean squared Frobenius distance of subtree members to the mean."""
        return self.m2 / self.count if self.count else 0.0

    def welford_add(self, r: np.ndarray) -> None:
        self.count += 1
        if self.mean is None:
            self.mean = r.copy()
            self.m2 = 0.0
            return
        delta = r - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 += float(np.sum(delta * (r - self.mean)))

    def subtree_members(self) -> tuple[list[str], list[np.ndarray]]:
        ids: list[str] = []
        mats: list[np.ndarray] = []
        stack = [self]
        while stack:
            node = stack.pop()
            ids.extend(node.member_ids)
            mats.extend(node.member_r)
            stack.extend(reversed(node.children))
        return ids, mats


@dataclass(frozen=True)
class PlacementRecord:
    """Which insertion path fired and the nodes it touched."""

    source_id: str
    path: str  # new_root | joined_leaf | joined_internal
    node_id: int
    split: str | None = None  # replaced | children | discarded
    split_ids: tuple[int, int] | None = None


def _stats_of(mats: list[np.ndarray]) -> tuple[np.ndarray, float]:
    stacked = np.stack(mats)
    mean = stacked.mean(axis=0)
    m2 = float(((stacked - mean[None]) ** 2).sum())
    return mean, m2


def _encoding_values(r) -> np.ndarray:
    values = getattr(r, "values", r)  # EncodingMatrix or bare array
    return np.asarray(values, dtype=np.float64)


def dist(r, node: DendroNode) -> float:
    """Squared Frobenius distance between an encoding and a node's mean."""
    if node.count == 0 or node.mean is None:
        raise ValueError("distance to an empty node is undefined")
    delta = _encoding_values(r) - node.mean
    return float((delta * delta).sum())


def _two_means(points: np.ndarray):
    """Deterministic 2-means: farthest-pair start, up to 50 sweeps.

    Returns a boolean part assignment, or None when the points collapse
    into a single part.
    """
    m = points.shape[0]
    flat = points.reshape(m, -1)
    sq = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1)
    i0, j0 = np.unravel_index(int(np.argmax(sq)), sq.shape)
    if sq[i0, j0] <= 0.0:
        return None
    c0, c1 = flat[min(i0, j0)], flat[max(i0, j0)]
    assign = None
    for _ in range(_SPLIT_ITERS):
        d0 = ((flat - c0[None]) ** 2).sum(1)
        d1 = ((flat - c1[None]) ** 2).sum(1)
        new_assign = d1 < d0
        if assign is not None and bool(np.all(new_assign == assign)):
            break
        assign = new_assign
        if assign.all() or not assign.any():
            return None
        c0 = flat[~assign].mean(0)
        c1 = flat[assign].mean(0)
    return assign


class Dendrogram:
    """The growing cluster forest plus the running join-distance scale."""

    def __init__(self, cfg: ClusterConfig | None = None):
        self.cfg = cfg or ClusterConfig()
        self.roots: list[DendroNode] = []
        self._next_id = 0
        self._join_dists: list[float] = []
        self.records: list[PlacementRecord] = []

    # -- bookkeeping -------------------------------------------------

    def _new_node(self, parent: DendroNode | None = None) -> DendroNode:
        node = DendroNode(node_id=self._next_id, parent=parent)
        self._next_id += 1
        return node

    def _typical_join(self) -> float | None:
        return float(np.median(self._join_dists)) if self._join_dists else None

    def _record_join(self, distance: float) -> None:
        self._join_dists.append(distance)

    def nodes(self) -> list[DendroNode]:
        out: list[DendroNode] = []
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def size(self) -> int:
        return sum(root.count for root in self.roots)

    # -- insertion ---------------------------------------------------

    def _effective_intra(self, node: DendroNode, dup_floor: float, fallback: float) -> float:
        typical = self._typical_join()
        floor = self.cfg.gamma * typical if typical is not None else fallback
        return max(node.intra, floor, dup_floor)

    def _candidates(self, r: np.ndarray) -> DendroNode | None:
        dup_floor = self.cfg.dup_eps * float((r * r).sum())
        best: tuple[float, int, DendroNode] | None = None
        for node in self.nodes():
            d = dist(r, node)
            if d <= self._effective_intra(node, dup_floor, fallback=d):
                if best is None or (d, node.node_id) < (best[0], best[1]):
                    best = (d, node.node_id, node)
        return best[2] if best else None

    def _leaf_stats_from_members(self, node: DendroNode) -> None:
        node.mean, node.m2 = _stats_of(node.member_r)
        node.count = len(node.member_r)

    def _try_split(self, leaf: DendroNode):
        """Tentative 2-means split of a leaf; returns (outcome, ids)."""
        if len(leaf.member_ids) < self.cfg.split_min:
            return None, None
        if leaf.intra <= self.cfg.dup_eps * float((leaf.mean * leaf.mean).sum()):
            # members are identical at descriptor resolution; any 2-means
            # partition of their numerical micro-noise would be spurious
            return None, None
        assign = _two_means(np.stack(leaf.member_r))
        if assign is None:
            return "discarded", None
        parts_members = ([], [])
        for flag, sid, r in zip(assign, leaf.member_ids, leaf.member_r):
            parts_members[int(flag)].append((sid, r))
        intra_parts = []
        for members in parts_members:
            _, m2 = _stats_of([r for _, r in members])
            intra_parts.append(m2 / len(members))
        ratio = (intra_parts[0] + intra_parts[1]) / (2.0 * leaf.intra) if leaf.intra > 0 else np.inf
        if ratio <= self.cfg.k_rmv:
            ids = self._replace_with_parts(leaf, parts_members)
            return "replaced", ids
        if ratio <= self.cfg.k_clust:
            ids = self._attach_parts_as_children(leaf, parts_members)
            return "children", ids
        return "discarded", None

    def _materialize_part(self, parent: DendroNode | None, members) -> DendroNode:
        node = self._new_node(parent)
        node.member_ids = [sid for sid, _ in members]
        node.member_r = [r for _, r in members]
        self._leaf_stats_from_members(node)
        return node

    def _replace_with_parts(self, leaf: DendroNode, parts_members) -> tuple[int, int]:
        parent = leaf.parent
        parts = [self._materialize_part(parent, members) for members in parts_members]
        siblings = parent.children if parent is not None else self.roots
        pos = siblings.index(leaf)
        siblings[pos:pos + 1] = parts
        return (parts[0].node_id, parts[1].node_id)

    def _attach_parts_as_children(self, leaf: DendroNode, parts_members) -> tuple[int, int]:
        parts = [self._materialize_part(leaf, members) for members in parts_members]
        leaf.children = parts
        leaf.member_ids = []
        leaf.member_r = []
        return (parts[0].node_id, parts[1].node_id)

    def insert(self, source_id: str, r) -> PlacementRecord:
        """Place one encoded sequence (encoding matrix or bare array)."""
        r = _encoding_values(r)
        if self.roots and r.shape != self.roots[0].mean.shape:
            raise DataError(
                f"encoding shape {r.shape} does not match the tree's {self.roots[0].mean.shape}"
            )
        winner = self._candidates(r) if self.roots else None
        if winner is None:
            node = self._new_node(None)
            node.member_ids.append(source_id)
            node.member_r.append(r)
            node.welford_add(r)
            self.roots.append(node)
            record = PlacementRecord(source_id, "new_root", node.node_id)
            self.records.append(record)
            return record

        d = dist(r, winner)
        if winner.is_leaf:
            winner.member_ids.append(source_id)
            winner.member_r.append(r)
            node = winner
            while node is not None:
                node.welford_add(r)
                node = node.parent
            self._record_join(d)
            split, split_ids = self._try_split(winner)
            record = PlacementRecord(source_id, "joined_leaf", winner.node_id, split, split_ids)
        else:
            child = self._new_node(winner)
            child.member_ids.append(source_id)
            child.member_r.append(r)
            child.welford_add(r)
            winner.children.append(child)
            node = winner
            while node is not None:
                node.welford_add(r)
                node = node.parent
            self._record_join(d)
            record = PlacementRecord(source_id, "joined_internal", winner.node_id, None, None)
        self.records.append(record)
        return record

    # -- queries -----------------------------------------------------

    def flat_clusters(self) -> dict[str, int]:
        """Map every inserted id to its top-level node id."""
        if not self.roots:
            raise DataError("empty tree")
        out: dict[str, int] = {}
        for root in self.roots:
            ids, _ = root.subtree_members()
            for sid in ids:
                out[sid] = root.node_id
        return out

    def validate_caches(self, tol: float = 1e-10) -> float:
        """Compare cached statistics to from-scratch recomputation.

        Returns the worst absolute deviation; raises if members are lost
        or duplicated.
        """
        worst = 0.0
        seen_ids: list[str] = []
        for node in self.nodes():
            ids, mats = node.subtree_members()
            if node.is_leaf:
                seen_ids.extend(ids)
            if len(ids) != node.count:
                raise AssertionError(f"node {node.node_id}: count {node.count} != {len(ids)}")
            mean, m2 = _stats_of(mats)
            worst = max(worst, float(np.abs(node.mean - mean).max()))
            worst = max(worst, abs(node.intra - m2 / len(mats)))
        root_total = sum(root.count for root in self.roots)
        if len(seen_ids) != len(set(seen_ids)) or root_total != len(set(seen_ids)):
            raise AssertionError("membership conservation violated")
        if worst > tol:
            raise AssertionError(f"cached statistics deviate by {worst:.3e}")
        return worst

    # -- serialization -----------------------------------------------

    def to_dict(self) -> dict:
        def node_dict(node: DendroNode) -> dict:
            return {
                "id": node.node_id,
                "members": list(node.member_ids),
                "count": node.count,
                "intra": node.intra,
                "children": [node_dict(c) for c in node.children],
            }

        return {
            "config": {
                "k_clust": self.cfg.k_clust,
                "k_rmv": self.cfg.k_rmv,
                "gamma": self.cfg.gamma,
                "split_min": self.cfg.split_min,
                "dup_eps": self.cfg.dup_eps,
            },
            "join_count": len(self._join_dists),
            "typical_join_distance": self._typical_join(),
            "roots": [node_dict(r) for r in self.roots],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def to_dot(self) -> str:
        """Graphviz description of the dendrogram."""
        lines = ["digraph dendrogram {", "  node [shape=box];"]
        for node in self.nodes():
            label = f"#{node.node_id} n={node.count} intra={node.intra:.3g}"
            if node.is_leaf and node.member_ids:
                shown = ", ".join(node.member_ids[:4])
                if len(node.member_ids) > 4:
                    shown += ", ..."
                label += f"\\n{shown}"
            lines.append(f'  n{node.node_id} [label="{label}"];')
            for child in node.children:
                lines.append(f"  n{node.node_id} -> n{child.node_id};")
        lines.append("}")
        return "\n".join(lines)


def flat_clusters_from_dict(tree: dict) -> dict[str, int]:
    """Top-level assignment from a serialized tree (as written by save)."""
    out: dict[str, int] = {}

    def collect(node: dict, top: int) -> None:
        for sid in node["members"]:
            out[sid] = top
        for child in node["children"]:
            collect(child, top)

    for root in tree["roots"]:
        collect(root, root["id"])
    if not out:
        raise DataError("serialized tree has no members")
    return out
