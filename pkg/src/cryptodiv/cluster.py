"""Trajectory distances and average-linkage (UPGMA) clustering."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .sampling import MedianTrajectory, PortfolioSpec


def trajectory_distance(a: MedianTrajectory | np.ndarray, b: MedianTrajectory | np.ndarray) -> float:
    """Mean absolute difference between two aligned trajectories."""
    if isinstance(a, MedianTrajectory) and isinstance(b, MedianTrajectory):
        if a.dates != b.dates:
            raise ValueError(f"trajectories {a.spec} and {b.spec} are not aligned in time")
    x = np.asarray(getattr(a, "values", a), float)
    y = np.asarray(getattr(b, "values", b), float)
    if x.shape != y.shape:
        raise ValueError(f"trajectory lengths differ: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("empty trajectory")
    return float(np.abs(x - y).mean())


@dataclass(frozen=True)
class DistanceMatrix:
    labels: tuple
    entries: np.ndarray

    def __post_init__(self) -> None:
        e = self.entries
        if e.shape != (len(self.labels), len(self.labels)):
            raise ValueError("distance matrix shape does not match labels")
        if np.any(np.diag(e) != 0) or np.any(e < 0) or not np.array_equal(e, e.T):
            raise ValueError("distance matrix must be symmetric, non-negative, zero-diagonal")

    def __len__(self) -> int:
        return len(self.labels)


def _label(spec):
    return (spec.m, spec.n) if isinstance(spec, PortfolioSpec) else spec


def distance_matrix(trajectories: Sequence[MedianTrajectory]) -> DistanceMatrix:
    ordered = sorted(trajectories, key=lambda t: (t.spec.m, t.spec.n))
    L = len(ordered)
    d = np.zeros((L, L))
    for i in range(L):
        for j in range(i + 1, L):
            d[i, j] = d[j, i] = trajectory_distance(ordered[i], ordered[j])
    return DistanceMatrix(tuple(_label(t.spec) for t in ordered), d)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merges use node ids: leaves are 0..L-1, the i-th merge creates node L+i."""

    labels: tuple
    merges: tuple[Merge, ...]

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    def members(self, node: int) -> list[int]:
        L = self.n_leaves
        stack, out = [node], []
        while stack:
            x = stack.pop()
            if x < L:
                out.append(x)
            else:
                mg = self.merges[x - L]
                stack.extend((mg.left, mg.right))
        return sorted(out)


def _rank(labels: Sequence[Hashable]) -> list[int]:
    order = sorted(range(len(labels)), key=lambda i: labels[i])
    rank = [0] * len(labels)
    for r, i in enumerate(order):
        rank[i] = r
    return rank


def average_linkage(dist: DistanceMatrix) -> Dendrogram:
    """UPGMA.  Equal distances are resolved by the lexicographically smallest label pair,
    where a cluster is represented by its smallest leaf label."""
    L = len(dist)
    d = dist.entries.astype(float).copy()
    rank = _rank(dist.labels)
    key = list(rank)  # per slot: smallest leaf rank in the cluster
    size = [1] * L
    node = list(range(L))  # per slot: current node id
    active = list(range(L))
    merges = []
    for step in range(L - 1):
        best = None
        for ai, i in enumerate(active):
            for j in active[ai + 1 :]:
                lo, hi = sorted((key[i], key[j]))
                cand = (d[i, j], lo, hi, i, j)
                if best is None or cand[:3] < best[:3]:
                    best = cand
        height, _, _, i, j = best
        if key[j] < key[i]:
            i, j = j, i
        merges.append(Merge(node[i], node[j], float(height), size[i] + size[j]))
        # merged cluster reuses slot i
        for k in active:
            if k not in (i, j):
                d[i, k] = d[k, i] = (size[i] * d[i, k] + size[j] * d[j, k]) / (size[i] + size[j])
        size[i] += size[j]
        key[i] = min(key[i], key[j])
        node[i] = L + step
        active.remove(j)
    return Dendrogram(tuple(dist.labels), tuple(merges))


def cut_clusters(dendrogram: Dendrogram, k: int) -> list[list]:
    """Partition after applying the first L-k merges; clusters ordered by smallest label."""
    L = dendrogram.n_leaves
    if not 1 <= k <= L:
        raise ValueError(f"k={k} outside 1..{L}")
    roots = set(range(L))
    for step, mg in enumerate(dendrogram.merges[: L - k]):
        roots -= {mg.left, mg.right}
        roots.add(L + step)
    groups = [[dendrogram.labels[i] for i in dendrogram.members(r)] for r in roots]
    groups = [sorted(g) for g in groups]
    return sorted(groups, key=lambda g: g[0])


def cluster_ids(dendrogram: Dendrogram, k: int) -> dict:
    return {label: c for c, group in enumerate(cut_clusters(dendrogram, k), 1) for label in group}


def format_label(label) -> str:
    if isinstance(label, tuple):
        return "(" + ",".join(str(x) for x in label) + ")"
    return str(label)


def to_newick(dendrogram: Dendrogram) -> str:
    """Ultrametric Newick; branch length = parent height - child height."""
    L = dendrogram.n_leaves
    if L == 1:
        return f"'{format_label(dendrogram.labels[0])}';"
    heights = [0.0] * L + [mg.height for mg in dendrogram.merges]

    def render(x: int, parent_height: float) -> str:
        length = repr(parent_height - heights[x])
        if x < L:
            name = format_label(dendrogram.labels[x]).replace("'", "''")
            return f"'{name}':{length}"
        mg = dendrogram.merges[x - L]
        return f"({render(mg.left, heights[x])},{render(mg.right, heights[x])}):{length}"

    root = 2 * L - 2
    mg = dendrogram.merges[-1]
    return f"({render(mg.left, heights[root])},{render(mg.right, heights[root])});"


# -- file formats -------------------------------------------------------------


def write_distance_matrix(dist: DistanceMatrix, path: str | os.PathLike) -> None:
    names = [format_label(x) for x in dist.labels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *names])
        for name, row in zip(names, dist.entries):
            w.writerow([name, *(repr(float(x)) for x in row)])


def write_merges(dendrogram: Dendrogram, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "left", "right", "height", "size"])
        for i, mg in enumerate(dendrogram.merges, 1):
            w.writerow([i, mg.left, mg.right, repr(mg.height), mg.size])


def write_flat_cut(dendrogram: Dendrogram, k: int, path: str | os.PathLike) -> None:
    ids = cluster_ids(dendrogram, k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "cluster_id"])
        for label in sorted(ids):
            m, n = label
            w.writerow([m, n, ids[label]])


def read_flat_cut(path: str | os.PathLike) -> dict[tuple[int, int], int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(int(r["m"]), int(r["n"])): int(r["cluster_id"]) for r in csv.DictReader(fh)}
