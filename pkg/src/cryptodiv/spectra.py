"""Eigen-structure of correlation matrices: collectivity and eigenvector uniformity."""

from __future__ import annotations

import csv
import datetime as dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .correlation import (
    DEFAULT_VARIANCE_FLOOR,
    CorrelationMatrix,
    WindowSpec,
    rolling_correlations,
)
from .ingest import ReturnsMatrix

SYMMETRY_TOL = 1e-10
DEGENERACY_TOL = 1e-10


def _entries(matrix: CorrelationMatrix | np.ndarray) -> np.ndarray:
    a = matrix.entries if isinstance(matrix, CorrelationMatrix) else np.asarray(matrix, float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def symmetric_eigen(matrix: CorrelationMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and the matching orthonormal eigenvectors (columns)."""
    a = _entries(matrix)
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    vals, vecs = np.linalg.eigh(a)
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def _clip_normalized(lam1, n):
    # PSD with trace n forces lambda_1 / n into [1/n, 1]; only rounding lands outside
    return np.clip(lam1 / n, 1.0 / n, 1.0)


def normalized_leading_eigenvalue(matrix: CorrelationMatrix | np.ndarray) -> float:
    a = _entries(matrix)
    vals, _ = symmetric_eigen(a)
    return float(_clip_normalized(vals[0], a.shape[0]))


def orient(v: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude component is positive (first one on ties)."""
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def uniformity_of(v: np.ndarray) -> float:
    ones_norm = np.sqrt(v.size)
    h = abs(v.sum()) / (np.linalg.norm(v) * ones_norm)
    return float(min(h, 1.0))


def uniformity(matrix: CorrelationMatrix | np.ndarray) -> float:
    return summarize(matrix).uniformity


def _leading_vector(vals: np.ndarray, vecs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Leading eigenvector and whether the leading eigenspace is degenerate.

    In a degenerate eigenspace the solver's basis is arbitrary; the all-ones
    vector projected onto the eigenspace is used instead when it is non-zero.
    """
    span = vecs[:, vals >= vals[0] - DEGENERACY_TOL]
    if span.shape[1] == 1:
        return vecs[:, 0], False
    proj = span @ span.sum(axis=0)
    norm = np.linalg.norm(proj)
    if norm < 1e-8:
        return vecs[:, 0], True
    return proj / norm, True


@dataclass(frozen=True)
class SpectralSummary:
    window: WindowSpec | None
    eigenvalues: np.ndarray
    normalized_leading: float
    leading_vector: np.ndarray
    uniformity: float
    degenerate: bool


def summarize(matrix: CorrelationMatrix | np.ndarray) -> SpectralSummary:
    a = _entries(matrix)
    vals, vecs = symmetric_eigen(a)
    v1, degenerate = _leading_vector(vals, vecs)
    v1 = orient(v1)
    return SpectralSummary(
        window=matrix.window if isinstance(matrix, CorrelationMatrix) else None,
        eigenvalues=vals,
        normalized_leading=float(_clip_normalized(vals[0], a.shape[0])),
        leading_vector=v1,
        uniformity=uniformity_of(v1),
        degenerate=bool(degenerate),
    )


def leading_eigenvalue_stack(stack: np.ndarray) -> np.ndarray:
    """Normalized leading eigenvalue for each matrix of a ``(W, k, k)`` stack."""
    stack = np.asarray(stack, float)
    k = stack.shape[-1]
    if k == 1:
        return np.ones(stack.shape[0])
    top = np.linalg.eigvalsh(stack)[:, -1]
    return _clip_normalized(top, k)


@dataclass(frozen=True)
class SpectraSeries:
    scope: str
    ends: np.ndarray  # window end indices t (1-based)
    dates: tuple[dt.date, ...]
    lambda1: np.ndarray
    h: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.ends)


def rolling_spectra(
    returns: ReturnsMatrix,
    subset: Sequence[int] | None,
    tau: int,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    workers: int = 1,
    scope: str = "ALL",
) -> SpectraSeries:
    mats = rolling_correlations(returns, subset, tau, variance_floor, workers)
    if workers <= 1:
        sums = [summarize(m) for m in mats]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = list(pool.map(summarize, mats))
    ends = np.array([m.window.end for m in mats])
    return SpectraSeries(
        scope=scope,
        ends=ends,
        dates=tuple(returns.dates[t - 1] for t in ends),
        lambda1=np.array([s.normalized_leading for s in sums]),
        h=np.array([s.uniformity for s in sums]),
        degenerate=np.array([s.degenerate for s in sums]),
    )


def write_series(series: SpectraSeries, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_end_date", "lambda1_tilde", "h", "degenerate_flag"])
        for day, lam, h, flag in zip(series.dates, series.lambda1, series.h, series.degenerate):
            w.writerow([day.isoformat(), repr(float(lam)), repr(float(h)), int(flag)])


def read_series(path: str | os.PathLike, scope: str = "ALL") -> SpectraSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return SpectraSeries(
        scope=scope,
        ends=np.arange(1, len(rows) + 1),  # positional; the file does not carry t
        dates=tuple(dt.date.fromisoformat(r["t_end_date"]) for r in rows),
        lambda1=np.array([float(r["lambda1_tilde"]) for r in rows]),
        h=np.array([float(r["h"]) for r in rows]),
        degenerate=np.array([r["degenerate_flag"] == "1" for r in rows]),
    )
