"""Windowed standardization and Pearson correlation matrices."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .ingest import ReturnsMatrix

DEFAULT_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class WindowSpec:
    """Return columns ``end - length + 1 .. end`` in 1-based numbering."""

    end: int
    length: int

    def check(self, T: int) -> None:
        if self.length < 1:
            raise ValueError(f"window length must be positive, got {self.length}")
        if not self.length <= self.end <= T:
            raise ValueError(f"window end {self.end} outside [{self.length}, {T}]")

    @property
    def columns(self) -> slice:
        return slice(self.end - self.length, self.end)


@dataclass(frozen=True)
class StandardizedBlock:
    subset: tuple[int, ...]
    values: np.ndarray  # (N_s, tau)
    degenerate: np.ndarray  # bool (N_s,)
    window: WindowSpec


@dataclass(frozen=True)
class CorrelationMatrix:
    subset: tuple[int, ...]
    entries: np.ndarray
    window: WindowSpec
    degenerate: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def standardize_window(
    returns: ReturnsMatrix | np.ndarray,
    subset: Sequence[int],
    window: WindowSpec,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> StandardizedBlock:
    """Z-score each row over the window using the population standard deviation.

    Rows whose deviation falls below ``variance_floor`` are flagged and zeroed.
    """
    values = returns.values if isinstance(returns, ReturnsMatrix) else np.asarray(returns, float)
    subset = tuple(int(i) for i in subset)
    if not subset:
        raise ValueError("empty subset")
    if len(set(subset)) != len(subset):
        raise ValueError("subset indices must be distinct")
    if min(subset) < 0 or max(subset) >= values.shape[0]:
        raise ValueError("subset index out of range")
    window.check(values.shape[1])

    x = values[list(subset), window.columns]
    centered = x - x.mean(axis=1, keepdims=True)
    sigma = np.sqrt((centered * centered).mean(axis=1))
    degenerate = sigma < variance_floor
    safe = np.where(degenerate, 1.0, sigma)
    z = centered / safe[:, None]
    z[degenerate] = 0.0
    return StandardizedBlock(subset, z, degenerate, window)


def correlation_matrix(block: StandardizedBlock) -> CorrelationMatrix:
    z = block.values
    psi = z @ z.T / z.shape[1]
    psi = 0.5 * (psi + psi.T)
    np.clip(psi, -1.0, 1.0, out=psi)
    # exact unit diagonal; degenerate rows are already zero off-diagonal
    np.fill_diagonal(psi, 1.0)
    return CorrelationMatrix(block.subset, psi, block.window, block.degenerate)


def window_count(T: int, tau: int) -> int:
    if tau < 1:
        raise ValueError("tau must be positive")
    if T < tau:
        raise ValueError(f"series of {T} returns is shorter than the window tau={tau}")
    return T - tau + 1


def _one(values, subset, end, tau, floor) -> CorrelationMatrix:
    return correlation_matrix(standardize_window(values, subset, WindowSpec(end, tau), floor))


def rolling_correlations(
    returns: ReturnsMatrix | np.ndarray,
    subset: Sequence[int] | None,
    tau: int,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    workers: int = 1,
) -> list[CorrelationMatrix]:
    """One correlation matrix per window end ``t = tau..T``, in time order."""
    values = returns.values if isinstance(returns, ReturnsMatrix) else np.asarray(returns, float)
    if subset is None:
        subset = range(values.shape[0])
    subset = tuple(subset)
    T = values.shape[1]
    ends = range(tau, tau + window_count(T, tau))
    if workers <= 1:
        return [_one(values, subset, t, tau, variance_floor) for t in ends]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves input order
        return list(pool.map(lambda t: _one(values, subset, t, tau, variance_floor), ends))


def correlation_stack(matrices: Sequence[CorrelationMatrix]) -> np.ndarray:
    """Stack entries into a ``(W, N_s, N_s)`` array."""
    return np.stack([m.entries for m in matrices])


def iter_long_rows(
    matrices: Sequence[CorrelationMatrix], tickers: Sequence[str], dates: Sequence
) -> Iterator[tuple]:
    for m in matrices:
        day = dates[m.window.end - 1]
        for a, i in enumerate(m.subset):
            for b, j in enumerate(m.subset):
                if b < a:
                    continue
                yield day, tickers[i], tickers[j], m.entries[a, b]


def write_long(
    matrices: Sequence[CorrelationMatrix],
    returns: ReturnsMatrix,
    path: str | os.PathLike,
) -> None:
    """Diagnostic dump ``t,ticker_i,ticker_j,psi`` (upper triangle incl. diagonal)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ticker_i", "ticker_j", "psi"])
        for day, ti, tj, psi in iter_long_rows(matrices, returns.tickers, returns.dates):
            w.writerow([day.isoformat(), ti, tj, repr(float(psi))])
