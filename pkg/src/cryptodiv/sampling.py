"""Random (m, n) portfolio sampling over decile sectors.

A portfolio draws ``m`` deciles, then ``n`` coins inside each, both without
replacement.  Every (m, n, draw) gets its own Philox stream keyed off the
master seed, so results do not depend on evaluation order or worker count.

The correlation matrix of a sub-portfolio is the principal submatrix of the
full-universe matrix for the same window, so the full rolling stack is built
once and sliced per draw.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import AnalysisConfig
from .correlation import correlation_stack, rolling_correlations
from .ingest import DecileMap, ReturnsMatrix
from .spectra import leading_eigenvalue_stack


@dataclass(frozen=True, order=True)
class PortfolioSpec:
    m: int
    n: int

    def check(self, n_deciles: int, decile_size: int) -> None:
        if not 1 <= self.m <= n_deciles:
            raise ValueError(f"m={self.m} outside 1..{n_deciles}")
        if not 1 <= self.n <= decile_size:
            raise ValueError(f"n={self.n} outside 1..{decile_size}")

    @property
    def size(self) -> int:
        return self.m * self.n


def portfolio_stream(master_seed: int, spec: PortfolioSpec, draw: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(spec.m, spec.n, draw))
    return np.random.Generator(np.random.Philox(ss))


def draw_portfolio(
    spec: PortfolioSpec,
    groups: Sequence[Sequence[int]],
    stream: np.random.Generator,
) -> tuple[int, ...]:
    """Sorted indices of one random (m, n) portfolio; ``groups`` lists each decile's rows."""
    size = min(len(g) for g in groups)
    spec.check(len(groups), size)
    chosen = stream.choice(len(groups), size=spec.m, replace=False)
    picked: list[int] = []
    for d in chosen:
        members = groups[int(d)]
        for p in stream.choice(len(members), size=spec.n, replace=False):
            picked.append(int(members[int(p)]))
    return tuple(sorted(picked))


@dataclass(frozen=True)
class MedianTrajectory:
    spec: PortfolioSpec
    dates: tuple[dt.date, ...]
    values: np.ndarray
    draws_used: int

    def __len__(self) -> int:
        return len(self.values)


def _submatrix_series(stack: np.ndarray, idx: tuple[int, ...]) -> np.ndarray:
    ix = np.asarray(idx)
    return leading_eigenvalue_stack(stack[:, ix[:, None], ix[None, :]])


class Sampler:
    """Holds the full-universe correlation stack and draws trajectories from it."""

    def __init__(self, returns: ReturnsMatrix, deciles: DecileMap, config: AnalysisConfig):
        self.returns = returns
        self.config = config
        self.groups = deciles.index_groups(returns.tickers)
        self.decile_size = deciles.group_size
        mats = rolling_correlations(
            returns, None, config.tau, config.variance_floor, workers=config.workers
        )
        self.stack = correlation_stack(mats)
        self.dates = tuple(returns.dates[m.window.end - 1] for m in mats)

    def draws(self, spec: PortfolioSpec) -> list[tuple[int, ...]]:
        spec.check(len(self.groups), self.decile_size)
        return [
            draw_portfolio(spec, self.groups, portfolio_stream(self.config.seed, spec, d))
            for d in range(self.config.draws)
        ]

    def trajectory(self, spec: PortfolioSpec) -> MedianTrajectory:
        cache: dict[tuple[int, ...], np.ndarray] = {}
        rows = []
        for idx in self.draws(spec):
            if idx not in cache:
                cache[idx] = _submatrix_series(self.stack, idx)
            rows.append(cache[idx])
        # even D: numpy averages the two central order statistics
        values = np.median(np.vstack(rows), axis=0)
        return MedianTrajectory(spec, self.dates, values, self.config.draws)


def median_trajectory(
    spec: PortfolioSpec,
    returns: ReturnsMatrix,
    deciles: DecileMap,
    config: AnalysisConfig,
) -> MedianTrajectory:
    return Sampler(returns, deciles, config).trajectory(spec)


def mu(trajectory: MedianTrajectory | np.ndarray) -> float:
    values = trajectory.values if isinstance(trajectory, MedianTrajectory) else trajectory
    values = np.asarray(values, float)
    if values.size == 0:
        raise ValueError("empty trajectory")
    return float(values.mean())


@dataclass
class MuTable:
    values: np.ndarray  # (grid_m, grid_n); row m-1, column n-1

    def __getitem__(self, key: tuple[int, int]) -> float:
        m, n = key
        if not (1 <= m <= self.values.shape[0] and 1 <= n <= self.values.shape[1]):
            raise KeyError(key)
        return float(self.values[m - 1, n - 1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def specs(self) -> list[PortfolioSpec]:
        gm, gn = self.shape
        return [PortfolioSpec(m, n) for m in range(1, gm + 1) for n in range(1, gn + 1)]

    def display(self, digits: int = 3) -> str:
        gm, gn = self.shape
        width = digits + 3
        lines = ["m\\n " + "".join(f"{n:>{width}}" for n in range(1, gn + 1))]
        for m in range(1, gm + 1):
            cells = "".join(f"{self[m, n]:>{width}.{digits}f}" for n in range(1, gn + 1))
            lines.append(f"{m:>3} " + cells)
        return "\n".join(lines) + "\n"


def grid_specs(grid_m: int, grid_n: int) -> list[PortfolioSpec]:
    return [PortfolioSpec(m, n) for m in range(1, grid_m + 1) for n in range(1, grid_n + 1)]


def run_grid(
    returns: ReturnsMatrix,
    deciles: DecileMap,
    config: AnalysisConfig,
    grid: tuple[int, int] | None = None,
    workers: int | None = None,
) -> tuple[MuTable, list[MedianTrajectory]]:
    """All median trajectories over the grid plus their temporal means."""
    gm, gn = grid or (config.grid_m, config.grid_n)
    workers = config.workers if workers is None else workers
    sampler = Sampler(returns, deciles, config)
    specs = grid_specs(gm, gn)
    if workers <= 1:
        trajs = [sampler.trajectory(s) for s in specs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(sampler.trajectory, specs))
    table = MuTable(np.array([mu(t) for t in trajs]).reshape(gm, gn))
    return table, trajs


def mu_table(
    returns: ReturnsMatrix,
    deciles: DecileMap,
    config: AnalysisConfig,
    grid: tuple[int, int] | None = None,
) -> MuTable:
    return run_grid(returns, deciles, config, grid)[0]


@dataclass(frozen=True)
class GreedyStep:
    m: int
    n: int
    mu: float
    move: str  # "start", "m" or "n"


@dataclass
class GreedyPath:
    steps: list[GreedyStep]
    stop_reason: str  # "threshold" or "boundary"
    # every comparison made, as (from, candidate_m, candidate_n); None when off-grid
    comparisons: list[tuple] = field(default_factory=list)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(s.m, s.n) for s in self.steps]


def greedy_path(table: MuTable, epsilon: float = 0.0) -> GreedyPath:
    """Walk from (1, 1), each step taking whichever of m+1 / n+1 lowers mu more.

    A move needs a decrease strictly greater than ``epsilon``.  Exact ties go to n.
    """
    gm, gn = table.shape
    m, n = 1, 1
    steps = [GreedyStep(1, 1, table[1, 1], "start")]
    comparisons = []
    while True:
        here = table[m, n]
        cand_m = (m + 1, n, table[m + 1, n]) if m < gm else None
        cand_n = (m, n + 1, table[m, n + 1]) if n < gn else None
        comparisons.append(((m, n, here), cand_m, cand_n))
        if cand_m is None and cand_n is None:
            return GreedyPath(steps, "boundary", comparisons)
        if cand_n is not None and (cand_m is None or cand_n[2] <= cand_m[2]):
            best, move = cand_n, "n"
        else:
            best, move = cand_m, "m"
        if not here - best[2] > epsilon:
            return GreedyPath(steps, "threshold", comparisons)
        m, n = best[0], best[1]
        steps.append(GreedyStep(m, n, best[2], move))


# -- file formats -------------------------------------------------------------


def write_mu_display(table: MuTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table.display())


def write_mu_full(table: MuTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "mu"])
        for s in table.specs():
            w.writerow([s.m, s.n, repr(table[s.m, s.n])])


def read_mu_full(path: str | os.PathLike) -> MuTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    gm = max(int(r["m"]) for r in rows)
    gn = max(int(r["n"]) for r in rows)
    values = np.full((gm, gn), np.nan)
    for r in rows:
        values[int(r["m"]) - 1, int(r["n"]) - 1] = float(r["mu"])
    if np.isnan(values).any():
        raise ValueError(f"{path}: incomplete mu grid")
    return MuTable(values)


def write_trajectories(trajs: Iterable[MedianTrajectory], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "t_end_date", "lambda_median"])
        for tr in trajs:
            for day, v in zip(tr.dates, tr.values):
                w.writerow([tr.spec.m, tr.spec.n, day.isoformat(), repr(float(v))])


def read_trajectories(path: str | os.PathLike, draws_used: int = 0) -> list[MedianTrajectory]:
    series: dict[PortfolioSpec, tuple[list, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["m", "n", "t_end_date", "lambda_median"]:
            raise ValueError(f"{path}: expected header m,n,t_end_date,lambda_median")
        for r in reader:
            spec = PortfolioSpec(int(r["m"]), int(r["n"]))
            days, vals = series.setdefault(spec, ([], []))
            days.append(dt.date.fromisoformat(r["t_end_date"]))
            vals.append(float(r["lambda_median"]))
    return [
        MedianTrajectory(spec, tuple(days), np.array(vals), draws_used)
        for spec, (days, vals) in sorted(series.items())
    ]


def write_greedy(path_: GreedyPath, target: str | os.PathLike) -> None:
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "m", "n", "mu", "move"])
        for i, s in enumerate(path_.steps):
            w.writerow([i, s.m, s.n, repr(s.mu), s.move])
        w.writerow(["stop", "", "", "", path_.stop_reason])


def describe_comparisons(path_: GreedyPath) -> list[str]:
    """Unrounded record of each greedy decision, including the one that stopped the walk."""
    lines = []
    for (m, n, here), cm, cn in path_.comparisons:
        parts = [f"at ({m},{n}) mu={here!r}"]
        if cm is not None:
            parts.append(f"({cm[0]},{cm[1]})={cm[2]!r}")
        if cn is not None:
            parts.append(f"({cn[0]},{cn[1]})={cn[2]!r}")
        if cm is not None and cn is not None and cm[2] == cn[2]:
            parts.append("exact tie -> n")
        lines.append(" ".join(parts))
    return lines
