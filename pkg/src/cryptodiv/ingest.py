"""Daily close-price ingestion: parse, align to a complete 7-day calendar,
bucket tickers into market-cap deciles and take log returns."""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

ONE_DAY = dt.timedelta(days=1)


class IngestError(ValueError):
    """Bad input data. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class PriceRecord:
    date: dt.date
    ticker: str
    close: float


@dataclass(frozen=True)
class Coverage:
    ticker: str
    first: dt.date
    last: dt.date
    count: int


class RecordSet:
    """Unaligned price records keyed by (date, ticker)."""

    def __init__(self, records: Iterable[PriceRecord] = ()):
        self._by_ticker: dict[str, dict[dt.date, float]] = defaultdict(dict)
        self._n = 0
        for rec in records:
            self.add(rec)

    def add(self, rec: PriceRecord, line: int | None = None) -> None:
        if not rec.close > 0 or not np.isfinite(rec.close):
            raise IngestError(f"close must be positive and finite, got {rec.close!r}", line, "close")
        series = self._by_ticker[rec.ticker]
        if rec.date in series:
            raise IngestError(f"duplicate record for ({rec.date}, {rec.ticker})", line)
        series[rec.date] = rec.close
        self._n += 1

    def __len__(self) -> int:
        return self._n

    @property
    def tickers(self) -> list[str]:
        return sorted(self._by_ticker)

    def series(self, ticker: str) -> dict[dt.date, float]:
        return dict(self._by_ticker[ticker])

    def coverage(self) -> dict[str, Coverage]:
        out = {}
        for ticker in self.tickers:
            days = self._by_ticker[ticker]
            out[ticker] = Coverage(ticker, min(days), max(days), len(days))
        return out


@dataclass(frozen=True)
class PricePanel:
    tickers: tuple[str, ...]
    calendar: tuple[dt.date, ...]
    prices: np.ndarray  # (N, T+1)

    def __post_init__(self) -> None:
        n, days = self.prices.shape
        if n != len(self.tickers) or days != len(self.calendar):
            raise ValueError("price matrix shape does not match tickers x calendar")
        if len(set(self.tickers)) != n:
            raise ValueError("duplicate tickers in panel")
        for a, b in zip(self.calendar, self.calendar[1:]):
            if b - a != ONE_DAY:
                raise ValueError(f"calendar gap or disorder between {a} and {b}")
        if not np.all(np.isfinite(self.prices)) or not np.all(self.prices > 0):
            raise ValueError("panel prices must be positive and finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.prices.shape

    def subset(self, tickers: Sequence[str]) -> PricePanel:
        index = {t: i for i, t in enumerate(self.tickers)}
        rows = [index[t] for t in tickers]
        return PricePanel(tuple(tickers), self.calendar, self.prices[rows])


@dataclass(frozen=True)
class Drop:
    ticker: str
    missing: int
    first: dt.date
    last: dt.date

    def line(self) -> str:
        return f"DROPPED {self.ticker} missing={self.missing} first={self.first} last={self.last}"


@dataclass(frozen=True)
class DecileMap:
    ordering: tuple[str, ...]  # descending market cap
    group_size: int

    def __post_init__(self) -> None:
        if len(set(self.ordering)) != len(self.ordering):
            raise ValueError("ticker listed twice in decile ordering")
        if self.group_size < 1 or len(self.ordering) % self.group_size:
            raise ValueError(
                f"{len(self.ordering)} tickers do not split into groups of {self.group_size}"
            )

    @property
    def assignment(self) -> dict[str, int]:
        return {t: i // self.group_size + 1 for i, t in enumerate(self.ordering)}

    @property
    def n_deciles(self) -> int:
        return len(self.ordering) // self.group_size

    def members(self, decile: int) -> tuple[str, ...]:
        if not 1 <= decile <= self.n_deciles:
            raise ValueError(f"decile {decile} out of range 1..{self.n_deciles}")
        lo = (decile - 1) * self.group_size
        return self.ordering[lo : lo + self.group_size]

    def index_groups(self, tickers: Sequence[str]) -> list[list[int]]:
        """Per-decile row indices into ``tickers``."""
        pos = {t: i for i, t in enumerate(tickers)}
        missing = [t for t in self.ordering if t not in pos]
        if missing:
            raise ValueError(f"decile tickers absent from panel: {', '.join(missing)}")
        return [[pos[t] for t in self.members(d)] for d in range(1, self.n_deciles + 1)]


@dataclass(frozen=True)
class ReturnsMatrix:
    tickers: tuple[str, ...]
    dates: tuple[dt.date, ...]  # date of the later close for each column
    values: np.ndarray  # (N, T)

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def indices(self, tickers: Iterable[str]) -> list[int]:
        pos = {t: i for i, t in enumerate(self.tickers)}
        return [pos[t] for t in tickers]


def _open_text(source: str | os.PathLike | IO[str]):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8-sig")
    return source


def load_prices(source: str | os.PathLike | IO[str]) -> RecordSet:
    """Parse a ``date,ticker,close`` file into a validated record set."""
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty price file") from None
        header = [h.strip().lower() for h in header]
        if header != ["date", "ticker", "close"]:
            raise IngestError(f"expected header date,ticker,close, got {','.join(header)}", 1)
        records = RecordSet()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestError(f"expected 3 fields, got {len(row)}", line)
            raw_date, ticker, raw_close = (c.strip() for c in row)
            try:
                date = dt.date.fromisoformat(raw_date)
            except ValueError:
                raise IngestError(f"not an ISO date: {raw_date!r}", line, "date") from None
            if not ticker:
                raise IngestError("empty ticker", line, "ticker")
            try:
                close = float(raw_close)
            except ValueError:
                raise IngestError(f"not a number: {raw_close!r}", line, "close") from None
            records.add(PriceRecord(date, ticker, close), line)
    finally:
        if fh is not source:
            fh.close()
    if not len(records):
        raise IngestError("price file has no records")
    return records


def daily_calendar(start: dt.date, end: dt.date) -> tuple[dt.date, ...]:
    return tuple(start + ONE_DAY * i for i in range((end - start).days + 1))


def align_panel(
    records: RecordSet,
    start: dt.date,
    end: dt.date,
    tickers: Sequence[str] | None = None,
) -> tuple[PricePanel, list[Drop]]:
    """Restrict to ``[start, end]`` and drop every ticker missing any day.

    ``tickers`` fixes the row order (and filters); default is sorted order.
    """
    if not start < end:
        raise ValueError(f"start {start} must precede end {end}")
    calendar = daily_calendar(start, end)
    wanted = list(tickers) if tickers is not None else records.tickers
    rows, kept, drops = [], [], []
    for ticker in wanted:
        series = records.series(ticker)
        missing = [d for d in calendar if d not in series]
        if missing:
            drops.append(Drop(ticker, len(missing), missing[0], missing[-1]))
            continue
        kept.append(ticker)
        rows.append([series[d] for d in calendar])
    if not kept:
        raise IngestError(f"no ticker has complete data between {start} and {end}")
    return PricePanel(tuple(kept), calendar, np.array(rows, dtype=float)), drops


def assign_deciles(tickers_by_cap: Sequence[str], group_size: int = 4) -> DecileMap:
    """First ``group_size`` tickers form decile 1, the next form decile 2, and so on."""
    if group_size < 1 or len(tickers_by_cap) % group_size:
        raise ValueError(
            f"{len(tickers_by_cap)} tickers do not split into groups of {group_size}"
        )
    return DecileMap(tuple(tickers_by_cap), group_size)


def load_deciles(source: str | os.PathLike | IO[str], group_size: int = 4) -> DecileMap:
    """Read either ``ticker,decile`` rows or a bare ordered ``ticker`` list."""
    fh = _open_text(source)
    try:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    finally:
        if fh is not source:
            fh.close()
    if not rows:
        raise IngestError("empty decile file")
    header = [h.strip().lower() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    if header == ["ticker"]:
        return assign_deciles([r[0] for r in body], group_size)
    if header != ["ticker", "decile"]:
        raise IngestError(f"expected header ticker[,decile], got {','.join(header)}", 1)
    groups: dict[int, list[str]] = defaultdict(list)
    for i, row in enumerate(body, start=2):
        if len(row) != 2:
            raise IngestError(f"expected 2 fields, got {len(row)}", i)
        try:
            decile = int(row[1])
        except ValueError:
            raise IngestError(f"decile not an integer: {row[1]!r}", i, "decile") from None
        groups[decile].append(row[0])
    labels = sorted(groups)
    if labels != list(range(1, len(labels) + 1)):
        raise IngestError(f"decile labels must be 1..K without gaps, got {labels}")
    sizes = {len(groups[d]) for d in labels}
    if len(sizes) != 1:
        raise IngestError(f"deciles have unequal sizes {sorted(sizes)}")
    return DecileMap(tuple(t for d in labels for t in groups[d]), sizes.pop())


def restrict_deciles(deciles: DecileMap, available: Iterable[str]) -> DecileMap:
    """Re-bucket by position after dropping tickers that are not available.

    The smallest-cap leftovers that cannot fill a whole group are discarded;
    compare ``ordering`` with ``available`` to see which.
    """
    keep = set(available)
    remaining = [t for t in deciles.ordering if t in keep]
    if len(remaining) == len(deciles.ordering):
        return deciles
    full = len(remaining) - len(remaining) % deciles.group_size
    if full == 0:
        raise ValueError(f"fewer than {deciles.group_size} tickers left after drops")
    return assign_deciles(remaining[:full], deciles.group_size)


def log_returns(panel: PricePanel) -> ReturnsMatrix:
    values = np.log(panel.prices[:, 1:] / panel.prices[:, :-1])
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite log return")
    return ReturnsMatrix(panel.tickers, panel.calendar[1:], values)


# -- panel artifact: wide CSV, one row per day ------------------------------


def write_panel(panel: PricePanel, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.tickers])
        for j, day in enumerate(panel.calendar):
            w.writerow([day.isoformat(), *(repr(float(x)) for x in panel.prices[:, j])])


def read_panel(path: str | os.PathLike) -> PricePanel:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "date":
        raise IngestError(f"{path}: not a panel file")
    tickers = tuple(rows[0][1:])
    calendar = tuple(dt.date.fromisoformat(r[0]) for r in rows[1:])
    prices = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float).T
    return PricePanel(tickers, calendar, prices.reshape(len(tickers), len(calendar)))


def write_deciles(deciles: DecileMap, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "decile"])
        for ticker, decile in deciles.assignment.items():
            w.writerow([ticker, decile])


def format_drop_report(drops: Iterable[Drop]) -> str:
    buf = io.StringIO()
    for d in drops:
        buf.write(d.line() + "\n")
    return buf.getvalue()


def reference_deciles_path() -> Path:
    """Table of the 40 reference tickers by market cap, shipped with the package."""
    return Path(__file__).with_name("data") / "reference_deciles.csv"
