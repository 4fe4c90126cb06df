import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from cryptodiv.ingest import ReturnsMatrix, assign_deciles

# published mu grid as printed (rows m = 1..10, columns n = 1..4)
PUBLISHED_MU = [
    [1.0, 0.759, 0.668, 0.645],
    [0.774, 0.651, 0.598, 0.587],
    [0.681, 0.605, 0.581, 0.576],
    [0.641, 0.587, 0.572, 0.565],
    [0.613, 0.583, 0.565, 0.559],
    [0.607, 0.570, 0.565, 0.557],
    [0.593, 0.565, 0.559, 0.555],
    [0.582, 0.564, 0.557, 0.552],
    [0.552, 0.565, 0.557, 0.553],
    [0.581, 0.560, 0.554, 0.552],
]

REFERENCE_PRICES_ENV = "CRYPTODIV_REFERENCE_PRICES"
REFERENCE_PRICES_DEFAULT = Path(__file__).resolve().parents[1] / "data" / "reference" / "prices.csv"


def dates_from(start: dt.date, count: int) -> tuple:
    return tuple(start + dt.timedelta(days=i) for i in range(count))


def make_returns(values, start=dt.date(2020, 1, 2), prefix="C") -> ReturnsMatrix:
    values = np.asarray(values, dtype=float)
    tickers = tuple(f"{prefix}{i}" for i in range(values.shape[0]))
    return ReturnsMatrix(tickers, dates_from(start, values.shape[1]), values)


def sector_returns(n_deciles=10, per_decile=4, T=400, market=0.8, sector=0.6, seed=0):
    """One market factor plus one factor per decile plus idiosyncratic noise."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(T)
    s = rng.standard_normal((n_deciles, T))
    rows = [
        market * f + sector * s[i // per_decile] + rng.standard_normal(T)
        for i in range(n_deciles * per_decile)
    ]
    return make_returns(0.01 * np.vstack(rows))


def write_prices_csv(path, tickers, start, prices, skip=()):
    """prices: (N, days). ``skip`` is a set of (ticker, day_index) cells to leave out."""
    lines = ["date,ticker,close"]
    for i, t in enumerate(tickers):
        for j in range(prices.shape[1]):
            if (t, j) in skip:
                continue
            lines.append(f"{start + dt.timedelta(days=j)},{t},{float(prices[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


@pytest.fixture
def sector_market():
    r = sector_returns()
    return r, assign_deciles(r.tickers, 4)


@pytest.fixture(scope="session")
def reference_prices():
    import os

    path = Path(os.environ.get(REFERENCE_PRICES_ENV, REFERENCE_PRICES_DEFAULT))
    if not path.is_file():
        pytest.skip(f"reference price fixture not found at {path}")
    return path


# -- acceptance criteria summary --------------------------------------------
# Tests marked ``criterion(number, title)`` are collected here and printed as
# one PASS / FAIL / SKIP line each at the end of the run.

_criteria: dict = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = mark.args
    if rep.skipped:
        status, why = "SKIP", str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else ""
    elif rep.failed:
        status, why = "FAIL", "; ".join(x for x in (getattr(item, "criterion_detail", ""), item.nodeid) if x)
    else:
        status, why = "PASS", ""
    detail = getattr(item, "criterion_detail", "")
    prev = _criteria.get(number)
    if prev is None or _RANK[status] > _RANK[prev[1]]:
        _criteria[number] = (title, status, why or detail)
    elif prev[1] == status and detail and not prev[2]:
        _criteria[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, note = _criteria[number]
        line = f"criterion {number:>2} {status:4}  {title}"
        terminalreporter.write_line(line + (f"  [{note}]" if note else ""))
