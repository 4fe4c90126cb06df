"""Command-line pipeline: ingest -> spectra / sample -> cluster -> report.

Every stage writes into ``<run-dir>/<stage>/`` and leaves a ``manifest.json``
listing its inputs and outputs with SHA-256 digests.  Exit codes: 0 success,
1 runtime failure, 2 usage, config or input-format error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from pathlib import Path

import click

from . import FORMAT_VERSION, __version__
from .cluster import (
    average_linkage,
    cut_clusters,
    distance_matrix,
    format_label,
    to_newick,
    write_distance_matrix,
    write_flat_cut,
    write_merges,
)
from .config import AnalysisConfig, ConfigError, load_config
from .ingest import (
    IngestError,
    align_panel,
    format_drop_report,
    load_deciles,
    load_prices,
    log_returns,
    read_panel,
    restrict_deciles,
    write_deciles,
    write_panel,
)
from .sampling import (
    describe_comparisons,
    greedy_path,
    read_trajectories,
    run_grid,
    write_greedy,
    write_mu_display,
    write_mu_full,
    write_trajectories,
)
from .spectra import rolling_spectra, write_series

STAGES = ("ingest", "spectra", "sample", "cluster")


class StageMissing(RuntimeError):
    pass


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage_dir: Path, stage: str, cfg: AnalysisConfig, inputs: dict, outputs: list[Path],
                   **extra) -> dict:
    manifest = {
        **extra,
        "stage": stage,
        "tool_version": __version__,
        "format_version": FORMAT_VERSION,
        "config": cfg.snapshot(),
        "inputs": {name: sha256(Path(p)) for name, p in sorted(inputs.items())},
        "outputs": {p.relative_to(stage_dir).as_posix(): sha256(p) for p in sorted(outputs)},
    }
    (stage_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def stage_dir(run_dir: Path, stage: str, create: bool = False) -> Path:
    d = run_dir / stage
    if create:
        d.mkdir(parents=True, exist_ok=True)
    elif not (d / "manifest.json").is_file():
        raise StageMissing(f"stage '{stage}' has not been run in {run_dir} (no {d / 'manifest.json'})")
    return d


def _load_ingested(run_dir: Path):
    d = stage_dir(run_dir, "ingest")
    panel = read_panel(d / "panel.csv")
    deciles = load_deciles(d / "deciles.csv")
    return d, panel, deciles


class Context:
    def __init__(self, cfg_path):
        self.cfg_path = cfg_path
        self._cfg = None

    def config(self, **overrides) -> AnalysisConfig:
        if self._cfg is None:
            self._cfg = load_config(self.cfg_path)
        return self._cfg.replace(**overrides)


def _print_version(ctx, _param, value):
    if value and not ctx.resilient_parsing:
        click.echo(f"cryptodiv {__version__} (format {FORMAT_VERSION})")
        ctx.exit()


@click.group()
@click.option("--config", "cfg_path", type=click.Path(dir_okay=False), default=None,
              help="YAML/JSON config; defaults to $CRYPTODIV_CONFIG.")
@click.option("--version", is_flag=True, expose_value=False, is_eager=True, callback=_print_version,
              help="Print tool and file-format versions.")
@click.pass_context
def cli(ctx, cfg_path):
    """Rolling correlation spectra and (m, n) portfolio-sampling pipeline."""
    ctx.obj = Context(cfg_path)


run_dir_option = click.option("--run-dir", type=click.Path(file_okay=False), default=None)
workers_option = click.option("--workers", type=click.IntRange(min=1), default=None)


@cli.command()
@click.option("--prices", type=click.Path(dir_okay=False), default=None)
@click.option("--deciles", type=click.Path(dir_okay=False), default=None)
@click.option("--start", default=None, help="YYYY-MM-DD")
@click.option("--end", default=None, help="YYYY-MM-DD")
@run_dir_option
@click.pass_obj
def ingest(obj, prices, deciles, start, end, run_dir):
    """Align prices to a complete daily panel and record decile membership."""
    cfg = obj.config(prices=prices, deciles=deciles, start=start, end=end, run_dir=run_dir)
    if not cfg.prices or not cfg.deciles:
        raise ConfigError("both a prices file and a deciles file are required")
    records = load_prices(cfg.prices)
    dmap = load_deciles(cfg.deciles, cfg.decile_size)
    panel, drops = align_panel(records, cfg.start, cfg.end, tickers=dmap.ordering)
    dmap = restrict_deciles(dmap, panel.tickers)
    # coins left over after drops that cannot fill a whole decile
    trimmed = [t for t in panel.tickers if t not in set(dmap.ordering)]
    if trimmed:
        panel = panel.subset([t for t in panel.tickers if t not in trimmed])
    out = stage_dir(Path(cfg.run_dir), "ingest", create=True)
    write_panel(panel, out / "panel.csv")
    write_deciles(dmap, out / "deciles.csv")
    (out / "drops.txt").write_text(format_drop_report(drops))
    outputs = [out / "panel.csv", out / "deciles.csv", out / "drops.txt"]
    write_manifest(out, "ingest", cfg, {"prices": cfg.prices, "deciles": cfg.deciles}, outputs,
                   trimmed=trimmed)
    n, days = panel.shape
    click.echo(f"panel {n} tickers x {days} days, {len(drops)} dropped -> {out}")
    for d in drops:
        click.echo(d.line())
    if trimmed:
        click.echo("trimmed to whole deciles: " + " ".join(trimmed))


def _chart(path: Path, dates, series: dict, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cryptodiv"
    fig, ax = plt.subplots(figsize=(10, 4))
    for name, values in series.items():
        ax.plot(dates, values, lw=0.8, label=name)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=6, ncol=4)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@cli.command()
@run_dir_option
@click.option("--scopes", type=click.Choice(["ALL", "deciles", "both"]), default=None)
@click.option("--tau", type=int, default=None)
@click.option("--charts/--no-charts", default=None)
@workers_option
@click.pass_obj
def spectra(obj, run_dir, scopes, tau, charts, workers):
    """Rolling normalized leading eigenvalue and uniformity per scope."""
    cfg = obj.config(run_dir=run_dir, scopes=scopes, tau=tau, charts=charts, workers=workers)
    run = Path(cfg.run_dir)
    ing, panel, dmap = _load_ingested(run)
    returns = log_returns(panel)
    scope_sets = []
    if cfg.scopes in ("ALL", "both"):
        scope_sets.append(("ALL", None))
    if cfg.scopes in ("deciles", "both"):
        for k, idx in enumerate(dmap.index_groups(returns.tickers), 1):
            scope_sets.append((f"DECILE_{k}", idx))
    out = stage_dir(run, "spectra", create=True)
    outputs, results = [], []
    for scope, subset in scope_sets:
        series = rolling_spectra(returns, subset, cfg.tau, cfg.variance_floor, cfg.workers, scope)
        path = out / f"{scope}.csv"
        write_series(series, path)
        outputs.append(path)
        results.append(series)
        click.echo(f"{scope}: {len(series)} windows")
    if cfg.charts:
        for kind, attr, label in (("lambda1", "lambda1", "normalized leading eigenvalue"),
                                  ("uniformity", "h", "uniformity h")):
            for group in ("ALL", "DECILE"):
                chosen = {s.scope: getattr(s, attr) for s in results if s.scope.startswith(group)}
                if chosen:
                    path = out / f"{kind}_{group}.svg"
                    _chart(path, results[0].dates, chosen, label)
                    outputs.append(path)
    write_manifest(out, "spectra", cfg, {"panel": ing / "panel.csv"}, outputs)


@cli.command()
@run_dir_option
@click.option("--draws", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1), default=None)
@click.option("--grid-m", type=click.IntRange(min=1), default=None)
@click.option("--grid-n", type=click.IntRange(min=1), default=None)
@click.option("--epsilon", type=click.FloatRange(min=0), default=None)
@click.option("--tau", type=int, default=None)
@workers_option
@click.pass_obj
def sample(obj, run_dir, draws, seed, grid_m, grid_n, epsilon, tau, workers):
    """Median trajectories, the mu grid and the greedy path."""
    cfg = obj.config(run_dir=run_dir, draws=draws, seed=seed, grid_m=grid_m, grid_n=grid_n,
                     epsilon=epsilon, tau=tau, workers=workers)
    run = Path(cfg.run_dir)
    ing, panel, dmap = _load_ingested(run)
    if cfg.grid_m > dmap.n_deciles or cfg.grid_n > dmap.group_size:
        raise ConfigError(
            f"grid {cfg.grid_m}x{cfg.grid_n} exceeds {dmap.n_deciles} deciles of {dmap.group_size}"
        )
    returns = log_returns(panel)
    table, trajs = run_grid(returns, dmap, cfg)
    path = greedy_path(table, cfg.epsilon)
    out = stage_dir(run, "sample", create=True)
    write_mu_display(table, out / "mu_table.txt")
    write_mu_full(table, out / "mu_table_full.csv")
    write_trajectories(trajs, out / "trajectories.csv")
    write_greedy(path, out / "greedy_path.csv")
    (out / "greedy_decisions.txt").write_text("\n".join(describe_comparisons(path)) + "\n")
    outputs = [out / f for f in ("mu_table.txt", "mu_table_full.csv", "trajectories.csv",
                                 "greedy_path.csv", "greedy_decisions.txt")]
    write_manifest(out, "sample", cfg, {"panel": ing / "panel.csv", "deciles": ing / "deciles.csv"},
                   outputs)
    click.echo(table.display(), nl=False)
    click.echo("greedy: " + " -> ".join(f"({m},{n})" for m, n in path.cells)
               + f" [{path.stop_reason}]")


@cli.command()
@run_dir_option
@click.option("--trajectories", type=click.Path(dir_okay=False), default=None,
              help="Trajectory table; defaults to the sample stage output.")
@click.option("--k", type=int, default=None, help="Number of flat clusters.")
@click.pass_obj
def cluster(obj, run_dir, trajectories, k):
    """Distance matrix, average-linkage dendrogram and flat cut."""
    if k is not None and k < 1:
        raise click.BadParameter("k must be at least 1", param_hint="--k")
    cfg = obj.config(run_dir=run_dir, k=k)
    run = Path(cfg.run_dir)
    src = Path(trajectories) if trajectories else stage_dir(run, "sample") / "trajectories.csv"
    trajs = read_trajectories(src)
    if not trajs:
        raise ConfigError(f"{src} holds no trajectories")
    if cfg.k > len(trajs):
        raise click.BadParameter(f"k={cfg.k} exceeds {len(trajs)} trajectories", param_hint="--k")
    dist = distance_matrix(trajs)
    dendro = average_linkage(dist)
    out = stage_dir(run, "cluster", create=True)
    write_distance_matrix(dist, out / "distance_matrix.csv")
    write_merges(dendro, out / "merges.csv")
    (out / "dendrogram.nwk").write_text(to_newick(dendro) + "\n")
    write_flat_cut(dendro, cfg.k, out / "clusters.csv")
    outputs = [out / f for f in ("distance_matrix.csv", "merges.csv", "dendrogram.nwk", "clusters.csv")]
    write_manifest(out, "cluster", cfg, {"trajectories": src}, outputs)
    for i, group in enumerate(cut_clusters(dendro, cfg.k), 1):
        click.echo(f"cluster {i}: " + " ".join(format_label(x) for x in group))


@cli.command()
@run_dir_option
@click.pass_obj
def report(obj, run_dir):
    """Consolidated markdown report plus a run-level manifest."""
    cfg = obj.config(run_dir=run_dir)
    run = Path(cfg.run_dir)
    dirs = {s: stage_dir(run, s) for s in STAGES}
    manifests = {s: json.loads((d / "manifest.json").read_text()) for s, d in dirs.items()}
    # verify stage outputs are still what their manifests say
    for s, man in manifests.items():
        for rel, digest in man["outputs"].items():
            if sha256(dirs[s] / rel) != digest:
                raise RuntimeError(f"{s}/{rel} changed since the {s} stage wrote it")

    smp, cl = dirs["sample"], dirs["cluster"]
    lines = ["# cryptodiv run report", ""]
    lines += ["## Configuration", "", "```json",
              json.dumps(manifests["sample"]["config"], indent=2, sort_keys=True), "```", ""]
    drops = (dirs["ingest"] / "drops.txt").read_text().strip()
    lines += ["## Ingest", "", f"Dropped tickers: {drops or 'none'}", ""]
    lines += ["## Spectra", ""]
    for rel in manifests["spectra"]["outputs"]:
        lines.append(f"- `spectra/{rel}`")
    lines += ["", "## Mean median normalized leading eigenvalue", "", "```",
              (smp / "mu_table.txt").read_text().rstrip(), "```", ""]
    lines += ["## Greedy path", "", "```", (smp / "greedy_path.csv").read_text().rstrip(), "```", "",
              "Decisions (unrounded):", "", "```", (smp / "greedy_decisions.txt").read_text().rstrip(),
              "```", ""]
    groups: dict[int, list[str]] = {}
    with open(cl / "clusters.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            groups.setdefault(int(r["cluster_id"]), []).append(f"({r['m']},{r['n']})")
    lines += [f"## Clusters (k={len(groups)})", ""]
    for cid in sorted(groups):
        lines.append(f"- cluster {cid}: " + " ".join(groups[cid]))
    lines.append("")
    report_path = run / "report.md"
    report_path.write_text("\n".join(lines))
    run_manifest = {
        "tool_version": __version__,
        "format_version": FORMAT_VERSION,
        "master_seed": manifests["sample"]["config"]["seed"],
        "stages": manifests,
        "report": {"report.md": sha256(report_path)},
    }
    (run / "manifest.json").write_text(json.dumps(run_manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"report -> {report_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cryptodiv", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2 if exc.exit_code == 2 else exc.exit_code
    except (ConfigError, IngestError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # runtime failure
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
