"""Command-line entry points.

Subcommands wire the library into reproducible runs: ``solve`` a model to
a value table, ``regions`` to extract and check stopping sets, ``fit-boundary``
to compress a 2-type boundary to a spline, ``simulate`` to estimate Bayes
risk, ``diagnose`` to process a live symbol stream, and ``derive-sa`` to
reduce a suspended-animation system to a plain model file.

Every command that writes files also writes ``<output>.manifest.json``
recording the inputs, parameters and tool version, so a run can be
repeated and compared byte for byte (the manifest's wall-clock field is
the only thing that varies).

Exit codes: 0 success, 1 validation or I/O failure, 2 solve hit its sweep
cap (outputs still written), 3 the stream contradicted the model, 4 the
stream ended before an alarm.
"""

from __future__ import annotations

import json
import sys
import time

import click
import numpy as np

from . import __version__
from .boundary import (
    InsufficientBoundary,
    SplineBoundary,
    boundary_samples,
    fit_spline,
    is_concave,
    load_boundaries,
    save_boundary,
)
from .model import (
    SpecValidationError,
    load_sa_spec,
    load_spec,
    derive_suspended_animation,
    save_spec,
)
from .posterior import ImpossibleObservation, initial_posterior, update
from .regions import export_region, extract_region, check_region_properties, import_region
from .simulator import (
    DEFAULT_N_MAX,
    PosteriorThreshold,
    SplineStrategy,
    StopAfter,
    TableStrategy,
    estimate_risk,
    resolve_threads,
)
from .solver import GridSizeError, build_grid, load_table, save_table, value_iterate


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_manifest(
    anchor: str,
    subcommand: str,
    inputs: dict,
    parameters: dict,
    outputs: list[str],
    started: float,
    report: dict | None = None,
) -> None:
    doc = {
        "subcommand": subcommand,
        "inputs": inputs,
        "parameters": parameters,
        "outputs": outputs,
        "version": __version__,
        "wall_clock_s": time.monotonic() - started,
    }
    if report is not None:
        doc["report"] = report
    with open(anchor + ".manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Sequential change diagnosis: solve, inspect, and run strategies."""


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("-Q", "--resolution", "Q", type=int, default=200, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def solve(model: str, Q: int, tol: float, max_iter: int, out: str) -> None:
    """Value-iterate MODEL on a resolution-Q grid and write the table."""
    started = time.monotonic()
    try:
        spec = load_spec(model)
        grid = build_grid(spec.num_types, Q)
    except (SpecValidationError, GridSizeError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    table = value_iterate(spec, grid, tol=tol, max_iter=max_iter)
    try:
        save_table(table, spec, out)
    except OSError as exc:
        _fail(str(exc))
    _write_manifest(
        out,
        "solve",
        {"model": model},
        {"Q": Q, "tol": tol, "max_iter": max_iter},
        [out, out + ".json"],
        started,
        report={
            "iterations": table.iterations,
            "criterion": table.criterion,
            "sup_change": table.sup_change,
            "error_bound": table.error_bound,
            "converged": table.converged,
        },
    )
    click.echo(
        f"solved: {table.iterations} sweeps, criterion={table.criterion}, "
        f"sup_change={_fmt(table.sup_change)}"
    )
    if not table.converged:
        click.echo("warning: sweep cap reached before tolerance", err=True)
        sys.exit(2)


@main.command()
@click.argument("table_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--stop-tol", type=float, default=None, help="Stop/continue slack; defaults to the table's final sweep change.")
@click.option("--format", "fmt", type=click.Choice(["embedded", "raw"]), default=None, help="Defaults to embedded when M is 2 or 3.")
@click.option("--compare-table", type=click.Path(exists=True, dir_okay=False), default=None, help="Second table (shorter horizon) for the nestedness check.")
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def regions(
    table_path: str,
    stop_tol: float | None,
    fmt: str | None,
    compare_table: str | None,
    out: str,
) -> None:
    """Extract stopping sets from a table, check them, export CSV."""
    started = time.monotonic()
    try:
        table, spec = load_table(table_path)
        if spec is None:
            _fail(f"{table_path}: sidecar with the model is missing")
        region = extract_region(spec, table, stop_tol)
        coarser = None
        if compare_table is not None:
            other_table, other_spec = load_table(compare_table)
            if other_spec is None:
                _fail(f"{compare_table}: sidecar with the model is missing")
            coarser = extract_region(other_spec, other_table)
        if fmt is None:
            fmt = "embedded" if table.grid.M in (2, 3) else "raw"
        export_region(region, out, fmt)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    fine, coarse = region, coarser
    if coarser is not None and coarser.N_used > region.N_used:
        fine, coarse = coarser, region
    report = check_region_properties(fine, coarse)
    report_path = out + ".report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        out,
        "regions",
        {"table": table_path, "compare_table": compare_table},
        {"stop_tol": region.stop_tol, "format": fmt},
        [out, report_path],
        started,
        report=report,
    )
    for j, entry in report["labels"].items():
        click.echo(
            f"stop({j}): nonempty={entry['nonempty']} "
            f"corner={entry['contains_corner']} "
            f"components={entry['num_components']} "
            f"convexity_violations={entry['convexity_violations']} "
            f"(strict {entry['strict_violations']})"
        )
    click.echo(f"continuation components: {report['continuation_components']}")
    if report["nested"] is not None:
        click.echo(f"nested: {report['nested']['ok']}")


@main.command("fit-boundary")
@click.argument("region_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-j", "--corner", "j", type=int, required=True, help="1-based type whose boundary to fit.")
@click.option("-K", "--segments", "K", type=int, default=12, show_default=True)
@click.option("--lam", type=float, default=None, help="Smoothing parameter; omitted means 5-fold cross-validation.")
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def fit_boundary_cmd(region_csv: str, j: int, K: int, lam: float | None, out: str) -> None:
    """Fit the polar spline of one stopping boundary from a region CSV."""
    started = time.monotonic()
    try:
        region = import_region(region_csv)
        beta, r = boundary_samples(region, j)
        breaks, coef, lam_used, rms, cv = fit_spline(beta, r, K, lam)
    except (InsufficientBoundary, ValueError, OSError) as exc:
        _fail(str(exc))
    sb = SplineBoundary(corner=j, knots=breaks, coefficients=coef, lam=lam_used, rms=rms)
    try:
        save_boundary(sb, out)
    except OSError as exc:
        _fail(str(exc))
    _write_manifest(
        out,
        "fit-boundary",
        {"region": region_csv},
        {"j": j, "K": K, "lam": lam},
        [out],
        started,
        report={"rms": rms, "lambda": lam_used, "cv_sse": cv, "samples": int(beta.size)},
    )
    click.echo(f"samples={beta.size} lambda={_fmt(lam_used)} rms={_fmt(rms)}")
    if cv is not None:
        click.echo(f"cv_sse={_fmt(cv)}")
    if not is_concave(sb):
        click.echo("note: fitted curve is not concave at the knots", err=True)


def _strategy_from_options(table, boundaries, baseline):
    chosen = [x for x in (table, boundaries, baseline) if x is not None]
    if len(chosen) != 1:
        _fail("give exactly one of --table, --boundaries, --baseline")
    if table is not None:
        tbl, spec = load_table(table)
        if spec is None:
            _fail(f"{table}: sidecar with the model is missing")
        return TableStrategy(tbl), spec
    if boundaries is not None:
        return SplineStrategy(load_boundaries(boundaries)), None
    name = baseline
    if name.startswith("stop-at-"):
        return StopAfter(int(name[len("stop-at-") :])), None
    if name.startswith("threshold-"):
        return PosteriorThreshold(float(name[len("threshold-") :])), None
    _fail(f"unknown baseline {name!r} (use stop-at-<k> or threshold-<t>)")


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--boundaries", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--baseline", type=str, default=None, help="stop-at-<k> or threshold-<t>.")
@click.option("--runs", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-max", type=int, default=DEFAULT_N_MAX, show_default=True)
@click.option("--threads", type=int, default=None, help="Worker count; defaults to CD_THREADS, then the CPU count.")
@click.option("--trace", type=click.Path(dir_okay=False), default=None, help="Optional per-run CSV (theta, mu, tau, d, cost).")
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def simulate(
    model: str,
    table: str | None,
    boundaries: str | None,
    baseline: str | None,
    runs: int,
    seed: int,
    n_max: int,
    threads: int | None,
    trace: str | None,
    out: str,
) -> None:
    """Estimate the Bayes risk of a strategy on MODEL by Monte Carlo."""
    started = time.monotonic()
    try:
        spec = load_spec(model)
        strategy, _ = _strategy_from_options(table, boundaries, baseline)
    except (SpecValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    est = estimate_risk(
        spec, strategy, runs=runs, seed=seed, n_max=n_max, threads=threads
    )
    try:
        with open(out, "w") as fh:
            json.dump(est.to_json(), fh, indent=2)
            fh.write("\n")
        if trace is not None:
            with open(trace, "w") as fh:
                fh.write("theta,mu,tau,d,cost\n")
                for k in range(est.runs):
                    fh.write(
                        f"{est.theta[k]},{est.mu[k]},{est.tau[k]},{est.d[k]},"
                        f"{_fmt(est.realized[k])}\n"
                    )
    except OSError as exc:
        _fail(str(exc))
    outputs = [out] + ([trace] if trace else [])
    _write_manifest(
        out,
        "simulate",
        {"model": model, "table": table, "boundaries": boundaries, "baseline": baseline},
        {
            "runs": runs,
            "seed": seed,
            "n_max": n_max,
            "threads": resolve_threads(threads),
        },
        outputs,
        started,
    )
    click.echo(
        f"mean={_fmt(est.mean)} stderr={_fmt(est.std_error)} "
        f"cap_rate={_fmt(est.cap_rate)}"
    )


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--boundaries", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--stream", type=str, default="-", show_default=True, help="Symbol file, one integer per line; - for stdin.")
@click.option("--echo-posterior", is_flag=True, default=False)
def diagnose(
    model: str,
    table: str | None,
    boundaries: str | None,
    stream: str,
    echo_posterior: bool,
) -> None:
    """Run the online procedure over a symbol stream until the alarm."""
    started = time.monotonic()
    if table is None and boundaries is None:
        _fail("give --table or --boundaries")
    try:
        spec = load_spec(model)
        strategy, _ = _strategy_from_options(table, boundaries, None)
    except (SpecValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))

    source = sys.stdin if stream == "-" else open(stream)
    pi = initial_posterior(spec)
    n = 0
    try:
        while True:
            decision = strategy.decide(spec, pi, n)
            if decision is not None:
                click.echo(f"ALARM n={n} d={decision}")
                if stream != "-":
                    _write_manifest(
                        stream,
                        "diagnose",
                        {"model": model, "table": table, "boundaries": boundaries},
                        {"stream": stream},
                        [],
                        started,
                        report={"tau": n, "d": decision},
                    )
                return
            line = source.readline()
            if line == "":
                click.echo(
                    "stream ended before alarm; last posterior "
                    + json.dumps([float(_fmt(v)) for v in pi]),
                    err=True,
                )
                sys.exit(4)
            line = line.strip()
            if not line:
                continue
            try:
                x = int(line)
            except ValueError:
                click.echo(f"step {n + 1}: not a symbol: {line!r}", err=True)
                sys.exit(3)
            if not 0 <= x < spec.alphabet_size:
                click.echo(
                    f"step {n + 1}: symbol {x} outside alphabet "
                    f"0..{spec.alphabet_size - 1}",
                    err=True,
                )
                sys.exit(3)
            try:
                pi = update(spec, pi, x)
            except ImpossibleObservation as exc:
                click.echo(f"step {n + 1}: {exc}", err=True)
                sys.exit(3)
            n += 1
            if echo_posterior:
                click.echo(json.dumps({"n": n, "pi": [float(_fmt(v)) for v in pi]}))
    finally:
        if source is not sys.stdin:
            source.close()


@main.command("derive-sa")
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--delay-cost", type=float, required=True)
@click.option("--false-alarm", type=float, default=None, help="Uniform cost of stopping before any failure.")
@click.option("--misdiagnosis", type=float, default=None, help="Uniform cost of announcing the wrong label.")
@click.option("--terminal-costs", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON file with the full (M+1) x M cost matrix.")
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def derive_sa(
    system: str,
    delay_cost: float,
    false_alarm: float | None,
    misdiagnosis: float | None,
    terminal_costs: str | None,
    out: str,
) -> None:
    """Reduce a suspended-animation system file to a model file."""
    started = time.monotonic()
    try:
        sa = load_sa_spec(system)
        M = sa.num_labels
        if terminal_costs is not None:
            if false_alarm is not None or misdiagnosis is not None:
                _fail("--terminal-costs excludes --false-alarm/--misdiagnosis")
            with open(terminal_costs) as fh:
                a = np.asarray(json.load(fh), dtype=np.float64)
        else:
            if false_alarm is None or misdiagnosis is None:
                _fail("give --false-alarm and --misdiagnosis, or --terminal-costs")
            a = np.full((M + 1, M), misdiagnosis)
            a[0, :] = false_alarm
            np.fill_diagonal(a[1:], 0.0)
        spec = derive_suspended_animation(sa, c=delay_cost, a=a)
        save_spec(spec, out)
    except (SpecValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    _write_manifest(
        out,
        "derive-sa",
        {"system": system, "terminal_costs": terminal_costs},
        {
            "delay_cost": delay_cost,
            "false_alarm": false_alarm,
            "misdiagnosis": misdiagnosis,
        },
        [out],
        started,
        report={"p": spec.p, "nu": spec.nu.tolist(), "num_types": spec.num_types},
    )
    click.echo(
        f"derived: M={spec.num_types} p={_fmt(spec.p)} "
        f"nu=[{', '.join(_fmt(v) for v in spec.nu)}]"
    )


if __name__ == "__main__":
    main()
