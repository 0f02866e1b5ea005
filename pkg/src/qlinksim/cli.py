"""Command-line frontend.

Batch interface that reproduces the report tables and figure datasets and
exposes ad-hoc analytic/simulation queries.  Every dataset lands as CSV with
a ``# manifest:`` comment plus a JSON manifest file; figure subcommands also
render a PNG next to the CSV.

Exit codes: 0 success, 2 parameter validation, 3 runtime abort.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, analytic, montecarlo, oracle, plotting, thresholds
from . import topology as topo
from .core import (
    DEFAULT_ALPHA,
    LinkModel,
    MemoryPolicy,
    RateModel,
    trials_to_time,
)
from .montecarlo import ReplicaPlan, TrialCapExceeded

WORKERS_ENV = "QLINKSIM_WORKERS"

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class CutoffType(click.ParamType):
    """Integer cutoff or the literal ``inf``."""

    name = "cutoff"

    def convert(self, value, param, ctx):
        if isinstance(value, MemoryPolicy):
            return value
        text = str(value).strip().lower()
        if text in ("inf", "infinite"):
            return MemoryPolicy.infinite()
        try:
            return MemoryPolicy.finite(int(text))
        except ValueError:
            self.fail(f"{value!r} is not an integer or 'inf'", param, ctx)


CUTOFF = CutoffType()


def _policy_label(policy: MemoryPolicy) -> str:
    return "inf" if policy.is_infinite else str(policy.cutoff)


def _load_config(ctx, _param, value):
    if not value:
        return
    overrides = {}
    for lineno, raw in enumerate(Path(value).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{value}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        overrides[key.strip().replace("-", "_")] = val.strip()
    # same flat key=value map offered as defaults to every subcommand;
    # explicit flags always win over file values
    ctx.default_map = {name: dict(overrides) for name in main.commands}


@click.group()
@click.version_option(version=__version__)
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              callback=_load_config, expose_value=False, is_eager=True,
              help="key=value file supplying defaults for any flag.")
def main():
    """Connection-time and entanglement-cluster analytics for probabilistic
    elementary-link generation."""


def _workers_option(f):
    return click.option(
        "--workers", type=int, default=None, envvar=WORKERS_ENV,
        help=f"Worker threads (default 1; env {WORKERS_ENV}).")(f)


def _run_guard(fn, *args, **kwargs):
    """Map library validation errors to exit 2 and runtime aborts to 3."""
    try:
        return fn(*args, **kwargs)
    except TrialCapExceeded as exc:
        click.echo(f"runtime abort: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        raise click.UsageError(str(exc)) from exc


def _manifest(command: str, params: dict, seed=None, runtime_s=None,
              status="ok", rows=None) -> dict:
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "seed": seed,
        "runtime_s": runtime_s,
        "status": status,
    }
    if rows is not None:
        manifest["points"] = rows
    return manifest


def _write_csv(path: Path, fieldnames, rows, manifest):
    brief = {k: v for k, v in manifest.items()
             if k in ("command", "version", "seed", "parameters", "status")}
    with path.open("w") as fh:
        fh.write("# manifest: " + json.dumps(brief, sort_keys=True) + "\n")
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join("" if row.get(k) is None else str(row.get(k))
                              for k in fieldnames) + "\n")


def _emit_dataset(out_dir: str, name: str, fieldnames, rows, manifest):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    _write_csv(csv_path, fieldnames, rows, manifest)
    with (out / f"{name}.manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return csv_path


class _DatasetRun:
    """Collects rows and flushes partial output with a failure manifest if
    the producing computation aborts."""

    def __init__(self, out_dir, name, fieldnames, command, params, seed):
        self.out_dir, self.name = out_dir, name
        self.fieldnames = fieldnames
        self.command, self.params, self.seed = command, params, seed
        self.rows: list[dict] = []
        self.started = time.perf_counter()

    def add(self, **row):
        self.rows.append(row)

    def finish(self, status="ok"):
        manifest = _manifest(self.command, self.params, seed=self.seed,
                             runtime_s=round(time.perf_counter() - self.started, 3),
                             status=status, rows=self.rows)
        return _emit_dataset(self.out_dir, self.name, self.fieldnames,
                             self.rows, manifest)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, _tb):
        if exc_type is not None:
            self.finish(status=f"failed: {exc}")
            return False
        return False


# ---------------------------------------------------------------------------
# analytic

_QUANTITIES = ("trials-no-mem", "trials-inf-mem", "pmf", "parallel",
               "capacity", "rate", "fraction", "min-trials")


def _require(value, flag, quantity):
    if value is None:
        raise click.UsageError(f"--quantity {quantity} requires {flag}")
    return value


@main.command("analytic")
@click.option("--quantity", type=click.Choice(_QUANTITIES), required=True)
@click.option("--p", type=float, help="Link success probability.")
@click.option("--m", "--M", "m", type=int, help="Number of elementary links.")
@click.option("--n", type=int, help="Trial index (pmf: table up to n).")
@click.option("--n-star", type=int, help="Finite memory cutoff.")
@click.option("--n-paths", type=int, default=1, show_default=True,
              help="Edge-disjoint parallel paths.")
@click.option("--cutoff", type=CUTOFF, default="inf", show_default=True,
              help="Cutoff for --quantity parallel (0 or inf).")
@click.option("--eta", type=float, help="Channel transmissivity.")
@click.option("--fraction", type=float, help="Target established fraction.")
@click.option("--method",
              type=click.Choice([m.value for m in analytic.Method]),
              default=analytic.Method.SURVIVAL_SERIES.value, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit JSON.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV.")
def analytic_cmd(quantity, p, m, n, n_star, n_paths, cutoff, eta, fraction,
                 method, as_json, as_csv):
    """Evaluate one closed-form quantity."""
    rows = None
    fieldnames = None
    tail = None
    if quantity == "trials-no-mem":
        p, m = _require(p, "--p", quantity), _require(m, "--m", quantity)
        value = _run_guard(analytic.expected_trials_no_memory, p, m)
        extra = {"log10": _run_guard(analytic.log10_expected_trials_no_memory, p, m)}
        formula = "expected_trials_no_memory = p^-M"
        params = {"p": p, "M": m}
    elif quantity == "trials-inf-mem":
        p, m = _require(p, "--p", quantity), _require(m, "--m", quantity)
        meth = analytic.Method(method)
        value = _run_guard(analytic.expected_trials_infinite_memory, p, m, meth)
        extra = {}
        if meth is analytic.Method.SURVIVAL_SERIES and m > 1:
            tail = _run_guard(
                analytic.expected_trials_infinite_memory_with_bound, p, m
            ).tail_bound
        formula = f"expected_trials_infinite_memory[{meth.value}]"
        params = {"p": p, "M": m}
    elif quantity == "pmf":
        p, m = _require(p, "--p", quantity), _require(m, "--m", quantity)
        n = _require(n, "--n", quantity)
        ns = np.arange(1, n + 1)
        pmf = _run_guard(analytic.pmf_trials_infinite_memory, p, m, ns)
        rows = [{"n": int(k), "pmf": float(v)} for k, v in zip(ns, pmf)]
        fieldnames = ["n", "pmf"]
        value = float(np.sum(pmf))
        extra = {"total_mass": value}
        formula = "pmf_trials_infinite_memory"
        params = {"p": p, "M": m, "n_max": n}
    elif quantity == "parallel":
        p, m = _require(p, "--p", quantity), _require(m, "--m", quantity)
        if cutoff.is_infinite:
            value = _run_guard(analytic.expected_trials_parallel_infinite,
                               p, m, n_paths)
            formula = "expected_trials_parallel_infinite (survival series)"
        elif cutoff.cutoff == 0:
            value = _run_guard(analytic.expected_trials_parallel_no_memory,
                               p, m, n_paths)
            formula = "expected_trials_parallel_no_memory = 1/(1-(1-p^M)^nP)"
        else:
            raise click.UsageError(
                "parallel closed forms exist only for --cutoff 0 or inf")
        extra = {}
        params = {"p": p, "M": m, "n_paths": n_paths,
                  "cutoff": _policy_label(cutoff)}
    elif quantity == "capacity":
        eta = _require(eta, "--eta", quantity)
        value = _run_guard(analytic.repeaterless_capacity, eta)
        extra = {}
        formula = "repeaterless_capacity = -log2(1-eta)"
        params = {"eta": eta}
    elif quantity == "rate":
        p, m = _require(p, "--p", quantity), _require(m, "--m", quantity)
        value = _run_guard(analytic.achievable_rate_infinite_cutoff, p, m)
        extra = {}
        formula = "achievable_rate_infinite_cutoff = 1/(2 E[N(M,inf)])"
        params = {"p": p, "M": m}
    elif quantity == "fraction":
        p, n = _require(p, "--p", quantity), _require(n, "--n", quantity)
        value = _run_guard(analytic.expected_link_fraction_exact, p, n, n_star)
        extra = {}
        formula = "expected_link_fraction_exact = 1-(1-p)^n"
        params = {"p": p, "n": n, "n_star": n_star}
    else:  # min-trials
        p = _require(p, "--p", quantity)
        fraction = _require(fraction, "--fraction", quantity)
        value = _run_guard(analytic.min_trials_for_fraction, fraction, p)
        extra = {}
        formula = "min_trials_for_fraction = ceil(log(1-f)/log(1-p))"
        params = {"p": p, "fraction": fraction}

    if tail is not None:
        extra["series_tail_bound"] = tail
    payload = {"quantity": quantity, "formula": formula,
               "parameters": params, "value": value, **extra}
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
        if rows:
            click.echo(json.dumps(rows))
    elif as_csv:
        click.echo("# manifest: " + json.dumps(
            {"command": f"analytic {quantity}", "version": __version__,
             "parameters": params, "seed": None, "status": "ok"},
            sort_keys=True))
        if rows:
            click.echo(",".join(fieldnames))
            for row in rows:
                click.echo(",".join(str(row[k]) for k in fieldnames))
        else:
            click.echo("quantity,value")
            click.echo(f"{quantity},{value!r}")
    else:
        click.echo(f"# {formula}  {params}")
        if tail is not None:
            click.echo(f"# series tail bound: {tail:.3e}")
        if rows:
            for row in rows:
                click.echo(f"{row['n']}\t{row['pmf']!r}")
        click.echo(f"{value!r}")
        for key, val in extra.items():
            click.echo(f"# {key}: {val!r}")


# ---------------------------------------------------------------------------
# simulate

def _build_topology(kind, size, width, height, layers, m, edge_file,
                    p, length_km, alpha, extra_loss, n_parallel):
    if kind == "file":
        if edge_file is None:
            raise click.UsageError("--topology file requires --edge-file")
        topology, model = _run_guard(topo.load_edge_list, edge_file,
                                     alpha, extra_loss, n_parallel)
        return topology, model
    if kind == "square":
        topology = _run_guard(topo.square_lattice, width or size, height or size)
    elif kind == "triangular":
        topology = _run_guard(topo.triangular_lattice, width or size, height or size)
    elif kind == "pyramid":
        topology = _run_guard(topo.pyramid, layers)
    elif kind == "chain":
        topology = _run_guard(topo.chain, m)
    else:  # pragma: no cover
        raise click.UsageError(f"unknown topology {kind}")
    if p is not None:
        model = _run_guard(LinkModel.uniform, p, topology.edge_count)
    elif length_km is not None:
        model = _run_guard(
            LinkModel.from_lengths, [length_km] * topology.edge_count,
            alpha, extra_loss, n_parallel)
    else:
        raise click.UsageError("provide --p or --length-km")
    return topology, model


def _parse_node(text, topology, kind, layers):
    if text is None:
        raise click.UsageError("--measure N-ab requires --a and --b")
    if text == "apex":
        if kind != "pyramid":
            raise click.UsageError("'apex' selector is pyramid-only")
        return topo.pyramid_apex()
    if text == "bottom-center":
        if kind != "pyramid":
            raise click.UsageError("'bottom-center' selector is pyramid-only")
        return topo.pyramid_bottom_node(layers, (layers + 1) // 2)
    if text.startswith("bottom:"):
        if kind != "pyramid":
            raise click.UsageError("'bottom:<x>' selector is pyramid-only")
        return _run_guard(topo.pyramid_bottom_node, layers, int(text[7:]))
    try:
        node = int(text)
    except ValueError:
        raise click.UsageError(f"bad node selector {text!r}")
    if not (0 <= node < topology.node_count):
        raise click.UsageError(f"node {node} not in topology")
    return node


@main.command("simulate")
@click.option("--topology", "kind",
              type=click.Choice(["square", "triangular", "pyramid", "chain",
                                 "file"]), required=True)
@click.option("--size", type=int, default=200, show_default=True,
              help="Lattice side (square/triangular).")
@click.option("--width", type=int, help="Lattice width override.")
@click.option("--height", type=int, help="Lattice height override.")
@click.option("--layers", type=int, default=5, show_default=True,
              help="Pyramid layer count.")
@click.option("--m", "--M", "m", type=int, default=2, show_default=True,
              help="Chain edge count.")
@click.option("--edge-file", type=click.Path(exists=True, dir_okay=False))
@click.option("--p", type=float, help="Homogeneous link probability.")
@click.option("--length-km", type=float, help="Common link length.")
@click.option("--alpha", type=float, default=DEFAULT_ALPHA, show_default=True)
@click.option("--extra-loss", type=float, default=1.0, show_default=True)
@click.option("--n-parallel", type=int, default=1, show_default=True)
@click.option("--cutoff", type=CUTOFF, default="inf", show_default=True)
@click.option("--trials", type=int, help="Observation trial for L/S measures.")
@click.option("--measure", type=click.Choice(["N", "N-ab", "L", "S"]),
              default="N", show_default=True)
@click.option("--a", "node_a", help="Source node (int, apex, bottom-center, bottom:<x>).")
@click.option("--b", "node_b", help="Target node selector.")
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
@_workers_option
@click.option("--block-size", type=int, default=None,
              help="Replica stream block size (default auto).")
@click.option("--samples-csv", type=click.Path(dir_okay=False),
              help="Write raw per-replica samples (replica,seed,value).")
@click.option("--dump-edges", type=click.Path(dir_okay=False),
              help="Write the generated topology as an edge-list file.")
@click.option("--json", "as_json", is_flag=True)
def simulate_cmd(kind, size, width, height, layers, m, edge_file, p,
                 length_km, alpha, extra_loss, n_parallel, cutoff, trials,
                 measure, node_a, node_b, replicas, seed, workers, block_size,
                 samples_csv, dump_edges, as_json):
    """Estimate one Monte Carlo quantity on a generated or loaded topology."""
    topology, model = _build_topology(kind, size, width, height, layers, m,
                                      edge_file, p, length_km, alpha,
                                      extra_loss, n_parallel)
    if dump_edges:
        Path(dump_edges).write_text(topo.dump_edge_list(topology, model))

    if measure == "N":
        sampler = _run_guard(montecarlo.ConnectionTrialsSampler, topology,
                             range(topology.edge_count), model, cutoff)
    elif measure == "N-ab":
        a = _parse_node(node_a, topology, kind, layers)
        b = _parse_node(node_b, topology, kind, layers)
        sampler = _run_guard(montecarlo.PairConnectionSampler, topology,
                             a, b, model, cutoff)
    elif measure == "L":
        if trials is None:
            raise click.UsageError("--measure L requires --trials")
        sampler = _run_guard(montecarlo.LinkCountSampler, topology.edge_count,
                             model, cutoff, trials)
    else:  # S
        if trials is None:
            raise click.UsageError("--measure S requires --trials")
        sampler = _run_guard(montecarlo.LargestClusterSampler, topology,
                             model, cutoff, trials)

    if block_size is None:
        # keep per-trial draw blocks around a few MB on big graphs
        block_size = max(1, min(montecarlo.DEFAULT_BLOCK_SIZE,
                                2**22 // max(1, topology.edge_count)))
    plan = ReplicaPlan(total_replicas=replicas, base_seed=seed,
                       worker_count=workers or 1, block_size=block_size)
    sink = open(samples_csv, "w") if samples_csv else None
    try:
        if sink:
            sink.write("replica,seed,value\n")
        result = _run_guard(montecarlo.estimate, sampler, plan,
                            samples_sink=sink)
    finally:
        if sink:
            sink.close()

    row = {
        "measure": measure,
        "topology": kind,
        "edges": topology.edge_count,
        "cutoff": _policy_label(cutoff),
        "trials": trials,
        "replicas": result.sample_count,
        "seed": seed,
        "block_size": block_size,
        "mean": result.mean,
        "std_error": result.std_error,
        "ci_low": result.ci_95[0],
        "ci_high": result.ci_95[1],
    }
    if as_json:
        click.echo(json.dumps(row, sort_keys=True))
    else:
        fields = list(row)
        click.echo("# manifest: " + json.dumps(
            {"command": "simulate", "version": __version__, "seed": seed,
             "parameters": {k: row[k] for k in
                            ("measure", "topology", "cutoff", "replicas",
                             "block_size")},
             "status": "ok"}, sort_keys=True))
        click.echo(",".join(fields))
        click.echo(",".join(str(row[k]) for k in fields))


# ---------------------------------------------------------------------------
# tables

@main.command("table1")
@click.option("--p", "probs", type=float, multiple=True,
              default=(0.1, 0.3, 0.5), show_default=True)
@click.option("--m", "--M", "ms", type=int, multiple=True,
              default=(10, 20), show_default=True)
@click.option("--replicas", type=int, default=100000, show_default=True)
@click.option("--seed", type=int, default=20240817, show_default=True)
@_workers_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def table1_cmd(probs, ms, replicas, seed, workers, out):
    """Minimum memory cutoffs reaching within 1% of the optimal trial count."""
    params = {"p": list(probs), "M": list(ms), "replicas": replicas}
    with _DatasetRun(out, "table1", ["p", "M", "n_star_min"],
                     "table1", params, seed) as run:
        for m in ms:
            for p in probs:
                plan = ReplicaPlan(total_replicas=replicas, base_seed=seed,
                                   worker_count=workers or 1)
                res = _run_guard(thresholds.find_min_cutoff, p, m, 0.01,
                                 thresholds.EstimatorKind.MONTE_CARLO, plan)
                run.add(p=p, M=m, n_star_min=res.n_star_min)
        path = run.finish()
    click.echo(str(path))


@main.command("table2")
@click.option("--m", "--M", "ms", type=int, multiple=True,
              default=(2, 3, 4, 5, 10), show_default=True)
@click.option("--grid-km", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def table2_cmd(ms, grid_km, out):
    """Minimum chain lengths beyond which the protocol beats the
    repeaterless capacity."""
    params = {"M": list(ms), "grid_km": grid_km}
    with _DatasetRun(out, "table2", ["M", "L_min_km"],
                     "table2", params, None) as run:
        for m in ms:
            run.add(M=m, L_min_km=_run_guard(thresholds.find_min_chain_length,
                                             m, DEFAULT_ALPHA, grid_km))
        path = run.finish()
    click.echo(str(path))


def _p_crit_entries(lattices, cutoffs, scale, trials_n, replicas, seed,
                    workers, method):
    for lattice in lattices:
        kind = oracle.LatticeKind(lattice)
        for n_star in cutoffs:
            plan = ReplicaPlan(total_replicas=replicas,
                               base_seed=seed + 1000 * n_star,
                               worker_count=workers or 1, block_size=16)
            res = _run_guard(
                thresholds.estimate_p_crit, kind, scale, trials_n, n_star,
                thresholds.PcritMethod(method), plan)
            yield lattice, n_star, res


@main.command("table3")
@click.option("--lattice", "lattices",
              type=click.Choice(["square", "triangular"]), multiple=True,
              default=("square", "triangular"), show_default=True)
@click.option("--cutoff", "cutoffs", type=int, multiple=True,
              default=(0, 1, 2, 3, 4), show_default=True)
@click.option("--scale", type=int, default=200, show_default=True,
              help="Lattice side length (full scale: 500).")
@click.option("--trials", "trials_n", type=int, default=10, show_default=True)
@click.option("--replicas", type=int, default=32, show_default=True,
              help="Replicas per sweep point.")
@click.option("--method",
              type=click.Choice([m.value for m in thresholds.PcritMethod]),
              default=thresholds.PcritMethod.LOGISTIC_FIT.value,
              show_default=True)
@click.option("--seed", type=int, default=7071, show_default=True)
@_workers_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def table3_cmd(lattices, cutoffs, scale, trials_n, replicas, method, seed,
               workers, out):
    """Critical link success probabilities on lattices."""
    params = {"lattice": list(lattices), "cutoff": list(cutoffs),
              "scale": scale, "trials": trials_n, "replicas": replicas,
              "method": method}
    sweep_rows = []
    with _DatasetRun(out, "table3", ["lattice", "n_star", "p_crit",
                                     "std_error"], "table3", params, seed) as run:
        for lattice, n_star, res in _p_crit_entries(
                lattices, cutoffs, scale, trials_n, replicas, seed, workers,
                method):
            run.add(lattice=lattice, n_star=n_star, p_crit=res.p_crit,
                    std_error=res.std_error)
            for pt in res.sweep:
                sweep_rows.append({
                    "lattice": lattice, "n_star": n_star, "p": pt.p,
                    "mean_fraction": pt.mean_fraction,
                    "std_error": pt.std_error, "replicas": pt.replicas})
        path = run.finish()
    if sweep_rows:
        _emit_dataset(out, "table3_sweep",
                      ["lattice", "n_star", "p", "mean_fraction",
                       "std_error", "replicas"],
                      sweep_rows,
                      _manifest("table3_sweep", params, seed=seed))
    click.echo(str(path))


# ---------------------------------------------------------------------------
# figures

def _plot_option(f):
    return click.option("--plot/--no-plot", default=True, show_default=True,
                        help="Render a PNG alongside the CSV.")(f)


@main.command("fig1b")
@click.option("--m", "--M", "ms", type=int, multiple=True, default=(5, 10),
              show_default=True)
@click.option("--ell-min", type=float, default=5.0, show_default=True)
@click.option("--ell-max", type=float, default=60.0, show_default=True)
@click.option("--ell-step", type=float, default=5.0, show_default=True)
@click.option("--cutoff", "cutoffs", type=CUTOFF, multiple=True,
              default=("0", "2", "5", "inf"), show_default=True)
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=111, show_default=True)
@_workers_option
@_plot_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def fig1b_cmd(ms, ell_min, ell_max, ell_step, cutoffs, replicas, seed,
              workers, plot, out):
    """Average connection time vs link length (analytic endpoints, Monte
    Carlo in between).  Not numerically tabulated in the source material;
    CIs are self-reported."""
    params = {"M": list(ms), "ell": [ell_min, ell_max, ell_step],
              "cutoff": [_policy_label(c) for c in cutoffs],
              "replicas": replicas}
    fields = ["M", "n_star", "ell_km", "p", "mean_trials", "std_error",
              "mean_time_s"]
    with _DatasetRun(out, "fig1b", fields, "fig1b", params, seed) as run:
        ells = np.arange(ell_min, ell_max + ell_step / 2, ell_step)
        for m in ms:
            for policy in cutoffs:
                for ell in ells:
                    p = math.exp(-DEFAULT_ALPHA * ell)
                    rate = RateModel.from_link_length(float(ell))
                    if policy.is_infinite:
                        mean = analytic.expected_trials_infinite_memory(p, m)
                        se = 0.0
                    elif policy.cutoff == 0:
                        mean = analytic.expected_trials_no_memory(p, m)
                        se = 0.0
                    else:
                        plan = ReplicaPlan(total_replicas=replicas,
                                           base_seed=seed,
                                           worker_count=workers or 1)
                        sampler = montecarlo.ConnectionTrialsSampler(
                            topo.chain(m), range(m), LinkModel.uniform(p, m),
                            policy)
                        est = _run_guard(montecarlo.estimate, sampler, plan)
                        mean, se = est.mean, est.std_error
                    run.add(M=m, n_star=_policy_label(policy),
                            ell_km=float(ell), p=p, mean_trials=mean,
                            std_error=se,
                            mean_time_s=trials_to_time(mean, rate))
        path = run.finish()
    if plot:
        plotting.render_series(
            run.rows, Path(out) / "fig1b.png", x="ell_km", y="mean_time_s",
            series_keys=["M", "n_star"], ylog=True,
            xlabel="link length (km)", ylabel="average connection time (s)",
            title="Average connection time")
    click.echo(str(path))


@main.command("fig3")
@click.option("--m", "--M", "ms", type=int, multiple=True,
              default=(2, 3, 4, 5, 10), show_default=True)
@click.option("--l-min", type=float, default=10.0, show_default=True)
@click.option("--l-max", type=float, default=150.0, show_default=True)
@click.option("--l-step", type=float, default=2.0, show_default=True)
@_plot_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def fig3_cmd(ms, l_min, l_max, l_step, plot, out):
    """Optimal chain rates vs the repeaterless capacity."""
    params = {"M": list(ms), "L": [l_min, l_max, l_step]}
    fields = ["series", "L_km", "value"]
    with _DatasetRun(out, "fig3", fields, "fig3", params, None) as run:
        lengths = np.arange(l_min, l_max + l_step / 2, l_step)
        for L in lengths:
            eta = math.exp(-DEFAULT_ALPHA * L)
            run.add(series="capacity", L_km=float(L),
                    value=analytic.repeaterless_capacity(eta))
        for m in ms:
            for L in lengths:
                p = math.exp(-DEFAULT_ALPHA * L / m)
                run.add(series=f"M={m}", L_km=float(L),
                        value=analytic.achievable_rate_infinite_cutoff(p, m))
        path = run.finish()
    if plot:
        plotting.render_series(
            run.rows, Path(out) / "fig3.png", x="L_km", y="value",
            series_keys=["series"], ylog=True, xlabel="chain length (km)",
            ylabel="ebits per channel use", title="Optimal rates vs capacity")
    click.echo(str(path))


def _pair_mean(layers, p, policy, a_pos, replicas, seed, workers):
    pyr = topo.pyramid(layers)
    sampler = montecarlo.PairConnectionSampler(
        pyr, topo.pyramid_bottom_node(layers, a_pos), topo.pyramid_apex(),
        LinkModel.uniform(p, pyr.edge_count), policy)
    plan = ReplicaPlan(total_replicas=replicas, base_seed=seed,
                       worker_count=workers or 1)
    return montecarlo.estimate(sampler, plan)


@main.command("fig4")
@click.option("--p", type=float, default=0.1, show_default=True)
@click.option("--cutoff", type=CUTOFF, default="2", show_default=True,
              help="Cutoff for panels b and c.")
@click.option("--layers-max", type=int, default=8, show_default=True)
@click.option("--layers-c", type=int, multiple=True, default=(5, 6),
              show_default=True, help="Layer counts for the position panel.")
@click.option("--layers-d", type=int, multiple=True, default=(3, 5, 7),
              show_default=True)
@click.option("--cutoff-d", "cutoffs_d", type=CUTOFF, multiple=True,
              default=("2", "3", "4", "5", "6", "8", "12", "20", "50", "inf"),
              show_default=True)
@click.option("--replicas", type=int, default=20000, show_default=True)
@click.option("--seed", type=int, default=444, show_default=True)
@_workers_option
@_plot_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def fig4_cmd(p, cutoff, layers_max, layers_c, layers_d, cutoffs_d, replicas,
             seed, workers, plot, out):
    """Pyramid-network connection trials: size, position, and cutoff sweeps.
    Not numerically tabulated in the source material; CIs are self-reported."""
    params = {"p": p, "cutoff": _policy_label(cutoff),
              "layers_max": layers_max, "replicas": replicas}
    fields = ["panel", "n_layers", "position", "n_star", "mean_trials",
              "std_error", "replicas"]
    with _DatasetRun(out, "fig4", fields, "fig4", params, seed) as run:
        for layers in range(3, layers_max + 1):
            est = _run_guard(_pair_mean, layers, p, cutoff,
                             (layers + 1) // 2, replicas, seed, workers)
            run.add(panel="b", n_layers=layers, position=(layers + 1) // 2,
                    n_star=_policy_label(cutoff), mean_trials=est.mean,
                    std_error=est.std_error, replicas=est.sample_count)
        for layers in layers_c:
            for pos in range(1, layers + 1):
                est = _run_guard(_pair_mean, layers, p, cutoff, pos,
                                 replicas, seed, workers)
                run.add(panel="c", n_layers=layers, position=pos,
                        n_star=_policy_label(cutoff), mean_trials=est.mean,
                        std_error=est.std_error, replicas=est.sample_count)
        for layers in layers_d:
            for policy in cutoffs_d:
                est = _run_guard(_pair_mean, layers, p, policy,
                                 (layers + 1) // 2, replicas, seed, workers)
                run.add(panel="d", n_layers=layers,
                        position=(layers + 1) // 2,
                        n_star=_policy_label(policy), mean_trials=est.mean,
                        std_error=est.std_error, replicas=est.sample_count)
        path = run.finish()
    if plot:
        plotting.render_multi_panel(
            run.rows, Path(out) / "fig4.png",
            {
                "b": {"x": "n_layers", "y": "mean_trials",
                      "series_keys": ["n_star"], "title": "trials vs layers",
                      "xlabel": "layers", "ylabel": "mean trials"},
                "c": {"x": "position", "y": "mean_trials",
                      "series_keys": ["n_layers"],
                      "title": "trials vs bottom position",
                      "xlabel": "bottom position", "ylabel": "mean trials"},
                "d": {"x": "n_star", "y": "mean_trials",
                      "series_keys": ["n_layers"],
                      "title": "trials vs cutoff", "xlabel": "cutoff",
                      "ylabel": "mean trials"},
            })
    click.echo(str(path))


@main.command("fig5")
@click.option("--m", "--M", "m", type=int, default=40, show_default=True)
@click.option("--trials", "trials_n", type=int, default=30, show_default=True)
@click.option("--cutoff", "cutoffs", type=CUTOFF, multiple=True,
              default=("0", "2", "4", "6", "8", "inf"), show_default=True)
@click.option("--p-step", type=float, default=0.05, show_default=True)
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=555, show_default=True)
@_workers_option
@_plot_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def fig5_cmd(m, trials_n, cutoffs, p_step, replicas, seed, workers, plot, out):
    """Average established-link fraction vs link probability."""
    params = {"M": m, "trials": trials_n, "p_step": p_step,
              "cutoff": [_policy_label(c) for c in cutoffs],
              "replicas": replicas}
    fields = ["M", "n", "n_star", "p", "mean_fraction", "std_error"]
    with _DatasetRun(out, "fig5", fields, "fig5", params, seed) as run:
        for policy in cutoffs:
            for p in np.arange(p_step, 1.0 - p_step / 2, p_step):
                p = float(round(p, 10))
                if policy.is_infinite:
                    frac = analytic.expected_link_fraction_exact(p, trials_n,
                                                                 None)
                    se = 0.0
                elif policy.cutoff == 0:
                    frac, se = p, 0.0
                else:
                    sampler = montecarlo.LinkCountSampler(
                        m, LinkModel.uniform(p, m), policy, trials_n)
                    plan = ReplicaPlan(total_replicas=replicas,
                                       base_seed=seed,
                                       worker_count=workers or 1)
                    est = _run_guard(montecarlo.estimate, sampler, plan)
                    frac, se = est.mean / m, est.std_error / m
                run.add(M=m, n=trials_n, n_star=_policy_label(policy), p=p,
                        mean_fraction=frac, std_error=se)
        path = run.finish()
    if plot:
        plotting.render_series(
            run.rows, Path(out) / "fig5.png", x="p", y="mean_fraction",
            series_keys=["n_star"], xlabel="link probability",
            ylabel="mean established fraction",
            title=f"Established-link fraction after {trials_n} trials")
    click.echo(str(path))


@main.command("fig6")
@click.option("--lattice", "lattices",
              type=click.Choice(["square", "triangular"]), multiple=True,
              default=("square", "triangular"), show_default=True)
@click.option("--cutoff", "cutoffs", type=int, multiple=True,
              default=(0, 1, 2, 3, 4), show_default=True)
@click.option("--scale", type=int, default=200, show_default=True)
@click.option("--trials", "trials_n", type=int, default=10, show_default=True)
@click.option("--replicas", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=7071, show_default=True)
@_workers_option
@_plot_option
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def fig6_cmd(lattices, cutoffs, scale, trials_n, replicas, seed, workers,
             plot, out):
    """Normalized largest-cluster curves on lattices."""
    params = {"lattice": list(lattices), "cutoff": list(cutoffs),
              "scale": scale, "trials": trials_n, "replicas": replicas}
    fields = ["lattice", "n_star", "p", "mean_fraction", "std_error",
              "replicas"]
    with _DatasetRun(out, "fig6", fields, "fig6", params, seed) as run:
        for lattice, n_star, res in _p_crit_entries(
                lattices, cutoffs, scale, trials_n, replicas, seed, workers,
                thresholds.PcritMethod.LOGISTIC_FIT.value):
            for pt in res.sweep:
                run.add(lattice=lattice, n_star=n_star, p=pt.p,
                        mean_fraction=pt.mean_fraction,
                        std_error=pt.std_error, replicas=pt.replicas)
        path = run.finish()
    if plot:
        plotting.render_series(
            run.rows, Path(out) / "fig6.png", x="p", y="mean_fraction",
            series_keys=["lattice", "n_star"], xlabel="link probability",
            ylabel="mean largest-cluster fraction",
            title=f"Largest entanglement cluster after {trials_n} trials")
    click.echo(str(path))


if __name__ == "__main__":  # pragma: no cover
    main()
