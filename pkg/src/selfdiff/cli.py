"""Command-line pipeline over the library modules.

Subcommands: solve (low-rank minimization checkpoints), evaluate
(per-count curve from a checkpoint), kmc (simulation curve), compare
(variance and difference report between the two curves), oracle (dense
exact curve on small grids).  Exit codes: 0 ok, 2 configuration error,
3 numerical failure.

All randomness flows from the mandatory master seed through purpose-
keyed streams, one per independent task, so --threads changes the
schedule but never the numbers.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    CANONICAL_DRIFTS,
    ConfigError,
    RunConfig,
    build_config,
    drift_slug,
    parse_config_file,
    parse_drifts,
)
from .diffusion import (
    curve_from_forms,
    read_curve,
    trace_average,
    trace_average_full,
    write_curve,
)
from .estimator import stratified_mc
from .kmc import KMCParams
from .kmc import estimate as kmc_estimate
from .lattice import Grid, JumpModel
from .lowrank import LowRankFunction, Rank1Function, read_table, write_table
from .objective import ObjectiveContext, class_mean_exact, functional_value
from .optimize import ALSConfig, dense_minimize, successive_minimize
from .rng import stream

__all__ = ["main", "NumericalFailure"]


class NumericalFailure(RuntimeError):
    """Too many indefinite one-site systems; the run is not trustworthy."""


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _preamble(cfg: RunConfig, command: str):
    return (f"command: {command}", f"config: {cfg.describe()}")


def _write_rows(path: Path, header: str, rows, preamble) -> None:
    lines = [f"# {line}" for line in preamble]
    lines.append(header)
    lines.extend(rows)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")


def _manifest(cfg: RunConfig, command: str, outputs) -> dict:
    return {
        "command": command,
        "config": cfg.as_dict(),
        "outputs": sorted(str(o) for o in outputs),
    }


def _phi_path(out: Path, drift) -> Path:
    return out / f"phi_{drift_slug(drift)}.table"


def _canonical_indices(cfg: RunConfig):
    try:
        return tuple(cfg.drifts.index(u) for u in CANONICAL_DRIFTS)
    except ValueError:
        missing = [u for u in CANONICAL_DRIFTS if u not in cfg.drifts]
        raise ConfigError(
            "matrix assembly needs drifts "
            + " ".join(",".join(str(int(c)) for c in u) for u in missing)
        ) from None


def _grid_sides(grid: Grid):
    return tuple(grid.sides)


def _rebuild_function(stack) -> LowRankFunction:
    terms = [Rank1Function(np.asarray(p)) for p in stack]
    n_sites = stack.shape[1] if len(stack) else None
    if terms:
        return LowRankFunction(terms)
    return LowRankFunction((), n_sites=n_sites)


def _run_tasks(task_fn, arg_list, threads: int):
    """Deterministic map over independent tasks, optionally in processes."""
    if threads > 1 and len(arg_list) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(task_fn, arg_list))
    return [task_fn(a) for a in arg_list]


def _evaluate_task(args):
    sides, drift, d_index, stack, ell, seed, budget = args
    grid = Grid.torus(sides)
    ctx = ObjectiveContext(grid, JumpModel.nearest_neighbor(dim=2), drift)
    func = _rebuild_function(stack)
    rng = stream(seed, "evaluate", d_index, ell)
    estimate, trace = stratified_mc(ctx, func, ell, budget, rng)
    return d_index, ell, estimate, trace


def _kmc_task(args):
    sides, drifts, ell, seed, total_budget, final_time = args
    grid = Grid.torus(sides)
    ctx = ObjectiveContext(grid, JumpModel.nearest_neighbor(dim=2), drifts[0])
    params = KMCParams(final_time=final_time, total_budget=total_budget, drifts=drifts)
    stats = kmc_estimate(ctx, ell, params, stream(seed, "kmc", ell))
    return ell, stats


def _compare_min_task(args):
    sides, drift, d_index, stack, ell, seed, budget, rep = args
    grid = Grid.torus(sides)
    ctx = ObjectiveContext(grid, JumpModel.nearest_neighbor(dim=2), drift)
    func = _rebuild_function(stack)
    rng = stream(seed, "compare-min", rep, d_index, ell)
    t0 = time.perf_counter()
    estimate, trace = stratified_mc(ctx, func, ell, budget, rng)
    return rep, d_index, ell, estimate, trace[-1][0], time.perf_counter() - t0


def _compare_kmc_task(args):
    sides, drifts, ell, seed, total_budget, final_time, rep = args
    grid = Grid.torus(sides)
    ctx = ObjectiveContext(grid, JumpModel.nearest_neighbor(dim=2), drifts[0])
    params = KMCParams(final_time=final_time, total_budget=total_budget, drifts=drifts)
    t0 = time.perf_counter()
    stats = kmc_estimate(ctx, ell, params, stream(seed, "compare-kmc", rep, ell))
    return rep, ell, stats, time.perf_counter() - t0


def cmd_solve(cfg: RunConfig) -> int:
    grid = cfg.build_grid()
    model = cfg.build_model()
    out = _out_dir(cfg)
    als = ALSConfig(tolerance=cfg.tolerance, max_site_updates=cfg.max_site_updates)
    rows = []
    timings = {}
    outputs = []
    total_updates = 0
    total_indefinite = 0
    for i, u in enumerate(cfg.drifts):
        ctx = ObjectiveContext(grid, model, u)
        t0 = time.perf_counter()
        func, reports = successive_minimize(ctx, cfg.rank, als, stream(cfg.seed, "solve", i))
        timings[drift_slug(u)] = time.perf_counter() - t0
        path = _phi_path(out, u)
        write_table(func, path, preamble=_preamble(cfg, "solve"))
        outputs.append(path.name)
        for r_index, rep in enumerate(reports, start=1):
            rows.append(
                ",".join(
                    [
                        drift_slug(u),
                        str(r_index),
                        repr(float(rep.final_value)),
                        str(len(rep.sweep_values)),
                        str(rep.site_updates),
                        str(rep.indefinite_count),
                    ]
                )
            )
            total_updates += rep.site_updates
            total_indefinite += rep.indefinite_count
        print(f"solve {drift_slug(u)}: objective {reports[-1].final_value:.9g}")
    if total_updates and total_indefinite / total_updates > cfg.max_indefinite_fraction:
        raise NumericalFailure(
            f"{total_indefinite} of {total_updates} site updates were indefinite"
        )
    ranks_path = out / "solve_ranks.csv"
    _write_rows(
        ranks_path,
        "drift,rank,objective,sweeps,site_updates,indefinite",
        rows,
        _preamble(cfg, "solve"),
    )
    outputs.append(ranks_path.name)
    _write_json(out / "manifest_solve.json", _manifest(cfg, "solve", outputs))
    _write_json(out / "timing_solve.json", {"seconds": timings})
    return 0


def _load_checkpoints(cfg: RunConfig, out: Path):
    funcs = []
    for u in CANONICAL_DRIFTS:
        path = _phi_path(out, u)
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}; run solve first")
        funcs.append(read_table(path))
    return funcs


def cmd_evaluate(cfg: RunConfig) -> int:
    grid = cfg.build_grid()
    out = _out_dir(cfg)
    _canonical_indices(cfg)
    funcs = _load_checkpoints(cfg, out)
    n = grid.n_sites
    sides = _grid_sides(grid)
    t0 = time.perf_counter()
    args = [
        (sides, CANONICAL_DRIFTS[d], d, funcs[d].pairs_stack(), ell, cfg.seed, cfg.ntilde)
        for d in range(3)
        for ell in range(n + 1)
    ]
    results = _run_tasks(_evaluate_task, args, cfg.threads)
    forms = np.zeros((n + 1, 3))
    trace_rows = []
    for d_index, ell, estimate, trace in results:
        forms[ell, d_index] = 2.0 * estimate
        slug = drift_slug(CANONICAL_DRIFTS[d_index])
        for evals, running in trace:
            trace_rows.append(f"{slug},{ell},{evals},{repr(float(running))}")
    curve = curve_from_forms(n, forms, None, "minimization", cfg.seed)
    curve_path = out / "curve_min.csv"
    write_curve(curve, curve_path, preamble=_preamble(cfg, "evaluate"))
    trace_path = out / "eval_trace.csv"
    _write_rows(
        trace_path, "drift,ell,evaluations,estimate", trace_rows, _preamble(cfg, "evaluate")
    )
    _write_json(
        out / "manifest_evaluate.json",
        _manifest(cfg, "evaluate", [curve_path.name, trace_path.name]),
    )
    _write_json(out / "timing_evaluate.json", {"seconds": time.perf_counter() - t0})
    print(f"evaluate: trace average {trace_average(curve):.6f}")
    print(f"evaluate: full trace average {trace_average_full(curve):.6f}")
    return 0


def cmd_kmc(cfg: RunConfig) -> int:
    grid = cfg.build_grid()
    out = _out_dir(cfg)
    idx = _canonical_indices(cfg)
    n = grid.n_sites
    sides = _grid_sides(grid)
    t0 = time.perf_counter()
    args = [
        (sides, cfg.drifts, ell, cfg.seed, cfg.nhat, cfg.final_time)
        for ell in range(n + 1)
    ]
    results = _run_tasks(_kmc_task, args, cfg.threads)
    forms = np.zeros((n + 1, 3))
    form_vars = np.zeros((n + 1, 3))
    detail_rows = []
    for ell, stats in results:
        for c, d_index in enumerate(idx):
            forms[ell, c] = 2.0 * stats.alphas[d_index]
            form_vars[ell, c] = 4.0 * stats.stderrs[d_index] ** 2
        for d_index, u in enumerate(cfg.drifts):
            detail_rows.append(
                ",".join(
                    [
                        str(ell),
                        drift_slug(u),
                        str(stats.n_trajectories),
                        repr(float(stats.final_time)),
                        repr(float(stats.alphas[d_index])),
                        repr(float(stats.stderrs[d_index])),
                        str(stats.attempted),
                        str(stats.blocked),
                    ]
                )
            )
    curve = curve_from_forms(n, forms, form_vars, "kmc", cfg.seed)
    curve_path = out / "curve_kmc.csv"
    write_curve(curve, curve_path, preamble=_preamble(cfg, "kmc"))
    detail_path = out / "kmc_detail.csv"
    _write_rows(
        detail_path,
        "ell,drift,trajectories,final_time,alpha,stderr,attempted,blocked",
        detail_rows,
        _preamble(cfg, "kmc"),
    )
    _write_json(
        out / "manifest_kmc.json",
        _manifest(cfg, "kmc", [curve_path.name, detail_path.name]),
    )
    _write_json(out / "timing_kmc.json", {"seconds": time.perf_counter() - t0})
    print(f"kmc: trace average {trace_average(curve):.6f}")
    print(
        "kmc: empty-class doubled alpha "
        f"{forms[0, 0]:.6f} (stderr {2.0 * np.sqrt(form_vars[0, 0] / 4.0):.6f})"
    )
    return 0


def _variance(values) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.var(ddof=1)) if arr.size > 1 else 0.0


def cmd_compare(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    min_path = out / "curve_min.csv"
    kmc_path = out / "curve_kmc.csv"
    if not min_path.exists() or not kmc_path.exists():
        raise ConfigError("compare needs curve_min.csv and curve_kmc.csv; run evaluate and kmc first")
    curve_min = read_curve(min_path)
    curve_kmc = read_curve(kmc_path)
    if curve_min.n_sites != curve_kmc.n_sites:
        raise ConfigError("curves cover different grids")
    grid = cfg.build_grid()
    n = grid.n_sites
    if n != curve_min.n_sites:
        raise ConfigError("configured grid does not match the curve files")
    sides = _grid_sides(grid)
    funcs = _load_checkpoints(cfg, out)
    reps = cfg.repeats
    t0 = time.perf_counter()

    min_args = [
        (sides, CANONICAL_DRIFTS[d], d, funcs[d].pairs_stack(), ell, cfg.seed, cfg.ntilde, r)
        for r in range(reps)
        for d in range(3)
        for ell in range(n + 1)
    ]
    min_results = _run_tasks(_compare_min_task, min_args, cfg.threads)
    min_forms = np.zeros((reps, n + 1, 3))
    min_seconds = np.zeros(reps)
    for rep, d_index, ell, estimate, _evals, seconds in min_results:
        min_forms[rep, ell, d_index] = 2.0 * estimate
        min_seconds[rep] += seconds

    kmc_args = [
        (sides, CANONICAL_DRIFTS, ell, cfg.seed, cfg.nhat, cfg.final_time, r)
        for r in range(reps)
        for ell in range(n + 1)
    ]
    kmc_results = _run_tasks(_compare_kmc_task, kmc_args, cfg.threads)
    kmc_forms = np.zeros((reps, n + 1, 3))
    kmc_seconds = np.zeros(reps)
    for rep, ell, stats, seconds in kmc_results:
        for c in range(3):
            kmc_forms[rep, ell, c] = 2.0 * stats.alphas[c]
        kmc_seconds[rep] += seconds

    # entry values per repeat: d11 = first form, d22 = second,
    # d12 = (third - first - second)/2
    def entries(forms):
        d11 = forms[:, :, 0]
        d22 = forms[:, :, 1]
        d12 = (forms[:, :, 2] - d11 - d22) / 2.0
        return d11, d12, d22

    min_e = entries(min_forms)
    kmc_e = entries(kmc_forms)
    var_rows = []
    for ell in range(n + 1):
        vals = [_variance(e[:, ell]) for e in min_e] + [_variance(e[:, ell]) for e in kmc_e]
        var_rows.append(str(ell) + "," + ",".join(repr(v) for v in vals))
    var_path = out / "compare_variance.csv"
    _write_rows(
        var_path,
        "ell,var_min_d11,var_min_d12,var_min_d22,var_kmc_d11,var_kmc_d12,var_kmc_d22",
        var_rows,
        _preamble(cfg, "compare"),
    )

    min_d11_vars = np.array([_variance(min_e[0][:, ell]) for ell in range(n + 1)])
    kmc_d11_vars = np.array([_variance(kmc_e[0][:, ell]) for ell in range(n + 1)])
    diff = np.abs(curve_min.matrices - curve_kmc.matrices).max(axis=(1, 2))
    min_traces = np.array([2.0 * min_e[0][r].sum() / (n + 1) for r in range(reps)])
    kmc_traces = np.array([2.0 * kmc_e[0][r].sum() / (n + 1) for r in range(reps)])

    summary = [
        f"grids: {n} sites, {reps} repeats",
        f"curve difference (max entry): {float(diff.max())!r}",
        f"trace average minimization: {trace_average(curve_min)!r}",
        f"trace average kmc: {trace_average(curve_kmc)!r}",
        f"repeat variance of trace average, minimization: {_variance(min_traces)!r}",
        f"repeat variance of trace average, kmc: {_variance(kmc_traces)!r}",
        f"mean per-count variance d11, minimization: {float(min_d11_vars.mean())!r}",
        f"mean per-count variance d11, kmc: {float(kmc_d11_vars.mean())!r}",
        f"max per-count variance d11, minimization: {float(min_d11_vars.max())!r}",
        f"max per-count variance d11, kmc: {float(kmc_d11_vars.max())!r}",
        "ordering: minimization variance below kmc: "
        + ("yes" if min_d11_vars.mean() <= kmc_d11_vars.mean() else "no"),
    ]
    summary_path = out / "compare_summary.txt"
    _write_rows(summary_path, "", summary, _preamble(cfg, "compare"))

    _write_json(
        out / "manifest_compare.json",
        _manifest(cfg, "compare", [var_path.name, summary_path.name]),
    )
    _write_json(
        out / "timing_compare.json",
        {
            "seconds": time.perf_counter() - t0,
            "mean_repeat_seconds_min": float(min_seconds.mean()),
            "mean_repeat_seconds_kmc": float(kmc_seconds.mean()),
        },
    )
    for line in summary:
        print(f"compare: {line}")
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    grid = cfg.build_grid()
    if grid.n_sites > 12:
        raise ConfigError("oracle needs at most 12 sites (use M=1)")
    out = _out_dir(cfg)
    model = cfg.build_model()
    n = grid.n_sites
    t0 = time.perf_counter()
    forms = np.zeros((n + 1, 3))
    summary = []
    for d, u in enumerate(CANONICAL_DRIFTS):
        ctx = ObjectiveContext(grid, model, u)
        table, value = dense_minimize(ctx)
        summary.append(f"dense minimum {drift_slug(u)}: {value!r}")
        for ell in range(n + 1):
            forms[ell, d] = 2.0 * class_mean_exact(ctx, table, ell)
        phi_path = _phi_path(out, u)
        if phi_path.exists():
            func = read_table(phi_path)
            low = functional_value(ctx, func)
            gap = (low - value) / value if value else 0.0
            summary.append(
                f"checkpoint gap {drift_slug(u)}: objective {low!r} relative gap {gap!r}"
            )
    curve = curve_from_forms(n, forms, None, "minimization", cfg.seed)
    curve_path = out / "curve_oracle.csv"
    write_curve(curve, curve_path, preamble=_preamble(cfg, "oracle"))
    summary.append(f"trace average oracle: {trace_average(curve)!r}")
    summary_path = out / "oracle_summary.txt"
    _write_rows(summary_path, "", summary, _preamble(cfg, "oracle"))
    _write_json(
        out / "manifest_oracle.json",
        _manifest(cfg, "oracle", [curve_path.name, summary_path.name]),
    )
    _write_json(out / "timing_oracle.json", {"seconds": time.perf_counter() - t0})
    for line in summary:
        print(f"oracle: {line}")
    return 0


_DISPATCH = {
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "kmc": cmd_kmc,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfdiff",
        description="Self-diffusion of a tagged exclusion particle: "
        "low-rank minimization and kinetic Monte Carlo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "optimize low-rank trial functions, write checkpoints",
        "evaluate": "per-count curve from checkpoints via stratified estimates",
        "kmc": "per-count curve from direct simulation",
        "compare": "variance and difference report between the two curves",
        "oracle": "exact dense curve on small grids",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="master seed (required here or in the file)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker process cap")
        sp.add_argument("--rank", type=int, help="number of rank-1 terms")
        sp.add_argument("--M", type=int, dest="big_m", help="grid radius")
        sp.add_argument("--u", help="drift list, e.g. '1,0;0,1;1,1'")
        sp.add_argument("--T", type=float, dest="horizon", help="simulation horizon")
        sp.add_argument("--nhat", type=int, help="simulation total budget")
        sp.add_argument("--ntilde", type=int, help="per-stratum sample budget")
        sp.add_argument("--eps", type=float, help="relative tolerance of the solver")
        sp.add_argument("--route", choices=("min", "kmc", "both"), help="route tag")
        sp.add_argument("--repeats", type=int, help="compare repeat count")
        sp.add_argument("--torus", help="rectangular torus sides, e.g. '4,4' (experimental)")
    return parser


def _overrides(args) -> dict:
    over = {
        "seed": args.seed,
        "out": args.out,
        "threads": args.threads,
        "rank": args.rank,
        "M": args.big_m,
        "T": args.horizon,
        "nhat": args.nhat,
        "ntilde": args.ntilde,
        "tolerance": args.eps,
        "route": args.route,
        "repeats": args.repeats,
    }
    if args.u is not None:
        try:
            over["drifts"] = parse_drifts(args.u)
        except ValueError as exc:
            raise ConfigError(f"flag --u: {exc}") from None
    if args.torus is not None:
        try:
            over["torus"] = tuple(int(s) for s in args.torus.split(","))
        except ValueError:
            raise ConfigError("flag --torus: expected comma-separated integers") from None
    return over


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        entries = parse_config_file(args.config) if args.config else {}
        cfg = build_config(entries, _overrides(args), path=args.config)
        return _DISPATCH[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
