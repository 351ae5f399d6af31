"""Command-line entry point: ``rendezvous <command> [options]``.

Every command writes its artifacts and the fully resolved config into
``--out-dir``.  Exit codes: 0 success, 2 config or usage error, 3 solver
diverged, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from robust_rendezvous import config as cfgmod
from robust_rendezvous.config import ConfigError
from robust_rendezvous.det_solver import AugLagParams, DetSolution, solve_deterministic, switch_times
from robust_rendezvous.failures import pi_f, sample_many
from robust_rendezvous.propagation import ControlTrajectory, TimeGrid, integrate, write_trajectory_csv
from robust_rendezvous.stoch_solver import StochRunConfig, StochRunResult, run
from robust_rendezvous.validation import estimate_probability

log = logging.getLogger("robust_rendezvous")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class SolverDiverged(RuntimeError):
    pass


def _g(x: float) -> float:
    """Round to 9 significant digits for stable JSON output."""
    return float(f"{x:.9g}")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _prepare(args) -> tuple[dict, Path]:
    doc = cfgmod.load(Path(args.config) if args.config else None)
    run_sec, mission = doc["run"], doc["mission"]
    if getattr(args, "steps", None) is not None:
        run_sec["n_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        run_sec["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        run_sec["n_iters"] = args.iters
    if getattr(args, "n", None) is not None:
        run_sec["n_samples"] = args.n
    p = getattr(args, "p", None)
    if isinstance(p, list):
        run_sec["sweep_p"] = p
    elif p is not None:
        mission["p"] = p
    doc = cfgmod.resolve(doc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(doc, out / "config.json")
    return doc, out


def _deterministic(doc: dict) -> DetSolution:
    spec = cfgmod.build_spec(doc)
    params = cfgmod.build_solver(doc)
    sol = solve_deterministic(spec, params, n_steps=doc["run"]["n_steps"])
    if not sol.hit:
        raise SolverDiverged(f"deterministic solve ended with status {sol.status.value}")
    return sol


def _det_summary(sol: DetSolution) -> dict:
    sw = switch_times(sol.u_star)
    out = {
        "status": sol.status.value,
        "consumption": _g(sol.consumption),
        "deviation": _g(sol.deviation),
        "iterations": sol.iterations,
        "switch_times": [_g(t) for t in sw],
        "upsilon": [_g(v) for v in sol.upsilon],
    }
    if len(sw) == 2:
        out["t_a"], out["t_b"] = _g(sw[0]), _g(sw[1])
    return out


def cmd_solve_det(args) -> int:
    doc, out = _prepare(args)
    sol = _deterministic(doc)
    write_trajectory_csv(out / "trajectory.csv", sol.x_star, sol.u_star)
    sol.write_convergence_csv(out / "convergence.csv")
    summary = _det_summary(sol)
    _write_json(out / "summary.json", summary)
    if not args.no_plots:
        from robust_rendezvous import plots
        plots.control_profile(sol.u_star, sol.x_star, out / "control.png")
        plots.deterministic_convergence(sol.history, out / "convergence.png")
    print(json.dumps(summary))
    return EXIT_OK


def _stoch_config(doc: dict, out: Path) -> StochRunConfig:
    r = doc["run"]
    solver = cfgmod.build_solver(doc)
    inner = AugLagParams(**{**solver.to_dict(), "tol_value": r["inner_tol_value"]})
    return StochRunConfig(
        spec=cfgmod.build_spec(doc),
        schedules=cfgmod.build_schedules(doc),
        n_iters=r["n_iters"],
        mu0=r["mu0"],
        seed=r["seed"],
        inner=inner,
        projection=solver,
        n_steps=r["n_steps"],
        log_every=r["log_every"],
        checkpoint_every=r["checkpoint_every"],
        checkpoint_path=out / "checkpoint.npz",
    )


_SWEEP_COLUMNS = ("p", "pi_f", "mu", "consumption", "do_nothing", "diverged", "seed", "n_iters")


def _sweep_row(cfg: StochRunConfig, res: StochRunResult) -> list:
    return [f"{cfg.spec.p:.9g}", f"{pi_f(cfg.spec.failure_law, cfg.spec.t_f):.9g}", f"{res.mu:.9g}",
            f"{res.consumption:.9g}", res.do_nothing, res.diverged, cfg.seed, cfg.n_iters]


def _append_sweep(path: Path, row: list) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(_SWEEP_COLUMNS)
        w.writerow(row)


def _stoch_artifacts(cfg: StochRunConfig, res: StochRunResult, out: Path, plots_on: bool) -> dict:
    write_trajectory_csv(out / "trajectory.csv", res.x_star, res.u_star)
    res.write_convergence_csv(out / "convergence.csv")
    summary = {
        "p": _g(cfg.spec.p),
        "mu": _g(res.mu),
        "consumption": _g(res.consumption),
        "do_nothing": res.do_nothing,
        "diverged": res.diverged,
        "projection_failures": res.projection_failures,
        "switch_times": [_g(t) for t in switch_times(res.u_star)],
    }
    _write_json(out / "summary.json", summary)
    if plots_on:
        from robust_rendezvous import plots
        ref = res.warm_start.u_star if res.warm_start is not None else None
        plots.control_profile(res.u_star, res.x_star, out / "control.png", reference=ref)
        plots.multiplier_trace(res.mu_trace, res.consumption_trace, out / "multiplier.png")
    return summary


def cmd_solve_stoch(args) -> int:
    doc, out = _prepare(args)
    cfg = _stoch_config(doc, out)
    det = _deterministic(doc)
    res = run(cfg, warm_start=det, resume_from=Path(args.resume) if args.resume else None)
    summary = _stoch_artifacts(cfg, res, out, not args.no_plots)
    _append_sweep(out / "sweep.csv", _sweep_row(cfg, res))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc, out = _prepare(args)
    det = _deterministic(doc)
    table = out / "sweep.csv"
    if table.exists():
        table.unlink()
    rows = []
    for p in doc["run"]["sweep_p"]:
        sub = out / f"p_{p:g}"
        sub.mkdir(exist_ok=True)
        d = json.loads(json.dumps(doc))
        d["mission"]["p"] = p
        cfgmod.dump(d, sub / "config.json")
        cfg = _stoch_config(d, sub)
        res = run(cfg, warm_start=det)
        _stoch_artifacts(cfg, res, sub, not args.no_plots)
        row = _sweep_row(cfg, res)
        _append_sweep(table, row)
        rows.append((p, res.mu, res.consumption))
        log.info("p=%g done: mu=%.6f consumption=%.7f", p, res.mu, res.consumption)
    if not args.no_plots:
        from robust_rendezvous import plots
        arr = np.array(rows)
        plots.sweep(arr[:, 0], arr[:, 1], arr[:, 2], out / "sweep.png")
    print(table.read_text(), end="")
    return EXIT_OK


def read_control_csv(path: Path, grid: TimeGrid) -> ControlTrajectory:
    """Read ``q, s, w`` columns; a trajectory file's repeated last row is dropped."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        vals = np.array([[float(r["q"]), float(r["s"]), float(r["w"])] for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected numeric columns q, s, w ({exc})") from None
    if len(vals) == grid.n_steps + 1:
        vals = vals[:-1]
    if len(vals) != grid.n_steps:
        raise ConfigError(f"{path}: {len(vals)} control rows do not match a {grid.n_steps}-step grid")
    return ControlTrajectory(grid, vals)


def cmd_validate(args) -> int:
    if args.n is not None and args.n < 1:
        raise ConfigError("--n must be at least 1")
    doc, out = _prepare(args)
    spec = cfgmod.build_spec(doc)
    params = cfgmod.build_solver(doc)
    grid = TimeGrid(spec.t_i, spec.t_f, doc["run"]["n_steps"])
    ups = None
    if args.control:
        u = read_control_csv(Path(args.control), grid)
    else:
        det = _deterministic(doc)
        u, ups = det.u_star, det.upsilon
    xs = integrate(spec.x_i, u.values, grid, spec)
    est = estimate_probability(u, spec, params, doc["run"]["n_samples"], doc["run"]["seed"], upsilon0=ups,
                               workers=args.workers)
    est.write_csv(out / "validation.csv")
    summary = {
        "p_hat": _g(est.p_hat),
        "stderr": _g(est.stderr),
        "pi_f": _g(est.pi_f),
        "n_samples": est.n_samples,
        "n_hits": est.n_hits,
        "n_diverged": est.n_diverged,
        "nominal_deviation": _g(float(np.linalg.norm(xs[-1, :6] - spec.x_f))),
        "mean_recourse_consumption_beyond_reference": _g(est.mean_recourse_consumption),
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sample_failures(args) -> int:
    if args.n is not None and args.n < 1:
        raise ConfigError("--n must be at least 1")
    doc, out = _prepare(args)
    spec = cfgmod.build_spec(doc)
    rng = np.random.Generator(np.random.PCG64(doc["run"]["seed"]))
    scens = sample_many(spec.failure_law, spec.t_f, doc["run"]["n_samples"], rng)
    with open(out / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("index", "t_p", "t_d"))
        for i, s in enumerate(scens):
            w.writerow([i, f"{s.t_p:.9g}", f"{s.t_d:.9g}"])
    if not args.no_plots:
        from robust_rendezvous import plots
        plots.failure_histogram(np.array([s.t_p for s in scens]), np.array([s.t_d for s in scens]),
                                out / "failures.png")
    print(out / "failures.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rendezvous", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, steps=True):
        p.add_argument("--config", help="JSON config (defaults to the reference mission)")
        p.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
        p.add_argument("--seed", type=int)
        if steps:
            p.add_argument("--steps", type=int, help="RK4 steps on [t_i, t_f]")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("solve-det", help="fuel-optimal deterministic rendezvous")
    common(p)
    p.set_defaults(func=cmd_solve_det)

    p = sub.add_parser("solve-stoch", help="failure-robust control at one probability level")
    common(p)
    p.add_argument("--p", type=float, help="required success probability")
    p.add_argument("--iters", type=int)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.set_defaults(func=cmd_solve_stoch)

    p = sub.add_parser("sweep", help="solve-stoch over several probability levels")
    common(p)
    p.add_argument("--p", type=float, nargs="+", help="probability levels")
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="Monte Carlo success probability of a control")
    common(p)
    p.add_argument("--control", help="CSV with q, s, w columns (default: deterministic optimum)")
    p.add_argument("--n", type=int, help="number of failure samples")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sample-failures", help="draw failure scenarios")
    common(p, steps=False)
    p.add_argument("--n", type=int, help="number of samples")
    p.set_defaults(func=cmd_sample_failures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
