"""Command-line front end.

Subcommands ``simulate``, ``regret``, ``estimate`` and ``invariant-set`` read a
JSON config (see README) and write CSV/SVG artifacts into ``--out``. Every
output file starts with ``#`` header lines recording the command and seed, and
is written atomically through a temporary file in the target directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import History
from .errors import ContractError, NonConvergenceError, PolicyFailure, StabilityError
from .estimation import EstimatorConfig, concentration_curve, estimate_path
from .policy import PolicyConfig, run, stream, ROLE_LEARNER, ROLE_REWARD
from .regret import cost_gap, geometric_grid, replicate, scaling_fit
from .scenarios import PRESETS, certificate_for, load_scenario
from .svgplot import line_plot


@dataclass(frozen=True)
class RunConfig:
    scenario: object
    policy: PolicyConfig
    T: int = 100
    replicates: int = 1
    seed: int = 0
    out: Path = Path("out")
    jobs: int = 1
    plot: bool = False
    compare: dict | None = None
    history: Path | None = None
    t_points: tuple | None = None

    def __post_init__(self):
        if self.T < 0:
            raise ContractError("T must be >= 0")
        if self.replicates < 1:
            raise ContractError("replicates must be >= 1")
        if self.jobs < 1:
            raise ContractError("jobs must be >= 1")


def _resolve(ref, base: Path):
    if isinstance(ref, str) and ref not in PRESETS:
        p = Path(ref)
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise ContractError(f"scenario file {str(p)!r} not found")
        return str(p)
    return ref


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the JSON config with command-line overrides."""
    raw: dict = {}
    base = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ContractError(f"config {args.config!r} not found")
        raw = json.loads(path.read_text())
        base = path.parent
    if args.scenario is not None:
        raw["scenario"] = args.scenario
    if args.T is not None:
        raw["T"] = args.T
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    seed = int(args.seed if args.seed is not None else raw.get("seed", 0))
    if seed < 0 or seed >= 2**64:
        raise ContractError("seed must be an unsigned 64-bit integer")
    policy = dict(raw.get("policy", {}))
    policy["seed"] = seed
    for k in ("solver", "estimator"):
        if k in raw and k not in policy:
            policy[k] = raw[k]
    history = args.history or raw.get("history")
    if history is not None:
        history = Path(history) if Path(history).is_absolute() or args.history else base / history
        if not history.exists():
            raise ContractError(f"history {str(history)!r} not found")
    return RunConfig(
        scenario=_resolve(raw.get("scenario", "example1"), base),
        policy=PolicyConfig.from_dict(policy),
        T=int(raw.get("T", 100)),
        replicates=int(raw.get("replicates", 1)),
        seed=seed,
        out=Path(args.out or raw.get("out", "out")),
        jobs=int(args.jobs if args.jobs is not None else raw.get("jobs", os.cpu_count() or 1)),
        plot=bool(args.plot or raw.get("plot", False)),
        compare=raw.get("compare"),
        history=history,
        t_points=tuple(raw["t_points"]) if raw.get("t_points") else None,
    )


# output helpers ------------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(command: str, cfg: RunConfig, scn_name: str, **extra) -> str:
    items = {"command": command, "scenario": scn_name, "seed": cfg.seed, "version": __version__, **extra}
    return "".join(f"# {k}={v}\n" for k, v in items.items())


def _num(v) -> str:
    v = float(v)
    return repr(v) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))


def _table(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(x if isinstance(x, str) else _num(x) for x in row))
    return "\n".join(lines) + "\n"


# commands ------------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    scn = load_scenario(cfg.scenario)
    cert = certificate_for(scn)
    hist, diag = run(
        scn, cert, cfg.policy, cfg.T, rng=stream(cfg.seed, 0, ROLE_LEARNER), reward_rng=stream(cfg.seed, 0, ROLE_REWARD)
    )
    hist.check(scn)
    hdr = _header("simulate", cfg, scn.name, mode=cfg.policy.mode, N=cfg.policy.N, T=cfg.T)
    write_atomic(cfg.out / "history.csv", hdr + hist.to_csv(scn.p))
    total = float(np.sum(diag.mean_rewards))
    print(f"seed={cfg.seed} steps={len(hist)} explorations={diag.explorations} expected_reward={float(total)!r}")
    if cfg.plot:
        xs, us, _ = hist.arrays()
        t = np.arange(len(xs))
        series = [{"name": f"x{i + 1}", "x": t, "y": xs[:, i]} for i in range(xs.shape[1])]
        series += [{"name": f"u{i + 1}", "x": t[:-1], "y": us[:, i]} for i in range(us.shape[1])]
        write_atomic(cfg.out / "history.svg", line_plot(series, title=f"{scn.name} closed loop", xlabel="t"))
    return 0


def _curve_rows(curve):
    lc = curve.learner_cost.mean(axis=0)
    oc = curve.oracle_cost.mean(axis=0)
    rz = curve.realized.mean(axis=0)
    return [(str(int(t)), m, s, r, a, b) for t, m, s, r, a, b in zip(curve.t_grid, curve.mean, curve.std_error, rz, lc, oc)]


def cmd_regret(cfg: RunConfig) -> int:
    scn = load_scenario(cfg.scenario)
    cert = certificate_for(scn)
    grid = geometric_grid(cfg.T)
    curve = replicate(scn, cert, cfg.policy, cfg.T, cfg.replicates, cfg.seed, jobs=cfg.jobs, t_grid=grid)
    hdr = _header("regret", cfg, scn.name, N=cfg.policy.N, c=cfg.policy.c, T=cfg.T, R=cfg.replicates)
    write_atomic(
        cfg.out / "regret_curve.csv",
        hdr
        + _table(
            ["t", "mean", "std_error", "realized_mean", "learner_cost_mean", "oracle_cost_mean"], _curve_rows(curve)
        ),
    )
    raw_rows = [[str(i)] + list(row) for i, row in enumerate(curve.per_replicate)]
    write_atomic(
        cfg.out / "regret_raw.csv", hdr + _table(["replicate"] + [f"t{int(t)}" for t in curve.t_grid], raw_rows)
    )
    msg = f"seed={cfg.seed} T={cfg.T} R={cfg.replicates} final_regret={float(curve.mean[-1])!r}"
    try:
        rep = scaling_fit(curve)
    except ContractError:
        rep = None
    if rep is not None:
        rows = [(str(int(t)), m, r, rm) for t, m, r, rm in zip(rep.t_grid, rep.mean, rep.rho, rep.rho_median)]
        write_atomic(
            cfg.out / "scaling.csv",
            hdr + f"# loglog_slope={float(rep.slope)!r}\n" + _table(["t", "mean", "rho", "rho_median"], rows),
        )
        msg += f" loglog_slope={float(rep.slope)!r}"
    write_atomic(
        cfg.out / "regret.svg",
        line_plot(
            [{"name": f"N={cfg.policy.N}", "x": curve.t_grid, "y": curve.mean, "band": curve.std_error}],
            title=f"Expected {cfg.policy.N}-step dynamic regret ({scn.name})",
            xlabel="T",
            ylabel="cumulative regret",
            meta={"seed": cfg.seed, "R": cfg.replicates},
        ),
    )
    if cfg.compare:
        other = replace(cfg.policy, **{k: v for k, v in cfg.compare.items() if k in ("N", "c", "mode", "refit_stride")})
        curve_b = replicate(scn, cert, other, cfg.T, cfg.replicates, cfg.seed, jobs=cfg.jobs, t_grid=grid)
        gap = cost_gap(curve, curve_b)
        rows = [(str(int(t)), m, s) for t, m, s in zip(gap.t_grid, gap.mean, gap.std_error)]
        hdr_b = hdr + f"# compare_N={other.N}\n"
        write_atomic(cfg.out / "cost_gap.csv", hdr_b + _table(["t", "mean", "std_error"], rows))
        write_atomic(
            cfg.out / "cost_gap.svg",
            line_plot(
                [{"name": f"N={cfg.policy.N} minus N={other.N}", "x": gap.t_grid, "y": gap.mean, "band": gap.std_error}],
                title="Difference of cumulative expected costs",
                xlabel="T",
                ylabel="cost difference",
                meta={"seed": cfg.seed, "R": cfg.replicates},
            ),
        )
        msg += f" cost_gap={float(gap.mean[-1])!r}"
    print(msg)
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    scn = load_scenario(cfg.scenario)
    if cfg.history is not None:
        hist = History.from_csv(cfg.history.read_text())
        source = str(cfg.history)
    else:
        cert = certificate_for(scn)
        hist, _ = run(
            scn, cert, cfg.policy, cfg.T, rng=stream(cfg.seed, 0, ROLE_LEARNER), reward_rng=stream(cfg.seed, 0, ROLE_REWARD)
        )
        source = "simulated"
    hist.check(scn)
    n_obs = len(hist)
    pts = [t for t in (cfg.t_points or geometric_grid(n_obs)) if 2 <= int(t) <= n_obs]
    if not pts:
        raise ContractError("history too short for estimation (need at least 2 rewards)")
    ests = estimate_path(scn, hist, pts, cfg.policy.estimator)
    hdr = _header("estimate", cfg, scn.name, history=source)
    p = scn.p
    rows = []
    for t, e in ests.items():
        err = float(np.linalg.norm(e.theta_hat - scn.theta_true))
        rows.append([str(t), *e.theta_hat, e.nll, *e.grid_best, str(e.refine_iterations), str(int(e.degenerate)), err])
    head = ["t"] + [f"theta_hat{i + 1}" for i in range(p)] + ["nll"] + [f"grid_best{i + 1}" for i in range(p)]
    head += ["refine_iterations", "degenerate", "error_norm"]
    write_atomic(cfg.out / "estimates.csv", hdr + _table(head, rows))
    curve = concentration_curve(scn, hist, {t: e.theta_hat for t, e in ests.items()})
    fit = f"# fit_a={curve.a!r}\n# fit_b={curve.b!r}\n# loglog_slope={curve.slope!r}\n"
    write_atomic(
        cfg.out / "concentration.csv",
        hdr + fit + _table(["t", "kl_per_step"], [(str(int(t)), v) for t, v in zip(curve.t, curve.values)]),
    )
    last = ests[max(ests)]
    print(f"seed={cfg.seed} t={max(ests)} theta_hat={[float(v) for v in last.theta_hat]} nll={float(last.nll)!r}")
    if cfg.plot and len(curve.t):
        write_atomic(
            cfg.out / "concentration.svg",
            line_plot(
                [{"name": "per-step trajectory KL", "x": curve.t, "y": curve.values}],
                title=f"Estimation diagnostics ({scn.name})",
                xlabel="t",
                meta={"seed": cfg.seed},
            ),
        )
    return 0


def cmd_invariant_set(cfg: RunConfig) -> int:
    scn = load_scenario(cfg.scenario)
    cert = certificate_for(scn)
    om = cert.omega
    lines = [f"scenario={scn.name}", f"seed={cfg.seed}"]
    if om.is_box:
        lo, hi = om.box_bounds()
        lines.append(f"omega_box_lo={[float(v) for v in lo]}")
        lines.append(f"omega_box_hi={[float(v) for v in hi]}")
    lines.append(f"constraints={om.n_constraints}")
    lines.append(f"residual_containment={cert.residual_containment!r}")
    lines.append(f"residual_input={cert.residual_input!r}")
    lines.append(f"iterations={cert.iterations}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    doc = {"seed": cfg.seed, "scenario": scn.name, "omega": om.to_json(), "gain_K": np.asarray(cert.gain_K).tolist()}
    doc.update(residual_containment=cert.residual_containment, residual_input=cert.residual_input)
    write_atomic(cfg.out / "omega.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "regret": cmd_regret,
    "estimate": cmd_estimate,
    "invariant-set": cmd_invariant_set,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lbmpc-lab", description="Learning-based MPC simulation laboratory.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--jobs", type=int, help="worker processes for replicates")
        sp.add_argument("--plot", action="store_true", help="also write SVG plots")
        sp.add_argument("--scenario", help="preset name or scenario JSON path")
        sp.add_argument("-T", "--T", dest="T", type=int, help="horizon (decisions at t = 0..T)")
        sp.add_argument("--replicates", type=int, help="number of replicates (regret)")
        sp.add_argument("--history", help="history CSV to estimate from")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (ContractError, StabilityError, NonConvergenceError, PolicyFailure, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
