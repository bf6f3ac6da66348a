"""Command line interface.

One invocation runs one job against one config::

    psictl solve-koopman --preset vdp --output coeffs.csv
    psictl solve-hjb     --config run.cfg
    psictl solve-fk      --preset vdp --npaths 20000
    psictl simulate      --preset vdp --controller zero --seed 3
    psictl compare-psi   --preset vdp

Exit codes: 0 success, 2 configuration or validation problem,
3 numerical failure, 4 file I/O problem. Every output CSV starts with
the resolved configuration as ``#`` comment lines, so a rerun of the
same job reproduces the file byte for byte.
"""

import argparse
import sys

import numpy as np

from .config import load_config, parse_config_text, provenance_lines, build_config
from .exceptions import NumericalError, ValidationError
from .hjb import HjbPolicy, write_psi_csv
from .koopman import KoopmanPolicy, eval_psi_grid, write_coefficients_csv
from .pathintegral import PathIntegralEstimator, write_fk_csv
from .simulate import Controller, ZeroPolicy, closed_loop_run

_OUTPUT_DEFAULTS = {
    "solve-koopman": "koopman_coeffs.csv",
    "solve-hjb": "hjb_psi.csv",
    "solve-fk": "fk_estimates.csv",
    "simulate": "trajectory.csv",
    "compare-psi": "psi_compare.csv",
}


def _load(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    elif args.preset:
        text = f"preset = {args.preset}"
    else:
        raise ValidationError("one of --config or --preset is required")
    entries = parse_config_text(text)
    for key, value in _cli_overrides(args).items():
        entries[key] = value
    return build_config(entries)


def _cli_overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "npaths", None) is not None:
        out["n_paths"] = str(args.npaths)
    if getattr(args, "controller", None) is not None:
        out["controller"] = args.controller
    if getattr(args, "duration", None) is not None:
        out["duration"] = repr(args.duration)
    if getattr(args, "stride", None) is not None:
        out["stride"] = str(args.stride)
    return out


def _provenance(cfg, command):
    return [f"psictl {command}"] + provenance_lines(cfg)


def _fit_koopman(cfg):
    policy = KoopmanPolicy(
        cutoff=cfg.require("cutoff"),
        nz_levels=cfg.require("nz_levels"),
        dt=cfg.require("ode_dt"),
        psi_floor=cfg.require("psi_floor"),
    )
    return policy.fit(cfg.problem)

def _fit_hjb(cfg):
    spacing = cfg.require("grid_spacing")
    policy = HjbPolicy(
        lower=cfg.require("grid_lower"),
        upper=cfg.require("grid_upper"),
        spacing=spacing if spacing.size > 1 else float(spacing[0]),
        dt=cfg.require("pde_dt"),
        cfl_safety=cfg.require("cfl_safety"),
        psi_floor=cfg.require("psi_floor"),
    )
    return policy.fit(cfg.problem)


def cmd_solve_koopman(args):
    cfg = _load(args)
    policy = _fit_koopman(cfg)
    out = args.output or _OUTPUT_DEFAULTS["solve-koopman"]
    write_coefficients_csv(policy.coeffs_, out, _provenance(cfg, "solve-koopman"))
    shape = policy.coeffs_.values.shape
    print(f"wrote {out}: lattice {shape}, psi coefficients at t = {cfg.problem.t_start}")
    return 0


def cmd_solve_hjb(args):
    cfg = _load(args)
    policy = _fit_hjb(cfg)
    out = args.output or _OUTPUT_DEFAULTS["solve-hjb"]
    write_psi_csv(policy.field_, out, _provenance(cfg, "solve-hjb"))
    shape = policy.field_.values.shape
    print(f"wrote {out}: grid {shape}, psi at t = {cfg.problem.t_start}")
    return 0


def cmd_solve_fk(args):
    cfg = _load(args)
    probes = cfg.require("probes")
    est = PathIntegralEstimator(
        n_paths=cfg.require("n_paths"),
        dt=cfg.require("mc_dt"),
        seed=cfg.require("seed"),
    ).fit(cfg.problem)
    estimates = est.estimate(probes)
    out = args.output or _OUTPUT_DEFAULTS["solve-fk"]
    t0 = cfg.problem.t_start
    write_fk_csv(probes, [t0] * len(estimates), estimates, out,
                 _provenance(cfg, "solve-fk"))
    for row, e in zip(probes, estimates):
        print(
            f"psi({', '.join(repr(float(c)) for c in row)}, t={t0!r}) "
            f"= {e.mean:.6e} +- {e.stderr:.2e} ({e.n_paths} paths)"
        )
    print(f"wrote {out}")
    return 0


def cmd_simulate(args):
    cfg = _load(args)
    kind = cfg.require("controller")
    if kind == "koopman":
        policy = _fit_koopman(cfg)
    elif kind == "hjb":
        policy = _fit_hjb(cfg)
    else:
        policy = ZeroPolicy(cfg.problem.n_inputs)
    controller = Controller(
        policy=policy,
        clamp_lower=cfg.require("clamp_lower"),
        clamp_upper=cfg.require("clamp_upper"),
    )
    traj = closed_loop_run(
        cfg.problem,
        controller,
        duration=cfg.require("duration"),
        dt=cfg.require("sim_dt"),
        rng=cfg.require("seed"),
        x0=cfg.require("x0"),
    )
    out = args.output or _OUTPUT_DEFAULTS["simulate"]
    traj.to_csv(
        out,
        stride=cfg.require("stride"),
        active_inputs=cfg.problem.active_inputs,
        provenance=_provenance(cfg, "simulate"),
    )
    final = ", ".join(f"{v:.4f}" for v in traj.states[-1])
    print(
        f"wrote {out}: {len(traj.controls)} steps with controller '{kind}', "
        f"final state ({final}), {traj.underflow_steps} underflow step(s)"
    )
    return 0


def cmd_compare_psi(args):
    cfg = _load(args)
    koopman = _fit_koopman(cfg)
    fd = _fit_hjb(cfg)
    lo = cfg.require("clamp_lower")
    hi = cfg.require("clamp_upper")

    grid = fd.field_.grid
    axes = grid.axes()
    keep = [
        (ax >= lo[i] - 1e-12) & (ax <= hi[i] + 1e-12)
        for i, ax in enumerate(axes)
    ]
    sub_axes = [ax[k] for ax, k in zip(axes, keep)]
    psi_fd = fd.field_.values[np.ix_(*keep)]
    psi_ko = eval_psi_grid(
        koopman.coeffs_, sub_axes, cfg.problem.terminal_cost, cfg.problem.lam
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(psi_ko - psi_fd) / np.abs(psi_fd)
    rel = np.where((psi_fd == 0.0) & (psi_ko == 0.0), 0.0, rel)

    out = args.output or _OUTPUT_DEFAULTS["compare-psi"]
    mesh = np.stack(np.meshgrid(*sub_axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, grid.dim)
    header = [f"x{i + 1}" for i in range(grid.dim)]
    header += ["psi_fd", "psi_koopman", "rel_err"]
    with open(out, "w", encoding="utf-8") as fh:
        for line in _provenance(cfg, "compare-psi"):
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row, a, b, r in zip(flat, psi_fd.ravel(), psi_ko.ravel(), rel.ravel()):
            fh.write(
                ",".join(repr(float(c)) for c in row)
                + f",{float(a)!r},{float(b)!r},{float(r)!r}\n"
            )
    print(
        f"max_rel_err={float(np.max(rel)):.6f} "
        f"mean_rel_err={float(np.mean(rel)):.6f} "
        f"n_points={rel.size}"
    )
    print(f"wrote {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="psictl",
        description="Solvers and simulation for desirability-based stochastic control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--preset", help="named built-in config (vdp)")
        p.add_argument("--output", help="output CSV path")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("solve-koopman", help="coefficient-ODE solve; writes the lattice tensor")
    common(p)
    p.set_defaults(func=cmd_solve_koopman)

    p = sub.add_parser("solve-hjb", help="finite-difference solve; writes grid psi")
    common(p)
    p.set_defaults(func=cmd_solve_hjb)

    p = sub.add_parser("solve-fk", help="Monte Carlo psi estimates at the probe states")
    common(p)
    p.add_argument("--npaths", type=int, help="override the config n_paths")
    p.set_defaults(func=cmd_solve_fk)

    p = sub.add_parser("simulate", help="closed-loop run of the true system")
    common(p)
    p.add_argument("--controller", choices=("koopman", "hjb", "zero"),
                   help="override the config controller")
    p.add_argument("--duration", type=float, help="override the config duration")
    p.add_argument("--stride", type=int, help="override the CSV export stride")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare-psi", help="koopman vs finite-difference psi on the clamp box")
    common(p)
    p.set_defaults(func=cmd_compare_psi)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
