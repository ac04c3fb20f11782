"""Command-line interface: ``braggsim <command> [options]``.

Exit status is 0 on success, 1 for usage or input errors and 2 when a
numerical failure (non-finite propagation, failed optimization step) stops
the run. Tabular output is CSV, pulses and configurations are JSON.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ladder import OMEGA_K_SI, LadderParams
from .propagate import NumericalError, PropagationConfig, write_population_csv
from .pulses import DEFAULT_CORRECTION, ControlPulse, RapParams, calibration_sweep, tune_rap
from .robustness import ContrastLandscape, LandscapeConfig, improvement_map, scan_landscape
from .scheme import (build_oct_scheme, build_rabi_scheme, build_rap_scheme, contrast, fringe_fit,
                     fringe_scan, run_scheme)

THREADS_ENV = "BRAGGSIM_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("braggsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """A subcommand with its options; round-trips through JSON."""

    command: str
    options: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict) or "command" not in data:
            raise UsageError(f"config {path} must be an object with a 'command' key")
        opts = data.get("options", {})
        if not isinstance(opts, dict):
            raise UsageError(f"config {path}: 'options' must be an object")
        return cls(data["command"], opts)


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            return np.round(np.arange(start, stop + step / 2, step), 10)
        vals = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}; use start:stop:step or a,b,c")
    if not len(vals):
        raise argparse.ArgumentTypeError("grid is empty")
    return vals


def _positive(kind):
    def check(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v

    return check


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="braggsim", description="Bragg-ladder interferometer simulations.")
    p.add_argument("--config", help="JSON run configuration supplying defaults")
    p.add_argument("--save-config", help="write the effective configuration to this JSON file")
    p.add_argument("--threads", type=_positive(int), default=_default_threads(),
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--si", action="store_true", help="annotate outputs with SI time units (Rb-87)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def scheme_args(sp, dt=0.01):
        sp.add_argument("--scheme", choices=("rabi", "rap", "oct"), default="rabi")
        sp.add_argument("--dt", type=_positive(float), default=dt, help="pulse grid step")
        sp.add_argument("--correction", type=_positive(float), default=DEFAULT_CORRECTION)
        sp.add_argument("--split", help="split pulse file (oct scheme)")
        sp.add_argument("--swap", help="swap pulse file (oct scheme)")

    s = sub.add_parser("simulate", help="run one scheme and report final populations")
    scheme_args(s)
    s.add_argument("--mu", type=_positive(float), default=1.0)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--phi", type=float, default=0.0)
    s.add_argument("--trajectory", help="write populations versus time to this CSV")

    s = sub.add_parser("fringe", help="final populations versus differential phase")
    scheme_args(s)
    s.add_argument("--mu", type=_positive(float), default=1.0)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--n-phases", type=_positive(int), default=32)
    s.add_argument("--out", default="fringe.csv")

    s = sub.add_parser("scan", help="Monte-Carlo contrast landscape")
    scheme_args(s, dt=0.1)
    s.add_argument("--samples", type=_positive(int), default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mu-grid", type=parse_grid, default=parse_grid("0.90:1.10:0.02"))
    s.add_argument("--dbeta-grid", type=parse_grid, default=parse_grid("0:0.40:0.02"))
    s.add_argument("--method", choices=("pooled", "direct"), default="pooled")
    s.add_argument("--phi-min", type=float, default=math.pi)
    s.add_argument("--out", default="landscape.csv")

    s = sub.add_parser("diff", help="contrast improvement between two landscapes")
    s.add_argument("baseline")
    s.add_argument("improved")
    s.add_argument("--out", default="improvement.csv")

    s = sub.add_parser("optimize", help="ensemble Krotov optimization of one pulse")
    s.add_argument("--target", choices=("split", "swap", "amplify", "deamplify"), required=True)
    s.add_argument("--ensemble-sigma", type=_nonneg, default=0.025)
    s.add_argument("--batches", type=_positive(int), default=8)
    s.add_argument("--batch-size", type=_positive(int), default=8)
    s.add_argument("--iters-per-batch", type=_positive(int), default=300)
    s.add_argument("--max-cycles", type=_positive(int), default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dt", type=_positive(float), default=0.05)
    s.add_argument("--guess", help="starting pulse file (default: analytic pulse)")
    s.add_argument("--omega-max", type=_positive(float), default=1.5)
    s.add_argument("--spectral-width", type=_positive(float), default=10.0)
    s.add_argument("--lambda-a", type=_positive(float), default=None)
    s.add_argument("--out", default="pulse.json")
    s.add_argument("--record", default="optimization_record.csv")

    s = sub.add_parser("tune-rap", help="Nelder-Mead tuning of the RAP pulse")
    defaults = RapParams()
    s.add_argument("--alpha", type=float, default=defaults.alpha)
    s.add_argument("--t-c", type=_positive(float), default=defaults.t_c)
    s.add_argument("--t-r", type=_positive(float), default=defaults.t_r)
    s.add_argument("--peak", type=_positive(float), default=defaults.peak)
    s.add_argument("--n-start", type=int, default=defaults.n_start)
    s.add_argument("--n-end", type=int, default=defaults.n_end)
    s.add_argument("--dt", type=_positive(float), default=0.05)
    s.add_argument("--max-evals", type=_positive(int), default=2000)
    s.add_argument("--out", default="rap_params.json")

    s = sub.add_parser("calibrate", help="ground-state error of the pulse train versus amplitude")
    s.add_argument("--scales", type=parse_grid, default=parse_grid("0.97:1.05:0.0025"))
    s.add_argument("--dt", type=_positive(float), default=0.05)
    s.add_argument("--out", default="calibration.csv")
    p.commands = sub.choices
    return p


def _load_pulse(path) -> ControlPulse:
    try:
        return ControlPulse.load(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read pulse file {path}: {exc}") from None


def _scheme(args):
    if args.scheme == "rabi":
        return build_rabi_scheme(args.correction, dt=args.dt)
    if args.scheme == "rap":
        return build_rap_scheme(correction=args.correction, dt=args.dt)
    if not (args.split and args.swap):
        raise UsageError("the oct scheme needs --split and --swap pulse files")
    try:
        return build_oct_scheme(_load_pulse(args.split), _load_pulse(args.swap), dt=args.dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def cmd_simulate(args):
    seq = _scheme(args)
    params = LadderParams(mu=args.mu, beta=args.beta)
    cfg = PropagationConfig(dt=args.dt, store_trajectory=bool(args.trajectory))
    run = run_scheme(seq, params, args.phi, cfg)
    if args.trajectory:
        write_population_csv(args.trajectory, run.times, run.populations, params.levels, si=args.si)
    st = run.state
    line = (f"{seq.name}: T={seq.duration:.6g} P0={st.population(0):.6f} "
            f"P1={st.population(1):.6f} guard={run.guard_population:.3g}")
    if args.si:
        line += f" T_seconds={seq.duration / OMEGA_K_SI:.6g}"
    if run.leaked:
        line += " LEAKED"
    print(line)


def cmd_fringe(args):
    seq = _scheme(args)
    params = LadderParams(mu=args.mu, beta=args.beta)
    phis = 2 * np.pi * np.arange(args.n_phases) / args.n_phases
    res = fringe_scan(seq, params, phis)
    _write_rows(args.out, ("phi", "p0", "p1", "leakage"),
                (tuple(float(x) for x in r) for r in zip(res.phis, res.p0, res.p1, res.leakage)))
    _, _, r2 = fringe_fit(res.phis, res.p0)
    c = contrast(res.p0.max(), res.p0.min())
    print(f"{seq.name}: contrast={c:.6f} P0(0)={res.p0[0]:.6f} fit_r2={r2:.6f} -> {args.out}")


def cmd_scan(args):
    seq = _scheme(args)
    try:
        config = LandscapeConfig(mu_grid=args.mu_grid, dbeta_grid=args.dbeta_grid,
                                 n_samples=args.samples, seed=args.seed, phi_min=args.phi_min,
                                 method=args.method, workers=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    land = scan_landscape(seq, config)
    land.to_csv(args.out)
    i = int(np.argmin(np.abs(land.mu - 1.0)))
    print(f"{seq.name}: c_bar(mu={land.mu[i]:g}, dbeta={land.dbeta[0]:g})={land.c_bar[i, 0]:.6f} "
          f"min c_bar={np.nanmin(land.c_bar):.4f} -> {args.out}")


def cmd_diff(args):
    try:
        a = ContrastLandscape.from_csv(args.baseline)
        b = ContrastLandscape.from_csv(args.improved)
        imp = improvement_map(a, b)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for i, m in enumerate(imp.mu):
        for j, d in enumerate(imp.dbeta):
            rows.append((float(m), float(d), float(imp.delta[i, j]), float(imp.stderr[i, j])))
    _write_rows(args.out, ("mu", "dbeta", "delta_c", "stderr"), rows)
    mu, db = imp.argmax
    print(f"max gain={imp.max_gain:.4f} at mu={mu:g} dbeta={db:g}; max loss={imp.max_loss:.4f}"
          f" -> {args.out}")


def cmd_optimize(args):
    from .krotov import (TARGETS, ControlConstraints, EnsembleSpec, KrotovStepError, Schedule,
                         initial_guess, optimize)

    guess = _load_pulse(args.guess) if args.guess else initial_guess(args.target, args.dt)
    spec = EnsembleSpec(batch_size=args.batch_size, n_batches=args.batches,
                        sigma_mu=args.ensemble_sigma, sigma_beta=args.ensemble_sigma,
                        seed=args.seed)
    cons = ControlConstraints(omega_max=args.omega_max, spectral_width=args.spectral_width,
                              lambda_a=args.lambda_a)
    sched = Schedule(iters_per_batch=args.iters_per_batch, max_cycles=args.max_cycles)
    try:
        best, record = optimize(guess, spec, TARGETS[args.target](), cons, sched)
    except KrotovStepError as exc:
        raise NumericalError(str(exc)) from None
    if args.si:
        best.meta["omega_k_si"] = OMEGA_K_SI
    best.save(args.out)
    record.to_csv(args.record)
    j = best.meta["ensemble_infidelity"]
    print(f"{args.target}: ensemble infidelity={j:.4g} converged={record.converged} "
          f"max|omega|={np.abs(best.omega).max():.4f} -> {args.out}")


def cmd_tune_rap(args):
    try:
        start = RapParams(alpha=args.alpha, t_c=args.t_c, t_r=args.t_r, peak=args.peak,
                          n_start=args.n_start, n_end=args.n_end)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = tune_rap(start, dt=args.dt, max_evals=args.max_evals)
    Path(args.out).write_text(json.dumps({**asdict(res.params), "fidelity": res.fidelity},
                                         indent=2) + "\n")
    p = res.params
    print(f"rap: fidelity={res.fidelity:.6f} t_c={p.t_c:.4f} t_r={p.t_r:.4f} peak={p.peak:.4f} "
          f"evals={res.n_evals} -> {args.out}")


def cmd_calibrate(args):
    table, best = calibration_sweep(args.scales, dt=args.dt)
    _write_rows(args.out, ("scale", "ground_state_error"),
                ((float(s), float(e)) for s, e in table))
    print(f"calibration: argmin scale={best:.4f} error={table[:, 1].min():.3g} -> {args.out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fringe": cmd_fringe,
    "scan": cmd_scan,
    "diff": cmd_diff,
    "optimize": cmd_optimize,
    "tune-rap": cmd_tune_rap,
    "calibrate": cmd_calibrate,
}


def parse_args(argv):
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = RunConfig.from_json(known.config)
        if cfg.command not in COMMANDS:
            raise UsageError(f"config names unknown command {cfg.command!r}")
        sub = parser.commands[cfg.command]
        dests = {a.dest: a for a in sub._actions}
        for key, value in cfg.options.items():
            dest = key.replace("-", "_")
            if dest not in dests:
                raise UsageError(f"config option {key!r} is not valid for {cfg.command}")
            action = dests[dest]
            if action.type is not None and isinstance(value, str):
                value = action.type(value)
            elif action.type is parse_grid and isinstance(value, list):
                value = np.asarray(value, dtype=float)
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config option {key!r}: {value!r} not in {sorted(action.choices)}")
            sub.set_defaults(**{dest: value})
        if not any(a in COMMANDS for a in argv):
            argv = list(argv) + [cfg.command]
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("braggsim: a command is required (" + ", ".join(COMMANDS) + ")")
    return args


def _effective_config(args) -> RunConfig:
    skip = {"command", "config", "save_config", "threads", "si", "verbose"}
    opts = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        opts[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return RunConfig(args.command, opts)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.save_config:
        _effective_config(args).to_json(args.save_config)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
