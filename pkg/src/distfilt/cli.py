"""Batch front end: validate a scenario, synthesize gains, verify them in
closed loop, and export figure-ready data.

Commands
--------
``distfilt check CONFIG``
    Parse the scenario and run the structural checks.
``distfilt synth CONFIG --mode {central,distributed} [--beta fixed:V|opt]``
    Synthesize gains and write them (plus iteration traces) to a run
    directory.
``distfilt verify CONFIG GAINS_DIR``
    Run the decay and disturbance-battery simulations against stored
    gains.
``distfilt export-figures RUN_DIR``
    Convert a stored iteration trace into two-column figure CSVs.

Exit codes: 0 success, 1 validation failure, 2 infeasibility, 3 runtime
error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .distributed import (
    ConsensusProtocol,
    InitializationError,
    RunOptions,
    SynthesisError,
    run,
)
from .lmis import Gains, InfeasibleError, synthesize_central
from .model import ModelError, check_assumptions, pad_disturbances
from .simulate import Scenario, disturbance_signals, hinf_metrics, integrate

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_RUNTIME = 3


def _save_matrix(path, m):
    with open(path, "w") as fh:
        for row in np.atleast_2d(np.asarray(m, dtype=float)):
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def _load_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def _prepare_models(cfg):
    plant, nodes = cfg.plant, cfg.nodes
    if cfg.pad_eps:
        report = check_assumptions(plant, nodes, cfg.graph)
        if not all(report.controllable):
            plant, nodes = pad_disturbances(plant, nodes, cfg.pad_eps)
    return plant, nodes


def _write_report(out_dir, lines):
    path = os.path.join(out_dir, "report.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def cmd_check(args):
    cfg = load_config(args.config)
    plant, nodes = _prepare_models(cfg)
    report = check_assumptions(plant, nodes, cfg.graph)
    lines = ["scenario check", f"config: {args.config}", ""]
    lines += report.lines()
    lines.append("")
    lines.append("RESULT: " + ("pass" if report.ok else "FAIL"))
    for line in lines:
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_report(args.out, lines)
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _store_gains(out_dir, gains, beta, extra=()):
    gdir = os.path.join(out_dir, "gains")
    os.makedirs(gdir, exist_ok=True)
    for k, (K, L) in enumerate(zip(gains.K, gains.L), start=1):
        _save_matrix(os.path.join(gdir, f"K_{k}.csv"), K)
        _save_matrix(os.path.join(gdir, f"L_{k}.csv"), L)
    _save_matrix(os.path.join(gdir, "P.csv"), gains.P)
    _save_matrix(os.path.join(gdir, "beta.csv"), np.array([[beta]]))
    for name, m in extra:
        _save_matrix(os.path.join(gdir, name), m)
    return gdir


def _load_gains(gains_dir, n_nodes):
    try:
        K = [_load_matrix(os.path.join(gains_dir, f"K_{k}.csv")) for k in range(1, n_nodes + 1)]
        L = [_load_matrix(os.path.join(gains_dir, f"L_{k}.csv")) for k in range(1, n_nodes + 1)]
        P = _load_matrix(os.path.join(gains_dir, "P.csv"))
        beta = float(_load_matrix(os.path.join(gains_dir, "beta.csv"))[0, 0])
    except OSError as exc:
        raise ConfigError(f"gains directory incomplete: {exc}") from None
    return Gains(K=K, L=L, P=P), beta


def _write_meta(out_dir, **kv):
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        for key, value in kv.items():
            fh.write(f"{key} = {value}\n")


def _read_meta(run_dir):
    meta = {}
    path = os.path.join(run_dir, "meta.txt")
    if os.path.exists(path):
        for line in open(path):
            if "=" in line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    return meta


def cmd_synth(args):
    cfg = load_config(args.config)
    if args.beta:
        if args.beta == "opt":
            cfg.beta_mode = "optimize"
        elif args.beta.startswith("fixed:"):
            cfg.beta_mode = "fixed"
            cfg.beta_value = float(args.beta.split(":", 1)[1])
        else:
            raise ConfigError(f"--beta must be 'fixed:V' or 'opt', got {args.beta!r}")
    plant, nodes = _prepare_models(cfg)
    report = check_assumptions(plant, nodes, cfg.graph)
    if not report.ok:
        print("structural checks failed:")
        for line in report.lines():
            print("  " + line)
        return EXIT_VALIDATION

    out_dir = args.out or "run"
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"synthesis ({args.mode} mode)", f"config: {args.config}", ""]

    if args.mode == "central":
        fixed = cfg.beta_value if cfg.beta_mode == "fixed" else None
        result = synthesize_central(plant, nodes, cfg.graph, cfg.params, fixed_beta=fixed)
        beta = result.beta
        gains = result.gains
        lines.append(f"performance weight beta: {beta:.10g}")
        lines.append(f"certified worst block eigenvalue: {result.worst_violation:.3e}")
        lines.append(f"solver iterations (total): {result.iterations}")
    else:
        opts = RunOptions(
            c=cfg.c,
            max_iter=cfg.max_iter,
            tol=cfg.tol,
            mode=cfg.mode,
            fixed_beta=cfg.beta_value if cfg.beta_mode == "fixed" else None,
            beta0=cfg.beta_value,
            consensus=ConsensusProtocol.parse(cfg.consensus),
            log_messages=args.log_messages,
        )
        result = run(plant, nodes, cfg.graph, cfg.params, opts)
        beta = result.trace.beta_ave[-1]
        gains = result.gains
        result.trace.to_csv(os.path.join(out_dir, "trace.csv"))
        if result.message_log is not None:
            result.message_log.to_csv(os.path.join(out_dir, "messages.csv"))
        lines.append(f"iterations: {result.iterations} (converged: {result.converged})")
        lines.append(f"final disagreement error: {result.trace.error[-1]:.6g}")
        lines.append(f"final average beta: {beta:.10g}")
        lines.append(f"max feasibility violation: {max(result.trace.max_violation):.3e}")
        lines.append(f"gain bound satisfied at every iterate: {all(result.trace.bounds_ok)}")

    lines.append("")
    lines.append("consensus gain norms: " + " ".join(f"{np.linalg.norm(K):.4g}" for K in gains.K))
    lines.append("injection gain norms: " + " ".join(f"{np.linalg.norm(L):.4g}" for L in gains.L))
    gdir = _store_gains(out_dir, gains, beta)
    _write_meta(
        out_dir,
        mode=args.mode,
        beta_mode=cfg.beta_mode,
        beta=f"{beta:.17g}",
        config=os.path.abspath(args.config),
    )
    lines.append(f"gains written to: {gdir}")
    _write_report(out_dir, lines)
    for line in lines:
        print(line)
    return EXIT_OK


def _battery_seeds(seed, count, offset):
    return [seed + offset + 7919 * i for i in range(count)]


def cmd_verify(args):
    cfg = load_config(args.config)
    plant, nodes = _prepare_models(cfg)
    gains, beta = _load_gains(args.gains, cfg.graph.n_nodes)
    for K, L, node in zip(gains.K, gains.L, nodes):
        if K.shape != (plant.n, plant.n) or L.shape != (plant.n, node.r):
            raise ConfigError(
                f"gain matrices for node {node.index} have wrong shape "
                f"(K {K.shape}, L {L.shape})"
            )
    out_dir = args.out or "verify"
    os.makedirs(out_dir, exist_ok=True)
    sim = cfg.sim
    rows = []
    lines = ["closed-loop verification", f"gains: {args.gains}", f"beta: {beta:.6g}", ""]
    all_ok = True

    # (i) zero-disturbance decay from seeded initial states
    for i, s in enumerate(_battery_seeds(cfg.seed, sim.decay_runs, 401)):
        x0 = np.random.default_rng(s).standard_normal(plant.n)
        x0 /= np.linalg.norm(x0)
        scn = Scenario(
            plant, nodes, cfg.graph, gains, x0=x0, horizon=sim.decay_horizon, dt=sim.dt
        )
        trace = integrate(scn)
        final = float(np.max(np.linalg.norm(trace.errors[:, -1, :], axis=1)))
        ok = final <= 1e-3 * np.linalg.norm(x0)
        all_ok &= ok
        rows.append(("decay", s, final, 1e-3, ok))
        lines.append(f"decay run {i + 1}: max final error {final:.3e} -> {'pass' if ok else 'FAIL'}")

    # (ii) H-infinity battery with seeded finite-energy disturbances
    for i, s in enumerate(_battery_seeds(cfg.seed, sim.battery, 101)):
        rng = np.random.default_rng(s)
        x0 = rng.standard_normal(plant.n)
        x0 /= np.linalg.norm(x0)
        xi = disturbance_signals(sim.xi, seed=s + 1, dim=plant.m)
        etas = [
            disturbance_signals(sim.eta, seed=s + 2 + k, dim=node.s)
            for k, node in enumerate(nodes)
        ]
        scn = Scenario(
            plant,
            nodes,
            cfg.graph,
            gains,
            x0=x0,
            horizon=sim.horizon,
            dt=sim.dt,
            xi=xi,
            etas=etas,
        )
        trace = integrate(scn)
        metrics = hinf_metrics(trace, gains.P, beta)
        all_ok &= metrics.passed
        rows.append(("hinf", s, metrics.consensus_ratio, metrics.gamma * 1.05, metrics.passed))
        lines.append(
            f"battery run {i + 1}: consensus ratio {metrics.consensus_ratio:.3e} "
            f"(bound {metrics.gamma * 1.05:.3e}, error ratio {metrics.error_ratio:.3e}) "
            f"-> {'pass' if metrics.passed else 'FAIL'}"
        )

    with open(os.path.join(out_dir, "battery.csv"), "w") as fh:
        fh.write("kind,seed,value,bound,pass\n")
        for kind, s, value, bound, ok in rows:
            fh.write(f"{kind},{s},{value:.17g},{bound:.17g},{int(ok)}\n")
    lines.append("")
    lines.append("RESULT: " + ("pass" if all_ok else "FAIL"))
    _write_report(out_dir, lines)
    for line in lines:
        print(line)
    return EXIT_OK if all_ok else EXIT_VALIDATION


def cmd_export_figures(args):
    trace_path = os.path.join(args.run, "trace.csv")
    if not os.path.exists(trace_path):
        print(f"no trace.csv under {args.run}", file=sys.stderr)
        return EXIT_VALIDATION
    rows = np.loadtxt(trace_path, delimiter=",", skiprows=1, ndmin=2)
    out_dir = args.out or args.run
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "fig1.csv"), "w") as fh:
        fh.write("iteration,error\n")
        for row in rows:
            fh.write(f"{int(row[0])},{row[1]:.17g}\n")
    meta = _read_meta(args.run)
    variable = meta.get("beta_mode") == "optimize" or (
        rows.shape[0] > 1 and not np.allclose(rows[:, 2], rows[0, 2])
    )
    written = ["fig1.csv"]
    if variable:
        with open(os.path.join(out_dir, "fig2.csv"), "w") as fh:
            fh.write("iteration,error,beta_ave\n")
            for row in rows:
                fh.write(f"{int(row[0])},{row[1]:.17g},{row[2]:.17g}\n")
        written.append("fig2.csv")
    print("wrote " + ", ".join(written) + f" under {out_dir}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distfilt",
        description="distributed H-infinity estimator synthesis and validation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a scenario file")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("synth", help="synthesize estimator gains")
    p.add_argument("config")
    p.add_argument("--mode", choices=("central", "distributed"), default="distributed")
    p.add_argument("--beta", default=None, help="'fixed:V' or 'opt' (overrides config)")
    p.add_argument("--out", default=None)
    p.add_argument("--log-messages", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("verify", help="validate stored gains in closed loop")
    p.add_argument("config")
    p.add_argument("gains", help="directory with K_k.csv/L_k.csv/P.csv/beta.csv")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("export-figures", help="emit figure-ready CSVs from a run")
    p.add_argument("run")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_export_figures)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfeasibleError, InitializationError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SynthesisError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
