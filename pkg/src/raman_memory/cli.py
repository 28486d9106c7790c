"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .experiments import (
    calibrate_kappa,
    calibrate_write,
    headline_report,
    read_pulse,
    reference_input,
    run_sweep,
)
from .grid_pulse import (
    ComplexEnvelope,
    envelope_from_csv,
    envelope_from_json,
    envelope_to_csv,
)
from .memory_dynamics import (
    SolverToleranceError,
    intensity_from_power,
    propagate_retrieval,
    propagate_storage,
)
from .optimal_control import shape_write_pulse
from .quantum_states import TruncationError, apply_memory_channel, coherent_state, uhlmann_fidelity
from .tomography import estimate_displacement, ml_reconstruct, shared_x_range, simulate_homodyne

log = logging.getLogger("raman_memory")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class InputError(ValueError):
    pass


def _read_envelope(path: str) -> ComplexEnvelope:
    with open(path) as fh:
        text = fh.read()
    try:
        if path.endswith(".json"):
            return envelope_from_json(text)
        return envelope_from_csv(text)
    except (ValueError, KeyError) as exc:
        raise InputError(f"cannot parse envelope file {path}: {exc}") from exc


class _Writer:
    """Writes result files tagged with the config hash and seed."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.output_dir
        self.tag = cfg.hash
        self.paths = []

    def path(self, stem: str, ext: str) -> str:
        return os.path.join(self.dir, f"{stem}_{self.tag}.{ext}")

    def json(self, stem: str, doc: dict) -> str:
        doc = dict(doc, **self.cfg.provenance())
        return self._write(self.path(stem, "json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def csv(self, stem: str, text: str) -> str:
        head = f"# config_hash={self.tag} seed={self.cfg.seed}\n"
        return self._write(self.path(stem, "csv"), head + text)

    def _write(self, path: str, text: str) -> str:
        os.makedirs(self.dir, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
        self.paths.append(path)
        return path


def _input(cfg: RunConfig, args) -> ComplexEnvelope:
    if getattr(args, "input", None):
        return _read_envelope(args.input)
    return reference_input(cfg.memory, cfg.control)


def _write_control(cfg: RunConfig, args) -> ComplexEnvelope:
    if getattr(args, "control", None):
        return _read_envelope(args.control)
    return calibrate_write(cfg.memory, cfg.control).write_pulse


def _store(cfg: RunConfig, args, out: _Writer):
    inp = _input(cfg, args)
    write = _write_control(cfg, args)
    res = propagate_storage(cfg.memory, write, inp)
    out.json(
        "store",
        {
            "params": cfg.memory.to_dict(),
            "eta_w": res.eta_w,
            "input_energy": inp.norm2,
            "write_energy": write.norm2,
            "adiabatic": res.adiabatic,
        },
    )
    out.csv("spin_wave", envelope_to_csv(res.spin_wave))
    out.csv("leak", envelope_to_csv(res.leak))
    return res


def cmd_store(cfg: RunConfig, args) -> int:
    res = _store(cfg, args, _Writer(cfg))
    print(f"eta_w = {res.eta_w:.6f}")
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig, args) -> int:
    out = _Writer(cfg)
    if args.spin:
        spin = _read_envelope(args.spin)
    else:
        spin = _store(cfg, args, out).spin_wave
    if args.read:
        read = _read_envelope(args.read)
    else:
        kappa = calibrate_kappa(cfg.memory, cfg.control)
        peak = float(intensity_from_power(cfg.control.read_power_mw, kappa))
        read = read_pulse(cfg.memory, cfg.control, "square", peak=peak)
    res = propagate_retrieval(cfg.memory, read, spin)
    out.json(
        "retrieve",
        {
            "params": cfg.memory.to_dict(),
            "eta_r": res.eta_r,
            "read_energy": read.norm2,
            "adiabatic": res.adiabatic,
        },
    )
    out.csv("retrieved", envelope_to_csv(res.output))
    out.csv("residual_spin", envelope_to_csv(res.residual_spin))
    print(f"eta_r = {res.eta_r:.6f}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args) -> int:
    inp = _input(cfg, args)
    c = cfg.control
    sol = shape_write_pulse(
        cfg.memory,
        inp,
        energy_budget=c.energy_budget,
        max_iter=c.max_iter,
        tol=c.tol,
        reg_weight=c.reg_weight,
        smooth_weight=c.smooth_weight,
        warm_start=c.warm_start,
    )
    out = _Writer(cfg)
    out.csv("control", envelope_to_csv(sol.write_pulse))
    out.json(
        "optimize",
        {
            "achieved_eta_w": sol.achieved_eta_w,
            "energy_budget": sol.energy_budget,
            "energy": sol.write_pulse.norm2,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "objective_history": [float(v) for v in sol.objective_history],
        },
    )
    print(f"achieved eta_w = {sol.achieved_eta_w:.6f}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    res = run_sweep(cfg.sweep, jobs=cfg.jobs)
    out = _Writer(cfg)
    out.csv(cfg.sweep.kind, res.to_csv().split("\n", 1)[1])
    out.json(cfg.sweep.kind, json.loads(res.to_json()))
    failed = sum(1 for r in res.rows if "error" in r)
    print(f"{len(res.rows)} points, {failed} failed")
    return EXIT_OK


def cmd_tomo(cfg: RunConfig, args) -> int:
    n_bar = cfg.n_bar
    rho_in = coherent_state(np.sqrt(n_bar), cfg.ml.n_max)
    rho_out = apply_memory_channel(rho_in, cfg.channel)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    rec_in = simulate_homodyne(rho_in, cfg.n_samples, int(seeds[0]))
    rec_out = simulate_homodyne(rho_out, cfg.n_samples, int(seeds[1]))
    if cfg.recentre:
        beta = estimate_displacement(rec_out)
        rec_in, rec_out = rec_in.displaced(beta), rec_out.displaced(beta)
    ml = cfg.ml
    if ml.x_range is None:
        ml = replace(ml, x_range=shared_x_range((rec_in, rec_out), ml.n_phase_bins))
    r_in = ml_reconstruct(rec_in, ml)
    r_out = ml_reconstruct(rec_out, ml)
    fid = uhlmann_fidelity(r_in.rho, r_out.rho)
    out = _Writer(cfg)
    out.csv("record_in", rec_in.to_csv())
    out.csv("record_out", rec_out.to_csv())
    out.json("rho_in", json.loads(r_in.rho.to_json()))
    out.json("rho_out", json.loads(r_out.rho.to_json()))
    out.json(
        "tomo",
        {
            "n_bar": n_bar,
            "channel": cfg.channel.to_dict(),
            "n_samples": cfg.n_samples,
            "fidelity": fid,
            "converged": [r_in.converged, r_out.converged],
            "iterations": [r_in.iterations, r_out.iterations],
        },
    )
    print(f"fidelity = {fid:.6f}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    rep = headline_report(
        cfg.memory,
        cfg.control,
        cfg.channel,
        cfg.ml,
        n_samples=cfg.n_samples,
        seed=cfg.seed,
        tomography=not args.no_tomography,
    )
    _Writer(cfg).json("report", rep)
    for name, q in rep["quantities"].items():
        quoted = q.get("quoted")
        quoted = "" if quoted is None else f"  (quoted {quoted:g})"
        print(f"{name:28s} {q['simulated']:.4f}{quoted}")
    return EXIT_OK


COMMANDS = {
    "store": cmd_store,
    "retrieve": cmd_retrieve,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "tomo": cmd_tomo,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with one block per module")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for sweeps")
    common.add_argument("--output-dir")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key by dotted path, e.g. memory.d=500",
    )
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="raman-memory", description="Raman quantum memory simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("store", "retrieve", "optimize"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--input", help="input envelope (CSV or JSON); default the reference pulse")
        if name != "optimize":
            s.add_argument("--control", help="write control envelope; default the calibrated one")
        if name == "retrieve":
            s.add_argument("--spin", help="stored spin wave over z; default: run storage first")
            s.add_argument("--read", help="read control envelope; default the reference read pulse")
    sub.add_parser("sweep", parents=[common])
    sub.add_parser("tomo", parents=[common])
    r = sub.add_parser("report", parents=[common])
    r.add_argument("--no-tomography", action="store_true", help="skip homodyne reconstruction")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(
            args.config,
            args.overrides,
            seed=args.seed,
            jobs=args.jobs,
            output_dir=args.output_dir,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg, args)
    except (SolverToleranceError, TruncationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
