"""Command-line front end.

Exit codes: 0 success, 2 bad input (parse or validation), 3 infeasible gain
design, 4 simulation aborted at runtime (the partial trace is kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from secest import ieee14, threat
from secest.errors import InequalityViolated, Infeasible, SecestError, SimulationAborted
from secest.gains import design_all, gains_from_dict, gains_to_dict
from secest.model import SystemModel, load_system, state_pairing
from secest.sim import metrics, read_trace_csv, run, write_trace_csv
from secest.subspace import analyze, decompose

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 2, 3, 4

SYSTEM_PRESETS = ("ieee14", "ieee14-grounded")
SIM_PRESETS = ("ieee14", "ieee14-random", "ieee14-slope")
IEEE14_GAMMA = 0.5
IEEE14_P = 6

log = logging.getLogger("secest")


class InputError(Exception):
    pass


@dataclass
class LoadedSystem:
    model: SystemModel
    u: np.ndarray | None
    x0: np.ndarray | None
    label: str
    variant: str | None = None


# --- helpers -----------------------------------------------------------------


def _atomic_write(path: Path, write: Callable) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_json(path: Path, obj) -> None:
    text = _dump_json(obj)
    _atomic_write(path, lambda fh: fh.write(text))


def _clean(obj):
    """Replace non-finite floats by None so output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _load(system: str | None, preset: str | None, p: int | None = None) -> LoadedSystem:
    if preset is not None:
        variant = "grounded" if preset.endswith("grounded") else "damped"
        params = ieee14.default_params(variant=variant)
        model = ieee14.build_ieee14(params, p=IEEE14_P if p is None else p)
        return LoadedSystem(model, params.power.copy(), None, f"preset:{preset}", variant)
    if system is None:
        raise InputError("give a system file or --preset")
    spec = load_system(system)
    model = SystemModel.build(spec.raw, spec.mode, p=spec.p if p is None else p)
    return LoadedSystem(model, spec.u, spec.x0, str(system))


def _system_args(sp: argparse.ArgumentParser, presets=SYSTEM_PRESETS) -> None:
    sp.add_argument("system", nargs="?", help="system JSON file")
    sp.add_argument("--preset", choices=presets, help="built-in system instead of a file")


# --- subcommands ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    ls = _load(args.system, args.preset, p=0)
    report = analyze(ls.model.modal, ls.model.raw.A, ls.model.raw.C, brute_force=args.brute_force)
    report["system"] = ls.label
    if ls.variant is not None:
        report["variant"] = ls.variant
        report["switching_p"] = IEEE14_P
        report["switching_2p_sparse_observable"] = 2 * IEEE14_P <= report["s_max"]
    report["validation"] = ls.model.report.to_dict() if ls.model.report is not None else None
    text = _dump_json(_clean(report))
    if args.output:
        _atomic_write(Path(args.output), lambda fh: fh.write(text))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _design(ls: LoadedSystem, gamma: float | None, seed: int):
    decs = decompose(ls.model.modal)
    try:
        perm = state_pairing(ls.model.modal)
    except SecestError:
        perm = None
    gs = design_all(decs, ls.model.process_noise_bound, ls.model.raw.B_v, gamma=gamma, state_perm=perm,
                    fallback=True, seed=seed)
    return decs, gs


def _infeasible_message(gs) -> str:
    lines = ["Infeasible: no gain meets sigma* < 1/(2 sqrt(n_i) + 1) for these sensors:"]
    for i in gs.infeasible:
        d = gs.designs[i]
        if d is not None:
            lines.append(f"  sensor {i}: sigma* = {d.sigma_star:.6g}, bound = {d.bound:.6g}")
        else:
            lines.append(f"  sensor {i}")
    return "\n".join(lines)


def cmd_design(args) -> int:
    ls = _load(args.system, args.preset)
    gamma = args.gamma if args.gamma is not None else (IEEE14_GAMMA if ls.variant else None)
    decs, gs = _design(ls, gamma, args.seed)
    if gs.infeasible and gamma is None:
        print(_infeasible_message(gs), file=sys.stderr)
        return EXIT_INFEASIBLE
    if gs.infeasible:
        print(_infeasible_message(gs).replace("Infeasible:", "warning: fallback gains used;"), file=sys.stderr)
    out = gains_to_dict(gs, decs)
    out["system"] = ls.label
    _write_json(Path(args.output), _clean(out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    preset = args.preset
    system_preset = "ieee14" if preset in SIM_PRESETS else None
    if args.horizon < 0:
        raise InputError(f"--horizon must be >= 0, got {args.horizon}")
    if args.scenario:
        scenario = threat.load_scenario(args.scenario)
    elif preset == "ieee14-random":
        scenario = threat.PRESETS["ieee14-random"](args.seed)
    elif preset == "ieee14-slope":
        scenario = threat.PRESETS["ieee14-slope"](args.seed)
    else:
        scenario = threat.AttackScenario()
    ls = _load(args.system, system_preset, p=scenario.p if system_preset else None)
    if not system_preset and scenario.p > ls.model.p:
        ls = _load(args.system, None, p=scenario.p)
    gamma = args.gamma if args.gamma is not None else (IEEE14_GAMMA if system_preset else None)

    if args.gains:
        data = json.loads(Path(args.gains).read_text())
        decs = decompose(ls.model.modal)
        gains = gains_from_dict(data, decs)
        gamma = gamma if gamma is not None else data.get("gamma")
        if gamma is None:
            raise InputError("gains file has no gamma; pass --gamma")
        verdicts = data.get("inequality_verdicts")
    else:
        decs, gs = _design(ls, gamma, args.seed)
        if gs.detector is None:
            print(_infeasible_message(gs), file=sys.stderr)
            return EXIT_INFEASIBLE
        gains = gs.gains
        gamma = gs.detector.gamma
        verdicts = list(gs.detector.inequality_ok)

    out = Path(args.out)
    meta = {
        "system": ls.label,
        "variant": ls.variant,
        "scenario": scenario.to_dict(),
        "seed": args.seed,
        "horizon": args.horizon,
        "gamma": gamma,
        "n_i": [d.n_i for d in decs],
        "thresholds": [(math.sqrt(d.n_i) + 1.0) * gamma if d.n_i else None for d in decs],
        "inequality_verdicts": verdicts,
    }
    if ls.variant is not None:
        meta["bus_states"] = {str(b): list(ieee14.bus_states(b, ls.variant)) for b in range(1, ieee14.N_BUS + 1)}
        meta["bus_sensors"] = {str(b): threat.bus_sensor(b) for b in range(1, ieee14.N_BUS + 1)}
    try:
        tr = run(ls.model, decs, gains, gamma, scenario, args.horizon, seed=args.seed,
                 x0=ls.x0, u=ls.u, luenberger=not args.no_luenberger)
    except SimulationAborted as exc:
        meta["aborted"] = str(exc)
        partial = exc.trace
        if partial is not None:
            _atomic_write(out / "trace.csv", lambda fh: write_trace_csv(partial, fh))
        _write_json(out / "run.json", _clean(meta))
        print(f"SimulationAborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _atomic_write(out / "trace.csv", lambda fh: write_trace_csv(tr, fh))
    _write_json(out / "metrics.json", _clean(metrics(tr)))
    _write_json(out / "run.json", _clean(meta))
    return EXIT_OK


def _series(path: Path, k: np.ndarray, values: np.ndarray, name: str) -> None:
    def write(fh):
        fh.write(f"k,{name}\n")
        for kk, v in zip(k, values):
            fh.write(f"{int(kk)},{v:.17g}\n")

    _atomic_write(path, write)


def cmd_report(args) -> int:
    trace_path = Path(args.trace)
    tt = read_trace_csv(trace_path)
    run_path = Path(args.run) if args.run else trace_path.parent / "run.json"
    meta = json.loads(run_path.read_text()) if run_path.exists() else {}
    bus = str(args.bus)
    if args.states:
        th, om = args.states
    elif "bus_states" in meta and bus in meta["bus_states"]:
        th, om = meta["bus_states"][bus]
    else:
        th, om = ieee14.bus_states(args.bus, meta.get("variant") or "damped")
    sensor = args.sensor if args.sensor is not None else meta.get("bus_sensors", {}).get(bus, threat.bus_sensor(args.bus))
    n = tt.x_true.shape[1]
    if not (0 <= th < n and 0 <= om < n):
        raise InputError(f"state indices ({th}, {om}) out of range for n = {n}")
    if not 0 <= sensor < tt.residues.shape[1]:
        raise InputError(f"sensor {sensor} out of range")
    gamma = args.gamma if args.gamma is not None else meta.get("gamma")
    if gamma is None:
        raise InputError("no gamma in run.json; pass --gamma")
    n_i = meta["n_i"][sensor] if "n_i" in meta else args.n_i
    if n_i is None:
        raise InputError("no n_i in run.json; pass --n-i")
    threshold = (math.sqrt(n_i) + 1.0) * gamma

    out = Path(args.out)
    k = tt.k
    _series(out / "theta_true.csv", k, tt.x_true[:, th], "theta_true")
    _series(out / "theta_secure.csv", k, tt.x_hat_secure[:, th], "theta_secure")
    _series(out / "omega_true.csv", k, tt.x_true[:, om], "omega_true")
    _series(out / "omega_secure.csv", k, tt.x_hat_secure[:, om], "omega_secure")
    if tt.x_hat_luenberger is not None:
        _series(out / "theta_luenberger.csv", k, tt.x_hat_luenberger[:, th], "theta_luenberger")
        _series(out / "omega_luenberger.csv", k, tt.x_hat_luenberger[:, om], "omega_luenberger")
    rows = k >= 1
    before = tt.residues[rows, sensor]
    after = np.where(tt.triggers[rows, sensor], 0.0, before)
    _series(out / "residue_before.csv", k[rows], before, "residue_before")
    _series(out / "residue_after.csv", k[rows], after, "residue_after")
    _series(out / "threshold.csv", k[rows], np.full(before.shape, threshold), "threshold")
    _write_json(out / "report.json", {
        "bus": args.bus, "sensor": int(sensor), "states": [int(th), int(om)],
        "gamma": gamma, "n_i": int(n_i), "threshold": threshold,
        "resets": int(tt.triggers[rows, sensor].sum()),
    })
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="secest",
        description="Secure state estimation under sparse sensor attacks.",
        epilog="exit codes: 0 ok, 2 invalid input, 3 infeasible design, 4 simulation aborted. "
        "SECEST_TOL overrides the zero tolerance.",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="decomposition, coverage and redundancy report")
    _system_args(a)
    a.add_argument("--brute-force", action="store_true", help="also run the exhaustive redundancy search")
    a.add_argument("-o", "--output", help="write JSON here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("design", help="design gains and the detector parameter")
    _system_args(d)
    d.add_argument("--gamma", type=float, help="fix gamma instead of computing it")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("-o", "--output", required=True, help="gains JSON file")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="closed-loop run with both estimators")
    s.add_argument("--system", help="system JSON file")
    s.add_argument("--preset", choices=SIM_PRESETS)
    s.add_argument("--gains", help="gains JSON (designed inline when omitted)")
    s.add_argument("--scenario", help="attack scenario JSON")
    s.add_argument("--horizon", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gamma", type=float)
    s.add_argument("--no-luenberger", action="store_true")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="plot-ready series from a trace")
    r.add_argument("trace")
    r.add_argument("--bus", type=int, default=5)
    r.add_argument("--sensor", type=int, help="sensor for the residue series (default: the bus power sensor)")
    r.add_argument("--states", type=int, nargs=2, metavar=("THETA", "OMEGA"))
    r.add_argument("--run", help="run.json (default: next to the trace)")
    r.add_argument("--gamma", type=float)
    r.add_argument("--n-i", type=int, dest="n_i")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Infeasible, InequalityViolated) as exc:
        print(f"Infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SimulationAborted as exc:
        print(f"SimulationAborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SecestError, InputError, ValueError, KeyError, OSError) as exc:
        name = type(exc).__name__
        print(f"{name}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
