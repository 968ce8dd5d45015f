"""Closed-loop simulation of the plant, the attacker and both estimators.

Row k of a trace holds x(k) and the estimates x_hat(k). Measurements y(k-1)
(attacked per the scenario's support at k-1) are what produce x_hat(k), so a
trigger on row k by a sensor outside support(k-1) is a false trigger.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from secest.errors import NonFiniteInput, SimulationAborted
from secest.estimator import EstimatorBank, LuenbergerObserver
from secest.model import SystemModel
from secest.subspace import SensorDecomposition
from secest.threat import AttackKind, AttackScenario, attack_vector

log = logging.getLogger(__name__)

NOISE_STREAM = 2
INIT_STREAM = 3


def sample_noise(B_w: float, B_v: float, n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise uniform draws scaled down onto the norm balls when they fall outside."""
    if B_w < 0 or B_v < 0:
        raise ValueError("noise bounds must be nonnegative")

    def draw(bound: float, size: int) -> np.ndarray:
        v = rng.uniform(-bound, bound, size=size)
        nv = float(np.linalg.norm(v))
        if nv > bound:
            v = v * (bound / nv)
            # rounding can leave the norm an ulp above the bound
            while np.linalg.norm(v) > bound:
                v = v * (1.0 - 2.0**-50)
        return v

    return draw(B_w, n), draw(B_v, m)


def plant_step(A: np.ndarray, x: np.ndarray, w: np.ndarray, B_u: np.ndarray | None = None,
               u: np.ndarray | None = None) -> np.ndarray:
    x_next = A @ x + w
    if B_u is not None and u is not None:
        x_next = x_next + B_u @ u
    return x_next


def measure(C: np.ndarray, x: np.ndarray, v: np.ndarray, scenario: AttackScenario | None, k: int,
            D_u: np.ndarray | None = None, u: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """(y, attack vector, support) with ``y = C x + D_u u + v + a``."""
    y = C @ x + v
    if D_u is not None and u is not None:
        y = y + D_u @ u
    if scenario is None or scenario.kind is AttackKind.NONE:
        return y, np.zeros_like(y), ()
    a, s = attack_vector(scenario, k, y.size)
    return y + a, a, s


@dataclass
class SimulationTrace:
    x_true: np.ndarray
    x_hat_secure: np.ndarray
    x_hat_luenberger: np.ndarray | None
    err_inf_secure: np.ndarray
    err_inf_luenberger: np.ndarray | None
    err_modal_secure: np.ndarray  # per real/imag part, modal coordinates
    residues: np.ndarray
    residues_after: np.ndarray
    triggers: np.ndarray
    attack: np.ndarray  # row k: attack added to y(k)
    supports: list[tuple[int, ...]]
    imag_residue: np.ndarray
    w_norm: np.ndarray
    v_norm: np.ndarray
    thresholds: np.ndarray
    gamma: float
    n_i: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.x_true.shape[0] - 1

    def truncate(self, rows: int) -> "SimulationTrace":
        cut = lambda a: None if a is None else a[:rows]
        return SimulationTrace(
            x_true=cut(self.x_true), x_hat_secure=cut(self.x_hat_secure),
            x_hat_luenberger=cut(self.x_hat_luenberger), err_inf_secure=cut(self.err_inf_secure),
            err_inf_luenberger=cut(self.err_inf_luenberger), err_modal_secure=cut(self.err_modal_secure),
            residues=cut(self.residues), residues_after=cut(self.residues_after), triggers=cut(self.triggers),
            attack=cut(self.attack), supports=self.supports[:rows], imag_residue=cut(self.imag_residue),
            w_norm=cut(self.w_norm), v_norm=cut(self.v_norm), thresholds=self.thresholds,
            gamma=self.gamma, n_i=self.n_i, meta=dict(self.meta),
        )


def perturbed_initial_estimate(system: SystemModel, x0: np.ndarray, spread: float, seed: int) -> np.ndarray:
    """x0 plus a random offset whose modal coordinates are within ``spread`` per real/imag part."""
    rng = np.random.default_rng([seed, INIT_STREAM])
    d = rng.uniform(-1.0, 1.0, size=x0.size)
    z = system.modal.to_modal_coords(d)
    worst = max(float(np.abs(z.real).max(initial=0.0)), float(np.abs(z.imag).max(initial=0.0)))
    if worst == 0 or spread == 0:
        return x0.astype(float).copy()
    return x0 + d * (spread / worst)


def _modal_err(a: np.ndarray) -> float:
    return max(float(np.abs(a.real).max(initial=0.0)), float(np.abs(a.imag).max(initial=0.0)))


def run(
    system: SystemModel,
    decs: Sequence[SensorDecomposition],
    gains: Sequence[np.ndarray | None],
    gamma: float,
    scenario: AttackScenario | None,
    horizon: int,
    seed: int = 0,
    *,
    x0: np.ndarray | None = None,
    x_hat0: np.ndarray | None = None,
    init_spread: float | None = None,
    u: np.ndarray | Callable[[int], np.ndarray] | None = None,
    luenberger: bool = True,
    noise: bool = True,
) -> SimulationTrace:
    """Simulate ``horizon`` steps.

    ``x_hat0`` defaults to ``x0`` perturbed within ``init_spread`` (default
    gamma) in modal coordinates. ``u`` is a constant known input or a
    function of k; when None the system's inputs are held at zero.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    raw, modal = system.raw, system.modal
    n, m = raw.n, raw.m
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x_hat0 is None:
        x_hat0 = perturbed_initial_estimate(system, x0, gamma if init_spread is None else init_spread, seed)
    u_of: Callable[[int], np.ndarray | None]
    if u is None:
        u_of = lambda k: None
    elif callable(u):
        u_of = u
    else:
        u_const = np.asarray(u, dtype=float)
        u_of = lambda k: u_const

    rng = np.random.default_rng([seed, NOISE_STREAM])
    bank = EstimatorBank(modal, decs, gains, gamma, input_modal=system.input_modal, feedthrough=raw.D_u)
    bank.reset_all(x_hat0)
    luen = LuenbergerObserver(modal, decs, gains, system.input_modal, raw.D_u) if luenberger else None
    if luen is not None:
        luen.reset(x_hat0)

    rows = horizon + 1
    tr = SimulationTrace(
        x_true=np.zeros((rows, n)),
        x_hat_secure=np.zeros((rows, n)),
        x_hat_luenberger=np.zeros((rows, n)) if luen is not None else None,
        err_inf_secure=np.zeros(rows),
        err_inf_luenberger=np.zeros(rows) if luen is not None else None,
        err_modal_secure=np.zeros(rows),
        residues=np.zeros((rows, m)),
        residues_after=np.zeros((rows, m)),
        triggers=np.zeros((rows, m), dtype=bool),
        attack=np.zeros((rows, m)),
        supports=[()] * rows,
        imag_residue=np.zeros(rows),
        w_norm=np.zeros(rows),
        v_norm=np.zeros(rows),
        thresholds=bank.thresholds.copy(),
        gamma=float(gamma),
        n_i=bank.n_i.copy(),
        meta={"seed": seed, "horizon": horizon},
    )
    inactive = ~bank.active
    tr.residues[:, inactive] = np.nan
    tr.residues_after[:, inactive] = np.nan

    x = x0.copy()
    tr.x_true[0] = x
    tr.x_hat_secure[0] = x_hat0
    tr.err_inf_secure[0] = float(np.abs(x_hat0 - x).max(initial=0.0))
    tr.err_modal_secure[0] = _modal_err(modal.to_modal_coords(x_hat0 - x))
    if luen is not None:
        tr.x_hat_luenberger[0] = x_hat0
        tr.err_inf_luenberger[0] = tr.err_inf_secure[0]

    for k in range(1, rows):
        uk = u_of(k - 1)
        if noise:
            w, v = sample_noise(raw.B_w, raw.B_v, n, m, rng)
        else:
            w, v = np.zeros(n), np.zeros(m)
        y, a, s = measure(raw.C, x, v, scenario, k - 1, raw.D_u, uk)
        tr.attack[k - 1] = a
        tr.supports[k - 1] = s
        tr.w_norm[k - 1] = np.linalg.norm(w)
        tr.v_norm[k - 1] = np.linalg.norm(v)
        try:
            # divergence is reported through the finiteness checks, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                x = plant_step(raw.A, x, w, raw.B_u, uk)
                if not np.isfinite(x).all():
                    raise NonFiniteInput(f"plant state became non-finite at k = {k}")
                est, diag = bank.step(y, uk)
                x_l = luen.step(y, uk) if luen is not None else None
            if not np.isfinite(est.x_hat_real).all() or (x_l is not None and not np.isfinite(x_l).all()):
                raise NonFiniteInput(f"estimate became non-finite at k = {k}")
        except NonFiniteInput as exc:
            partial = tr.truncate(k)
            partial.meta["aborted_at"] = k
            raise SimulationAborted(str(exc), trace=partial) from exc
        tr.x_true[k] = x
        tr.x_hat_secure[k] = est.x_hat_real
        tr.err_inf_secure[k] = float(np.abs(est.x_hat_real - x).max(initial=0.0))
        tr.err_modal_secure[k] = _modal_err(est.x_hat_modal - modal.to_modal_coords(x))
        tr.imag_residue[k] = est.imag_residue
        tr.residues[k] = diag.residues
        tr.residues_after[k] = diag.residues_after
        tr.triggers[k] = diag.triggers
        if luen is not None:
            tr.x_hat_luenberger[k] = x_l
            tr.err_inf_luenberger[k] = float(np.abs(x_l - x).max(initial=0.0))

    # the last row's attack belongs to y(horizon), which no estimate consumed
    if scenario is not None and scenario.kind is not AttackKind.NONE:
        a, s = attack_vector(scenario, horizon, m)
        tr.attack[horizon] = a
        tr.supports[horizon] = s
    return tr


def false_trigger_mask(tr: SimulationTrace) -> np.ndarray:
    """Triggers on row k by sensors that were not attacked at k-1."""
    mask = np.zeros_like(tr.triggers)
    for k in range(1, tr.triggers.shape[0]):
        benign = np.ones(tr.triggers.shape[1], dtype=bool)
        benign[list(tr.supports[k - 1])] = False
        mask[k] = tr.triggers[k] & benign
    return mask


def metrics(tr: SimulationTrace) -> dict:
    false = false_trigger_mask(tr)
    attacked_trig = tr.triggers & ~false
    resets = np.argwhere(tr.triggers)
    before = tr.residues[tr.triggers]
    after = tr.residues_after[tr.triggers]
    thr = tr.thresholds[resets[:, 1]] if resets.size else np.zeros(0)
    out = {
        "horizon": tr.horizon,
        "gamma": tr.gamma,
        "secure": {
            "max_err_inf": float(tr.err_inf_secure.max()),
            "mean_err_inf": float(tr.err_inf_secure.mean()),
            "max_err_modal": float(tr.err_modal_secure.max()),
        },
        "triggers": {
            "total": int(tr.triggers.sum()),
            "benign_false": int(false.sum()),
            "per_sensor_benign": false.sum(axis=0).astype(int).tolist(),
            "per_sensor_attacked": attacked_trig.sum(axis=0).astype(int).tolist(),
        },
        "resets": {
            "count": int(resets.shape[0]),
            "all_below_threshold_after": bool(np.all(after < thr)),
            "all_decreased": bool(np.all(after < before)),
            "max_after": float(after.max()) if after.size else 0.0,
            "min_before": float(before.min()) if before.size else 0.0,
        },
        "max_imag_residue": float(tr.imag_residue.max()),
        "max_w_norm": float(tr.w_norm.max()),
        "max_v_norm": float(tr.v_norm.max()),
        "max_support_size": max((len(s) for s in tr.supports), default=0),
    }
    if tr.err_inf_luenberger is not None:
        out["luenberger"] = {
            "max_err_inf": float(tr.err_inf_luenberger.max()),
            "mean_err_inf": float(tr.err_inf_luenberger.mean()),
        }
    return out


# --- CSV ---------------------------------------------------------------------

FLOAT_FMT = "%.17g"


def _fmt(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else FLOAT_FMT % v


def trace_header(n: int, m: int, luenberger: bool = True) -> list[str]:
    cols = ["k"]
    cols += [f"x_true_{j}" for j in range(n)]
    cols += [f"x_hat_secure_{j}" for j in range(n)]
    if luenberger:
        cols += [f"x_hat_luen_{j}" for j in range(n)]
    cols += ["err_inf_secure"] + (["err_inf_luen"] if luenberger else [])
    for i in range(m):
        cols += [f"residue_{i}", f"trigger_{i}"]
    cols.append("attack_support")
    return cols


def write_trace_csv(tr: SimulationTrace, fh) -> None:
    n, m = tr.x_true.shape[1], tr.residues.shape[1]
    luen = tr.x_hat_luenberger is not None
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(trace_header(n, m, luen))
    for k in range(tr.x_true.shape[0]):
        row = [str(k)]
        row += [_fmt(float(v)) for v in tr.x_true[k]]
        row += [_fmt(float(v)) for v in tr.x_hat_secure[k]]
        if luen:
            row += [_fmt(float(v)) for v in tr.x_hat_luenberger[k]]
        row.append(_fmt(float(tr.err_inf_secure[k])))
        if luen:
            row.append(_fmt(float(tr.err_inf_luenberger[k])))
        for i in range(m):
            row += [_fmt(float(tr.residues[k, i])), "1" if tr.triggers[k, i] else "0"]
        row.append(";".join(str(i) for i in tr.supports[k]))
        w.writerow(row)


def trace_to_csv(tr: SimulationTrace) -> str:
    buf = io.StringIO()
    write_trace_csv(tr, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class TraceTable:
    """A trace read back from CSV (the columns the CSV carries)."""

    k: np.ndarray
    x_true: np.ndarray
    x_hat_secure: np.ndarray
    x_hat_luenberger: np.ndarray | None
    err_inf_secure: np.ndarray
    err_inf_luenberger: np.ndarray | None
    residues: np.ndarray
    triggers: np.ndarray
    supports: list[tuple[int, ...]]


def read_trace_csv(path: str | Path) -> TraceTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: trace has a header but no rows")
    if header[0] != "k" or header[-1] != "attack_support":
        raise ValueError(f"{path}:1: not a trace file (unexpected header)")
    n = sum(1 for h in header if h.startswith("x_true_"))
    m = sum(1 for h in header if h.startswith("residue_"))
    luen = any(h.startswith("x_hat_luen_") for h in header)
    if header != trace_header(n, m, luen):
        raise ValueError(f"{path}:1: header does not match the trace layout")
    width = len(header)
    num = []
    supports = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            num.append([float(v) for v in row[:-1]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        supports.append(tuple(int(s) for s in row[-1].split(";")) if row[-1] else ())
    a = np.array(num)
    c = 1
    x_true = a[:, c: c + n]; c += n
    x_sec = a[:, c: c + n]; c += n
    x_luen = None
    if luen:
        x_luen = a[:, c: c + n]; c += n
    e_sec = a[:, c]; c += 1
    e_luen = None
    if luen:
        e_luen = a[:, c]; c += 1
    rt = a[:, c: c + 2 * m]
    return TraceTable(
        k=a[:, 0].astype(int), x_true=x_true, x_hat_secure=x_sec, x_hat_luenberger=x_luen,
        err_inf_secure=e_sec, err_inf_luenberger=e_luen,
        residues=rt[:, 0::2], triggers=rt[:, 1::2].astype(bool), supports=supports,
    )
