"""Secure estimator bank and the Luenberger baseline.

Each step runs predict, fuse, detect-reset in that order. The local states of
all sensors are stacked into one vector so a step is a sparse matvec, a
gathered median and a segmented norm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse

from secest import config
from secest.errors import DimensionMismatch, EmptyCoverage, NonFiniteInput
from secest.model import ModalSystem
from secest.subspace import SensorDecomposition

log = logging.getLogger(__name__)


@dataclass
class LocalObserverState:
    eta: np.ndarray
    eta_plus: np.ndarray
    last_residue_norm: float
    triggered: bool


@dataclass(frozen=True)
class FusedEstimate:
    x_hat_modal: np.ndarray
    x_hat_real: np.ndarray
    imag_residue: float
    objective_value: float


@dataclass(frozen=True)
class StepDiagnostics:
    residues: np.ndarray  # ||eta_i - H_i x_hat|| before reset, nan for n_i = 0
    residues_after: np.ndarray  # same quantity for eta_i^+
    triggers: np.ndarray


def observer_step(eta_plus: np.ndarray, y_i: float, L: np.ndarray, dec: SensorDecomposition,
                  feedforward: np.ndarray | None = None) -> np.ndarray:
    if not np.isfinite(y_i):
        raise NonFiniteInput(f"sensor {dec.sensor}: measurement {y_i} is not finite")
    c = np.ravel(dec.C_tilde)
    F = dec.A_tilde - np.outer(L, c)
    out = F @ eta_plus + L * y_i
    if feedforward is not None:
        out = out + feedforward
    return out


def detect_and_reset(eta: np.ndarray, x_hat_modal: np.ndarray, dec: SensorDecomposition,
                     gamma: float) -> LocalObserverState:
    proj = x_hat_modal[list(dec.Q)]
    r = float(np.linalg.norm(eta - proj))
    triggered = r > (math.sqrt(dec.n_i) + 1.0) * gamma
    return LocalObserverState(eta=eta, eta_plus=proj.copy() if triggered else eta,
                              last_residue_norm=r, triggered=triggered)


def _complex_median(values: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.nanmedian(values.real, axis=axis) + 1j * np.nanmedian(values.imag, axis=axis)


def fusion_objective(x_modal: np.ndarray, etas: Sequence[np.ndarray | None],
                     decs: Sequence[SensorDecomposition]) -> float:
    """Sum over sensors of the entrywise |Re| + |Im| residual."""
    total = 0.0
    for eta, dec in zip(etas, decs):
        if dec.n_i == 0 or eta is None:
            continue
        r = np.asarray(eta) - x_modal[list(dec.Q)]
        total += float(np.abs(r.real).sum() + np.abs(r.imag).sum())
    return total


def fuse(etas: Sequence[np.ndarray | None], decs: Sequence[SensorDecomposition],
         modal: ModalSystem | None = None, n: int | None = None) -> FusedEstimate:
    """Coordinate-wise median of the local estimates covering each state index.

    Real and imaginary parts are medianed separately; an even number of
    candidates gives the midpoint of the two central values. Without
    ``modal`` the physical estimate is just the real part.
    """
    if n is None:
        n = modal.n if modal is not None else (max((max(d.Q) for d in decs if d.Q), default=-1) + 1)
    cand: list[list[complex]] = [[] for _ in range(n)]
    for eta, dec in zip(etas, decs):
        if dec.n_i == 0:
            continue
        eta = np.asarray(eta)
        if eta.shape != (dec.n_i,):
            raise DimensionMismatch(f"sensor {dec.sensor}: eta has shape {eta.shape}, expected ({dec.n_i},)")
        for pos, j in enumerate(dec.Q):
            cand[j].append(eta[pos])
    empty = tuple(j for j in range(n) if not cand[j])
    if empty:
        raise EmptyCoverage(f"state indices {list(empty)} are covered by no sensor", uncovered=empty)
    x = np.array([complex(np.median(np.real(c)), np.median(np.imag(c))) for c in cand])
    return _finish(x, fusion_objective(x, etas, decs), modal)


def _finish(x: np.ndarray, objective: float, modal: ModalSystem | None) -> FusedEstimate:
    if modal is None:
        real, resid = x.real.copy(), float(np.abs(x.imag).max(initial=0.0))
    else:
        real, resid = modal.to_physical(x)
    return FusedEstimate(x_hat_modal=x, x_hat_real=real, imag_residue=resid, objective_value=objective)


class EstimatorBank:
    """All local observers of one plant, stepped together.

    ``gains[i]`` is None for sensors with an empty observable set; those are
    left out of fusion and detection.
    """

    def __init__(self, modal: ModalSystem, decs: Sequence[SensorDecomposition],
                 gains: Sequence[np.ndarray | None], gamma: float,
                 input_modal: np.ndarray | None = None, feedthrough: np.ndarray | None = None):
        if len(decs) != modal.m or len(gains) != modal.m:
            raise DimensionMismatch(f"expected {modal.m} decompositions and gains, got {len(decs)} and {len(gains)}")
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.modal = modal
        self.decs = list(decs)
        self.gamma = float(gamma)
        self.input_modal = input_modal
        self.feedthrough = feedthrough
        self.active = np.array([d.n_i > 0 for d in decs])

        blocks, Ls, gather, seg = [], [], [], []
        for dec, L in zip(decs, gains):
            if dec.n_i == 0:
                continue
            if L is None or np.shape(L) != (dec.n_i,):
                raise DimensionMismatch(f"sensor {dec.sensor}: gain shape {np.shape(L)}, expected ({dec.n_i},)")
            L = np.asarray(L, dtype=complex)
            blocks.append(dec.A_tilde - np.outer(L, np.ravel(dec.C_tilde)))
            Ls.append(L)
            gather.extend(dec.Q)
            seg.extend([dec.sensor] * dec.n_i)
        self.F = scipy.sparse.block_diag(blocks, format="csr", dtype=complex)
        self.L = np.concatenate(Ls)
        self.gather = np.array(gather, dtype=int)
        self.seg = np.array(seg, dtype=int)
        self.n_i = np.array([d.n_i for d in decs], dtype=int)
        self.thresholds = np.where(self.active, (np.sqrt(self.n_i) + 1.0) * self.gamma, np.nan)
        self._starts = np.concatenate([[0], np.cumsum(self.n_i[self.active])[:-1]]).astype(int)

        counts = np.bincount(self.gather, minlength=modal.n)
        if (counts == 0).any():
            empty = tuple(int(j) for j in np.flatnonzero(counts == 0))
            raise EmptyCoverage(f"state indices {list(empty)} are covered by no sensor", uncovered=empty)
        # padded table of stacked positions per state index; the pad points at a nan slot
        order = np.argsort(self.gather, kind="stable")
        N = self.gather.size
        self._pad = np.full((modal.n, int(counts.max())), N, dtype=int)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        for j in range(modal.n):
            self._pad[j, : counts[j]] = order[offsets[j]: offsets[j] + counts[j]]
        self.eta_plus = np.zeros(N, dtype=complex)
        self.eta = np.zeros(N, dtype=complex)

    # -- per-sensor views ---------------------------------------------------
    def local(self, sensor: int, which: str = "eta_plus") -> np.ndarray | None:
        if not self.active[sensor]:
            return None
        k = int(np.count_nonzero(self.active[:sensor]))
        s = self._starts[k]
        return getattr(self, which)[s: s + self.n_i[sensor]].copy()

    def locals(self, which: str = "eta_plus") -> list[np.ndarray | None]:
        return [self.local(i, which) for i in range(self.modal.m)]

    # -- core ---------------------------------------------------------------
    def reset_all(self, x_hat0: np.ndarray) -> None:
        x_hat0 = np.asarray(x_hat0)
        if x_hat0.shape != (self.modal.n,):
            raise DimensionMismatch(f"initial estimate has shape {x_hat0.shape}, expected ({self.modal.n},)")
        self.eta_plus = self.modal.to_modal_coords(x_hat0).astype(complex)[self.gather]
        self.eta = self.eta_plus.copy()

    def _segment_norms(self, r: np.ndarray) -> np.ndarray:
        sq = np.add.reduceat(np.abs(r) ** 2, self._starts) if r.size else np.zeros(0)
        out = np.full(self.modal.m, np.nan)
        out[self.active] = np.sqrt(sq)
        return out

    def fuse_current(self) -> FusedEstimate:
        padded = np.append(self.eta, np.nan + 1j * np.nan)[self._pad]
        x = _complex_median(padded, axis=1)
        r = self.eta - x[self.gather]
        return _finish(x, float(np.abs(r.real).sum() + np.abs(r.imag).sum()), self.modal)

    def step(self, y: np.ndarray, u: np.ndarray | None = None) -> tuple[FusedEstimate, StepDiagnostics]:
        """Consume y(k-1) (and the known input u(k-1)); return x_hat(k)."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.modal.m,):
            raise DimensionMismatch(f"measurement has shape {y.shape}, expected ({self.modal.m},)")
        if not np.isfinite(y).all():
            bad = np.flatnonzero(~np.isfinite(y)).tolist()
            raise NonFiniteInput(f"non-finite measurements at sensors {bad}")
        if u is not None and self.feedthrough is not None:
            y = y - self.feedthrough @ np.atleast_1d(u)
        eta = self.F @ self.eta_plus + self.L * y[self.seg]
        if u is not None and self.input_modal is not None:
            eta = eta + (self.input_modal @ np.atleast_1d(u))[self.gather]
        self.eta = eta
        est = self.fuse_current()
        r = eta - est.x_hat_modal[self.gather]
        res = self._segment_norms(r)
        trig = np.zeros(self.modal.m, dtype=bool)
        trig[self.active] = res[self.active] > self.thresholds[self.active]
        reset_mask = trig[self.seg]
        self.eta_plus = np.where(reset_mask, est.x_hat_modal[self.gather], eta)
        after = self._segment_norms(self.eta_plus - est.x_hat_modal[self.gather])
        if est.imag_residue > config.REALNESS_TOL * max(1.0, float(np.abs(est.x_hat_real).max(initial=0.0))):
            log.debug("imaginary residue %.3g in fused estimate", est.imag_residue)
        return est, StepDiagnostics(residues=res, residues_after=after, triggers=trig)


def init_bank(x_hat0: np.ndarray, modal: ModalSystem, decs: Sequence[SensorDecomposition],
              gains: Sequence[np.ndarray | None], gamma: float, **kw) -> EstimatorBank:
    bank = EstimatorBank(modal, decs, gains, gamma, **kw)
    bank.reset_all(x_hat0)
    return bank


def secure_step(bank: EstimatorBank, y: np.ndarray, u: np.ndarray | None = None):
    return bank.step(y, u)


class LuenbergerObserver:
    """Full-order observer whose correction is the sum of the local gains."""

    def __init__(self, modal: ModalSystem, decs: Sequence[SensorDecomposition],
                 gains: Sequence[np.ndarray | None], input_modal: np.ndarray | None = None,
                 feedthrough: np.ndarray | None = None):
        n, m = modal.n, modal.m
        K = np.zeros((n, m), dtype=complex)
        for dec, L in zip(decs, gains):
            if dec.n_i and L is not None:
                K[list(dec.Q), dec.sensor] = L
        self.modal = modal
        self.K = K
        self.input_modal = input_modal
        self.feedthrough = feedthrough
        self.x = np.zeros(n, dtype=complex)

    def reset(self, x_hat0: np.ndarray) -> None:
        self.x = self.modal.to_modal_coords(np.asarray(x_hat0)).astype(complex)

    @property
    def estimate(self) -> np.ndarray:
        return self.modal.to_physical(self.x)[0]

    def step(self, y: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if u is not None and self.feedthrough is not None:
            y = y - self.feedthrough @ np.atleast_1d(u)
        self.x = luenberger_step(self.x, y, self.modal, self.K)
        if u is not None and self.input_modal is not None:
            self.x = self.x + self.input_modal @ np.atleast_1d(u)
        return self.estimate


def luenberger_step(x_hat: np.ndarray, y: np.ndarray, modal: ModalSystem, K: np.ndarray) -> np.ndarray:
    """``A x + K (y - C x)`` in modal coordinates."""
    return modal.A @ x_hat + K @ (y - modal.C @ x_hat)
