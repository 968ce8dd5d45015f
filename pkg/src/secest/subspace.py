"""Per-sensor observable-subspace decomposition in modal coordinates.

With A in Jordan form and every eigenvalue nonderogatory, the subspace a
sensor can observe is spanned by canonical basis vectors, so each sensor's
share of the state is a plain index set ``Q_i`` and the projection onto it is
a row selector ``H_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from secest import config
from secest.errors import IntertwiningViolated, NotObservable
from secest.model import ModalSystem, numerical_rank, stacked_observability

IDENTITY_TOL = 1e-8


def observability_matrix(A: np.ndarray, c_row: np.ndarray) -> np.ndarray:
    """Stack of ``c A^k`` for k = 0..n-1 (n x n for a single sensor row)."""
    return stacked_observability(np.asarray(A), np.atleast_2d(c_row))


def observed_index_set(O: np.ndarray) -> tuple[int, ...]:
    """Indices of the columns of ``O`` that are not numerically zero."""
    O = np.atleast_2d(O)
    tol = config.scaled_tol(O)
    norms = np.linalg.norm(O, axis=0)
    return tuple(int(j) for j in np.flatnonzero(norms >= tol))


def selector(Q: Sequence[int], n: int) -> np.ndarray:
    Q = sorted(Q)
    if Q and (Q[0] < 0 or Q[-1] >= n or len(set(Q)) != len(Q)):
        raise ValueError(f"index set {Q} is not a subset of range({n})")
    H = np.zeros((len(Q), n))
    H[np.arange(len(Q)), Q] = 1.0
    return H


def reduced_pair(A: np.ndarray, c_row: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(H A H', c H')``, checked against ``A_t H = H A``."""
    A_t = H @ A @ H.T
    c_t = np.atleast_2d(c_row) @ H.T
    gap = np.abs(A_t @ H - H @ A).max() if H.size else 0.0
    if gap > IDENTITY_TOL * max(1.0, float(np.linalg.norm(A, np.inf))):
        raise IntertwiningViolated(
            f"selected coordinates are not invariant under A (residual {gap:.3g}); "
            "the modal form is not a valid Jordan form"
        )
    return A_t, c_t


@dataclass(frozen=True)
class SensorDecomposition:
    sensor: int
    O: np.ndarray
    Q: tuple[int, ...]
    H: np.ndarray
    A_tilde: np.ndarray
    C_tilde: np.ndarray

    @property
    def n_i(self) -> int:
        return len(self.Q)

    def position(self, j: int) -> int:
        """Index of state ``j`` inside this sensor's local state."""
        return self.Q.index(j)


def decompose_sensor(modal: ModalSystem, sensor: int) -> SensorDecomposition:
    c = modal.C[sensor]
    O = observability_matrix(modal.A, c)
    Q = observed_index_set(O)
    H = selector(Q, modal.n)
    A_t, c_t = reduced_pair(modal.A, c, H)
    return SensorDecomposition(sensor=sensor, O=O, Q=Q, H=H, A_tilde=A_t, C_tilde=c_t)


def decompose(modal: ModalSystem) -> list[SensorDecomposition]:
    return [decompose_sensor(modal, i) for i in range(modal.m)]


@dataclass(frozen=True)
class CoverageIndex:
    sets: tuple[tuple[int, ...], ...]

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets], dtype=int)

    @property
    def redundancy(self) -> int:
        return int(self.counts.min()) - 1

    @property
    def uncovered(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.counts == 0))


def coverage(decs: Sequence[SensorDecomposition], n: int) -> CoverageIndex:
    """For every state index j, the sensors whose ``Q_i`` contains j."""
    sets: list[list[int]] = [[] for _ in range(n)]
    for dec in decs:
        for j in dec.Q:
            sets[j].append(dec.sensor)
    return CoverageIndex(tuple(tuple(s) for s in sets))


def sparse_observability_index(cov: CoverageIndex) -> int:
    """Largest s such that removing any s sensors keeps the system observable.

    Removing s sensors leaves state j observed iff fewer than |S_j| of its
    covering sensors were removed, and the union of the remaining ``Q_i``
    spanning every index is exactly observability, so s_max = min_j |S_j| - 1.
    """
    if cov.uncovered:
        raise NotObservable(
            f"state indices {list(cov.uncovered)} are observed by no sensor", uncovered=cov.uncovered
        )
    return cov.redundancy


def brute_force_sparse_observability(A: np.ndarray, C: np.ndarray) -> int:
    """Exhaustive subset-rank search; -1 when (A, C) itself is unobservable.

    Works on any coordinates (no modal structure needed), so it is usable as an
    independent check of :func:`sparse_observability_index`. Cost is
    exponential in the number of sensors.
    """
    A = np.asarray(A)
    C = np.atleast_2d(C)
    n, m = A.shape[0], C.shape[0]
    for s in range(m):
        for removed in combinations(range(m), s):
            keep = [i for i in range(m) if i not in removed]
            if numerical_rank(stacked_observability(A, C[keep])) < n:
                return s - 1
    return m - 1


@dataclass(frozen=True)
class CheckReport:
    sensor: int
    intertwining: bool
    output_identity: bool
    projection: bool
    reduced_observable: bool
    column_rank: int
    n_i: int
    residuals: dict

    @property
    def full_column_rank(self) -> bool:
        return self.column_rank == self.n_i

    @property
    def passed(self) -> bool:
        return self.intertwining and self.output_identity and self.projection and self.reduced_observable

    def to_dict(self) -> dict:
        return {
            "sensor": self.sensor,
            "intertwining": self.intertwining,
            "output_identity": self.output_identity,
            "projection": self.projection,
            "reduced_observable": self.reduced_observable,
            "column_rank": self.column_rank,
            "full_column_rank": self.full_column_rank,
            "passed": self.passed,
            "residuals": self.residuals,
        }


def pbh_observable(A: np.ndarray, c: np.ndarray) -> bool:
    """Hautus test: rank [lambda I - A; c] = dim A for every eigenvalue of A."""
    A = np.atleast_2d(A)
    k = A.shape[0]
    if k == 0:
        return True
    c = np.atleast_2d(c)
    # A is triangular in modal coordinates, but eigvals keeps this general
    for lam in np.linalg.eigvals(A):
        M = np.vstack([lam * np.eye(k) - A, c])
        if numerical_rank(M) < k:
            return False
    return True


def verify_decomposition(
    dec: SensorDecomposition, modal: ModalSystem, tol: float = IDENTITY_TOL
) -> CheckReport:
    A = modal.A
    c = modal.C[dec.sensor][None, :]
    H = dec.H
    scale = max(1.0, float(np.linalg.norm(A, np.inf)), float(np.abs(c).max(initial=0.0)))

    r_int = float(np.abs(dec.A_tilde @ H - H @ A).max(initial=0.0))
    r_out = float(np.abs(dec.C_tilde @ H - c).max(initial=0.0))
    indicator = np.zeros(modal.n)
    indicator[list(dec.Q)] = 1.0
    r_proj = float(np.abs(H.T @ H - np.diag(indicator)).max(initial=0.0))

    O_t = dec.O @ H.T
    col_rank = numerical_rank(O_t) if dec.n_i else 0
    return CheckReport(
        sensor=dec.sensor,
        intertwining=r_int <= tol * scale,
        output_identity=r_out <= tol * scale,
        projection=r_proj <= tol,
        reduced_observable=pbh_observable(dec.A_tilde, dec.C_tilde),
        column_rank=col_rank,
        n_i=dec.n_i,
        residuals={"intertwining": r_int, "output_identity": r_out, "projection": r_proj},
    )


def analyze(modal: ModalSystem, raw_A: np.ndarray | None = None, raw_C: np.ndarray | None = None,
            brute_force: bool = False) -> dict:
    """JSON-ready summary of the decomposition, coverage and redundancy."""
    decs = decompose(modal)
    cov = coverage(decs, modal.n)
    checks = [verify_decomposition(d, modal) for d in decs]
    report = {
        "n": modal.n,
        "m": modal.m,
        "modal_mode": modal.mode.value,
        "modal_condition_number": modal.condition_number,
        "sensors": [{"sensor": d.sensor, "Q": list(d.Q), "n_i": d.n_i} for d in decs],
        "coverage_counts": cov.counts.tolist(),
        "s_max": sparse_observability_index(cov),
        "checks": [c.to_dict() for c in checks],
        "all_checks_passed": all(c.passed for c in checks),
    }
    if brute_force:
        A = modal.A if raw_A is None else raw_A
        C = modal.C if raw_C is None else raw_C
        report["s_max_brute_force"] = brute_force_sparse_observability(A, C)
    return report
