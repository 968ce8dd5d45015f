"""Observer gain design and detector parameter.

For each sensor the local observer error contracts through
``F = A_t - L c_t``. The detector works when

    sigma_max(F) <= (gamma - B_w - ||L|| B_v) / ((2 sqrt(n_i) + 1) gamma),

so the smallest admissible gamma for a given L is
``(B_w + ||L|| B_v) / (1 - (2 sqrt(n_i) + 1) sigma_max(F))``. The design
minimizes that ratio with an outer grid over the singular-value budget and an
inner minimum-norm search, both derivative free.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from secest.errors import InequalityViolated, Infeasible

log = logging.getLogger(__name__)

GRID_POINTS = 50
FINE_POINTS = 10
MAX_EVALS = 2000
STARTS = 8
# relative slack when comparing sigma against the right-hand side of the design inequality
INEQ_RTOL = 1e-12


def feasibility_bound(n_i: int) -> float:
    return 1.0 / (2.0 * math.sqrt(n_i) + 1.0)


def spectral_norm(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def closed_loop(A_t: np.ndarray, c_t: np.ndarray, L: np.ndarray) -> np.ndarray:
    return A_t - np.outer(L, np.ravel(c_t))


def least_squares_gain(A_t: np.ndarray, c_t: np.ndarray) -> np.ndarray:
    """``(A_t c') (c c')^-1``; zero gain for a zero output row."""
    c = np.ravel(c_t)
    cc = float(np.vdot(c, c).real)
    if cc == 0:
        return np.zeros(A_t.shape[0], dtype=complex)
    return (A_t @ c.conj()) / cc


def spectral_floor(A_t: np.ndarray, c_t: np.ndarray) -> float:
    """Lower bound on sigma_max(A_t - L c_t) over all L.

    On ker(c) the gain has no effect, so sigma_max >= ||A_t P|| with P the
    orthogonal projector onto ker(c). The least-squares gain attains it.
    """
    c = np.ravel(c_t)
    k = A_t.shape[0]
    cc = float(np.vdot(c, c).real)
    if cc == 0:
        return spectral_norm(A_t)
    P = np.eye(k) - np.outer(c.conj(), c) / cc
    return spectral_norm(A_t @ P)


def _pattern_search(
    f: Callable[[np.ndarray], float],
    z0: np.ndarray,
    step: float,
    max_evals: int,
    min_step: float = 1e-12,
) -> tuple[np.ndarray, float, int]:
    """Compass search: try +/- step on each coordinate, halve the step on failure."""
    z = np.array(z0, dtype=float)
    fz = f(z)
    evals = 1
    while evals < max_evals and step > min_step:
        improved = False
        for k in range(z.size):
            for sgn in (1.0, -1.0):
                trial = z.copy()
                trial[k] += sgn * step
                ft = f(trial)
                evals += 1
                if ft < fz:
                    z, fz = trial, ft
                    improved = True
                    break
                if evals >= max_evals:
                    break
            if evals >= max_evals:
                break
        if not improved:
            step *= 0.5
    return z, fz, evals


def _to_real(L: np.ndarray) -> np.ndarray:
    return np.concatenate([L.real, L.imag])


def _to_complex(z: np.ndarray) -> np.ndarray:
    k = z.size // 2
    return z[:k] + 1j * z[k:]


def min_spectral_gain(
    A_t: np.ndarray,
    c_t: np.ndarray,
    *,
    starts: int = STARTS,
    max_evals: int = MAX_EVALS,
    seed: int = 0,
    certify: bool = True,
    raise_infeasible: bool = True,
) -> tuple[np.ndarray, float]:
    """Gain approximately minimizing sigma_max(A_t - L c_t).

    Multi-start compass search over the real and imaginary parts of L, started
    from the least-squares gain, L = 0 and random points. With ``certify`` the
    search ends as soon as a start reaches :func:`spectral_floor`, which is a
    proven lower bound.

    Raises Infeasible (carrying the best gain) when the result is not below
    ``1 / (2 sqrt(n_i) + 1)``.
    """
    A_t = np.atleast_2d(np.asarray(A_t, dtype=complex))
    k = A_t.shape[0]
    if k == 0:
        return np.zeros(0, dtype=complex), 0.0
    c = np.ravel(c_t).astype(complex)
    bound = feasibility_bound(k)
    floor = spectral_floor(A_t, c) if certify else -np.inf

    def sigma(z: np.ndarray) -> float:
        return spectral_norm(closed_loop(A_t, c, _to_complex(z)))

    L_ls = least_squares_gain(A_t, c)
    rng = np.random.default_rng(seed)
    scale = 1.0 + float(np.linalg.norm(L_ls))
    seeds = [L_ls, np.zeros(k, dtype=complex)]
    for _ in range(max(starts, 2) - 2):
        seeds.append(scale * (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2 * k))

    best_z, best_f = None, np.inf
    for L0 in seeds:
        z0 = _to_real(L0)
        if certify and sigma(z0) <= floor * (1 + 1e-12) + 1e-15:
            best_z, best_f = z0, sigma(z0)
            break
        z, fz, _ = _pattern_search(sigma, z0, step=max(0.5, float(np.linalg.norm(L0))), max_evals=max_evals)
        if fz < best_f:
            best_z, best_f = z, fz
        if certify and best_f <= floor * (1 + 1e-9) + 1e-15:
            break

    L = _to_complex(best_z)
    if raise_infeasible and not best_f < bound:
        raise Infeasible(
            f"min sigma_max = {best_f:.6g} is not below 1/(2 sqrt({k}) + 1) = {bound:.6g}",
            sigma=best_f,
            bound=bound,
            gain=L,
        )
    return L, best_f


@dataclass(frozen=True)
class GainDesign:
    L: np.ndarray
    sigma: float
    cost: float
    alpha: float
    beta: float
    A_tilde: np.ndarray
    C_tilde: np.ndarray
    sigma_star: float
    feasible: bool = True

    @property
    def n_i(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def bound(self) -> float:
        return feasibility_bound(self.n_i)


def gamma_cost(sigma: float, L_norm: float, n_i: int, B_w: float, B_v: float) -> float:
    """Smallest gamma satisfying the detector inequality for this gain."""
    denom = 1.0 - (2.0 * math.sqrt(n_i) + 1.0) * sigma
    if denom <= 0:
        return math.inf
    return (B_w + L_norm * B_v) / denom


def _min_norm_gain(A_t, c, budget: float, starts: Sequence[np.ndarray], max_evals: int,
                   rhos: Sequence[float]) -> np.ndarray:
    """Smallest ||L|| with sigma_max(A_t - L c) <= budget, by penalized compass search.

    The quadratic penalty weight runs through ``rhos`` (continuation), each
    stage warm-started from the last, which keeps every stage well scaled.
    """
    zero = np.zeros(A_t.shape[0], dtype=complex)
    if spectral_norm(A_t) <= budget:
        return zero
    base = 1.0 / max(budget, 1e-3) ** 2

    def objective_for(rho: float):
        def objective(z: np.ndarray) -> float:
            L = _to_complex(z)
            over = spectral_norm(closed_loop(A_t, c, L)) - budget
            return float(np.vdot(L, L).real) + (rho * over * over if over > 0 else 0.0)
        return objective

    z = min((_to_real(L0) for L0 in starts), key=objective_for(rhos[0] * base))
    for rho in rhos:
        scale = max(1e-2, float(np.linalg.norm(z)))
        z, _, _ = _pattern_search(objective_for(rho * base), z, step=0.1 * scale,
                                  max_evals=max_evals, min_step=1e-8 * scale)
    return _to_complex(z)


COARSE_RHOS = (1e2, 1e4)
FINE_RHOS = (1e2, 1e4, 1e6, 1e8)
COARSE_EVALS = 200


def design_gain(
    A_t: np.ndarray,
    c_t: np.ndarray,
    B_w: float,
    B_v: float,
    *,
    grid_points: int = GRID_POINTS,
    max_evals: int = MAX_EVALS,
    seed: int = 0,
    certify: bool = True,
) -> GainDesign:
    """Two-stage design: grid over sqrt(alpha), minimum-norm gain per grid point.

    The grid runs over ``[sigma_star, 1/(2 sqrt(n_i)+1))`` with a cheap inner
    solve; a finer grid between the neighbours of the best point is then
    solved with the full penalty continuation. Costs are always evaluated at
    the actual sigma of the returned gain. Returns the cheapest candidate.
    """
    A_t = np.atleast_2d(np.asarray(A_t, dtype=complex))
    c = np.ravel(c_t).astype(complex)
    n_i = A_t.shape[0]
    L_star, sigma_star = min_spectral_gain(A_t, c, seed=seed, max_evals=max_evals, certify=certify)
    bound = feasibility_bound(n_i)

    candidates: list[tuple[float, float, np.ndarray]] = []
    prev = L_star

    def evaluate(budgets: np.ndarray, warm: np.ndarray, rhos, evals: int) -> None:
        for s in budgets:
            L = _min_norm_gain(A_t, c, float(s), [L_star, warm], evals, rhos)
            warm = L
            sig = spectral_norm(closed_loop(A_t, c, L))
            cost = gamma_cost(sig, float(np.linalg.norm(L)), n_i, B_w, B_v)
            candidates.append((cost, float(s), L))

    coarse = np.linspace(sigma_star, bound, grid_points + 1)[:-1]
    evaluate(coarse, prev, COARSE_RHOS, min(COARSE_EVALS, max_evals))
    i_best = min(range(len(coarse)), key=lambda i: candidates[i][0])
    lo = coarse[max(i_best - 1, 0)]
    hi = coarse[i_best + 1] if i_best + 1 < len(coarse) else bound
    fine = np.linspace(lo, hi, FINE_POINTS + 2)[1:-1]
    evaluate(np.append(fine, coarse[i_best]), candidates[i_best][2], FINE_RHOS, max_evals)

    cost, s, L = min(candidates, key=lambda t: t[0])
    # the minimum spectral gain is itself a candidate (it may beat the penalized ones)
    cost_star = gamma_cost(sigma_star, float(np.linalg.norm(L_star)), n_i, B_w, B_v)
    if cost_star < cost:
        cost, s, L = cost_star, sigma_star, L_star
    if not math.isfinite(cost):
        raise Infeasible(f"no grid point gives a finite cost (sigma_star = {sigma_star:.6g})",
                         sigma=sigma_star, bound=bound, gain=L_star)
    sig = spectral_norm(closed_loop(A_t, c, L))
    return GainDesign(
        L=L,
        sigma=sig,
        cost=cost,
        alpha=s * s,
        beta=float(np.vdot(L, L).real),
        A_tilde=A_t,
        C_tilde=c[None, :],
        sigma_star=sigma_star,
    )


def stabilizing_gain(A_t: np.ndarray, c_t: np.ndarray, q: float, r: float) -> np.ndarray:
    """Steady-state Kalman gain for ``(A_t, c_t)`` with weights ``q I`` and ``r``.

    Used for sensors where no gain meets the detector inequality: the observer
    is still stable, just without the no-false-trigger certificate.
    """
    A_t = np.atleast_2d(np.asarray(A_t, dtype=complex))
    k = A_t.shape[0]
    c = np.atleast_2d(np.ravel(c_t)).astype(complex)
    q = max(q, 1e-300)
    R = np.array([[max(r, 1e-300)]], dtype=complex)
    P = scipy.linalg.solve_discrete_are(A_t.conj().T, c.conj().T, q * np.eye(k), R)
    S = (c @ P @ c.conj().T + R)[0, 0]
    return (A_t @ P @ c.conj().T)[:, 0] / S


def verify_inequality(L, gamma: float, A_t, c_t, B_w: float, B_v: float) -> bool:
    """Detector inequality for one sensor, including the side condition on gamma."""
    A_t = np.atleast_2d(np.asarray(A_t, dtype=complex))
    n_i = A_t.shape[0]
    L = np.ravel(L)
    slack = gamma - B_w - float(np.linalg.norm(L)) * B_v
    if slack < -INEQ_RTOL * max(1.0, abs(gamma)) or gamma <= 0:
        return False
    sigma = spectral_norm(closed_loop(A_t, c_t, L))
    rhs = max(slack, 0.0) / ((2.0 * math.sqrt(n_i) + 1.0) * gamma)
    return sigma <= rhs + INEQ_RTOL * max(1.0, rhs)


@dataclass(frozen=True)
class DetectorConfig:
    gamma: float
    thresholds: np.ndarray
    inequality_ok: tuple[bool | None, ...]

    @property
    def all_verified(self) -> bool:
        return all(v is not False for v in self.inequality_ok)


def detector_for(designs: Sequence[GainDesign | None], gamma: float, B_w: float, B_v: float) -> DetectorConfig:
    thresholds = np.array(
        [(math.sqrt(d.n_i) + 1.0) * gamma if d is not None else np.nan for d in designs]
    )
    verdicts = tuple(
        None if d is None else verify_inequality(d.L, gamma, d.A_tilde, d.C_tilde, B_w, B_v)
        for d in designs
    )
    return DetectorConfig(gamma=float(gamma), thresholds=thresholds, inequality_ok=verdicts)


def compute_gamma(designs: Sequence[GainDesign | None], B_w: float, B_v: float) -> DetectorConfig:
    """gamma = max cost over sensors; re-checks the inequality for each one."""
    active = [d for d in designs if d is not None]
    if not active:
        raise ValueError("no sensor has a nonempty observable subspace")
    gamma = max(d.cost for d in active)
    det = detector_for(designs, gamma, B_w, B_v)
    for i, ok in enumerate(det.inequality_ok):
        if ok is False:
            raise InequalityViolated(f"detector inequality fails for sensor {i} at gamma = {gamma:.6g}", sensor=i)
    return det


def local_pairing(Q: Sequence[int], state_perm: np.ndarray | None) -> np.ndarray | None:
    """Conjugate pairing restricted to one sensor's coordinates, if closed."""
    if state_perm is None:
        return None
    pos = {j: k for k, j in enumerate(Q)}
    out = []
    for j in Q:
        partner = int(state_perm[j])
        if partner not in pos:
            return None
        out.append(pos[partner])
    return np.array(out, dtype=int)


def symmetrize(L: np.ndarray, perm: np.ndarray | None) -> np.ndarray:
    """Average L with its conjugate-permuted copy so real inputs give real estimates."""
    if perm is None:
        return L
    return 0.5 * (L + np.conj(L[perm]))


@dataclass(frozen=True)
class GainSet:
    designs: tuple[GainDesign | None, ...]
    detector: DetectorConfig | None
    infeasible: tuple[int, ...]

    @property
    def gains(self) -> list[np.ndarray | None]:
        return [None if d is None else d.L for d in self.designs]


def design_all(
    decs,
    B_w: float,
    B_v: float,
    *,
    gamma: float | None = None,
    state_perm: np.ndarray | None = None,
    fallback: bool = True,
    seed: int = 0,
    grid_points: int = GRID_POINTS,
    max_evals: int = MAX_EVALS,
) -> GainSet:
    """Design every sensor's gain and the detector.

    Sensors that fail the feasibility test get a stabilizing Kalman-type gain
    (``fallback``) whose measurement weight is the noise variance split across
    all sensors, so that summing the local corrections stays stable. Without
    an explicit ``gamma`` the detector is only produced when all sensors are
    feasible.
    """
    m = len(decs)
    designs: list[GainDesign | None] = []
    infeasible: list[int] = []
    for dec in decs:
        if dec.n_i == 0:
            designs.append(None)
            continue
        A_t, c_t = dec.A_tilde, dec.C_tilde
        perm = local_pairing(dec.Q, state_perm)
        if perm is not None and not (
            np.allclose(np.ravel(c_t)[perm], np.conj(np.ravel(c_t)), atol=1e-10)
            and np.allclose(A_t[np.ix_(perm, perm)], np.conj(A_t), atol=1e-10)
        ):
            perm = None
        try:
            d = design_gain(A_t, c_t, B_w, B_v, seed=seed + dec.sensor,
                            grid_points=grid_points, max_evals=max_evals)
        except Infeasible as exc:
            infeasible.append(dec.sensor)
            log.info("sensor %d infeasible: sigma* = %.4g, bound = %.4g", dec.sensor, exc.sigma, exc.bound)
            if not fallback:
                designs.append(None)
                continue
            L = stabilizing_gain(A_t, c_t, B_w**2, m * B_v**2)
            L = symmetrize(L, perm)
            sig = spectral_norm(closed_loop(A_t, c_t, L))
            designs.append(GainDesign(
                L=L, sigma=sig,
                cost=gamma_cost(sig, float(np.linalg.norm(L)), dec.n_i, B_w, B_v),
                alpha=sig * sig, beta=float(np.vdot(L, L).real),
                A_tilde=A_t, C_tilde=np.atleast_2d(c_t), sigma_star=float(exc.sigma), feasible=False,
            ))
            continue
        if perm is not None:
            L = symmetrize(d.L, perm)
            sig = spectral_norm(closed_loop(A_t, c_t, L))
            d = replace(d, L=L, sigma=sig, beta=float(np.vdot(L, L).real),
                        cost=gamma_cost(sig, float(np.linalg.norm(L)), dec.n_i, B_w, B_v))
        designs.append(d)

    if gamma is not None:
        detector = detector_for(designs, gamma, B_w, B_v)
        failing = [i for i, ok in enumerate(detector.inequality_ok) if ok is False]
        if failing:
            log.warning("gamma = %.4g does not satisfy the detector inequality for %d sensor(s): %s",
                        gamma, len(failing), failing)
    elif infeasible:
        detector = None
    else:
        detector = compute_gamma(designs, B_w, B_v)
    return GainSet(designs=tuple(designs), detector=detector, infeasible=tuple(infeasible))


def gains_to_dict(gs: GainSet, decs) -> dict:
    sensors = []
    for dec, d in zip(decs, gs.designs):
        entry = {"sensor": dec.sensor, "Q": list(dec.Q), "n_i": dec.n_i}
        if d is not None:
            entry.update(
                L=[[float(v.real), float(v.imag)] for v in d.L],
                sigma=d.sigma,
                sigma_star=d.sigma_star,
                bound=d.bound,
                cost=d.cost if math.isfinite(d.cost) else None,
                feasible=d.feasible,
            )
        sensors.append(entry)
    det = gs.detector
    return {
        "sensors": sensors,
        "gamma": None if det is None else det.gamma,
        "thresholds": None if det is None else [None if np.isnan(t) else float(t) for t in det.thresholds],
        "inequality_verdicts": None if det is None else list(det.inequality_ok),
        "infeasible": list(gs.infeasible),
    }


def gains_from_dict(data: dict, decs) -> list[np.ndarray | None]:
    """Gain vectors from a gains file, checked against the decomposition."""
    entries = data.get("sensors")
    if not isinstance(entries, list) or len(entries) != len(decs):
        raise ValueError(f"gains file lists {len(entries or [])} sensors, system has {len(decs)}")
    out: list[np.ndarray | None] = []
    for dec, e in zip(decs, entries):
        if list(e.get("Q", [])) != list(dec.Q):
            raise ValueError(f"sensor {dec.sensor}: gains file Q {e.get('Q')} differs from system Q {list(dec.Q)}")
        if dec.n_i == 0:
            out.append(None)
            continue
        try:
            L = np.array([complex(v) if isinstance(v, (int, float)) else complex(*v) for v in e["L"]])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"sensor {dec.sensor}: gain entries must be numbers or [re, im] pairs") from exc
        if L.size != dec.n_i:
            raise ValueError(f"sensor {dec.sensor}: gain has {L.size} entries, expected {dec.n_i}")
        out.append(L)
    return out
