"""Linearized swing-dynamics model of the 14-bus benchmark."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg

from secest.model import ModalMode, RawSystem, SystemModel

N_BUS = 14
SENSORS_PER_BUS = 4
VARIANTS = ("damped", "grounded")


@dataclass(frozen=True)
class Ieee14Params:
    inertia: np.ndarray
    damping: np.ndarray
    branches: tuple[tuple[int, int, float], ...]  # (bus, bus, reactance)
    power: np.ndarray
    sample_time: float = 0.01
    B_w: float = 1e-3
    B_v: float = 1e-2
    generator_buses: tuple[int, ...] = (1, 2, 3, 6, 8)
    load_buses: tuple[int, ...] = (2, 3, 4, 5, 6, 9, 10, 11, 12, 13, 14)
    coupling_scale: float = 1.0
    variant: str = "damped"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("inertia", "damping", "power"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (N_BUS,):
                raise ValueError(f"{name} must have {N_BUS} entries, got shape {v.shape}")
            object.__setattr__(self, name, v)
        if (self.inertia <= 0).any():
            raise ValueError("every bus needs positive inertia")
        if (self.damping < 0).any():
            raise ValueError("damping must be nonnegative")
        for i, j, x in self.branches:
            if not (1 <= i <= N_BUS and 1 <= j <= N_BUS and i != j):
                raise ValueError(f"bad branch ({i}, {j})")
            if not x > 0:
                raise ValueError(f"branch ({i}, {j}) needs positive reactance, got {x}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def susceptance(self) -> np.ndarray:
        """Symmetric matrix of t_ij = 1/x_ij (zero off the topology)."""
        t = np.zeros((N_BUS, N_BUS))
        for i, j, x in self.branches:
            t[i - 1, j - 1] += self.coupling_scale / x
            t[j - 1, i - 1] += self.coupling_scale / x
        return t


def default_params(**overrides) -> Ieee14Params:
    text = resources.files("secest").joinpath("data/ieee14.json").read_text()
    return replace(params_from_dict(json.loads(text)), **overrides)


def params_from_dict(d: dict) -> Ieee14Params:
    return Ieee14Params(
        inertia=np.array(d["inertia"], dtype=float),
        damping=np.array(d["damping"], dtype=float),
        branches=tuple((int(i), int(j), float(x)) for i, j, x in d["branches"]),
        power=np.array(d["power"], dtype=float),
        sample_time=float(d.get("sample_time", 0.01)),
        B_w=float(d.get("B_w", 1e-3)),
        B_v=float(d.get("B_v", 1e-2)),
        generator_buses=tuple(d.get("generator_buses", (1, 2, 3, 6, 8))),
        load_buses=tuple(d.get("load_buses", (2, 3, 4, 5, 6, 9, 10, 11, 12, 13, 14))),
        variant=d.get("variant", "damped"),
    )


def load_params(path: str | Path) -> Ieee14Params:
    return params_from_dict(json.loads(Path(path).read_text()))


def continuous_matrices(params: Ieee14Params) -> tuple[np.ndarray, np.ndarray]:
    """State (theta_1, omega_1, ..., theta_14, omega_14); input is P per bus."""
    t = params.susceptance
    lap = np.diag(t.sum(axis=1)) - t
    minv = 1.0 / params.inertia
    n = 2 * N_BUS
    A = np.zeros((n, n))
    B = np.zeros((n, N_BUS))
    th = np.arange(N_BUS) * 2
    om = th + 1
    A[th, om] = 1.0
    A[np.ix_(om, th)] = -minv[:, None] * lap
    A[om, om] = -minv * params.damping
    B[om, np.arange(N_BUS)] = minv
    return A, B


def swing_matrices(params: Ieee14Params) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of :func:`continuous_matrices`."""
    Ac, Bc = continuous_matrices(params)
    n, k = Bc.shape
    M = np.zeros((n + k, n + k))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = scipy.linalg.expm(M * params.sample_time)
    return E[:n, :n], E[:n, n:]


def output_matrices(params: Ieee14Params) -> tuple[np.ndarray, np.ndarray]:
    """Per bus: electrical power, angle, and two frequency sensors."""
    C = np.zeros((SENSORS_PER_BUS * N_BUS, 2 * N_BUS))
    D = np.zeros((SENSORS_PER_BUS * N_BUS, N_BUS))
    loads = set(params.load_buses)
    for b in range(N_BUS):
        r = SENSORS_PER_BUS * b
        C[r, 2 * b + 1] = params.damping[b]
        if b + 1 in loads:
            D[r, b] = 1.0
        C[r + 1, 2 * b] = 1.0
        C[r + 2, 2 * b + 1] = 1.0
        C[r + 3, 2 * b + 1] = 1.0
    return C, D


def _ground(A: np.ndarray, B: np.ndarray, C: np.ndarray):
    """Replace angles by angles relative to bus 1 and drop theta_1."""
    n = A.shape[0]
    # x = S z with z = (omega_1, theta_2 - theta_1, omega_2, ...); theta_1 is not tracked
    S = np.zeros((n, n - 1))
    S[1:, :] = np.eye(n - 1)
    P = np.eye(n)[1:, :].copy()
    th = np.arange(2, n, 2)
    P[th - 1, 0] = -1.0
    return P @ A @ S, P @ B, C @ S


def build_raw(params: Ieee14Params | None = None) -> RawSystem:
    params = params or default_params()
    A, B = swing_matrices(params)
    C, D = output_matrices(params)
    if params.variant == "grounded":
        # only exact when the dynamics do not depend on the absolute angle
        A, B, C = _ground(A, B, C)
    return RawSystem(A=A, C=C, B_w=params.B_w, B_v=params.B_v, sample_time=params.sample_time, B_u=B, D_u=D)


def build_ieee14(params: Ieee14Params | None = None, p: int = 0) -> SystemModel:
    return SystemModel.build(build_raw(params), ModalMode.DIAGONALIZE, p=p)


def steady_state(params: Ieee14Params, x0: np.ndarray) -> np.ndarray:
    """Limit of the noise-free trajectory under the constant input ``params.power``.

    With balanced injections the frequencies settle to zero and the angles to
    the solution of ``lap theta = P`` fixed by the conserved quantity
    ``sum_i (m_i omega_i + D_i theta_i)``.
    """
    if abs(params.power.sum()) > 1e-9:
        raise ValueError("steady state needs balanced injections (sum of P = 0)")
    t = params.susceptance
    lap = np.diag(t.sum(axis=1)) - t
    m, d = params.inertia, params.damping
    x0 = np.asarray(x0, dtype=float)
    invariant = m @ x0[1::2] + d @ x0[0::2]
    K = np.vstack([lap, d[None, :]])
    rhs = np.append(params.power, invariant)
    theta = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = np.zeros(2 * N_BUS)
    x[0::2] = theta
    return x


def bus_states(bus: int, variant: str = "damped") -> tuple[int, int]:
    """(theta, omega) state indices of 1-based ``bus``.

    In the grounded variant every index shifts down by one and bus 1 has no
    angle state (reported as -1).
    """
    th, om = 2 * (bus - 1), 2 * (bus - 1) + 1
    if variant == "grounded":
        return th - 1, om - 1
    return th, om
