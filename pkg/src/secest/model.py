"""Plant representation and modal (Jordan-form) coordinates.

All estimation runs in modal coordinates ``x_modal = T @ x_real`` where
``T @ A_real @ inv(T)`` is in Jordan canonical form. General real matrices are
only accepted when they are diagonalizable with simple eigenvalues; nontrivial
Jordan blocks must be supplied already in Jordan form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from secest import config
from secest.errors import (
    DefectiveMatrix,
    IllConditioned,
    InvalidSystem,
    NotJordanForm,
    NotObservable,
    UnpairedComplexBlock,
)

# eigenvalues closer than this (relative to ||A||) are treated as repeated;
# a defective pair splits by ~sqrt(eps) so the zero tolerance is too tight here
EIG_GAP_TOL = 1e-6


@dataclass(frozen=True)
class RawSystem:
    """Real (or, for already-Jordan inputs, complex) plant matrices.

    ``B_u`` and ``D_u`` describe an optional known input ``u`` entering as
    ``x+ = A x + B_u u + w`` and ``y = C x + D_u u + v + a``.
    """

    A: np.ndarray
    C: np.ndarray
    B_w: float
    B_v: float
    sample_time: float = 1.0
    B_u: np.ndarray | None = None
    D_u: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A))
        C = np.atleast_2d(np.asarray(self.C))
        A = A.astype(complex if np.iscomplexobj(A) else float)
        C = C.astype(complex if np.iscomplexobj(C) else float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        n = A.shape[0]
        if n < 1 or A.shape != (n, n):
            raise InvalidSystem(f"A must be square and non-empty, got shape {A.shape}")
        if C.shape[0] < 1 or C.shape[1] != n:
            raise InvalidSystem(f"C must be m x {n} with m >= 1, got shape {C.shape}")
        if not (self.B_w >= 0 and self.B_v >= 0):
            raise InvalidSystem(f"noise bounds must be nonnegative, got B_w={self.B_w}, B_v={self.B_v}")
        if not self.sample_time > 0:
            raise InvalidSystem(f"sample_time must be positive, got {self.sample_time}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(C))):
            raise InvalidSystem("A and C must be finite")
        if self.B_u is None and self.D_u is not None:
            raise InvalidSystem("D_u given without B_u")
        if self.B_u is not None:
            B_u = np.asarray(self.B_u, dtype=float).reshape(n, -1)
            q = B_u.shape[1]
            D_u = np.zeros((C.shape[0], q)) if self.D_u is None else np.asarray(self.D_u, dtype=float)
            if D_u.shape != (C.shape[0], q):
                raise InvalidSystem(f"D_u must be {C.shape[0]} x {q}, got {D_u.shape}")
            object.__setattr__(self, "B_u", B_u)
            object.__setattr__(self, "D_u", D_u)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def is_real(self) -> bool:
        return not (np.iscomplexobj(self.A) or np.iscomplexobj(self.C))


@dataclass(frozen=True)
class ValidationReport:
    observable: bool
    rank: int
    eigenvalues: np.ndarray
    algebraic_multiplicity: tuple[int, ...]
    geometric_multiplicity: tuple[int, ...]

    @property
    def nonderogatory(self) -> bool:
        """Every eigenvalue has geometric multiplicity 1."""
        return all(g == 1 for g in self.geometric_multiplicity)

    @property
    def valid(self) -> bool:
        return self.observable and self.nonderogatory

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "rank": self.rank,
            "eigenvalues": [_encode_scalar(v) for v in self.eigenvalues],
            "algebraic_multiplicity": list(self.algebraic_multiplicity),
            "geometric_multiplicity": list(self.geometric_multiplicity),
            "nonderogatory": self.nonderogatory,
        }


def stacked_observability(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """[C; CA; ...; CA^(n-1)]."""
    n = A.shape[0]
    C = np.atleast_2d(C)
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def numerical_rank(M: np.ndarray, rtol: float | None = None) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0:
        return 0
    rtol = config.zero_tol() if rtol is None else rtol
    return int(np.sum(sv > rtol * sv[0]))


def _cluster_eigenvalues(ev: np.ndarray, tol: float) -> list[list[int]]:
    clusters: list[list[int]] = []
    for k in np.argsort(-np.abs(ev), kind="stable"):
        for cl in clusters:
            if abs(ev[cl[0]] - ev[k]) <= tol:
                cl.append(int(k))
                break
        else:
            clusters.append([int(k)])
    return clusters


def validate_raw(raw: RawSystem) -> ValidationReport:
    """Observability rank plus algebraic/geometric eigenvalue multiplicities."""
    A, C = raw.A, raw.C
    n = raw.n
    rank = numerical_rank(stacked_observability(A, C))
    ev = np.linalg.eigvals(A)
    scale = max(1.0, float(np.linalg.norm(A, np.inf)))
    clusters = _cluster_eigenvalues(ev, EIG_GAP_TOL * scale)
    distinct, alg, geo = [], [], []
    for cl in clusters:
        lam = ev[cl].mean()
        distinct.append(lam)
        alg.append(len(cl))
        shifted = A - lam * np.eye(n)
        sv = np.linalg.svd(shifted, compute_uv=False)
        # same threshold as the clustering: anything farther is a distinct eigenvalue
        null = int(np.sum(sv <= EIG_GAP_TOL * scale))
        geo.append(max(1, null))
    return ValidationReport(
        observable=rank == n,
        rank=rank,
        eigenvalues=np.asarray(distinct),
        algebraic_multiplicity=tuple(alg),
        geometric_multiplicity=tuple(geo),
    )


class ModalMode(str, Enum):
    ALREADY_JORDAN = "already_jordan"
    DIAGONALIZE = "diagonalize"


@dataclass(frozen=True)
class JordanBlock:
    eigenvalue: complex
    indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ModalSystem:
    A: np.ndarray
    C: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    blocks: tuple[JordanBlock, ...]
    mode: ModalMode = ModalMode.DIAGONALIZE

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.T))

    def to_modal_coords(self, x_real: np.ndarray) -> np.ndarray:
        return self.T @ np.asarray(x_real)

    def to_physical(self, x_modal: np.ndarray) -> tuple[np.ndarray, float]:
        """Real part of ``inv(T) @ x_modal`` and the discarded imaginary residue."""
        z = self.T_inv @ x_modal
        resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
        return z.real.copy(), resid


def _check_jordan(A: np.ndarray) -> tuple[np.ndarray, tuple[JordanBlock, ...]]:
    n = A.shape[0]
    tol = config.scaled_tol(A)
    off = A.copy()
    idx = np.arange(n)
    off[idx, idx] = 0
    if n > 1:
        off[idx[:-1], idx[1:]] = 0
    if np.any(np.abs(off) >= tol):
        i, j = np.argwhere(np.abs(off) >= tol)[0]
        raise NotJordanForm(f"entry ({i}, {j}) = {A[i, j]} is outside the bidiagonal band")
    sup = np.diag(A, 1) if n > 1 else np.zeros(0)
    links = []
    for k, s in enumerate(sup):
        if abs(s) < tol:
            links.append(False)
        elif abs(s - 1) < tol:
            if abs(A[k, k] - A[k + 1, k + 1]) >= tol:
                raise NotJordanForm(f"superdiagonal 1 at ({k}, {k + 1}) joins different eigenvalues")
            links.append(True)
        else:
            raise NotJordanForm(f"superdiagonal entry ({k}, {k + 1}) = {s} is neither 0 nor 1")

    blocks = []
    start = 0
    for k in range(n):
        if k == n - 1 or not links[k]:
            members = tuple(range(start, k + 1))
            lam = complex(np.mean(np.diag(A)[start : k + 1]))
            blocks.append(JordanBlock(lam, members))
            start = k + 1
    for a in range(len(blocks)):
        for b in range(a + 1, len(blocks)):
            if abs(blocks[a].eigenvalue - blocks[b].eigenvalue) < tol:
                raise NotJordanForm(
                    f"eigenvalue {blocks[a].eigenvalue} appears in two blocks "
                    "(geometric multiplicity > 1)"
                )

    clean = np.zeros((n, n), dtype=complex if np.iscomplexobj(A) else float)
    for blk in blocks:
        for pos, j in enumerate(blk.indices):
            clean[j, j] = blk.eigenvalue if np.iscomplexobj(clean) else blk.eigenvalue.real
            if pos + 1 < blk.size:
                clean[j, j + 1] = 1
    return clean, tuple(blocks)


def _modal_order(ev: np.ndarray) -> np.ndarray:
    # descending modulus, conjugates adjacent, negative phase first
    mod = np.round(np.abs(ev), 12)
    ph = np.angle(ev)
    ph = np.where(np.abs(ev.imag) <= config.zero_tol() * np.maximum(1.0, np.abs(ev)), 0.0, ph)
    return np.lexsort((ph, np.round(np.abs(ph), 12), -mod))


def to_modal(
    raw: RawSystem,
    mode: ModalMode | str = ModalMode.DIAGONALIZE,
    cond_limit: float = config.DEFAULT_COND_LIMIT,
) -> ModalSystem:
    mode = ModalMode(mode)
    n = raw.n
    if mode is ModalMode.ALREADY_JORDAN:
        A_modal, blocks = _check_jordan(raw.A)
        eye = np.eye(n)
        return ModalSystem(
            A=A_modal.astype(complex),
            C=raw.C.astype(complex),
            T=eye.astype(complex),
            T_inv=eye.astype(complex),
            blocks=blocks,
            mode=mode,
        )

    ev, V = np.linalg.eig(raw.A)
    scale = max(1.0, float(np.linalg.norm(raw.A, np.inf)))
    gaps = np.abs(ev[:, None] - ev[None, :])
    np.fill_diagonal(gaps, np.inf)
    if n > 1 and gaps.min() <= EIG_GAP_TOL * scale:
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        raise DefectiveMatrix(
            f"eigenvalues {ev[i]:.6g} and {ev[j]:.6g} coincide; supply A in Jordan form instead"
        )
    order = _modal_order(ev)
    ev = ev[order]
    V = V[:, order].astype(complex)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditioned(f"eigenvector matrix condition number {cond:.3g} exceeds {cond_limit:.3g}")
    T = np.linalg.solve(V, np.eye(n))
    real_tol = config.zero_tol() * np.maximum(1.0, np.abs(ev))
    ev = np.where(np.abs(ev.imag) <= real_tol, ev.real + 0j, ev)
    blocks = tuple(JordanBlock(complex(lam), (k,)) for k, lam in enumerate(ev))
    return ModalSystem(
        A=np.diag(ev),
        C=raw.C @ V,
        T=T,
        T_inv=V,
        blocks=blocks,
        mode=mode,
    )


def _is_real_eigenvalue(lam: complex) -> bool:
    return abs(lam.imag) <= config.zero_tol() * max(1.0, abs(lam))


def conjugate_pairing(modal: ModalSystem) -> dict[int, int]:
    """Map each block index to the block holding the conjugate eigenvalue."""
    blocks = modal.blocks
    pairs: dict[int, int] = {}
    for a, blk in enumerate(blocks):
        if _is_real_eigenvalue(blk.eigenvalue):
            pairs[a] = a
            continue
        target = blk.eigenvalue.conjugate()
        tol = config.zero_tol() * max(1.0, abs(target)) * 1e3
        match = [
            b
            for b, other in enumerate(blocks)
            if b != a and other.size == blk.size and abs(other.eigenvalue - target) <= tol
        ]
        if len(match) != 1:
            raise UnpairedComplexBlock(f"block {a} (eigenvalue {blk.eigenvalue}) has no unique conjugate partner")
        pairs[a] = match[0]
    for a, b in pairs.items():
        if pairs[b] != a:
            raise UnpairedComplexBlock(f"pairing is not an involution at block {a}")
    return pairs


def state_pairing(modal: ModalSystem) -> np.ndarray:
    """State-index permutation induced by conjugate_pairing."""
    perm = np.arange(modal.n)
    for a, b in conjugate_pairing(modal).items():
        for ja, jb in zip(modal.blocks[a].indices, modal.blocks[b].indices):
            perm[ja] = jb
    return perm


@dataclass(frozen=True)
class SystemModel:
    raw: RawSystem
    modal: ModalSystem
    p: int = 0
    report: ValidationReport | None = field(default=None, compare=False)

    @classmethod
    def build(
        cls,
        raw: RawSystem,
        mode: ModalMode | str = ModalMode.DIAGONALIZE,
        p: int = 0,
        cond_limit: float = config.DEFAULT_COND_LIMIT,
    ) -> "SystemModel":
        from secest.subspace import coverage, decompose, sparse_observability_index

        report = validate_raw(raw)
        if not report.nonderogatory:
            if not report.observable:
                raise NotObservable(f"(A, C) is not observable: rank {report.rank} < n = {raw.n}")
            raise DefectiveMatrix("some eigenvalue has geometric multiplicity > 1")
        modal = to_modal(raw, mode, cond_limit=cond_limit)
        if not report.observable:
            uncovered = coverage(decompose(modal), modal.n).uncovered
            raise NotObservable(
                f"(A, C) is not observable: rank {report.rank} < n = {raw.n}; "
                f"modal state indices seen by no sensor: {list(uncovered)}",
                uncovered=uncovered,
            )
        if p < 0:
            raise InvalidSystem(f"p must be nonnegative, got {p}")
        s_max = sparse_observability_index(coverage(decompose(modal), modal.n))
        if p > s_max:
            raise InvalidSystem(f"attack budget p = {p} exceeds the redundancy index {s_max}")
        return cls(raw=raw, modal=modal, p=int(p), report=report)

    @property
    def n(self) -> int:
        return self.raw.n

    @property
    def m(self) -> int:
        return self.raw.m

    @property
    def process_noise_bound(self) -> float:
        """Bound on ||T w||_2, the process noise as seen in modal coordinates."""
        return float(np.linalg.norm(self.modal.T, 2)) * self.raw.B_w

    @property
    def input_modal(self) -> np.ndarray | None:
        if self.raw.B_u is None:
            return None
        return self.modal.T @ self.raw.B_u


# --- JSON encoding -----------------------------------------------------------


def _encode_scalar(v) -> Any:
    v = complex(v)
    if v.imag == 0:
        return float(v.real)
    return [float(v.real), float(v.imag)]


def encode_matrix(M: np.ndarray) -> list:
    M = np.asarray(M)
    if not np.iscomplexobj(M) or np.all(M.imag == 0):
        return np.real(M).tolist()
    if M.ndim == 1:
        return [_encode_scalar(v) for v in M]
    return [[_encode_scalar(v) for v in row] for row in M]


def _decode_entry(v) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(e, (int, float)) for e in v):
        return complex(v[0], v[1])
    raise InvalidSystem(f"matrix entry must be a number or an [re, im] pair, got {v!r}")


def decode_matrix(rows: Sequence) -> np.ndarray:
    if not isinstance(rows, (list, tuple)) or not rows:
        raise InvalidSystem("matrix must be a non-empty list of rows")
    data = []
    for r in rows:
        if not isinstance(r, (list, tuple)) or not r:
            raise InvalidSystem(f"matrix row must be a non-empty list, got {r!r}")
        data.append([_decode_entry(v) for v in r])
    widths = {len(r) for r in data}
    if len(widths) != 1:
        raise InvalidSystem("matrix rows have unequal lengths")
    M = np.array(data, dtype=complex)
    return M.real.copy() if np.all(M.imag == 0) else M


@dataclass(frozen=True)
class SystemSpec:
    """Parsed contents of a system file."""

    raw: RawSystem
    mode: ModalMode
    p: int
    u: np.ndarray | None = None
    x0: np.ndarray | None = None


def _vector(data: Mapping[str, Any], key: str, size: int) -> np.ndarray | None:
    if data.get(key) is None:
        return None
    v = np.asarray(data[key], dtype=float)
    if v.shape != (size,):
        raise InvalidSystem(f"{key} must have {size} entries, got shape {v.shape}")
    return v


def system_from_dict(data: Mapping[str, Any]) -> SystemSpec:
    missing = [k for k in ("A", "C") if k not in data]
    if missing:
        raise InvalidSystem(f"system file is missing {', '.join(missing)}")
    mode = ModalMode(data.get("modal_mode", "diagonalize"))
    A = decode_matrix(data["A"])
    C = decode_matrix(data["C"])
    if mode is ModalMode.DIAGONALIZE and (np.iscomplexobj(A) or np.iscomplexobj(C)):
        raise InvalidSystem("complex entries are only accepted with modal_mode 'already_jordan'")
    raw = RawSystem(
        A=A,
        C=C,
        B_w=float(data.get("B_w", 0.0)),
        B_v=float(data.get("B_v", 0.0)),
        sample_time=float(data.get("Ts", 1.0)),
        B_u=None if data.get("B_u") is None else decode_matrix(data["B_u"]).real,
        D_u=None if data.get("D_u") is None else decode_matrix(data["D_u"]).real,
    )
    p = data.get("p", 0)
    if not isinstance(p, int) or isinstance(p, bool):
        raise InvalidSystem(f"p must be an integer, got {p!r}")
    u = _vector(data, "u", raw.B_u.shape[1]) if raw.B_u is not None else None
    return SystemSpec(raw=raw, mode=mode, p=p, u=u, x0=_vector(data, "x0", raw.n))


def system_to_dict(raw: RawSystem, mode: ModalMode | str = ModalMode.DIAGONALIZE, p: int = 0,
                   u: np.ndarray | None = None, x0: np.ndarray | None = None) -> dict:
    out = {
        "A": encode_matrix(raw.A),
        "C": encode_matrix(raw.C),
        "B_w": raw.B_w,
        "B_v": raw.B_v,
        "Ts": raw.sample_time,
        "p": p,
        "modal_mode": ModalMode(mode).value,
    }
    if raw.B_u is not None:
        out["B_u"] = encode_matrix(raw.B_u)
    if raw.D_u is not None:
        out["D_u"] = encode_matrix(raw.D_u)
    if u is not None:
        out["u"] = [float(v) for v in u]
    if x0 is not None:
        out["x0"] = [float(v) for v in x0]
    return out


def load_system(path: str | Path) -> SystemSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSystem(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidSystem(f"{path}: top level must be an object")
    return system_from_dict(data)
