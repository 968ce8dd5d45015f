import numpy as np
import pytest

from secest.model import RawSystem, SystemModel

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record():
    """Store a one-line verdict for an acceptance criterion."""

    def _record(criterion: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


def jordan_example(lam1=0.5, lam2=0.3):
    """Three states: a simple eigenvalue and a size-2 Jordan block, two sensors."""
    A = np.array([[lam1, 0, 0], [0, lam2, 1.0], [0, 0, lam2]])
    C = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    return RawSystem(A=A, C=C, B_w=1e-3, B_v=1e-2)


def random_jordan(rng, n_max=6, m_max=8, zero_prob=0.35):
    """Random modal pair: real and conjugate-pair eigenvalues, blocks of size <= 2.

    Columns of C respect the conjugate pairing, so the pair is a modal form of
    some real system. Eigenvalues are kept apart so ranks are well conditioned.
    """
    while True:
        n_target = int(rng.integers(1, n_max + 1))
        blocks = []  # (eigenvalue, size, partner offset)
        used = []
        size_left = n_target
        while size_left > 0:
            kind = rng.choice(["real", "pair"]) if size_left >= 2 else "real"
            bsize = int(rng.integers(1, 3))
            need = bsize * (2 if kind == "pair" else 1)
            if need > size_left:
                bsize = 1
                need = 2 if kind == "pair" else 1
                if need > size_left:
                    kind, need = "real", 1
            for _ in range(100):
                r = rng.uniform(0.2, 0.95)
                if kind == "real":
                    lam = complex(r * rng.choice([-1, 1]))
                else:
                    lam = r * np.exp(1j * rng.uniform(0.3, 2.8))
                if all(abs(lam - u) > 0.15 and abs(lam.conjugate() - u) > 0.15 for u in used):
                    break
            used.append(lam)
            if kind == "real":
                blocks.append((lam, bsize))
            else:
                blocks.append((lam, bsize))
                blocks.append((lam.conjugate(), bsize))
            size_left -= need
        n = sum(b for _, b in blocks)
        A = np.zeros((n, n), dtype=complex)
        idx = 0
        starts = []
        for lam, b in blocks:
            starts.append(idx)
            for t in range(b):
                A[idx + t, idx + t] = lam
                if t + 1 < b:
                    A[idx + t, idx + t + 1] = 1.0
            idx += b
        m = int(rng.integers(1, m_max + 1))
        C = np.zeros((m, n), dtype=complex)
        k = 0
        while k < len(blocks):
            lam, b = blocks[k]
            s = starts[k]
            block_cols = rng.standard_normal((m, b)) + (1j * rng.standard_normal((m, b)) if lam.imag else 0)
            block_cols[rng.random((m, b)) < zero_prob] = 0
            C[:, s: s + b] = block_cols
            if lam.imag:
                s2 = starts[k + 1]
                C[:, s2: s2 + b] = np.conj(block_cols)
                k += 2
            else:
                k += 1
        return A, C


def random_real_system(rng, n_max=5, m_max=6, zero_prob=0.4):
    """Real (A, C) with simple real eigenvalues hidden by a random similarity."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    ev = np.sort(rng.uniform(-0.95, 0.95, n))
    while n > 1 and np.diff(ev).min() < 0.1:
        ev = np.sort(rng.uniform(-0.95, 0.95, n))
    Cm = rng.standard_normal((m, n))
    Cm[rng.random((m, n)) < zero_prob] = 0
    S = rng.standard_normal((n, n)) + 2 * np.eye(n)
    A = S @ np.diag(ev) @ np.linalg.inv(S)
    C = Cm @ np.linalg.inv(S)
    return A, C


SYNTH_A = np.zeros((4, 4))
SYNTH_A[0, 0], SYNTH_A[1, 1] = 0.19, -0.17
SYNTH_A[2:, 2:] = [[0.1, 0.14], [-0.14, 0.1]]
SYNTH_C = np.array([
    [1, 1, 1, 0], [1, 0, 0.5, 0.3], [0, 1, 0, 1], [1, 1, 0, 0], [0.7, -0.4, 0.2, 0.9],
    [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0.3, 0.8, -0.5, 0.4],
])


@pytest.fixture(scope="session")
def synthetic():
    """Stable four-state plant with nine sensors, every state seen by six of them.

    Returns (system, decompositions, gain set) with gains meeting the design
    inequality for p = 2.
    """
    from secest.gains import design_all
    from secest.model import state_pairing
    from secest.subspace import decompose

    sm = SystemModel.build(RawSystem(A=SYNTH_A, C=SYNTH_C, B_w=1e-3, B_v=1e-2), p=2)
    decs = decompose(sm.modal)
    gs = design_all(decs, sm.process_noise_bound, sm.raw.B_v, state_perm=state_pairing(sm.modal))
    return sm, decs, gs


@pytest.fixture(scope="session")
def ieee14_setup():
    """Default 14-bus model (p = 6) with gamma = 0.5 gains."""
    from secest.gains import design_all
    from secest.ieee14 import build_ieee14, default_params
    from secest.model import state_pairing
    from secest.subspace import decompose

    params = default_params()
    sm = build_ieee14(params, p=6)
    decs = decompose(sm.modal)
    gs = design_all(decs, sm.process_noise_bound, sm.raw.B_v, gamma=0.5, state_perm=state_pairing(sm.modal))
    return params, sm, decs, gs
