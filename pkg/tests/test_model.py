import json

import numpy as np
import pytest

from conftest import jordan_example
from secest import config
from secest.errors import (DefectiveMatrix, IllConditioned, InvalidSystem, NotJordanForm, NotObservable,
                           UnpairedComplexBlock)
from secest.model import (JordanBlock, ModalMode, ModalSystem, RawSystem, SystemModel, conjugate_pairing,
                          decode_matrix, encode_matrix, load_system, state_pairing, system_from_dict,
                          system_to_dict, to_modal, validate_raw)


def test_scalar_system_is_valid():
    r = validate_raw(RawSystem(A=np.array([[0.5]]), C=np.array([[1.0]]), B_w=0, B_v=0))
    assert r.observable and r.valid
    assert np.allclose(r.eigenvalues, [0.5])


def test_identity_with_one_sensor_is_unobservable():
    r = validate_raw(RawSystem(A=np.eye(2), C=np.array([[1.0, 0]]), B_w=0, B_v=0))
    assert not r.observable
    assert r.rank == 1


def test_jordan_example_validates():
    r = validate_raw(jordan_example())
    assert r.observable and r.nonderogatory
    assert sorted(r.geometric_multiplicity) == [1, 1]


@pytest.mark.parametrize("field,value", [("B_w", -1.0), ("B_v", -0.1)])
def test_negative_noise_bound_rejected(field, value):
    kw = dict(A=np.eye(1), C=np.eye(1), B_w=0.0, B_v=0.0)
    kw[field] = value
    with pytest.raises(InvalidSystem):
        RawSystem(**kw)


def test_dimension_mismatch_rejected():
    with pytest.raises(InvalidSystem):
        RawSystem(A=np.eye(2), C=np.ones((1, 3)), B_w=0, B_v=0)


def test_diagonal_matrix_keeps_identity_transform():
    raw = RawSystem(A=np.diag([0.9, 0.8]), C=np.eye(2), B_w=0, B_v=0)
    modal = to_modal(raw, ModalMode.DIAGONALIZE)
    assert np.allclose(np.abs(modal.T), np.eye(2))
    assert [b.eigenvalue for b in modal.blocks] == [0.9, 0.8]
    assert [b.indices for b in modal.blocks] == [(0,), (1,)]


def test_already_jordan_blocks():
    modal = to_modal(jordan_example(), ModalMode.ALREADY_JORDAN)
    assert np.array_equal(modal.T, np.eye(3))
    assert [(b.eigenvalue, b.indices) for b in modal.blocks] == [(0.5, (0,)), (0.3, (1, 2))]


def test_rotation_diagonalizes_to_plus_minus_i():
    raw = RawSystem(A=np.array([[0.0, 1], [-1, 0]]), C=np.array([[1.0, 0]]), B_w=0, B_v=0)
    modal = to_modal(raw, ModalMode.DIAGONALIZE)
    ev = [b.eigenvalue for b in modal.blocks]
    assert np.allclose(sorted(ev, key=lambda z: z.imag), [-1j, 1j])
    assert np.allclose(modal.T @ raw.A @ modal.T_inv, np.diag(ev), atol=1e-10)
    # negative phase first within a conjugate pair
    assert ev[0].imag < 0


def test_repeated_eigenvalue_rejected_in_diagonalize_mode():
    raw = RawSystem(A=np.array([[0.5, 1.0], [0.0, 0.5]]), C=np.array([[0.0, 1.0]]), B_w=0, B_v=0)
    with pytest.raises(DefectiveMatrix):
        to_modal(raw, ModalMode.DIAGONALIZE)


@pytest.mark.parametrize("A", [
    np.array([[0.5, 0.2], [0.0, 0.3]]),    # off-diagonal coupling between different eigenvalues
    np.array([[0.5, 1.0], [0.1, 0.5]]),    # subdiagonal entry
    np.array([[0.5, 0.0], [0.0, 0.5]]),    # same eigenvalue in two blocks
])
def test_non_jordan_input_rejected(A):
    raw = RawSystem(A=A, C=np.ones((1, 2)), B_w=0, B_v=0)
    with pytest.raises(NotJordanForm):
        to_modal(raw, ModalMode.ALREADY_JORDAN)


def test_ill_conditioned_eigenvectors_rejected():
    eps = 1e-4  # distinct eigenvalues, nearly parallel eigenvectors
    A = np.array([[0.5, 1.0], [0.0, 0.5 + eps]])
    raw = RawSystem(A=A, C=np.array([[1.0, 1.0]]), B_w=0, B_v=0)
    with pytest.raises(IllConditioned):
        to_modal(raw, ModalMode.DIAGONALIZE, cond_limit=1e4)


def test_round_trip_and_coordinate_inverse():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n, n)) / n
        raw = RawSystem(A=A, C=rng.standard_normal((2, n)), B_w=0, B_v=0)
        modal = to_modal(raw, ModalMode.DIAGONALIZE)
        assert np.allclose(modal.T_inv @ modal.A @ modal.T, A, atol=1e-8)
        assert np.allclose(modal.C @ modal.T, raw.C, atol=1e-8)
        x = rng.standard_normal(n)
        back, resid = modal.to_physical(modal.to_modal_coords(x))
        assert np.allclose(back, x, atol=1e-10) and resid < 1e-10


def test_modal_order_descending_modulus():
    raw = RawSystem(A=np.diag([0.1, -0.7, 0.4]), C=np.ones((1, 3)), B_w=0, B_v=0)
    modal = to_modal(raw, ModalMode.DIAGONALIZE)
    mods = [abs(b.eigenvalue) for b in modal.blocks]
    assert mods == sorted(mods, reverse=True)


def test_off_block_entries_are_exact_zeros():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5)) / 3
    modal = to_modal(RawSystem(A=A, C=np.ones((1, 5)), B_w=0, B_v=0), ModalMode.DIAGONALIZE)
    off = modal.A - np.diag(np.diag(modal.A))
    assert np.count_nonzero(off) == 0


def test_conjugate_pairing_is_an_involution():
    A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.9]])
    modal = to_modal(RawSystem(A=A, C=np.ones((1, 3)), B_w=0, B_v=0), ModalMode.DIAGONALIZE)
    pairs = conjugate_pairing(modal)
    assert all(pairs[pairs[a]] == a for a in pairs)
    real = [a for a, b in enumerate(modal.blocks) if b.eigenvalue.imag == 0]
    assert all(pairs[a] == a for a in real)
    perm = state_pairing(modal)
    assert np.allclose(modal.A[np.ix_(perm, perm)], np.conj(modal.A))


def test_self_paired_real_blocks():
    modal = to_modal(RawSystem(A=np.diag([0.9, 0.8]), C=np.eye(2), B_w=0, B_v=0), ModalMode.DIAGONALIZE)
    assert conjugate_pairing(modal) == {0: 0, 1: 1}


def test_unpaired_complex_block_detected():
    A = np.diag([0.5j, 0.3])
    modal = to_modal(RawSystem(A=A, C=np.ones((1, 2)), B_w=0, B_v=0), ModalMode.ALREADY_JORDAN)
    with pytest.raises(UnpairedComplexBlock):
        conjugate_pairing(modal)


def test_system_model_checks_attack_budget():
    raw = jordan_example()
    SystemModel.build(raw, ModalMode.ALREADY_JORDAN, p=0)
    with pytest.raises(InvalidSystem):
        SystemModel.build(raw, ModalMode.ALREADY_JORDAN, p=1)


def test_unobservable_model_names_uncovered_states():
    raw = RawSystem(A=np.diag([0.5, 0.3]), C=np.array([[1.0, 0.0]]), B_w=0, B_v=0)
    with pytest.raises(NotObservable) as exc:
        SystemModel.build(raw)
    assert exc.value.uncovered == (1,)


def test_process_noise_bound_uses_transform_norm():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]]) * 0.5
    sm = SystemModel.build(RawSystem(A=A, C=np.array([[1.0, 0.0], [0.0, 1.0]]), B_w=2e-3, B_v=0))
    assert sm.process_noise_bound == pytest.approx(np.linalg.norm(sm.modal.T, 2) * 2e-3)


def test_matrix_codec_round_trip():
    M = np.array([[1.0, 2 - 1j], [0.0, 3j]])
    assert np.array_equal(decode_matrix(encode_matrix(M)), M)
    assert encode_matrix(np.eye(2)) == [[1.0, 0.0], [0.0, 1.0]]


def test_system_file_round_trip(tmp_path):
    raw = jordan_example()
    d = system_to_dict(raw, ModalMode.ALREADY_JORDAN, p=0)
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(d))
    spec = load_system(path)
    assert np.array_equal(spec.raw.A, raw.A) and spec.mode is ModalMode.ALREADY_JORDAN


def test_complex_entries_need_already_jordan():
    with pytest.raises(InvalidSystem):
        system_from_dict({"A": [[[0.5, 0.1]]], "C": [[1]]})
    spec = system_from_dict({"A": [[[0.5, 0.1]]], "C": [[1]], "modal_mode": "already_jordan"})
    assert spec.raw.A[0, 0] == 0.5 + 0.1j


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "A": [[1]],\n  "C": [[1]\n}\n')
    with pytest.raises(InvalidSystem, match=r"bad.json:\d+"):
        load_system(path)


def test_zero_tolerance_env_override(monkeypatch):
    monkeypatch.setenv("SECEST_TOL", "1e-3")
    assert config.zero_tol() == 1e-3
    monkeypatch.delenv("SECEST_TOL")
    assert config.zero_tol() == config.DEFAULT_ZERO_TOL


def test_modal_system_is_frozen():
    modal = to_modal(jordan_example(), ModalMode.ALREADY_JORDAN)
    with pytest.raises(Exception):
        modal.A = None
    assert isinstance(modal, ModalSystem) and isinstance(modal.blocks[0], JordanBlock)
