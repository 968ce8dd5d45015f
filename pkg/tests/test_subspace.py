import numpy as np
import pytest

from conftest import jordan_example, random_real_system
from oracles import redundancy_by_subsets
from secest.errors import IntertwiningViolated, NotObservable
from secest.ieee14 import build_ieee14
from secest.model import ModalMode, RawSystem, to_modal
from secest.subspace import (SensorDecomposition, analyze, brute_force_sparse_observability, coverage, decompose,
                             observability_matrix, observed_index_set, reduced_pair, selector,
                             sparse_observability_index, verify_decomposition)

LAM1, LAM2 = 0.5, 0.3


@pytest.fixture
def example_modal():
    return to_modal(jordan_example(LAM1, LAM2), ModalMode.ALREADY_JORDAN)


def test_observability_matrix_small_cases():
    assert np.array_equal(observability_matrix(np.eye(2), np.array([1.0, 0])), [[1, 0], [1, 0]])
    assert np.array_equal(observability_matrix(np.array([[0.5]]), np.array([1.0])), [[1.0]])


def test_observability_matrix_jordan_sensor(example_modal):
    O = observability_matrix(example_modal.A, example_modal.C[1])
    expected = [[0, 1, 0], [0, LAM2, 1], [0, LAM2**2, 2 * LAM2]]
    assert np.allclose(O, expected, atol=1e-15)


def test_index_sets_of_example(example_modal):
    decs = decompose(example_modal)
    assert decs[0].Q == (0,)
    assert decs[1].Q == (1, 2)


def test_dead_sensor_has_empty_index_set():
    assert observed_index_set(np.zeros((3, 3))) == ()


def test_selector_rows():
    assert np.array_equal(selector((0,), 3), [[1, 0, 0]])
    assert np.array_equal(selector((1, 2), 3), [[0, 1, 0], [0, 0, 1]])
    assert np.array_equal(selector(range(4), 4), np.eye(4))
    with pytest.raises(ValueError):
        selector((3,), 3)


def test_reduced_pairs_of_example(example_modal):
    d1, d2 = decompose(example_modal)
    assert np.allclose(d1.A_tilde, [[LAM1]]) and np.allclose(d1.C_tilde, [[1]])
    assert np.allclose(d2.A_tilde, [[LAM2, 1], [0, LAM2]]) and np.allclose(d2.C_tilde, [[1, 0]])


def test_fully_observing_sensor_keeps_everything():
    A = np.diag([0.5, 0.2, -0.3]).astype(complex)
    c = np.ones(3)
    A_t, c_t = reduced_pair(A, c, selector(range(3), 3))
    assert np.array_equal(A_t, A) and np.array_equal(c_t[0], c)


def test_non_invariant_selection_is_rejected():
    A = np.array([[0.3, 1.0], [0.0, 0.3]])
    # keeping only the head of a Jordan chain is not invariant
    with pytest.raises(IntertwiningViolated):
        reduced_pair(A, np.array([1.0, 0.0]), selector((0,), 2))


def test_redundancy_of_example(example_modal):
    cov = coverage(decompose(example_modal), 3)
    assert cov.sets == ((0,), (1,), (1,))
    assert sparse_observability_index(cov) == 0


def test_identical_full_sensors_give_m_minus_one():
    A = np.diag([0.5, -0.2, 0.1])
    modal = to_modal(RawSystem(A=A, C=np.ones((4, 3)), B_w=0, B_v=0), ModalMode.DIAGONALIZE)
    assert sparse_observability_index(coverage(decompose(modal), 3)) == 3


def test_uncovered_state_raises():
    modal = to_modal(RawSystem(A=np.diag([0.5, 0.2]), C=np.array([[1.0, 0.0]]), B_w=0, B_v=0),
                     ModalMode.DIAGONALIZE)
    with pytest.raises(NotObservable) as exc:
        sparse_observability_index(coverage(decompose(modal), 2))
    assert exc.value.uncovered == (1,)


def test_coverage_counts_match_sensor_dimensions():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A, C = random_real_system(rng)
        modal = to_modal(RawSystem(A=A, C=C, B_w=0, B_v=0), ModalMode.DIAGONALIZE)
        decs = decompose(modal)
        cov = coverage(decs, modal.n)
        for d in decs:
            assert sum(d.sensor in s for s in cov.sets) == d.n_i


def test_formula_matches_subset_oracle_on_diagonal_systems():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(1, 7))
        A = np.diag(rng.uniform(-0.9, 0.9, n) + np.arange(n) * 0.01)
        C = rng.standard_normal((m, n))
        C[rng.random((m, n)) < 0.4] = 0
        expected = redundancy_by_subsets(A, C)
        modal = to_modal(RawSystem(A=A, C=C, B_w=0, B_v=0), ModalMode.DIAGONALIZE)
        cov = coverage(decompose(modal), n)
        got = -1 if cov.uncovered else sparse_observability_index(cov)
        assert got == expected
        assert brute_force_sparse_observability(A, C) == expected


def test_example_checks_pass(example_modal):
    for d in decompose(example_modal):
        rep = verify_decomposition(d, example_modal)
        assert rep.passed and rep.full_column_rank


def test_corrupted_selector_fails_intertwining(example_modal):
    d = decompose(example_modal)[1]
    H_bad = selector((0, 2), 3)
    bad = SensorDecomposition(sensor=1, O=d.O, Q=(0, 2), H=H_bad, A_tilde=d.A_tilde, C_tilde=d.C_tilde)
    rep = verify_decomposition(bad, example_modal)
    assert not rep.intertwining


def test_reduced_pair_decomposes_to_itself():
    rng = np.random.default_rng(5)
    for _ in range(10):
        A, C = random_real_system(rng)
        modal = to_modal(RawSystem(A=A, C=C, B_w=0, B_v=0), ModalMode.DIAGONALIZE)
        for d in decompose(modal):
            if d.n_i == 0:
                continue
            Q = observed_index_set(observability_matrix(d.A_tilde, d.C_tilde[0]))
            assert Q == tuple(range(d.n_i))


def test_ieee14_decomposition_checks():
    sm = build_ieee14()
    decs = decompose(sm.modal)
    assert len(decs) == 56
    reps = [verify_decomposition(d, sm.modal) for d in decs]
    assert all(r.passed for r in reps)
    assert max(max(r.residuals.values()) for r in reps) <= 1e-8
    cov = coverage(decs, sm.n)
    assert sparse_observability_index(cov) == 13


def test_analyze_report_fields(example_modal):
    rep = analyze(example_modal, brute_force=True)
    assert rep["s_max"] == 0 == rep["s_max_brute_force"]
    assert [s["Q"] for s in rep["sensors"]] == [[0], [1, 2]]
    assert rep["coverage_counts"] == [1, 1, 1]
    assert rep["all_checks_passed"]
