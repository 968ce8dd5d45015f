import numpy as np
import pytest

from secest.ieee14 import (N_BUS, build_ieee14, build_raw, bus_states, continuous_matrices, default_params,
                           load_params, output_matrices, steady_state, swing_matrices)
from secest.sim import plant_step
from secest.subspace import coverage, sparse_observability_index


def test_dimensions_and_noise_bounds():
    raw = build_raw()
    assert raw.A.shape == (28, 28) and raw.C.shape == (56, 28)
    assert raw.B_u.shape == (28, 14) and raw.D_u.shape == (56, 14)
    assert (raw.B_w, raw.B_v, raw.sample_time) == (1e-3, 1e-2, 0.01)


def test_default_parameters_are_balanced():
    p = default_params()
    assert abs(p.power.sum()) < 1e-12
    assert len(p.branches) == 20


def test_zero_coupling_gives_decoupled_buses():
    A, _ = swing_matrices(default_params(coupling_scale=0.0))
    mask = np.kron(np.eye(N_BUS), np.ones((2, 2))).astype(bool)
    assert np.all(A[~mask] == 0)


def test_discretization_matches_small_step_integration():
    params = default_params()
    Ac, Bc = continuous_matrices(params)
    A, B = swing_matrices(params)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(28) * 0.1
    # fine explicit integration of the continuous model over one sample
    steps = 20000
    h = params.sample_time / steps
    z = x.copy()
    for _ in range(steps):
        z = z + h * (Ac @ z + Bc @ params.power)
    assert np.allclose(A @ x + B @ params.power, z, atol=1e-6)


def test_momentum_is_conserved_without_damping_or_injection():
    params = default_params(damping=np.zeros(N_BUS), power=np.zeros(N_BUS))
    A, _ = swing_matrices(params)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(28)
    start = params.inertia @ x[1::2]
    for _ in range(1000):
        x = A @ x
    assert params.inertia @ x[1::2] == pytest.approx(start, abs=1e-6)


def test_constant_injection_settles_to_steady_state():
    params = default_params()
    raw = build_raw(params)
    x0 = np.zeros(28)
    x = x0.copy()
    for _ in range(20000):
        x = plant_step(raw.A, x, np.zeros(28), raw.B_u, params.power)
    xs = steady_state(params, x0)
    assert np.allclose(x, xs, atol=1e-6)
    # fixed point of the discrete map
    assert np.allclose(raw.A @ xs + raw.B_u @ params.power, xs, atol=1e-9)


def test_steady_state_needs_balanced_power():
    p = default_params()
    with pytest.raises(ValueError):
        steady_state(default_params(power=p.power + 0.1), np.zeros(28))


def test_power_sensor_rows():
    params = default_params()
    C, D = output_matrices(params)
    b = 4  # bus 5, a load bus
    assert C[4 * b, 2 * b + 1] == params.damping[b] and D[4 * b, b] == 1.0
    assert D[0].sum() == 0.0  # bus 1 carries no load
    assert C[4 * b + 1, 2 * b] == 1.0 and C[4 * b + 2, 2 * b + 1] == C[4 * b + 3, 2 * b + 1] == 1.0


def test_model_redundancy_supports_switching_attack(ieee14_setup):
    _, sm, decs, _ = ieee14_setup
    assert sm.modal.n == 28 and sm.modal.m == 56
    s_max = sparse_observability_index(coverage(decs, 28))
    assert s_max >= 2 * 6


def test_grounded_variant():
    raw = build_raw(default_params(variant="grounded"))
    assert raw.A.shape == (27, 27) and raw.C.shape == (56, 27)
    assert bus_states(1, "grounded") == (-1, 0)
    assert bus_states(5) == (8, 9)


def test_params_file_round_trip(tmp_path):
    import json
    from importlib import resources

    text = resources.files("secest").joinpath("data/ieee14.json").read_text()
    path = tmp_path / "p.json"
    path.write_text(text)
    p = load_params(path)
    assert np.array_equal(p.inertia, default_params().inertia)
    bad = json.loads(text)
    bad["inertia"] = bad["inertia"][:-1]
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_params(path)


def test_model_build_is_observable():
    sm = build_ieee14(p=6)
    assert sm.report.observable and sm.p == 6
