import dataclasses

from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
import numpy as np
import pytest
import torch

from dynamics import odesolve
from dynamics.exceptions import NonFiniteError, ShapeMismatchError, SolverStepLimitError


def stable_system(rng, d=3, u=1):
    m = rng.normal(size=(d, d))
    shift = np.max(np.linalg.eigvals(m).real) + 0.5
    a = m - shift * np.eye(d)
    return a, rng.normal(size=(d, u)), rng.normal(size=d)


def constant_ode(a, b, o, controls):
    return odesolve.LinearOde(a, b, o, np.asarray(controls, dtype=np.float64))


def test_discretize_scalar_closed_form():
    h = 0.3
    a_d, b_d, c_d = odesolve.discretize(np.array([[-1.0]]), np.array([[1.0]]), np.array([0.5]), h)
    assert a_d[0, 0] == pytest.approx(np.exp(-h), abs=1e-14)
    assert b_d[0, 0] == pytest.approx(1 - np.exp(-h), abs=1e-14)
    assert c_d[0] == pytest.approx(0.5 * (1 - np.exp(-h)), abs=1e-14)


def test_euler_discretize():
    a = np.array([[0.0, 1.0], [-2.0, -0.1]])
    a_d, b_d, c_d = odesolve.euler_discretize(a, np.ones((2, 1)), np.array([1.0, 2.0]), 0.1)
    np.testing.assert_allclose(a_d, np.eye(2) + 0.1 * a)
    np.testing.assert_allclose(b_d, 0.1 * np.ones((2, 1)))
    np.testing.assert_allclose(c_d, [0.1, 0.2])


def test_euler_is_first_order(rng):
    t_grid = np.linspace(0.0, 2.0, 11)
    for _ in range(50):
        a, b, o = stable_system(rng)
        ode = constant_ode(a, b, o, rng.normal(size=(10, 1)))
        z0 = rng.normal(size=3)
        exact = odesolve.exact_linear_rollout(ode, z0, t_grid)
        coarse = np.max(np.abs(odesolve.euler_rollout(ode, z0, t_grid, step=1e-3) - exact))
        fine = np.max(np.abs(odesolve.euler_rollout(ode, z0, t_grid, step=5e-4) - exact))
        assert coarse / fine == pytest.approx(2.0, abs=0.2)


def test_dopri45_matches_exact(rng):
    config = odesolve.SolverConfig(kind="dopri45", rtol=1e-6, atol=1e-9)
    t_grid = np.linspace(0.0, 3.0, 31)
    for _ in range(50):
        a, b, o = stable_system(rng)
        ode = constant_ode(a, b, o, rng.uniform(-1, 1, size=(30, 1)))
        z0 = rng.normal(size=3)
        exact = odesolve.exact_linear_rollout(ode, z0, t_grid)
        approx = odesolve.rollout(ode, z0, t_grid, config)
        scale = np.maximum(1.0, np.abs(exact))
        assert np.max(np.abs(approx - exact) / scale) <= 10 * config.rtol


def test_dopri45_batched(rng):
    a, b, o = stable_system(rng)
    t_grid = np.linspace(0.0, 1.0, 6)
    controls = rng.normal(size=(2, 5, 1))
    z0 = rng.normal(size=(2, 3))
    batched = odesolve.dopri45_rollout(odesolve.LinearOde(a, b, o, controls), z0, t_grid)
    assert batched.shape == (2, 6, 3)
    single = odesolve.dopri45_rollout(odesolve.LinearOde(a, b, o, controls[1]), z0[1], t_grid)
    np.testing.assert_array_equal(batched[1], single)


def test_exact_rollout_with_separate_control_times(rng):
    a, b, o = stable_system(rng, d=2)
    controls = np.array([[1.0], [-1.0]])
    switch = odesolve.LinearOde(a, b, o, controls, control_times=np.array([0.0, 0.5, 1.0]))
    z0 = np.zeros(2)
    out = odesolve.exact_linear_rollout(switch, z0, np.array([0.0, 1.0]))
    first = odesolve.discretize(a, b, o, 0.5)
    z_half = first[0] @ z0 + first[1] @ controls[0] + first[2]
    z_end = first[0] @ z_half + first[1] @ controls[1] + first[2]
    np.testing.assert_allclose(out[-1], z_end, atol=1e-12)


@pytest.mark.parametrize("solver", ["euler", "exact"])
def test_chained_solves_match_one_solve(rng, solver):
    a, b, o = stable_system(rng)
    controls = rng.normal(size=(30, 1))
    t_grid = 0.05 * np.arange(31)
    z0 = rng.normal(size=3)
    roll = odesolve.euler_rollout if solver == "euler" else odesolve.exact_linear_rollout
    whole = roll(constant_ode(a, b, o, controls), z0, t_grid)
    first = roll(constant_ode(a, b, o, controls[:15]), z0, t_grid[:16])
    second = roll(constant_ode(a, b, o, controls[15:]), first[-1], t_grid[15:])
    np.testing.assert_allclose(np.concatenate([first, second[1:]]), whole, rtol=1e-12, atol=1e-12)


def test_euler_rollout_torch_gradient():
    a = torch.tensor([[-0.5, 1.0], [-1.0, -0.5]], dtype=torch.float64, requires_grad=True)
    b = torch.ones(2, 1, dtype=torch.float64)
    o = torch.zeros(2, dtype=torch.float64)
    controls = torch.ones(4, 1, dtype=torch.float64)
    z = odesolve.euler_rollout(odesolve.LinearOde(a, b, o, controls), torch.ones(2, dtype=torch.float64), np.linspace(0, 1, 5))
    assert z.shape == (5, 2)
    z[-1].sum().backward()
    assert a.grad is not None
    assert torch.isfinite(a.grad).all()


def test_mismatched_controls():
    ode = constant_ode(-np.eye(2), np.ones((2, 1)), np.zeros(2), np.zeros((3, 1)))
    with pytest.raises(ShapeMismatchError):
        odesolve.euler_rollout(ode, np.zeros(2), np.linspace(0, 1, 6))


def test_euler_non_finite():
    ode = constant_ode(np.array([[1e300]]), np.zeros((1, 1)), np.zeros(1), np.zeros((2, 1)))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteError):
        odesolve.euler_rollout(ode, np.array([1e10]), np.array([0.0, 1.0, 2.0]))


def test_dopri45_step_limit(rng):
    a, b, o = stable_system(rng)
    ode = constant_ode(a, b, o, np.zeros((10, 1)))
    config = odesolve.SolverConfig(kind="dopri45", max_steps=3, rtol=1e-10, atol=1e-12)
    with pytest.raises(SolverStepLimitError) as exc:
        odesolve.rollout(ode, np.ones(3), np.linspace(0, 10, 11), config)
    assert exc.value.partial_states is not None
    assert len(exc.value.partial_states) == len(exc.value.partial_times)


def test_unknown_solver():
    ode = constant_ode(-np.eye(1), np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        odesolve.rollout(ode, np.zeros(1), np.array([0.0, 1.0]), odesolve.SolverConfig(kind="rk2"))


def homogeneous(a, intervals):
    d = a.shape[0]
    return constant_ode(a, np.zeros((d, 0)), np.zeros(d), np.zeros((intervals, 0)))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 3), elements=st.floats(-2.0, 2.0)))
def test_exact_rollout_conserves_norm_under_skew_generator(m):
    a = m - m.T
    t_grid = np.linspace(0.0, 10.0, 21)
    z0 = np.array([1.0, -0.5, 2.0])
    z = odesolve.exact_linear_rollout(homogeneous(a, 20), z0, t_grid)
    np.testing.assert_allclose(np.linalg.norm(z, axis=-1), np.linalg.norm(z0), rtol=1e-10)


def test_euler_drifts_under_skew_generator():
    a = np.array([[0.0, -1.0], [1.0, 0.0]])
    t_grid = np.linspace(0.0, 2 * np.pi, 101)
    z = odesolve.euler_rollout(homogeneous(a, 100), np.array([1.0, 0.0]), t_grid)
    assert np.all(np.diff(np.linalg.norm(z, axis=-1)) > 0)
    np.testing.assert_allclose(
        odesolve.exact_linear_rollout(homogeneous(a, 100), np.array([1.0, 0.0]), t_grid)[-1], [1.0, 0.0], atol=1e-10,
    )


@pytest.mark.parametrize("solver", ["euler", "exact"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), weight=st.floats(-3.0, 3.0))
def test_rollouts_are_affine_in_the_initial_state(solver, seed, weight):
    rng = np.random.default_rng(seed)
    a, b, o = stable_system(rng)
    ode = constant_ode(a, b, o, rng.normal(size=(10, 1)))
    t_grid = np.linspace(0.0, 1.0, 11)
    z1, z2 = rng.normal(size=(2, 3))
    roll = odesolve.euler_rollout if solver == "euler" else odesolve.exact_linear_rollout
    mixed = roll(ode, weight * z1 + (1 - weight) * z2, t_grid)
    expected = weight * roll(ode, z1, t_grid) + (1 - weight) * roll(ode, z2, t_grid)
    np.testing.assert_allclose(mixed, expected, rtol=1e-9, atol=1e-9)
    # without inputs the rollout is linear
    free = homogeneous(a, 10)
    np.testing.assert_allclose(
        roll(free, weight * z1, t_grid), weight * roll(free, z1, t_grid), rtol=1e-9, atol=1e-12,
    )


def test_dopri45_error_follows_rtol():
    t_grid = np.array([0.0, 5.0, 10.0])
    z0 = np.array([1.0, 0.0])
    rtols = (1e-4, 1e-5, 1e-6, 1e-7)
    errors = np.zeros(len(rtols))
    for frequency in (0.7, 1.3, 2.1):
        a = np.array([[-0.05, -frequency], [frequency, -0.05]])
        ode = constant_ode(a, np.array([[0.0], [1.0]]), np.array([0.1, 0.0]), np.array([[0.5], [-0.5]]))
        exact = odesolve.exact_linear_rollout(ode, z0, t_grid)
        for i, rtol in enumerate(rtols):
            config = odesolve.SolverConfig(kind="dopri45", rtol=rtol, atol=1e-12)
            errors[i] += np.max(np.abs(odesolve.rollout(ode, z0, t_grid, config) - exact))
    ratios = errors[:-1] / errors[1:]
    assert np.all(ratios >= 5.0), errors


def test_solver_config_has_no_free_form_options():
    assert "extra" not in {f.name for f in dataclasses.fields(odesolve.SolverConfig)}
