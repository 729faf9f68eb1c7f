from types import SimpleNamespace

import numpy as np
import pytest
import torch

from dynamics.envsim import pendulum
from dynamics.envsim.normalizer import Normalizer
from dynamics.exceptions import MissingEmbeddingError, ShapeMismatchError
from dynamics.latentdyn.model import ModelSpec, build_model, infer_embedding
from dynamics.mpc.controller import (
    ControllerConfig, EpisodeRecord, LearnedPlanner, PendulumOraclePlanner, run_receding_horizon,
    scale_return, success_criterion,
)
from dynamics.mpc.lifting import LatentPlant, QpWeights, discrete_maps, latent_box, lift_problem
from dynamics.mpc.qp import QpProblem, QpSettings, condense, objective, riccati_oracle, solve_qp

TIGHT = QpSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=50000)


def random_problem(seed, horizon=8, state_dim=3, control_dim=1, bound=np.inf, **kwargs):
    rng = np.random.default_rng(seed)
    return QpProblem.time_invariant(
        np.eye(state_dim) + 0.1 * rng.normal(size=(state_dim, state_dim)),
        rng.normal(size=(state_dim, control_dim)),
        0.1 * rng.normal(size=state_dim),
        horizon,
        z0=rng.normal(size=state_dim),
        target=rng.normal(size=state_dim),
        q=np.eye(state_dim),
        r=0.1 * np.eye(control_dim),
        q_terminal=10.0 * np.eye(state_dim),
        u_lower=np.full(control_dim, -bound),
        u_upper=np.full(control_dim, bound),
        **kwargs,
    )


@pytest.mark.parametrize("seed", range(100))
def test_unconstrained_qp_matches_riccati(seed):
    problem = random_problem(seed)
    assert problem.unconstrained
    solution = solve_qp(problem)
    oracle = riccati_oracle(problem)
    assert solution.converged
    np.testing.assert_allclose(solution.controls, oracle.controls, rtol=0, atol=1e-5)
    assert solution.objective == pytest.approx(oracle.objective, rel=1e-8, abs=1e-8)
    assert oracle.kkt.stationarity <= 1e-6


def test_condensed_objective_matches_rollout():
    problem = random_problem(0)
    controls = np.random.default_rng(1).normal(size=(problem.horizon, 1))
    cond = condense(problem)
    assert cond.objective(controls.ravel()) == pytest.approx(objective(problem, controls), rel=1e-10)
    np.testing.assert_allclose(
        (cond.phi @ problem.z0 + cond.gamma @ controls.ravel() + cond.c).reshape(problem.horizon, -1),
        _rollout(problem, controls),
        rtol=1e-10, atol=1e-12,
    )


def _rollout(problem, controls):
    z, out = problem.z0, []
    for k in range(problem.horizon):
        z = problem.a[k] @ z + problem.b[k] @ controls[k] + problem.o[k]
        out.append(z)
    return np.array(out)


@pytest.mark.parametrize("seed", range(20))
def test_constrained_qp_satisfies_kkt(seed):
    problem = random_problem(seed, bound=0.3)
    assert not problem.unconstrained
    solution = solve_qp(problem, TIGHT)
    assert solution.converged
    assert solution.kkt.worst <= 1e-5
    assert np.all(np.abs(solution.controls) <= 0.3 + 1e-9)
    assert solution.objective >= riccati_oracle(problem).objective - 1e-9


def test_objective_traces():
    solution = solve_qp(random_problem(3, bound=0.2), TIGHT)
    raw, best = solution.objective_trace, solution.best_objective_trace
    assert len(raw) == len(best) == solution.iterations
    assert np.isfinite(raw).all()
    finite = best[np.isfinite(best)]
    assert len(finite) > 0
    assert np.all(np.diff(finite) <= 0)
    assert np.all(best >= np.minimum.accumulate(raw) - 1e-12)


def test_objective_trace_starts_from_the_first_iterate():
    problem = random_problem(3, bound=0.2)
    solution = solve_qp(problem, QpSettings(max_iter=1, polish=False))
    assert not solution.converged
    assert solution.objective_trace.shape == (1,)
    assert solution.objective_trace[0] == pytest.approx(solution.objective, rel=1e-12)


def test_far_target_saturates_first_control():
    problem = QpProblem.time_invariant(
        np.eye(2), np.array([[0.0], [0.1]]), np.zeros(2), 10,
        z0=np.zeros(2), target=np.array([0.0, 50.0]), q=np.eye(2), r=0.001 * np.eye(1),
        q_terminal=10.0 * np.eye(2), u_lower=np.array([-0.5]), u_upper=np.array([0.5]),
    )
    solution = solve_qp(problem, TIGHT)
    assert solution.converged
    assert solution.controls[0, 0] == pytest.approx(0.5, abs=1e-7)


def test_latent_bounds_are_respected():
    upper = np.array([np.inf, 0.5])
    problem = QpProblem.time_invariant(
        np.eye(2), np.array([[0.5], [1.0]]), np.zeros(2), 6,
        z0=np.zeros(2), target=np.array([3.0, 3.0]), q=np.eye(2), r=0.01 * np.eye(1),
        q_terminal=10.0 * np.eye(2), u_lower=np.array([-np.inf]), u_upper=np.array([np.inf]),
        z_lower=np.full(2, -np.inf), z_upper=upper,
    )
    solution = solve_qp(problem, TIGHT)
    assert solution.converged
    assert np.max(solution.states[:, 1]) <= 0.5 + 1e-6
    assert np.max(solution.states[:, 1]) == pytest.approx(0.5, abs=1e-5)


def test_iteration_limit_reports_no_convergence():
    solution = solve_qp(random_problem(4, bound=0.1), QpSettings(max_iter=3, polish=False))
    assert not solution.converged
    assert solution.iterations == 3


@pytest.mark.parametrize("override,error", [
    ({"z0": np.zeros(2)}, ShapeMismatchError),
    ({"r": -np.eye(1)}, ValueError),
    ({"u_lower": np.array([1.0]), "u_upper": np.array([-1.0])}, ValueError),
    ({"z_upper": np.zeros(4)}, ShapeMismatchError),
])
def test_problem_validation(override, error):
    options = dict(
        z0=np.zeros(3), target=np.zeros(3), q=np.eye(3), r=np.eye(1), q_terminal=np.eye(3),
        u_lower=np.array([-1.0]), u_upper=np.array([1.0]),
    )
    with pytest.raises(error):
        QpProblem.time_invariant(np.eye(3), np.ones((3, 1)), np.zeros(3), 4, **{**options, **override})


def test_weight_matrices():
    q, r, q_terminal = QpWeights(q=(1.0, 0.1), r=0.001, terminal_factor=10.0).matrices(2, 1)
    np.testing.assert_array_equal(q, np.diag([1.0, 0.1]))
    np.testing.assert_array_equal(r, np.array([[0.001]]))
    np.testing.assert_array_equal(q_terminal, np.diag([10.0, 1.0]))


def test_discrete_maps():
    a, b, o = np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([[0.0], [1.0]]), np.array([0.1, 0.0])
    a_e, b_e, c_e = discrete_maps(a, b, o, 0.1, "euler")
    np.testing.assert_allclose(a_e, np.eye(2) + 0.1 * a)
    np.testing.assert_allclose(b_e, 0.1 * b)
    np.testing.assert_allclose(c_e, 0.1 * o)
    a_x, _, _ = discrete_maps(a, b, o, 0.1, "exact")
    np.testing.assert_allclose(a_x, [[np.cos(0.1), np.sin(0.1)], [-np.sin(0.1), np.cos(0.1)]], atol=1e-12)
    with pytest.raises(ValueError):
        discrete_maps(a, b, o, 0.1, "tustin")


@pytest.fixture
def plant():
    spec = ModelSpec(state_dim=3, control_dim=1, latent_dim=3, hidden=(8,), rnn_state=6, rnn_layers=1, precision="float64")
    return LatentPlant(
        model=build_model(spec, seed=0),
        normalizer=Normalizer(minimum=np.array([-1.0, -1.0, -8.0]), maximum=np.array([1.0, 1.0, 8.0])),
        control_normalizer=Normalizer(minimum=np.array([-2.0]), maximum=np.array([2.0])),
    )


def _context(rng, points=6):
    states = np.column_stack([rng.uniform(-np.pi, np.pi, points), rng.uniform(-1, 1, points)])
    return pendulum.observe(states), rng.uniform(-2.0, 2.0, (points - 1, 1))


def test_refresh_folds_control_normalizer(plant, rng):
    features, controls = _context(rng)
    a, b, o = plant.refresh(features, controls)
    with torch.no_grad():
        emb, _ = infer_embedding(
            plant.model,
            torch.from_numpy(plant.normalizer.apply(features)),
            torch.from_numpy(plant.control_normalizer.apply(controls)),
        )
    u = np.array([1.3])
    normalized = emb.b.numpy() @ plant.control_normalizer.apply(u) + emb.o.numpy()
    np.testing.assert_allclose(b @ u + o, normalized, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(a, emb.a.numpy())


def test_lifting_needs_an_embedding(plant):
    with pytest.raises(MissingEmbeddingError):
        lift_problem(plant, np.zeros(3), np.zeros(3), (np.array([-2.0]), np.array([2.0])))


def test_lifted_problem(plant, rng):
    features, controls = _context(rng)
    plant.refresh(features, controls)
    target = pendulum.observe(np.zeros(2))
    problem = lift_problem(
        plant, features[-1], target, (np.array([-2.0]), np.array([2.0])), horizon=5, dt=0.05,
    )
    assert problem.horizon == 5
    np.testing.assert_allclose(problem.z0, plant.encode(features[-1]))
    np.testing.assert_allclose(problem.target, plant.encode(target))
    np.testing.assert_array_equal(problem.u_upper, [2.0])
    assert problem.z_lower is None


def test_latent_box_covers_encodings(plant, rng):
    features, _ = _context(rng, points=40)
    lower, upper = latent_box(plant, features)
    z = plant.encode(features)
    assert np.all(z >= lower) and np.all(z <= upper)
    assert np.all(upper - lower > 0)


def _record(tail_theta, tail_omega, failed=False):
    states = np.zeros((11, 2))
    states[-2:] = [tail_theta, tail_omega]
    return EpisodeRecord(
        times=0.05 * np.arange(11), states=states, observations=pendulum.observe(states),
        controls=np.zeros((10, 1)), rewards=-np.ones(10), solve_us=np.array([10.0]),
        converged=np.array([True]), failed=failed,
    )


@pytest.mark.parametrize("theta,omega,failed,expected", [
    (0.1, 0.5, False, True),
    (2 * np.pi + 0.1, 0.0, False, True),
    (0.5, 0.0, False, False),
    (0.0, 1.5, False, False),
    (0.0, 0.0, True, False),
])
def test_success_criterion(theta, omega, failed, expected):
    assert success_criterion(_record(theta, omega, failed)) is expected


def test_scale_return():
    assert scale_return(-100.0, 200) == -250.0
    assert scale_return(-100.0, 500) == -100.0


def test_episode_record_save_and_load(tmp_path):
    record = _record(0.1, 0.1)
    record.meta = {"instance": 3, "controller": "oracle"}
    record.save(tmp_path / "episode")
    loaded = EpisodeRecord.load(tmp_path / "episode")
    np.testing.assert_array_equal(loaded.states, record.states)
    assert loaded.converged.dtype == bool
    assert loaded.meta["instance"] == 3
    assert loaded.total_return == record.total_return == -10.0


def test_oracle_holds_pendulum_upright():
    params = pendulum.PendulumParams()
    env = pendulum.PendulumEnv(params, pendulum.PendulumState(0.3, 0.0))
    record = run_receding_horizon(env, PendulumOraclePlanner(params), 60, np.random.default_rng(0))
    assert not record.failed
    assert len(record.controls) == 60
    assert len(record.solve_us) == 60
    assert np.all(np.abs(record.controls) <= params.max_torque)
    assert record.success


def test_learned_planner_episode(plant):
    params = pendulum.PendulumParams()
    env = pendulum.PendulumEnv(params, pendulum.PendulumState(np.pi, 0.0))
    config = ControllerConfig(horizon=4, warmup=5, context=5)
    planner = LearnedPlanner(plant, pendulum.observe(np.zeros(2)), env.control_bounds, env.dt, config)
    record = run_receding_horizon(env, planner, 9, np.random.default_rng(0), config)
    assert not record.failed
    assert record.states.shape == (10, 2)
    assert record.observations.shape == (10, 3)
    assert record.controls.shape == (9, 1)
    assert len(record.solve_us) == 4
    assert np.all(np.abs(record.controls) <= params.max_torque)


class _Planner:
    context_steps = 0

    def __init__(self, outcome):
        self.outcome = outcome

    def plan(self, observations, controls, raw_state):
        if isinstance(self.outcome, Exception):
            raise self.outcome
        return self.outcome


def test_planning_error_aborts_episode():
    env = pendulum.PendulumEnv(pendulum.PendulumParams())
    record = run_receding_horizon(env, _Planner(MissingEmbeddingError("no context")), 20, np.random.default_rng(0))
    assert record.failed
    assert "no context" in record.reason
    assert len(record.controls) == 0
    assert not success_criterion(record)


def test_repeated_non_convergence_aborts_episode():
    env = pendulum.PendulumEnv(pendulum.PendulumParams())
    stalled = SimpleNamespace(converged=False, controls=np.zeros((4, 1)))
    record = run_receding_horizon(env, _Planner(stalled), 50, np.random.default_rng(0))
    assert record.failed
    assert len(record.controls) == 10
    assert len(record.solve_us) == 11
