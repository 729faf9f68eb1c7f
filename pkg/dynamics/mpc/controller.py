"""
Receding-horizon control of a simulated environment.

A planner turns the observed history into a `QpSolution`; the controller
applies its first control, records the reward and repeats. Two planners are
provided: `LearnedPlanner` (latent QP through a trained model) and
`PendulumOraclePlanner` (successive linearization of the true pendulum).
"""
from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np

from dynamics import container
from dynamics.envsim import pendulum
from dynamics.envsim.excitation import perlin_controls
from dynamics.exceptions import ContainerFormatError, DynamicsException
from dynamics.mpc.lifting import QpWeights, lift_problem
from dynamics.mpc.qp import HORIZON, QpProblem, QpSettings, solve_qp

logger = logging.getLogger(__name__)

EPISODE_KIND = "episode"
WARMUP = 30
MAX_FAILED_SOLVES = 10
SUCCESS_FRACTION = 0.2
SUCCESS_THETA = 0.2
SUCCESS_OMEGA = 1.0
REFERENCE_LENGTH = 500


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = HORIZON
    weights: QpWeights = QpWeights()
    discretization: str = "exact"
    solver: QpSettings = QpSettings()
    # warm-up steps under Perlin excitation before the first solve
    warmup: int = WARMUP
    context: int = WARMUP
    max_failed_solves: int = MAX_FAILED_SOLVES
    linearizations: int = 2


@dataclass
class EpisodeRecord:
    """
    Attributes:
        times: (T + 1,) sample times.
        states: (T + 1, n) raw simulator states.
        observations: (T + 1, p) features.
        controls: (T, u) applied controls.
        rewards: (T,) per-step rewards.
        solve_us: (S,) wall time of each planning call in microseconds.
        converged: (S,) whether each QP converged.
        failed: The episode was aborted.
        reason: Why it was aborted.
    """
    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray
    controls: np.ndarray
    rewards: np.ndarray
    solve_us: np.ndarray
    converged: np.ndarray
    failed: bool = False
    reason: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def total_return(self):
        return float(np.sum(self.rewards))

    @property
    def success(self):
        return success_criterion(self)

    def save(self, directory):
        meta = {
            "kind": EPISODE_KIND,
            "failed": self.failed,
            "reason": self.reason,
            "total_return": self.total_return,
            "success": self.success,
            **self.meta,
        }
        return container.save_container(directory, meta, {
            "times": self.times,
            "states": self.states,
            "observations": self.observations,
            "controls": self.controls,
            "rewards": self.rewards,
            "solve_us": self.solve_us,
            "converged": self.converged.astype(np.uint8),
        })

    @classmethod
    def load(cls, directory):
        meta, arrays = container.load_container(directory)
        if meta.get("kind") != EPISODE_KIND:
            raise ContainerFormatError(f"{directory} holds a {meta.get('kind')!r}, not an episode")
        arrays["converged"] = arrays["converged"].astype(bool)
        extra = {k: v for k, v in meta.items() if k not in ("kind", "failed", "reason", "total_return", "success", "schema_version", "arrays")}
        return cls(failed=meta["failed"], reason=meta["reason"], meta=extra, **arrays)


def success_criterion(episode):
    """
    Over the final 20% of the visited states: mean |wrap(theta)| <= 0.2 rad
    and mean |omega| <= 1.0 rad/s. Aborted episodes fail.
    """
    if episode.failed:
        return False
    visited = episode.states[1:]
    if len(visited) == 0:
        return False
    tail = visited[-max(1, math.ceil(SUCCESS_FRACTION * len(visited))):]
    theta = np.abs(pendulum.wrap_angle(tail[:, 0]))
    omega = np.abs(tail[:, 1])
    return bool(np.mean(theta) <= SUCCESS_THETA and np.mean(omega) <= SUCCESS_OMEGA)


def scale_return(total, length, reference=REFERENCE_LENGTH):
    """A return rescaled to a `reference`-step episode."""
    return total * reference / length


class LearnedPlanner:
    """Latent QP through a `LatentPlant`, steering the features to `target`."""

    def __init__(self, plant, target, bounds, dt, config=ControllerConfig(), latent_bounds=None):
        self.plant = plant
        self.target = np.asarray(target, dtype=np.float64)
        self.bounds = bounds
        self.dt = dt
        self.config = config
        self.latent_bounds = latent_bounds

    @property
    def context_steps(self):
        return self.config.context

    def plan(self, observations, controls, raw_state):
        c = self.config.context
        self.plant.refresh(observations[-(c + 1):], controls[-c:])
        problem = lift_problem(
            self.plant, observations[-1], self.target, self.bounds, self.config.weights,
            self.config.horizon, self.dt, self.config.discretization, self.latent_bounds,
        )
        return solve_qp(problem, self.config.solver)


class PendulumOraclePlanner:
    """
    Plans with the true pendulum: linearizes the exact discrete step along
    the previous plan (shifted by one step), solves the QP with per-step
    maps in raw (theta, omega) space, and repeats `linearizations` times.
    """
    context_steps = 0

    def __init__(self, params, config=ControllerConfig(weights=QpWeights(
        q=(pendulum.THETA_COST, pendulum.OMEGA_COST), r=pendulum.TORQUE_COST, terminal_factor=10.0,
    ))):
        self.params = params
        self.config = config
        self.previous = None

    def _simulate(self, x0, u_bar):
        states = [x0]
        for k in range(len(u_bar) - 1):
            states.append(pendulum.pendulum_step(self.params, pendulum.PendulumState(*states[-1]), u_bar[k, 0]).as_array())
        return np.array(states)

    def _nominal_controls(self):
        if self.previous is None:
            return np.zeros((self.config.horizon, 1))
        return np.vstack([self.previous[1:], self.previous[-1:]])

    def plan(self, observations, controls, raw_state):
        x0 = np.array([pendulum.wrap_angle(raw_state[0]), raw_state[1]])
        u_bar = self._nominal_controls()
        q, r, q_terminal = self.config.weights.matrices(2, 1)
        bound = np.array([self.params.max_torque])
        solution = None
        for _ in range(max(1, self.config.linearizations)):
            x_bar = self._simulate(x0, u_bar)
            maps = [pendulum.linearize_step(self.params, x_bar[k], u_bar[k]) for k in range(self.config.horizon)]
            problem = QpProblem(
                a=np.array([m[0] for m in maps]),
                b=np.array([m[1] for m in maps]),
                o=np.array([m[2] for m in maps]),
                z0=x0, target=np.zeros(2), q=q, r=r, q_terminal=q_terminal,
                u_lower=-bound, u_upper=bound,
            )
            solution = solve_qp(problem, self.config.solver)
            u_bar = solution.controls
        self.previous = solution.controls
        return solution


def run_receding_horizon(env, planner, episode_length, rng, config=ControllerConfig()):
    """
    Drive `env` for `episode_length` steps.

    The first max(`config.warmup`, `planner.context_steps`) steps
    apply Perlin excitation to collect a context window; afterwards every
    step plans, applies the first control and re-plans. More than
    `config.max_failed_solves` consecutive non-converged solves, or a
    non-finite state, abort the episode.

    Returns:
        An `EpisodeRecord`.
    """
    low, high = env.control_bounds
    warmup = max(config.warmup, planner.context_steps) if planner.context_steps else 0
    warm_controls = perlin_controls(warmup, rng, (low, high)) if warmup else np.zeros((0, len(low)))
    observations = [env.observation()]
    states = [env.raw_state()]
    controls, rewards, solve_us, converged = [], [], [], []
    failed, reason = False, ""
    consecutive = 0
    for t in range(episode_length):
        if t < warmup:
            u = warm_controls[t]
        else:
            started = time.perf_counter_ns()
            try:
                solution = planner.plan(np.array(observations), np.array(controls).reshape(-1, len(low)), states[-1])
            except DynamicsException as e:
                failed, reason = True, f"planning failed: {e}"
                break
            solve_us.append((time.perf_counter_ns() - started) / 1e3)
            converged.append(solution.converged)
            consecutive = 0 if solution.converged else consecutive + 1
            if consecutive > config.max_failed_solves:
                failed, reason = True, f"{consecutive} consecutive non-converged solves"
                break
            u = np.clip(solution.controls[0], low, high)
        try:
            state, reward = env.step(u)
        except DynamicsException as e:
            failed, reason = True, f"environment diverged: {e}"
            break
        controls.append(np.asarray(u, dtype=np.float64).reshape(len(low)))
        rewards.append(reward)
        observations.append(env.observation())
        states.append(env.raw_state())
    n = len(controls)
    record = EpisodeRecord(
        times=env.dt * np.arange(n + 1),
        states=np.array(states),
        observations=np.array(observations),
        controls=np.array(controls).reshape(n, len(low)),
        rewards=np.array(rewards, dtype=np.float64),
        solve_us=np.array(solve_us, dtype=np.float64),
        converged=np.array(converged, dtype=bool),
        failed=failed,
        reason=reason,
    )
    logger.debug(
        f"episode: {n} steps, return {record.total_return:.2f}, "
        f"{'failed: ' + reason if failed else 'success' if record.success else 'no success'}"
    )
    return record
