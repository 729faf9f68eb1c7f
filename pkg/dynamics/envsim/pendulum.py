"""
Planar pendulum swing-up with domain-randomized physical parameters.

The equations of motion are the standard swing-up benchmark's, with theta = 0
upright:

    omega' = clip(omega + dt * (3 g / (2 l) * sin(theta) + 3 u / (m l^2)), +-max_speed)
    theta' = theta + dt * omega'

Models observe (cos theta, sin theta, omega); theta itself is kept for the
cost.
"""
from dataclasses import dataclass
import logging

import numpy as np

from dynamics.envsim.trajectory import Trajectory
from dynamics.exceptions import NonFiniteError

logger = logging.getLogger(__name__)

GRAVITY = 10.0
LENGTH = 1.0
MASS = 1.0
MAX_TORQUE = 2.0
MAX_SPEED = 8.0
DT = 0.05
STD_FRAC = 0.30
# Parameters at or below this fraction of their mean are redrawn.
DEGENERACY_FRAC = 0.1
THETA_COST = 1.0
OMEGA_COST = 0.1
TORQUE_COST = 0.001
OBSERVATION_DIM = 3
CONTROL_DIM = 1


@dataclass(frozen=True)
class PendulumParams:
    gravity: float = GRAVITY
    length: float = LENGTH
    mass: float = MASS
    max_torque: float = MAX_TORQUE
    max_speed: float = MAX_SPEED
    dt: float = DT

    def __post_init__(self):
        if self.gravity <= 0 or self.length <= 0 or self.mass <= 0:
            raise ValueError(f"Non-physical pendulum parameters: {self}")

    @property
    def gravity_gain(self):
        return 3.0 * self.gravity / (2.0 * self.length)

    @property
    def torque_gain(self):
        return 3.0 / (self.mass * self.length ** 2)

    def to_meta(self):
        return np.array([self.gravity, self.length, self.mass], dtype=np.float64)


@dataclass(frozen=True)
class PendulumState:
    theta: float
    omega: float

    def as_array(self):
        return np.array([self.theta, self.omega], dtype=np.float64)


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


def _sample_positive(rng, mean, std_frac):
    while True:
        value = rng.normal(mean, std_frac * mean)
        if value > DEGENERACY_FRAC * mean:
            return float(value)


def sample_pendulum_params(rng, std_frac=STD_FRAC):
    """
    Draw gravity, length and mass independently from N(mean, (std_frac mean)^2).

    Draws at or below 10% of the mean are rejected and redrawn.
    """
    return PendulumParams(
        gravity=_sample_positive(rng, GRAVITY, std_frac),
        length=_sample_positive(rng, LENGTH, std_frac),
        mass=_sample_positive(rng, MASS, std_frac),
    )


def pendulum_step(params, state, u):
    u = float(u)
    if not (np.isfinite(state.theta) and np.isfinite(state.omega) and np.isfinite(u)):
        raise NonFiniteError(
            "Pendulum step received a non-finite input",
            {"theta": state.theta, "omega": state.omega, "u": u},
        )
    u = min(max(u, -params.max_torque), params.max_torque)
    omega = state.omega + params.dt * (
        params.gravity_gain * np.sin(state.theta) + params.torque_gain * u
    )
    omega = min(max(omega, -params.max_speed), params.max_speed)
    return PendulumState(theta=state.theta + params.dt * omega, omega=omega)


def pendulum_reward(state, u):
    theta = wrap_angle(state.theta)
    return -(THETA_COST * theta ** 2 + OMEGA_COST * state.omega ** 2 + TORQUE_COST * float(u) ** 2)


def linearize_step(params, x_bar, u_bar):
    """
    Affine model of `pendulum_step` around (x_bar, u_bar).

    The clamps are differentiated as their active branch: a saturated speed
    or torque has zero sensitivity.

    Returns:
        (A, B, c) with x' ~= A x + B u + c.
    """
    theta, omega = float(x_bar[0]), float(x_bar[1])
    u_raw = float(np.ravel(u_bar)[0])
    u_sat = abs(u_raw) > params.max_torque
    u = min(max(u_raw, -params.max_torque), params.max_torque)
    omega_pre = omega + params.dt * (params.gravity_gain * np.sin(theta) + params.torque_gain * u)
    if abs(omega_pre) < params.max_speed:
        d_omega = np.array([params.dt * params.gravity_gain * np.cos(theta), 1.0])
        d_omega_u = 0.0 if u_sat else params.dt * params.torque_gain
    else:
        d_omega = np.zeros(2)
        d_omega_u = 0.0
    jac_x = np.vstack([np.array([1.0, 0.0]) + params.dt * d_omega, d_omega])
    jac_u = np.array([[params.dt * d_omega_u], [d_omega_u]])
    nxt = pendulum_step(params, PendulumState(theta, omega), u_raw).as_array()
    offset = nxt - jac_x @ np.array([theta, omega]) - jac_u[:, 0] * u_raw
    return jac_x, jac_u, offset


def observe(states):
    """Map raw (theta, omega) states of shape (..., 2) to (cos, sin, omega)."""
    states = np.asarray(states, dtype=np.float64)
    return np.stack([np.cos(states[..., 0]), np.sin(states[..., 0]), states[..., 1]], axis=-1)


def sample_initial_state(rng):
    return PendulumState(theta=float(rng.uniform(-np.pi, np.pi)), omega=float(rng.uniform(-1.0, 1.0)))


def simulate_pendulum(params, state, controls):
    """Roll the pendulum forward under a (T - 1, 1) control sequence."""
    controls = np.clip(np.asarray(controls, dtype=np.float64), -params.max_torque, params.max_torque)
    states = np.empty((len(controls) + 1, 2))
    states[0] = state.as_array()
    for k, u in enumerate(controls[:, 0]):
        state = pendulum_step(params, state, u)
        states[k + 1] = state.as_array()
    return Trajectory(
        times=params.dt * np.arange(len(states)),
        states=states,
        controls=controls,
        system_meta={"gravity": params.gravity, "length": params.length, "mass": params.mass},
    )


class PendulumEnv:
    """
    Stateful pendulum for closed-loop control.

    Attributes:
        params: The physical instance being controlled.
        state: The current `PendulumState`.
    """
    control_dim = CONTROL_DIM

    def __init__(self, params, state=None):
        self.params = params
        self.state = state if state is not None else PendulumState(np.pi, 0.0)

    @property
    def dt(self):
        return self.params.dt

    @property
    def control_bounds(self):
        return np.array([-self.params.max_torque]), np.array([self.params.max_torque])

    def reset(self, rng=None, state=None):
        if state is None:
            state = sample_initial_state(rng)
        self.state = state
        return self.state

    def raw_state(self):
        return self.state.as_array()

    def observation(self):
        return observe(self.raw_state())

    def step(self, u):
        """Apply one control; returns the reward earned from the pre-step state."""
        u = float(np.ravel(u)[0])
        reward = pendulum_reward(self.state, min(max(u, -self.params.max_torque), self.params.max_torque))
        self.state = pendulum_step(self.params, self.state, u)
        return self.state, reward

