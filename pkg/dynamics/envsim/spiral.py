"""
Randomized two-dimensional linear systems of spiral form.

    dx/dt = W x

Entries of W are drawn from N(0, 0.5^2); the diagonal is scaled by -0.1 and
shifted by -0.05, and one off-diagonal entry (chosen by a fair coin) changes
sign. Roughly half of these draws have an eigenvalue in the right half-plane
(saddles); they are kept unless the caller asks for `contracting_only`.
"""
from dataclasses import dataclass
import logging

import numpy as np

from dynamics.envsim.trajectory import Trajectory
from dynamics.exceptions import NonFiniteError, SamplingExhaustedError
from dynamics.odesolve import LinearOde, exact_linear_rollout

logger = logging.getLogger(__name__)

DRAW_STD = 0.5
DIAGONAL_SCALE = -0.1
DIAGONAL_SHIFT = -0.05
T_END = 35.0
N_POINTS = 400
# Only consulted with contracting_only=True.
MAX_CONTRACTING_DRAWS = 1000


@dataclass(frozen=True)
class SpiralSystem:
    w: np.ndarray

    @property
    def is_contracting(self):
        return bool(np.all(np.linalg.eigvals(self.w).real < 0))

    def to_meta(self):
        return np.asarray(self.w, dtype=np.float64).ravel()


def spiral_from_draws(raw, flip_w21):
    """Apply the diagonal scaling and the off-diagonal sign flip to raw draws."""
    w = np.array(raw, dtype=np.float64)
    w[0, 0] = DIAGONAL_SCALE * w[0, 0] + DIAGONAL_SHIFT
    w[1, 1] = DIAGONAL_SCALE * w[1, 1] + DIAGONAL_SHIFT
    if flip_w21:
        w[1, 0] *= -1.0
    else:
        w[0, 1] *= -1.0
    return SpiralSystem(w=w)


def sample_spiral_system(rng, contracting_only=False):
    """
    Draw one system with the spiral-form rule.

    With `contracting_only`, draws that are not contracting are discarded
    and redrawn, and `SamplingExhaustedError` is raised after
    `MAX_CONTRACTING_DRAWS` attempts.
    """
    if not contracting_only:
        return _draw(rng)
    for _ in range(MAX_CONTRACTING_DRAWS):
        system = _draw(rng)
        if system.is_contracting:
            return system
    raise SamplingExhaustedError(
        f"No contracting spiral system in {MAX_CONTRACTING_DRAWS} draws", attempts=MAX_CONTRACTING_DRAWS
    )


def _draw(rng):
    raw = rng.normal(0.0, DRAW_STD, size=(2, 2))
    return spiral_from_draws(raw, flip_w21=rng.random() < 0.5)


def default_time_grid(t_end=T_END, n_points=N_POINTS):
    return np.linspace(0.0, t_end, n_points)


def sample_initial_state(rng):
    radius = rng.uniform(1.0, 2.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    return radius * np.array([np.cos(phase), np.sin(phase)])


def simulate_spiral(system, x0, t_grid=None):
    """
    Solve dx/dt = W x exactly on `t_grid` (400 points on [0, 35] by default).

    Returns:
        A `Trajectory` with an empty (zero-width) control sequence.
    """
    t_grid = default_time_grid() if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    ode = LinearOde(
        a=system.w,
        b=np.zeros((2, 0)),
        o=np.zeros(2),
        controls=np.zeros((len(t_grid) - 1, 0)),
    )
    states = exact_linear_rollout(ode, np.asarray(x0, dtype=np.float64), t_grid)
    if not np.isfinite(states).all():
        raise NonFiniteError("Spiral simulation diverged", {"w": system.w.tolist(), "x0": list(x0)})
    return Trajectory(
        times=t_grid,
        states=states,
        controls=np.zeros((len(t_grid) - 1, 0)),
        system_meta={"w": system.w.tolist()},
    )


@dataclass(frozen=True)
class DriftingSpiralSystem:
    """A spiral whose generator moves linearly from `start` to `end` over the episode."""
    start: SpiralSystem
    end: SpiralSystem

    def generator(self, fraction):
        return (1.0 - fraction) * self.start.w + fraction * self.end.w

    def to_meta(self):
        return np.concatenate([self.start.to_meta(), self.end.to_meta()])


def sample_drifting_spiral(rng, contracting_only=False):
    return DriftingSpiralSystem(
        start=sample_spiral_system(rng, contracting_only),
        end=sample_spiral_system(rng, contracting_only),
    )


def simulate_drifting_spiral(system, x0, t_grid=None):
    """
    Integrate dx/dt = W(t) x where W interpolates the two generators.

    Each sample interval is propagated exactly with the generator frozen at
    the interval midpoint.
    """
    t_grid = default_time_grid() if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    span = t_grid[-1] - t_grid[0]
    states = np.empty((len(t_grid), 2))
    states[0] = x0
    for k in range(len(t_grid) - 1):
        mid = 0.5 * (t_grid[k] + t_grid[k + 1]) - t_grid[0]
        ode = LinearOde(
            a=system.generator(mid / span),
            b=np.zeros((2, 0)),
            o=np.zeros(2),
            controls=np.zeros((1, 0)),
        )
        states[k + 1] = exact_linear_rollout(ode, states[k], t_grid[k:k + 2])[-1]
    if not np.isfinite(states).all():
        raise NonFiniteError("Drifting spiral simulation diverged", {"x0": list(x0)})
    return Trajectory(
        times=t_grid,
        states=states,
        controls=np.zeros((len(t_grid) - 1, 0)),
        system_meta={"w_start": system.start.w.tolist(), "w_end": system.end.w.tolist()},
    )
