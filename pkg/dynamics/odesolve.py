"""
Integrators for controlled linear latent ODEs

    dz/dt = a z + b u(t) + o

with zero-order-hold (piecewise-constant) controls. Three solvers share one
problem description:

- `euler_rollout`: fixed-step explicit Euler. Works on numpy arrays and on
  torch tensors (batched, differentiable); this is the training solver.
- `dopri45_rollout`: adaptive Dormand-Prince 5(4) with PI step control and
  4th-order dense output. numpy only; used for evaluation.
- `exact_linear_rollout`: closed form through the augmented matrix
  exponential. The test oracle.
"""
from dataclasses import dataclass
import logging
import math
from typing import Literal, Optional

import numpy as np
import torch
from scipy.linalg import expm

from dynamics.exceptions import NonFiniteError, ShapeMismatchError, SolverStepLimitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearOde:
    """
    A controlled linear ODE with zero-order-hold controls.

    Attributes:
        a: (..., d, d) generator.
        b: (..., d, u) control matrix.
        o: (..., d) constant offset.
        controls: (..., K, u) control held on the k-th control interval.
        control_times: Optional (K + 1,) switch times. When omitted the
            controls switch on the rollout's time grid.
    """
    a: object
    b: object
    o: object
    controls: object
    control_times: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SolverConfig:
    kind: Literal["euler", "dopri45"] = "euler"
    # Euler step; None means one step per time-grid interval (the data dt).
    step: Optional[float] = None
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 100_000
    safety: float = 0.9


def _matvec(m, v):
    return (m @ v[..., None])[..., 0]


def _stack(items, like):
    if isinstance(like, torch.Tensor):
        return torch.stack(items, dim=-2)
    return np.stack(items, axis=-2)


def _all_finite(x):
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(x).all())


def _check_controls(ode, n_intervals):
    k = ode.controls.shape[-2]
    if k != n_intervals:
        raise ShapeMismatchError(
            f"Control sequence has {k} intervals, the integration span needs {n_intervals}"
        )


def euler_rollout(ode, z0, t_grid, step=None):
    """
    Integrate with explicit Euler.

    Each grid interval h_k = t_{k+1} - t_k is covered by ceil(h_k / step)
    equal sub-steps (a single step when `step` is None), all under the
    control u_k.

    Args:
        ode: A `LinearOde`; its controls are indexed by grid interval.
        z0: (..., d) initial state.
        t_grid: (T,) increasing times.
        step: Optional maximum sub-step.

    Returns:
        (..., T, d) states at the grid times.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    _check_controls(ode, len(t_grid) - 1)
    z = z0
    states = [z0]
    for k, h in enumerate(np.diff(t_grid)):
        n_sub = 1 if step is None else max(1, math.ceil(h / step - 1e-12))
        h_sub = float(h) / n_sub
        drive = _matvec(ode.b, ode.controls[..., k, :]) + ode.o
        for _ in range(n_sub):
            z = z + h_sub * (_matvec(ode.a, z) + drive)
        states.append(z)
    z_seq = _stack(states, z0)
    if not _all_finite(z_seq):
        raise NonFiniteError("Euler rollout produced a non-finite state", {"steps": len(t_grid) - 1})
    return z_seq


def euler_discretize(a, b, o, h):
    """One Euler step as an affine map: z' = A z + B u + c."""
    d = a.shape[-1]
    eye = torch.eye(d, dtype=a.dtype) if isinstance(a, torch.Tensor) else np.eye(d)
    return eye + h * a, h * b, h * o


def discretize(a, b, o, h):
    """
    Exact zero-order-hold discretization of one interval of length h.

    Uses exp([[a, b, o], [0, 0, 0]] h), computed by scaling-and-squaring
    with a Pade approximant.

    Returns:
        (A, B, c) with z(t + h) = A z(t) + B u + c.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    d, n_u = b.shape
    aug = np.zeros((d + n_u + 1, d + n_u + 1))
    aug[:d, :d] = a
    aug[:d, d:d + n_u] = b
    aug[:d, d + n_u] = o
    m = expm(aug * h)
    return m[:d, :d], m[:d, d:d + n_u], m[:d, d + n_u]


def _segments(t_grid, control_times):
    """Merge output times and control switches into integration intervals."""
    if control_times is None:
        control_times = t_grid
    control_times = np.asarray(control_times, dtype=np.float64)
    if t_grid[0] < control_times[0] or t_grid[-1] > control_times[-1] + 1e-12:
        raise ShapeMismatchError("Controls are not defined on the full integration span")
    breaks = np.union1d(t_grid, control_times[(control_times > t_grid[0]) & (control_times < t_grid[-1])])
    # index of the control interval that holds on each [breaks[i], breaks[i+1]]
    owner = np.clip(np.searchsorted(control_times, breaks[:-1], side="right") - 1, 0, len(control_times) - 2)
    return breaks, owner, control_times


def _unbatched(fn):
    """Apply a single-system numpy solver over leading batch dimensions."""
    def wrapper(ode, z0, t_grid, *args, **kwargs):
        z0 = np.asarray(z0, dtype=np.float64)
        if z0.ndim == 1:
            return fn(ode, z0, np.asarray(t_grid, dtype=np.float64), *args, **kwargs)
        batch = z0.shape[:-1]
        a = np.broadcast_to(ode.a, batch + np.shape(ode.a)[-2:])
        b = np.broadcast_to(ode.b, batch + np.shape(ode.b)[-2:])
        o = np.broadcast_to(ode.o, batch + np.shape(ode.o)[-1:])
        u = np.broadcast_to(ode.controls, batch + np.shape(ode.controls)[-2:])
        out = None
        for idx in np.ndindex(*batch):
            single = LinearOde(a[idx], b[idx], o[idx], u[idx], ode.control_times)
            z_seq = fn(single, z0[idx], np.asarray(t_grid, dtype=np.float64), *args, **kwargs)
            if out is None:
                out = np.empty(batch + z_seq.shape)
            out[idx] = z_seq
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_unbatched
def exact_linear_rollout(ode, z0, t_grid):
    """
    Closed-form rollout: each constant-control interval is propagated by the
    augmented matrix exponential applied to (z; 1).
    """
    controls = np.asarray(ode.controls, dtype=np.float64)
    if ode.control_times is None:
        _check_controls(ode, len(t_grid) - 1)
    breaks, owner, _ = _segments(t_grid, ode.control_times)
    out_index = {t: i for i, t in enumerate(t_grid)}
    z_seq = np.empty((len(t_grid), z0.shape[-1]))
    z_seq[0] = z0
    z = z0
    cache = {}
    for i, (t0, t1) in enumerate(zip(breaks[:-1], breaks[1:])):
        key = (owner[i], round(t1 - t0, 15))
        if key not in cache:
            cache[key] = discretize(ode.a, ode.b, ode.o, t1 - t0)
        a_d, b_d, c_d = cache[key]
        z = a_d @ z + b_d @ controls[owner[i]] + c_d
        if t1 in out_index:
            z_seq[out_index[t1]] = z
    if not np.isfinite(z_seq).all():
        raise NonFiniteError("Exact rollout produced a non-finite state", {"span": float(t_grid[-1] - t_grid[0])})
    return z_seq


# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_HAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_HAT
# 4th-order continuous extension: y(t + s h) = y + h K^T (P [s, s^2, s^3, s^4])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@_unbatched
def dopri45_rollout(ode, z0, t_grid, config=SolverConfig(kind="dopri45")):
    """
    Adaptive Dormand-Prince integration with PI step-size control.

    Control switches are treated as events: every step ends at or before the
    next switch, so no step straddles a discontinuity of u(t). Grid times
    falling strictly inside an accepted step come from the dense output.

    Raises:
        SolverStepLimitError: more than `config.max_steps` steps were taken;
            carries the trajectory computed so far.
    """
    a = np.asarray(ode.a, dtype=np.float64)
    b = np.asarray(ode.b, dtype=np.float64)
    o = np.asarray(ode.o, dtype=np.float64)
    controls = np.asarray(ode.controls, dtype=np.float64)
    if ode.control_times is None:
        _check_controls(ode, len(t_grid) - 1)
    control_times = t_grid if ode.control_times is None else np.asarray(ode.control_times, dtype=np.float64)
    _segments(t_grid, control_times)

    z_seq = np.empty((len(t_grid), z0.shape[-1]))
    z_seq[0] = z0
    next_out = 1
    t = float(t_grid[0])
    z = z0.copy()
    h = None
    err_prev = 1.0
    n_steps = 0
    n_rejected = 0
    k = np.empty((7, z0.shape[-1]))

    first = np.searchsorted(control_times, t, side="right") - 1
    for seg in range(first, len(control_times) - 1):
        seg_end = min(float(control_times[seg + 1]), float(t_grid[-1]))
        if seg_end <= t:
            continue
        drive = b @ controls[seg] + o

        def f(y):
            return a @ y + drive

        if h is None:
            h = _initial_step(f, z, seg_end - t, config)
        k[0] = f(z)
        while t < seg_end:
            last = h >= seg_end - t
            h_try = seg_end - t if last else h
            for i in range(1, 7):
                k[i] = f(z + h_try * (np.asarray(_A[i]) @ k[:i]))
            z_new = z + h_try * (_B[:6] @ k[:6])
            err_vec = h_try * (_E @ k)
            scale = config.atol + config.rtol * np.maximum(np.abs(z), np.abs(z_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2))) if z.size else 0.0
            n_steps += 1
            if n_steps > config.max_steps:
                raise SolverStepLimitError(
                    f"dopri45 exceeded {config.max_steps} steps at t={t:.6g}",
                    partial_times=t_grid[:next_out].copy(),
                    partial_states=z_seq[:next_out].copy(),
                )
            if err <= 1.0:
                t_new = seg_end if last else t + h_try
                while next_out < len(t_grid) and t_grid[next_out] <= t_new:
                    t_out = t_grid[next_out]
                    if t_out == t_new:
                        z_seq[next_out] = z_new
                    else:
                        s = (t_out - t) / h_try
                        z_seq[next_out] = z + h_try * (k.T @ (_P @ np.array([s, s ** 2, s ** 3, s ** 4])))
                    next_out += 1
                if err == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = config.safety * err ** -_ALPHA * err_prev ** _BETA
                    factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                err_prev = max(err, 1e-4)
                t, z = t_new, z_new
                k[0] = k[6]
                if not last:
                    h = h_try * factor
            else:
                n_rejected += 1
                h = h_try * max(_MIN_FACTOR, config.safety * err ** -0.2)
        if not np.isfinite(z).all():
            raise NonFiniteError("dopri45 produced a non-finite state", {"t": t, "steps": n_steps})
    logger.debug(f"dopri45: {n_steps} steps, {n_rejected} rejected")
    return z_seq


def _initial_step(f, z, span, config):
    """Starting step from the scaled norms of the state and its derivative."""
    scale = config.atol + config.rtol * np.abs(z)
    d0 = np.sqrt(np.mean((z / scale) ** 2)) if z.size else 0.0
    d1 = np.sqrt(np.mean((f(z) / scale) ** 2)) if z.size else 0.0
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    return min(max(h, 1e-6), span)


def rollout(ode, z0, t_grid, config=SolverConfig()):
    """Dispatch to the solver named by `config.kind`."""
    if config.kind == "euler":
        return euler_rollout(ode, z0, t_grid, step=config.step)
    elif config.kind == "dopri45":
        return dopri45_rollout(ode, z0, t_grid, config)
    raise ValueError(f"Unknown solver kind {config.kind!r}")
