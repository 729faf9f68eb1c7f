"""
Finite-horizon quadratic programs over affine latent dynamics

    min  sum_{k=1}^{N-1} 1/2 (z_k - z*)' Q (z_k - z*) + 1/2 (z_N - z*)' Q_T (z_N - z*)
         + sum_{k=0}^{N-1} 1/2 u_k' R u_k
    s.t. z_{k+1} = A_k z_k + B_k u_k + o_k,   lo_u <= u_k <= hi_u,   lo_z <= z_k <= hi_z

The states are eliminated (condensed form Z = Phi z0 + Gamma U + c), leaving
a box- and row-constrained QP in U that an operator-splitting solver handles.
A backward Riccati recursion solves the same problem exactly when no
inequality is present.
"""
from dataclasses import dataclass, field
import logging
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from dynamics.exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)

HORIZON = 24


@dataclass(frozen=True)
class QpProblem:
    """
    Attributes:
        a: (N, d, d) discrete state maps.
        b: (N, d, u) discrete control maps.
        o: (N, d) discrete offsets.
        z0: (d,) initial latent.
        target: (d,) latent target z*.
        q: (d, d) stage weight, positive semidefinite.
        r: (u, u) control weight, positive definite.
        q_terminal: (d, d) terminal weight.
        u_lower, u_upper: (u,) control bounds; may be infinite.
        z_lower, z_upper: Optional (d,) latent bounds applied to z_1..z_N.
    """
    a: np.ndarray
    b: np.ndarray
    o: np.ndarray
    z0: np.ndarray
    target: np.ndarray
    q: np.ndarray
    r: np.ndarray
    q_terminal: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    z_lower: Optional[np.ndarray] = None
    z_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        n, d, m = self.b.shape
        if n < 1:
            raise ShapeMismatchError("Horizon must be at least 1")
        expected = {
            "a": (n, d, d), "o": (n, d), "z0": (d,), "target": (d,), "q": (d, d), "r": (m, m),
            "q_terminal": (d, d), "u_lower": (m,), "u_upper": (m,),
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ShapeMismatchError(f"QP {name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        for name in ("z_lower", "z_upper"):
            value = getattr(self, name)
            if value is not None and np.shape(value) != (d,):
                raise ShapeMismatchError(f"QP {name} has shape {np.shape(value)}, expected {(d,)}")
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("Control lower bound exceeds upper bound")
        if m and np.any(np.linalg.eigvalsh(0.5 * (self.r + self.r.T)) <= 0):
            raise ValueError("Control weight R must be positive definite")

    @classmethod
    def time_invariant(cls, a, b, o, horizon=HORIZON, **kwargs):
        a, b, o = (np.asarray(x, dtype=np.float64) for x in (a, b, o))
        return cls(
            a=np.broadcast_to(a, (horizon,) + a.shape).copy(),
            b=np.broadcast_to(b, (horizon,) + b.shape).copy(),
            o=np.broadcast_to(o, (horizon,) + o.shape).copy(),
            **kwargs,
        )

    @property
    def horizon(self):
        return self.b.shape[0]

    @property
    def state_dim(self):
        return self.b.shape[1]

    @property
    def control_dim(self):
        return self.b.shape[2]

    @property
    def unconstrained(self):
        return (
            np.all(np.isinf(self.u_lower)) and np.all(np.isinf(self.u_upper))
            and self.z_lower is None and self.z_upper is None
        )


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    # rho is rebalanced against the residual ratio every this many iterations
    adapt_interval: int = 25
    polish: bool = True
    feasibility_tol: float = 1e-6


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    complementarity: float

    @property
    def worst(self):
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    controls: np.ndarray
    states: np.ndarray
    objective: float
    kkt: KktResiduals
    iterations: int
    converged: bool
    polished: bool = False
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class Condensed:
    """Z = phi z0 + gamma U + c, stacked over k = 1..N."""
    phi: np.ndarray
    gamma: np.ndarray
    c: np.ndarray
    hessian: np.ndarray
    gradient: np.ndarray
    constant: float
    rows: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def objective(self, u_flat):
        return float(0.5 * u_flat @ self.hessian @ u_flat + self.gradient @ u_flat + self.constant)


def condense(problem):
    n, d, m = problem.horizon, problem.state_dim, problem.control_dim
    phi = np.zeros((n * d, d))
    gamma = np.zeros((n * d, n * m))
    c = np.zeros(n * d)
    phi_k = np.eye(d)
    c_k = np.zeros(d)
    gamma_k = np.zeros((d, n * m))
    for k in range(n):
        a_k, b_k = problem.a[k], problem.b[k]
        phi_k = a_k @ phi_k
        c_k = a_k @ c_k + problem.o[k]
        gamma_k = a_k @ gamma_k
        gamma_k[:, k * m:(k + 1) * m] = b_k
        phi[k * d:(k + 1) * d] = phi_k
        gamma[k * d:(k + 1) * d] = gamma_k
        c[k * d:(k + 1) * d] = c_k

    weights = [problem.q] * (n - 1) + [problem.q_terminal]
    q_bar = np.zeros((n * d, n * d))
    for k, w in enumerate(weights):
        q_bar[k * d:(k + 1) * d, k * d:(k + 1) * d] = w
    r_bar = np.kron(np.eye(n), problem.r)
    e = phi @ problem.z0 + c - np.tile(problem.target, n)
    hessian = gamma.T @ q_bar @ gamma + r_bar
    hessian = 0.5 * (hessian + hessian.T)

    rows = [np.eye(n * m)]
    lower = [np.tile(problem.u_lower, n)]
    upper = [np.tile(problem.u_upper, n)]
    if problem.z_lower is not None or problem.z_upper is not None:
        free = phi @ problem.z0 + c
        rows.append(gamma)
        z_lo = np.full(d, -np.inf) if problem.z_lower is None else problem.z_lower
        z_hi = np.full(d, np.inf) if problem.z_upper is None else problem.z_upper
        lower.append(np.tile(z_lo, n) - free)
        upper.append(np.tile(z_hi, n) - free)
    rows, lower, upper = np.vstack(rows), np.concatenate(lower), np.concatenate(upper)
    keep = np.isfinite(lower) | np.isfinite(upper)
    return Condensed(
        phi=phi, gamma=gamma, c=c, hessian=hessian, gradient=gamma.T @ q_bar @ e,
        constant=float(0.5 * e @ q_bar @ e), rows=rows[keep], lower=lower[keep], upper=upper[keep],
    )


def predicted_states(problem, controls):
    z = problem.z0
    states = []
    for k in range(problem.horizon):
        z = problem.a[k] @ z + problem.b[k] @ controls[k] + problem.o[k]
        states.append(z)
    return np.array(states).reshape(problem.horizon, problem.state_dim)


def objective(problem, controls):
    """The QP objective of a (N, u) control sequence."""
    states = predicted_states(problem, controls)
    dev = states - problem.target
    value = 0.5 * sum(dev[k] @ problem.q @ dev[k] for k in range(problem.horizon - 1))
    value += 0.5 * dev[-1] @ problem.q_terminal @ dev[-1]
    value += 0.5 * sum(u @ problem.r @ u for u in controls)
    return float(value)


def _violation(cx, lower, upper):
    if cx.size == 0:
        return 0.0
    return float(np.max(np.maximum(0.0, np.maximum(lower - cx, cx - upper))))


def kkt_residuals(cond, x, y):
    """
    Stationarity, primal violation and complementarity of (x, y), with y > 0
    on active upper bounds and y < 0 on active lower bounds.
    """
    cx = cond.rows @ x
    stationarity = float(np.max(np.abs(cond.hessian @ x + cond.gradient + cond.rows.T @ y), initial=0.0))
    slack_lo = np.where(np.isfinite(cond.lower), cx - cond.lower, 0.0)
    slack_hi = np.where(np.isfinite(cond.upper), cond.upper - cx, 0.0)
    comp = np.abs(np.minimum(y, 0.0) * slack_lo) + np.abs(np.maximum(y, 0.0) * slack_hi)
    return KktResiduals(
        stationarity=stationarity,
        primal=_violation(cx, cond.lower, cond.upper),
        complementarity=float(np.max(comp, initial=0.0)),
    )


def _polish(cond, x, y, settings):
    """Solve the equality-constrained problem on the active set guessed from (x, y)."""
    cx = cond.rows @ x
    tol = 1e3 * settings.eps_abs
    at_lower = (cx - cond.lower < tol) & (y < 0)
    at_upper = (cond.upper - cx < tol) & (y > 0)
    active = at_lower | at_upper
    n, k = len(x), int(active.sum())
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = cond.hessian
    kkt[:n, n:] = cond.rows[active].T
    kkt[n:, :n] = cond.rows[active]
    rhs = np.concatenate([-cond.gradient, np.where(at_upper, cond.upper, cond.lower)[active]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    y_pol = np.zeros_like(y)
    y_pol[active] = sol[n:]
    # the guessed active set is only right if the multipliers keep their signs
    if np.any(y_pol[at_lower] > 0) or np.any(y_pol[at_upper] < 0):
        return None
    return sol[:n], y_pol


def _solve_unconstrained(cond):
    return cho_solve(cho_factor(cond.hessian), -cond.gradient)


def solve_qp(problem, settings=QpSettings()):
    """
    Operator-splitting (ADMM) solve of the condensed QP with over-relaxation
    and adaptive step, followed by optional active-set polishing.

    `objective_trace` holds the objective of every iterate.
    `best_objective_trace` holds the best primal-feasible value seen so far
    (inf until the first feasible iterate), so it never increases. On
    hitting `max_iter` the best feasible iterate is returned with
    `converged=False`.
    """
    cond = condense(problem)
    n_u, m = problem.control_dim, len(cond.lower)
    if m == 0:
        x = _solve_unconstrained(cond)
        controls = x.reshape(problem.horizon, n_u)
        value = cond.objective(x)
        return QpSolution(
            controls=controls,
            states=predicted_states(problem, controls),
            objective=value,
            kkt=kkt_residuals(cond, x, np.zeros(0)),
            iterations=0,
            converged=True,
            objective_trace=np.array([value]),
            best_objective_trace=np.array([value]),
        )

    c_mat, lo, hi = cond.rows, cond.lower, cond.upper
    n = cond.hessian.shape[0]
    rho, sigma, alpha = settings.rho, settings.sigma, settings.alpha
    factor = cho_factor(cond.hessian + sigma * np.eye(n) + rho * c_mat.T @ c_mat)
    x = np.zeros(n)
    z = np.clip(c_mat @ x, lo, hi)
    y = np.zeros(m)
    best_x, best_value = None, np.inf
    trace, best_trace = [], []
    converged = False
    iteration = 0
    for iteration in range(1, settings.max_iter + 1):
        x_tilde = cho_solve(factor, sigma * x - cond.gradient + c_mat.T @ (rho * z - y))
        z_tilde = c_mat @ x_tilde
        x = alpha * x_tilde + (1 - alpha) * x
        z_relaxed = alpha * z_tilde + (1 - alpha) * z
        z = np.clip(z_relaxed + y / rho, lo, hi)
        y = y + rho * (z_relaxed - z)

        cx = c_mat @ x
        hx, cty = cond.hessian @ x, c_mat.T @ y
        r_prim = float(np.max(np.abs(cx - z)))
        r_dual = float(np.max(np.abs(hx + cond.gradient + cty)))
        scale_prim = max(np.max(np.abs(cx)), np.max(np.abs(z)))
        scale_dual = max(np.max(np.abs(hx)), np.max(np.abs(cty)), np.max(np.abs(cond.gradient)))

        value = cond.objective(x)
        trace.append(value)
        if _violation(cx, lo, hi) <= settings.feasibility_tol and value < best_value:
            best_x, best_value = x.copy(), value
        best_trace.append(best_value)

        if (r_prim <= settings.eps_abs + settings.eps_rel * scale_prim
                and r_dual <= settings.eps_abs + settings.eps_rel * scale_dual):
            converged = True
            break
        if iteration % settings.adapt_interval == 0:
            ratio = (r_prim / max(scale_prim, 1e-12)) / max(r_dual / max(scale_dual, 1e-12), 1e-12)
            new_rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                factor = cho_factor(cond.hessian + sigma * np.eye(n) + rho * c_mat.T @ c_mat)

    polished = False
    if converged:
        if problem.z_lower is None and problem.z_upper is None:
            x = np.clip(x, np.tile(problem.u_lower, problem.horizon), np.tile(problem.u_upper, problem.horizon))
        kkt = kkt_residuals(cond, x, y)
        if settings.polish:
            refined = _polish(cond, x, y, settings)
            if refined is not None:
                kkt_polished = kkt_residuals(cond, *refined)
                if kkt_polished.worst < kkt.worst:
                    (x, y), kkt, polished = refined, kkt_polished, True
    else:
        if best_x is not None:
            x = best_x
        kkt = kkt_residuals(cond, x, y)
        logger.debug(f"QP stopped at {settings.max_iter} iterations, residuals {kkt}")

    controls = x.reshape(problem.horizon, n_u)
    value = cond.objective(x)
    return QpSolution(
        controls=controls,
        states=predicted_states(problem, controls),
        objective=value,
        kkt=kkt,
        iterations=iteration,
        converged=converged,
        polished=polished,
        objective_trace=np.array(trace),
        best_objective_trace=np.array(best_trace),
    )


def riccati_gains(problem):
    """
    Backward recursion for the affine feedback u_k = -K_k z_k - k_k.

    Inequality bounds are ignored.
    """
    n = problem.horizon
    p_mat = problem.q_terminal
    p_vec = -problem.q_terminal @ problem.target
    gains = [None] * n
    offsets = [None] * n
    for k in reversed(range(n)):
        a, b, o = problem.a[k], problem.b[k], problem.o[k]
        h_uu = problem.r + b.T @ p_mat @ b
        h_uz = b.T @ p_mat @ a
        h_u = b.T @ (p_mat @ o + p_vec)
        chol = cho_factor(h_uu)
        gains[k] = cho_solve(chol, h_uz)
        offsets[k] = cho_solve(chol, h_u)
        q_k = problem.q if k > 0 else np.zeros_like(problem.q)
        p_vec = -q_k @ problem.target + a.T @ (p_mat @ o + p_vec) - h_uz.T @ offsets[k]
        p_mat = q_k + a.T @ p_mat @ a - h_uz.T @ gains[k]
        p_mat = 0.5 * (p_mat + p_mat.T)
    return np.array(gains), np.array(offsets)


def riccati_oracle(problem):
    """Exact solution of the problem with its inequality constraints removed."""
    gains, offsets = riccati_gains(problem)
    z = problem.z0
    controls = np.zeros((problem.horizon, problem.control_dim))
    for k in range(problem.horizon):
        controls[k] = -gains[k] @ z - offsets[k]
        z = problem.a[k] @ z + problem.b[k] @ controls[k] + problem.o[k]
    value = objective(problem, controls)
    free = QpProblem(**{
        **{f: getattr(problem, f) for f in ("a", "b", "o", "z0", "target", "q", "r", "q_terminal")},
        "u_lower": np.full(problem.control_dim, -np.inf),
        "u_upper": np.full(problem.control_dim, np.inf),
    })
    return QpSolution(
        controls=controls,
        states=predicted_states(problem, controls),
        objective=value,
        kkt=kkt_residuals(condense(free), controls.ravel(), np.zeros(0)),
        iterations=problem.horizon,
        converged=True,
        objective_trace=np.array([value]),
    )
