"""
Lift a planning problem into the latent space of a trained time-invariant
model.

Controls are not encoded. The model's control matrix acts on normalized
controls; lifting folds the control normalizer into (b, o) so the QP
decision variables and their bounds stay in raw control units.
"""
from dataclasses import dataclass
import logging
from typing import Literal, Optional

import numpy as np
import torch

from dynamics import odesolve
from dynamics.exceptions import MissingEmbeddingError
from dynamics.latentdyn.model import encode_states, infer_embedding
from dynamics.mpc.qp import HORIZON, QpProblem

logger = logging.getLogger(__name__)

LATENT_MARGIN = 0.2


@dataclass(frozen=True)
class QpWeights:
    """Diagonal weights: scalars broadcast over the dimension."""
    q: object = 1.0
    r: object = 0.001
    terminal_factor: float = 10.0

    def matrices(self, state_dim, control_dim):
        q = np.diag(np.broadcast_to(np.asarray(self.q, dtype=np.float64), (state_dim,)))
        r = np.diag(np.broadcast_to(np.asarray(self.r, dtype=np.float64), (control_dim,)))
        return q, r, self.terminal_factor * q


@dataclass
class LatentPlant:
    """
    A trained model with its normalizers and the embedding most recently
    inferred from a context window.

    Attributes:
        model: A time-invariant model with a state encoder.
        normalizer: Feature normalizer of the training data.
        control_normalizer: Control normalizer of the training data.
        embedding: numpy (a, b, o) acting on raw controls, or None before
            the first refresh.
    """
    model: object
    normalizer: object
    control_normalizer: object
    embedding: Optional[tuple] = None

    def _tensor(self, x):
        return torch.as_tensor(np.asarray(x, dtype=np.float64)).to(self.model.dtype)

    def encode(self, features):
        """Latent of raw (unnormalized) features."""
        with torch.no_grad():
            z = encode_states(self.model, self._tensor(self.normalizer.apply(np.asarray(features, dtype=np.float64))))
        return z.detach().cpu().numpy().astype(np.float64)

    def refresh(self, features, controls):
        """Infer the posterior-mean embedding from raw context features (C + 1) and controls (C)."""
        x = self._tensor(self.normalizer.apply(np.asarray(features, dtype=np.float64)))
        u = self._tensor(self.control_normalizer.apply(np.asarray(controls, dtype=np.float64)))
        with torch.no_grad():
            emb, _ = infer_embedding(self.model, x, u, rng_mode="posterior_mean")
        a, b, o = (t.detach().cpu().numpy().astype(np.float64) for t in (emb.a, emb.b, emb.o))
        # u_norm = (u - min) / range
        scale = 1.0 / self.control_normalizer.range
        self.embedding = (a, b * scale, o - b @ (self.control_normalizer.minimum * scale))
        return self.embedding


def discrete_maps(a, b, o, dt, discretization="exact"):
    if discretization == "exact":
        return odesolve.discretize(a, b, o, dt)
    elif discretization == "euler":
        return odesolve.euler_discretize(a, b, o, dt)
    raise ValueError(f"Unknown discretization {discretization!r}")


def latent_box(plant, features, margin=LATENT_MARGIN):
    """Per-coordinate latent range of raw training features, widened by `margin` of the range."""
    z = plant.encode(np.asarray(features).reshape(-1, np.shape(features)[-1]))
    lo, hi = z.min(axis=0), z.max(axis=0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def lift_problem(
    plant,
    x0,
    x_target,
    bounds,
    weights=QpWeights(),
    horizon=HORIZON,
    dt=1.0,
    discretization: Literal["exact", "euler"] = "exact",
    latent_bounds=None,
):
    """
    Build the latent QP for steering raw features `x0` to `x_target`.

    Args:
        plant: A `LatentPlant` with a current embedding.
        x0, x_target: Raw feature vectors.
        bounds: (lower, upper) raw control bounds.
        weights: `QpWeights` in latent/raw-control units.
        horizon: Planning steps N.
        dt: Control interval.
        discretization: `exact` (matrix exponential) or `euler` (I + h a).
        latent_bounds: Optional (lower, upper) latent box.

    Raises:
        MissingEmbeddingError: no embedding has been inferred yet.
    """
    if plant.embedding is None:
        raise MissingEmbeddingError("Lifting needs an embedding; refresh the plant from a context window first")
    a, b, o = plant.embedding
    a_d, b_d, c_d = discrete_maps(a, b, o, dt, discretization)
    z = plant.encode(np.stack([np.asarray(x0, dtype=np.float64), np.asarray(x_target, dtype=np.float64)]))
    q, r, q_terminal = weights.matrices(a.shape[0], b.shape[1])
    lower, upper = bounds
    z_lower, z_upper = latent_bounds if latent_bounds is not None else (None, None)
    return QpProblem.time_invariant(
        a_d, b_d, c_d, horizon,
        z0=z[0], target=z[1], q=q, r=r, q_terminal=q_terminal,
        u_lower=np.asarray(lower, dtype=np.float64).reshape(b.shape[1]),
        u_upper=np.asarray(upper, dtype=np.float64).reshape(b.shape[1]),
        z_lower=z_lower, z_upper=z_upper,
    )
