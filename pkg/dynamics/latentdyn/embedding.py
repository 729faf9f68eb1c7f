"""
Dynamics embeddings: the flat vector d inferred from a context window, its
diagonal Gaussian posterior, and its decoding into the continuous-time
linear system (a, b, o) acting on latent states.

The generator a is the deviation around the identity of the one-step Euler
map: a window step of size h advances z by (I + h a) z + h (b u + o).
"""
from dataclasses import dataclass
from typing import Literal

import torch

from dynamics.exceptions import ShapeMismatchError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
MODES = ("full", "rank_one")


@dataclass(frozen=True)
class DynamicsPosterior:
    mean: torch.Tensor
    logvar: torch.Tensor

    @classmethod
    def from_raw(cls, mean, logvar):
        return cls(mean=mean, logvar=torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX))

    @classmethod
    def standard(cls, size, batch=(), dtype=None):
        zeros = torch.zeros(tuple(batch) + (size,), dtype=dtype)
        return cls(mean=zeros, logvar=zeros.clone())

    @property
    def std(self):
        return torch.exp(0.5 * self.logvar)


@dataclass(frozen=True)
class DynamicsEmbedding:
    """
    Attributes:
        a: (..., d, d) continuous-time generator.
        b: (..., d, u) control matrix.
        o: (..., d) constant offset.
    """
    a: torch.Tensor
    b: torch.Tensor
    o: torch.Tensor

    def euler_map(self, h):
        eye = torch.eye(self.a.shape[-1], dtype=self.a.dtype)
        return eye + h * self.a


@dataclass(frozen=True)
class RankOneDeviation:
    r: torch.Tensor
    v: torch.Tensor

    @property
    def generator(self):
        return self.r.unsqueeze(-1) * self.v.unsqueeze(-2)

    def transform(self, h=1.0):
        """The implied map T = I + h r v^T."""
        return torch.eye(self.r.shape[-1], dtype=self.r.dtype) + h * self.generator


def embedding_size(latent_dim, control_dim, mode: Literal["full", "rank_one"] = "full"):
    if mode == "full":
        return latent_dim * latent_dim + latent_dim * control_dim + latent_dim
    elif mode == "rank_one":
        return 2 * latent_dim + latent_dim * control_dim + latent_dim
    raise ValueError(f"Unknown dynamics mode {mode!r}; expected one of {MODES}")


def split_embedding(d_vec, latent_dim, control_dim, mode="full"):
    """
    Split a flat embedding into (a, b, o).

    full: [vec(a) (d*d), vec(b) (d*u), o (d)]
    rank_one: [r (d), v (d), vec(b) (d*u), o (d)] with a = r v^T
    """
    d, u = latent_dim, control_dim
    expected = embedding_size(d, u, mode)
    if d_vec.shape[-1] != expected:
        raise ShapeMismatchError(f"{mode} embedding needs {expected} entries, got {d_vec.shape[-1]}")
    batch = d_vec.shape[:-1]
    if mode == "full":
        a = d_vec[..., :d * d].reshape(batch + (d, d))
        rest = d_vec[..., d * d:]
    else:
        a = RankOneDeviation(r=d_vec[..., :d], v=d_vec[..., d:2 * d]).generator
        rest = d_vec[..., 2 * d:]
    b = rest[..., :d * u].reshape(batch + (d, u))
    o = rest[..., d * u:]
    return DynamicsEmbedding(a=a, b=b, o=o)


def pack_dynamics(embedding):
    """Inverse of `split_embedding` in full mode."""
    a, b, o = embedding.a, embedding.b, embedding.o
    batch = a.shape[:-2]
    return torch.cat([a.reshape(batch + (-1,)), b.reshape(batch + (-1,)), o], dim=-1)


def sample_dynamics(posterior, generator=None, eps=None):
    """
    Reparameterized draw d = mean + exp(logvar / 2) * eps with eps ~ N(0, I).

    Passing `eps` fixes the noise (common random numbers).
    """
    if eps is None:
        eps = torch.randn(posterior.mean.shape, generator=generator, dtype=posterior.mean.dtype)
    return posterior.mean + posterior.std * eps


def kl_to_standard_normal(posterior):
    """Closed-form KL(q || N(0, I)) summed over the last axis."""
    return 0.5 * torch.sum(
        torch.exp(posterior.logvar) + posterior.mean ** 2 - 1.0 - posterior.logvar, dim=-1
    )


def kl_divergence(q, p):
    """Closed-form KL(q || p) between diagonal Gaussians, summed over the last axis."""
    return 0.5 * torch.sum(
        p.logvar - q.logvar
        + (torch.exp(q.logvar) + (q.mean - p.mean) ** 2) / torch.exp(p.logvar)
        - 1.0,
        dim=-1,
    )
