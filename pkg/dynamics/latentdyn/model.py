"""
The time-invariant few-shot model and its ablations.

    z_t = enc(x_t)                      per point, no temporal mixing
    q(d) = N(mean, exp(logvar))         from a bidirectional pass over (z_t, u_t)
    (a, b, o) = unpack(d)
    dz/dt = a z + b u(t) + o            rolled from the start latent
    x_t ~ N(dec(z_t), sigma_obs^2 I)

Kinds:
    vcnodeti    the variational model above.
    cnode_only  same networks, the posterior mean is used as the embedding and
                no KL term is trained.
    cnode_vae   one recurrent encoder over raw (x_t, u_t) yields a posterior
                over the start latent and the embedding jointly; there is no
                per-point state encoder.
"""
from dataclasses import asdict, dataclass
import logging
from typing import Literal

import numpy as np
import torch
from torch import nn

from dynamics import odesolve
from dynamics.approx import checkpoints
from dynamics.approx.networks import (
    HIDDEN_LAYERS, HIDDEN_WIDTH, RNN_LAYERS, RNN_STATE, BiRnn, BiRnnSpec, Mlp, MlpSpec, init_affine_,
)
from dynamics.approx.params import ParamSet, dtype_for
from dynamics.exceptions import ContainerFormatError, MissingEmbeddingError, ShapeMismatchError
from dynamics.latentdyn.embedding import (
    DynamicsPosterior, embedding_size, sample_dynamics, split_embedding,
)

logger = logging.getLogger(__name__)

TIME_INVARIANT_KINDS = ("vcnodeti", "cnode_only", "cnode_vae")
LATENT_DIM = 8
SIGMA_OBS = 0.05
RNG_MODES = ("posterior_mean", "sample")


@dataclass(frozen=True)
class ModelSpec:
    state_dim: int
    control_dim: int
    kind: Literal["vcnodeti", "cnode_only", "cnode_vae"] = "vcnodeti"
    latent_dim: int = LATENT_DIM
    mode: Literal["full", "rank_one"] = "full"
    sigma_obs: float = SIGMA_OBS
    dynamics_net: bool = False
    hidden: tuple = (HIDDEN_WIDTH,) * HIDDEN_LAYERS
    rnn_state: int = RNN_STATE
    rnn_layers: int = RNN_LAYERS
    activation: Literal["relu", "identity"] = "relu"
    precision: str = "float32"

    def __post_init__(self):
        if self.kind not in TIME_INVARIANT_KINDS:
            raise ValueError(f"Unknown model kind {self.kind!r}; expected one of {TIME_INVARIANT_KINDS}")
        if self.latent_dim < 1 or self.state_dim < 1 or self.control_dim < 0:
            raise ValueError("Model dimensions must be positive")
        if self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")
        object.__setattr__(self, "hidden", tuple(self.hidden))
        embedding_size(self.latent_dim, self.control_dim, self.mode)

    @property
    def embedding_dim(self):
        return embedding_size(self.latent_dim, self.control_dim, self.mode)

    @property
    def has_state_encoder(self):
        return self.kind != "cnode_vae"

    @property
    def variational(self):
        return self.kind != "cnode_only"

    def to_dict(self):
        return {**asdict(self), "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, data):
        return cls(**{**data, "hidden": tuple(data.get("hidden", cls.hidden))})


class LatentDynamicsModel(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        d, p, u = spec.latent_dim, spec.state_dim, spec.control_dim
        mlp = dict(hidden=spec.hidden, activation=spec.activation)
        if spec.has_state_encoder:
            self.encoder = Mlp(MlpSpec(p, d, **mlp))
            rnn_input, posterior_dim = d + u, spec.embedding_dim
        else:
            rnn_input, posterior_dim = p + u, d + spec.embedding_dim
        self.decoder = Mlp(MlpSpec(d, p, **mlp))
        self.rnn = BiRnn(BiRnnSpec(rnn_input, spec.rnn_state, spec.rnn_layers))
        summary = self.rnn.spec.summary_dim
        self.mean_head = nn.Linear(summary, posterior_dim)
        self.logvar_head = nn.Linear(summary, posterior_dim)
        init_affine_(self.mean_head)
        init_affine_(self.logvar_head)
        if spec.dynamics_net:
            self.dynamics_net = Mlp(MlpSpec(spec.embedding_dim, spec.embedding_dim, **mlp))
        self.to(dtype_for(spec.precision))

    @property
    def dtype(self):
        return dtype_for(self.spec.precision)

    def params(self):
        return ParamSet.from_module(self)


def build_model(spec, seed=None):
    if seed is not None:
        torch.manual_seed(seed)
    model = LatentDynamicsModel(spec)
    logger.debug(f"{spec.kind} model with {model.params().numel()} parameters")
    return model


def encode_states(model, x_seq):
    """Map every point of (..., T, p) states to (..., T, d) latents."""
    if not model.spec.has_state_encoder:
        raise MissingEmbeddingError(f"{model.spec.kind} has no per-point state encoder")
    return model.encoder(x_seq)


def decode_states(model, z_seq):
    return model.decoder(z_seq)


def _context_sequence(z_seq, u_seq):
    """Pair each context point with the control leaving it; the last point gets a zero control."""
    if z_seq.shape[-2] < 2:
        raise ShapeMismatchError(f"Dynamics inference needs at least 2 context points, got {z_seq.shape[-2]}")
    if u_seq.shape[-2] != z_seq.shape[-2] - 1:
        raise ShapeMismatchError(
            f"Context of {z_seq.shape[-2]} points needs {z_seq.shape[-2] - 1} controls, got {u_seq.shape[-2]}"
        )
    pad = torch.zeros(u_seq.shape[:-2] + (1, u_seq.shape[-1]), dtype=u_seq.dtype)
    return torch.cat([z_seq, torch.cat([u_seq, pad], dim=-2)], dim=-1)


def infer_dynamics_posterior(model, z_seq, u_seq):
    """
    Posterior over the flat embedding from a context of latents and controls.

    For `cnode_vae` models `z_seq` holds raw states and the posterior covers
    the start latent followed by the embedding.
    """
    summary = model.rnn(_context_sequence(z_seq, u_seq))
    return DynamicsPosterior.from_raw(model.mean_head(summary), model.logvar_head(summary))


def unpack_dynamics(model, d_vec, mode=None):
    """Apply the optional embedding network, then split into (a, b, o)."""
    spec = model.spec
    if spec.dynamics_net:
        d_vec = model.dynamics_net(d_vec)
    return split_embedding(d_vec, spec.latent_dim, spec.control_dim, mode or spec.mode)


def predict_latent(z0, emb, u_future, t_grid, solver=odesolve.SolverConfig()):
    """
    Roll dz/dt = a z + b u + o from z0 over `t_grid`.

    Euler keeps the torch graph; dopri45 runs on float64 numpy copies and is
    not differentiable.

    Returns:
        (..., len(t_grid), d) latents, the first row being z0.
    """
    if solver.kind == "euler":
        return odesolve.euler_rollout(odesolve.LinearOde(emb.a, emb.b, emb.o, u_future), z0, t_grid, step=solver.step)
    ode = odesolve.LinearOde(
        *(t.detach().cpu().numpy() for t in (emb.a, emb.b, emb.o, u_future))
    )
    z_seq = odesolve.rollout(ode, z0.detach().cpu().numpy(), t_grid, solver)
    return torch.from_numpy(z_seq).to(z0.dtype)


def draw_embedding(model, posterior, rng_mode="sample", generator=None, eps=None):
    if rng_mode not in RNG_MODES:
        raise ValueError(f"Unknown rng_mode {rng_mode!r}; expected one of {RNG_MODES}")
    if rng_mode == "posterior_mean" or not model.spec.variational:
        return posterior.mean
    return sample_dynamics(posterior, generator=generator, eps=eps)


def split_start(model, d_vec):
    """For `cnode_vae`, separate the start latent from the embedding."""
    d = model.spec.latent_dim
    return d_vec[..., :d], d_vec[..., d:]


def infer_embedding(model, x_context, u_context, rng_mode="posterior_mean", generator=None):
    """
    Run the context through the model.

    Returns:
        (embedding, z_boundary): the `DynamicsEmbedding` and the latent of the
        last context point.
    """
    if model.spec.has_state_encoder:
        z_context = encode_states(model, x_context)
        d_vec = draw_embedding(model, infer_dynamics_posterior(model, z_context, u_context), rng_mode, generator)
        return unpack_dynamics(model, d_vec), z_context[..., -1, :]
    joint = draw_embedding(model, infer_dynamics_posterior(model, x_context, u_context), rng_mode, generator)
    z_start, d_vec = split_start(model, joint)
    return unpack_dynamics(model, d_vec), z_start


def predict_trajectory(
    model,
    x_context,
    u_context,
    u_future,
    t_future,
    solver=odesolve.SolverConfig(),
    rng_mode="posterior_mean",
    generator=None,
):
    """
    Predict states on `t_future` from a context window.

    Args:
        x_context: (..., C + 1, p) normalized context states; the last point
            is the prediction start.
        u_context: (..., C, u) context controls.
        u_future: (..., K, u) controls held over the K future intervals.
        t_future: (K + 1,) times, `t_future[0]` being the last context point.
        solver: Integration settings.
        rng_mode: `posterior_mean` or `sample`.

    Returns:
        (..., K + 1, p) decoded states; row 0 reconstructs the start point.
    """
    emb, z0 = infer_embedding(model, x_context, u_context, rng_mode, generator)
    return decode_states(model, predict_latent(z0, emb, u_future, t_future, solver))


def model_manifest(model, **extra):
    return {"kind": model.spec.kind, "model": model.spec.to_dict(), **extra}


def save_model(model, directory, manifest=None, moments=None):
    return checkpoints.save_checkpoint(directory, model.params(), model_manifest(model, **(manifest or {})), moments)


def model_from_checkpoint(loaded):
    manifest = loaded["manifest"]
    if manifest.get("kind") not in TIME_INVARIANT_KINDS:
        raise ContainerFormatError(f"Checkpoint holds a {manifest.get('kind')!r} model, not a time-invariant one")
    model = LatentDynamicsModel(ModelSpec.from_dict(manifest["model"]))
    model.params().load_numpy(loaded["params"])
    return model


def load_model(directory):
    """Returns (model, manifest)."""
    loaded = checkpoints.load_checkpoint(directory)
    return model_from_checkpoint(loaded), loaded["manifest"]


def to_tensor(array, dtype):
    return torch.from_numpy(np.ascontiguousarray(array)).to(dtype)
