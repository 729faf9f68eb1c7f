"""
The time-variant model: a variational recurrent network whose per-step
latent variable is a dynamics embedding d_t.

Indexing: d_t governs the transition from t - 1 to t.

    p(d_t | h_{t-1})                    prior network
    q(d_t | h_{t-1}, z_t, u_{t-1})      inference network
    z_t = z_{t-1} + h (a_t z_{t-1} + b_t u_{t-1} + o_t)
    h_t = LSTMCell((z_t, d_t), h_{t-1})

with h_{-1} = 0. The state codec (encoder, decoder) can be shared with a
time-invariant model.
"""
from dataclasses import asdict, dataclass
import logging
from typing import Literal

import torch
from torch import nn

from dynamics.approx import checkpoints
from dynamics.approx.networks import HIDDEN_LAYERS, HIDDEN_WIDTH, Mlp, MlpSpec, init_lstm_
from dynamics.approx.params import ParamSet, dtype_for
from dynamics.exceptions import ContainerFormatError, ShapeMismatchError
from dynamics.latentdyn.embedding import (
    DynamicsPosterior, embedding_size, kl_divergence, sample_dynamics, split_embedding,
)
from dynamics.latentdyn.model import LATENT_DIM, SIGMA_OBS

logger = logging.getLogger(__name__)

KIND = "vcnodet"
HIDDEN_STATE = 64


@dataclass(frozen=True)
class VrnnSpec:
    state_dim: int
    control_dim: int
    kind: Literal["vcnodet"] = KIND
    latent_dim: int = LATENT_DIM
    mode: Literal["full", "rank_one"] = "full"
    sigma_obs: float = SIGMA_OBS
    hidden_state: int = HIDDEN_STATE
    hidden: tuple = (HIDDEN_WIDTH,) * HIDDEN_LAYERS
    activation: Literal["relu", "identity"] = "relu"
    precision: str = "float32"

    def __post_init__(self):
        if self.kind != KIND:
            raise ValueError(f"Time-variant model kind must be {KIND!r}")
        if self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    @property
    def embedding_dim(self):
        return embedding_size(self.latent_dim, self.control_dim, self.mode)

    def to_dict(self):
        return {**asdict(self), "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, data):
        return cls(**{**data, "hidden": tuple(data.get("hidden", cls.hidden))})


@dataclass(frozen=True)
class HiddenState:
    h: torch.Tensor
    c: torch.Tensor

    @classmethod
    def zeros(cls, batch, size, dtype):
        zeros = torch.zeros(tuple(batch) + (size,), dtype=dtype)
        return cls(h=zeros, c=zeros.clone())


class VrnnModel(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        d, p, u, m = spec.latent_dim, spec.state_dim, spec.control_dim, spec.embedding_dim
        mlp = dict(hidden=spec.hidden, activation=spec.activation)
        self.encoder = Mlp(MlpSpec(p, d, **mlp))
        self.decoder = Mlp(MlpSpec(d, p, **mlp))
        self.prior_net = Mlp(MlpSpec(spec.hidden_state, 2 * m, **mlp))
        self.posterior_net = Mlp(MlpSpec(spec.hidden_state + d + u, 2 * m, **mlp))
        self.cell = nn.LSTMCell(d + m, spec.hidden_state)
        init_lstm_(self.cell)
        self.to(dtype_for(spec.precision))

    @property
    def dtype(self):
        return dtype_for(self.spec.precision)

    def params(self):
        return ParamSet.from_module(self)


def build_vrnn(spec, seed=None, codec_from=None):
    """
    Args:
        codec_from: A model whose `encoder` and `decoder` modules are reused
            (shared, not copied).
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = VrnnModel(spec)
    if codec_from is not None:
        if codec_from.spec.latent_dim != spec.latent_dim or codec_from.spec.state_dim != spec.state_dim:
            raise ShapeMismatchError("Shared codec dimensions differ from the time-variant model")
        model.encoder = codec_from.encoder
        model.decoder = codec_from.decoder
    return model


def _posterior(raw):
    mean, logvar = raw.chunk(2, dim=-1)
    return DynamicsPosterior.from_raw(mean, logvar)


def prior_step(model, hidden):
    return _posterior(model.prior_net(hidden.h))


def posterior_step(model, hidden, z_t, u_t):
    """
    Args:
        hidden: `HiddenState` after step t - 1.
        z_t: (..., d) encoding of the state reached by the transition.
        u_t: (..., u) control applied on that transition.
    """
    if z_t.shape[-1] != model.spec.latent_dim or u_t.shape[-1] != model.spec.control_dim:
        raise ShapeMismatchError(
            f"Inference step expects ({model.spec.latent_dim}, {model.spec.control_dim}) inputs, "
            f"got ({z_t.shape[-1]}, {u_t.shape[-1]})"
        )
    return _posterior(model.posterior_net(torch.cat([hidden.h, z_t, u_t], dim=-1)))


def vrnn_transition(z_t, emb_t, u_t, h_step):
    """One Euler step z + h (a z + b u + o) under the per-step embedding."""
    drive = (emb_t.b @ u_t.unsqueeze(-1))[..., 0] + emb_t.o
    return z_t + h_step * ((emb_t.a @ z_t.unsqueeze(-1))[..., 0] + drive)


def recurrence_step(model, hidden, z_t, d_t):
    h, c = model.cell(torch.cat([z_t, d_t], dim=-1), (hidden.h, hidden.c))
    return HiddenState(h=h, c=c)


def unpack_step(model, d_t):
    spec = model.spec
    return split_embedding(d_t, spec.latent_dim, spec.control_dim, spec.mode)


def _draw(posterior, rng_mode, generator, eps=None):
    if rng_mode == "posterior_mean":
        return posterior.mean
    return sample_dynamics(posterior, generator=generator, eps=eps)


@dataclass(frozen=True)
class VrnnTerms:
    reconstruction: torch.Tensor
    kl: torch.Tensor
    total: torch.Tensor


def vrnn_terms(model, states, targets, controls, times, rollout_from=None, generator=None, eps=None, kl_weight=1.0):
    """
    Per-step KL(q || p) plus Gaussian reconstruction, summed over time and
    averaged over the batch.

    Up to `rollout_from` the previous latent of each transition is the
    encoding of the observed state (filtering); after it the latent is rolled
    forward from its own predictions. The posterior always sees the encoded
    observation.

    Args:
        states: (B, W, p) encoder inputs.
        targets: (B, W, p) reconstruction targets.
        controls: (B, W - 1, u)
        times: (W,) sample times.
        rollout_from: Sample index after which latents are rolled; defaults
            to the last sample (pure one-step filtering).
        eps: Optional (W - 1, B, m) fixed noise.
    """
    spec = model.spec
    width = states.shape[1]
    rollout_from = width - 1 if rollout_from is None else rollout_from
    z_enc = model.encoder(states)
    sq = torch.sum((model.decoder(z_enc[:, 0]) - targets[:, 0]) ** 2, dim=-1)
    kl = torch.zeros_like(sq)
    hidden = HiddenState.zeros((states.shape[0],), spec.hidden_state, z_enc.dtype)
    z_prev = z_enc[:, 0]
    for t in range(1, width):
        prior = prior_step(model, hidden)
        posterior = posterior_step(model, hidden, z_enc[:, t], controls[:, t - 1])
        d_t = _draw(posterior, "sample", generator, None if eps is None else eps[t - 1])
        z_pred = vrnn_transition(z_prev, unpack_step(model, d_t), controls[:, t - 1], float(times[t] - times[t - 1]))
        sq = sq + torch.sum((model.decoder(z_pred) - targets[:, t]) ** 2, dim=-1)
        kl = kl + kl_divergence(posterior, prior)
        hidden = recurrence_step(model, hidden, z_enc[:, t], d_t)
        z_prev = z_enc[:, t] if t < rollout_from else z_pred
    reconstruction = torch.mean(sq) / (2.0 * spec.sigma_obs ** 2)
    kl = torch.mean(kl)
    return VrnnTerms(reconstruction=reconstruction, kl=kl, total=reconstruction + kl_weight * kl)


def vrnn_loss(model, window, generator=None, eps=None):
    """Scalar loss of a `WindowBatch`, rolling latents after its split index."""
    return vrnn_terms(
        model, window.states, window.targets, window.controls, window.times,
        rollout_from=window.split_index, generator=generator, eps=eps,
    ).total


def warm_up(model, x_context, u_context, rng_mode="posterior_mean", generator=None):
    """
    Filter a context through the inference network.

    Returns:
        (hidden, z_last) after the last context point.
    """
    if x_context.shape[-2] != u_context.shape[-2] + 1:
        raise ShapeMismatchError("Context needs one more state than controls")
    z = model.encoder(x_context)
    batch = x_context.shape[:-2]
    hidden = HiddenState.zeros(batch, model.spec.hidden_state, z.dtype)
    for t in range(1, x_context.shape[-2]):
        posterior = posterior_step(model, hidden, z[..., t, :], u_context[..., t - 1, :])
        hidden = recurrence_step(model, hidden, z[..., t, :], _draw(posterior, rng_mode, generator))
    return hidden, z[..., -1, :]


def vrnn_generate(model, x_context, u_context, u_future, times, rng_mode="sample", generator=None):
    """
    Warm the recurrent state on the context, then roll forward drawing each
    d_t from the prior.

    Args:
        x_context: (..., C + 1, p) states.
        u_context: (..., C, u) controls.
        u_future: (..., K, u) future controls; K is the horizon.
        times: (K + 1,) times from the last context point.
        rng_mode: `sample` or `posterior_mean` (prior mean draws).

    Returns:
        (..., K, p) generated states (empty when K = 0).
    """
    horizon = u_future.shape[-2]
    hidden, z = warm_up(model, x_context, u_context, rng_mode, generator)
    out = []
    for k in range(horizon):
        d_t = _draw(prior_step(model, hidden), rng_mode, generator)
        z = vrnn_transition(z, unpack_step(model, d_t), u_future[..., k, :], float(times[k + 1] - times[k]))
        out.append(model.decoder(z))
        hidden = recurrence_step(model, hidden, z, d_t)
    if not out:
        return x_context.new_zeros(x_context.shape[:-2] + (0, x_context.shape[-1]))
    return torch.stack(out, dim=-2)


def one_step_predictions(model, states, controls, times, source="prior"):
    """
    Predict every x_t (t >= 1) from the encoded x_{t-1}, with the recurrent
    state filtered through the observed sequence up to t - 1.

    Args:
        source: `prior` draws d_t from the prior mean; `posterior` uses the
            inference network mean, which sees x_t.

    Returns:
        (B, W - 1, p) predictions.
    """
    z = model.encoder(states)
    hidden = HiddenState.zeros(states.shape[:-2], model.spec.hidden_state, z.dtype)
    out = []
    for t in range(1, states.shape[-2]):
        posterior = posterior_step(model, hidden, z[..., t, :], controls[..., t - 1, :])
        step = posterior if source == "posterior" else prior_step(model, hidden)
        emb = unpack_step(model, step.mean)
        z_pred = vrnn_transition(z[..., t - 1, :], emb, controls[..., t - 1, :], float(times[t] - times[t - 1]))
        out.append(model.decoder(z_pred))
        hidden = recurrence_step(model, hidden, z[..., t, :], posterior.mean)
    return torch.stack(out, dim=-2)


def vrnn_from_checkpoint(loaded):
    manifest = loaded["manifest"]
    if manifest.get("kind") != KIND:
        raise ContainerFormatError(f"Checkpoint holds a {manifest.get('kind')!r} model, not {KIND!r}")
    model = VrnnModel(VrnnSpec.from_dict(manifest["model"]))
    model.params().load_numpy(loaded["params"])
    return model


def load_vrnn(directory):
    loaded = checkpoints.load_checkpoint(directory)
    return vrnn_from_checkpoint(loaded), loaded["manifest"]