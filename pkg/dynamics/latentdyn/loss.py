"""
Training objective: Gaussian reconstruction of every rolled point plus the
closed-form KL of the embedding posterior against N(0, I).
"""
from dataclasses import dataclass

import numpy as np
import torch

from dynamics.envsim.windows import Window
from dynamics.latentdyn.embedding import kl_to_standard_normal
from dynamics.latentdyn.model import (
    draw_embedding, encode_states, infer_dynamics_posterior, split_start, to_tensor, unpack_dynamics,
)


@dataclass(frozen=True)
class WindowBatch:
    """
    Tensors for a batch of windows.

    Attributes:
        states: (B, W, p) encoder inputs (possibly noisy).
        targets: (B, W, p) reconstruction targets.
        controls: (B, W - 1, u)
        times: (W,) numpy sample times.
        offset: (B,) int64 index where each rollout starts.
        split_index: context/target boundary.
    """
    states: torch.Tensor
    targets: torch.Tensor
    controls: torch.Tensor
    times: np.ndarray
    offset: torch.Tensor
    split_index: int

    def __len__(self):
        return self.states.shape[0]

    @property
    def width(self):
        return self.states.shape[1]

    @classmethod
    def from_window_set(cls, windows, index=None, dtype=torch.float64, offset=None):
        index = np.arange(len(windows)) if index is None else np.asarray(index)
        offset = windows.offset[index] if offset is None else np.asarray(offset)
        return cls(
            states=to_tensor(windows.states[index], dtype),
            targets=to_tensor(windows.clean_states[index], dtype),
            controls=to_tensor(windows.controls[index], dtype),
            times=windows.times,
            offset=torch.from_numpy(np.asarray(offset, dtype=np.int64)),
            split_index=windows.split_index,
        )

    @classmethod
    def from_window(cls, window: Window, dtype=torch.float64, targets=None):
        states = to_tensor(window.states, dtype)[None]
        return cls(
            states=states,
            targets=states if targets is None else to_tensor(targets, dtype)[None],
            controls=to_tensor(window.controls, dtype)[None],
            times=window.times,
            offset=torch.tensor([window.offset]),
            split_index=window.split_index,
        )


@dataclass(frozen=True)
class ElboTerms:
    reconstruction: torch.Tensor
    kl: torch.Tensor
    total: torch.Tensor


def teacher_forced_rollout(emb, z_enc, controls, times, offset, forcing=None):
    """
    Euler rollout where each sample starts from its encoded point at `offset`.

    Points before the offset hold the encoding. Where `forcing[b, k]` is set
    (k past the offset) the rolled latent is replaced by the encoding of the
    observed point before continuing.

    Returns:
        (B, W, d) latents.
    """
    z = z_enc[:, 0]
    rolled = []
    for k in range(z_enc.shape[1]):
        held = (offset >= k).unsqueeze(-1)
        if forcing is not None:
            held = held | forcing[:, k].unsqueeze(-1)
        z = torch.where(held, z_enc[:, k], z)
        rolled.append(z)
        if k < controls.shape[1]:
            h = float(times[k + 1] - times[k])
            drive = (emb.b @ controls[:, k].unsqueeze(-1))[..., 0] + emb.o
            z = z + h * ((emb.a @ z.unsqueeze(-1))[..., 0] + drive)
    return torch.stack(rolled, dim=1)


def elbo_terms(model, batch, generator=None, eps=None, forcing=None, kl_weight=1.0):
    """
    Args:
        model: A time-invariant model.
        batch: A `WindowBatch`.
        generator: torch Generator for the reparameterization noise.
        eps: Fixed standard-normal noise; overrides `generator`.
        forcing: Optional (B, W) bool teacher-forcing mask.
        kl_weight: Multiplier of the KL term (annealing).

    Returns:
        `ElboTerms`, each averaged over the batch.
    """
    spec = model.spec
    split = batch.split_index
    x_context = batch.states[:, :split + 1]
    u_context = batch.controls[:, :split]
    if spec.has_state_encoder:
        z_enc = encode_states(model, batch.states)
        posterior = infer_dynamics_posterior(model, z_enc[:, :split + 1], u_context)
        d_vec = draw_embedding(model, posterior, "sample", generator, eps)
        offset = batch.offset
    else:
        posterior = infer_dynamics_posterior(model, x_context, u_context)
        z_start, d_vec = split_start(model, draw_embedding(model, posterior, "sample", generator, eps))
        z_enc = z_start.unsqueeze(1).expand(-1, batch.width, -1)
        offset = torch.full_like(batch.offset, split)
        forcing = None
    emb = unpack_dynamics(model, d_vec)
    z_roll = teacher_forced_rollout(emb, z_enc, batch.controls, batch.times, offset, forcing)
    x_hat = model.decoder(z_roll)
    valid = (torch.arange(batch.width).unsqueeze(0) >= offset.unsqueeze(1)).to(x_hat.dtype)
    sq = torch.sum((x_hat - batch.targets) ** 2, dim=-1) * valid
    reconstruction = torch.mean(torch.sum(sq, dim=-1)) / (2.0 * spec.sigma_obs ** 2)
    if spec.variational:
        kl = torch.mean(kl_to_standard_normal(posterior))
    else:
        kl = torch.zeros((), dtype=reconstruction.dtype)
    return ElboTerms(reconstruction=reconstruction, kl=kl, total=reconstruction + kl_weight * kl)


def elbo_loss(model, window, generator=None, eps=None, forcing=None, kl_weight=1.0):
    """Negative ELBO of a `Window` or `WindowBatch`, as a scalar tensor."""
    if isinstance(window, Window):
        window = WindowBatch.from_window(window, dtype=model.dtype)
    return elbo_terms(model, window, generator, eps, forcing, kl_weight).total
