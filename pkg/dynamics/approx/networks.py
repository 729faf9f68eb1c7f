"""
Function approximators: rectifier MLPs and bidirectional LSTM summaries.

Both are usable as `torch.nn.Module`s and through the functional entry
points `mlp_forward` / `birnn_forward`, which evaluate a spec against an
explicit parameter mapping.
"""
from dataclasses import dataclass
from functools import lru_cache
import math
from typing import Literal

import torch
from torch import nn
from torch.func import functional_call

from dynamics.exceptions import EmptySequenceError, ShapeMismatchError

HIDDEN_WIDTH = 128
HIDDEN_LAYERS = 4
RNN_STATE = 32
RNN_LAYERS = 2


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: tuple = (HIDDEN_WIDTH,) * HIDDEN_LAYERS
    # "identity" bypasses every rectifier, leaving a chain of affine maps.
    activation: Literal["relu", "identity"] = "relu"

    @property
    def widths(self):
        return (self.input_dim,) + tuple(self.hidden) + (self.output_dim,)


@dataclass(frozen=True)
class BiRnnSpec:
    input_dim: int
    state_dim: int = RNN_STATE
    layers: int = RNN_LAYERS

    @property
    def summary_dim(self):
        return 2 * self.state_dim


def init_affine_(layer):
    """Uniform fan-in initialization for weight and bias."""
    bound = 1.0 / math.sqrt(max(1, layer.in_features))
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound)
        layer.bias.uniform_(-bound, bound)


def init_lstm_(lstm):
    """Fan-in uniform input weights and biases, orthogonal recurrent blocks."""
    bound = 1.0 / math.sqrt(lstm.hidden_size)
    with torch.no_grad():
        for name, p in lstm.named_parameters():
            if name.startswith("weight_hh"):
                for block in p.chunk(4, dim=0):
                    nn.init.orthogonal_(block)
            else:
                p.uniform_(-bound, bound)


class Mlp(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        widths = spec.widths
        self.layers = nn.ModuleList(nn.Linear(i, o) for i, o in zip(widths[:-1], widths[1:]))
        for layer in self.layers:
            init_affine_(layer)

    def forward(self, x):
        return mlp_forward(self.spec, {
            f"layers.{i}.{kind}": getattr(layer, kind)
            for i, layer in enumerate(self.layers)
            for kind in ("weight", "bias")
        }, x)


def mlp_forward(spec, params, x):
    """
    Evaluate an affine + rectifier stack with a linear output layer.

    Args:
        spec: The `MlpSpec`.
        params: Mapping with `layers.{i}.weight` / `layers.{i}.bias` entries.
        x: (..., input_dim) inputs.

    Returns:
        (..., output_dim) outputs.
    """
    if x.shape[-1] != spec.input_dim:
        raise ShapeMismatchError(f"MLP expects {spec.input_dim} inputs, got {x.shape[-1]}")
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        x = torch.nn.functional.linear(x, params[f"layers.{i}.weight"], params[f"layers.{i}.bias"])
        if i < n_layers - 1 and spec.activation == "relu":
            x = torch.relu(x)
    return x


class BiRnn(nn.Module):
    """
    Bidirectional LSTM reduced to one summary vector: the final forward and
    final backward hidden states of the top layer, concatenated.
    """

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.lstm = nn.LSTM(
            input_size=spec.input_dim,
            hidden_size=spec.state_dim,
            num_layers=spec.layers,
            bidirectional=True,
            batch_first=True,
        )
        init_lstm_(self.lstm)

    def forward(self, sequence):
        if sequence.shape[-1] != self.spec.input_dim:
            raise ShapeMismatchError(
                f"Recurrent encoder expects {self.spec.input_dim} inputs, got {sequence.shape[-1]}"
            )
        if sequence.shape[-2] == 0:
            raise EmptySequenceError("Recurrent encoder received an empty sequence")
        unbatched = sequence.dim() == 2
        if unbatched:
            sequence = sequence.unsqueeze(0)
        _, (h_n, _) = self.lstm(sequence)
        summary = torch.cat([h_n[-2], h_n[-1]], dim=-1)
        return summary[0] if unbatched else summary


@lru_cache(maxsize=None)
def _birnn_skeleton(spec):
    return BiRnn(spec)


def birnn_forward(spec, params, sequence):
    """
    Summarize a (..., L, input_dim) sequence with explicit parameters.

    `params` uses the `BiRnn` parameter names (`lstm.weight_ih_l0`, ...).
    """
    return functional_call(_birnn_skeleton(spec), dict(params), (sequence,))
