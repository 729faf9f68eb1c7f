"""
Named parameter containers, reverse-mode gradients, the Adam update and a
finite-difference gradient check.
"""
from collections import OrderedDict
from dataclasses import dataclass
import logging

import numpy as np
import torch

from dynamics.exceptions import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


def dtype_for(precision):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"Unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}")


class ParamSet(OrderedDict):
    """
    Named tensors whose shapes are fixed once inserted.

    Built from a module, a `ParamSet` holds references to the module's live
    parameters, so updating it updates the module.
    """

    def __setitem__(self, name, tensor):
        if name in self and tuple(self[name].shape) != tuple(tensor.shape):
            raise ShapeMismatchError(
                f"{name}: shape {tuple(self[name].shape)} is fixed, got {tuple(tensor.shape)}"
            )
        super().__setitem__(name, tensor)

    @classmethod
    def from_module(cls, module):
        return cls(module.named_parameters())

    @property
    def shapes(self):
        return OrderedDict((name, tuple(t.shape)) for name, t in self.items())

    def numel(self):
        return sum(t.numel() for t in self.values())

    def to_numpy(self):
        return OrderedDict((name, t.detach().cpu().numpy()) for name, t in self.items())

    def load_numpy(self, arrays):
        """Copy arrays into the live tensors, validating names and shapes."""
        missing = set(self) - set(arrays)
        unexpected = set(arrays) - set(self)
        if missing or unexpected:
            raise ShapeMismatchError(
                f"Parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        with torch.no_grad():
            for name, t in self.items():
                array = np.asarray(arrays[name])
                if tuple(array.shape) != tuple(t.shape):
                    raise ShapeMismatchError(f"{name}: expected {tuple(t.shape)}, got {array.shape}")
                t.copy_(torch.from_numpy(array.copy()).to(t.dtype))
        return self


class Gradient(ParamSet):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        for name, g in self.items():
            if not bool(torch.isfinite(g).all()):
                raise NonFiniteError(f"Gradient of {name} is not finite")


def grad(loss_fn, params):
    """
    Exact reverse-mode derivative of a scalar loss.

    Args:
        loss_fn: Callable taking the `ParamSet` and returning a scalar tensor.
        params: The `ParamSet` to differentiate with respect to.

    Returns:
        A `Gradient` with the same names and shapes as `params`.
    """
    loss = loss_fn(params)
    if not bool(torch.isfinite(loss)):
        raise NonFiniteError("Loss is not finite", {"loss": float(loss)})
    tensors = list(params.values())
    if not loss.requires_grad:
        return Gradient((name, torch.zeros_like(t)) for name, t in params.items())
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return Gradient(
        (name, torch.zeros_like(t) if g is None else g.detach())
        for (name, t), g in zip(params.items(), grads)
    )


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


class AdamMoments:
    """First and second moment estimates for the parameters of one `ParamSet`."""

    def __init__(self, params, hyper=AdamHyper()):
        self.hyper = hyper
        self.names = list(params)
        self.optimizer = torch.optim.Adam(
            list(params.values()), lr=hyper.lr, betas=tuple(hyper.betas), eps=hyper.eps
        )

    def state_arrays(self):
        arrays = {}
        params = self.optimizer.param_groups[0]["params"]
        for name, p in zip(self.names, params):
            state = self.optimizer.state.get(p)
            if not state:
                continue
            arrays[f"{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
            arrays[f"{name}.step"] = np.array([float(state["step"])], dtype=np.float64)
        return arrays

    def load_state_arrays(self, arrays):
        params = self.optimizer.param_groups[0]["params"]
        for name, p in zip(self.names, params):
            if f"{name}.exp_avg" not in arrays:
                continue
            self.optimizer.state[p] = {
                "step": torch.tensor(float(arrays[f"{name}.step"][0])),
                "exp_avg": torch.from_numpy(arrays[f"{name}.exp_avg"].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[f"{name}.exp_avg_sq"].copy()).to(p.dtype),
            }


def adam_step(params, gradient, moments):
    """
    Apply one Adam update in place.

    The hyperparameters (lr, betas, eps) live on `moments`.

    Returns:
        `params`, updated.
    """
    for name, p in params.items():
        p.grad = gradient[name].detach().clone()
    moments.optimizer.step()
    moments.optimizer.zero_grad(set_to_none=True)
    return params


# Coordinates whose one-sided slopes disagree by more than this fraction are
# treated as sitting on a rectifier kink.
KINK_TOLERANCE = 1e-2


def finite_diff_check(loss_fn, params, eps=1e-5, fraction=0.05, rng=None, min_coordinates=8):
    """
    Compare `grad` against central differences on a random coordinate subsample.

    Args:
        loss_fn: Deterministic scalar loss of the `ParamSet`.
        params: The parameters; perturbed in place and restored.
        eps: Perturbation size.
        fraction: Share of coordinates checked (at least `min_coordinates`).
        rng: numpy Generator choosing the coordinates.

    Returns:
        The maximum relative error over the checked, differentiable
        coordinates.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    analytic = grad(loss_fn, params)
    with torch.no_grad():
        f0 = float(loss_fn(params))
    floor = 1e-6 * max(1.0, abs(f0))
    worst = 0.0
    checked = excluded = 0
    for name, tensor in params.items():
        flat = tensor.data.view(-1)
        n = flat.numel()
        if n == 0:
            continue
        k = min(n, max(min_coordinates, int(np.ceil(fraction * n))))
        coords = rng.choice(n, size=k, replace=False)
        g_flat = analytic[name].reshape(-1)
        for idx in coords:
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + eps
                f_plus = float(loss_fn(params))
                flat[idx] = original - eps
                f_minus = float(loss_fn(params))
                flat[idx] = original
            forward = (f_plus - f0) / eps
            backward = (f0 - f_minus) / eps
            if abs(forward - backward) > KINK_TOLERANCE * max(abs(forward), abs(backward), floor):
                excluded += 1
                continue
            central = (f_plus - f_minus) / (2 * eps)
            a = float(g_flat[idx])
            worst = max(worst, abs(a - central) / max(abs(a), abs(central), floor))
            checked += 1
    logger.debug(f"finite differences: {checked} coordinates checked, {excluded} on kinks")
    return worst
