"""
Checkpoints: every named parameter tensor, optional optimizer moments and
RNG state, and a JSON manifest, all in one VCNO container directory.
"""
import logging

import numpy as np
import torch

from dynamics import container
from dynamics.exceptions import ContainerFormatError

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
PARAM_PREFIX = "param."
MOMENT_PREFIX = "adam."
TORCH_RNG = "rng.torch"


def save_checkpoint(directory, params, manifest, moments=None, rng_state=True):
    """
    Persist a `ParamSet` with its manifest.

    Args:
        directory: Target container directory.
        params: The `ParamSet`.
        manifest: JSON-serializable description (model spec, normalizers,
            training progress). Stored under `manifest` in the meta.
        moments: Optional `AdamMoments` to persist alongside.
        rng_state: Also store torch's global generator state.
    """
    arrays = {PARAM_PREFIX + name: array for name, array in params.to_numpy().items()}
    if moments is not None:
        arrays.update({MOMENT_PREFIX + k: v for k, v in moments.state_arrays().items()})
    if rng_state:
        arrays[TORCH_RNG] = torch.get_rng_state().numpy().astype(np.uint8)
    meta = {
        "kind": CHECKPOINT_KIND,
        "manifest": manifest,
        "param_shapes": {name: list(shape) for name, shape in params.shapes.items()},
    }
    container.save_container(directory, meta, arrays)
    logger.debug(f"checkpoint written to {directory}")
    return directory


def load_checkpoint(directory):
    """
    Read a checkpoint.

    Returns:
        A dict with `manifest`, `params` (name -> array), `moments`
        (name -> array) and `torch_rng` (uint8 array or None).
    """
    meta, arrays = container.load_container(directory)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ContainerFormatError(f"{directory} holds a {meta.get('kind')!r}, not a checkpoint")
    params = {k[len(PARAM_PREFIX):]: v for k, v in arrays.items() if k.startswith(PARAM_PREFIX)}
    for name, shape in meta["param_shapes"].items():
        if name not in params or list(params[name].shape) != shape:
            raise ContainerFormatError(f"Checkpoint tensor {name} is missing or misshapen")
    return {
        "manifest": meta["manifest"],
        "params": params,
        "moments": {k[len(MOMENT_PREFIX):]: v for k, v in arrays.items() if k.startswith(MOMENT_PREFIX)},
        "torch_rng": arrays.get(TORCH_RNG),
    }


def restore_rng(torch_rng):
    if torch_rng is not None:
        torch.set_rng_state(torch.from_numpy(torch_rng.copy()))
