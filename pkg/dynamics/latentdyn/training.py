"""
Mini-batch training shared by the time-invariant and time-variant models.

The loop keeps two checkpoints under the training directory: `best/` holds
the parameters with the lowest validation loss, `last/` holds the latest
epoch together with the optimizer moments and both random streams so a
resumed run continues the identical loss stream.
"""
from dataclasses import asdict, dataclass, field
import logging
import math
from pathlib import Path
import time

import numpy as np
import torch

from dynamics.approx import checkpoints
from dynamics.approx.params import AdamHyper, AdamMoments, adam_step, dtype_for, grad
from dynamics.envsim.datasets import TRAIN
from dynamics.envsim.windows import SPLIT_INDEX, STRIDE, WINDOW, window_dataset
from dynamics.exceptions import DivergenceError, NonFiniteError
from dynamics.latentdyn.loss import WindowBatch, elbo_terms
from dynamics.latentdyn.model import ModelSpec, build_model, model_from_checkpoint, save_model

logger = logging.getLogger(__name__)

BEST = "best"
LAST = "last"


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    precision: str = "float32"
    # teacher forcing decays linearly from 1 to 0 over this share of the epochs
    teacher_forcing_fraction: float = 0.5
    # KL weight rises linearly from 0 to 1 over this share of the optimizer steps
    kl_warmup_fraction: float = 0.1
    validation_fraction: float = 0.1
    random_offset: bool = True
    window: int = WINDOW
    stride: int = STRIDE
    split_index: int = SPLIT_INDEX

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")
        if not 0 <= self.split_index < self.window - 1:
            raise ValueError("split_index must leave at least one target transition")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingResult:
    model: object
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_validation: float = math.inf
    checkpoint: Path = None


def teacher_forcing_probability(epoch, config):
    span = config.teacher_forcing_fraction * config.epochs
    if span <= 0:
        return 0.0
    return max(0.0, 1.0 - epoch / span)


def kl_weight(step, total_steps, config):
    warmup = math.ceil(config.kl_warmup_fraction * total_steps)
    if warmup <= 0:
        return 1.0
    return min(1.0, (step + 1) / warmup)


def split_windows(dataset, config):
    """Training windows, with the last episodes of the train split held out for validation."""
    windows = window_dataset(dataset, config.window, config.stride, config.split_index, split=TRAIN)
    episodes = np.unique(windows.episode)
    n_val = int(round(config.validation_fraction * len(episodes)))
    if n_val == 0 or n_val == len(episodes):
        return windows, np.arange(len(windows)), np.arange(0)
    held = np.isin(windows.episode, episodes[-n_val:])
    return windows, np.flatnonzero(~held), np.flatnonzero(held)


def base_manifest(config, dataset, /, **extra):
    return {
        "training": config.to_dict(),
        "normalizer": dataset.normalizer.to_dict(),
        "control_normalizer": dataset.control_normalizer.to_dict(),
        "normalizer_fingerprint": dataset.normalizer.fingerprint(),
        "env": dataset.env,
        "solver": {"kind": "euler"},
        **extra,
    }


def _save(model, directory, name, manifest, moments=None):
    if directory is None:
        return None
    return save_model(model, Path(directory) / name, manifest, moments)


def _snapshot(params):
    return {k: v.detach().clone() for k, v in params.items()}


def _restore(params, state):
    params.load_numpy({k: v.detach().cpu().numpy() for k, v in state.items()})


def validation_loss(model, loss_terms, windows, index, config, dtype):
    """Mean loss over held-out windows: rollout from the boundary, no forcing, full KL, fixed noise."""
    if len(index) == 0:
        return math.nan
    generator = torch.Generator().manual_seed(config.seed)
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(index), config.batch_size):
            chunk = index[start:start + config.batch_size]
            batch = WindowBatch.from_window_set(windows, chunk, dtype, np.full(len(chunk), config.split_index))
            total += float(loss_terms(model, batch, None, 1.0, generator).total) * len(chunk)
    return total / len(index)


def fit_model(model, loss_terms, config, dataset, directory=None, resume=False, manifest=None):
    """
    Optimize `model` with Adam on the train split of `dataset`.

    Args:
        model: A freshly built model (its parameters are updated in place).
        loss_terms: Callable (model, batch, forcing, kl_weight, generator)
            returning an object with a scalar `total`.
        config: `TrainingConfig`.
        dataset: `DatasetContainer`.
        directory: Where `best/` and `last/` checkpoints go. Without it the
            best parameters are kept in memory only.
        resume: Continue from `directory/last`.
        manifest: Entries echoed into every checkpoint manifest.

    Returns:
        A `TrainingResult` whose model holds the best-validation parameters.

    Raises:
        DivergenceError: a non-finite loss or gradient; the model is reset to
            the best parameters and the error carries their checkpoint.
    """
    dtype = dtype_for(config.precision)
    windows, train_index, val_index = split_windows(dataset, config)
    rng = np.random.default_rng(config.seed)
    params = model.params()
    moments = AdamMoments(params, AdamHyper(lr=config.lr))
    result = TrainingResult(model=model)
    manifest = manifest or {}

    start_epoch = 0
    best_state = _snapshot(params)
    if resume:
        if directory is None:
            raise ValueError("Resuming needs a training directory")
        loaded = checkpoints.load_checkpoint(Path(directory) / LAST)
        params.load_numpy(loaded["params"])
        moments.load_state_arrays(loaded["moments"])
        checkpoints.restore_rng(loaded["torch_rng"])
        progress = loaded["manifest"]["progress"]
        rng.bit_generator.state = progress["numpy_rng"]
        start_epoch = progress["epoch"] + 1
        result.log = list(progress["log"])
        result.best_epoch = progress["best_epoch"]
        result.best_validation = progress["best_validation"]
        if (Path(directory) / BEST).exists():
            result.checkpoint = Path(directory) / BEST
            best_state = {
                k: torch.from_numpy(v) for k, v in checkpoints.load_checkpoint(result.checkpoint)["params"].items()
            }
        logger.info(f"resuming at epoch {start_epoch}")

    batches_per_epoch = math.ceil(len(train_index) / config.batch_size)
    total_steps = batches_per_epoch * config.epochs
    step = batches_per_epoch * start_epoch

    for epoch in range(start_epoch, config.epochs):
        started = time.perf_counter()
        order = train_index[rng.permutation(len(train_index))]
        if config.random_offset:
            offsets = rng.integers(0, config.split_index + 1, size=len(windows))
        else:
            offsets = np.full(len(windows), config.split_index)
        forcing_p = teacher_forcing_probability(epoch, config)
        weight = kl_weight(step, total_steps, config)
        train_total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            batch = WindowBatch.from_window_set(windows, chunk, dtype, offsets[chunk])
            forcing = torch.from_numpy(rng.random((len(chunk), batch.width)) < forcing_p)
            weight = kl_weight(step, total_steps, config)
            holder = {}

            def loss_fn(_):
                holder["terms"] = loss_terms(model, batch, forcing, weight, None)
                return holder["terms"].total

            try:
                gradient = grad(loss_fn, params)
            except NonFiniteError as e:
                diagnostics = {"epoch": epoch, "step": step, **e.diagnostics}
                logger.error(f"training diverged: {diagnostics}")
                _restore(params, best_state)
                raise DivergenceError(str(e), last_good_checkpoint=result.checkpoint, diagnostics=diagnostics) from e
            adam_step(params, gradient, moments)
            train_total += float(holder["terms"].total) * len(chunk)
            step += 1

        train_loss = train_total / max(1, len(order))
        val_loss = validation_loss(model, loss_terms, windows, val_index, config, dtype)
        score = train_loss if math.isnan(val_loss) else val_loss
        result.log.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "validation_loss": val_loss,
            "teacher_forcing": forcing_p,
            "kl_weight": weight,
            "seconds": time.perf_counter() - started,
        })
        logger.info(f"epoch {epoch}: train {train_loss:.6g}, validation {val_loss:.6g}")
        if score < result.best_validation:
            result.best_validation, result.best_epoch = score, epoch
            best_state = _snapshot(params)
            result.checkpoint = _save(model, directory, BEST, {**manifest, "epoch": epoch, "best_validation": score})
        progress = {
            "epoch": epoch,
            "numpy_rng": rng.bit_generator.state,
            "log": result.log,
            "best_epoch": result.best_epoch,
            "best_validation": result.best_validation,
        }
        _save(model, directory, LAST, {**manifest, "progress": progress}, moments)

    _restore(params, best_state)
    if result.checkpoint is None:
        result.checkpoint = _save(
            model, directory, BEST, {**manifest, "epoch": result.best_epoch, "best_validation": result.best_validation}
        )
    return result


def vcnodeti_terms(model, batch, forcing, weight, generator):
    return elbo_terms(model, batch, generator=generator, forcing=forcing, kl_weight=weight)


def train_vcnodeti(config, dataset, spec=None, directory=None, resume=False, manifest=None):
    """
    Train a time-invariant model (`vcnodeti`, `cnode_only` or `cnode_vae`).

    `spec` defaults to a `vcnodeti` model sized to the dataset features and
    controls. See `fit_model` for the remaining arguments.
    """
    if spec is None:
        spec = ModelSpec(
            state_dim=dataset.features.shape[-1],
            control_dim=dataset.controls.shape[-1],
            precision=config.precision,
        )
    model = build_model(spec, seed=config.seed)
    return fit_model(
        model, vcnodeti_terms, config, dataset, directory, resume,
        base_manifest(config, dataset, **(manifest or {})),
    )


def load_best(directory):
    return model_from_checkpoint(checkpoints.load_checkpoint(Path(directory) / BEST))
