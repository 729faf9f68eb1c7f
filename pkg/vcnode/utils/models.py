import logging
from pathlib import Path

from dynamics.approx import checkpoints
from dynamics.exceptions import ContainerFormatError
from dynamics.latentdyn.model import TIME_INVARIANT_KINDS, model_from_checkpoint
from dynamics.latentdyn.training import BEST, train_vcnodeti
from dynamics.vrnn.model import KIND as TIME_VARIANT_KIND, vrnn_from_checkpoint
from dynamics.vrnn.training import train_vcnodet

logger = logging.getLogger(__name__)


def checkpoint_path(path):
    """Accept either a training directory or a checkpoint inside it."""
    path = Path(path)
    if (path / BEST).is_dir():
        return path / BEST
    return path


def load_any(path):
    """
    Load a checkpoint of any model kind.

    Returns:
        (model, manifest)
    """
    loaded = checkpoints.load_checkpoint(checkpoint_path(path))
    kind = loaded["manifest"].get("kind")
    if kind in TIME_INVARIANT_KINDS:
        return model_from_checkpoint(loaded), loaded["manifest"]
    elif kind == TIME_VARIANT_KIND:
        return vrnn_from_checkpoint(loaded), loaded["manifest"]
    raise ContainerFormatError(f"{path} holds an unknown model kind {kind!r}")


def train_from_config(config, dataset, directory, resume=False):
    """Train the model kind selected by `config.model.kind` on `dataset`."""
    spec = config.model_spec(dataset.features.shape[-1], dataset.controls.shape[-1])
    training = config.training_config()
    manifest = {"config": config.to_dict()}
    if spec.kind == TIME_VARIANT_KIND:
        codec_from = None
        if config.model["codec_checkpoint"]:
            codec_from, _ = load_any(config.model["codec_checkpoint"])
            logger.info(f"sharing the state codec of {config.model['codec_checkpoint']}")
        return train_vcnodet(training, dataset, spec, directory, resume, manifest, codec_from=codec_from)
    return train_vcnodeti(training, dataset, spec, directory, resume, manifest)
