"""
Training for the time-variant model, on the same windows and loop as the
time-invariant models.
"""
import logging

from dynamics.latentdyn.training import base_manifest, fit_model
from dynamics.vrnn.model import VrnnSpec, build_vrnn, vrnn_terms

logger = logging.getLogger(__name__)


def vcnodet_terms(model, batch, forcing, weight, generator):
    return vrnn_terms(
        model, batch.states, batch.targets, batch.controls, batch.times,
        rollout_from=batch.split_index, generator=generator, kl_weight=weight,
    )


def train_vcnodet(config, dataset, spec=None, directory=None, resume=False, manifest=None, codec_from=None):
    """
    Train a `vcnodet` model. Teacher forcing and rollout offsets of the
    config do not apply; the KL warm-up does.

    Args:
        codec_from: Optional trained time-invariant model whose encoder and
            decoder are shared.
    """
    if spec is None:
        spec = VrnnSpec(
            state_dim=dataset.features.shape[-1],
            control_dim=dataset.controls.shape[-1],
            precision=config.precision,
        )
    model = build_vrnn(spec, seed=config.seed, codec_from=codec_from)
    logger.debug(f"vcnodet model with {model.params().numel()} parameters")
    return fit_model(
        model, vcnodet_terms, config, dataset, directory, resume,
        base_manifest(config, dataset, shared_codec=codec_from is not None, **(manifest or {})),
    )
