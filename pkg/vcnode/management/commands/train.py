import logging
from pathlib import Path

from dynamics.approx import checkpoints
from dynamics.envsim.datasets import DatasetContainer
from dynamics.latentdyn.training import LAST
from vcnode.errors import ConfigError, NormalizerMismatchError
from vcnode.exceptions.handlers import handle_command_exceptions
from vcnode.management.base import ExperimentCommand
from vcnode.utils.metrics import write_rows
from vcnode.utils.models import train_from_config

logger = logging.getLogger(__name__)

LOSS_FIELDS = ("epoch", "train_loss", "validation_loss", "teacher_forcing", "kl_weight", "seconds")


def check_fingerprint(dataset, expected):
    actual = dataset.normalizer.fingerprint()
    if expected and expected != actual:
        raise NormalizerMismatchError(expected, actual)
    return actual


class Command(ExperimentCommand):
    help = "Train a latent dynamics model on a generated dataset."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--data", default=None, help="Dataset directory (defaults to io.data_dir)")
        parser.add_argument("--resume", action="store_true", help="Continue from the last checkpoint in --out")

    @handle_command_exceptions
    def handle(self, *args, **options):
        config = self.load_config(options)
        data = Path(options["data"]) if options["data"] else self.default_path(config, "data_dir")
        out = self.out_dir(options, config, "checkpoint_dir")
        dataset = DatasetContainer.load(data)
        if dataset.normalizer is None:
            raise ConfigError(f"{data} has no training split to train on")
        check_fingerprint(dataset, config.io["normalizer_fingerprint"])
        if options["resume"]:
            previous = checkpoints.load_checkpoint(out / LAST)["manifest"]
            check_fingerprint(dataset, previous.get("normalizer_fingerprint"))
        result = train_from_config(config, dataset, out, resume=options["resume"])
        write_rows(out / "loss.csv", result.log, LOSS_FIELDS)
        self.report(
            f"best epoch {result.best_epoch} (validation {result.best_validation:.6g}); "
            f"checkpoint {result.checkpoint}"
        )
