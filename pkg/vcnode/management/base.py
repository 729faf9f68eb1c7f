from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from vcnode.utils.config import PROFILES, ExperimentConfig


class ExperimentCommand(BaseCommand):
    """
    Shared flags of every vcnode subcommand: `--config`, `--seed`, `--out`
    and `--profile`.
    """

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None, help="Experiment config JSON file")
        parser.add_argument("--seed", type=int, default=None, help="Overrides env.seed, training.seed and mpc.seed")
        parser.add_argument("--out", default=None, help="Output directory")
        parser.add_argument("--profile", default="desk", choices=sorted(PROFILES))

    def load_config(self, options):
        return ExperimentConfig.load(options["config"], options["profile"], options["seed"])

    def default_path(self, config, key):
        return config.path(key, settings.VCNODE_DATA_ROOT)

    def out_dir(self, options, config, key):
        out = Path(options["out"]) if options["out"] else self.default_path(config, key)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def report(self, message):
        self.stdout.write(message)
