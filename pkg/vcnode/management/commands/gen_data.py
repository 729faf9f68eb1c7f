from dynamics.envsim.datasets import generate_dataset
from vcnode.exceptions.handlers import handle_command_exceptions
from vcnode.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Generate a domain-randomized trajectory dataset."

    @handle_command_exceptions
    def handle(self, *args, **options):
        config = self.load_config(options)
        out = self.out_dir(options, config, "data_dir")
        dataset = generate_dataset(config.env_config())
        dataset.save(out)
        fingerprint = dataset.normalizer.fingerprint() if dataset.normalizer else "none"
        self.report(f"{len(dataset)} episodes written to {out} (normalizer {fingerprint})")
