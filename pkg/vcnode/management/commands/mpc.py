from pathlib import Path

from dynamics.envsim.datasets import TRAIN, DatasetContainer
from vcnode.exceptions.handlers import handle_command_exceptions
from vcnode.management.base import ExperimentCommand
from vcnode.utils import acceptance
from vcnode.utils.config import CONTROLLERS
from vcnode.utils.control import run_instances, save_records, summarize


class Command(ExperimentCommand):
    help = "Receding-horizon swing-up of randomized pendulum instances."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", default=None, help="Training directory or checkpoint")
        parser.add_argument("--controller", default=None, choices=CONTROLLERS, help="Overrides mpc.controller")
        parser.add_argument("--data", default=None, help="Training dataset, needed for mpc.latent_bounds")
        parser.add_argument("--check", action="store_true", help="Exit with code 4 if thresholds are missed")

    def _run(self, config, controller, checkpoint, features, out):
        records = run_instances(config, controller, checkpoint, features)
        save_records(records, out / "episodes")
        report = summarize(records, config, {"controller": controller})
        report.save(out / controller)
        self.report(
            f"{controller}: success {report.success_rate:.2%}, return {report.average_return:.2f} "
            f"(scaled {report.extra['scaled_return']:.2f}), median solve {report.latency_us['p50']:.0f} us"
        )
        return report

    @handle_command_exceptions
    def handle(self, *args, **options):
        config = self.load_config(options)
        controller = options["controller"] or config.mpc["controller"]
        out = self.out_dir(options, config, "report_dir")
        checkpoint = None
        if controller == "learned":
            checkpoint = Path(options["checkpoint"]) if options["checkpoint"] else self.default_path(config, "checkpoint_dir")
        features = None
        if options["data"]:
            dataset = DatasetContainer.load(options["data"])
            features = dataset.features[dataset.indices(TRAIN)]

        report = self._run(config, controller, checkpoint, features, out)
        oracle = report if controller == "oracle" else None
        if controller == "learned" and config.mpc["compare_oracle"]:
            oracle = self._run(config, "oracle", None, None, out)
            report.extra["oracle_average_return"] = oracle.average_return
            report.save(out / controller)
        if options["check"]:
            failures = []
            if oracle is not None:
                failures += acceptance.oracle_failures(oracle)
            if controller == "learned":
                failures += acceptance.learned_failures(report, oracle)
            acceptance.check(failures)
