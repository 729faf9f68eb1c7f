from pathlib import Path

from dynamics.envsim.datasets import DatasetContainer
from vcnode.exceptions.handlers import handle_command_exceptions
from vcnode.management.base import ExperimentCommand
from vcnode.management.commands.train import check_fingerprint
from vcnode.utils import acceptance
from vcnode.utils.evaluation import compare_models, comparison_rows, evaluate_intrinsic
from vcnode.utils.metrics import write_rows
from vcnode.utils.models import load_any

COMPARISON_CSV = "comparison.csv"


class Command(ExperimentCommand):
    help = "Few-shot prediction metrics of a trained model on held-out windows."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", default=None, help="Training directory or checkpoint")
        parser.add_argument("--data", default=None, help="Dataset directory (defaults to io.data_dir)")
        parser.add_argument("--solver", default=None, choices=("euler", "dopri45"))
        parser.add_argument(
            "--compare", nargs="+", default=None, metavar="CHECKPOINT",
            help="Further checkpoints scored on the same windows; writes comparison.csv",
        )
        parser.add_argument("--check", action="store_true", help="Exit with code 4 if thresholds are missed")

    def _load(self, checkpoint, dataset):
        model, manifest = load_any(checkpoint)
        check_fingerprint(dataset, manifest.get("normalizer_fingerprint"))
        return model

    @handle_command_exceptions
    def handle(self, *args, **options):
        config = self.load_config(options)
        checkpoint = Path(options["checkpoint"]) if options["checkpoint"] else self.default_path(config, "checkpoint_dir")
        data = Path(options["data"]) if options["data"] else self.default_path(config, "data_dir")
        out = self.out_dir(options, config, "report_dir")
        dataset = DatasetContainer.load(data)
        model = self._load(checkpoint, dataset)
        report = evaluate_intrinsic(model, dataset, config, options["solver"])
        report.extra["checkpoint"] = str(checkpoint)
        report.save(out)
        self.report(
            f"rmse {report.rmse:.6g}, relative {report.relative_rmse:.4%}, "
            f"normalized {report.normalized_rmse:.6g} on {report.extra['windows']} windows"
        )
        failures = acceptance.intrinsic_failures(report, dataset.env)

        if options["compare"]:
            others = [(path, self._load(path, dataset)) for path in options["compare"]]
            reports = [report] + compare_models(others, dataset, config, options["solver"])
            report.extra["label"] = str(checkpoint)
            rows = comparison_rows(reports)
            write_rows(out / COMPARISON_CSV, rows)
            for row in rows:
                self.report(f"{row['kind']} {row['label']}: one-step rmse {row['one_step_rmse']:.6g}")
            if {r.extra["kind"] for r in reports} >= set(acceptance.COMPARED_KINDS):
                failures += acceptance.time_variant_failures(reports)

        if options["check"]:
            acceptance.check(failures)
