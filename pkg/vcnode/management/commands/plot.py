from pathlib import Path

import numpy as np

from dynamics.container import META_FILE
from dynamics.envsim.datasets import DatasetContainer
from dynamics.mpc.controller import EpisodeRecord
from vcnode.errors import ConfigError
from vcnode.exceptions.handlers import handle_command_exceptions
from vcnode.management.base import ExperimentCommand
from vcnode.utils import plotting
from vcnode.utils.evaluation import held_out_windows, predict_windows
from vcnode.utils.metrics import read_rows
from vcnode.utils.models import load_any


class Command(ExperimentCommand):
    help = "Write CSV series and SVG renderings of episodes and predictions."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--episodes", default=None, help="Directory of saved episode records")
        parser.add_argument("--checkpoint", default=None, help="Model for prediction series")
        parser.add_argument("--data", default=None, help="Dataset for prediction series")
        parser.add_argument("--windows", type=int, default=4, help="Number of test windows to plot")
        parser.add_argument("--no-svg", action="store_true", help="Only write CSV files")

    def plot_episodes(self, directory, out, svg):
        directory = Path(directory)
        found = sorted(p for p in directory.iterdir() if (p / META_FILE).is_file())
        for path in found:
            record = EpisodeRecord.load(path)
            plotting.write_episode_csv(record, out / f"{path.name}.csv")
            if svg:
                plotting.render_episode(record, out / f"{path.name}.svg")
        return len(found)

    def plot_predictions(self, config, checkpoint, data, count, out, svg):
        model, _ = load_any(checkpoint)
        dataset = DatasetContainer.load(data)
        windows = held_out_windows(dataset, config.training_config())
        index = np.arange(min(count, len(windows)))
        if len(index) == 0:
            return 0
        s = windows.split_index
        pred = dataset.normalizer.invert(predict_windows(model, windows, index, config.solver_config()))
        states = dataset.normalizer.invert(windows.states[index])
        truth = dataset.normalizer.invert(windows.clean_states[index])
        for i in index:
            path = out / f"prediction-{i:04d}.csv"
            plotting.write_prediction_csv(windows.times, states[i, :s + 1], pred[i], truth[i, s + 1:], path)
            if svg:
                rows = plotting.prediction_rows(windows.times, states[i, :s + 1], pred[i], truth[i, s + 1:])
                plotting.render_prediction(rows, path.with_suffix(".svg"))
        return len(index)

    def plot_losses(self, checkpoint, out):
        table = Path(checkpoint) / "loss.csv"
        if not table.is_file():
            return False
        losses = [float(row["train_loss"]) for row in read_rows(table)]
        plotting.render_curve(losses, out / "loss.svg", "epoch", "train loss")
        return True

    @handle_command_exceptions
    def handle(self, *args, **options):
        config = self.load_config(options)
        out = self.out_dir(options, config, "report_dir") / "plots"
        out.mkdir(parents=True, exist_ok=True)
        svg = not options["no_svg"]
        if not options["episodes"] and not options["checkpoint"]:
            raise ConfigError("Nothing to plot: pass --episodes and/or --checkpoint")
        if options["episodes"]:
            count = self.plot_episodes(options["episodes"], out, svg)
            self.report(f"{count} episodes plotted to {out}")
        if options["checkpoint"]:
            data = Path(options["data"]) if options["data"] else self.default_path(config, "data_dir")
            count = self.plot_predictions(config, options["checkpoint"], data, options["windows"], out, svg)
            self.report(f"{count} prediction windows plotted to {out}")
            if svg and self.plot_losses(options["checkpoint"], out):
                self.report(f"loss curve plotted to {out / 'loss.svg'}")
