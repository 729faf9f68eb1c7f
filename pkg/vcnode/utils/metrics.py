"""
Metric computation and the tabular report format.

Every table is written as CSV through clevercsv; a `MetricsReport` is
persisted as `metrics.json` plus a one-row `metrics.csv`.
"""
from dataclasses import asdict, dataclass, field
import json
import logging
import math
from pathlib import Path

import clevercsv as csv
import numpy as np

logger = logging.getLogger(__name__)

LATENCY_QUANTILES = (0.5, 0.9, 0.99)
REPORT_JSON = "metrics.json"
REPORT_CSV = "metrics.csv"


def rmse(prediction, target):
    diff = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if diff.size == 0:
        return math.nan
    return float(np.sqrt(np.mean(diff ** 2)))


def signal_rms(target):
    target = np.asarray(target, dtype=np.float64)
    if target.size == 0:
        return math.nan
    return float(np.sqrt(np.mean(target ** 2)))


def relative_rmse(prediction, target):
    """`rmse` divided by the RMS of the target signal."""
    rms = signal_rms(target)
    if not rms:
        return math.nan
    return rmse(prediction, target) / rms


def horizon_curve(prediction, target):
    """
    RMSE per prediction step.

    Args:
        prediction, target: (N, K, p) arrays.

    Returns:
        (K,) array; entry k is the RMSE over all windows and features at step k + 1.
    """
    diff = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.sqrt(np.mean(diff ** 2, axis=(0, 2)))


def latency_quantiles(samples_us, quantiles=LATENCY_QUANTILES):
    samples = np.asarray(samples_us, dtype=np.float64)
    if samples.size == 0:
        return {f"p{round(100 * q)}": math.nan for q in quantiles}
    return {f"p{round(100 * q)}": float(np.quantile(samples, q)) for q in quantiles}


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    return value


@dataclass
class MetricsReport:
    """
    Attributes:
        rmse: Prediction RMSE in original feature units.
        relative_rmse: `rmse` over the RMS of the target signal.
        normalized_rmse: RMSE of normalized features.
        average_return: Mean summed reward per episode.
        success_rate: Share of successful episodes, in [0, 1].
        latency_us: Quantiles of per-step planning time.
        horizon_rmse: RMSE per prediction step.
        extra: Additional named values (solver comparisons and so on).
        config: Echo of the experiment config that produced the report.
    """
    rmse: float = math.nan
    relative_rmse: float = math.nan
    normalized_rmse: float = math.nan
    average_return: float = math.nan
    success_rate: float = math.nan
    latency_us: dict = field(default_factory=dict)
    horizon_rmse: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isnan(self.success_rate) and not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success_rate must lie in [0, 1], got {self.success_rate}")

    def to_dict(self):
        return _clean(asdict(self))

    def row(self):
        """Flat scalar columns for the CSV table."""
        row = {
            "rmse": self.rmse,
            "relative_rmse": self.relative_rmse,
            "normalized_rmse": self.normalized_rmse,
            "average_return": self.average_return,
            "success_rate": self.success_rate,
        }
        row.update({f"latency_{k}_us": v for k, v in self.latency_us.items()})
        row.update({k: v for k, v in self.extra.items() if isinstance(v, (int, float))})
        return row

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / REPORT_JSON).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        write_rows(directory / REPORT_CSV, [self.row()])
        if self.horizon_rmse:
            write_rows(
                directory / "horizon.csv",
                [{"step": k + 1, "rmse": v} for k, v in enumerate(self.horizon_rmse)],
            )
        logger.info(f"metrics written to {directory}")
        return directory

    @classmethod
    def load(cls, directory):
        data = json.loads((Path(directory) / REPORT_JSON).read_text())
        for key in ("rmse", "relative_rmse", "normalized_rmse", "average_return", "success_rate"):
            if data.get(key) is None:
                data[key] = math.nan
        return cls(**data)


def write_rows(path, rows, fieldnames=None):
    """Write dict rows as CSV; with no rows only the header is written."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_rows(path):
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))
