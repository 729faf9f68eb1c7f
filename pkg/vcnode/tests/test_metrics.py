import json
import math

import numpy as np
import pytest

from vcnode.utils.metrics import (
    MetricsReport, horizon_curve, latency_quantiles, read_rows, relative_rmse, rmse, write_rows,
)


def test_rmse():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2.0))
    assert math.isnan(rmse([], []))


def test_relative_rmse():
    target = np.array([[3.0, 4.0], [3.0, 4.0]])
    assert relative_rmse(target + 0.5, target) == pytest.approx(0.5 / math.sqrt(12.5))
    assert math.isnan(relative_rmse(np.ones(3), np.zeros(3)))


def test_horizon_curve():
    target = np.zeros((4, 3, 2))
    prediction = np.zeros((4, 3, 2))
    prediction[:, 2] = 2.0
    np.testing.assert_allclose(horizon_curve(prediction, target), [0.0, 0.0, 2.0])


def test_latency_quantiles():
    quantiles = latency_quantiles(np.arange(1, 101))
    assert set(quantiles) == {"p50", "p90", "p99"}
    assert quantiles["p50"] == pytest.approx(50.5)
    assert all(math.isnan(v) for v in latency_quantiles([]).values())


@pytest.mark.parametrize("rate", [-0.1, 1.5])
def test_success_rate_must_be_a_fraction(rate):
    with pytest.raises(ValueError):
        MetricsReport(success_rate=rate)


def test_report_save_and_load(tmp_path):
    report = MetricsReport(
        rmse=0.1, relative_rmse=0.02, normalized_rmse=0.01, horizon_rmse=[0.05, 0.1],
        latency_us={"p50": 120.0, "p90": math.nan}, extra={"windows": 8, "solver": "euler"},
        config={"profile": "desk"},
    )
    report.save(tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"metrics.json", "metrics.csv", "horizon.csv"}
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["average_return"] is None
    assert data["latency_us"]["p90"] is None

    loaded = MetricsReport.load(tmp_path)
    assert loaded.rmse == 0.1
    assert math.isnan(loaded.success_rate)
    assert loaded.horizon_rmse == [0.05, 0.1]
    assert loaded.extra == {"windows": 8, "solver": "euler"}

    rows = read_rows(tmp_path / "metrics.csv")
    assert len(rows) == 1
    assert float(rows[0]["rmse"]) == 0.1
    assert float(rows[0]["latency_p50_us"]) == 120.0
    assert "solver" not in rows[0]
    assert [row["step"] for row in read_rows(tmp_path / "horizon.csv")] == ["1", "2"]


def test_write_rows_without_rows_keeps_header(tmp_path):
    path = write_rows(tmp_path / "nested" / "empty.csv", [], ["epoch", "train_loss"])
    assert path.read_text().strip() == "epoch,train_loss"
    assert read_rows(path) == []
