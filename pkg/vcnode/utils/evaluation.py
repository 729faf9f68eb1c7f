"""
Intrinsic evaluation: few-shot prediction on held-out windows.

Each test window gives the model its noisy context (samples 0..split) and
the controls ahead; predictions of samples split+1..W-1 are scored against
the clean features.
"""
import logging
import math
import time

import numpy as np
import torch

from dynamics.envsim.datasets import TEST
from dynamics.envsim.windows import window_dataset
from dynamics.latentdyn.model import encode_states, infer_embedding, predict_trajectory, to_tensor
from dynamics.odesolve import SolverConfig
from dynamics.vrnn.model import KIND as TIME_VARIANT_KIND, one_step_predictions, vrnn_generate
from vcnode.utils.metrics import MetricsReport, horizon_curve, latency_quantiles, relative_rmse, rmse

logger = logging.getLogger(__name__)

EVAL_BATCH = 256
LATENCY_SAMPLES = 50


def held_out_windows(dataset, training):
    return window_dataset(
        dataset, training.window, training.stride, training.split_index, split=TEST, noisy_inputs=True,
    )


def _parts(windows, index, dtype):
    s = windows.split_index
    states = to_tensor(windows.states[index], dtype)
    controls = to_tensor(windows.controls[index], dtype)
    return states[:, :s + 1], controls[:, :s], controls[:, s:], windows.times[s:]


def predict_windows(model, windows, index, solver=SolverConfig()):
    """
    Normalized predictions of the target samples after the boundary.

    Returns:
        (len(index), K, p) numpy array, K = W - 1 - split_index.
    """
    x_context, u_context, u_future, t_future = _parts(windows, index, model.dtype)
    with torch.no_grad():
        if model.spec.kind == TIME_VARIANT_KIND:
            pred = vrnn_generate(model, x_context, u_context, u_future, t_future, rng_mode="posterior_mean")
        else:
            pred = predict_trajectory(model, x_context, u_context, u_future, t_future, solver)[:, 1:]
    return pred.detach().cpu().numpy().astype(np.float64)


def predict_all(model, windows, solver=SolverConfig(), batch=EVAL_BATCH):
    chunks = [
        predict_windows(model, windows, np.arange(start, min(start + batch, len(windows))), solver)
        for start in range(0, len(windows), batch)
    ]
    if not chunks:
        width = windows.states.shape[1] - 1 - windows.split_index
        return np.zeros((0, width, windows.states.shape[-1]))
    return np.concatenate(chunks)


def one_step_rmse(model, windows, batch=EVAL_BATCH):
    """
    Normalized RMSE of predicting each target sample from the encoded
    previous one.

    Time-invariant models use the embedding inferred from the context;
    `vcnodet` uses its prior at every step. Models without a per-point
    state encoder return NaN.
    """
    if model.spec.kind != TIME_VARIANT_KIND and not model.spec.has_state_encoder:
        return math.nan
    s = windows.split_index
    errors = []
    with torch.no_grad():
        for start in range(0, len(windows), batch):
            index = np.arange(start, min(start + batch, len(windows)))
            states = to_tensor(windows.states[index], model.dtype)
            controls = to_tensor(windows.controls[index], model.dtype)
            target = windows.clean_states[index][:, s + 1:]
            if model.spec.kind == TIME_VARIANT_KIND:
                pred = one_step_predictions(model, states, controls, windows.times)[:, s:]
            else:
                emb, _ = infer_embedding(model, states[:, :s + 1], controls[:, :s])
                z = encode_states(model, states)[:, s:-1]
                u = controls[:, s:]
                h = to_tensor(np.diff(windows.times[s:]), model.dtype)[None, :, None]
                dz = (emb.a.unsqueeze(-3) @ z.unsqueeze(-1))[..., 0]
                dz = dz + (emb.b.unsqueeze(-3) @ u.unsqueeze(-1))[..., 0] + emb.o.unsqueeze(-2)
                pred = model.decoder(z + h * dz)
            errors.append((pred.detach().cpu().numpy() - target) ** 2)
    if not errors:
        return math.nan
    return float(np.sqrt(np.mean(np.concatenate(errors))))


def solve_latency(model, windows, solver, samples=LATENCY_SAMPLES):
    """Wall time of single-window predictions, in microseconds."""
    timings = []
    for i in range(min(samples, len(windows))):
        started = time.perf_counter_ns()
        predict_windows(model, windows, np.array([i]), solver)
        timings.append((time.perf_counter_ns() - started) / 1e3)
    return np.array(timings)


def evaluate_intrinsic(model, dataset, config, solver_kind=None):
    """
    Score `model` on the TEST split of `dataset`.

    Returns:
        A `MetricsReport` with original-unit and normalized RMSE, the
        per-horizon curve, one-step RMSE and per-solver latency.
    """
    training = config.training_config()
    solver = config.solver_config(solver_kind)
    windows = held_out_windows(dataset, training)
    started = time.perf_counter()
    pred = predict_all(model, windows, solver)
    target = windows.clean_states[:, windows.split_index + 1:]
    pred_raw = dataset.normalizer.invert(pred)
    target_raw = dataset.normalizer.invert(target)
    logger.info(f"predicted {len(windows)} test windows in {time.perf_counter() - started:.1f}s")

    extra = {
        "windows": len(windows),
        "solver": solver.kind,
        "one_step_rmse": one_step_rmse(model, windows),
    }
    latency = {}
    kinds = ("euler",) if model.spec.kind == TIME_VARIANT_KIND else ("euler", "dopri45")
    for kind in kinds:
        quantiles = latency_quantiles(solve_latency(model, windows, config.solver_config(kind)))
        extra.update({f"{kind}_latency_{k}_us": v for k, v in quantiles.items()})
        if kind == solver.kind:
            latency = quantiles
    return MetricsReport(
        rmse=rmse(pred_raw, target_raw),
        relative_rmse=relative_rmse(pred_raw, target_raw),
        normalized_rmse=rmse(pred, target),
        latency_us=latency,
        horizon_rmse=horizon_curve(pred_raw, target_raw).tolist() if len(pred) else [],
        extra={"kind": model.spec.kind, **extra},
        config=config.to_dict(),
    )


def compare_models(models, dataset, config, solver_kind=None):
    """
    Evaluate several models on the same held-out windows.

    Args:
        models: (label, model) pairs.

    Returns:
        One `MetricsReport` per model, in order; `extra["label"]` carries the label.
    """
    reports = []
    for label, model in models:
        report = evaluate_intrinsic(model, dataset, config, solver_kind)
        report.extra["label"] = str(label)
        logger.info(f"{label} ({model.spec.kind}): one-step rmse {report.extra['one_step_rmse']:.6g}")
        reports.append(report)
    return reports


def comparison_rows(reports):
    return [
        {
            "label": report.extra.get("label", ""),
            "kind": report.extra.get("kind", ""),
            "one_step_rmse": report.extra.get("one_step_rmse", math.nan),
            "rmse": report.rmse,
            "normalized_rmse": report.normalized_rmse,
        }
        for report in reports
    ]
