"""
Threshold checks behind `eval --check` and `mpc --check`.
"""
import logging
import math

from frozendict import frozendict

from dynamics.vrnn.model import KIND as TIME_VARIANT_KIND
from vcnode.errors import AcceptanceCheckFailed

logger = logging.getLogger(__name__)

THRESHOLDS = frozendict({
    "spiral_relative_rmse": 0.05,
    "pendulum_normalized_rmse": 0.01,
    "oracle_success_rate": 0.95,
    "oracle_scaled_return": -211.0,
    "oracle_return_tolerance": 0.25,
    "learned_success_rate": 0.8,
    # oracle return / learned return, both negative
    "learned_return_ratio": 0.75,
    "median_latency_us": 50_000.0,
})

# (time-variant, time-invariant) pair scored by `time_variant_failures`
COMPARED_KINDS = (TIME_VARIANT_KIND, "vcnodeti")


def _below(name, value, limit):
    if math.isnan(value) or value > limit:
        return [f"{name} {value:.6g} exceeds {limit:.6g}"]
    return []


def _above(name, value, limit):
    if math.isnan(value) or value < limit:
        return [f"{name} {value:.6g} is below {limit:.6g}"]
    return []


def intrinsic_failures(report, env_kind, thresholds=THRESHOLDS):
    if env_kind == "pendulum":
        return _below("normalized RMSE", report.normalized_rmse, thresholds["pendulum_normalized_rmse"])
    return _below("relative RMSE", report.relative_rmse, thresholds["spiral_relative_rmse"])


def oracle_failures(report, thresholds=THRESHOLDS):
    failures = _above("oracle success rate", report.success_rate, thresholds["oracle_success_rate"])
    reference = thresholds["oracle_scaled_return"]
    scaled = report.extra.get("scaled_return", math.nan)
    if math.isnan(scaled) or abs(scaled - reference) > thresholds["oracle_return_tolerance"] * abs(reference):
        failures.append(f"oracle scaled return {scaled:.6g} is not within 25% of {reference:.6g}")
    return failures


def learned_failures(report, oracle_report=None, thresholds=THRESHOLDS):
    failures = _above("learned success rate", report.success_rate, thresholds["learned_success_rate"])
    failures += _below("median latency [us]", report.latency_us.get("p50", math.nan), thresholds["median_latency_us"])
    if oracle_report is not None:
        floor = oracle_report.average_return / thresholds["learned_return_ratio"]
        failures += _above("learned average return", report.average_return, floor)
    return failures


def _one_step(report):
    # saved reports store NaN as null
    value = report.extra.get("one_step_rmse")
    return math.nan if value is None else float(value)


def time_variant_failures(reports):
    """
    The time-variant model must predict one step ahead strictly better than
    the time-invariant one evaluated on the same windows.
    """
    by_kind = {report.extra.get("kind"): report for report in reports}
    missing = [kind for kind in COMPARED_KINDS if kind not in by_kind]
    if missing:
        return [f"comparison needs a {' and a '.join(missing)} report"]
    variant, invariant = (_one_step(by_kind[kind]) for kind in COMPARED_KINDS)
    if math.isnan(variant) or math.isnan(invariant) or variant >= invariant:
        return [f"{TIME_VARIANT_KIND} one-step RMSE {variant:.6g} is not below vcnodeti {invariant:.6g}"]
    return []


def check(failures):
    """Raise `AcceptanceCheckFailed` when any threshold failed."""
    if failures:
        logger.error(f"acceptance check failed: {failures}")
        raise AcceptanceCheckFailed(failures)
    logger.info("acceptance check passed")
