"""
Extrinsic evaluation: receding-horizon pendulum swing-up over randomized
instances.

Instance `i` draws its physical parameters, initial state and warm-up
excitation from the stream (mpc.seed, i), so the learned and oracle
controllers face identical instances and parallel runs match serial ones.
"""
from concurrent.futures import ProcessPoolExecutor
import logging
from pathlib import Path
import time

import numpy as np

from dynamics.envsim import pendulum
from dynamics.envsim.datasets import episode_rng
from dynamics.envsim.normalizer import Normalizer
from dynamics.latentdyn.model import TIME_INVARIANT_KINDS
from dynamics.mpc.controller import (
    LearnedPlanner, PendulumOraclePlanner, run_receding_horizon, scale_return,
)
from dynamics.mpc.lifting import LatentPlant, latent_box
from vcnode.errors import ConfigError
from vcnode.utils.metrics import MetricsReport, latency_quantiles
from vcnode.utils.models import load_any

logger = logging.getLogger(__name__)

UPRIGHT = np.zeros(2)

# Per-process state for worker pools; filled by `_init_worker`.
_worker = {}


def plant_from_checkpoint(path):
    model, manifest = load_any(path)
    if model.spec.kind not in TIME_INVARIANT_KINDS or not model.spec.has_state_encoder:
        raise ConfigError(f"MPC needs a time-invariant model with a state encoder, got {model.spec.kind!r}")
    if manifest.get("env") != "pendulum":
        raise ConfigError(f"MPC runs on the pendulum; {path} was trained on {manifest.get('env')!r}")
    return LatentPlant(
        model=model,
        normalizer=Normalizer.from_dict(manifest["normalizer"]),
        control_normalizer=Normalizer.from_dict(manifest["control_normalizer"]),
    )


def make_instance(config, index):
    rng = episode_rng(config.mpc["seed"], index)
    params = pendulum.sample_pendulum_params(rng, config.env["std_frac"])
    env = pendulum.PendulumEnv(params)
    env.reset(rng)
    return env, rng


def _planner(config, controller, env, plant=None, latent_bounds=None):
    if controller == "oracle":
        return PendulumOraclePlanner(env.params, config.controller_config(oracle=True))
    plant = LatentPlant(plant.model, plant.normalizer, plant.control_normalizer)
    low, high = env.control_bounds
    return LearnedPlanner(
        plant, pendulum.observe(UPRIGHT), (low, high), env.dt, config.controller_config(), latent_bounds,
    )


def run_instance(config, controller, index, plant=None, latent_bounds=None):
    env, rng = make_instance(config, index)
    planner = _planner(config, controller, env, plant, latent_bounds)
    record = run_receding_horizon(
        env, planner, config.mpc["episode_length"], rng,
        config.controller_config(oracle=controller == "oracle"),
    )
    record.meta.update({"instance": index, "controller": controller, "params": env.params.to_meta().tolist()})
    return record


def _init_worker(config, controller, checkpoint, latent_bounds):
    _worker.update(
        config=config,
        controller=controller,
        plant=plant_from_checkpoint(checkpoint) if checkpoint else None,
        latent_bounds=latent_bounds,
    )


def _run_job(index):
    return run_instance(
        _worker["config"], _worker["controller"], index, _worker["plant"], _worker["latent_bounds"],
    )


def run_instances(config, controller, checkpoint=None, latent_features=None):
    """
    Run `mpc.episodes` instances with the chosen controller.

    Args:
        controller: `learned` or `oracle`.
        checkpoint: Trained model directory; required for `learned`.
        latent_features: Raw training features used to size the latent box
            when `mpc.latent_bounds` is set.

    Returns:
        Episode records in instance order.
    """
    if controller == "learned" and checkpoint is None:
        raise ConfigError("The learned controller needs --checkpoint")
    latent_bounds = None
    if controller == "learned" and config.mpc["latent_bounds"]:
        if latent_features is None:
            raise ConfigError("mpc.latent_bounds needs the training dataset (--data)")
        latent_bounds = latent_box(plant_from_checkpoint(checkpoint), latent_features)
    indices = range(config.mpc["episodes"])
    started = time.perf_counter()
    workers = config.mpc["workers"]
    init_args = (config, controller, checkpoint if controller == "learned" else None, latent_bounds)
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=init_args) as pool:
            records = list(pool.map(_run_job, indices))
    else:
        _init_worker(*init_args)
        records = [_run_job(i) for i in indices]
    logger.info(
        f"{controller}: {len(records)} episodes x {config.mpc['episode_length']} steps "
        f"in {time.perf_counter() - started:.1f}s"
    )
    return records


def summarize(records, config, extra=None):
    """Aggregate episode records into a `MetricsReport`."""
    returns = np.array([r.total_return for r in records])
    solve_us = np.concatenate([r.solve_us for r in records]) if records else np.zeros(0)
    converged = np.concatenate([r.converged for r in records]) if records else np.zeros(0, dtype=bool)
    average = float(np.mean(returns)) if len(returns) else float("nan")
    length = config.mpc["episode_length"]
    return MetricsReport(
        average_return=average,
        success_rate=float(np.mean([r.success for r in records])) if records else float("nan"),
        latency_us=latency_quantiles(solve_us),
        extra={
            "episodes": len(records),
            "failed": int(sum(r.failed for r in records)),
            "scaled_return": scale_return(average, length),
            "converged_fraction": float(np.mean(converged)) if len(converged) else float("nan"),
            **(extra or {}),
        },
        config=config.to_dict(),
    )


def save_records(records, directory):
    directory = Path(directory)
    for record in records:
        record.save(directory / f"{record.meta['controller']}-{record.meta['instance']:05d}")
    return directory
