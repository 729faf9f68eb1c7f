"""
Domain-randomized dataset generation and the on-disk dataset container.

Each episode draws its own system instance, initial state and excitation
from an rng stream derived from (seed, episode index), so serial and
parallel generation produce identical archives.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import logging
import time

import numpy as np

from dynamics import container
from dynamics.envsim import pendulum, spiral
from dynamics.envsim.excitation import DEFAULT_SCALE_RANGE, perlin_controls, uniform_controls
from dynamics.envsim.normalizer import Normalizer
from dynamics.envsim.trajectory import Trajectory
from dynamics.exceptions import ContainerFormatError

logger = logging.getLogger(__name__)

ENV_KINDS = ("spiral", "drifting_spiral", "pendulum")
EXCITATIONS = ("perlin", "uniform", "mixed")
DATASET_KIND = "dataset"
TRAIN, TEST = 0, 1
_NOISE_STREAM = 2


@dataclass(frozen=True)
class EnvConfig:
    """
    Everything that determines a generated dataset.

    Attributes:
        kind: One of `ENV_KINDS`.
        count: Number of episodes.
        steps: Transitions per episode (T = steps + 1 samples).
        t_end: Time span for the spiral systems.
        excitation: Control signal family for controlled systems.
        std_frac: Relative standard deviation of the physical parameters.
        noise_frac: Observation noise std as a fraction of each feature's
            training-split range.
        train_fraction: Share of episodes in the training split.
        seed: Root seed.
        workers: Worker processes used for simulation.
        perlin_scale: (min, max) Perlin wavelength in steps.
        contracting_only: Redraw spiral systems until every eigenvalue has a
            negative real part.  Off by default, which keeps saddle systems.
    """
    kind: str = "pendulum"
    count: int = 5000
    steps: int = 200
    t_end: float = spiral.T_END
    excitation: str = "perlin"
    std_frac: float = pendulum.STD_FRAC
    noise_frac: float = 0.01
    train_fraction: float = 0.8
    seed: int = 0
    workers: int = 1
    perlin_scale: tuple = DEFAULT_SCALE_RANGE
    contracting_only: bool = False

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"Unknown env kind {self.kind!r}; expected one of {ENV_KINDS}")
        if self.excitation not in EXCITATIONS:
            raise ValueError(f"Unknown excitation {self.excitation!r}; expected one of {EXCITATIONS}")
        if self.count < 0 or self.steps < 1:
            raise ValueError("count must be >= 0 and steps >= 1")

    @property
    def n_train(self):
        return int(round(self.train_fraction * self.count))


def episode_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def features_for(kind, states):
    """The model-facing feature map of raw simulator states."""
    if kind == "pendulum":
        return pendulum.observe(states)
    return np.asarray(states, dtype=np.float64)


def time_grid(config):
    if config.kind == "pendulum":
        return pendulum.DT * np.arange(config.steps + 1)
    return spiral.default_time_grid(config.t_end, config.steps + 1)


def _excite(config, rng, length, bounds):
    excitation = config.excitation
    if excitation == "mixed":
        excitation = "perlin" if rng.random() < 0.5 else "uniform"
    if excitation == "perlin":
        return perlin_controls(length, rng, bounds, config.perlin_scale)
    return uniform_controls(length, rng, bounds)


def generate_episode(config, index):
    """Simulate episode `index`; returns the trajectory and a flat parameter vector."""
    rng = episode_rng(config.seed, index)
    t_grid = time_grid(config)
    if config.kind == "spiral":
        system = spiral.sample_spiral_system(rng, config.contracting_only)
        traj = spiral.simulate_spiral(system, spiral.sample_initial_state(rng), t_grid)
    elif config.kind == "drifting_spiral":
        system = spiral.sample_drifting_spiral(rng, config.contracting_only)
        traj = spiral.simulate_drifting_spiral(system, spiral.sample_initial_state(rng), t_grid)
    else:
        system = pendulum.sample_pendulum_params(rng, config.std_frac)
        bounds = (-system.max_torque, system.max_torque)
        controls = _excite(config, rng, config.steps, bounds)
        traj = pendulum.simulate_pendulum(system, pendulum.sample_initial_state(rng), controls)
    return traj, system.to_meta()


def _generate_job(job):
    return generate_episode(*job)


@dataclass
class DatasetContainer:
    """
    A generated dataset, in memory or loaded from disk.

    Array dtypes match what is persisted (float32 samples, int64 split) so a
    save/load round trip is bit-exact.

    Attributes:
        env: The env kind.
        times: (T,) sample times shared by all episodes.
        states: (E, T, n) raw states.
        features: (E, T, p) clean model features.
        observations: (E, T, p) features with Gaussian augmentation noise.
        controls: (E, T - 1, u) applied controls.
        system_meta: (E, k) flat parameters of each instance.
        split: (E,) `TRAIN` or `TEST`.
        normalizer: Feature normalizer fitted on the clean training split.
        control_normalizer: Control normalizer fitted on the training split.
        config: Echo of the generating `EnvConfig`.
    """
    env: str
    times: np.ndarray
    states: np.ndarray
    features: np.ndarray
    observations: np.ndarray
    controls: np.ndarray
    system_meta: np.ndarray
    split: np.ndarray
    normalizer: Normalizer = None
    control_normalizer: Normalizer = None
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.split)

    def indices(self, split=None):
        if split is None:
            return np.arange(len(self))
        return np.flatnonzero(self.split == split)

    def trajectory(self, index):
        return Trajectory(
            times=self.times.astype(np.float64),
            states=self.states[index].astype(np.float64),
            controls=self.controls[index].astype(np.float64),
            system_meta={"params": self.system_meta[index].tolist()},
        )

    def meta(self):
        return {
            "kind": DATASET_KIND,
            "env": self.env,
            "counts": {
                "episodes": len(self),
                "train": int(np.sum(self.split == TRAIN)),
                "test": int(np.sum(self.split == TEST)),
                "samples": int(len(self.times)),
            },
            "seed": self.config.get("seed"),
            "normalizer": None if self.normalizer is None else self.normalizer.to_dict(),
            "control_normalizer": (
                None if self.control_normalizer is None else self.control_normalizer.to_dict()
            ),
            "config": self.config,
        }

    def save(self, directory):
        return container.save_container(directory, self.meta(), {
            "times": self.times,
            "states": self.states,
            "features": self.features,
            "observations": self.observations,
            "controls": self.controls,
            "system_meta": self.system_meta,
            "split": self.split,
        })

    @classmethod
    def load(cls, directory):
        meta, arrays = container.load_container(directory)
        if meta.get("kind") != DATASET_KIND:
            raise ContainerFormatError(f"{directory} holds a {meta.get('kind')!r}, not a dataset")
        return cls(
            env=meta["env"],
            normalizer=Normalizer.from_dict(meta["normalizer"]) if meta["normalizer"] else None,
            control_normalizer=(
                Normalizer.from_dict(meta["control_normalizer"]) if meta["control_normalizer"] else None
            ),
            config=meta["config"],
            **arrays,
        )


def _echo(config):
    echo = asdict(config)
    echo["perlin_scale"] = list(config.perlin_scale)
    return echo


def generate_dataset(config):
    """
    Simulate `config.count` episodes and package them with their split,
    normalizers and augmentation noise.

    Returns:
        A `DatasetContainer`. The same config always yields identical arrays.
    """
    start = time.perf_counter()
    jobs = [(config, i) for i in range(config.count)]
    if config.workers > 1 and config.count > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            episodes = list(pool.map(_generate_job, jobs, chunksize=max(1, config.count // (4 * config.workers))))
    else:
        episodes = [_generate_job(job) for job in jobs]
    t_grid = time_grid(config)
    n_state = 2
    n_control = 1 if config.kind == "pendulum" else 0
    n_feature = pendulum.OBSERVATION_DIM if config.kind == "pendulum" else n_state
    n_meta = {"spiral": 4, "drifting_spiral": 8, "pendulum": 3}[config.kind]
    shape = (config.count, len(t_grid))
    states = np.zeros(shape + (n_state,))
    controls = np.zeros((config.count, len(t_grid) - 1, n_control))
    system_meta = np.zeros((config.count, n_meta))
    for i, (traj, params) in enumerate(episodes):
        states[i] = traj.states
        controls[i] = traj.controls
        system_meta[i] = params
    states = states.astype(np.float32)
    controls = controls.astype(np.float32)
    features = features_for(config.kind, states).reshape(shape + (n_feature,)).astype(np.float32)
    split = np.full(config.count, TEST, dtype=np.int64)
    split[:config.n_train] = TRAIN

    normalizer = control_normalizer = None
    observations = features.copy()
    if config.n_train > 0:
        normalizer = Normalizer.fit(features[split == TRAIN])
        control_normalizer = Normalizer.fit(controls[split == TRAIN])
        noise_rng = np.random.default_rng([config.seed, _NOISE_STREAM])
        sigma = config.noise_frac * normalizer.range
        observations = (features + noise_rng.normal(size=features.shape) * sigma).astype(np.float32)
    logger.info(
        f"generated {config.count} {config.kind} episodes x {config.steps} steps "
        f"in {time.perf_counter() - start:.1f}s"
    )
    return DatasetContainer(
        env=config.kind,
        times=t_grid.astype(np.float32),
        states=states,
        features=features,
        observations=observations,
        controls=controls,
        system_meta=system_meta.astype(np.float32),
        split=split,
        normalizer=normalizer,
        control_normalizer=control_normalizer,
        config=_echo(config),
    )
