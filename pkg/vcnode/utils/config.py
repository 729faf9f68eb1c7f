"""
Experiment configuration.

A config is a nested JSON document with the sections `env`, `model`,
`training`, `mpc` and `io`. Values resolve in this order, later winning:

1. the profile defaults (`desk` or `paper`),
2. the profile's overlay for the selected `env.kind`,
3. the config file,
4. `--seed`, which sets `env.seed`, `training.seed` and `mpc.seed`.

The schema is documented in docs/docs/configuration/experiment-config.md.
"""
from dataclasses import dataclass
import json
import logging
from pathlib import Path

from django.conf import settings
from frozendict import frozendict

from dynamics.envsim import pendulum
from dynamics.envsim.datasets import EnvConfig
from dynamics.latentdyn.model import ModelSpec, TIME_INVARIANT_KINDS
from dynamics.latentdyn.training import TrainingConfig
from dynamics.mpc.controller import ControllerConfig
from dynamics.mpc.lifting import QpWeights
from dynamics.mpc.qp import QpSettings
from dynamics.odesolve import SolverConfig
from dynamics.vrnn.model import KIND as TIME_VARIANT_KIND, VrnnSpec
from vcnode.errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ("env", "model", "training", "mpc", "io")
MODEL_KINDS = TIME_INVARIANT_KINDS + (TIME_VARIANT_KIND,)
CONTROLLERS = ("learned", "oracle")
SEEDED_SECTIONS = ("env", "training", "mpc")

DESK = frozendict({
    "env": frozendict({
        "kind": "pendulum",
        "count": 5000,
        "steps": 200,
        "t_end": 35.0,
        "excitation": "perlin",
        "std_frac": 0.3,
        "noise_frac": 0.01,
        "train_fraction": 0.8,
        "seed": 0,
        "workers": 1,
        "perlin_scale": (8.0, 64.0),
        "contracting_only": False,
    }),
    "model": frozendict({
        "kind": "vcnodeti",
        "latent_dim": 8,
        "mode": "full",
        "sigma_obs": 0.05,
        "dynamics_net": False,
        "hidden": (128, 128, 128, 128),
        "rnn_state": 32,
        "rnn_layers": 2,
        "hidden_state": 64,
        "codec_checkpoint": None,
        "solver": "euler",
        "rtol": 1e-6,
        "atol": 1e-8,
        "max_steps": 100_000,
    }),
    "training": frozendict({
        "epochs": 30,
        "batch_size": 64,
        "lr": 1e-3,
        "seed": 0,
        "precision": None,
        "teacher_forcing_fraction": 0.5,
        "kl_warmup_fraction": 0.1,
        "validation_fraction": 0.1,
        "random_offset": True,
        "window": 61,
        "stride": 30,
        "split_index": 30,
    }),
    "mpc": frozendict({
        "controller": "learned",
        "episodes": 100,
        "episode_length": 200,
        "horizon": 24,
        "q": 1.0,
        "r": 0.001,
        "terminal_factor": 10.0,
        "discretization": "exact",
        "latent_bounds": False,
        "warmup": 30,
        "max_failed_solves": 10,
        "linearizations": 2,
        "max_iter": 4000,
        "eps": 1e-6,
        "workers": 1,
        "seed": 1,
        "compare_oracle": True,
    }),
    "io": frozendict({
        "data_dir": "data",
        "checkpoint_dir": "checkpoints",
        "report_dir": "reports",
        "normalizer_fingerprint": None,
    }),
})

PAPER = frozendict({
    **DESK,
    "env": frozendict({**DESK["env"], "count": 100_000, "steps": 500}),
    "training": frozendict({**DESK["training"], "epochs": 100}),
    "mpc": frozendict({**DESK["mpc"], "episodes": 10_000, "episode_length": 500}),
})

PROFILES = frozendict({"desk": DESK, "paper": PAPER})

# Per-env overlays applied on top of a profile.
KIND_OVERLAYS = frozendict({
    "desk": frozendict({
        "spiral": frozendict({"env": frozendict({"count": 2000, "steps": 399}), "model": frozendict({"latent_dim": 4})}),
        "drifting_spiral": frozendict({"env": frozendict({"count": 2000, "steps": 399}), "model": frozendict({"latent_dim": 4})}),
    }),
    "paper": frozendict({
        "spiral": frozendict({"env": frozendict({"count": 12_000, "steps": 399}), "model": frozendict({"latent_dim": 4})}),
        "drifting_spiral": frozendict({"env": frozendict({"count": 12_000, "steps": 399}), "model": frozendict({"latent_dim": 4})}),
    }),
})


def _thaw(value):
    if isinstance(value, (dict, frozendict)):
        return {k: _thaw(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def _merge(base, overrides, origin):
    merged = {section: dict(values) for section, values in base.items()}
    for section, values in overrides.items():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section {section!r}; expected one of {SECTIONS}")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in merged[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            default = merged[section][key]
            if default is not None and value is not None and not _compatible(default, value):
                raise ConfigError(
                    f"{origin}: {section}.{key} must be {type(default).__name__}, got {type(value).__name__}"
                )
            merged[section][key] = value
    return merged


def _compatible(default, value):
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float))
    if isinstance(default, (list, tuple)):
        return isinstance(value, (list, tuple, int, float))
    return isinstance(value, type(default))


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str
    env: dict
    model: dict
    training: dict
    mpc: dict
    io: dict

    @classmethod
    def resolve(cls, data=None, profile="desk", seed=None, origin="config"):
        """
        Build a config from a profile and an optional override document.

        Raises:
            ConfigError: unknown profile, section or key, or a value of the
                wrong type.
        """
        if profile not in PROFILES:
            raise ConfigError(f"Unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{origin}: the document must be an object")
        resolved = _thaw(PROFILES[profile])
        env = data.get("env")
        kind = env.get("kind", resolved["env"]["kind"]) if isinstance(env, dict) else resolved["env"]["kind"]
        overlay = KIND_OVERLAYS[profile].get(kind)
        if overlay is not None:
            resolved = _merge(resolved, _thaw(overlay), f"profile {profile}")
        resolved = _merge(resolved, data, origin)
        if seed is not None:
            for section in SEEDED_SECTIONS:
                resolved[section]["seed"] = seed
        if resolved["training"]["precision"] is None:
            resolved["training"]["precision"] = settings.VCNODE_PRECISION
        config = cls(profile=profile, **resolved)
        config.validate()
        return config

    @classmethod
    def load(cls, path=None, profile="desk", seed=None):
        data = None
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON ({e})") from e
        return cls.resolve(data, profile, seed, origin=str(path) if path else "config")

    def validate(self):
        """Construct every typed view once so bad values surface as `ConfigError`."""
        if self.model["kind"] not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {self.model['kind']!r}")
        if self.mpc["controller"] not in CONTROLLERS:
            raise ConfigError(f"mpc.controller must be one of {CONTROLLERS}, got {self.mpc['controller']!r}")
        try:
            self.env_config()
            self.training_config()
            self.solver_config()
            self.controller_config()
            self.model_spec(state_dim=1, control_dim=0)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self):
        return {
            "profile": self.profile,
            **{section: _thaw(getattr(self, section)) for section in SECTIONS},
        }

    def env_config(self):
        env = dict(self.env)
        env["perlin_scale"] = tuple(env["perlin_scale"])
        return EnvConfig(**env)

    def training_config(self):
        return TrainingConfig(**self.training)

    def solver_config(self, kind=None):
        return SolverConfig(
            kind=kind or self.model["solver"],
            rtol=self.model["rtol"],
            atol=self.model["atol"],
            max_steps=self.model["max_steps"],
        )

    def model_spec(self, state_dim, control_dim):
        m = self.model
        common = dict(
            state_dim=state_dim,
            control_dim=control_dim,
            latent_dim=m["latent_dim"],
            mode=m["mode"],
            sigma_obs=m["sigma_obs"],
            hidden=tuple(m["hidden"]),
            precision=self.training["precision"],
        )
        if m["kind"] == TIME_VARIANT_KIND:
            return VrnnSpec(hidden_state=m["hidden_state"], **common)
        return ModelSpec(
            kind=m["kind"], dynamics_net=m["dynamics_net"], rnn_state=m["rnn_state"],
            rnn_layers=m["rnn_layers"], **common,
        )

    def controller_config(self, oracle=False):
        p = self.mpc
        weights = QpWeights(q=p["q"], r=p["r"], terminal_factor=p["terminal_factor"])
        if oracle:
            weights = QpWeights(
                q=(pendulum.THETA_COST, pendulum.OMEGA_COST), r=pendulum.TORQUE_COST,
                terminal_factor=p["terminal_factor"],
            )
        return ControllerConfig(
            horizon=p["horizon"],
            weights=weights,
            discretization=p["discretization"],
            solver=QpSettings(eps_abs=p["eps"], eps_rel=p["eps"], max_iter=p["max_iter"]),
            warmup=p["warmup"],
            context=self.training["split_index"],
            max_failed_solves=p["max_failed_solves"],
            linearizations=p["linearizations"],
        )

    def path(self, key, root):
        return Path(root) / self.io[key]
