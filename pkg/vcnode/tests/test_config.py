import json

import pytest
from django.conf import settings

from dynamics.latentdyn.model import ModelSpec
from dynamics.vrnn.model import VrnnSpec
from vcnode.errors import ConfigError
from vcnode.utils.config import DESK, SECTIONS, ExperimentConfig


def test_desk_defaults():
    config = ExperimentConfig.resolve()
    assert config.profile == "desk"
    assert config.env["count"] == DESK["env"]["count"]
    assert config.training["precision"] == settings.VCNODE_PRECISION
    assert config.env_config().perlin_scale == (8.0, 64.0)
    assert config.training_config().split_index == 30


def test_paper_profile():
    config = ExperimentConfig.resolve(profile="paper")
    assert config.env["count"] == 100_000
    assert config.env["steps"] == 500
    assert config.training["epochs"] == 100
    assert config.mpc["episodes"] == 10_000


@pytest.mark.parametrize("profile,count", [("desk", 2000), ("paper", 12_000)])
def test_spiral_overlay(profile, count):
    config = ExperimentConfig.resolve({"env": {"kind": "spiral"}}, profile=profile)
    assert config.env["count"] == count
    assert config.env["steps"] == 399
    assert config.model["latent_dim"] == 4


def test_file_values_win_over_overlay():
    config = ExperimentConfig.resolve({"env": {"kind": "spiral", "count": 10}, "model": {"latent_dim": 6}})
    assert config.env["count"] == 10
    assert config.model["latent_dim"] == 6


def test_seed_sets_every_seeded_section():
    config = ExperimentConfig.resolve({"env": {"seed": 4}, "mpc": {"seed": 5}}, seed=11)
    assert config.env["seed"] == 11
    assert config.training["seed"] == 11
    assert config.mpc["seed"] == 11
    assert ExperimentConfig.resolve({"mpc": {"seed": 5}}).mpc["seed"] == 5


@pytest.mark.parametrize("data", [
    {"optimizer": {"lr": 0.1}},
    {"training": {"momentum": 0.9}},
    {"training": {"epochs": "ten"}},
    {"model": {"dynamics_net": 1}},
    {"training": {"epochs": -1}},
    {"model": {"kind": "transformer"}},
    {"mpc": {"controller": "random"}},
    {"env": {"kind": "double_pendulum"}},
    {"env": []},
])
def test_invalid_documents(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(data)


def test_unknown_profile():
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(profile="cluster")


def test_load_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"epochs": 2, "precision": "float64"}}))
    config = ExperimentConfig.load(path)
    assert config.training["epochs"] == 2
    assert config.training_config().precision == "float64"


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{epochs: 2")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_model_spec_by_kind():
    spec = ExperimentConfig.resolve({"model": {"kind": "cnode_vae"}}).model_spec(3, 1)
    assert isinstance(spec, ModelSpec)
    assert spec.kind == "cnode_vae"
    assert spec.hidden == (128, 128, 128, 128)
    spec = ExperimentConfig.resolve({"model": {"kind": "vcnodet"}}).model_spec(3, 1)
    assert isinstance(spec, VrnnSpec)
    assert spec.hidden_state == 64


def test_controller_config():
    config = ExperimentConfig.resolve({"mpc": {"horizon": 12, "q": 2.0}})
    learned = config.controller_config()
    assert learned.horizon == 12
    assert learned.weights.q == 2.0
    assert learned.context == config.training["split_index"]
    oracle = config.controller_config(oracle=True)
    assert oracle.weights.q == (1.0, 0.1)
    assert oracle.weights.r == 0.001


def test_to_dict_round_trips_through_json():
    config = ExperimentConfig.resolve({"env": {"kind": "spiral"}}, seed=3)
    data = json.loads(json.dumps(config.to_dict()))
    assert set(data) == {"profile", *SECTIONS}
    again = ExperimentConfig.resolve({k: v for k, v in data.items() if k != "profile"}, profile=data["profile"])
    assert again == config


def test_paths_resolve_under_root(tmp_path):
    config = ExperimentConfig.resolve({"io": {"data_dir": "pendulum-data"}})
    assert config.path("data_dir", tmp_path) == tmp_path / "pendulum-data"


def test_contracting_only_reaches_env_config():
    assert ExperimentConfig.resolve({"env": {"kind": "spiral"}}).env_config().contracting_only is False
    config = ExperimentConfig.resolve({"env": {"kind": "spiral", "contracting_only": True}})
    assert config.env_config().contracting_only is True
