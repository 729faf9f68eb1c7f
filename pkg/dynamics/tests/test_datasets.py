import numpy as np
import pytest

from dynamics.envsim import pendulum
from dynamics.envsim.datasets import (
    TEST, TRAIN, DatasetContainer, EnvConfig, generate_dataset, generate_episode,
)
from dynamics.envsim.windows import SPLIT_INDEX, WINDOW, window_count, window_dataset
from dynamics.exceptions import ContainerFormatError

ARRAYS = ("times", "states", "features", "observations", "controls", "system_meta", "split")


def test_env_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(kind="cartpole")
    with pytest.raises(ValueError):
        EnvConfig(excitation="sine")
    assert EnvConfig(count=10, train_fraction=0.8).n_train == 8


def test_pendulum_dataset_layout(SES_tiny_pendulum_dataset):
    dataset = SES_tiny_pendulum_dataset
    assert dataset.states.shape == (6, 91, 2)
    assert dataset.features.shape == (6, 91, pendulum.OBSERVATION_DIM)
    assert dataset.controls.shape == (6, 90, 1)
    assert dataset.system_meta.shape == (6, 3)
    assert list(dataset.split) == [TRAIN] * 5 + [TEST]
    assert dataset.states.dtype == np.float32
    np.testing.assert_allclose(dataset.times[1] - dataset.times[0], pendulum.DT, rtol=1e-6)


def test_spiral_dataset_has_no_controls(SES_tiny_spiral_dataset):
    dataset = SES_tiny_spiral_dataset
    assert dataset.controls.shape == (6, 90, 0)
    assert dataset.control_normalizer.minimum.shape == (0,)
    np.testing.assert_array_equal(dataset.features, dataset.states)


@pytest.mark.parametrize("kind,blocks", [("spiral", 1), ("drifting_spiral", 2)])
def test_contracting_only_episodes(kind, blocks):
    config = EnvConfig(kind=kind, count=10, steps=20, seed=5, contracting_only=True)
    for index in range(config.count):
        _, meta = generate_episode(config, index)
        for w in meta.reshape(blocks, 2, 2):
            assert np.all(np.linalg.eigvals(w).real < 0)


def test_normalizer_is_fitted_on_clean_train_features(SES_tiny_pendulum_dataset):
    dataset = SES_tiny_pendulum_dataset
    scaled = dataset.normalizer.apply(dataset.features[dataset.indices(TRAIN)].astype(np.float64))
    assert scaled.min() == pytest.approx(0.0, abs=1e-6)
    assert scaled.max() == pytest.approx(1.0, abs=1e-6)


def test_observation_noise(SES_tiny_pendulum_dataset):
    dataset = SES_tiny_pendulum_dataset
    noise = dataset.observations - dataset.features
    assert np.any(noise != 0)
    expected = 0.01 * dataset.normalizer.range
    np.testing.assert_allclose(noise.reshape(-1, 3).std(axis=0), expected, rtol=0.25)


def test_generation_is_deterministic():
    config = EnvConfig(kind="pendulum", count=3, steps=20, seed=11)
    first, second = generate_dataset(config), generate_dataset(config)
    for name in ARRAYS:
        np.testing.assert_array_equal(getattr(first, name), getattr(second, name))


def test_parallel_generation_matches_serial():
    serial = generate_dataset(EnvConfig(kind="drifting_spiral", count=4, steps=20, seed=2))
    parallel = generate_dataset(EnvConfig(kind="drifting_spiral", count=4, steps=20, seed=2, workers=2))
    for name in ARRAYS:
        np.testing.assert_array_equal(getattr(serial, name), getattr(parallel, name))


def test_episode_streams_are_independent_of_count():
    small = EnvConfig(kind="pendulum", count=2, steps=10, seed=4)
    large = EnvConfig(kind="pendulum", count=5, steps=10, seed=4)
    np.testing.assert_array_equal(generate_episode(small, 1)[0].states, generate_episode(large, 1)[0].states)


def test_mixed_excitation():
    dataset = generate_dataset(EnvConfig(kind="pendulum", count=4, steps=30, excitation="mixed", seed=3))
    assert np.all(np.abs(dataset.controls) <= pendulum.MAX_TORQUE + 1e-6)


def test_save_load_is_bit_identical(tmp_path, SES_tiny_pendulum_dataset):
    dataset = SES_tiny_pendulum_dataset
    dataset.save(tmp_path / "data")
    loaded = DatasetContainer.load(tmp_path / "data")
    for name in ARRAYS:
        original, restored = getattr(dataset, name), getattr(loaded, name)
        assert original.dtype == restored.dtype
        assert original.tobytes() == restored.tobytes()
    assert loaded.normalizer.fingerprint() == dataset.normalizer.fingerprint()
    assert loaded.config == dataset.config


def test_load_rejects_other_containers(tmp_path):
    from dynamics import container
    container.save_container(tmp_path, {"kind": "episode"}, {})
    with pytest.raises(ContainerFormatError):
        DatasetContainer.load(tmp_path)


@pytest.mark.parametrize(
    "length,expected", [
        (60, 0),
        (61, 1),
        (90, 1),
        (91, 2),
        (400, 12),
    ]
)
def test_window_count(length, expected):
    assert window_count(length) == expected


def test_window_dataset(SES_tiny_pendulum_dataset):
    dataset = SES_tiny_pendulum_dataset
    windows = window_dataset(dataset, split=TRAIN)
    assert len(windows) == 5 * 2
    assert windows.states.shape == (10, WINDOW, 3)
    assert windows.controls.shape == (10, WINDOW - 1, 1)
    assert windows.times[0] == 0.0
    assert list(windows.start[:2]) == [0, 30]
    assert np.all(windows.offset == SPLIT_INDEX)
    first = windows[1]
    np.testing.assert_allclose(
        first.states[0], dataset.normalizer.apply(dataset.observations[0, 30].astype(np.float64)),
    )
    assert first.context_states.shape[0] == SPLIT_INDEX + 1
    assert first.target_states.shape[0] == WINDOW - SPLIT_INDEX
    assert first.context_controls.shape == (SPLIT_INDEX, 1)
    assert first.target_controls.shape == (WINDOW - 1 - SPLIT_INDEX, 1)


def test_window_dataset_random_offsets(SES_tiny_pendulum_dataset, rng):
    windows = window_dataset(SES_tiny_pendulum_dataset, rng=rng, noisy_inputs=False)
    assert np.all((windows.offset >= 0) & (windows.offset <= SPLIT_INDEX))
    np.testing.assert_array_equal(windows.states, windows.clean_states)
