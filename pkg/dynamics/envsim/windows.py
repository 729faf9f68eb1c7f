"""
Sliding windows over trajectories for few-shot training and evaluation.

A window holds 61 samples. Samples 0..30 (30 transitions) are the context
used to infer the dynamics; samples 30..60 (30 transitions) are the target.
Sample 30 is the boundary shared by both halves.
"""
from dataclasses import dataclass

import numpy as np

WINDOW = 61
STRIDE = 30
SPLIT_INDEX = 30


def window_count(length, window=WINDOW, stride=STRIDE):
    if length < window:
        return 0
    return (length - window) // stride + 1


@dataclass(frozen=True)
class Window:
    states: np.ndarray
    controls: np.ndarray
    times: np.ndarray
    split_index: int = SPLIT_INDEX
    offset: int = SPLIT_INDEX

    @property
    def context_states(self):
        return self.states[:self.split_index + 1]

    @property
    def context_controls(self):
        return self.controls[:self.split_index]

    @property
    def target_states(self):
        return self.states[self.split_index:]

    @property
    def target_controls(self):
        return self.controls[self.split_index:]


@dataclass(frozen=True)
class WindowSet:
    """
    A stack of windows stored as arrays.

    Attributes:
        states: (N, W, p) window samples.
        clean_states: (N, W, p) noise-free samples (prediction targets).
        controls: (N, W - 1, u) controls.
        times: (W,) sample times relative to the window start.
        episode: (N,) source episode index.
        start: (N,) first sample index inside the episode.
        offset: (N,) sample where the latent rollout starts; the split index
            unless random offsets were requested.
        split_index: Boundary between context and target.
    """
    states: np.ndarray
    clean_states: np.ndarray
    controls: np.ndarray
    times: np.ndarray
    episode: np.ndarray
    start: np.ndarray
    offset: np.ndarray
    split_index: int = SPLIT_INDEX

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return Window(
            states=self.states[i],
            controls=self.controls[i],
            times=self.times,
            split_index=self.split_index,
            offset=int(self.offset[i]),
        )


def _normalized(normalizer, x):
    if normalizer is None:
        return np.asarray(x, dtype=np.float64)
    return normalizer.apply(np.asarray(x, dtype=np.float64))


def window_dataset(
    dataset,
    window=WINDOW,
    stride=STRIDE,
    split_index=SPLIT_INDEX,
    split=None,
    normalize=True,
    noisy_inputs=True,
    rng=None,
):
    """
    Cut every selected episode into sliding windows.

    Args:
        dataset: A `DatasetContainer`.
        window: Samples per window.
        stride: Samples between consecutive window starts.
        split_index: Context/target boundary inside the window.
        split: `TRAIN`, `TEST` or None for all episodes.
        normalize: Apply the dataset normalizers to features and controls.
        noisy_inputs: Take window samples from the noise-augmented
            observations instead of the clean features.
        rng: When given, each window's rollout offset is drawn uniformly
            from [0, split_index]; otherwise it is `split_index`.

    Returns:
        A `WindowSet` with floor((T - window) / stride) + 1 windows per episode.
    """
    episodes = dataset.indices(split)
    length = len(dataset.times)
    per_episode = window_count(length, window, stride)
    starts = stride * np.arange(per_episode)
    n = len(episodes) * per_episode
    source = dataset.observations if noisy_inputs else dataset.features
    feats = _normalized(dataset.normalizer if normalize else None, source[episodes])
    clean = _normalized(dataset.normalizer if normalize else None, dataset.features[episodes])
    ctrls = _normalized(dataset.control_normalizer if normalize else None, dataset.controls[episodes])

    idx = starts[:, None] + np.arange(window)[None, :]
    states = feats[:, idx].reshape(n, window, feats.shape[-1])
    clean_states = clean[:, idx].reshape(n, window, clean.shape[-1])
    controls = ctrls[:, idx[:, :-1]].reshape(n, window - 1, ctrls.shape[-1])
    times = np.asarray(dataset.times[:window], dtype=np.float64) - float(dataset.times[0])
    if rng is None:
        offset = np.full(n, split_index, dtype=np.int64)
    else:
        offset = rng.integers(0, split_index + 1, size=n)
    return WindowSet(
        states=states,
        clean_states=clean_states,
        controls=controls,
        times=times,
        episode=np.repeat(episodes, per_episode),
        start=np.tile(starts, len(episodes)),
        offset=offset,
        split_index=split_index,
    )
