from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """
    One simulated system instance.

    Attributes:
        times: (T,) increasing sample times.
        states: (T, n) raw simulator states.
        controls: (T - 1, u) control held over each sample interval.
        system_meta: Parameters of the generating instance.
    """
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    system_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError(f"{len(self.times)} times for {len(self.states)} states")
        if len(self.controls) != len(self.states) - 1:
            raise ValueError(f"{len(self.controls)} controls for {len(self.states)} states")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("Trajectory times must be strictly increasing")

    @property
    def length(self):
        return len(self.times)
