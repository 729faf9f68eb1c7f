from dataclasses import dataclass
import hashlib
import json

import numpy as np

from dynamics.exceptions import DegenerateNormalizerError


@dataclass(frozen=True)
class Normalizer:
    """
    Per-feature min-max scaling fitted on the training split.

    `apply` maps the fitted range onto [0, 1]; `invert` undoes it.
    """
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.maximum <= self.minimum):
            bad = np.flatnonzero(self.maximum <= self.minimum).tolist()
            raise DegenerateNormalizerError(f"Features {bad} have max <= min")

    @classmethod
    def fit(cls, x):
        """Fit over every axis but the last (the feature axis)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] == 0:
            return cls(minimum=np.zeros(0), maximum=np.zeros(0))
        flat = x.reshape(-1, x.shape[-1])
        if len(flat) == 0:
            raise DegenerateNormalizerError("Cannot fit a normalizer on an empty split")
        return cls(minimum=flat.min(axis=0), maximum=flat.max(axis=0))

    @property
    def range(self):
        return self.maximum - self.minimum

    def apply(self, x):
        return (x - self.minimum) / self.range

    def invert(self, x):
        return x * self.range + self.minimum

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            minimum=np.asarray(d["min"], dtype=np.float64),
            maximum=np.asarray(d["max"], dtype=np.float64),
        )

    def fingerprint(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
