"""
Excitation signals for exploring the state space during data generation.

`perlin_controls` produces smooth 1-D gradient noise with a wavelength drawn
per episode; `uniform_controls` produces i.i.d. uniform draws. Both respect
the control bounds exactly.
"""
import numpy as np

DEFAULT_SCALE_RANGE = (8.0, 64.0)


def _fade(f):
    return f * f * f * (f * (f * 6.0 - 15.0) + 10.0)


def gradient_noise(positions, gradients):
    """
    Classic 1-D gradient noise.

    Args:
        positions: (T,) non-negative lattice coordinates.
        gradients: (L, ...) gradient per lattice point; trailing dimensions
            give independent channels. L must exceed floor(max(positions)) + 1.

    Returns:
        (T, ...) noise, zero at integer positions.
    """
    positions = np.asarray(positions, dtype=np.float64)
    cell = np.floor(positions).astype(np.int64)
    f = positions - cell
    extra = (slice(None),) + (None,) * (np.ndim(gradients) - 1)
    left = gradients[cell] * f[extra]
    right = gradients[cell + 1] * (f - 1.0)[extra]
    return left + _fade(f)[extra] * (right - left)


def _bounds(bounds):
    low, high = (np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in bounds)
    return low, high


def _rescale(unit, low, high):
    """Map a signal in [-1, 1] onto [low, high] per channel."""
    return 0.5 * (low + high) + 0.5 * (high - low) * unit


def perlin_controls(length, rng, bounds, scale_range=DEFAULT_SCALE_RANGE):
    """
    Smooth random controls.

    The wavelength (in steps) is drawn uniformly from `scale_range` once per
    call; the noise is then peak-normalized per channel and mapped onto the
    bounds.

    Args:
        length: Number of control steps.
        rng: numpy Generator.
        bounds: (low, high), scalars or per-channel arrays.
        scale_range: (min, max) wavelength in steps.

    Returns:
        (length, u) controls.
    """
    low, high = _bounds(bounds)
    scale = rng.uniform(*scale_range)
    phase = rng.uniform(0.0, 1.0)
    positions = phase + np.arange(length) / scale
    n_lattice = int(np.floor(positions[-1])) + 2 if length else 1
    gradients = rng.uniform(-1.0, 1.0, size=(n_lattice, len(low)))
    noise = gradient_noise(positions, gradients)
    peak = np.max(np.abs(noise), axis=0) if length else np.zeros(len(low))
    unit = np.divide(noise, peak, out=np.zeros_like(noise), where=peak > 0)
    return np.clip(_rescale(unit, low, high), low, high)


def uniform_controls(length, rng, bounds):
    low, high = _bounds(bounds)
    return rng.uniform(low, high, size=(length, len(low)))
