"""Dense numeric kernels and deterministic randomness.

All tensors in this package are row-major float64 numpy arrays. Randomness
comes from numpy's PCG64 generator, which produces identical streams for
identical seeds on every platform; independent sub-streams are derived
through SeedSequence spawning so parallel consumers never share state.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator, the single RNG family used by this repo."""
    return np.random.Generator(np.random.PCG64(seed))


def seeded_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Derive `n` independent deterministic child generators from one seed."""
    root = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(n)]


def as_vector(x, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {v.shape}")
    return v


def as_matrix(x, name: str = "W") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matvec(w, x) -> np.ndarray:
    """Matrix-vector product in float64.

    Backed by numpy's dot; summation order is fixed for a given build, so
    repeated calls are bit-for-bit reproducible.
    """
    w = as_matrix(w)
    x = as_vector(x)
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"matvec: {w.shape} @ {x.shape}")
    return w @ x


def stable_softmax(z) -> np.ndarray:
    """Softmax with max-subtraction; safe for arbitrarily large inputs."""
    z = as_vector(z, "z")
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def log_softmax_at(z: np.ndarray, index: int) -> float:
    """log(softmax(z)[index]) in fused log-sum-exp form.

    Never takes the log of a stored probability, so it stays finite even
    when the distribution saturates.
    """
    z = as_vector(z, "z")
    m = z.max()
    return float(z[index] - m - np.log(np.exp(z - m).sum()))


def glorot_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, shape
) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be positive, got {fan_in}, {fan_out}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
