"""
Numeric core - dense float64 kernels and seeded random streams

Matrices and vectors are plain numpy arrays (2-D and 1-D, float64).
Random draws come from numpy's PCG64 bit generator, which produces the
same sequence for the same seed on every platform.
"""

import hashlib
from typing import Any

import numpy as np
from scipy.special import expit

from domain_models import ParameterError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray

UINT64_LIMIT = 2 ** 64


def matvec(m: Matrix, v: np.ndarray) -> np.ndarray:
    """
    Matrix-vector product.

    v may be a single vector of length m.cols or a batch of row vectors
    of shape (B, m.cols); the result is then (B, m.rows).
    """
    if m.ndim != 2 or v.ndim not in (1, 2) or v.shape[-1] != m.shape[1]:
        raise ShapeError(f"Cannot multiply matrix {m.shape} by vector {v.shape}")
    if v.ndim == 1:
        return m @ v
    return v @ m.T


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, saturating without overflow"""
    return expit(v)


def tanh_v(v: np.ndarray) -> np.ndarray:
    return np.tanh(v)


def derive_seed(master: int, *keys: Any) -> int:
    """
    Derive an independent 64-bit seed from a master seed and labels.

    The seed is the first 8 bytes (big-endian) of SHA-256 over the
    '|'-joined string forms of master and keys.
    """
    text = "|".join(str(k) for k in (master,) + keys)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


class Rng:
    """Single-owner PCG64 random stream"""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < UINT64_LIMIT:
            raise ParameterError(f"Seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, n: int) -> Vector:
        return self._generator.uniform(lo, hi, n)


def rng_uniform(rng: Rng, lo: float, hi: float, n: int) -> Vector:
    """n draws in [lo, hi)"""
    if not lo < hi:
        raise ParameterError(f"Uniform range needs lo < hi, got [{lo}, {hi})")
    if n < 0:
        raise ParameterError(f"Draw count cannot be negative: {n}")
    return rng.uniform(lo, hi, n)
