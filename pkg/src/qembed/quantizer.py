"""Uniform mid-rise scalar quantization, dithers, and code-domain pre-metrics.

The quantizer maps a real value to the centre of its cell: cell index
``k = floor(v / delta)`` and reconstruction value ``delta * (k + 1/2)``.
Distances between quantized scalars reduce to counting the cell
thresholds ``k * delta`` separating the two inputs; ``soft_distance``
generalizes that count with a guard band of half-width ``|t|`` around
every threshold (t > 0 suppresses near-threshold counts, t < 0 admits
them), which restores a form of continuity that the plain count lacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantConfig",
    "SoftParam",
    "quantize",
    "cell_indices",
    "sample_dither",
    "soft_distance",
    "soft_distance_array",
    "premetric",
    "soft_premetric_l1",
    "soft_premetric_l2",
    "premetric_circ",
]


@dataclass(frozen=True)
class QuantConfig:
    """Quantizer resolution.  Cell k covers [k*delta, (k+1)*delta)."""

    delta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")


@dataclass(frozen=True)
class SoftParam:
    """Guard-band half-width for the softened threshold count.

    t > 0 forbids counting thresholds whose guard band contains either
    input; t < 0 also counts thresholds whose (relaxed) band is merely
    grazed.  t = 0 reproduces the plain quantized distance.
    """

    t: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.t):
            raise ValueError(f"t must be finite, got {self.t}")


def quantize(value: float, cfg: QuantConfig) -> tuple[int, float]:
    """Quantize a scalar; returns (cell index, cell-centre value).

    The reconstruction value differs from the input by at most delta/2.
    """
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"quantize requires a finite input, got {value}")
    k = math.floor(v / cfg.delta)
    return k, cfg.delta * (k + 0.5)


def cell_indices(values: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Vectorized cell indices floor(v/delta) as int64."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cell_indices requires finite inputs")
    return np.floor(v / cfg.delta).astype(np.int64)


def sample_dither(m: int, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """m i.i.d. uniform draws on [0, delta), deterministic given the stream."""
    if m < 1:
        raise ValueError(f"dither length must be >= 1, got {m}")
    return rng.uniform(0.0, cfg.delta, size=int(m))


def _threshold_count(a: np.ndarray, a_prime: np.ndarray, t: float, delta: float) -> np.ndarray:
    """Count thresholds k*delta with a guard band of half-width |t|.

    Counts k such that (a - k*delta, a' - k*delta) falls in
    {u < -t, u' > t} or {u > t, u' < -t}.  The enumeration window is
    padded by ceil(|t|/delta) + 1 cells on each side, which covers every
    k that can satisfy the condition.
    """
    a, a_prime = np.broadcast_arrays(np.asarray(a, float), np.asarray(a_prime, float))
    pad = math.ceil(abs(t) / delta) + 1
    lo = np.floor(np.minimum(a, a_prime) / delta).astype(np.int64) - pad
    hi = np.ceil(np.maximum(a, a_prime) / delta).astype(np.int64) + pad
    width = int((hi - lo).max()) + 1
    ks = lo[..., None] + np.arange(width, dtype=np.int64)
    valid = ks <= hi[..., None]
    u = a[..., None] - ks * delta
    u_p = a_prime[..., None] - ks * delta
    hit = ((u < -t) & (u_p > t)) | ((u > t) & (u_p < -t))
    return np.count_nonzero(hit & valid, axis=-1)


def _d0(a: np.ndarray, a_prime: np.ndarray, delta: float) -> np.ndarray:
    """Plain quantized distance |Q(a) - Q(a')| as delta * |cell gap|.

    Equivalent to counting thresholds in the half-open interval
    (min, max], so it agrees with the quantizer on lattice boundaries.
    """
    ka = np.floor(np.asarray(a, float) / delta)
    kb = np.floor(np.asarray(a_prime, float) / delta)
    return delta * np.abs(ka - kb)


def soft_distance(
    a: float,
    a_prime: float,
    soft: SoftParam,
    cfg: QuantConfig,
    strict: bool = False,
) -> float:
    """delta times the guarded threshold count between a and a'.

    At t = 0 the default convention ties the count to the quantizer
    (half-open intervals), so ``soft_distance(a, a', t=0) ==
    |Q(a) - Q(a')|`` for every input including lattice boundaries.
    ``strict=True`` instead applies the open-interval guard-band rule
    verbatim at t = 0; the two differ only when an input sits exactly on
    a threshold.
    """
    if not (math.isfinite(a) and math.isfinite(a_prime)):
        raise ValueError("soft_distance requires finite inputs")
    t = soft.t
    if t == 0.0 and not strict:
        return float(_d0(a, a_prime, cfg.delta))
    count = _threshold_count(np.float64(a), np.float64(a_prime), t, cfg.delta)
    return float(cfg.delta * count)


def soft_distance_array(
    a: np.ndarray,
    a_prime: np.ndarray,
    soft: SoftParam,
    cfg: QuantConfig,
    strict: bool = False,
) -> np.ndarray:
    """Componentwise soft_distance over equal-shape arrays."""
    a = np.asarray(a, float)
    a_prime = np.asarray(a_prime, float)
    if a.shape != a_prime.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {a_prime.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(a_prime))):
        raise ValueError("soft_distance requires finite inputs")
    if soft.t == 0.0 and not strict:
        return _d0(a, a_prime, cfg.delta)
    return cfg.delta * _threshold_count(a, a_prime, soft.t, cfg.delta)


def premetric(a: np.ndarray, a_prime: np.ndarray, p: float) -> float:
    """Averaged p-th power of the entrywise gaps: (1/m) * sum |a_i - a'_i|**p."""
    a = np.asarray(a, float)
    a_prime = np.asarray(a_prime, float)
    if a.shape != a_prime.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {a_prime.shape}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(np.mean(np.abs(a - a_prime) ** p))


def soft_premetric_l1(
    a: np.ndarray, a_prime: np.ndarray, soft: SoftParam, cfg: QuantConfig
) -> float:
    """Mean of componentwise soft distances; at t=0 this is the averaged
    l1 distance between the quantized vectors."""
    return float(np.mean(soft_distance_array(a, a_prime, soft, cfg)))


def soft_premetric_l2(
    a: np.ndarray, a_prime: np.ndarray, soft: SoftParam, cfg: QuantConfig
) -> float:
    """Mean of squared componentwise soft distances; at t=0 this is the
    averaged squared l2 distance between the quantized vectors."""
    d = soft_distance_array(a, a_prime, soft, cfg)
    return float(np.mean(d * d))


def premetric_circ(
    a: np.ndarray, a_prime: np.ndarray, soft: SoftParam, cfg: QuantConfig
) -> float:
    """Row-wise product of the two columns' soft distances, averaged.

    Inputs are m-by-2 arrays (one independent dither column each).
    """
    a = np.asarray(a, float)
    a_prime = np.asarray(a_prime, float)
    if a.ndim != 2 or a.shape[1] != 2 or a.shape != a_prime.shape:
        raise ValueError(f"expected matching (m, 2) arrays, got {a.shape} vs {a_prime.shape}")
    d = soft_distance_array(a, a_prime, soft, cfg)
    return float(np.mean(d[:, 0] * d[:, 1]))
