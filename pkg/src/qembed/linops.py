"""Measurement operator families behind one matvec interface.

Each operator carries its output/input dimensions, a declared scaling
``mu`` and norm pair ``rip_profile = (p, q)`` such that
``(mu**p / m) * ||op.matvec(u)||_p**p`` concentrates around ``||u||_q**p``
on the sets the family is built for.  ``matvec`` returns the raw family
action (unit-variance rows for the dense families, +-1 rows for the
subsampled Hadamard, 0/1 adjacency for the expander); ``mu`` is metadata
consumed by the verification side.

Operators are immutable after build and matvec is reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "LinOp",
    "build",
    "RopOp",
    "build_rop",
    "rop_apply",
    "fwht",
    "fwht_counted",
    "circular_convolve_counted",
    "FAMILIES",
]

FAMILIES = (
    "gaussian",
    "bernoulli",
    "subsampled_hadamard",
    "random_convolution",
    "expander",
)

# Dense-cache ceiling: 2**24 float64 entries (128 MiB).  Larger dense
# families stream their rows per matvec from the same keyed generators.
_DENSE_CACHE_MAX = 1 << 24


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fwht(x: np.ndarray) -> np.ndarray:
    """In-order fast Walsh-Hadamard transform with +-1 entries.

    Implements H @ x for the Sylvester matrix H[i, j] = (-1)**popcount(i & j)
    in O(n log n) additions; requires len(x) to be a power of two.
    """
    y = np.array(x, dtype=float, copy=True)
    n = y.size
    if not _is_pow2(n):
        raise ValueError(f"transform length must be a power of two, got {n}")
    h = 1
    while h < n:
        blk = y.reshape(-1, 2 * h)
        left = blk[:, :h].copy()
        right = blk[:, h:].copy()
        blk[:, :h] = left + right
        blk[:, h:] = left - right
        h *= 2
    return y


def fwht_counted(x: np.ndarray) -> tuple[np.ndarray, int]:
    """fwht plus a tally of butterfly multiply-add operations.

    Each butterfly produces (a+b, a-b) and is tallied as two
    multiply-adds, giving n*log2(n) total.
    """
    y = np.array(x, dtype=float, copy=True)
    n = y.size
    if not _is_pow2(n):
        raise ValueError(f"transform length must be a power of two, got {n}")
    ops = 0
    h = 1
    while h < n:
        blk = y.reshape(-1, 2 * h)
        left = blk[:, :h].copy()
        right = blk[:, h:].copy()
        blk[:, :h] = left + right
        blk[:, h:] = left - right
        ops += 2 * (n // (2 * h)) * h
        h *= 2
    return y, ops


def _fft_counted(z: np.ndarray) -> tuple[np.ndarray, int]:
    """Iterative radix-2 complex FFT tallying butterflies as multiply-adds.

    One butterfly = one twiddle multiply fused with an add/sub pair,
    tallied as a single multiply-add; there are (n/2)*log2(n) of them.
    """
    z = np.asarray(z, dtype=complex).copy()
    n = z.size
    if not _is_pow2(n):
        raise ValueError(f"transform length must be a power of two, got {n}")
    levels = n.bit_length() - 1
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    z = z[rev]
    ops = 0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blk = z.reshape(-1, size)
        t = tw * blk[:, half:]
        blk[:, half:] = blk[:, :half] - t
        blk[:, :half] += t
        ops += blk.shape[0] * half
        size *= 2
    return z, ops


def circular_convolve_counted(kernel_spectrum: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Circular convolution by transform-domain product, with an op tally.

    ``kernel_spectrum`` is the precomputed full FFT of the generator (a
    build-time constant, not tallied).  Tally = forward FFT + n pointwise
    multiplies + inverse FFT, all in butterfly multiply-add units; total
    n*log2(n) + n, within the 3*n*log2(n) budget.
    """
    n = x.size
    fx, ops1 = _fft_counted(np.asarray(x, dtype=complex))
    prod = fx * kernel_spectrum
    # inverse FFT via conjugation
    inv, ops2 = _fft_counted(np.conj(prod))
    y = np.conj(inv).real / n
    return y, ops1 + n + ops2


class LinOp:
    """Family-built linear measurement operator.

    Attributes: family, m, n, mu, rip_profile (p, q), seed.  Subclasses
    implement _matvec and _dense; dense materialization is meant for
    testing at moderate n.
    """

    family: str = "abstract"

    def __init__(self, m: int, n: int, seed: int, mu: float, rip_profile: tuple[float, float]):
        if m < 1 or n < 1:
            raise ValueError(f"dimensions must be >= 1, got m={m}, n={n}")
        self.m = int(m)
        self.n = int(n)
        self.seed = int(seed)
        self.mu = float(mu)
        self.rip_profile = (float(rip_profile[0]), float(rip_profile[1]))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected input of length {self.n}, got shape {x.shape}")
        return self._matvec(x)

    def dense(self) -> np.ndarray:
        """Dense m-by-n materialization reproducing matvec exactly."""
        return self._dense()

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dense(self) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        p, q = self.rip_profile
        return (
            f"{type(self).__name__}(family={self.family!r}, m={self.m}, n={self.n}, "
            f"mu={self.mu:.6g}, profile=(l{p:g}, l{q:g}), seed={self.seed})"
        )


class _DenseIIDOp(LinOp):
    """Shared machinery for i.i.d.-entry families.

    Row i is drawn from the stream keyed by (seed, family-label, i), so
    matvec and dense materialization agree without ever storing the
    matrix unless it fits the cache budget.
    """

    _row_label = "rows"

    def __init__(self, m, n, seed, mu, rip_profile):
        super().__init__(m, n, seed, mu, rip_profile)
        self._cache: np.ndarray | None = None
        if self.m * self.n <= _DENSE_CACHE_MAX:
            self._cache = self._rows(0, self.m)
            self._cache.setflags(write=False)

    def _sample_row_block(self, rng: np.random.Generator, rows: int) -> np.ndarray:
        raise NotImplementedError

    def _rows(self, start: int, stop: int) -> np.ndarray:
        # one keyed stream per 64-row block keeps construction cheap and
        # the layout reproducible for any (start, stop) slicing
        blocks = []
        blk = 64
        first = (start // blk) * blk
        for b0 in range(first, stop, blk):
            rng = stream(self.seed, f"{self.family}:{self._row_label}", b0)
            rows_b = self._sample_row_block(rng, min(blk, self.m - b0))
            blocks.append(rows_b)
        full = np.concatenate(blocks, axis=0)
        return full[start - first : stop - first]

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        if self._cache is not None:
            return self._cache @ x
        out = np.empty(self.m)
        step = max(1, _DENSE_CACHE_MAX // self.n)
        for r0 in range(0, self.m, step):
            r1 = min(r0 + step, self.m)
            out[r0:r1] = self._rows(r0, r1) @ x
        return out

    def _dense(self) -> np.ndarray:
        if self._cache is not None:
            return self._cache
        return self._rows(0, self.m)


class GaussianOp(_DenseIIDOp):
    """i.i.d. standard normal entries; mu=1 on the (l2, l2) profile or
    mu=sqrt(pi/2) on the (l1, l2) profile."""

    family = "gaussian"

    def _sample_row_block(self, rng, rows):
        return rng.standard_normal((rows, self.n))


class BernoulliOp(_DenseIIDOp):
    """i.i.d. +-1 entries (unit variance), mu=1, (l2, l2) profile."""

    family = "bernoulli"

    def _sample_row_block(self, rng, rows):
        return rng.integers(0, 2, size=(rows, self.n)).astype(float) * 2.0 - 1.0


class SubsampledHadamardOp(LinOp):
    """sqrt(n) * (uniform row subset of the orthonormal Hadamard) * random
    sign diagonal.  Rows have +-1 entries; matvec runs in O(n log n)."""

    family = "subsampled_hadamard"

    def __init__(self, m, n, seed):
        if not _is_pow2(n):
            raise ValueError(f"subsampled_hadamard requires n to be a power of two, got {n}")
        if m > n:
            raise ValueError(f"subsampled_hadamard selects rows without replacement; need m <= n, got m={m} > n={n}")
        super().__init__(m, n, seed, mu=1.0, rip_profile=(2.0, 2.0))
        self.rows = np.sort(stream(seed, "hadamard:rows").choice(n, size=m, replace=False))
        self.signs = stream(seed, "hadamard:signs").integers(0, 2, size=n).astype(float) * 2.0 - 1.0
        self.rows.setflags(write=False)
        self.signs.setflags(write=False)

    def _matvec(self, x):
        return fwht(self.signs * x)[self.rows]

    def _dense(self):
        cols = np.arange(self.n)
        bits = np.bitwise_and(self.rows[:, None], cols[None, :])
        pop = np.array([[int(v).bit_count() for v in row] for row in bits])
        h = np.where(pop % 2 == 0, 1.0, -1.0)
        return h * self.signs[None, :]


class RandomConvolutionOp(LinOp):
    """Circulant matrix with an i.i.d. standard normal generator, with m
    uniformly selected output coordinates; matvec via FFT in O(n log n)."""

    family = "random_convolution"

    def __init__(self, m, n, seed):
        if m > n:
            raise ValueError(f"random_convolution selects output coordinates without replacement; need m <= n, got m={m} > n={n}")
        super().__init__(m, n, seed, mu=1.0, rip_profile=(2.0, 2.0))
        self.generator = stream(seed, "convolution:generator").standard_normal(n)
        self.coords = np.sort(stream(seed, "convolution:coords").choice(n, size=m, replace=False))
        self._spectrum = np.fft.rfft(self.generator)
        self.generator.setflags(write=False)
        self.coords.setflags(write=False)

    def _matvec(self, x):
        full = np.fft.irfft(self._spectrum * np.fft.rfft(x), n=self.n)
        return full[self.coords]

    def _dense(self):
        # row i of the circulant is generator[(i - j) mod n]
        i = self.coords[:, None]
        j = np.arange(self.n)[None, :]
        return self.generator[(i - j) % self.n]


class ExpanderOp(LinOp):
    """0/1 adjacency of a random left-d-regular bipartite graph.

    Each input node connects to d distinct output nodes chosen uniformly;
    matvec accumulates in O(n*d).  Declared scaling makes the normalized
    functional (mu**p / m) * ||A x||_p**p equal to (1/d**p) * ||A x||_p**p,
    which equals ||x||_p**p exactly on nonnegative inputs for p=1.
    """

    family = "expander"

    def __init__(self, m, n, seed, degree, p=1.0):
        if degree < 1:
            raise ValueError(f"expander left-degree must be >= 1, got {degree}")
        if degree > m:
            raise ValueError(f"expander left-degree must be <= m, got d={degree} > m={m}")
        # mu = m**(1/p) / d so that mu**p / m = d**(-p)
        super().__init__(m, n, seed, mu=m ** (1.0 / p) / degree, rip_profile=(p, p))
        self.degree = int(degree)
        nbrs = np.empty((n, degree), dtype=np.int64)
        for j in range(n):
            nbrs[j] = stream(seed, "expander:nbrs", j).choice(m, size=degree, replace=False)
        self.neighbors = nbrs
        self.neighbors.setflags(write=False)

    def _matvec(self, x):
        weights = np.repeat(x, self.degree)
        return np.bincount(self.neighbors.ravel(), weights=weights, minlength=self.m).astype(float)

    def _dense(self):
        a = np.zeros((self.m, self.n))
        for j in range(self.n):
            a[self.neighbors[j], j] = 1.0
        return a


def build(family: str, m: int, n: int, seed: int, **options) -> LinOp:
    """Construct a deterministic operator for (family, seed).

    Options: ``rip=(1, 2)`` selects the l1-profile Gaussian (mu =
    sqrt(pi/2)); ``degree=d`` sets the expander left-degree (required).
    """
    if family == "gaussian":
        profile = tuple(options.pop("rip", (2, 2)))
        _reject_extra(options)
        if profile == (2, 2):
            return GaussianOp(m, n, seed, mu=1.0, rip_profile=(2.0, 2.0))
        if profile == (1, 2):
            return GaussianOp(m, n, seed, mu=math.sqrt(math.pi / 2.0), rip_profile=(1.0, 2.0))
        raise ValueError(f"gaussian rip profile must be (2, 2) or (1, 2), got {profile}")
    if family == "bernoulli":
        _reject_extra(options)
        return BernoulliOp(m, n, seed, mu=1.0, rip_profile=(2.0, 2.0))
    if family == "subsampled_hadamard":
        _reject_extra(options)
        return SubsampledHadamardOp(m, n, seed)
    if family == "random_convolution":
        _reject_extra(options)
        return RandomConvolutionOp(m, n, seed)
    if family == "expander":
        degree = options.pop("degree", None)
        _reject_extra(options)
        if degree is None:
            raise ValueError("expander requires a 'degree' option (left-degree d)")
        return ExpanderOp(m, n, seed, degree=int(degree))
    raise ValueError(f"unknown family {family!r}; choose one of {FAMILIES}")


def _reject_extra(options: dict) -> None:
    if options:
        raise ValueError(f"unknown operator options: {sorted(options)}")


@dataclass(frozen=True)
class RopOp:
    """Rank-one probing operator on n1-by-n2 matrices.

    Output coordinate i is a_i^T U b_i with i.i.d. unit-variance probe
    vectors a_i, b_i; ``kappa`` rescales the argument fed to the
    quantizer (the estimator side divides by kappa).
    """

    family = "rop"

    m: int
    n1: int
    n2: int
    seed: int
    kappa: float
    probes_left: np.ndarray  # (m, n1)
    probes_right: np.ndarray  # (m, n2)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return rop_apply(self, u)


def build_rop(m: int, n1: int, n2: int, seed: int, kappa: float = 1.0, dist: str = "gaussian") -> RopOp:
    """Build a rank-one probing operator with gaussian or +-1 probes."""
    if m < 1 or n1 < 1 or n2 < 1:
        raise ValueError(f"dimensions must be >= 1, got m={m}, n1={n1}, n2={n2}")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    rng_a = stream(seed, "rop:left")
    rng_b = stream(seed, "rop:right")
    if dist == "gaussian":
        a = rng_a.standard_normal((m, n1))
        b = rng_b.standard_normal((m, n2))
    elif dist == "bernoulli":
        a = rng_a.integers(0, 2, size=(m, n1)).astype(float) * 2.0 - 1.0
        b = rng_b.integers(0, 2, size=(m, n2)).astype(float) * 2.0 - 1.0
    else:
        raise ValueError(f"unknown probe distribution {dist!r}")
    a.setflags(write=False)
    b.setflags(write=False)
    return RopOp(m=int(m), n1=int(n1), n2=int(n2), seed=int(seed), kappa=float(kappa), probes_left=a, probes_right=b)


def rop_apply(op: RopOp, u: np.ndarray) -> np.ndarray:
    """Coordinate i equals a_i^T U b_i."""
    u = np.asarray(u, dtype=float)
    if u.shape != (op.n1, op.n2):
        raise ValueError(f"expected a {op.n1}x{op.n2} matrix, got shape {u.shape}")
    return np.einsum("mi,ij,mj->m", op.probes_left, u, op.probes_right)
