"""Quantized embeddings: dithered codes, distance estimation, persistence.

A CodeBlock stores the integer cell indices of a dithered, quantized
measurement vector.  Distances between two comparable blocks are exact
integer accumulations scaled once by the resolution at the end, so the
estimators carry no float accumulation error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .linops import LinOp, RopOp, rop_apply
from .quantizer import QuantConfig

__all__ = [
    "CodeBlock",
    "embed",
    "embed_bidither",
    "embed_rop",
    "estimate_distance",
    "serialize",
    "deserialize",
    "quantize_with_dither",
    "HEADER_SIZE",
]

HEADER_SIZE = 40
_MAGIC = b"QEMB"
_VERSION = 1
_LAYOUT_CODES = {"single": 1, "bidither": 2}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUT_CODES.items()}
_WIDTH_DTYPES = {0: "<i1", 1: "<i2", 2: "<i4"}


@dataclass(frozen=True)
class CodeBlock:
    """Quantized embedding output: cell indices plus provenance.

    ``codes`` has shape (m, cols) with cols = 1 for the single layout and
    2 for the bi-dither layout; decoding index k gives the cell centre
    delta * (k + 1/2).  Blocks are comparable only when (layout, m,
    delta) agree.
    """

    layout: str
    m: int
    delta: float
    codes: np.ndarray
    op_seed: int = 0
    dither_seed: int = 0

    def __post_init__(self):
        if self.layout not in _LAYOUT_CODES:
            raise ValueError(f"layout must be 'single' or 'bidither', got {self.layout!r}")
        codes = np.asarray(self.codes, dtype=np.int64)
        expected_cols = 1 if self.layout == "single" else 2
        if codes.ndim != 2 or codes.shape != (self.m, expected_cols):
            raise ValueError(
                f"codes must have shape ({self.m}, {expected_cols}) for layout "
                f"{self.layout!r}, got {codes.shape}"
            )
        if not (self.delta > 0 and np.isfinite(self.delta)):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def cols(self) -> int:
        return self.codes.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Cell-centre reconstruction values delta * (k + 1/2)."""
        return self.delta * (self.codes + 0.5)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CodeBlock):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.m == other.m
            and self.delta == other.delta
            and self.op_seed == other.op_seed
            and self.dither_seed == other.dither_seed
            and np.array_equal(self.codes, other.codes)
        )


def quantize_with_dither(values: np.ndarray, dither: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Cell indices floor((values + dither) / delta), validating the dither range."""
    values = np.asarray(values, dtype=float)
    dither = np.asarray(dither, dtype=float)
    if values.shape != dither.shape:
        raise ValueError(f"dither shape {dither.shape} does not match measurements {values.shape}")
    if np.any(dither < 0) or np.any(dither >= cfg.delta):
        raise ValueError("dither entries must lie in [0, delta)")
    return np.floor((values + dither) / cfg.delta).astype(np.int64)


def embed(
    op: LinOp,
    x: np.ndarray,
    dither: np.ndarray,
    cfg: QuantConfig,
    dither_seed: int = 0,
) -> CodeBlock:
    """Single-layout codes floor((op.matvec(x) + dither) / delta)."""
    y = op.matvec(x)
    codes = quantize_with_dither(y, np.asarray(dither, float), cfg)
    return CodeBlock(
        layout="single",
        m=op.m,
        delta=cfg.delta,
        codes=codes[:, None],
        op_seed=op.seed,
        dither_seed=dither_seed,
    )


def embed_bidither(
    op: LinOp,
    x: np.ndarray,
    dither: np.ndarray,
    cfg: QuantConfig,
    dither_seed: int = 0,
) -> CodeBlock:
    """Bi-dither codes: one matvec, two independent dither columns."""
    dither = np.asarray(dither, dtype=float)
    if dither.shape != (op.m, 2):
        raise ValueError(f"bi-dither layout needs an ({op.m}, 2) dither, got {dither.shape}")
    y = op.matvec(x)
    codes = quantize_with_dither(np.column_stack([y, y]), dither, cfg)
    return CodeBlock(
        layout="bidither",
        m=op.m,
        delta=cfg.delta,
        codes=codes,
        op_seed=op.seed,
        dither_seed=dither_seed,
    )


def embed_rop(
    op: RopOp,
    u: np.ndarray,
    dither: np.ndarray,
    cfg: QuantConfig,
    dither_seed: int = 0,
) -> CodeBlock:
    """Codes of the rank-one probing map: floor((kappa * a_i^T U b_i + xi_i)/delta).

    Distance estimates over these codes approximate kappa times the
    Frobenius gap; dividing the estimate by op.kappa is the caller's
    responsibility (kappa defaults to 1).
    """
    y = op.kappa * rop_apply(op, u)
    codes = quantize_with_dither(y, np.asarray(dither, float), cfg)
    return CodeBlock(
        layout="single",
        m=op.m,
        delta=cfg.delta,
        codes=codes[:, None],
        op_seed=op.seed,
        dither_seed=dither_seed,
    )


def _estimate_from_codes(codes_a: np.ndarray, codes_b: np.ndarray, mode: str, delta: float) -> float:
    """Shared integer-exact estimator core over (m, cols) index arrays.

    Sums run in int64 when the worst case provably fits, otherwise in
    arbitrary-precision Python ints; either way the accumulation is
    exact and delta scaling is applied once at the end.
    """
    m = codes_a.shape[0]
    gaps = np.abs(codes_a.astype(np.int64) - codes_b.astype(np.int64))
    if mode == "l1":
        peak = m * int(gaps[:, 0].max(initial=0))
        if peak < 2**62:
            total = int(np.sum(gaps[:, 0]))
        else:
            total = int(np.sum(gaps[:, 0], dtype=object))
        return delta * total / m
    if mode == "l2sq":
        g = gaps[:, 0]
        peak = m * int(g.max(initial=0)) ** 2
        total = int(np.sum(g * g)) if peak < 2**62 else int(np.sum(g.astype(object) ** 2))
        return delta * delta * total / m
    if mode == "circ":
        g1, g2 = gaps[:, 0], gaps[:, 1]
        peak = m * int(g1.max(initial=0)) * int(g2.max(initial=0))
        if peak < 2**62:
            total = int(np.sum(g1 * g2))
        else:
            total = int(np.sum(g1.astype(object) * g2.astype(object)))
        return delta * delta * total / m
    raise ValueError(f"unknown mode {mode!r}; choose l1, l2sq or circ")


def estimate_distance(c: CodeBlock, c_prime: CodeBlock, mode: str) -> float:
    """Distance estimate from two comparable code blocks.

    l1    -> (delta/m)    * sum |k_i - k'_i|        (targets the l_q gap)
    l2sq  -> (delta**2/m) * sum (k_i - k'_i)**2     (targets the squared l2 gap)
    circ  -> (delta**2/m) * sum |dk_i1| * |dk_i2|   (targets the squared l2 gap)

    Accumulation is exact in integers; the delta scaling is applied once.
    """
    if (c.layout, c.m, c.delta) != (c_prime.layout, c_prime.m, c_prime.delta):
        raise ValueError(
            "incomparable blocks: "
            f"(layout, m, delta) = ({c.layout}, {c.m}, {c.delta}) vs "
            f"({c_prime.layout}, {c_prime.m}, {c_prime.delta})"
        )
    if mode in ("l1", "l2sq") and c.layout != "single":
        raise ValueError(f"mode {mode!r} requires the single layout, got {c.layout!r}")
    if mode == "circ" and c.layout != "bidither":
        raise ValueError(f"mode 'circ' requires the bidither layout, got {c.layout!r}")
    return _estimate_from_codes(c.codes, c_prime.codes, mode, c.delta)


def _pick_width(codes: np.ndarray) -> int:
    lo = int(codes.min()) if codes.size else 0
    hi = int(codes.max()) if codes.size else 0
    if -(1 << 7) <= lo and hi < (1 << 7):
        return 0
    if -(1 << 15) <= lo and hi < (1 << 15):
        return 1
    if -(1 << 31) <= lo and hi < (1 << 31):
        return 2
    raise ValueError(f"code indices [{lo}, {hi}] overflow the 32-bit storage width")


def serialize(c: CodeBlock) -> bytes:
    """Little-endian stream: 40-byte header then row-major indices.

    Header: magic 'QEMB', version u8, layout u8 (1 single / 2 bidither),
    width u8 (0 -> i8, 1 -> i16, 2 -> i32), reserved u8 = 0, m u64,
    delta f64, op_seed u64, dither_seed u64.  The narrowest signed width
    holding every index is chosen automatically.
    """
    width = _pick_width(c.codes)
    header = struct.pack(
        "<4sBBBBQdQQ",
        _MAGIC,
        _VERSION,
        _LAYOUT_CODES[c.layout],
        width,
        0,
        c.m,
        c.delta,
        c.op_seed & 0xFFFFFFFFFFFFFFFF,
        c.dither_seed & 0xFFFFFFFFFFFFFFFF,
    )
    payload = np.ascontiguousarray(c.codes).astype(_WIDTH_DTYPES[width]).tobytes(order="C")
    return header + payload


def deserialize(data: bytes) -> CodeBlock:
    """Inverse of serialize; validates magic, version and payload size."""
    if len(data) < HEADER_SIZE:
        raise ValueError(f"truncated stream: {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, layout_code, width, _reserved, m, delta, op_seed, dither_seed = struct.unpack(
        "<4sBBBBQdQQ", data[:HEADER_SIZE]
    )
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}; not a code file")
    if version != _VERSION:
        raise ValueError(f"unsupported version {version}")
    if layout_code not in _LAYOUT_NAMES:
        raise ValueError(f"unknown layout code {layout_code}")
    if width not in _WIDTH_DTYPES:
        raise ValueError(f"unknown width code {width}")
    layout = _LAYOUT_NAMES[layout_code]
    cols = 1 if layout == "single" else 2
    expected = m * cols * (1 << width)
    payload = data[HEADER_SIZE:]
    if len(payload) != expected:
        raise ValueError(f"truncated stream: expected {expected} payload bytes, got {len(payload)}")
    codes = np.frombuffer(payload, dtype=_WIDTH_DTYPES[width]).astype(np.int64).reshape(m, cols)
    return CodeBlock(
        layout=layout,
        m=int(m),
        delta=float(delta),
        codes=codes,
        op_seed=int(op_seed),
        dither_seed=int(dither_seed),
    )
