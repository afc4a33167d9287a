"""Monte Carlo distortion-verification harness.

Measures how well code-domain estimates track true pairwise distances:
empirical distortion of the linear maps, multiplicative/additive error
decomposition of the quantized estimates across a distance grid, decay
of the additive part with the embedding dimension, and the exact
identities that hold for dithered codes.

Conventions of the distortion fit (``measure_qrip``):

* one sampling stream per pair id, reused across grid distances, so a
  pair keeps its support/direction as the distance sweeps (common random
  numbers; the linear map's per-pair error then cancels from additive
  residuals instead of masquerading as distance-dependent distortion);
* the multiplicative distortion estimate ``eps_L_hat`` is anchored at
  the largest grid distance, where the additive part is negligible
  relative to the signal: it is the worst pair's dither-median relative
  error there (worst pair because the distortion definition quantifies
  over all pairs);
* additive residuals remove the fitted multiplicative part and clip at
  zero; the per-distance table reports the max over records (worst case)
  and the median.

Every routine is a pure function of (seed, config); trials are keyed by
(seed, pair id, trial id), so results do not depend on execution order
or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embeddings import quantize_with_dither, _estimate_from_codes
from .linops import LinOp, build
from .modelsets import ModelSet, sample_pair
from .quantizer import QuantConfig, sample_dither
from .rng import stream

__all__ = [
    "DistortionRecord",
    "QripFit",
    "QripRun",
    "check_dither_identity",
    "estimate_rip",
    "measure_qrip",
    "fit_decay",
    "check_product_concentration",
    "power_law_slope",
    "selftest",
    "records_csv",
    "summary_csv",
    "RECORD_COLUMNS",
    "SUMMARY_COLUMNS",
]

MODES = ("l1", "l2sq", "circ")
RECORD_COLUMNS = "m,delta,mode,true_dist,est_dist,rel_err,pair_id,trial_id,seed"
SUMMARY_COLUMNS = "m,mode,eps_L_hat,dist,rho_hat_max,rho_hat_median"


@dataclass(frozen=True)
class DistortionRecord:
    """One (pair, dither draw) measurement at a grid distance."""

    m: int
    delta: float
    mode: str
    true_dist: float
    est_dist: float
    rel_err: float
    pair_id: int
    trial_id: int
    seed: int


@dataclass
class QripFit:
    """Fitted multiplicative distortion and additive residual tables."""

    eps_L_hat: float
    distances: np.ndarray
    rho_hat_max: np.ndarray
    rho_hat_median: np.ndarray
    decay_slope: float | None = None

    def rho_table(self) -> dict[float, tuple[float, float]]:
        return {
            float(s): (float(mx), float(md))
            for s, mx, md in zip(self.distances, self.rho_hat_max, self.rho_hat_median)
        }


@dataclass
class QripRun:
    """Full output of one distortion sweep at fixed (op, delta, mode)."""

    m: int
    delta: float
    mode: str
    q: float
    distances: np.ndarray
    records: list[DistortionRecord]
    fit: QripFit
    pair_mean_est: np.ndarray  # (distances, pairs) dither-mean estimates
    pair_sd_est: np.ndarray  # (distances, pairs) dither SD of estimates
    linear_est: np.ndarray  # (distances, pairs) same pre-metric on the raw measurements
    seed: int


def _exponent(mode: str) -> int:
    if mode == "l1":
        return 1
    if mode in ("l2sq", "circ"):
        return 2
    raise ValueError(f"unknown mode {mode!r}; choose one of {MODES}")


def check_dither_identity(
    a: float,
    a_prime: float,
    cfg: QuantConfig,
    trials: int,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> dict:
    """Monte Carlo check that dithering makes the quantized gap unbiased.

    Averages |Q(a+xi) - Q(a'+xi)| over uniform dithers and compares with
    |a - a'|; passes within 4 * (delta/2) / sqrt(trials) (the per-draw
    value deviates from its mean by at most one cell).
    """
    if trials < 10_000:
        raise ValueError(f"need trials >= 10000, got {trials}")
    if rng is None:
        rng = stream(seed, "dither-identity")
    xi = rng.uniform(0.0, cfg.delta, size=trials)
    gaps = cfg.delta * np.abs(
        np.floor((a + xi) / cfg.delta) - np.floor((a_prime + xi) / cfg.delta)
    )
    mean = float(gaps.mean())
    target = abs(a - a_prime)
    tol = 4.0 * (cfg.delta / 2.0) / math.sqrt(trials)
    return {
        "mean": mean,
        "target": target,
        "abs_dev": abs(mean - target),
        "tolerance": tol,
        "trials": trials,
        "passed": abs(mean - target) <= tol,
    }


def estimate_rip(
    op: LinOp,
    mset: ModelSet,
    p: float,
    q: float,
    pairs: int,
    rng: np.random.Generator,
) -> float:
    """Empirical distortion of the linear map on sampled difference vectors.

    Computes sup over pairs of |(mu**p / m) * ||op(u)||_p**p - 1| with
    u = (x - x') normalized in l_q; a statistical lower bound on the true
    worst-case distortion.
    """
    if (p, q) != op.rip_profile:
        raise ValueError(f"operator profile {op.rip_profile} does not match requested ({p}, {q})")
    if pairs < 50:
        raise ValueError(f"need pairs >= 50 for a meaningful supremum, got {pairs}")
    scale = op.mu**p / op.m
    worst = 0.0
    d0 = 0.5 * mset.radius
    for _ in range(pairs):
        x, x_prime = sample_pair(mset, d0, rng, q=q)
        u = (x - x_prime).ravel()
        u = u / np.linalg.norm(u, ord=q)
        val = scale * float(np.sum(np.abs(op.matvec(u)) ** p))
        worst = max(worst, abs(val - 1.0))
    return worst


def _qrip_task(op, mset, mode, cfg, grid, pair_id, dithers, seed, q):
    """All records for one pair id across the distance grid (pure)."""
    p_e = _exponent(mode)
    recs = []
    means = np.empty(len(grid))
    sds = np.empty(len(grid))
    linear = np.empty(len(grid))
    for si, s in enumerate(grid):
        x, x_prime = sample_pair(mset, float(s), stream(seed, "qrip:pair", pair_id), q=q)
        y = op.matvec(np.ravel(x))
        y_prime = op.matvec(np.ravel(x_prime))
        gap = y - y_prime
        if mode == "l1":
            linear[si] = float(np.mean(np.abs(gap)))
        else:
            linear[si] = float(np.mean(gap * gap))
        ests = np.empty(dithers)
        for t in range(dithers):
            drng = stream(seed, "qrip:dither", pair_id, t, si)
            if mode == "circ":
                xi = np.column_stack(
                    [sample_dither(op.m, cfg, drng), sample_dither(op.m, cfg, drng)]
                )
                ca = quantize_with_dither(np.column_stack([y, y]), xi, cfg)
                cb = quantize_with_dither(np.column_stack([y_prime, y_prime]), xi, cfg)
            else:
                xi = sample_dither(op.m, cfg, drng)
                ca = quantize_with_dither(y, xi, cfg)[:, None]
                cb = quantize_with_dither(y_prime, xi, cfg)[:, None]
            est = _estimate_from_codes(ca, cb, mode, cfg.delta)
            ests[t] = est
            recs.append(
                DistortionRecord(
                    m=op.m,
                    delta=cfg.delta,
                    mode=mode,
                    true_dist=float(s),
                    est_dist=est,
                    rel_err=(est - s**p_e) / s**p_e,
                    pair_id=pair_id,
                    trial_id=t,
                    seed=seed,
                )
            )
        means[si] = ests.mean()
        sds[si] = ests.std(ddof=1) if dithers > 1 else 0.0
    return recs, means, sds, linear


def measure_qrip(
    op: LinOp,
    mset: ModelSet,
    mode: str,
    cfg: QuantConfig,
    distance_grid,
    pairs_per_distance: int,
    dithers_per_pair: int,
    seed: int,
    threads: int = 1,
) -> QripRun:
    """Sweep a distance grid, recording estimates and fitting distortion.

    For every grid distance s, ``pairs_per_distance`` pairs are sampled
    at l_q gap s (each pair id keeps its direction across distances) and
    embedded under ``dithers_per_pair`` fresh dithers; estimates, the
    fitted multiplicative distortion and the per-distance additive
    residual tables are returned (see the module docstring for the fit
    conventions).
    """
    grid = np.sort(np.asarray(list(distance_grid), dtype=float))
    if grid.size < 1 or np.any(grid <= 0):
        raise ValueError("distance grid must be non-empty and positive")
    if pairs_per_distance < 1 or dithers_per_pair < 1:
        raise ValueError("pairs_per_distance and dithers_per_pair must be >= 1")
    p_e = _exponent(mode)
    q = op.rip_profile[1]

    def task(j):
        return _qrip_task(op, mset, mode, cfg, grid, j, dithers_per_pair, seed, q)

    pair_ids = list(range(pairs_per_distance))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, pair_ids))
    else:
        results = [task(j) for j in pair_ids]

    records: list[DistortionRecord] = []
    for recs, *_ in results:
        records.extend(recs)
    records.sort(key=lambda r: (r.pair_id, r.trial_id, r.true_dist))
    pair_mean = np.stack([r[1] for r in results], axis=1)
    pair_sd = np.stack([r[2] for r in results], axis=1)
    linear = np.stack([r[3] for r in results], axis=1)

    # ---- distortion fit ----
    s_max = grid[-1]
    eps_candidates = []
    for j in pair_ids:
        rels = [abs(r.rel_err) for r in records if r.pair_id == j and r.true_dist == s_max]
        eps_candidates.append(float(np.median(rels)))
    eps_l = float(max(eps_candidates))

    rho_max = np.empty(grid.size)
    rho_med = np.empty(grid.size)
    for si, s in enumerate(grid):
        resid = [
            max(abs(r.est_dist - s**p_e) - eps_l * s**p_e, 0.0)
            for r in records
            if r.true_dist == s
        ]
        rho_max[si] = max(resid)
        rho_med[si] = float(np.median(resid))

    fit = QripFit(eps_L_hat=eps_l, distances=grid, rho_hat_max=rho_max, rho_hat_median=rho_med)
    return QripRun(
        m=op.m,
        delta=cfg.delta,
        mode=mode,
        q=q,
        distances=grid,
        records=records,
        fit=fit,
        pair_mean_est=pair_mean,
        pair_sd_est=pair_sd,
        linear_est=linear,
        seed=seed,
    )


def power_law_slope(ms, values) -> float:
    """Least-squares slope of log(values) against log(ms)."""
    ms = np.asarray(ms, dtype=float)
    values = np.asarray(values, dtype=float)
    if ms.size < 2 or np.any(values <= 0):
        raise ValueError("need >= 2 positive samples for a log-log fit")
    return float(np.polyfit(np.log(ms), np.log(values), 1)[0])


def fit_decay(runs) -> float:
    """Slope of log(median additive residual) against log(m).

    ``runs`` are measure_qrip outputs over >= 4 embedding dimensions with
    matching (mode, delta); each run contributes the median over its
    distance grid of the worst-case residual table.  Also accepts (m,
    residual) pairs directly, which is how synthetic decay inputs are
    fitted.
    """
    pts = []
    for run in runs:
        if isinstance(run, QripRun):
            pts.append((run.m, float(np.median(run.fit.rho_hat_max))))
        else:
            m, rho = run
            pts.append((float(m), float(rho)))
    if len(pts) < 4:
        raise ValueError(f"fit_decay needs >= 4 embedding dimensions, got {len(pts)}")
    ms, rhos = zip(*sorted(pts))
    return power_law_slope(ms, rhos)


def check_product_concentration(
    op: LinOp,
    mset: ModelSet,
    cfg: QuantConfig,
    m_list,
    trials: int,
    seed: int = 0,
    distance: float | None = None,
) -> dict:
    """Spread of the bi-dither product estimate as m grows.

    Rebuilds the operator family at every m in ``m_list`` (same input
    dimension, derived seeds), fixes one pair at the given distance, and
    measures the standard deviation of the product estimate over fresh
    dither matrices; passes when the log-log slope against m lies in
    [-0.75, -0.25].
    """
    m_list = sorted(int(m) for m in m_list)
    if len(m_list) < 2:
        raise ValueError("need at least two embedding dimensions")
    if trials < 2:
        raise ValueError("need trials >= 2")
    if distance is None:
        distance = mset.radius
    extra = {}
    if op.family == "expander":
        extra["degree"] = op.degree
    if op.family == "gaussian" and op.rip_profile == (1.0, 2.0):
        extra["rip"] = (1, 2)
    sds = []
    for mi, m in enumerate(m_list):
        op_m = build(op.family, m, op.n, seed=op.seed + 1000 * mi, **extra)
        x, x_prime = sample_pair(mset, distance, stream(seed, "prodconc:pair"), q=op.rip_profile[1])
        y = op_m.matvec(np.ravel(x))
        y_prime = op_m.matvec(np.ravel(x_prime))
        ests = np.empty(trials)
        for t in range(trials):
            drng = stream(seed, "prodconc:dither", mi, t)
            xi = np.column_stack([sample_dither(m, cfg, drng), sample_dither(m, cfg, drng)])
            ca = quantize_with_dither(np.column_stack([y, y]), xi, cfg)
            cb = quantize_with_dither(np.column_stack([y_prime, y_prime]), xi, cfg)
            ests[t] = _estimate_from_codes(ca, cb, "circ", cfg.delta)
        sds.append(float(ests.std(ddof=1)))
    slope = power_law_slope(m_list, sds)
    ratios = [sds[i + 1] / sds[i] for i in range(len(sds) - 1)]
    return {
        "m_list": m_list,
        "stddevs": sds,
        "slope": slope,
        "doubling_ratios": ratios,
        "passed": -0.75 <= slope <= -0.25,
    }


# ---------------------------------------------------------------------------
# identity self-tests


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def selftest(seed: int = 0, fast: bool = False) -> list[dict]:
    """Run every deterministic and statistical identity check.

    Returns one dict per check with name / passed / detail; detail
    strings are pure functions of the seed so reports are byte-stable.
    """
    n_mc = 100_000 if fast else 1_000_000
    n_tuples = 20_000 if fast else 100_000
    checks: list[dict] = []

    def add(name: str, passed: bool, detail: str):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    cfg = QuantConfig(1.0)

    # unbiasedness of the dithered cell gap
    rng = stream(seed, "selftest:dither")
    rep = check_dither_identity(0.0, 0.37, cfg, n_mc, rng=rng)
    add(
        "dither-unbiasedness",
        rep["passed"],
        f"mean={_fmt(rep['mean'])} target={_fmt(rep['target'])} tol={_fmt(rep['tolerance'])}",
    )

    # lattice-aligned gaps are recovered exactly for every dither draw
    rng = stream(seed, "selftest:lattice")
    xi = rng.uniform(0.0, 1.0, size=1000)
    a = rng.uniform(-3, 3)
    exact = np.all(np.floor(a + 3 + xi) - np.floor(a + xi) == 3)
    add("lattice-shift-exactness", bool(exact), f"a={_fmt(a)} k=3")

    # small-gap second moment: E gap^2 = delta * |a - a'| when |a-a'| < delta
    rng = stream(seed, "selftest:smallgap")
    a, gap = 0.25, 0.4
    xi = rng.uniform(0.0, 1.0, size=n_mc)
    d0 = np.abs(np.floor(a + gap + xi) - np.floor(a + xi))
    mean_sq = float((d0 * d0).mean())
    rel = abs(mean_sq - gap) / gap
    add("small-gap-second-moment", rel <= 0.01, f"mean={_fmt(mean_sq)} target={_fmt(gap)} rel={_fmt(rel)}")

    # perturbation sandwich and guard-band bounds, randomized
    rng = stream(seed, "selftest:sandwich")
    a = rng.uniform(-3, 3, size=n_tuples)
    b = rng.uniform(-3, 3, size=n_tuples)
    t = rng.uniform(-1.5, 1.5, size=n_tuples)
    eps = rng.uniform(0.0, 1.0, size=n_tuples)
    r1 = rng.uniform(-1, 1, size=n_tuples) * eps
    r2 = rng.uniform(-1, 1, size=n_tuples) * eps
    d_mid = _soft_vec(a + r1, b + r2, t, 1.0)
    d_up = _soft_vec(a, b, t + eps, 1.0)
    d_lo = _soft_vec(a, b, t - eps, 1.0)
    violations = int(np.count_nonzero((d_up > d_mid) | (d_mid > d_lo)))
    add("perturbation-sandwich", violations == 0, f"tuples={n_tuples} violations={violations}")

    s2 = rng.uniform(-1.5, 1.5, size=n_tuples)
    lhs = np.abs(_soft_vec(a, b, t, 1.0) - _soft_vec(a, b, s2, 1.0))
    ok12 = int(np.count_nonzero(lhs > 4.0 * (1.0 + np.abs(t - s2)) + 1e-12))
    add("guard-band-shift-bound", ok12 == 0, f"tuples={n_tuples} violations={ok12}")

    lhs13 = np.abs(_soft_vec(a, b, t, 1.0) - np.abs(a - b))
    ok13 = int(np.count_nonzero(lhs13 > 4.0 * (1.0 + np.abs(t)) + 1e-12))
    add("soft-vs-true-gap-bound", ok13 == 0, f"tuples={n_tuples} violations={ok13}")

    mono = np.count_nonzero(_soft_vec(a, b, np.abs(t), 1.0) > _soft_vec(a, b, -np.abs(t), 1.0))
    add("guard-band-monotonicity", mono == 0, f"tuples={n_tuples} violations={int(mono)}")

    # guarded-mean bound: |E d^t(a+xi, a'+xi) - |a-a'|| <= 4|t| (+ MC margin)
    rng = stream(seed, "selftest:guardmean")
    a0, b0, t0 = 0.3, 1.1, 0.2
    xi = rng.uniform(0.0, 1.0, size=n_mc // 10)
    vals = _soft_vec(a0 + xi, b0 + xi, np.full(xi.size, t0), 1.0)
    margin = 4.0 * float(vals.std()) / math.sqrt(xi.size)
    dev = abs(float(vals.mean()) - abs(a0 - b0))
    add("guarded-mean-bound", dev <= 4 * abs(t0) + margin, f"dev={_fmt(dev)} bound={_fmt(4 * abs(t0) + margin)}")

    # joint scaling invariance: indices are unchanged when (values, dither,
    # delta) scale together, so product estimates scale by delta**2 exactly
    rng = stream(seed, "selftest:homogeneity")
    y = rng.standard_normal(256)
    xi = rng.uniform(0, 1, size=(256, 2))
    c1 = quantize_with_dither(np.column_stack([y, y]), xi, QuantConfig(1.0))
    c2 = quantize_with_dither(np.column_stack([2 * y, 2 * y]), 2 * xi, QuantConfig(2.0))
    add("joint-scaling-invariance", bool(np.array_equal(c1, c2)), "delta doubled with inputs")

    # serialization roundtrip
    from .embeddings import CodeBlock, deserialize, serialize

    rng = stream(seed, "selftest:serialize")
    codes = rng.integers(-130, 40000, size=(64, 1))
    blk = CodeBlock("single", 64, 0.5, codes, op_seed=7, dither_seed=9)
    add("code-roundtrip", deserialize(serialize(blk)) == blk, "64x1 block, i16 width")

    return checks


def _soft_vec(a, b, t, delta):
    """Strict guard-band distances for per-element t values (vectorized)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    t = np.asarray(t, float)
    pad = np.ceil(np.abs(t) / delta).astype(np.int64) + 1
    lo = np.floor(np.minimum(a, b) / delta).astype(np.int64) - pad
    hi = np.ceil(np.maximum(a, b) / delta).astype(np.int64) + pad
    width = int((hi - lo).max()) + 1
    ks = lo[..., None] + np.arange(width, dtype=np.int64)
    valid = ks <= hi[..., None]
    u = a[..., None] - ks * delta
    v = b[..., None] - ks * delta
    tt = t[..., None]
    hit = ((u < -tt) & (v > tt)) | ((u > tt) & (v < -tt))
    return delta * np.count_nonzero(hit & valid, axis=-1)


# ---------------------------------------------------------------------------
# CSV emission (schema shared with the command-line runner)


def records_csv(run: QripRun) -> str:
    lines = [RECORD_COLUMNS]
    for r in run.records:
        lines.append(
            f"{r.m},{_fmt(r.delta)},{r.mode},{_fmt(r.true_dist)},{_fmt(r.est_dist)},"
            f"{_fmt(r.rel_err)},{r.pair_id},{r.trial_id},{r.seed}"
        )
    return "\n".join(lines) + "\n"


def summary_csv(run: QripRun) -> str:
    lines = [SUMMARY_COLUMNS]
    f = run.fit
    for s, mx, md in zip(f.distances, f.rho_hat_max, f.rho_hat_median):
        lines.append(f"{run.m},{run.mode},{_fmt(f.eps_L_hat)},{_fmt(s)},{_fmt(mx)},{_fmt(md)}")
    return "\n".join(lines) + "\n"
