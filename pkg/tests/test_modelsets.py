import itertools
import math

import numpy as np
import pytest

from qembed import (
    QuantConfig,
    ball,
    ball_mean_width_exact,
    dict_sparse,
    entropy_bound,
    finite_cloud,
    group_sparse,
    low_rank,
    low_rank_joint_sparse,
    mean_width_mc,
    required_m,
    sample_pair,
    sample_point,
    sparse,
    subspace_union,
    support_function,
)
from qembed.modelsets import contains
from qembed.rng import stream


def _all_sets(rng):
    bases = [rng.standard_normal((12, 3)) for _ in range(4)]
    pts = rng.standard_normal((6, 8))
    d = rng.standard_normal((10, 24))
    return [
        sparse(2, 5),
        group_sparse(2, 3, 6),
        low_rank(1, 4, 4),
        low_rank_joint_sparse(1, 2, 6, 4),
        subspace_union(bases),
        ball(7, radius=1.5),
        finite_cloud(pts),
        dict_sparse(d, 3),
    ]


class TestSamplePoint:
    def test_membership_many_samples(self):
        rng = stream(0, "test:membership")
        for mset in _all_sets(rng):
            srng = stream(1, "test:membership", hash(mset.kind) % 1000)
            for _ in range(10_000):
                x = sample_point(mset, srng)
                assert contains(mset, x, tol=1e-9), mset.kind

    def test_sparse_unit_norm(self):
        mset = sparse(2, 5)
        rng = stream(2, "t")
        for _ in range(50):
            x = sample_point(mset, rng)
            assert np.count_nonzero(x) <= 2
            assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)

    def test_low_rank_singular_values(self):
        mset = low_rank(1, 4, 4)
        rng = stream(3, "t")
        for _ in range(50):
            u = sample_point(mset, rng)
            sv = np.linalg.svd(u, compute_uv=False)
            assert sv[0] == pytest.approx(np.linalg.norm(u, "fro"), rel=1e-12)
            assert sv[1] <= 1e-9

    def test_ball_radius(self):
        mset = ball(7, radius=1.5)
        rng = stream(4, "t")
        for _ in range(200):
            assert np.linalg.norm(sample_point(mset, rng)) <= 1.5 + 1e-12


class TestSamplePair:
    def test_distance_zero(self):
        mset = sparse(2, 10)
        x, x_prime = sample_pair(mset, 0.0, stream(5, "t"))
        assert np.array_equal(x, x_prime)

    def test_sparse_exact_distance_shared_support(self):
        mset = sparse(2, 10)
        rng = stream(6, "t")
        for _ in range(100):
            x, x_prime = sample_pair(mset, 0.3, rng)
            assert np.linalg.norm(x - x_prime) == pytest.approx(0.3, rel=1e-10)
            support = set(np.nonzero(x)[0]) | set(np.nonzero(x_prime)[0])
            assert len(support) <= 2
            assert contains(mset, x) and contains(mset, x_prime)

    def test_low_rank_pair(self):
        mset = low_rank(1, 8, 8)
        rng = stream(7, "t")
        for _ in range(25):
            x, x_prime = sample_pair(mset, 1.2, rng)
            assert np.linalg.norm(x - x_prime, "fro") == pytest.approx(1.2, rel=1e-10)
            for u in (x, x_prime):
                sv = np.linalg.svd(u, compute_uv=False)
                assert sv[1] <= 1e-9 * max(sv[0], 1.0)

    def test_q1_distance(self):
        mset = sparse(3, 12, radius=2.0)
        rng = stream(8, "t")
        for _ in range(100):
            x, x_prime = sample_pair(mset, 0.7, rng, q=1)
            assert np.abs(x - x_prime).sum() == pytest.approx(0.7, rel=1e-10)
            assert np.abs(x).sum() <= 2.0 + 1e-9

    def test_points_stay_in_radius(self):
        mset = ball(6, radius=1.0)
        rng = stream(9, "t")
        for _ in range(200):
            d = rng.uniform(0, 2.0)
            x, x_prime = sample_pair(mset, d, rng)
            assert np.linalg.norm(x) <= 1.0 + 1e-9
            assert np.linalg.norm(x_prime) <= 1.0 + 1e-9

    def test_infeasible_distance(self):
        with pytest.raises(ValueError):
            sample_pair(sparse(2, 5, radius=1.0), 2.5, stream(10, "t"))

    def test_group_sparse_pair_shares_groups(self):
        mset = group_sparse(2, 3, 6)
        rng = stream(30, "t")
        for _ in range(50):
            x, x_prime = sample_pair(mset, 0.5, rng)
            assert np.linalg.norm(x - x_prime) == pytest.approx(0.5, rel=1e-10)
            blocks = (x != 0) | (x_prime != 0)
            active = {i for i in range(6) if blocks[i * 3 : (i + 1) * 3].any()}
            assert len(active) <= 2
            assert contains(mset, x) and contains(mset, x_prime)

    def test_subspace_union_pair_in_one_subspace(self):
        rng = stream(31, "t")
        bases = [rng.standard_normal((10, 2)) for _ in range(3)]
        mset = subspace_union(bases)
        for _ in range(30):
            x, x_prime = sample_pair(mset, 0.8, rng)
            assert np.linalg.norm(x - x_prime) == pytest.approx(0.8, rel=1e-10)
            in_one = any(
                np.linalg.norm(v - b @ (b.T @ v)) <= 1e-9
                for b in mset.params["bases"]
                for v in [x, x_prime, x - x_prime]
            )
            assert contains(mset, x) and contains(mset, x_prime) and in_one

    def test_dict_sparse_pair(self):
        rng = stream(32, "t")
        d = rng.standard_normal((8, 20))
        mset = dict_sparse(d, 3)
        for _ in range(30):
            x, x_prime = sample_pair(mset, 0.4, rng)
            assert np.linalg.norm(x - x_prime) == pytest.approx(0.4, rel=1e-10)
            assert contains(mset, x) and contains(mset, x_prime)

    def test_cloud_pairs(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        mset = finite_cloud(pts, radius=2.0)
        x, x_prime = sample_pair(mset, 1.0, stream(11, "t"))
        assert np.linalg.norm(x - x_prime) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            sample_pair(mset, 0.9, stream(12, "t"))


class TestSupportFunction:
    def test_examples(self):
        assert support_function(sparse(2, 3), [3.0, -1.0, 2.0]) == pytest.approx(math.sqrt(13))
        g = np.diag([3.0, 1.0]).ravel()
        assert support_function(low_rank(1, 2, 2), g) == pytest.approx(3.0)
        assert support_function(ball(2, radius=1.0), [3.0, 4.0]) == pytest.approx(5.0)

    def test_sparse_brute_force(self):
        # exhaustive max over all supports of size s, n <= 12, s <= 3
        rng = stream(13, "t")
        for n, s in [(6, 2), (9, 3), (12, 3)]:
            mset = sparse(s, n)
            for _ in range(20):
                g = rng.standard_normal(n)
                brute = max(
                    np.linalg.norm(g[list(sup)])
                    for sup in itertools.combinations(range(n), s)
                )
                assert support_function(mset, g) == pytest.approx(brute, abs=1e-12)

    def test_low_rank_brute_force(self):
        # random rank-one probes lower-bound the top singular value
        rng = stream(14, "t")
        mset = low_rank(1, 3, 3)
        g = rng.standard_normal(9)
        val = support_function(mset, g)
        best = 0.0
        gm = g.reshape(3, 3)
        for _ in range(100_000):
            u = rng.standard_normal(3)
            v = rng.standard_normal(3)
            u /= np.linalg.norm(u)
            v /= np.linalg.norm(v)
            best = max(best, abs(u @ gm @ v))
        assert best <= val + 1e-12
        assert best >= 0.98 * val

    def test_subspace_union_and_cloud(self):
        rng = stream(15, "t")
        bases = [rng.standard_normal((8, 2)) for _ in range(3)]
        mset = subspace_union(bases)
        g = rng.standard_normal(8)
        expected = max(np.linalg.norm(b.T @ g) for b in mset.params["bases"])
        assert support_function(mset, g) == pytest.approx(expected, rel=1e-12)
        cloud = finite_cloud(np.eye(3)[:1])
        assert support_function(cloud, [0.4, 1.0, -2.0]) == pytest.approx(0.4)

    def test_unsupported_kinds(self):
        with pytest.raises(ValueError):
            support_function(group_sparse(1, 2, 3), np.zeros(6))
        with pytest.raises(ValueError):
            support_function(dict_sparse(np.eye(4), 2), np.zeros(4))


class TestMeanWidth:
    def test_ball_matches_closed_form(self):
        for n in (1, 2, 8):
            est, se = mean_width_mc(ball(n, radius=1.0), 100_000, stream(16, "t", n))
            assert abs(est - ball_mean_width_exact(n)) <= 3 * se

    def test_single_point_cloud(self):
        est, se = mean_width_mc(finite_cloud(np.eye(5)[:1]), 100_000, stream(17, "t"))
        assert abs(est - math.sqrt(2 / math.pi)) <= 3 * se

    def test_sparse_order_bound(self):
        est, _ = mean_width_mc(sparse(4, 256), 10_000, stream(18, "t"))
        assert est <= math.sqrt(2 * 4 * math.log(math.e * 256 / 4)) + 2

    def test_minimum_trials(self):
        with pytest.raises(ValueError):
            mean_width_mc(ball(2), 50, stream(19, "t"))


class TestEntropyBound:
    def test_sparse_example(self):
        val = entropy_bound(sparse(4, 1024, radius=1.0), 0.01, q=2)
        assert val == pytest.approx(4 * math.log(math.e * 256) * math.log(201), rel=1e-12)
        assert abs(val - 138.8) <= 0.1

    def test_large_eta_saturates(self):
        mset = sparse(4, 64, radius=1.0)
        val = entropy_bound(mset, 2.0 * mset.radius, q=2)
        c_k = 4 * math.log(math.e * 16)
        assert val <= c_k * math.log(2) + 1e-12

    def test_union_adds_log_pieces(self):
        single = entropy_bound(sparse(4, 64), 0.1, q=2)
        union = entropy_bound(sparse(4, 64, pieces=10), 0.1, q=2)
        assert union == pytest.approx(single + math.log(10), rel=1e-12)

    def test_monotone_decreasing_in_eta(self):
        mset = sparse(4, 128)
        etas = [0.01, 0.05, 0.2, 1.0]
        vals = [entropy_bound(mset, e, q=2) for e in etas]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_q_restrictions(self):
        assert entropy_bound(sparse(2, 16), 0.1, q=1) > 0
        with pytest.raises(ValueError):
            entropy_bound(low_rank(1, 4, 4), 0.1, q=1)
        with pytest.raises(ValueError):
            entropy_bound(ball(4), 0.1, q=1)

    def test_ball_uses_exact_width(self):
        val = entropy_bound(ball(8, radius=1.0), 0.1, q=2)
        w = ball_mean_width_exact(8)
        assert val == pytest.approx((w / 0.1) ** 2, rel=1e-12)


class TestRequiredM:
    def test_reqm_example(self):
        cfg = QuantConfig(1.0)
        mset = sparse(4, 1024, radius=1.0)
        got = required_m("p1", mset, 0.1, cfg, C=1.0, q=2)
        # direct recomputation of the stated formula
        expected = math.ceil(100 * 4 * math.log(math.e * 256) * math.log(201))
        assert got == expected == 13885

    def test_monotone_decreasing_in_eps(self):
        cfg = QuantConfig(1.0)
        mset = sparse(4, 256)
        vals = [required_m("p1", mset, e, cfg) for e in (0.05, 0.1, 0.2, 0.5, 0.9)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_p2_needs_fewer_than_p3(self):
        cfg = QuantConfig(0.5)
        mset = sparse(4, 256)
        for eps in (0.1, 0.3, 0.7):
            assert required_m("p2", mset, eps, cfg) <= required_m("p3", mset, eps, cfg)

    def test_validation(self):
        cfg = QuantConfig(1.0)
        with pytest.raises(ValueError):
            required_m("p4", sparse(2, 8), 0.1, cfg)
        with pytest.raises(ValueError):
            required_m("p1", sparse(2, 8), 1.5, cfg)
        with pytest.raises(ValueError):
            required_m("p1", sparse(2, 8), 0.1, cfg, C=-1)
