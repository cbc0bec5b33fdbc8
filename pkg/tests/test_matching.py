import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from prophet_kit.hfunc import h_eval
from prophet_kit.matching.algorithms import (NotRegularError, car_batch, car_run, hybrid_batch, hybrid_run, mam_batch,
                                             mam_run, stage_rate_sums)
from prophet_kit.matching.bounds import (BETA0, BETA1, c_terms, car_alpha, car_residual, curve_rows, gamma_car,
                                         gamma_hybrid, gamma_mam, hybrid_bound_check, mam_f1, mam_f2)
from prophet_kit.matching.overlap import overlap_mu
from prophet_kit.matching.model import (MatchingInputError, MatchingInstance, TypeGraph, brute_force_marginals,
                                        brute_force_offline, check_lp, dump_matching, is_regular,
                                        normalize_regular, parse_matching, random_graph)

E1 = 1 - math.exp(-1)


def two_by_two():
    return TypeGraph(2, ("a", "b"), np.full((2, 2), 0.5), np.array([[3.0, 1.0], [1.0, 2.0]]))


def one_by_one(x=1.0, w=1.0):
    g = TypeGraph(1, ("a",), np.array([[1.0]]), np.array([[w]]))
    return g, np.full((1, 1, 1), x)


class TestCheckLP:
    def test_zero(self):
        g = two_by_two()
        assert check_lp(g, np.zeros((2, 2, 2)))

    def test_type_violation(self):
        g = two_by_two()
        x = np.zeros((2, 2, 2))
        x[1, 0, 1] = 0.3
        x[1, 1, 1] = 0.3
        res = check_lp(g, x)
        assert not res and res.kind == "type" and res.where == (1, "b")
        assert res.lhs == pytest.approx(0.6)

    def test_subset_violation(self):
        g = two_by_two()
        x = np.zeros((2, 2, 2))
        x[:, 0, 0] = 0.5  # both online vertices push type a onto u=0: 1 > 1 - 0.25
        res = check_lp(g, x)
        assert not res and res.kind == "subset" and res.where == (0, ("a",))
        assert res.rhs == pytest.approx(0.75)

    def test_offline_marginals_feasible(self):
        g = two_by_two()
        assert check_lp(g, brute_force_marginals(g))

    def test_size_cap(self):
        g = TypeGraph(1, tuple(range(17)), np.full((1, 17), 1 / 17), np.zeros((1, 17)))
        with pytest.raises(MatchingInputError):
            check_lp(g, np.zeros((1, 1, 17)))


class TestNormalize:
    def test_identity_when_regular(self):
        g, x = one_by_one()
        out = normalize_regular(g, x)
        assert out.graph.n_offline == 1 and out.graph.n_online == 1
        np.testing.assert_array_equal(out.x, x)

    def test_half(self):
        g, x = one_by_one(0.5)
        out = normalize_regular(g, x)
        assert out.graph.n_offline == 2 and out.graph.n_online == 2
        assert is_regular(out.x)
        assert out.x[0, 0, 0] == 0.5
        assert check_lp(out.graph, out.x)

    def test_empty(self):
        g = two_by_two()
        out = normalize_regular(g, np.zeros((2, 2, 2)))
        assert is_regular(out.x)
        np.testing.assert_array_equal(out.x[:2, :2, :2], 0.0)
        assert np.all(out.graph.weights[2:, :] == 0) and np.all(out.graph.weights[:, 2:] == 0)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_random(self, seed, n, U, T):
        g = random_graph(np.random.default_rng(seed), n, U, T)
        x = brute_force_marginals(g)
        out = normalize_regular(g, x)
        assert is_regular(out.x)
        np.testing.assert_array_equal(out.x[:n, :U, :T], x)
        if out.graph.n_types <= 16:
            assert check_lp(out.graph, out.x, tol=1e-9)
        assert out.lp_value() == pytest.approx(MatchingInstance(g, x).lp_value())


class TestMu:
    def test_figure_values(self):
        mu = overlap_mu([0.4, 0.24, 0.36])
        np.testing.assert_allclose(mu, [[0, 0.14, 0.26], [0.14, 0, 0.10], [0.26, 0.10, 0]], atol=1e-15)

    def test_single(self):
        np.testing.assert_array_equal(overlap_mu([1.0]), [[0.0]])

    def test_halves(self):
        np.testing.assert_allclose(overlap_mu([0.5, 0.5]), [[0, 0.5], [0.5, 0]])

    def test_domain(self):
        with pytest.raises(ValueError):
            overlap_mu([0.7, 0.4])
        with pytest.raises(ValueError):
            overlap_mu([-0.1, 0.5])

    def test_identities_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            k = rng.integers(1, 7)
            rho = rng.dirichlet(np.ones(k))
            mu = overlap_mu(rho)
            np.testing.assert_array_equal(mu, mu.T)
            assert np.all(mu >= 0)
            np.testing.assert_allclose(mu.sum(axis=1), rho - np.maximum(2 * rho - 1, 0), atol=1e-12)

    def test_partial_rows_bounded(self):
        # with total mass below one some partners land in the uncovered tail
        rng = np.random.default_rng(1)
        for _ in range(2000):
            rho = rng.dirichlet(np.ones(rng.integers(1, 7))) * rng.uniform(0.2, 1.0)
            mu = overlap_mu(rho)
            assert np.all(mu.sum(axis=1) <= rho - np.maximum(2 * rho - 1, 0) + 1e-12)


class TestBounds:
    def test_mam_endpoints(self):
        assert gamma_mam(0.0) == pytest.approx(0.645, abs=1e-3)
        assert gamma_mam(1.0) == pytest.approx(E1, abs=1e-9)

    def test_mam_half(self):
        h = 2 - math.sqrt(2)
        b0, b1 = BETA0, BETA1
        c1 = (1 - math.exp(-h * b0)) / h
        c2 = math.exp(-h * b0) * (1 - math.exp(-(b1 - b0)))
        c3 = math.exp(-h * b0 - (b1 - b0)) * (1 - math.exp(-(2 - h) * (1 - b1))) / (2 - h)
        expected = min(c1 + c2 + c3, c2 + (2 - math.exp(-(b1 - b0))) * c3)
        assert gamma_mam(0.5) == pytest.approx(expected, abs=1e-9)

    def test_c_terms_are_stage_integrals(self):
        h = 0.4
        G = lambda t: h * min(t, BETA0) + min(max(t - BETA0, 0), BETA1 - BETA0) + (2 - h) * max(t - BETA1, 0)
        ref = [quad(lambda t: math.exp(-G(t)), a, b)[0] for a, b in ((0, BETA0), (BETA0, BETA1), (BETA1, 1))]
        np.testing.assert_allclose(c_terms(h), ref, rtol=1e-10)
        assert c_terms(0.0)[0] == BETA0

    def test_monotone(self):
        hs = np.linspace(0, 1, 1000)
        f1 = np.array([mam_f1(h) for h in hs])
        f2 = np.array([mam_f2(h) for h in hs])
        assert np.all(np.diff(f1) <= 1e-15) and np.all(np.diff(f2) <= 1e-15)

    def test_car_alpha(self):
        assert car_alpha(0.0) == 0.0
        assert car_alpha(1.0) == pytest.approx(2 - math.sqrt(3), abs=1e-12)

    def test_car_residual(self):
        xs = np.random.default_rng(1).uniform(size=1000)
        assert max(car_residual(float(x)) for x in xs) < 1e-10

    def test_car_values(self):
        assert gamma_car(0.0) == pytest.approx(E1, abs=1e-9)
        assert gamma_car(1.0) == pytest.approx(math.sqrt(3) - 1, abs=1e-9)
        a = car_alpha(0.5)
        assert gamma_car(0.5) == pytest.approx(quad(lambda t: math.exp(-0.5 * t), a, 1)[0], abs=1e-12)

    def test_hybrid(self):
        res = hybrid_bound_check(1e-3)
        assert res.passed and res.worst_value >= 0.641
        assert gamma_hybrid(0.0) == pytest.approx(0.6424, abs=2e-4)
        assert gamma_hybrid(1.0) == pytest.approx(0.8 * E1 + 0.2 * (math.sqrt(3) - 1), abs=1e-12)

    def test_curve_rows(self):
        rows = list(curve_rows(0.1))
        assert len(rows) == 11 and rows[0][0] == 0.0 and rows[-1][0] == 1.0

    def test_uses_h2(self):
        assert gamma_mam(0.3) == pytest.approx(min(mam_f1(h_eval(2, 0.3)), mam_f2(h_eval(2, 0.3))))


class TestOffline:
    def test_single(self):
        assert brute_force_offline(one_by_one(w=3.0)[0]) == 3.0

    def test_two_by_two(self):
        assert brute_force_offline(two_by_two()) == pytest.approx(4.25)

    def test_zero_weights(self):
        g = TypeGraph(2, ("a", "b"), np.full((2, 2), 0.5), np.zeros((2, 2)))
        assert brute_force_offline(g) == 0.0

    def test_cap(self):
        g = TypeGraph(1, tuple(range(10)), np.full((7, 10), 0.1), np.ones((1, 10)))
        with pytest.raises(MatchingInputError):
            brute_force_offline(g)


class TestRunners:
    def test_requires_regular(self):
        g, x = one_by_one(0.5)
        with pytest.raises(NotRegularError):
            mam_run(MatchingInstance(g, x), np.random.default_rng(0))

    def test_stage_sums(self):
        g = random_graph(np.random.default_rng(4), 3, 3, 2)
        inst = normalize_regular(g, brute_force_marginals(g))
        sums = stage_rate_sums(inst)
        h_u = np.maximum(2 * inst.x - inst.graph.probs[:, None, :], 0).sum(axis=(0, 2))
        np.testing.assert_allclose(sums[0], h_u, atol=1e-9)
        np.testing.assert_allclose(sums[1], 1.0, atol=1e-9)
        np.testing.assert_allclose(sums[2], 2 - h_u, atol=1e-9)

    def test_single_edge_rates(self):
        inst = MatchingInstance(*one_by_one())
        n = 200_000
        for batch, expected in ((mam_batch, E1), (car_batch, math.sqrt(3) - 1)):
            f = (batch(inst, np.random.default_rng(3), n).partner[:, 0] == 0).mean()
            assert abs(f - expected) <= 4 * math.sqrt(expected * (1 - expected) / n)

    def test_zero_x_never_matches_original(self):
        g = two_by_two()
        inst = normalize_regular(g, np.zeros((2, 2, 2)))
        for batch in (mam_batch, car_batch):
            out = batch(inst, np.random.default_rng(0), 2000)
            assert not np.any((out.partner[:, :2] >= 0) & (out.partner[:, :2] < 2))

    def test_single_runs(self):
        inst = MatchingInstance(*one_by_one())
        for run in (mam_run, car_run, hybrid_run):
            edges = run(inst, np.random.default_rng(0))
            assert edges in ([], [(0, 0, 0)])

    @pytest.mark.parametrize("weight,runner", [(1.0, mam_batch), (0.0, car_batch)])
    def test_hybrid_coin(self, weight, runner):
        g = two_by_two()
        inst = normalize_regular(g, brute_force_marginals(g))
        rng = np.random.default_rng(9)
        rng.random(500)
        ref = runner(inst, rng, 500)
        out = hybrid_batch(inst, np.random.default_rng(9), 500, mam_weight=weight)
        np.testing.assert_array_equal(out.partner, ref.partner)

    def test_matched_once(self):
        g = random_graph(np.random.default_rng(6), 4, 2, 2)
        inst = normalize_regular(g, brute_force_marginals(g))
        for batch in (mam_batch, car_batch):
            out = batch(inst, np.random.default_rng(1), 5000)
            for row in out.partner:
                used = row[row >= 0]
                assert len(used) == len(set(used))


class TestFormat:
    def test_round_trip(self):
        g = two_by_two()
        inst = MatchingInstance(g, brute_force_marginals(g))
        back = parse_matching(dump_matching(inst))
        assert back.graph.types == g.types
        np.testing.assert_allclose(back.x, inst.x)
        np.testing.assert_allclose(back.graph.weights, g.weights)

    def test_bad(self):
        with pytest.raises(MatchingInputError):
            parse_matching('{"offline": 1}')
