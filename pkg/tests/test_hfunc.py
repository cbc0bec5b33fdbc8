import math

import numpy as np
import pytest

from prophet_kit.hfunc import h_eval, h_inner, h_limit, h_lipschitz_check, segments


def h_scan(s, x, step=1e-6):
    """Dense scan of the inner expression over t in [0, x)."""
    t = np.arange(0.0, x, step)
    k = np.arange(0, int(1 / x) + 2)
    den = 1 - t[:, None] - k[None, :] * x
    with np.errstate(divide="ignore"):
        terms = np.where(den > 0, s * x - x / np.where(den > 0, den, 1.0), 0.0)
    return float(np.max(t + np.maximum(terms, 0).sum(axis=1) / (s - 1)))


class TestInner:
    def test_full_x(self):
        assert h_inner(2, 1.0, 0.0) == pytest.approx(1.0)

    def test_half_at_zero(self):
        # k=0 term: 2*0.5 - 0.5/1 = 0.5; k=1 term clamps to 0
        assert h_inner(2, 0.5, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_half_stationary(self):
        assert h_inner(2, 0.5, 1 - math.sqrt(0.5)) == pytest.approx(2 - math.sqrt(2), abs=1e-12)

    def test_rejects_t_out_of_range(self):
        with pytest.raises(ValueError):
            h_inner(2, 0.5, 0.5)

    @pytest.mark.parametrize("s", [2.0, 2.5, 3.0])
    @pytest.mark.parametrize("x", [0.05, 0.2, 0.37, 0.6, 0.9])
    def test_segments_concave(self, s, x):
        for lo, hi, _ in segments(s, x):
            if hi - lo < 1e-9:
                continue
            t = np.linspace(lo, hi, 7)[1:-1]
            y = np.array([h_inner(s, x, float(v)) for v in t])
            slopes = np.diff(y) / np.diff(t)
            assert np.all(np.diff(slopes) <= 1e-9)


class TestEval:
    def test_one(self):
        assert h_eval(2, 1.0) == pytest.approx(1.0, abs=1e-9)

    def test_small_x(self):
        assert abs(h_eval(2, 1e-4) - (1 - math.log(2))) <= 2e-4

    def test_half(self):
        assert h_eval(2, 0.5) == pytest.approx(2 - math.sqrt(2), abs=1e-9)

    def test_zero_convention(self):
        assert h_eval(3, 0.0) == h_limit(3) == pytest.approx(1 - math.log(3) / 2)

    @pytest.mark.parametrize("s", [2.0, 2.5, 3.0])
    def test_limit_rate(self, s):
        assert abs(h_eval(s, 1e-4) - h_limit(s)) <= 1.5 * (s + 1) / 2 * 1e-4 + 1e-9

    @pytest.mark.parametrize("s,x_max", [(2.0, 1.0), (2.5, 0.6), (3.0, 0.35)])
    def test_range(self, s, x_max):
        # each s is only used for x0 up to x_max by the certification schedule
        vals = np.array([h_eval(s, x) for x in np.linspace(0, x_max, 1001)])
        assert np.all((vals >= 0) & (vals <= 1 + 1e-12))

    @pytest.mark.parametrize("s,expected", [(3.0, 2.5 - math.sqrt(2)), (2.5, 8 / 3 - 2 * math.sqrt(2 / 3))])
    def test_exceeds_one_near_full(self, s, expected):
        # stationary point of t + (s - 1/(1-t))/(s-1), single active term
        assert h_eval(s, 1.0) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("s", [2.0, 3.0])
    @pytest.mark.parametrize("x", [0.1, 0.3, 0.5, 0.7, 1.0])
    def test_dense_scan(self, s, x):
        assert h_eval(s, x) == pytest.approx(h_scan(s, x), abs=1e-9 + (s + 1) / 2 * 1e-6)

    def test_frozen_values(self):
        # reference values from the dense scan above
        assert h_eval(2, 0.3) == pytest.approx(0.4729914061, abs=1e-9)
        assert h_eval(3, 0.3) == pytest.approx(0.6166735460, abs=1e-9)

    @pytest.mark.parametrize("bad", [(1.0, 0.5), (2.0, -0.1), (2.0, 1.1)])
    def test_domain(self, bad):
        with pytest.raises(ValueError):
            h_eval(*bad)


class TestLipschitz:
    @pytest.mark.parametrize("pair,s", [((0.3, 0.3), 2), ((0.4, 0.5), 2), ((0.1, 0.9), 3)])
    def test_examples(self, pair, s):
        assert h_lipschitz_check(s, *pair)
