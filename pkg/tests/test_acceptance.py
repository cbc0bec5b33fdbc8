"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL/SKIP line that is printed in the terminal
summary.  Criterion 5 runs only with PROPHET_KIT_SLOW=1.
"""

import math

import numpy as np
import pytest

from conftest import ACCEPTANCE, SLOW
from prophet_kit.hfunc import h_eval, h_lipschitz_check
from prophet_kit.instance import derived_stats, gen_hard_instance, random_instance
from prophet_kit.matching.algorithms import car_batch, hybrid_batch, mam_batch
from prophet_kit.matching.bounds import car_residual, gamma_car, gamma_mam, hybrid_bound_check
from prophet_kit.matching.overlap import overlap_mu
from prophet_kit.matching.model import (TypeGraph, brute_force_marginals, brute_force_offline, check_lp,
                                        normalize_regular, random_graph)
from prophet_kit.montecarlo import (dominance_report, estimate, matching_bounds, matching_runner, policy_bounds,
                                    policy_runner)
from prophet_kit.policies import exact_accept_probs, policy_constant, policy_main, z_select
from prophet_kit.ratio import (CONSTANT_2, FULL_SCHEDULE, GammaPoint, certify_grid, default_threads, gamma_eval,
                               optimize_betas, warmup_terms)

E1 = 1 - math.exp(-1)
MC_TRIALS = 10**6


def record(n, title, ok, detail):
    ACCEPTANCE[n] = (title, "PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {n} ({title}): {detail}"


@pytest.fixture(scope="module")
def ci_certificate():
    return certify_grid(1 / 200, CONSTANT_2, 0.66, threads=default_threads(), keep_cells=True)


def test_c01_warmup_exactness():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        stats = derived_stats(random_instance(rng, int(rng.integers(1, 5))))
        got = exact_accept_probs(stats.instance, policy_constant(stats))
        for i in range(stats.instance.n_items):
            worst = max(worst, float(np.max(np.abs(got[i] - E1 * stats.x[i]))))
    record(1, "constant-rate exactness", worst <= 1e-7, f"max |P - (1-1/e)x| = {worst:.2e} over 20 instances")


def test_c02_step_constants():
    a, b = warmup_terms(1 - math.log(2), 0.367)
    g = gamma_eval(GammaPoint(0, 0, 2, 0, 0.367, 0.367))
    ok = a > 0.347 and b > 0.347 and abs(g - 0.694) <= 5e-4
    record(2, "step warm-up constants", ok, f"(a) = {a:.6f}, (b) = {b:.6f}, gamma = {g:.6f}")


def test_c03_h_function():
    h1, hs, hh = h_eval(2, 1.0), h_eval(2, 1e-4), h_eval(2, 0.5)
    rng = np.random.default_rng(3)
    lip_fail = 0
    for s in (2.0, 2.5, 3.0):
        for _ in range(10_000):
            lo, hi = np.sort(rng.uniform(size=2))
            lip_fail += not h_lipschitz_check(s, float(lo), float(hi))
    ok = (abs(h1 - 1) <= 1e-9 and abs(hs - (1 - math.log(2))) <= 2.5e-4
          and abs(hh - (2 - math.sqrt(2))) <= 1e-6 and lip_fail == 0)
    record(3, "h-function", ok, f"h2(1) = {h1:.12f}, h2(1e-4) = {hs:.6f}, h2(0.5) = {hh:.9f}, "
                                f"Lipschitz failures = {lip_fail}/30000")


def test_c04_certify_ci(ci_certificate):
    cert = ci_certificate
    w = cert.worst
    record(4, "CI-tier certificate (eps=1/200, s=2, target 0.66)", cert.passed,
           f"{cert.failed_cells}/{cert.cells} cells fail; worst cell (x0={w.x0:g}, h0={w.h0:g}) "
           f"gamma = {w.gamma:.6f}, margin = {w.margin:+.6f}")


def test_ci_grid_lower_target(ci_certificate):
    """Same grid and witnesses judged against 0.645 (not an acceptance criterion)."""
    cert = ci_certificate.retarget(0.645)
    assert cert.passed, cert.worst


@pytest.mark.slow
def test_c05_certify_full():
    threads = default_threads()
    const = certify_grid(1e-4, CONSTANT_2, 0.686, threads=threads, warm_start=True)
    sched = certify_grid(1e-4, FULL_SCHEDULE, 0.688, threads=threads, warm_start=True)
    record(5, "full-tier certificates", const.passed and sched.passed,
           f"s=2/0.686: {const.failed_cells} failed (worst margin {const.worst.margin:+.2e}); "
           f"schedule/0.688: {sched.failed_cells} failed (worst margin {sched.worst.margin:+.2e})")


if not SLOW:
    ACCEPTANCE[5] = ("full-tier certificates", "SKIP", "opt-in; set PROPHET_KIT_SLOW=1 (needs ~5e7 cell searches)")


def test_c06_matching_constants():
    vals = {
        "mam(0)": (gamma_mam(0.0), 0.645, 1e-3),
        "mam(1)": (gamma_mam(1.0), E1, 1e-9),
        "car(0)": (gamma_car(0.0), E1, 1e-9),
        "car(1)": (gamma_car(1.0), math.sqrt(3) - 1, 1e-9),
    }
    res = max(car_residual(float(x)) for x in np.linspace(0, 1, 1000))
    ok = all(abs(v - t) <= tol for v, t, tol in vals.values()) and res < 1e-10
    detail = ", ".join(f"{k} = {v:.9f}" for k, (v, _, _) in vals.items()) + f", alpha residual = {res:.1e}"
    record(6, "matching constants", ok, detail)


def test_c07_hybrid_bound():
    res = hybrid_bound_check(1e-3)
    record(7, "hybrid bound on x-grid", res.passed and res.worst_value >= 0.641,
           f"min 0.8 MAM + 0.2 CAR = {res.worst_value:.6f} at x = {res.worst_x:g}")


def test_c08_mu_table():
    mu = overlap_mu([0.4, 0.24, 0.36])
    exact = abs(mu[0, 1] - 0.14) < 1e-15 and abs(mu[0, 2] - 0.26) < 1e-15 and abs(mu[1, 2] - 0.10) < 1e-15
    rng = np.random.default_rng(8)
    worst_sym = worst_row = 0.0
    for _ in range(10_000):
        rho = rng.dirichlet(np.ones(rng.integers(1, 8)))
        m = overlap_mu(rho)
        worst_sym = max(worst_sym, float(np.max(np.abs(m - m.T))))
        worst_row = max(worst_row, float(np.max(np.abs(m.sum(axis=1) - (rho - np.maximum(2 * rho - 1, 0))))))
    ok = exact and worst_sym == 0.0 and worst_row <= 1e-12
    record(8, "mu table", ok, f"mu = ({mu[0, 1]:.2f}, {mu[0, 2]:.2f}, {mu[1, 2]:.2f}), "
                              f"symmetry gap = {worst_sym:g}, row-sum error = {worst_row:.1e}")


def tiny_matching_instances():
    iid = TypeGraph(3, (0, 1, 2), np.full((6, 3), 1 / 3), np.array([[3.0, 1, 2], [1, 3, 1], [2, 2, 3]]))
    two = TypeGraph(2, ("a", "b"), np.full((2, 2), 0.5), np.array([[3.0, 1.0], [1.0, 2.0]]))
    mixed = random_graph(np.random.default_rng(77), 3, 2, 2)
    return [iid, two, mixed]


def test_c09_monte_carlo_dominance():
    threads = default_threads()
    notes, ok = [], True
    stats = derived_stats(gen_hard_instance(20, 0.5))
    zt = z_select(stats)
    betas, gamma = optimize_betas(stats.x0, zt.h0, 2.0)
    rep = estimate(policy_runner(stats.instance, policy_main(stats, 2.0, betas, zt)), MC_TRIALS, 9, threads)
    dom = dominance_report(rep, policy_bounds(stats.instance, stats.x, gamma))
    ok &= dom.passed
    notes.append(f"main: worst {dom.margin.min():+.2f} se")
    curves = {"mam": (mam_batch, gamma_mam), "car": (car_batch, gamma_car),
              "hybrid": (hybrid_batch, lambda x: 0.641)}
    for k, g in enumerate(tiny_matching_instances()):
        inst = normalize_regular(g, brute_force_marginals(g))
        for name, (batch, curve) in curves.items():
            rep = estimate(matching_runner(inst, batch), MC_TRIALS, 100 + k, threads)
            dom = dominance_report(rep, matching_bounds(inst, curve))
            ok &= dom.passed
            notes.append(f"{name}#{k}: {dom.margin.min():+.2f}")
    record(9, f"Monte Carlo dominance ({MC_TRIALS:.0e} trials)", ok, ", ".join(notes))


def test_c10_offline_oracle():
    rng = np.random.default_rng(10)
    trials, block = 200_000, 20_000
    notes, ok = [], True
    for k in range(5):
        g = random_graph(rng, int(rng.integers(2, 4)), int(rng.integers(1, 4)), 2)
        x = brute_force_marginals(g)
        feasible = bool(check_lp(g, x))
        opt = brute_force_offline(g)
        inst = normalize_regular(g, x)
        w = np.concatenate([hybrid_batch(inst, np.random.default_rng(np.random.SeedSequence([k, b])), block)
                            .weight(inst) for b in range(trials // block)])
        ratio = w.mean() / opt
        se = w.std(ddof=1) / math.sqrt(trials) / opt
        ok &= feasible and ratio >= 0.641 - 4 * se
        notes.append(f"#{k}: lp_ok={feasible} ratio={ratio:.4f}")
    record(10, "offline oracle consistency", ok, ", ".join(notes))
