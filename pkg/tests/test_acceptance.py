"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Seeds are fixed up front. Window half-widths follow the H = 5 tau_c rule,
with tau_c taken from the known synthetic model where one is defined.
"""

import itertools
import time
import warnings

import numpy as np
import pytest

from nphc.analysis import ancestor_fraction_from, slotwise_estimate
from nphc.cumulants import (
    CumulantConfig,
    estimate_cumulants,
    estimate_cumulants_many,
    estimate_lambda,
    naive_triangle_pair_sum,
    select_H,
    triangle_pair_sum,
)
from nphc.estimator import NphcConfig, estimate, kappa, loss, loss_gradient
from nphc.model import (
    HawkesModel,
    g_from_r,
    matrices_from_g,
    spectral_norm,
    theoretical_cumulants,
    theoretical_third_cumulant,
)
from nphc.simulate import BLOCK_BETAS, SimConfig, block_design, block_design_g, simulate

from oracles import random_stable_g


@pytest.fixture(autouse=True)
def _quiet():
    # non-normal random models trigger the singular-value warning by design
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def test_criterion_1_poisson_null(criterion):
    t0 = time.perf_counter()
    lam_true = np.array([1.0, 2.0, 3.0])
    maes, mus, lams, Hs = [], [], [], []
    for seed in range(10):
        s = simulate(HawkesModel.poisson(lam_true), SimConfig(horizon=1e4, seed=seed))
        # lag grid at a tenth of the pooled inter-event time; with no decay H = 5 * grid[0]
        h = 0.1 / estimate_lambda(s).sum()
        H = select_H(s, h * np.arange(1, 41))
        res = estimate(estimate_cumulants(s, CumulantConfig(H=H)))
        maes.append(np.abs(res.G_hat).mean())
        mus.append(res.mu_hat)
        lams.append(res.Lambda_hat)
        Hs.append(H)
    mu_rel = np.abs(np.mean(mus, axis=0) / np.mean(lams, axis=0) - 1.0)
    per_seed = np.max(np.abs(np.array(mus) / np.array(lams) - 1.0))
    elapsed = time.perf_counter() - t0
    ok = np.mean(maes) < 0.05 and np.all(mu_rel < 0.05) and elapsed < 30
    criterion(
        1, ok,
        f"Poisson null, H={np.mean(Hs):.3f}s: mean |G| {np.mean(maes):.4f} (worst seed {np.max(maes):.4f}) < 0.05; "
        f"seed-averaged mu rel err {mu_rel.max():.4f} < 0.05 (worst single seed {per_seed:.3f}); {elapsed:.1f}s < 30s",
    )


def test_criterion_2_one_dimensional_exponential(criterion):
    t0 = time.perf_counter()
    m = HawkesModel.exponential([1.0], [[0.5]], 1.0)
    # covariance density decays like exp(-beta (1 - g) t): tau_c = 2 s
    cfg = CumulantConfig(H=5 * 2.0)
    g_hat = []
    for seed in range(10):
        s = simulate(m, SimConfig(horizon=1e5, seed=seed, burn_in=50.0))
        g_hat.append(estimate(estimate_cumulants(s, cfg)).G_hat[0, 0])
    inside = int(np.sum((np.array(g_hat) >= 0.45) & (np.array(g_hat) <= 0.55)))
    cs = estimate_cumulants(simulate(m, SimConfig(horizon=1e6, seed=100, burn_in=50.0)), cfg)
    c_rel = abs(cs.C[0, 0] / 8.0 - 1.0)
    k_rel = abs(cs.Kc[0, 0] / 64.0 - 1.0)
    elapsed = time.perf_counter() - t0
    ok = inside >= 9 and c_rel < 0.05 and k_rel < 0.10 and elapsed < 120
    criterion(
        2, ok,
        f"1D exponential: G in [0.45, 0.55] on {inside}/10 seeds (range {min(g_hat):.3f}-{max(g_hat):.3f}); "
        f"T=1e6 C={cs.C[0, 0]:.3f} ({c_rel:.1%} < 5%), K={cs.Kc[0, 0]:.2f} ({k_rel:.1%} < 10%); {elapsed:.0f}s < 120s",
    )


def test_criterion_3_block_designs_shape_robustness(criterion):
    t0 = time.perf_counter()
    G_true = block_design_g()
    # 1e5 events per component: rate 0.01/s over 1e7 s
    rate, T = 0.01, 1e7
    # slowest rectangular support ends at gamma + 1/beta_min = 10.5 s
    H = 5 * (0.5 + 1.0 / min(BLOCK_BETAS))
    fits = {}
    for family in ("rectangular", "power_law"):
        s = simulate(block_design(family, rate_scale=rate), SimConfig(horizon=T, seed=1, burn_in=5000.0))
        fits[family] = estimate(estimate_cumulants(s, CumulantConfig(H=H))).G_hat
        events = s.counts.mean()
    err = {k: np.abs(v - G_true).mean() for k, v in fits.items()}
    agree = np.abs(fits["rectangular"] - fits["power_law"]).mean()
    elapsed = time.perf_counter() - t0
    ok = err["rectangular"] < 0.05 and err["power_law"] < 0.05 and agree < 0.05 and elapsed < 600
    criterion(
        3, ok,
        f"Rect10/PLaw10 (H={H:g}s, ~{events:.0f} events/component): mean-abs error rect {err['rectangular']:.4f}, "
        f"plaw {err['power_law']:.4f} < 0.05; shape agreement {agree:.4f} < 0.05; {elapsed:.0f}s < 600s",
    )


def test_criterion_4_exact_moment_recovery(criterion):
    rng = np.random.default_rng(0)
    recovered, flagged, failed, worst = 0, 0, [], 0.0
    for k in range(20):
        d = int(rng.integers(1, 6))
        G = random_stable_g(rng, d)
        mu = rng.uniform(0.2, 2.0, d)
        assert spectral_norm(G) < 0.9
        res = estimate(theoretical_cumulants(G, mu), NphcConfig(random_starts=60, seed=k))
        err = np.max(np.abs(res.G_hat - G))
        if err < 1e-4:
            recovered += 1
            worst = max(worst, err)
        elif res.alternative_optima:
            flagged += 1
        else:
            failed.append((k, d, err))
    criterion(
        4, not failed,
        f"exact moments: {recovered}/20 recovered (worst max-abs {worst:.1e} < 1e-4), "
        f"{flagged} flagged as alternative optima, unflagged failures {failed}",
    )


def test_criterion_5_gradient_check(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for d in (2,) * 10 + (3,) * 10:
        target = theoretical_cumulants(random_stable_g(rng, d), rng.uniform(0.2, 2.0, d))
        kap = kappa(target.C, target.Kc)
        R = np.eye(d) + rng.uniform(-0.3, 0.8, (d, d))
        fd = np.zeros_like(R)
        for idx in np.ndindex(R.shape):
            E = np.zeros_like(R)
            E[idx] = 1e-6 * max(1.0, abs(R[idx]))
            fd[idx] = (loss(R + E, target, kap) - loss(R - E, target, kap)) / (2 * E[idx])
        g = loss_gradient(R, target, kap)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    criterion(5, worst < 1e-5, f"analytic gradient vs central differences at 20 points: worst rel err {worst:.2e} < 1e-5")


def test_criterion_6_pair_sum_oracle(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for case in range(50):
        T = float(rng.uniform(50, 500))
        n = int(rng.integers(0, 2001))
        # a third of the cases sit on a grid so exact 2H ties occur
        grid = 0.25 if case % 3 == 0 else None
        z = np.sort(rng.uniform(0, T, n))
        n_a = int(rng.integers(0, n + 1))
        a, b = z[:n_a], z[n_a:]
        if grid:
            a, b = np.unique(np.round(a / grid) * grid), np.unique(np.round(b / grid) * grid)
        H = float(rng.choice([0.25, 0.5, rng.uniform(0.01, 5.0)]))
        fast, slow = triangle_pair_sum(a, b, H), naive_triangle_pair_sum(a, b, H)
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1.0))
    criterion(6, worst < 1e-12, f"linear-time pair sum vs O(n^2) double sum on 50 cases: worst rel diff {worst:.1e}")


def test_criterion_7_algebraic_identities(criterion):
    rng = np.random.default_rng(7)
    sym_ok, round_trip, partition = True, 0.0, 0.0
    for _ in range(100):
        d = int(rng.integers(1, 7))
        G = random_stable_g(rng, d)
        mu = rng.uniform(0.1, 2.0, d)
        K = theoretical_third_cumulant(G, mu)
        sym_ok &= all(np.array_equal(K, np.transpose(K, p)) for p in itertools.permutations(range(3)))
        m = matrices_from_g(G)
        round_trip = max(round_trip, np.max(np.abs(g_from_r(m.R) - G)), np.max(np.abs(m.Psi - (m.R - np.eye(d)))))
        lam = m.R @ mu
        target = rng.choice(d, size=int(rng.integers(1, d + 1)), replace=False)
        perm = rng.permutation(d)
        cut = int(rng.integers(0, d + 1))
        parts = [p for p in (perm[:cut], perm[cut:]) if p.size]
        total = sum(ancestor_fraction_from(m.Psi, mu, lam, p, target) for p in parts)
        partition = max(partition, abs(total - (1.0 - mu[target].sum() / lam[target].sum())))
    ok = sym_ok and round_trip < 1e-10 and partition < 1e-10
    criterion(
        7, ok,
        f"K permutation symmetry exact: {sym_ok}; R/G/Psi round trip {round_trip:.1e} < 1e-10; "
        f"ancestor partition identity {partition:.1e} < 1e-10",
    )


def test_criterion_8_complexity(criterion):
    n = 5000
    cfg = CumulantConfig(H=1.0)

    def timed(d):
        s = simulate(HawkesModel.poisson(np.ones(d)), SimConfig(horizon=float(n), seed=d))
        estimate_cumulants(s, cfg)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            estimate_cumulants(s, cfg)
            best = min(best, time.perf_counter() - t0)
        return best

    times = {d: timed(d) for d in (4, 8, 16)}
    ratios = [times[8] / times[4], times[16] / times[8]]
    criterion(
        8, max(ratios) <= 4.6,
        f"cumulant time at {n} events/component, d=4/8/16: "
        + "/".join(f"{times[d] * 1e3:.1f}ms" for d in (4, 8, 16))
        + f"; doubling ratios {ratios[0]:.2f}, {ratios[1]:.2f} <= 4.6",
    )


def test_criterion_9_slot_stability(criterion):
    G = np.array([[0.3, 0.1, 0.0], [0.2, 0.2, 0.1], [0.0, 0.3, 0.2]])
    mu0 = np.array([0.3, 0.2, 0.25])
    beta = 10.0
    profile = np.array([1.0, 1.0, 2.0, 1.0])
    # each slot pools 20 "days" of 2e5 s; with 5 days the noisy loss sometimes has its
    # global minimum at a distant G, which no number of restarts can fix
    days, T = 20, 2e5
    tau_c = 1.0 / (beta * (1.0 - spectral_norm(G)))
    ccfg, cfg = CumulantConfig(H=5 * tau_c), NphcConfig(random_starts=20)

    def slot(mu, seed):
        m = HawkesModel.exponential(mu, G, beta)
        return [simulate(m, SimConfig(horizon=T, seed=seed * 100 + day, burn_in=100.0)) for day in range(days)]

    varying = slotwise_estimate([slot(p * mu0, 1 + k) for k, p in enumerate(profile)], cfg, ccfg)
    flat = slotwise_estimate([slot(mu0, 11 + k) for k in range(profile.size)], cfg, ccfg)
    drift, spread = varying.G_drift().mean(), flat.G_drift().mean()
    mu_rel = np.abs(varying.mu_curve() / (profile[:, None] * mu0) - 1.0).max()
    ok = drift < 2 * spread and mu_rel < 0.2
    criterion(
        9, ok,
        f"slot profile {profile.tolist()}: mean G drift {drift:.4f} < 2 x flat-mu seed spread {spread:.4f}; "
        f"mu tracks profile within {mu_rel:.1%} < 20%",
    )
