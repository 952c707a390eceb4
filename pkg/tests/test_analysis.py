import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nphc.analysis import (
    EventTaxonomy,
    ancestor_fraction,
    ancestor_fraction_from,
    exogenous_fraction,
    slotwise_estimate,
    swap_permutation,
    symmetry_report,
    symmetry_report_for,
)
from nphc.cumulants import CumulantConfig, estimate_cumulants
from nphc.errors import DegenerateLambda, EmptySlot
from nphc.estimator import NphcConfig, estimate
from nphc.model import EventStream, HawkesModel, matrices_from_g, theoretical_cumulants
from nphc.simulate import SimConfig, simulate

from oracles import cluster_simulation, random_stable_g


# ---- taxonomy ----


def test_order_book_taxonomy():
    tax = EventTaxonomy.order_book()
    assert tax.dim == 12
    assert [tax.labels[i] for i in tax.group("aggressive")] == ["T+", "T-", "Ta", "Tb"]
    assert len(tax.group("passive")) == 8
    assert set(tax.group("aggressive")) | set(tax.group("passive")) == set(range(12))
    pairs = tax.mirror_pairs()
    assert (tax.index("T+"), tax.index("T-")) in pairs
    assert (tax.index("La"), tax.index("Lb")) in pairs
    assert len(pairs) == 6
    assert EventTaxonomy.from_dict(tax.to_dict()) == tax


def test_taxonomy_validation():
    with pytest.raises(ValueError):
        EventTaxonomy(("a", "a"))
    with pytest.raises(ValueError):
        EventTaxonomy(("a", "b"), {"g": (0, 2)})
    assert EventTaxonomy.generic(3).group("all") == (0, 1, 2)


# ---- exogenous fractions ----


def test_exogenous_fraction_examples():
    np.testing.assert_array_equal(exogenous_fraction([1.0, 2.0], [1.0, 2.0]), [1.0, 1.0])
    cs = theoretical_cumulants([[0.5]], [1.0])
    assert exogenous_fraction([1.0], cs.Lambda)[0] == pytest.approx(0.5)
    with pytest.raises(DegenerateLambda):
        exogenous_fraction([1.0, 1.0], [1.0, 0.0])


def test_exogenous_fraction_strongly_endogenous():
    # spectral radius 0.95: every component is 5% exogenous
    G = np.full((2, 2), 0.475)
    cs = theoretical_cumulants(G, [0.1, 0.1])
    np.testing.assert_allclose(exogenous_fraction([0.1, 0.1], cs.Lambda), 0.05, rtol=1e-12)


def test_exogenous_fraction_from_poisson_fit():
    res = estimate(theoretical_cumulants(np.zeros((3, 3)), [1.0, 2.0, 3.0]))
    np.testing.assert_allclose(exogenous_fraction(res.mu_hat, res.Lambda_hat), 1.0, rtol=1e-8)


# ---- ancestor fractions ----


def test_ancestor_fraction_examples():
    Psi = np.zeros((2, 2))
    assert ancestor_fraction_from(Psi, [1.0, 1.0], [1.0, 1.0], [0], [1]) == 0.0
    m = matrices_from_g([[0.5]])
    assert ancestor_fraction_from(m.Psi, [1.0], m.R @ [1.0], [0], [0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ancestor_fraction_from(Psi, [1.0, 1.0], [1.0, 1.0], [], [1])
    with pytest.raises(DegenerateLambda):
        ancestor_fraction_from(Psi, [1.0, 1.0], [1.0, 0.0], [0], [1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6))
def test_ancestor_fractions_partition_identity(seed, d):
    rng = np.random.default_rng(seed)
    G = random_stable_g(rng, d)
    mu = rng.uniform(0.1, 2.0, d)
    m = matrices_from_g(G)
    lam = m.R @ mu
    target = rng.choice(d, size=rng.integers(1, d + 1), replace=False)
    cut = rng.integers(1, d)
    perm = rng.permutation(d)
    parts = [perm[:cut], perm[cut:]]
    total = sum(ancestor_fraction_from(m.Psi, mu, lam, p, target) for p in parts)
    expected = 1.0 - mu[target].sum() / lam[target].sum()
    assert abs(total - expected) < 1e-10


def test_ancestor_fraction_matches_cluster_simulation():
    # aggressive {0, 1} and passive {2, 3} blocks with cross-excitation
    G = np.array([
        [0.20, 0.10, 0.05, 0.00],
        [0.10, 0.20, 0.00, 0.05],
        [0.30, 0.10, 0.20, 0.10],
        [0.10, 0.30, 0.10, 0.20],
    ])
    mu = np.array([0.3, 0.3, 0.6, 0.6])
    aggressive, passive = [0, 1], [2, 3]
    m = matrices_from_g(G)
    lam = m.R @ mu
    formula = ancestor_fraction_from(m.Psi, mu, lam, aggressive, passive)

    rng = np.random.default_rng(2024)
    hits, totals = [], []
    for _ in range(8):
        _, types, roots, immigrant = cluster_simulation(G, mu, 2.0, 5000.0, rng)
        in_target = np.isin(types, passive)
        totals.append(in_target.sum())
        hits.append(np.sum(in_target & ~immigrant & np.isin(roots, aggressive)))
    frac = np.array(hits) / np.array(totals)
    se = frac.std(ddof=1) / np.sqrt(frac.size)
    assert abs(frac.mean() - formula) < 4 * se + 2e-3


def test_ancestor_fraction_on_result():
    G = np.array([[0.3, 0.1], [0.2, 0.2]])
    res = estimate(theoretical_cumulants(G, [1.0, 0.5]))
    m = matrices_from_g(G)
    expected = ancestor_fraction_from(m.Psi, [1.0, 0.5], m.R @ [1.0, 0.5], [0], [1])
    assert ancestor_fraction(res, [0], [1]) == pytest.approx(expected, abs=1e-8)


# ---- slot-wise estimation ----


def _slot_streams(mu, seeds, T=2e4):
    G = np.array([[0.3, 0.1], [0.2, 0.2]])
    m = HawkesModel.exponential(mu, G, 1.0)
    return [simulate(m, SimConfig(horizon=T, seed=s, burn_in=50.0)) for s in seeds]


def test_identical_slots_give_identical_fits():
    streams = _slot_streams([0.5, 0.5], [1, 2])
    out = slotwise_estimate([streams, streams, streams], NphcConfig(), CumulantConfig(H=10.0))
    assert out.ok() == (0, 1, 2) and not out.errors
    G = out.G_stack()
    np.testing.assert_array_equal(G[0], G[1])
    np.testing.assert_array_equal(G[0], G[2])
    assert np.all(out.G_drift() == 0.0)
    assert out.mu_curve().shape == (3, 2)


def test_empty_slot_reported_others_returned():
    streams = _slot_streams([0.5, 0.5], [3])
    empty = EventStream(2e4, [np.array([]), np.array([])])
    out = slotwise_estimate([streams, [empty], [], streams], NphcConfig(), CumulantConfig(H=10.0))
    assert out.ok() == (0, 3)
    assert isinstance(out.errors[1], EmptySlot) and isinstance(out.errors[2], EmptySlot)
    assert np.all(np.isnan(out.mu_curve()[1]))
    with pytest.raises(EmptySlot):
        slotwise_estimate([[]], NphcConfig(), CumulantConfig(H=10.0)).mu_curve()


def test_slot_permutation_permutes_outputs():
    a = _slot_streams([0.5, 0.5], [4])
    b = _slot_streams([1.0, 0.5], [5])
    cfg, ccfg = NphcConfig(), CumulantConfig(H=10.0)
    ab = slotwise_estimate([a, b], cfg, ccfg)
    ba = slotwise_estimate([b, a], cfg, ccfg)
    np.testing.assert_array_equal(ab.G_stack()[::-1], ba.G_stack())
    np.testing.assert_array_equal(ab.mu_curve()[::-1], ba.mu_curve())


# ---- symmetry ----


def test_swap_permutation():
    np.testing.assert_array_equal(swap_permutation(4, [(0, 1), (2, 3)]), [1, 0, 3, 2])
    with pytest.raises(ValueError):
        swap_permutation(4, [(0, 1), (1, 2)])
    with pytest.raises(ValueError):
        swap_permutation(2, [(0, 5)])


def test_symmetric_matrix_reports_zero():
    G = np.array([[0.1, 0.2, 0.3, 0.0], [0.2, 0.1, 0.0, 0.3], [0.05, 0.0, 0.2, 0.1], [0.0, 0.05, 0.1, 0.2]])
    rep = symmetry_report_for(G, [(0, 1), (2, 3)])
    assert rep.mean_abs_difference == 0.0 and rep.max_abs_difference == 0.0
    rep2 = symmetry_report_for(G, [(0, 2)])
    assert rep2.mean_abs_difference > 0
    assert rep2.to_dict()["permutation"] == [2, 1, 0, 3]


def test_mirror_symmetric_model_from_data():
    G = np.array([[0.3, 0.1], [0.1, 0.3]])
    m = HawkesModel.exponential([0.5, 0.5], G, 1.0)
    ccfg = CumulantConfig(H=10.0)
    fits = [estimate(estimate_cumulants(simulate(m, SimConfig(horizon=2e4, seed=s, burn_in=50.0)), ccfg)) for s in range(6)]
    reports = [symmetry_report(f, [(0, 1)]).mean_abs_difference for f in fits]
    spread = np.std([f.G_hat for f in fits], axis=0, ddof=1).mean()
    # the gap between mirrored entries is a difference of two noisy estimates
    assert np.mean(reports) < 3 * spread
