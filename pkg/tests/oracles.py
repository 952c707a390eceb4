"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code paths: the cumulant oracle
counts windows with explicit comparisons, the theoretical moments are built
from the full third-order tensor written as plain loops, and the cluster
simulation grows each family tree generation by generation.
"""

import itertools

import numpy as np


def inverse_2x2(M):
    (a, b), (c, d) = M
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


def theory_by_loops(G, mu):
    """(Lambda, C, full K) from the integrated-cumulant identities, term by term."""
    G = np.asarray(G, dtype=float)
    d = G.shape[0]
    R = np.linalg.inv(np.eye(d) - G)
    lam = R @ np.asarray(mu, dtype=float)
    C = np.zeros((d, d))
    for i, j, m in itertools.product(range(d), repeat=3):
        C[i, j] += lam[m] * R[i, m] * R[j, m]
    K = np.zeros((d, d, d))
    for i, j, k, m in itertools.product(range(d), repeat=4):
        K[i, j, k] += (
            R[i, m] * R[j, m] * C[k, m]
            + R[i, m] * C[j, m] * R[k, m]
            + C[i, m] * R[j, m] * R[k, m]
            - 2.0 * lam[m] * R[i, m] * R[j, m] * R[k, m]
        )
    return lam, C, K


def naive_cumulants(events, T, H, restrict=True):
    """Brute-force (Lambda, C, Kc) with explicit window membership tests."""
    d = len(events)
    z = [np.asarray(e, dtype=float) for e in events]
    lam = np.array([e.size / T for e in z])
    if restrict:
        lo, hi, t_eff = H, T - H, T - 2 * H
        plo, phi, p_eff = 2 * H, T - 2 * H, T - 4 * H
    else:
        lo, hi, t_eff = 0.0, T, T
        plo, phi, p_eff = 0.0, T, T

    def count(e, a):
        return float(np.sum((e > a - H) & (e <= a + H)))

    C = np.zeros((d, d))
    K = np.zeros((d, d))
    for i in range(d):
        anchors = [a for a in z[i] if lo <= a <= hi]
        pair_anchors = [a for a in z[i] if plo <= a <= phi]
        for j in range(d):
            c_sum = 0.0
            k_sum = 0.0
            for a in anchors:
                ni = count(z[i], a) - 2 * H * lam[i]
                nj = count(z[j], a) - 2 * H * lam[j]
                c_sum += nj
                k_sum += ni * nj
            pairs = 0.0
            for a in pair_anchors:
                for b in z[j]:
                    pairs += max(2 * H - abs(b - a), 0.0)
            C[i, j] = c_sum / t_eff
            K[i, j] = k_sum / t_eff - lam[i] * pairs / p_eff + 4 * H * H * lam[i] ** 2 * lam[j]
    return lam, 0.5 * (C + C.T), K


def cluster_simulation(G, mu, beta, T, rng):
    """Branching construction of an exponential-kernel Hawkes process.

    Returns (times, types, root_types, is_immigrant) for every event in [0, T].
    Immigrants of type j arrive as Poisson(mu_j); each type-j event has
    Poisson(G[i, j]) children of type i after Exp(beta) delays.
    """
    G = np.asarray(G, dtype=float)
    d = G.shape[0]
    times, types, roots, immigrant = [], [], [], []
    gen_t, gen_k, gen_r = [], [], []
    for j in range(d):
        n = rng.poisson(mu[j] * T)
        gen_t.append(rng.uniform(0, T, n))
        gen_k.append(np.full(n, j))
        gen_r.append(np.full(n, j))
    gen_t, gen_k, gen_r = map(np.concatenate, (gen_t, gen_k, gen_r))
    first = True
    while gen_t.size:
        times.append(gen_t)
        types.append(gen_k)
        roots.append(gen_r)
        immigrant.append(np.full(gen_t.size, first))
        first = False
        nt, nk, nr = [], [], []
        for i in range(d):
            n_child = rng.poisson(G[i, gen_k])
            parent = np.repeat(np.arange(gen_t.size), n_child)
            t_child = gen_t[parent] + rng.exponential(1.0 / beta, parent.size)
            keep = t_child <= T
            nt.append(t_child[keep])
            nk.append(np.full(int(keep.sum()), i))
            nr.append(gen_r[parent][keep])
        gen_t, gen_k, gen_r = map(np.concatenate, (nt, nk, nr))
    return tuple(map(np.concatenate, (times, types, roots, immigrant)))


def random_stable_g(rng, d, radius_range=(0.1, 0.89), density=0.6):
    """Random sparse nonnegative G rescaled to a random spectral radius."""
    G = rng.uniform(0, 1, (d, d)) * (rng.uniform(size=(d, d)) < density)
    rad = np.max(np.abs(np.linalg.eigvals(G)))
    if rad == 0:
        G[0, 0] = 0.5
        rad = 0.5
    return G * rng.uniform(*radius_range) / rad
