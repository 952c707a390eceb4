"""Empirical integrated cumulants of event streams and window selection.

Window counts ``N^j_{t+H} - N^j_{t-H}`` use binary search on the sorted
timestamps. The pair sum ``sum_{t in Z^j} sum_{t' in Z^k} (2H - |t' - t|)^+``
needed by the third cumulant is computed with a two-pointer sweep in
O(n_j + n_k).

Two boundary policies are offered:

``restrict`` (default)
    Only anchors whose windows lie inside [0, T] are used and sums are
    normalised by the length of the admissible anchor range: [H, T - H] for
    the window-count terms and [2H, T - 2H] for the pair sum (whose partner
    range is 2H wide). Every term is then an unbiased stationary average.
``clip``
    The literal estimators: all anchors, counts clipped to [0, T], and
    normalisation by T. Edge terms bias the third cumulant by O(H^3/T).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import MismatchedShapes, NoDecayDetected, WindowTooLarge
from .model import CumulantSet, CumulantSource, EventStream


class BoundaryPolicy(str, enum.Enum):
    CLIP_COUNTS = "clip"
    RESTRICT_ANCHORS = "restrict"


@dataclass(frozen=True)
class CumulantConfig:
    H: float
    boundary_policy: BoundaryPolicy = BoundaryPolicy.RESTRICT_ANCHORS
    symmetrize_C: bool = True

    def __post_init__(self):
        if not (self.H > 0 and math.isfinite(self.H)):
            raise ValueError(f"H must be positive and finite, got {self.H}")
        object.__setattr__(self, "boundary_policy", BoundaryPolicy(self.boundary_policy))


def _check_window(stream: EventStream, cfg: CumulantConfig, factor: float = 2.0):
    if factor * cfg.H >= stream.duration:
        raise WindowTooLarge(
            f"H={cfg.H:g} too large for duration T={stream.duration:g} "
            f"(need {factor:g}H < T with boundary policy '{cfg.boundary_policy.value}')"
        )


def estimate_lambda(stream: EventStream) -> np.ndarray:
    """Mean intensities N^i_T / T."""
    return stream.counts / stream.duration


def _anchors(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    a = np.searchsorted(z, lo, side="left")
    b = np.searchsorted(z, hi, side="right")
    return z[a:b]


def _window_counts(z: np.ndarray, anchors: np.ndarray, H: float) -> np.ndarray:
    return np.searchsorted(z, anchors + H, side="right") - np.searchsorted(z, anchors - H, side="right")


def _count_domain(stream: EventStream, cfg: CumulantConfig):
    T, H = stream.duration, cfg.H
    if cfg.boundary_policy is BoundaryPolicy.RESTRICT_ANCHORS:
        return H, T - H, T - 2.0 * H
    return 0.0, T, T


def estimate_covariance(stream: EventStream, cfg: CumulantConfig) -> np.ndarray:
    """Integrated covariance C^ij from centred window counts anchored on Z^i."""
    _check_window(stream, cfg)
    lam = estimate_lambda(stream)
    lo, hi, t_eff = _count_domain(stream, cfg)
    d = stream.dim
    C = np.zeros((d, d))
    for i in range(d):
        anchors = _anchors(stream.events[i], lo, hi)
        if anchors.size == 0:
            continue
        for j in range(d):
            n = _window_counts(stream.events[j], anchors, cfg.H)
            C[i, j] = np.sum(n - 2.0 * cfg.H * lam[j]) / t_eff
    if cfg.symmetrize_C:
        C = 0.5 * (C + C.T)
    return C


@numba.njit(cache=True)
def triangle_pair_sum(anchors, partners, H):
    """sum_{a in anchors} sum_{b in partners} (2H - |b - a|)^+ in O(n + m).

    Both inputs sorted ascending. Running counts and sums are kept for the
    partners in [a - 2H, a] (left) and (a, a + 2H) (right).
    """
    w = 2.0 * H
    m = partners.size
    lo = 0
    mid = 0
    hi = 0
    cnt_l = 0
    cnt_r = 0
    sum_l = 0.0
    sum_r = 0.0
    total = 0.0
    for a in anchors:
        # partners entering the right part
        while hi < m and partners[hi] < a + w:
            sum_r += partners[hi]
            cnt_r += 1
            hi += 1
        # partners moving from right to left
        while mid < hi and partners[mid] <= a:
            sum_r -= partners[mid]
            cnt_r -= 1
            sum_l += partners[mid]
            cnt_l += 1
            mid += 1
        # partners leaving on the left
        while lo < mid and partners[lo] <= a - w:
            sum_l -= partners[lo]
            cnt_l -= 1
            lo += 1
        if cnt_l == 0:
            sum_l = 0.0
        if cnt_r == 0:
            sum_r = 0.0
        total += cnt_l * (w - a) + sum_l + cnt_r * (w + a) - sum_r
    return total


def naive_triangle_pair_sum(anchors, partners, H) -> float:
    """O(n*m) reference for :func:`triangle_pair_sum`."""
    anchors = np.asarray(anchors, dtype=float)
    partners = np.asarray(partners, dtype=float)
    if anchors.size == 0 or partners.size == 0:
        return 0.0
    total = 0.0
    for a in anchors:
        total += np.sum(np.maximum(2.0 * H - np.abs(partners - a), 0.0))
    return float(total)


def estimate_skewness(stream: EventStream, cfg: CumulantConfig) -> np.ndarray:
    """Third-cumulant slice ``Kc[i, j] = K^{iij}``.

    Anchored on Z^i with the product of the centred window counts of
    components i and j, minus the triangle pair-sum term over (Z^i, Z^j),
    plus 4 H^2 Lambda_i^2 Lambda_j.
    """
    restrict = cfg.boundary_policy is BoundaryPolicy.RESTRICT_ANCHORS
    _check_window(stream, cfg, 4.0 if restrict else 2.0)
    T, H = stream.duration, cfg.H
    lam = estimate_lambda(stream)
    lo, hi, t_eff = _count_domain(stream, cfg)
    if restrict:
        plo, phi, p_eff = 2.0 * H, T - 2.0 * H, T - 4.0 * H
    else:
        plo, phi, p_eff = 0.0, T, T
    d = stream.dim
    K = np.zeros((d, d))
    for i in range(d):
        zi = stream.events[i]
        anchors = _anchors(zi, lo, hi)
        pair_anchors = _anchors(zi, plo, phi)
        if anchors.size:
            ci = _window_counts(zi, anchors, H) - 2.0 * H * lam[i]
        for j in range(d):
            first = 0.0
            if anchors.size:
                cj = _window_counts(stream.events[j], anchors, H) - 2.0 * H * lam[j]
                first = np.dot(ci, cj) / t_eff
            pairs = 0.0
            if pair_anchors.size and stream.events[j].size:
                pairs = triangle_pair_sum(pair_anchors, stream.events[j], H)
            K[i, j] = first - lam[i] * pairs / p_eff + 4.0 * H * H * lam[i] * lam[i] * lam[j]
    return K


def estimate_cumulants(stream: EventStream, cfg: CumulantConfig) -> CumulantSet:
    lam = estimate_lambda(stream)
    C = estimate_covariance(stream, cfg)
    K = estimate_skewness(stream, cfg)
    return CumulantSet(
        lam, C, K, cfg.H, CumulantSource.EMPIRICAL, stream.duration,
        meta={"boundary_policy": cfg.boundary_policy.value, "n_realizations": 1},
    )


def aggregate_cumulants(per_realization: Sequence[CumulantSet]) -> CumulantSet:
    """Duration-weighted average of several realizations' cumulants."""
    sets = list(per_realization)
    if not sets:
        raise MismatchedShapes("nothing to aggregate")
    d, H = sets[0].dim, sets[0].H
    for s in sets[1:]:
        if s.dim != d:
            raise MismatchedShapes(f"dimension mismatch: {s.dim} != {d}")
        if s.H != H:
            raise MismatchedShapes(f"window mismatch: H={s.H} != {H}")
    if len(sets) == 1:
        return sets[0]
    w = np.array([s.duration for s in sets], dtype=float)
    w = w / w.sum()

    def avg(attr):
        return np.tensordot(w, np.stack([getattr(s, attr) for s in sets]), axes=1)

    meta = dict(sets[0].meta)
    meta["n_realizations"] = sum(s.meta.get("n_realizations", 1) for s in sets)
    return CumulantSet(
        avg("Lambda"), avg("C"), avg("Kc"), H, CumulantSource.EMPIRICAL,
        float(sum(s.duration for s in sets)), meta=meta,
    )


def estimate_cumulants_many(streams: Sequence[EventStream], cfg: CumulantConfig) -> CumulantSet:
    return aggregate_cumulants([estimate_cumulants(s, cfg) for s in streams])


def pointwise_covariance_density(
    stream: EventStream, i: int, j: int, t, h: float,
    boundary_policy: BoundaryPolicy = BoundaryPolicy.RESTRICT_ANCHORS,
):
    """Covariance density estimate at lag(s) ``t`` with bin width ``h``.

    ``(1 / (h T)) sum_{tau in Z^i} (N^j_{tau+t+h} - N^j_{tau+t} - h Lambda_j)``.
    Under ``restrict`` only anchors whose bin lies in [0, T] are used and T is
    replaced by the admissible anchor range.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    boundary_policy = BoundaryPolicy(boundary_policy)
    T = stream.duration
    lam_j = stream.events[j].size / T
    zi, zj = stream.events[i], stream.events[j]
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(ts.shape)
    for k, lag in enumerate(ts):
        if boundary_policy is BoundaryPolicy.RESTRICT_ANCHORS:
            lo, hi = max(0.0, -lag), min(T, T - lag - h)
            span = hi - lo
            if span <= 0:
                out[k] = 0.0
                continue
            anchors = _anchors(zi, lo, hi)
        else:
            anchors, span = zi, T
        n = np.searchsorted(zj, anchors + lag + h, side="right") - np.searchsorted(zj, anchors + lag, side="right")
        out[k] = np.sum(n - h * lam_j) / (h * span)
    return out if np.ndim(t) else float(out[0])


def density_profile(stream: EventStream, grid, h: float) -> np.ndarray:
    """max over (i, j) of |pointwise density| at each grid lag."""
    grid = np.asarray(grid, dtype=float)
    prof = np.zeros(grid.size)
    for i in range(stream.dim):
        for j in range(stream.dim):
            prof = np.maximum(prof, np.abs(pointwise_covariance_density(stream, i, j, grid, h)))
    return prof


def select_H(
    stream: EventStream, grid: Sequence[float], multiple: float = 5.0, h: Optional[float] = None,
    max_fraction: float = 0.25,
) -> float:
    """Pick H as ``multiple`` times the lag after which covariance densities vanish.

    The profile is the max over (i, j) of |density| on ``grid`` with bin
    width ``h`` (default: median grid spacing). Its noise scale sigma is
    read off the median of the profile over the last quartile of the grid,
    treating each point as the max of d^2 half-normal errors, and is never
    taken below the counting-noise level. The floor is the level such a max
    exceeds with probability 0.05 / len(grid). The characteristic time is
    the first grid lag that starts a run of ``max(3, len(grid) // 8)``
    points below the floor; a run is required because a delayed kernel can
    have near-zero density before its support. NoDecayDetected is raised
    when the tail sits well above counting noise or no run starts before the
    last quartile. The result is clamped below ``max_fraction * T``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 4:
        raise ValueError("grid needs at least 4 points")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("grid must be non-negative and strictly increasing")
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    if h is None:
        h = float(np.median(np.diff(grid)))
    prof = density_profile(stream, grid, h)
    d2 = stream.dim ** 2
    z = NormalDist().inv_cdf
    # quantiles of the max of d^2 independent half-normals
    q_med = z(0.5 * (1.0 + 0.5 ** (1.0 / d2)))
    q_hi = z(0.5 * (1.0 + (1.0 - 0.05 / grid.size) ** (1.0 / d2)))
    se = float(np.max(estimate_lambda(stream))) / math.sqrt(h * stream.duration)
    tail_start = int(math.floor(0.75 * grid.size))
    tail = float(np.median(prof[tail_start:]))
    if se > 0 and tail > 4.0 * q_med * se:
        raise NoDecayDetected(
            f"covariance density {tail:.3g} at the end of the grid is well above counting noise {q_med * se:.3g}"
        )
    floor = q_hi * max(tail / q_med, se)
    run = max(3, grid.size // 8)
    below = prof < floor
    k = next((n for n in range(tail_start + 1) if below[n:n + run].all()), None)
    if k is None:
        raise NoDecayDetected(
            f"covariance density does not settle below the noise floor {floor:.3g} before lag {grid[tail_start]:g}"
        )
    tau_c = float(grid[k])
    H = multiple * tau_c
    cap = max_fraction * stream.duration
    if H >= cap:
        H = float(np.nextafter(cap, 0.0))
    if H <= 0:
        # Poisson-like data with a grid starting at zero: fall back to the bin width
        H = multiple * h
    return H
