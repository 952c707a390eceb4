"""Hawkes process domain types and exact moment algebra.

Everything here is a pure function of its inputs. Arrays stored on the
frozen dataclasses are copied and marked read-only at construction.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NonStationary, SingularMatrix

ROUNDOFF_RESIDUAL = 1e-10


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class KernelFamily(str, enum.Enum):
    EXPONENTIAL = "exponential"
    RECTANGULAR = "rectangular"
    POWER_LAW = "power_law"


@dataclass(frozen=True)
class KernelSpec:
    """One parametric kernel ``phi(t)`` whose integral over [0, inf) is ``alpha``.

    ``beta`` is an inverse time scale (1/s). ``gamma`` is the delay in seconds
    for the rectangular family and the tail exponent for the power law; it is
    ignored for the exponential family.
    """

    family: KernelFamily
    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")
        if self.family is KernelFamily.RECTANGULAR and not self.gamma >= 0:
            raise ValueError("rectangular kernel needs gamma >= 0 (delay)")
        if self.family is KernelFamily.POWER_LAW and not self.gamma > 0:
            raise ValueError("power-law kernel needs gamma > 0 (exponent)")

    @classmethod
    def exponential(cls, alpha, beta):
        return cls(KernelFamily.EXPONENTIAL, alpha, beta, 0.0)

    @classmethod
    def rectangular(cls, alpha, beta, gamma=0.0):
        return cls(KernelFamily.RECTANGULAR, alpha, beta, gamma)

    @classmethod
    def power_law(cls, alpha, beta, gamma):
        return cls(KernelFamily.POWER_LAW, alpha, beta, gamma)

    def support_end(self) -> float:
        """Last lag with non-zero value (``inf`` for unbounded families)."""
        if self.family is KernelFamily.RECTANGULAR:
            return self.gamma + 1.0 / self.beta
        return math.inf

    def tail_integral(self, t: float) -> float:
        """Integral of the kernel over ``[t, inf)``."""
        t = max(float(t), 0.0)
        if self.family is KernelFamily.EXPONENTIAL:
            return self.alpha * math.exp(-self.beta * t)
        if self.family is KernelFamily.POWER_LAW:
            return self.alpha * (1.0 + self.beta * t) ** (-self.gamma)
        start, end = self.gamma, self.gamma + 1.0 / self.beta
        covered = min(max(end - max(t, start), 0.0), end - start)
        return self.alpha * self.beta * covered

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "alpha": float(self.alpha),
            "beta_per_second": float(self.beta),
            "gamma": float(self.gamma),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        beta = d["beta_per_second"] if "beta_per_second" in d else d["beta"]
        return cls(KernelFamily(d["family"]), float(d["alpha"]), float(beta), float(d.get("gamma", 0.0)))


@dataclass(frozen=True, eq=False)
class EventStream:
    """One realization: ``dim`` sorted timestamp arrays observed on [0, duration]."""

    duration: float
    events: tuple
    labels: Optional[tuple] = None
    truncated: bool = False

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"duration must be positive, got {self.duration}")
        evs = tuple(_frozen(np.asarray(z, dtype=float).ravel()) for z in self.events)
        if not evs:
            raise ValueError("an EventStream needs at least one component")
        for i, z in enumerate(evs):
            if z.size and (z[0] < 0 or z[-1] > self.duration):
                raise ValueError(f"component {i} has timestamps outside [0, {self.duration}]")
            if z.size > 1 and not np.all(np.diff(z) > 0):
                raise ValueError(f"component {i} is not strictly increasing")
        object.__setattr__(self, "events", evs)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != len(evs):
                raise ValueError("one label per component required")
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return len(self.events)

    @property
    def counts(self) -> np.ndarray:
        return np.array([z.size for z in self.events], dtype=np.int64)

    def count_until(self, i: int, t) -> np.ndarray:
        """``N^i_t``: number of events of component ``i`` at times <= t."""
        return np.searchsorted(self.events[i], t, side="right")

    def window(self, start: float, stop: float) -> "EventStream":
        """Sub-stream on [start, stop) shifted to start at 0."""
        if not (0 <= start < stop <= self.duration):
            raise ValueError("window must satisfy 0 <= start < stop <= duration")
        parts = []
        for z in self.events:
            lo, hi = np.searchsorted(z, [start, stop], side="left")
            if stop == self.duration:
                hi = z.size
            parts.append(z[lo:hi] - start)
        return EventStream(stop - start, tuple(parts), self.labels)


@dataclass(frozen=True, eq=False)
class HawkesModel:
    """Baselines ``mu`` (events/s) and a d x d grid of optional kernels.

    ``kernels[i][j]`` is the effect of a type-j event on the intensity of type i.
    """

    mu: np.ndarray
    kernels: tuple

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mu))
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("mu must be a non-empty vector")
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ValueError("baselines must be finite and >= 0")
        d = mu.size
        rows = tuple(tuple(k for k in row) for row in self.kernels)
        if len(rows) != d or any(len(r) != d for r in rows):
            raise ValueError(f"kernels must be a {d}x{d} grid")
        for row in rows:
            for k in row:
                if k is not None and not isinstance(k, KernelSpec):
                    raise TypeError("kernel grid entries must be KernelSpec or None")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kernels", rows)

    @property
    def dim(self) -> int:
        return self.mu.size

    @classmethod
    def poisson(cls, mu) -> "HawkesModel":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(mu, tuple((None,) * mu.size for _ in range(mu.size)))

    @classmethod
    def exponential(cls, mu, G, beta) -> "HawkesModel":
        """All kernels exponential with integrals ``G`` and decay ``beta``
        (scalar or d x d). Zero entries of ``G`` become absent kernels."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        beta = np.broadcast_to(np.asarray(beta, dtype=float), G.shape)
        grid = tuple(
            tuple(KernelSpec.exponential(G[i, j], beta[i, j]) if G[i, j] != 0 else None for j in range(G.shape[1]))
            for i in range(G.shape[0])
        )
        return cls(np.atleast_1d(mu), grid)

    def to_dict(self) -> dict:
        kernels = []
        for i, row in enumerate(self.kernels):
            for j, k in enumerate(row):
                if k is not None:
                    kernels.append({"target": i, "source": j, **k.to_dict()})
        return {"dim": self.dim, "mu_per_second": [float(m) for m in self.mu], "kernels": kernels}

    @classmethod
    def from_dict(cls, d: dict) -> "HawkesModel":
        mu = np.asarray(d["mu_per_second"] if "mu_per_second" in d else d["mu"], dtype=float)
        dim = int(d.get("dim", mu.size))
        if mu.size != dim:
            raise ValueError("mu length does not match dim")
        grid = [[None] * dim for _ in range(dim)]
        for k in d.get("kernels", []):
            i, j = int(k["target"]), int(k["source"])
            if not (0 <= i < dim and 0 <= j < dim):
                raise ValueError(f"kernel index ({i}, {j}) out of range")
            if grid[i][j] is not None:
                raise ValueError(f"duplicate kernel for ({i}, {j})")
            grid[i][j] = KernelSpec.from_dict(k)
        return cls(mu, tuple(tuple(r) for r in grid))


@dataclass(frozen=True, eq=False)
class BranchingMatrices:
    G: np.ndarray
    R: np.ndarray
    Psi: np.ndarray

    def __post_init__(self):
        for name in ("G", "R", "Psi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


class CumulantSource(str, enum.Enum):
    EMPIRICAL = "empirical"
    THEORETICAL = "theoretical"


@dataclass(frozen=True, eq=False)
class CumulantSet:
    """Integrated cumulants (Lambda, C, Kc) with ``Kc[i, j] = K^{iij}``.

    ``duration`` is the total observation time that went into an empirical
    set (used as the aggregation weight); ``H`` is the window half-width.
    """

    Lambda: np.ndarray
    C: np.ndarray
    Kc: np.ndarray
    H: float = math.inf
    source: CumulantSource = CumulantSource.EMPIRICAL
    duration: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = _frozen(np.atleast_1d(self.Lambda))
        d = lam.size
        C = _frozen(np.atleast_2d(self.C))
        Kc = _frozen(np.atleast_2d(self.Kc))
        if C.shape != (d, d) or Kc.shape != (d, d):
            raise ValueError(f"C and Kc must be {d}x{d}")
        object.__setattr__(self, "Lambda", lam)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Kc", Kc)
        object.__setattr__(self, "source", CumulantSource(self.source))

    @property
    def dim(self) -> int:
        return self.Lambda.size


def g_from_model(model: HawkesModel) -> np.ndarray:
    """Branching-ratio matrix: entry (i, j) is the integral of kernel (i, j)."""
    d = model.dim
    G = np.zeros((d, d))
    for i, row in enumerate(model.kernels):
        for j, k in enumerate(row):
            if k is not None:
                G[i, j] = k.alpha
    return G


def matrices_from_g(G) -> BranchingMatrices:
    """R = (I - G)^-1 and Psi = R - I."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    d = G.shape[0]
    if G.shape != (d, d) or not np.all(np.isfinite(G)):
        raise ValueError("G must be a finite square matrix")
    eye = np.eye(d)
    A = eye - G
    try:
        R = np.linalg.solve(A, eye)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("I - G is singular") from exc
    residual = np.max(np.abs(A @ R - eye))
    if not np.all(np.isfinite(R)) or residual >= ROUNDOFF_RESIDUAL:
        raise SingularMatrix(f"I - G is numerically singular (residual {residual:.3g})")
    return BranchingMatrices(G, R, R - eye)


def g_from_r(R) -> np.ndarray:
    """Inverse map G = I - R^-1."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    d = R.shape[0]
    try:
        return np.eye(d) - np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("R is singular") from exc


def spectral_norm(G) -> float:
    """Stationarity norm of G: the spectral radius (largest |eigenvalue|)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(G))))


def largest_singular_value(G) -> float:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return float(np.linalg.norm(G, 2)) if G.size else 0.0


def check_stationary(G) -> float:
    """Raise NonStationary unless the spectral radius of G is below 1.

    Warns when the largest singular value sits on the other side of 1,
    since the two readings of ``||G|| < 1`` then disagree.
    """
    radius = spectral_norm(G)
    if not radius < 1:
        raise NonStationary(f"spectral radius of G is {radius:.6g} >= 1")
    sigma = largest_singular_value(G)
    if sigma >= 1:
        warnings.warn(
            f"spectral radius {radius:.4g} < 1 but largest singular value {sigma:.4g} >= 1",
            RuntimeWarning,
            stacklevel=2,
        )
    return radius


def covariance_from_r(R: np.ndarray, Lambda: np.ndarray) -> np.ndarray:
    """C = R diag(Lambda) R^T."""
    return (R * Lambda) @ R.T


def skewness_slice_from_r(R: np.ndarray, Lambda: np.ndarray, C: Optional[np.ndarray] = None) -> np.ndarray:
    """``Kc[i, j] = K^{iij}`` from the closed form of the third cumulant."""
    if C is None:
        C = covariance_from_r(R, Lambda)
    S = R * R
    return S @ C.T + 2.0 * (R * (C - R * Lambda)) @ R.T


def third_cumulant_tensor(R: np.ndarray, Lambda: np.ndarray, C: Optional[np.ndarray] = None) -> np.ndarray:
    """Full ``K[i, j, k]`` tensor.

    Every entry is read from its sorted index triple, so the result is exactly
    (not just up to round-off) invariant under index permutations.
    """
    R = np.asarray(R, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    if C is None:
        C = covariance_from_r(R, Lambda)
    K = (
        np.einsum("im,jm,km->ijk", R, R, C)
        + np.einsum("im,jm,km->ijk", R, C, R)
        + np.einsum("im,jm,km->ijk", C, R, R)
        - 2.0 * np.einsum("m,im,jm,km->ijk", Lambda, R, R, R)
    )
    idx = np.sort(np.indices(K.shape).reshape(3, -1), axis=0)
    return K[idx[0], idx[1], idx[2]].reshape(K.shape)


def theoretical_cumulants(G, mu) -> CumulantSet:
    """Exact (Lambda, C, Kc) of a stationary linear Hawkes process."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape != (G.shape[0],):
        raise ValueError("mu must have one entry per row of G")
    if np.any(mu < 0):
        raise ValueError("mu must be >= 0")
    check_stationary(G)
    R = matrices_from_g(G).R
    Lambda = R @ mu
    C = covariance_from_r(R, Lambda)
    C = 0.5 * (C + C.T)
    Kc = skewness_slice_from_r(R, Lambda, C)
    return CumulantSet(Lambda, C, Kc, math.inf, CumulantSource.THEORETICAL, math.inf)


def theoretical_third_cumulant(G, mu) -> np.ndarray:
    """Full third-cumulant tensor for (G, mu); used to test permutation symmetry."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    check_stationary(G)
    R = matrices_from_g(G).R
    Lambda = R @ np.atleast_1d(np.asarray(mu, dtype=float))
    return third_cumulant_tensor(R, Lambda)


def block_matrix(dim: int, blocks: Sequence[tuple], value: float) -> np.ndarray:
    """d x d matrix with ``value`` on each ``(row_slice, col_slice)`` block."""
    G = np.zeros((dim, dim))
    for rows, cols in blocks:
        G[rows, cols] = value
    return G
