"""Derived analytics on fitted models: endogeneity, ancestry, slot profiles, symmetry."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .cumulants import CumulantConfig, estimate_cumulants_many
from .errors import DegenerateLambda, EmptySlot, NphcError
from .estimator import EstimationResult, NphcConfig, estimate

log = logging.getLogger(__name__)

# Order-book taxonomy: trades (T), limit orders (L) and cancels (C). The +/- types
# move the mid price up/down; the a/b types leave it unchanged on the ask/bid side.
ORDER_BOOK_LABELS = ("T+", "T-", "L+", "L-", "C+", "C-", "Ta", "Tb", "La", "Lb", "Ca", "Cb")


@dataclass(frozen=True)
class EventTaxonomy:
    labels: Tuple[str, ...]
    groups: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be distinct")
        groups = {}
        for name, idx in self.groups.items():
            idx = tuple(int(i) for i in idx)
            bad = [i for i in idx if not 0 <= i < len(labels)]
            if bad:
                raise ValueError(f"group {name!r} has indices outside [0, {len(labels)}): {bad}")
            groups[str(name)] = idx
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def group(self, name: str) -> Tuple[int, ...]:
        return self.groups[name]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @classmethod
    def generic(cls, d: int) -> "EventTaxonomy":
        return cls(tuple(str(i) for i in range(d)), {"all": tuple(range(d))})

    @classmethod
    def order_book(cls) -> "EventTaxonomy":
        labels = ORDER_BOOK_LABELS
        aggressive = tuple(i for i, x in enumerate(labels) if x.startswith("T"))
        passive = tuple(i for i, x in enumerate(labels) if x[0] in "LC")
        return cls(labels, {"aggressive": aggressive, "passive": passive})

    def mirror_pairs(self) -> Tuple[Tuple[int, int], ...]:
        """Bid/ask mirror swaps found among the labels (+ with -, a with b)."""
        pairs = []
        for i, x in enumerate(self.labels):
            for a, b in (("+", "-"), ("a", "b")):
                if x.endswith(a) and x[:-1] + b in self.labels:
                    pairs.append((i, self.labels.index(x[:-1] + b)))
        return tuple(pairs)

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "groups": {k: list(v) for k, v in self.groups.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "EventTaxonomy":
        return cls(tuple(d["labels"]), {k: tuple(v) for k, v in d.get("groups", {}).items()})


def exogenous_fraction(mu_hat, Lambda_hat) -> np.ndarray:
    """Share of events of each type that are immigrants rather than offspring."""
    mu = np.asarray(mu_hat, dtype=float)
    lam = np.asarray(Lambda_hat, dtype=float)
    if mu.shape != lam.shape:
        raise ValueError("mu and Lambda must have the same shape")
    if not np.all(lam > 0):
        raise DegenerateLambda(f"Lambda must be positive, got {lam}")
    return mu / lam


def _indices(group, d: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in group)), dtype=int)
    if idx.size == 0:
        raise ValueError("group must not be empty")
    if idx.min() < 0 or idx.max() >= d:
        raise ValueError(f"group indices must lie in [0, {d})")
    return idx


def ancestor_fraction_from(Psi, mu, Lambda, source_group, target_group) -> float:
    """Fraction of target-group events whose oldest ancestor is a source-group immigrant.

    Immigrant events themselves are not counted; only their descendants are.
    """
    Psi = np.asarray(Psi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(Lambda, dtype=float)
    d = lam.size
    src = _indices(source_group, d)
    tgt = _indices(target_group, d)
    denom = float(np.sum(lam[tgt]))
    if not np.all(lam[tgt] > 0):
        raise DegenerateLambda("Lambda must be positive on the target group")
    return float(np.sum(Psi[np.ix_(tgt, src)] @ mu[src]) / denom)


def ancestor_fraction(result: EstimationResult, source_group, target_group) -> float:
    return ancestor_fraction_from(result.Psi_hat, result.mu_hat, result.Lambda_hat, source_group, target_group)


@dataclass
class SlotwiseResult:
    """Per-slot fits; failed slots have ``None`` in ``results`` and an entry in ``errors``."""

    results: Tuple[Optional[EstimationResult], ...]
    errors: Dict[int, NphcError]

    @property
    def n_slots(self) -> int:
        return len(self.results)

    def ok(self) -> Tuple[int, ...]:
        return tuple(k for k, r in enumerate(self.results) if r is not None)

    def _stack(self, attr) -> np.ndarray:
        ref = next((r for r in self.results if r is not None), None)
        if ref is None:
            raise EmptySlot("no slot produced an estimate")
        shape = np.shape(getattr(ref, attr))
        out = np.full((self.n_slots,) + shape, np.nan)
        for k, r in enumerate(self.results):
            if r is not None:
                out[k] = getattr(r, attr)
        return out

    def mu_curve(self) -> np.ndarray:
        """(slots, d) array of baseline estimates; NaN rows for failed slots."""
        return self._stack("mu_hat")

    def G_stack(self) -> np.ndarray:
        return self._stack("G_hat")

    def G_drift(self) -> np.ndarray:
        """Entrywise max-minus-min of the kernel-norm estimates across successful slots."""
        G = self.G_stack()[list(self.ok())]
        return G.max(axis=0) - G.min(axis=0)


def slotwise_estimate(realizations: Sequence[Sequence], cfg: NphcConfig, ccfg: CumulantConfig) -> SlotwiseResult:
    """Fit one model per intraday slot, pooling that slot's realizations across days.

    ``realizations[k]`` holds the EventStreams observed in slot ``k``.
    """
    results = []
    errors = {}
    for k, streams in enumerate(realizations):
        streams = list(streams)
        try:
            if not streams or all(int(s.counts.sum()) == 0 for s in streams):
                raise EmptySlot(f"slot {k} has no events")
            results.append(estimate(estimate_cumulants_many(streams, ccfg), cfg))
        except NphcError as exc:
            log.warning("slot %d failed: %s", k, exc)
            results.append(None)
            errors[k] = exc
    return SlotwiseResult(tuple(results), errors)


@dataclass(frozen=True)
class SymmetryReport:
    pairs: Tuple[Tuple[int, int], ...]
    permutation: Tuple[int, ...]
    mean_abs_difference: float
    max_abs_difference: float
    difference: np.ndarray

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "permutation": list(self.permutation),
            "mean_abs_difference": self.mean_abs_difference,
            "max_abs_difference": self.max_abs_difference,
        }


def swap_permutation(d: int, pairs) -> np.ndarray:
    perm = np.arange(d)
    seen = set()
    for a, b in pairs:
        a, b = int(a), int(b)
        if not (0 <= a < d and 0 <= b < d):
            raise ValueError(f"pair ({a}, {b}) outside [0, {d})")
        if a in seen or b in seen:
            raise ValueError(f"index appears in more than one pair: ({a}, {b})")
        seen.update((a, b))
        perm[a], perm[b] = b, a
    return perm


def symmetry_report_for(G, pairs) -> SymmetryReport:
    """Mean-abs gap between G and its relabelling under the declared swaps."""
    G = np.asarray(G, dtype=float)
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    perm = swap_permutation(G.shape[0], pairs)
    diff = np.abs(G - G[np.ix_(perm, perm)])
    return SymmetryReport(pairs, tuple(int(p) for p in perm), float(diff.mean()), float(diff.max()), diff)


def symmetry_report(result: EstimationResult, pairs) -> SymmetryReport:
    return symmetry_report_for(result.G_hat, pairs)
