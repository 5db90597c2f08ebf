"""Output photon-number statistics of a spatially multiplexed heralded source.

Every multiplexed unit generates a Poisson number of photon pairs, heralds
with a photon-number-resolving detector of efficiency ``V_D`` and, when the
detected count lies in the accepted set ``S``, the signal photons of the
highest-priority heralded unit travel through its arm with total
transmission ``V_n``.  The output distribution is

    P_i = (1 - q)^N [i == 0]
          + sum_n (1 - q)^(n-1) sum_l sum_{j in S} P(j|l) P(l) C(l,i) V_n^i (1-V_n)^(l-i)

with ``q = sum_{j in S} P(j)`` the heralding probability of a single unit.
The series over ``l`` is cut at the smallest order whose Poisson tail drops
below ``TAIL_TOLERANCE``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import pdtrc

from .topology import LossModel, TopologySpec, build_arm_transmissions

__all__ = [
    "TAIL_TOLERANCE",
    "L_MAX_CAP",
    "DetectionStrategy",
    "SourceConfig",
    "OutputDistribution",
    "poisson_pmf",
    "poisson_terms",
    "truncation_order",
    "binomial_coefficients",
    "binomial_matrix",
    "detect_given_generated",
    "detect_marginal",
    "transmit_given_entered",
    "effective_arm",
    "herald_weights",
    "accept_probability",
    "arm_output_distribution",
    "output_distribution",
    "single_photon_probability",
    "total_arms",
]

TAIL_TOLERANCE = 1e-12
L_MAX_CAP = 200


@dataclass(frozen=True)
class DetectionStrategy:
    """Set of detected idler counts that open the multiplexer input."""

    accepted: tuple[int, ...] = (1,)
    boundary: int | None = None

    def __post_init__(self) -> None:
        accepted = tuple(int(j) for j in self.accepted)
        if not accepted:
            raise ValueError("detection strategy needs at least one accepted photon number")
        if any(j < 1 for j in accepted):
            raise ValueError(f"accepted photon numbers must be positive, got {accepted}")
        if any(b <= a for a, b in zip(accepted, accepted[1:])):
            raise ValueError(f"accepted photon numbers must be strictly ascending, got {accepted}")
        boundary = max(accepted) if self.boundary is None else int(self.boundary)
        if boundary < max(accepted):
            raise ValueError(f"boundary {boundary} is below the largest accepted count {max(accepted)}")
        object.__setattr__(self, "accepted", accepted)
        object.__setattr__(self, "boundary", boundary)

    @classmethod
    def spd(cls) -> "DetectionStrategy":
        """Accept exactly one detected photon."""
        return cls((1,))

    @classmethod
    def parse(cls, text: "str | Iterable[int] | DetectionStrategy") -> "DetectionStrategy":
        """Accept ``"spd"``, ``"1,2"``, ``"1-3"`` or an iterable of ints."""
        if isinstance(text, DetectionStrategy):
            return text
        if not isinstance(text, str):
            return cls(tuple(sorted(set(int(j) for j in text))))
        text = text.strip().lower()
        if text == "spd":
            return cls.spd()
        values: set[int] = set()
        for part in text.replace(" ", "").split(","):
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                values.update(range(int(lo), int(hi) + 1))
            else:
                values.add(int(part))
        return cls(tuple(sorted(values)))

    def label(self) -> str:
        return ",".join(str(j) for j in self.accepted)


@dataclass(frozen=True)
class SourceConfig:
    topology: TopologySpec
    loss: LossModel
    strategy: DetectionStrategy = field(default_factory=DetectionStrategy.spd)
    mean_photon_number: float = 0.0

    def __post_init__(self) -> None:
        if not (self.mean_photon_number >= 0.0) or not math.isfinite(self.mean_photon_number):
            raise ValueError(f"mean photon number must be finite and >= 0, got {self.mean_photon_number!r}")

    def with_mean(self, mean_photon_number: float) -> "SourceConfig":
        return SourceConfig(self.topology, self.loss, self.strategy, mean_photon_number)


@dataclass(frozen=True)
class OutputDistribution:
    probabilities: np.ndarray
    truncation_tail: float
    l_max: int

    def __getitem__(self, i: int) -> float:
        return float(self.probabilities[i])

    def total(self) -> float:
        return float(self.probabilities.sum())


def poisson_pmf(l: int, lam: float) -> float:
    if l < 0 or lam < 0:
        raise ValueError("poisson_pmf needs l >= 0 and lambda >= 0")
    p = math.exp(-lam)
    for k in range(l):
        p *= lam / (k + 1)
    return p


def poisson_terms(lam: float | np.ndarray, l_max: int) -> np.ndarray:
    """Poisson probabilities for l = 0..l_max along the last axis.

    Built by the recurrence p_{l+1} = p_l * lam / (l + 1); ``lam`` may be an
    array, in which case the result has shape ``lam.shape + (l_max + 1,)``.
    """
    lam = np.asarray(lam, dtype=float)
    ratios = lam[..., None] / np.arange(1, l_max + 1, dtype=float)
    out = np.empty(lam.shape + (l_max + 1,))
    out[..., 0] = np.exp(-lam)
    out[..., 1:] = np.exp(-lam)[..., None] * np.cumprod(ratios, axis=-1)
    return out


def truncation_order(lam: float, tol: float = TAIL_TOLERANCE, cap: int = L_MAX_CAP) -> tuple[int, float]:
    """Smallest l_max with Poisson tail P(l > l_max) < tol, and that tail."""
    ks = np.arange(cap + 1)
    tails = pdtrc(ks, lam)
    below = np.nonzero(tails < tol)[0]
    l_max = int(below[0]) if below.size else cap
    return l_max, float(tails[l_max])


def binomial_coefficients(n_max: int) -> np.ndarray:
    """Lower-triangular table C[l, k] = binom(l, k) for l, k <= n_max."""
    table = np.zeros((n_max + 1, n_max + 1))
    for l in range(n_max + 1):
        c = 1.0
        table[l, 0] = 1.0
        for k in range(l):
            c = c * (l - k) / (k + 1)
            table[l, k + 1] = c
    return table


_COEFFS = binomial_coefficients(L_MAX_CAP)


def binomial_matrix(p: float, l_max: int, width: int | None = None) -> np.ndarray:
    """B[l, k] = C(l, k) p^k (1-p)^(l-k) for l <= l_max, k < width (zero for k > l)."""
    width = l_max + 1 if width is None else width
    l = np.arange(l_max + 1)[:, None]
    k = np.arange(width)[None, :]
    coeff = np.zeros((l_max + 1, width))
    cols = min(width, l_max + 1)
    coeff[:, :cols] = _COEFFS[: l_max + 1, :cols]
    with np.errstate(invalid="ignore"):
        powers = np.where(k <= l, float(p) ** k * (1.0 - float(p)) ** np.maximum(l - k, 0), 0.0)
    return coeff * powers


def _binomial_pmf(k: int, n: int, p: float) -> float:
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= {k} <= {n}")
    c = 1.0
    for r in range(min(k, n - k)):
        c = c * (n - r) / (r + 1)
    return c * p**k * (1.0 - p) ** (n - k)


def detect_given_generated(j: int, l: int, v_d: float) -> float:
    """Probability of registering ``j`` of ``l`` idler photons."""
    return _binomial_pmf(j, l, v_d)


def transmit_given_entered(i: int, l: int, v_n: float) -> float:
    """Probability that ``i`` of ``l`` signal photons reach the output."""
    return _binomial_pmf(i, l, v_n)


def detect_marginal(j: int, lam: float, v_d: float, l_max: int | None = None) -> float:
    """Probability of detecting exactly ``j`` idler photons in one unit.

    With ``l_max`` given the series stops there.  Otherwise it runs until the
    terms are decreasing geometrically and negligible relative to the sum,
    which keeps the result accurate relative to its own size even when it is
    far below the absolute truncation tolerance.
    """
    if l_max is not None:
        return math.fsum(detect_given_generated(j, l, v_d) * poisson_pmf(l, lam) for l in range(j, l_max + 1))
    term = detect_given_generated(j, j, v_d) * poisson_pmf(j, lam)
    terms = [term]
    l = j
    while l < j + L_MAX_CAP:
        ratio = lam * (1.0 - v_d) / (l + 1 - j)
        term *= ratio
        terms.append(term)
        l += 1
        if ratio < 0.5 and term <= 1e-17 * terms[0]:
            break
    return math.fsum(terms)


def effective_arm(v_geometric: float, v_b: float) -> float:
    return v_b * v_geometric


def total_arms(geometric: Sequence[float], v_b: float) -> np.ndarray:
    return np.array([effective_arm(v, v_b) for v in geometric], dtype=float)


def herald_weights(
    lam: float | np.ndarray, v_d: float, strategy: DetectionStrategy, l_max: int
) -> np.ndarray:
    """sum_{j in S} P(j|l) P(l) for l = 0..l_max (last axis)."""
    accept = accept_probability(v_d, strategy, l_max)
    return poisson_terms(lam, l_max) * accept


def accept_probability(v_d: float, strategy: DetectionStrategy, l_max: int) -> np.ndarray:
    """sum_{j in S} P(j|l) for l = 0..l_max."""
    width = max(max(strategy.accepted), l_max) + 1
    det = binomial_matrix(v_d, l_max, width)
    return det[:, list(strategy.accepted)].sum(axis=1)


def arm_output_distribution(
    arms: Sequence[float],
    lam: float,
    v_d: float,
    strategy: DetectionStrategy,
    i_max: int,
) -> OutputDistribution:
    """Output distribution for total arm transmissions in priority order.

    ``arms[0]`` is the arm preferred by the priority logic.  No sorting is
    done here, which lets callers evaluate arbitrary priority orders.
    """
    if i_max < 0:
        raise ValueError("i_max must be >= 0")
    l_max, tail = truncation_order(lam)
    w = herald_weights(lam, v_d, strategy, l_max)
    q = float(w.sum())
    miss = 1.0 - q
    probs = np.zeros(l_max + 1)
    transfer: dict[float, np.ndarray] = {}
    weight = 1.0
    for v in arms:
        v = float(v)
        if v not in transfer:
            transfer[v] = w @ binomial_matrix(v, l_max)
        probs += weight * transfer[v]
        weight *= miss
    probs[0] += weight
    out = np.zeros(i_max + 1)
    keep = min(i_max, l_max) + 1
    out[:keep] = probs[:keep]
    return OutputDistribution(out, tail, l_max)


def output_distribution(config: SourceConfig, i_max: int) -> OutputDistribution:
    arms = build_arm_transmissions(config.topology, config.loss)
    return arm_output_distribution(
        total_arms(arms.prioritized, config.loss.v_b),
        config.mean_photon_number,
        config.loss.v_d,
        config.strategy,
        i_max,
    )


def single_photon_probability(config: SourceConfig) -> float:
    return output_distribution(config, 1)[1]
