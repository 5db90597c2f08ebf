"""Event-by-event Monte Carlo simulation of a multiplexed heralded source.

Used as a brute-force cross-check of the analytic output distribution.  Each
trial draws photon-pair numbers unit by unit in priority order, heralds with
a binomially thinned detector and stops at the first unit whose detected
count is accepted; the heralded unit's photons then survive its arm
independently.

Reproducibility: trials are grouped into fixed-size blocks and block ``k``
draws from its own Philox stream seeded by ``SeedSequence([seed, k])``.  The
mapping from (seed, trial index) to random numbers therefore does not depend
on how blocks are distributed over worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import OutputDistribution, SourceConfig, poisson_terms, total_arms, truncation_order
from .topology import build_arm_transmissions

__all__ = ["BLOCK_SIZE", "TrialResult", "McEstimate", "block_generator", "simulate_trial", "run_trials", "z_scores"]

BLOCK_SIZE = 1 << 16
_SAMPLER_TAIL = 1e-16


@dataclass(frozen=True)
class TrialResult:
    heralded_unit: int | None
    output_photons: int

    def __post_init__(self) -> None:
        if self.heralded_unit is None and self.output_photons != 0:
            raise ValueError("photons can only reach the output after a heralding event")


@dataclass(frozen=True)
class McEstimate:
    trials: int
    counts: np.ndarray
    heralded: int

    @property
    def p_i_hat(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def std_err(self) -> np.ndarray:
        p = self.p_i_hat
        return np.sqrt(p * (1.0 - p) / self.trials)

    def p(self, i: int) -> float:
        return float(self.p_i_hat[i]) if i < len(self.counts) else 0.0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "heralded": self.heralded,
            "counts": [int(c) for c in self.counts],
            "p_i_hat": [float(p) for p in self.p_i_hat],
            "std_err": [float(s) for s in self.std_err],
        }


def block_generator(seed: int, block: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def _poisson_cdf(lam: float) -> np.ndarray:
    l_max, _ = truncation_order(lam, tol=_SAMPLER_TAIL)
    return np.cumsum(poisson_terms(lam, l_max))


def _poisson_inverse(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # mass beyond the table (< 1e-16) is folded into its last entry
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def _prepare(config: SourceConfig) -> tuple[np.ndarray, np.ndarray]:
    arms = build_arm_transmissions(config.topology, config.loss)
    return total_arms(arms.prioritized, config.loss.v_b), _poisson_cdf(config.mean_photon_number)


def simulate_trial(config: SourceConfig, rng: np.random.Generator) -> TrialResult:
    """One trial, written out unit by unit; slow but easy to audit."""
    arms, cdf = _prepare(config)
    accepted = set(config.strategy.accepted)
    for unit, v_n in enumerate(arms, start=1):
        l = int(_poisson_inverse(cdf, np.array([rng.random()]))[0])
        j = int(rng.binomial(l, config.loss.v_d))
        if j in accepted:
            return TrialResult(unit, int(rng.binomial(l, v_n)))
    return TrialResult(None, 0)


def _run_block(args: tuple[SourceConfig, int, int, int]) -> tuple[np.ndarray, int]:
    config, seed, block, size = args
    rng = block_generator(seed, block)
    arms, cdf = _prepare(config)
    accepted = np.array(config.strategy.accepted)
    active = np.arange(size)
    unit = np.full(size, -1)
    pairs = np.zeros(size, dtype=np.int64)
    for n in range(len(arms)):
        if active.size == 0:
            break
        l = _poisson_inverse(cdf, rng.random(active.size))
        j = rng.binomial(l, config.loss.v_d)
        hit = np.isin(j, accepted)
        unit[active[hit]] = n
        pairs[active[hit]] = l[hit]
        active = active[~hit]
    heralded = unit >= 0
    out = np.zeros(size, dtype=np.int64)
    out[heralded] = rng.binomial(pairs[heralded], arms[unit[heralded]])
    return np.bincount(out), int(heralded.sum())


def run_trials(config: SourceConfig, trials: int, seed: int, workers: int = 1) -> McEstimate:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    blocks = [
        (config, seed, k, min(BLOCK_SIZE, trials - k * BLOCK_SIZE))
        for k in range(math.ceil(trials / BLOCK_SIZE))
    ]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, blocks))
    else:
        results = [_run_block(b) for b in blocks]
    width = max(len(c) for c, _ in results)
    counts = np.zeros(width, dtype=np.int64)
    for c, _ in results:
        counts[: len(c)] += c
    return McEstimate(trials, counts, sum(h for _, h in results))


def z_scores(estimate: McEstimate, analytic: OutputDistribution, i_values=(0, 1, 2)) -> dict[int, float]:
    """(p_hat - P) / sigma with sigma = sqrt(P (1 - P) / trials) from the analytic P."""
    out = {}
    for i in i_values:
        p = analytic[i] if i < len(analytic.probabilities) else 0.0
        sigma = math.sqrt(max(p * (1.0 - p), 0.0) / estimate.trials)
        diff = estimate.p(i) - p
        out[i] = 0.0 if sigma == 0.0 and diff == 0.0 else (math.inf if sigma == 0.0 else diff / sigma)
    return out
