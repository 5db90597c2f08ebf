"""Two-stage optimisation of the single-photon probability and parameter sweeps.

For fixed losses and detection strategy the mean photon number is tuned per
system size N (coarse scan, then golden-section refinement), after which the
size with the highest achievable probability is selected.  All sizes are
optimised together: the golden-section iterations run elementwise over an
array of brackets, one bracket per N.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import (
    DetectionStrategy,
    accept_probability,
    binomial_matrix,
    poisson_terms,
    total_arms,
    truncation_order,
)
from .topology import Kind, LossModel, TopologySpec, build_arm_transmissions

__all__ = [
    "LAMBDA_LO",
    "LAMBDA_HI",
    "PRESCAN_STEP",
    "LAMBDA_TOL",
    "DEFAULT_N_MAX",
    "PerNOutcome",
    "OptimizationOutcome",
    "Axis",
    "SweepGrid",
    "SweepRow",
    "golden_section_max",
    "admissible_sizes",
    "optimize_lambda",
    "optimize_n",
    "sweep_difference",
    "compare_strategies",
]

LAMBDA_LO = 1e-6
LAMBDA_HI = 3.0
PRESCAN_STEP = 0.05
LAMBDA_TOL = 1e-6
DEFAULT_N_MAX = 128

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(
    f: Callable[[np.ndarray], np.ndarray],
    a: np.ndarray | float,
    b: np.ndarray | float,
    tol: float = LAMBDA_TOL,
    width: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Maximise a unimodal ``f`` on every bracket ``[a, b]`` at once.

    ``f`` must map an array of abscissae to an array of the same shape,
    evaluating element ``k`` with the function belonging to bracket ``k``.
    The iteration count is derived from ``width`` (default: the widest
    bracket), so a fixed ``width`` makes the result of each element
    independent of the other brackets in the batch.  Returns the midpoints
    of the final brackets and ``f`` there.
    """
    a = np.array(a, dtype=float, ndmin=1)
    b = np.array(b, dtype=float, ndmin=1)
    if width is None:
        width = float(np.max(b - a)) if a.size else 0.0
    n_iter = max(0, math.ceil(math.log(max(width, tol) / tol) / -math.log(_INVPHI)))
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = f(c)
    fd = f(d)
    for _ in range(n_iter):
        left = fc >= fd
        # maximum lies in [a, d] where left, else in [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INVPHI * (b - a)
        new_d = a + _INVPHI * (b - a)
        probe = np.where(left, new_c, new_d)
        fp = f(probe)
        c, d, fc, fd = (
            np.where(left, new_c, d),
            np.where(left, c, new_d),
            np.where(left, fp, fd),
            np.where(left, fc, fp),
        )
    x = 0.5 * (a + b)
    return x, f(x)


class _SinglePhotonBatch:
    """P_1 for several priority-ordered arm lists, vectorised over mean photon number.

    The per-arm transfer sum only depends on the arm value, so it is computed
    once per distinct value.  Heralding weights are accumulated left to right
    with cumulative products and sums, which keeps every row's arithmetic
    independent of how wide the padded batch is.
    """

    def __init__(self, arm_lists: Sequence[Sequence[float]], v_d: float, strategy: DetectionStrategy, l_max: int):
        self.l_max = l_max
        self.n_rows = len(arm_lists)
        self.width = max(len(arms) for arms in arm_lists)
        flat = np.concatenate([np.asarray(arms, dtype=float) for arms in arm_lists])
        values, inverse = np.unique(flat, return_inverse=True)
        index = np.full((self.n_rows, self.width), -1, dtype=np.intp)
        start = 0
        for row, arms in enumerate(arm_lists):
            index[row, : len(arms)] = inverse[start : start + len(arms)]
            start += len(arms)
        self.index = index
        self.mask = index >= 0
        # one-photon transfer C(l,1) V (1-V)^(l-1) per distinct value
        self.transfer = np.stack([binomial_matrix(v, l_max, 2)[:, 1] for v in values])
        self.accept = accept_probability(v_d, strategy, l_max)

    def components(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = poisson_terms(lam, self.l_max) * self.accept
        q = w.sum(axis=-1)
        g = (w[..., None, :] * self.transfer).sum(axis=-1)
        return q, g

    def combine(self, q: np.ndarray, g: np.ndarray, rows: np.ndarray) -> np.ndarray:
        idx = self.index[rows]
        mask = self.mask[rows]
        gathered = np.where(mask, np.take_along_axis(g, np.where(mask, idx, 0), axis=-1), 0.0)
        miss = np.repeat((1.0 - q)[:, None], self.width, axis=1)
        miss[:, 0] = 1.0
        weights = np.cumprod(miss, axis=1)
        return np.cumsum(gathered * weights, axis=1)[:, -1]

    def __call__(self, lam: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if rows is None:
            rows = np.arange(self.n_rows)
        q, g = self.components(lam)
        return self.combine(q, g, rows)

    def prescan(self, grid: np.ndarray) -> np.ndarray:
        """P_1 on a common grid, shape (len(grid), n_rows)."""
        q, g = self.components(grid)
        k = len(grid)
        which = np.repeat(np.arange(k), self.n_rows)
        rows = np.tile(np.arange(self.n_rows), k)
        return self.combine(q[which], g[which], rows).reshape(k, self.n_rows)


def _prescan_grid(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(math.floor((hi - lo) / step + 1e-9))
    grid = [lo] + [step * k for k in range(1, count + 1) if step * k > lo]
    if grid[-1] < hi:
        grid.append(hi)
    return np.array(grid)


def _optimize_rows(
    arm_lists: Sequence[Sequence[float]],
    v_d: float,
    strategy: DetectionStrategy,
    lam_lo: float = LAMBDA_LO,
    lam_hi: float = LAMBDA_HI,
    step: float = PRESCAN_STEP,
    tol: float = LAMBDA_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    l_max, _ = truncation_order(lam_hi)
    batch = _SinglePhotonBatch(arm_lists, v_d, strategy, l_max)
    grid = _prescan_grid(lam_lo, lam_hi, step)
    coarse = batch.prescan(grid)
    best = np.argmax(coarse, axis=0)
    a = grid[np.maximum(best - 1, 0)]
    b = grid[np.minimum(best + 1, len(grid) - 1)]
    lam, p1 = golden_section_max(batch, a, b, tol=tol, width=2.0 * step)
    # a flat or edge-peaked curve can leave the refined value below the scan
    coarse_best = coarse[best, np.arange(len(arm_lists))]
    better = coarse_best > p1 + 1e-12
    lam = np.where(better, grid[best], lam)
    p1 = np.where(better, coarse_best, p1)
    return lam, p1


@dataclass(frozen=True)
class PerNOutcome:
    n_units: int
    lambda_opt: float
    p1_achievable: float


@dataclass(frozen=True)
class OptimizationOutcome:
    kind: Kind
    loss: LossModel
    strategy: DetectionStrategy
    per_n: tuple[PerNOutcome, ...]
    n_opt: int
    lambda_opt: float
    p1_max: float

    def curve(self) -> dict[int, float]:
        return {o.n_units: o.p1_achievable for o in self.per_n}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "loss": {"v_r": self.loss.v_r, "v_t": self.loss.v_t, "v_d": self.loss.v_d, "v_b": self.loss.v_b},
            "strategy": list(self.strategy.accepted),
            "n_opt": self.n_opt,
            "lambda_opt": self.lambda_opt,
            "p1_max": self.p1_max,
            "sizes_scanned": [o.n_units for o in self.per_n],
        }


def _sorted_total_arms(spec: TopologySpec, loss: LossModel) -> np.ndarray:
    return total_arms(build_arm_transmissions(spec, loss).prioritized, loss.v_b)


def optimize_lambda(
    topology: TopologySpec,
    loss: LossModel,
    strategy: DetectionStrategy | None = None,
    tol: float = LAMBDA_TOL,
) -> PerNOutcome:
    strategy = strategy or DetectionStrategy.spd()
    lam, p1 = _optimize_rows([_sorted_total_arms(topology, loss)], loss.v_d, strategy, tol=tol)
    return PerNOutcome(topology.n_units, float(lam[0]), float(p1[0]))


def admissible_sizes(kind: Kind | str, n_max: int) -> list[int]:
    kind = Kind.parse(kind)
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if kind is Kind.CBTM:
        return [2**m for m in range(n_max.bit_length()) if 2**m <= n_max]
    return list(range(1, n_max + 1))


def optimize_n(
    kind: Kind | str,
    loss: LossModel,
    strategy: DetectionStrategy | None = None,
    n_max: int = DEFAULT_N_MAX,
    tol: float = LAMBDA_TOL,
) -> OptimizationOutcome:
    kind = Kind.parse(kind)
    strategy = strategy or DetectionStrategy.spd()
    sizes = admissible_sizes(kind, n_max)
    arm_lists = [_sorted_total_arms(TopologySpec(kind, n), loss) for n in sizes]
    lams, p1s = _optimize_rows(arm_lists, loss.v_d, strategy, tol=tol)
    per_n = tuple(PerNOutcome(n, float(lam), float(p)) for n, lam, p in zip(sizes, lams, p1s))
    best = int(np.argmax(p1s))  # first maximum, i.e. the smallest N
    return OptimizationOutcome(
        kind=kind,
        loss=loss,
        strategy=strategy,
        per_n=per_n,
        n_opt=per_n[best].n_units,
        lambda_opt=per_n[best].lambda_opt,
        p1_max=per_n[best].p1_achievable,
    )


LOSS_FIELDS = ("v_r", "v_t", "v_d", "v_b")
_AXIS_ALIASES = {"vr": "v_r", "vt": "v_t", "vd": "v_d", "vb": "v_b"}


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    step: float

    def __post_init__(self) -> None:
        if self.name not in LOSS_FIELDS:
            raise ValueError(f"axis must be one of {LOSS_FIELDS}, got {self.name!r}")
        if not self.step > 0:
            raise ValueError(f"axis step must be positive, got {self.step}")
        if not (0.0 <= self.start <= 1.0 and 0.0 <= self.stop <= 1.0):
            raise ValueError(f"axis range must lie in [0, 1], got [{self.start}, {self.stop}]")
        if self.stop < self.start:
            raise ValueError(f"axis stop {self.stop} is below start {self.start}")

    def values(self) -> list[float]:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return [round(self.start + k * self.step, 12) for k in range(count + 1)]

    @classmethod
    def parse(cls, text: str) -> "Axis":
        """``name:start:stop:step`` e.g. ``v_t:0.9:0.985:0.005``."""
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError(f"axis spec must be name:start:stop:step, got {text!r}")
        name = _AXIS_ALIASES.get(parts[0].strip().lower(), parts[0].strip().lower())
        return cls(name, float(parts[1]), float(parts[2]), float(parts[3]))


@dataclass(frozen=True)
class SweepGrid:
    axes: tuple[Axis, ...]
    fixed: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("a sweep grid has one or two axes")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate sweep axis in {names}")
        missing = [f for f in LOSS_FIELDS if f not in names and f not in self.fixed]
        if missing:
            raise ValueError(f"no value for loss parameter(s) {missing}")
        for name, value in self.fixed.items():
            if name not in LOSS_FIELDS:
                raise ValueError(f"unknown loss parameter {name!r}")
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def points(self) -> list[LossModel]:
        """Grid points in row-major order (first axis slowest)."""
        base = {k: v for k, v in self.fixed.items() if k not in {a.name for a in self.axes}}
        out = []
        if len(self.axes) == 1:
            for x in self.axes[0].values():
                out.append(LossModel(**{**base, self.axes[0].name: x}))
        else:
            for x in self.axes[0].values():
                for y in self.axes[1].values():
                    out.append(LossModel(**{**base, self.axes[0].name: x, self.axes[1].name: y}))
        return out


@dataclass(frozen=True)
class SweepRow:
    index: int
    loss: LossModel
    p1_max_a: float
    n_opt_a: int
    lambda_opt_a: float
    p1_max_b: float
    n_opt_b: int
    lambda_opt_b: float

    @property
    def delta_p(self) -> float:
        return self.p1_max_a - self.p1_max_b

    @property
    def delta_n(self) -> int:
        return self.n_opt_a - self.n_opt_b


Side = tuple["Kind | str", DetectionStrategy]


def _sweep_point(args: tuple[int, LossModel, Side, Side, int]) -> SweepRow:
    index, loss, (kind_a, s_a), (kind_b, s_b), n_max = args
    a = optimize_n(kind_a, loss, s_a, n_max)
    if Kind.parse(kind_a) is Kind.parse(kind_b) and s_a == s_b:
        b = a
    else:
        b = optimize_n(kind_b, loss, s_b, n_max)
    return SweepRow(index, loss, a.p1_max, a.n_opt, a.lambda_opt, b.p1_max, b.n_opt, b.lambda_opt)


def _run(tasks: list, workers: int | None) -> list[SweepRow]:
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [_sweep_point(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps grid order whatever the completion order
        return list(pool.map(_sweep_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def sweep_difference(
    grid: SweepGrid,
    minuend: Side,
    subtrahend: Side,
    n_max: int = DEFAULT_N_MAX,
    workers: int | None = 1,
) -> list[SweepRow]:
    """Maximal-probability and optimal-size differences over a loss grid."""
    tasks = [(k, loss, minuend, subtrahend, n_max) for k, loss in enumerate(grid.points())]
    return _run(tasks, workers)


def compare_strategies(
    grid: SweepGrid,
    kind: Kind | str,
    s_a: DetectionStrategy,
    s_b: DetectionStrategy,
    n_max: int = DEFAULT_N_MAX,
    workers: int | None = 1,
) -> list[SweepRow]:
    return sweep_difference(grid, (kind, s_a), (kind, s_b), n_max, workers)
