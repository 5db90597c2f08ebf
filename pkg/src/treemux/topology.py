"""Multiplexer geometries and per-arm transmission coefficients.

Every arm of a binary-tree multiplexer is characterised by how many times a
photon entering it passes a router through the left (reflection, ``V_r``) and
the right (transmission, ``V_t``) input.  Arm values are always evaluated as
``V_r**a * V_t**b`` from integer exponents, never by multiplying along a path.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

__all__ = [
    "Kind",
    "LossModel",
    "TopologySpec",
    "ArmTransmissions",
    "hamming_weight",
    "cbtm_exponents",
    "iibtm_exponents",
    "oibtm_exponents",
    "arm_exponents",
    "arms_cbtm",
    "arms_iibtm",
    "arms_oibtm",
    "build_arm_transmissions",
    "format_term",
    "is_power_of_two",
]

Exponents = tuple[tuple[int, int], ...]


class Kind(str, enum.Enum):
    CBTM = "cbtm"
    IIBTM = "iibtm"
    OIBTM = "oibtm"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown multiplexer kind {value!r} (expected one of {choices})") from None


@dataclass(frozen=True)
class LossModel:
    """Router, detector and general transmission efficiencies."""

    v_r: float
    v_t: float
    v_d: float
    v_b: float

    def __post_init__(self) -> None:
        for name in ("v_r", "v_t", "v_d", "v_b"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def perfect(cls) -> "LossModel":
        return cls(1.0, 1.0, 1.0, 1.0)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class TopologySpec:
    kind: Kind
    n_units: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if isinstance(self.n_units, bool) or int(self.n_units) != self.n_units:
            raise ValueError(f"n_units must be an integer, got {self.n_units!r}")
        object.__setattr__(self, "n_units", int(self.n_units))
        if self.n_units < 1:
            raise ValueError(f"n_units must be >= 1, got {self.n_units}")
        if self.kind is Kind.CBTM and not is_power_of_two(self.n_units):
            raise ValueError(
                f"a complete binary-tree multiplexer needs a power-of-two number of units, got {self.n_units}"
            )

    @classmethod
    def cbtm_levels(cls, m: int) -> "TopologySpec":
        return cls(Kind.CBTM, 2**m)


@dataclass(frozen=True)
class ArmTransmissions:
    """Arm coefficients in wiring order and in priority (descending) order.

    ``priority_to_position[k]`` is the 1-based arm position of priority rank
    ``k + 1``.
    """

    positional: tuple[float, ...]
    prioritized: tuple[float, ...]
    priority_to_position: tuple[int, ...]

    @property
    def position_to_priority(self) -> tuple[int, ...]:
        ranks = [0] * len(self.positional)
        for rank, pos in enumerate(self.priority_to_position, start=1):
            ranks[pos - 1] = rank
        return tuple(ranks)


def hamming_weight(x: int) -> int:
    if x < 0:
        raise ValueError(f"hamming weight is defined for non-negative integers, got {x}")
    return bin(x).count("1")


def _floor_log2(x: int) -> int:
    return x.bit_length() - 1


def _ceil_log2(x: int) -> int:
    return (x - 1).bit_length()


@lru_cache(maxsize=None)
def cbtm_exponents(m: int) -> Exponents:
    if m < 0:
        raise ValueError(f"number of levels must be >= 0, got {m}")
    return tuple((m - hamming_weight(k), hamming_weight(k)) for k in range(2**m))


@lru_cache(maxsize=None)
def iibtm_exponents(n_units: int) -> Exponents:
    if n_units < 1:
        raise ValueError(f"n_units must be >= 1, got {n_units}")
    m1 = _floor_log2(n_units)
    n1 = 2 * (n_units - 2**m1)
    out = []
    for n in range(1, n_units + 1):
        if n <= n1:
            h = hamming_weight(n - 1)
            out.append((m1 + 1 - h, h))
        else:
            h = hamming_weight(n - n1 // 2 - 1)
            out.append((m1 - h, h))
    return tuple(out)


@lru_cache(maxsize=None)
def oibtm_exponents(n_units: int) -> Exponents:
    if n_units < 1:
        raise ValueError(f"n_units must be >= 1, got {n_units}")
    if n_units == 1:
        # router-free passthrough
        return ((0, 0),)
    m2 = _ceil_log2(n_units)
    n2 = 2 ** (m2 - 1)
    m3 = _floor_log2(n_units - n2)
    n4 = 2**m3
    n3 = 2 * (n_units - n2 - n4)
    out = []
    for n in range(1, n_units + 1):
        if n <= n2:
            h = hamming_weight(n - 1)
            out.append((m2 - h, h))
        elif n <= n2 + n3:
            h = hamming_weight(n - n2 - 1)
            out.append((m3 + 1 - h, 1 + h))
        else:
            h = hamming_weight(n - n2 - n3 // 2 - 1)
            out.append((m3 - h, 1 + h))
    return tuple(out)


def arm_exponents(spec: TopologySpec) -> Exponents:
    """(reflection, transmission) exponent pair of every arm, by position."""
    if spec.kind is Kind.CBTM:
        return cbtm_exponents(_floor_log2(spec.n_units))
    if spec.kind is Kind.IIBTM:
        return iibtm_exponents(spec.n_units)
    return oibtm_exponents(spec.n_units)


def _evaluate(exponents: Exponents, loss: LossModel) -> list[float]:
    return [loss.v_r**a * loss.v_t**b for a, b in exponents]


def arms_cbtm(m: int, loss: LossModel) -> list[float]:
    return _evaluate(cbtm_exponents(m), loss)


def arms_iibtm(n_units: int, loss: LossModel) -> list[float]:
    return _evaluate(iibtm_exponents(n_units), loss)


def arms_oibtm(n_units: int, loss: LossModel) -> list[float]:
    return _evaluate(oibtm_exponents(n_units), loss)


def build_arm_transmissions(spec: TopologySpec, loss: LossModel) -> ArmTransmissions:
    positional = _evaluate(arm_exponents(spec), loss)
    # stable: equal values keep wiring order
    order = sorted(range(len(positional)), key=lambda k: (-positional[k], k))
    return ArmTransmissions(
        positional=tuple(positional),
        prioritized=tuple(positional[k] for k in order),
        priority_to_position=tuple(k + 1 for k in order),
    )


def format_term(a: int, b: int) -> str:
    """Render ``V_r**a * V_t**b`` as e.g. ``V_r^2V_t`` (``1`` for a bare arm)."""

    def factor(symbol: str, power: int) -> str:
        if power == 0:
            return ""
        return symbol if power == 1 else f"{symbol}^{power}"

    return (factor("V_r", a) + factor("V_t", b)) or "1"


def levels_for(n_units: int) -> int:
    """m with 2**m == n_units; ``n_units`` must be a power of two."""
    if not is_power_of_two(n_units):
        raise ValueError(f"{n_units} is not a power of two")
    return _floor_log2(n_units)


def router_count(exponents: Exponents) -> list[int]:
    return [a + b for a, b in exponents]

