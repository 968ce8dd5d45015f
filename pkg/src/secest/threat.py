"""Sparse sensor attacks with a time-varying support."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from secest.errors import SparsityViolated

SENSORS_PER_BUS = 4


class AttackKind(str, Enum):
    NONE = "none"
    FIXED_SET = "fixed_set"
    SWITCHING = "switching_schedule"
    CUSTOM = "custom_schedule"
    RANDOM_SUPPORT = "random_support"


class SignalKind(str, Enum):
    RANDOM_UNIFORM = "random_uniform"
    SLOPE = "slope"
    CONSTANT = "constant"


@dataclass(frozen=True)
class Signal:
    kind: SignalKind = SignalKind.CONSTANT
    lo: float = -10.0
    hi: float = 10.0
    rate: float = 0.2
    value: float = 0.0

    @classmethod
    def random_uniform(cls, lo: float, hi: float) -> "Signal":
        if not lo <= hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        return cls(SignalKind.RANDOM_UNIFORM, lo=lo, hi=hi)

    @classmethod
    def slope(cls, rate: float) -> "Signal":
        return cls(SignalKind.SLOPE, rate=rate)

    @classmethod
    def constant(cls, value: float) -> "Signal":
        return cls(SignalKind.CONSTANT, value=value)

    def to_dict(self) -> dict:
        if self.kind is SignalKind.RANDOM_UNIFORM:
            return {"kind": self.kind.value, "lo": self.lo, "hi": self.hi}
        if self.kind is SignalKind.SLOPE:
            return {"kind": self.kind.value, "rate": self.rate}
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Signal":
        kind = SignalKind(d.get("kind", "constant"))
        if kind is SignalKind.RANDOM_UNIFORM:
            return cls.random_uniform(float(d.get("lo", -10.0)), float(d.get("hi", 10.0)))
        if kind is SignalKind.SLOPE:
            return cls.slope(float(d.get("rate", 0.2)))
        return cls.constant(float(d.get("value", d.get("c", 0.0))))


@dataclass(frozen=True)
class AttackScenario:
    """Which sensors are attacked at step k, and with what.

    ``sets`` means: the single attacked set (fixed_set), the cycle indexed by
    ``k mod len(sets)`` (switching_schedule), or the support per step with
    steps past the end unattacked (custom_schedule). ``random_support`` picks
    a fresh uniformly random p-subset of ``range(m)`` every step.
    """

    kind: AttackKind = AttackKind.NONE
    p: int = 0
    signal: Signal = field(default_factory=Signal)
    sets: tuple[tuple[int, ...], ...] = ()
    seed: int = 0
    m: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "sets", tuple(tuple(sorted(int(i) for i in s)) for s in self.sets))
        if self.p < 0:
            raise ValueError(f"p must be nonnegative, got {self.p}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.kind in (AttackKind.FIXED_SET, AttackKind.SWITCHING) and not self.sets:
            raise ValueError(f"{self.kind.value} needs at least one sensor set")
        if self.kind is AttackKind.RANDOM_SUPPORT and (self.m is None or self.m < self.p):
            raise ValueError("random_support needs m >= p")
        # fixed and cyclic schedules can be checked once, up front
        if self.kind in (AttackKind.FIXED_SET, AttackKind.SWITCHING):
            for s in self.sets:
                if len(s) > self.p:
                    raise SparsityViolated(f"support {list(s)} has {len(s)} sensors, budget p = {self.p}")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value, "p": self.p, "signal": self.signal.to_dict(), "seed": self.seed}
        if self.sets:
            d["sets"] = [list(s) for s in self.sets]
        if self.m is not None:
            d["m"] = self.m
        return {"attack": d}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttackScenario":
        d = data.get("attack", data)
        return cls(
            kind=AttackKind(d.get("kind", "none")),
            p=int(d.get("p", 0)),
            signal=Signal.from_dict(d.get("signal", {})),
            sets=tuple(tuple(s) for s in d.get("sets", ())),
            seed=int(d.get("seed", 0)),
            m=d.get("m"),
        )


def load_scenario(path: str | Path) -> AttackScenario:
    return AttackScenario.from_dict(json.loads(Path(path).read_text()))


def _rng(seed: int, stream: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, k])


def support_at(sc: AttackScenario, k: int) -> tuple[int, ...]:
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if sc.kind is AttackKind.NONE:
        return ()
    if sc.kind is AttackKind.FIXED_SET:
        s = sc.sets[0]
    elif sc.kind is AttackKind.SWITCHING:
        s = sc.sets[k % len(sc.sets)]
    elif sc.kind is AttackKind.CUSTOM:
        s = sc.sets[k] if k < len(sc.sets) else ()
    else:
        s = tuple(sorted(int(i) for i in _rng(sc.seed, 0, k).choice(sc.m, size=sc.p, replace=False)))
    if len(s) > sc.p:
        raise SparsityViolated(f"support at k = {k} has {len(s)} sensors, budget p = {sc.p}")
    return s


def signal_vector(sc: AttackScenario, k: int, m: int) -> np.ndarray:
    """Attack value every sensor would receive at step k if it were attacked."""
    sig = sc.signal
    if sig.kind is SignalKind.SLOPE:
        return np.full(m, k * sig.rate)
    if sig.kind is SignalKind.CONSTANT:
        return np.full(m, sig.value)
    # independent per (seed, k, sensor); the sensor index selects the draw
    return _rng(sc.seed, 1, k).uniform(sig.lo, sig.hi, size=m)


def signal_at(sc: AttackScenario, k: int, sensor: int, m: int | None = None) -> float:
    m = max(sensor + 1, m or 0, sc.m or 0)
    return float(signal_vector(sc, k, m)[sensor])


def attack_vector(sc: AttackScenario, k: int, m: int) -> tuple[np.ndarray, tuple[int, ...]]:
    a = np.zeros(m)
    s = support_at(sc, k)
    if s:
        if s[-1] >= m:
            raise ValueError(f"attacked sensor {s[-1]} out of range for m = {m}")
        a[list(s)] = signal_vector(sc, k, max(m, sc.m or 0))[list(s)]
    return a, s


def apply(sc: AttackScenario, k: int, y_clean: np.ndarray) -> np.ndarray:
    y_clean = np.asarray(y_clean, dtype=float)
    a, _ = attack_vector(sc, k, y_clean.size)
    return y_clean + a


def bus_sensor(bus: int, role: int = 0) -> int:
    """Sensor index of the ``role``-th sensor of 1-based ``bus``."""
    return SENSORS_PER_BUS * (bus - 1) + role


# k mod 3 -> attacked buses
IEEE14_SWITCHING_BUSES = {1: (1, 2, 3, 4), 2: (5, 6, 7, 8), 0: (9, 10, 11, 12, 13, 14)}


def ieee14_switching(signal: Signal, seed: int = 0, p: int = 6) -> AttackScenario:
    """Cycle of three bus groups, attacking each bus's power sensor."""
    sets = tuple(tuple(bus_sensor(b) for b in IEEE14_SWITCHING_BUSES[r]) for r in (0, 1, 2))
    return AttackScenario(kind=AttackKind.SWITCHING, p=p, signal=signal, sets=sets, seed=seed)


PRESETS = {
    "ieee14-switching": lambda seed=0: ieee14_switching(Signal.slope(0.2), seed),
    "ieee14-random": lambda seed=0: ieee14_switching(Signal.random_uniform(-10.0, 10.0), seed),
    "ieee14-slope": lambda seed=0: ieee14_switching(Signal.slope(0.2), seed),
}
