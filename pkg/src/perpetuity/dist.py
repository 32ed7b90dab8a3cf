"""Bounded one-dimensional laws for M and Q, and the perpetuity model.

Three variants are supported: finitely many atoms, a uniform interval and a
continuous piecewise-linear CDF. Each variant knows how to sample itself from
a counter-based stream (scalar or vectorized, bit-identical), and how much of
its folded law ``|X|`` sits in ``[1 - delta, 1]``.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np

from . import rng
from .errors import DegenerateModel, InvalidArgument, InvalidSpec, UnsupportedRegime

PROB_SUM_TOL = 1e-12
# slack for an atom sitting exactly on 1 - delta after decimal round-off
_EDGE_TOL = 1e-15


def _clamp01(p: float) -> float:
    return min(1.0, max(0.0, p))


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta!r}")


@dataclass(frozen=True)
class Discrete:
    """Finitely many atoms ``(value, prob)``; duplicate values are merged."""

    atoms: tuple[tuple[float, float], ...]
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.atoms) == 0:
            raise InvalidSpec("discrete spec needs at least one atom")
        merged: dict[float, float] = {}
        for pair in self.atoms:
            try:
                v, p = (float(pair[0]), float(pair[1]))
            except (TypeError, ValueError, IndexError):
                raise InvalidSpec(f"atom must be a [value, prob] pair, got {pair!r}") from None
            if not math.isfinite(v) or not math.isfinite(p):
                raise InvalidSpec(f"non-finite atom {pair!r}")
            if p < 0:
                raise InvalidSpec(f"negative probability {p!r} at value {v!r}")
            if p > 0:
                merged[v] = merged.get(v, 0.0) + p
        if not merged:
            raise InvalidSpec("discrete spec has no atom with positive probability")
        total = math.fsum(merged.values())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise InvalidSpec(f"probabilities sum to {total!r}, expected 1")
        atoms = tuple(sorted(merged.items()))
        object.__setattr__(self, "atoms", atoms)
        cum = np.cumsum([p for _, p in atoms])
        object.__setattr__(self, "_cum", tuple(float(c) for c in cum))

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for v, _ in self.atoms)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(p for _, p in self.atoms)

    @property
    def lower(self) -> float:
        return self.atoms[0][0]

    @property
    def upper(self) -> float:
        return self.atoms[-1][0]

    @property
    def is_atom(self) -> bool:
        return len(self.atoms) == 1

    def mean_abs(self) -> float:
        return math.fsum(abs(v) * p for v, p in self.atoms)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.atoms)

    def abs_atom_at_one(self) -> float:
        return _clamp01(math.fsum(p for v, p in self.atoms if abs(v) == 1.0))

    def mass_abs_near_one(self, delta: float) -> float:
        edge = 1.0 - delta
        return _clamp01(
            math.fsum(p for v, p in self.atoms if abs(v) <= 1.0 and abs(v) >= edge - _EDGE_TOL)
        )

    def _pick(self, u: float) -> float:
        i = min(bisect.bisect_right(self._cum, u), len(self.atoms) - 1)
        return self.atoms[i][0]

    def sample(self, stream: rng.Stream, draw: int = 0) -> float:
        if self.is_atom:
            return self.atoms[0][0]
        return self._pick(stream.uniform(draw))

    def sample_array(self, bases: np.ndarray, draw: int) -> np.ndarray:
        if self.is_atom:
            return np.full(bases.shape, self.atoms[0][0])
        u = rng.uniform_array(bases, draw)
        idx = np.minimum(np.searchsorted(np.asarray(self._cum), u, side="right"), len(self.atoms) - 1)
        return np.asarray(self.values)[idx]

    def to_json(self) -> dict:
        return {"type": "discrete", "atoms": [[v, p] for v, p in self.atoms]}


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InvalidSpec("uniform bounds must be finite")
        if not a < b:
            raise InvalidSpec(f"uniform spec needs a < b, got a={a!r}, b={b!r}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    lower = property(lambda self: self.a)
    upper = property(lambda self: self.b)
    is_atom = False

    def mean_abs(self) -> float:
        return _segment_mean_abs(self.a, self.b)

    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def abs_atom_at_one(self) -> float:
        return 0.0

    def mass_abs_near_one(self, delta: float) -> float:
        edge = 1.0 - delta
        width = self.b - self.a
        return _clamp01(
            (_overlap(self.a, self.b, edge, 1.0, delta) + _overlap(self.a, self.b, -1.0, -edge, delta))
            / width
        )

    def sample(self, stream: rng.Stream, draw: int = 0) -> float:
        return self.a + (self.b - self.a) * stream.uniform(draw)

    def sample_array(self, bases: np.ndarray, draw: int) -> np.ndarray:
        return self.a + (self.b - self.a) * rng.uniform_array(bases, draw)

    def to_json(self) -> dict:
        return {"type": "uniform", "a": self.a, "b": self.b}


def _overlap(a: float, b: float, lo: float, hi: float, width: float) -> float:
    # ``width`` is hi - lo as given by the caller, so full coverage is exact
    if a <= lo and b >= hi:
        return width
    return max(0.0, min(b, hi) - max(a, lo))


def _segment_mean_abs(a: float, b: float) -> float:
    """E|X| for X uniform on [a, b]."""
    if a >= 0 or b <= 0:
        return abs(0.5 * (a + b))
    return (a * a + b * b) / (2.0 * (b - a))


@dataclass(frozen=True)
class PiecewiseCdf:
    """Continuous law whose CDF interpolates linearly between knots."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        try:
            knots = tuple((float(v), float(f)) for v, f in self.knots)
        except (TypeError, ValueError):
            raise InvalidSpec("cdf knots must be [value, cdf] pairs") from None
        if len(knots) < 2:
            raise InvalidSpec("cdf spec needs at least two knots")
        vs = [v for v, _ in knots]
        fs = [f for _, f in knots]
        if not all(math.isfinite(x) for x in vs + fs):
            raise InvalidSpec("cdf knots must be finite")
        if any(v1 <= v0 for v0, v1 in zip(vs, vs[1:])):
            raise InvalidSpec("cdf knot values must be strictly increasing")
        if any(f1 < f0 for f0, f1 in zip(fs, fs[1:])):
            raise InvalidSpec("cdf knot values must be nondecreasing in cdf")
        if fs[0] != 0.0 or fs[-1] != 1.0:
            raise InvalidSpec("cdf must start at 0 and end at 1")
        object.__setattr__(self, "knots", knots)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.knots])

    @property
    def cdf(self) -> np.ndarray:
        return np.array([f for _, f in self.knots])

    lower = property(lambda self: self.knots[0][0])
    upper = property(lambda self: self.knots[-1][0])
    is_atom = False

    def cdf_at(self, x: float) -> float:
        return float(np.interp(x, self.values, self.cdf, left=0.0, right=1.0))

    def mean_abs(self) -> float:
        total = 0.0
        for (v0, f0), (v1, f1) in zip(self.knots, self.knots[1:]):
            total += (f1 - f0) * _segment_mean_abs(v0, v1)
        return total

    def mean(self) -> float:
        return math.fsum((f1 - f0) * 0.5 * (v0 + v1)
                         for (v0, f0), (v1, f1) in zip(self.knots, self.knots[1:]))

    def abs_atom_at_one(self) -> float:
        return 0.0

    def mass_abs_near_one(self, delta: float) -> float:
        edge = 1.0 - delta
        upper = self.cdf_at(1.0) - self.cdf_at(edge)
        lower = self.cdf_at(-edge) - self.cdf_at(-1.0)
        return _clamp01(upper + lower)

    def _invert(self, u: float) -> float:
        fs = [f for _, f in self.knots]
        i = min(bisect.bisect_right(fs, u), len(fs) - 1) - 1
        (v0, f0), (v1, f1) = self.knots[i], self.knots[i + 1]
        return v0 + (u - f0) / (f1 - f0) * (v1 - v0)

    def sample(self, stream: rng.Stream, draw: int = 0) -> float:
        return self._invert(stream.uniform(draw))

    def sample_array(self, bases: np.ndarray, draw: int) -> np.ndarray:
        u = rng.uniform_array(bases, draw)
        vs, fs = self.values, self.cdf
        i = np.minimum(np.searchsorted(fs, u, side="right"), len(fs) - 1) - 1
        v0, f0, v1, f1 = vs[i], fs[i], vs[i + 1], fs[i + 1]
        return v0 + (u - f0) / (f1 - f0) * (v1 - v0)

    def to_json(self) -> dict:
        return {"type": "cdf", "knots": [[v, f] for v, f in self.knots]}


DistSpec = Union[Discrete, Uniform, PiecewiseCdf]


def atom(value: float) -> Discrete:
    return Discrete(((value, 1.0),))


def dist_from_json(obj: Any) -> DistSpec:
    """Build a spec from ``{"type": "discrete" | "uniform" | "cdf", ...}``."""
    if not isinstance(obj, dict) or "type" not in obj:
        raise InvalidSpec("distribution must be an object with a 'type' field")
    kind = obj["type"]
    try:
        if kind == "discrete":
            return Discrete(tuple(tuple(a) for a in obj["atoms"]))
        if kind == "uniform":
            return Uniform(obj["a"], obj["b"])
        if kind == "cdf":
            return PiecewiseCdf(tuple(tuple(k) for k in obj["knots"]))
    except KeyError as exc:
        raise InvalidSpec(f"{kind} distribution is missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise InvalidSpec(f"malformed {kind} distribution: {exc}") from None
    raise InvalidSpec(f"unknown distribution type {kind!r}")


def sample(spec: DistSpec, stream: rng.Stream, draw: int = 0) -> float:
    """One variate of ``spec`` at position ``draw`` of ``stream``."""
    return spec.sample(stream, draw)


@dataclass(frozen=True)
class PerpetuityModel:
    """Validated ``(M, Q)`` pair with the statistics the bounds need."""

    m: DistSpec
    q_dist: DistSpec
    q_bound: float
    mean_abs_m: float
    atom_at_one: float
    m_nonneg: bool
    q_constant: bool
    contractive: bool

    @property
    def q_positive_constant(self) -> bool:
        return self.q_constant and self.q_dist.lower > 0

    def flags(self) -> dict[str, bool]:
        return {"m_nonneg": self.m_nonneg, "q_constant": self.q_constant,
                "contractive": self.contractive}

    def p_delta(self, delta: float) -> float:
        return p_delta(self, delta)

    def to_json(self) -> dict:
        return {"m": self.m.to_json(), "q": self.q_dist.to_json()}


def validate_model(m: DistSpec, q: DistSpec) -> PerpetuityModel:
    if m.lower < -1.0 or m.upper > 1.0:
        raise UnsupportedRegime(
            f"M has support outside [-1, 1] (range [{m.lower!r}, {m.upper!r}]); "
            "the power-law tail regime is not supported")
    q_bound = max(abs(q.lower), abs(q.upper))
    if not math.isfinite(q_bound):
        raise InvalidSpec("Q must be bounded")
    if q_bound == 0.0:
        raise InvalidSpec("Q is identically zero; R = 0 and no tail exists")
    atom_at_one = m.abs_atom_at_one()
    if atom_at_one >= 1.0:
        raise DegenerateModel("|M| = 1 almost surely: the perpetuity series does not converge")
    return PerpetuityModel(
        m=m,
        q_dist=q,
        q_bound=q_bound,
        mean_abs_m=min(1.0, max(0.0, m.mean_abs())),
        atom_at_one=atom_at_one,
        m_nonneg=m.lower >= 0.0,
        q_constant=q.is_atom,
        contractive=atom_at_one < 1.0,
    )


def model_from_json(obj: Any) -> PerpetuityModel:
    if not isinstance(obj, dict) or "m" not in obj or "q" not in obj:
        raise InvalidSpec("model must be an object with 'm' and 'q' distributions")
    return validate_model(dist_from_json(obj["m"]), dist_from_json(obj["q"]))


def p_delta(model: PerpetuityModel | DistSpec, delta: float) -> float:
    """``P(1 - delta <= |M| <= 1)``, closed at both ends."""
    _check_delta(delta)
    spec = model.m if isinstance(model, PerpetuityModel) else model
    return spec.mass_abs_near_one(delta)


def p_delta_many(model: PerpetuityModel, deltas: Sequence[float]) -> list[float]:
    return [p_delta(model, d) for d in deltas]
