"""Monte Carlo for perpetuities and for the geometric majorant of the series.

Samples are indexed: sample ``i`` of a run only depends on ``(seed, i)``,
so chunks can be farmed out to any number of threads and the merged
exceedance counts come out identical.
"""
from __future__ import annotations

import bisect
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .dist import PerpetuityModel, p_delta
from .errors import DegenerateModel, InvalidArgument, TruncationFailure

log = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16
Z95 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class SimConfig:
    n_samples: int
    seed: int = 0
    truncation_eps: float = 1e-12
    max_terms: int = 10**6
    worker_hint: int | None = None

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise InvalidArgument("n_samples must be >= 1")
        if not (0.0 < self.truncation_eps < 1.0):
            raise InvalidArgument("truncation_eps must lie in (0, 1)")
        if int(self.max_terms) < 1:
            raise InvalidArgument("max_terms must be >= 1")
        if self.worker_hint is not None and int(self.worker_hint) < 1:
            raise InvalidArgument("worker_hint must be a positive integer")


def residual_bound(model: PerpetuityModel, cfg: SimConfig) -> float:
    """Bound on the expected tail of the series dropped by truncation."""
    return model.q_bound * cfg.truncation_eps / (1.0 - model.mean_abs_m)


# ---------------------------------------------------------------- perpetuity

def _require_contractive(model: PerpetuityModel) -> None:
    if not model.contractive:
        raise DegenerateModel("model is not contractive (|M| = 1 a.s.)")


def sample_perpetuity(model: PerpetuityModel, cfg: SimConfig, index: int,
                      n_terms: int | None = None) -> float:
    """Truncated series ``sum_k Q_k prod_{j<k} M_j`` for sample ``index``.

    With ``n_terms`` the series is cut after exactly that many terms, which
    is a draw of ``R_n`` started from ``R_0 = 0``. Otherwise it stops at the
    first ``k`` with ``prod_{j<=k} |M_j| <= truncation_eps``.
    """
    _require_contractive(model)
    if not 0 <= index < cfg.n_samples:
        raise InvalidArgument(f"index {index} outside [0, {cfg.n_samples})")
    stream = rng.Stream(cfg.seed, index, rng.PERPETUITY)
    limit = n_terms if n_terms is not None else cfg.max_terms
    s, prod = 0.0, 1.0
    for k in range(limit):
        s = s + prod * model.q_dist.sample(stream, 2 * k)
        prod = prod * model.m.sample(stream, 2 * k + 1)
        if n_terms is None and abs(prod) <= cfg.truncation_eps:
            return s
        if prod == 0.0:
            return s
    if n_terms is None:
        raise TruncationFailure(
            f"series not truncated within max_terms={cfg.max_terms} "
            f"(E|M| = {model.mean_abs_m:.6g} is too close to 1 for eps={cfg.truncation_eps:g})")
    return s


def sample_perpetuity_batch(model: PerpetuityModel, cfg: SimConfig, indices: np.ndarray,
                            n_terms: int | None = None) -> tuple[np.ndarray, int]:
    """Vectorized :func:`sample_perpetuity`; returns ``(values, n_failures)``.

    Samples that hit ``max_terms`` keep their truncated value and are
    counted as failures instead of raising.
    """
    _require_contractive(model)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty(indices.size)
    pos = np.arange(indices.size)
    bases = rng.sample_bases(cfg.seed, rng.PERPETUITY, indices)
    s = np.zeros(indices.size)
    prod = np.ones(indices.size)
    limit = n_terms if n_terms is not None else cfg.max_terms
    eps = cfg.truncation_eps
    failures = 0
    k = 0
    while pos.size:
        s = s + prod * model.q_dist.sample_array(bases, 2 * k)
        prod = prod * model.m.sample_array(bases, 2 * k + 1)
        k += 1
        if n_terms is None:
            done = np.abs(prod) <= eps
        else:
            done = prod == 0.0
        if k >= limit:
            if n_terms is None:
                failures += int(np.count_nonzero(~done))
            done[:] = True
        if done.any():
            out[pos[done]] = s[done]
            keep = ~done
            pos, bases, s, prod = pos[keep], bases[keep], s[keep], prod[keep]
    return out, failures


# ------------------------------------------------------ stopping-time majorant

@dataclass(frozen=True)
class PathDecomposition:
    t_values: tuple[int, ...]
    delta: float
    lhs: float
    rhs: float
    epoch_products: tuple[float, ...] = ()

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def dominated(self, tol: float = 1e-12) -> bool:
        return self.lhs <= self.rhs + tol * max(1.0, abs(self.rhs))


def decompose_path(abs_m_path: Sequence[float], delta: float) -> PathDecomposition:
    """Split a path of ``|M_k|`` into epochs ending at ``|M_k| <= 1 - delta``.

    ``lhs`` is ``sum_k prod_{j<k} |M_j|`` over the path (the leading 1
    included) and ``rhs`` is ``sum_i (1 - delta)^(i-1) T_i`` over the
    epoch lengths ``T_i``.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta!r}")
    path = [float(v) for v in abs_m_path]
    if not path:
        raise InvalidArgument("path is empty")
    if any(not (0.0 <= v <= 1.0) for v in path):
        raise InvalidArgument("path entries must lie in [0, 1]")
    edge = 1.0 - delta
    if path[-1] > edge:
        raise InvalidArgument("path must end at a completed epoch (last entry <= 1 - delta)")

    t_values: list[int] = []
    epoch_products: list[float] = []
    lhs, prod, run = 0.0, 1.0, 0
    for v in path:
        lhs += prod
        prod *= v
        run += 1
        if v <= edge:
            t_values.append(run)
            epoch_products.append(prod)
            run = 0
    rhs, weight = 0.0, 1.0
    for t in t_values:
        rhs += weight * t
        weight *= edge
    return PathDecomposition(tuple(t_values), delta, lhs, rhs, tuple(epoch_products))


def _path_stop(abs_m: np.ndarray, edge: float, eps: float) -> np.ndarray:
    """Per row, the path length: first epoch end at or after the product drops to eps."""
    cum = np.cumprod(abs_m, axis=1)
    # an epoch end where the product is already small, or any later epoch end
    small = np.maximum.accumulate(cum <= eps, axis=1)
    ok = small & (abs_m <= edge)
    has = ok.any(axis=1)
    return np.where(has, ok.argmax(axis=1) + 1, -1)


def abs_m_paths(model: PerpetuityModel, delta: float, cfg: SimConfig,
                indices: np.ndarray) -> list[np.ndarray]:
    """``|M_1|, |M_2|, ...`` of samples ``indices``, coupled with the perpetuity draws.

    Each path runs until its running product is <= ``truncation_eps`` and
    then on to the end of the current epoch.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta!r}")
    _require_contractive(model)
    indices = np.asarray(indices, dtype=np.int64)
    edge = 1.0 - delta
    out: list[np.ndarray | None] = [None] * indices.size
    todo = np.arange(indices.size)
    length = 64
    while todo.size:
        if length > cfg.max_terms:
            raise TruncationFailure(f"path did not close within max_terms={cfg.max_terms}")
        bases = rng.sample_bases(cfg.seed, rng.PERPETUITY, indices[todo])
        cols = [np.abs(model.m.sample_array(bases, 2 * k + 1)) for k in range(length)]
        mat = np.stack(cols, axis=1)
        stop = _path_stop(mat, edge, cfg.truncation_eps)
        for row in np.flatnonzero(stop > 0):
            out[todo[row]] = mat[row, : stop[row]].copy()
        todo = todo[stop <= 0]
        length *= 2
    return out  # type: ignore[return-value]


def abs_m_path(model: PerpetuityModel, delta: float, cfg: SimConfig, index: int) -> np.ndarray:
    return abs_m_paths(model, delta, cfg, np.array([index]))[0]


def dominating_terms(delta: float, p: float, eps: float) -> int:
    """Terms kept so that ``(1 - delta)^K * E[T] / delta <= eps``."""
    mean_t = 1.0 / (1.0 - p)
    k = math.ceil(math.log(eps * delta / mean_t) / math.log1p(-delta))
    return max(1, k)


def _geometric_table(p: float) -> list[float]:
    # ascending p^j for j >= 1 down to below the smallest uniform (2^-53)
    powers = []
    v = p
    while v >= rng._INV_2_53:
        powers.append(v)
        v *= p
    powers.reverse()
    return powers


class GeometricSampler:
    """Draws on {1, 2, ...} with ``P(T = j) = p^(j-1) (1 - p)`` by table lookup.

    ``T - 1`` counts the powers ``p^j`` (``j >= 1``) at or above a uniform
    on (0, 1], so no transcendental function enters the sampling path.
    """

    def __init__(self, p: float):
        if not (0.0 <= p < 1.0):
            raise InvalidArgument(f"geometric parameter p must lie in [0, 1), got {p!r}")
        self.p = float(p)
        self._table = _geometric_table(self.p) if p > 0 else []
        self._arr = np.asarray(self._table)

    def from_raw(self, raw: int) -> int:
        u = ((raw >> 11) + 1) * rng._INV_2_53
        return 1 + len(self._table) - bisect.bisect_left(self._table, u)

    def from_raw_array(self, raw: np.ndarray) -> np.ndarray:
        u = ((raw >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * rng._INV_2_53
        return 1 + self._arr.size - np.searchsorted(self._arr, u, side="left")

    def draw(self, stream: rng.Stream, draw: int) -> int:
        return self.from_raw(rng.raw(stream._base, draw))

    def draw_array(self, bases: np.ndarray, draw: int) -> np.ndarray:
        return self.from_raw_array(rng.raw_array(bases, draw))


def sample_geometric_batch(p: float, seed: int, indices: np.ndarray) -> np.ndarray:
    """One geometric(1 - p) draw per index on the dedicated geometric stream."""
    bases = rng.sample_bases(seed, rng.GEOMETRIC, np.asarray(indices, dtype=np.int64))
    return GeometricSampler(p).draw_array(bases, 0)


def _dominating_setup(model: PerpetuityModel, delta: float, cfg: SimConfig):
    p = p_delta(model, delta)
    if p >= 1.0:
        raise DegenerateModel(f"p_delta = 1 at delta={delta!r}: epochs never end")
    return GeometricSampler(p), dominating_terms(delta, p, cfg.truncation_eps), 1.0 - delta


def sample_dominating_series(model: PerpetuityModel, delta: float, cfg: SimConfig,
                             index: int) -> float:
    """``sum_{k<=K} (1 - delta)^(k-1) T_k`` with i.i.d. geometric epochs."""
    geo, terms, w = _dominating_setup(model, delta, cfg)
    stream = rng.Stream(cfg.seed, index, rng.DOMINATING)
    s, weight = 0.0, 1.0
    for k in range(terms):
        s = s + weight * geo.draw(stream, k)
        weight = weight * w
    return s


def sample_dominating_batch(model: PerpetuityModel, delta: float, cfg: SimConfig,
                            indices: np.ndarray) -> np.ndarray:
    geo, terms, w = _dominating_setup(model, delta, cfg)
    bases = rng.sample_bases(cfg.seed, rng.DOMINATING, np.asarray(indices, dtype=np.int64))
    s = np.zeros(bases.size)
    weight = 1.0
    for k in range(terms):
        s = s + weight * geo.draw_array(bases, k)
        weight = weight * w
    return s


# ------------------------------------------------------------ tail estimation

def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        raise InvalidArgument("n must be positive")
    phat = k / n
    z2 = z * z
    denom = n + z2
    center = (k + 0.5 * z2) / denom
    half = z / denom * math.sqrt(k * (n - k) / n + 0.25 * z2)
    lo = min(phat, max(0.0, center - half))
    hi = max(phat, min(1.0, center + half))
    return lo, hi


@dataclass(frozen=True)
class TailCurve:
    xs: tuple[float, ...]
    n: int
    exceed_counts: tuple[int, ...]
    estimates: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]

    def half_widths(self) -> tuple[float, ...]:
        return tuple(0.5 * (h - l) for l, h in zip(self.ci_low, self.ci_high))


@dataclass
class TailCounter:
    """Streaming strict-exceedance counter; partial counters merge by addition."""

    xs: np.ndarray
    use_abs: bool = True
    n: int = 0
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        if self.xs.ndim != 1 or self.xs.size == 0:
            raise InvalidArgument("threshold grid xs must be a nonempty 1-d sequence")
        if np.any(np.diff(self.xs) <= 0):
            raise InvalidArgument("threshold grid xs must be strictly increasing")
        if self.counts is None:
            self.counts = np.zeros(self.xs.size, dtype=np.int64)

    def update(self, samples: np.ndarray) -> "TailCounter":
        v = np.asarray(samples, dtype=float).ravel()
        if self.use_abs:
            v = np.abs(v)
        v = np.sort(v)
        self.counts += v.size - np.searchsorted(v, self.xs, side="right")
        self.n += v.size
        return self

    def merge(self, other: "TailCounter") -> "TailCounter":
        if not np.array_equal(self.xs, other.xs) or self.use_abs != other.use_abs:
            raise InvalidArgument("cannot merge counters over different grids")
        return TailCounter(self.xs, self.use_abs, self.n + other.n, self.counts + other.counts)

    def curve(self) -> TailCurve:
        if self.n < 1:
            raise InvalidArgument("no samples counted")
        counts = tuple(int(c) for c in self.counts)
        cis = [wilson_interval(c, self.n) for c in counts]
        return TailCurve(
            xs=tuple(float(x) for x in self.xs),
            n=self.n,
            exceed_counts=counts,
            estimates=tuple(c / self.n for c in counts),
            ci_low=tuple(lo for lo, _ in cis),
            ci_high=tuple(hi for _, hi in cis),
        )


def estimate_tail(samples: np.ndarray | Iterable[np.ndarray], xs: Sequence[float],
                  use_abs: bool = True) -> TailCurve:
    """Empirical ``P(|R| > x)`` (or ``P(R > x)``) over a grid, in one pass.

    ``samples`` is an array or any iterable of array chunks.
    """
    counter = TailCounter(np.asarray(xs, dtype=float), use_abs)
    if isinstance(samples, np.ndarray):
        counter.update(samples)
    else:
        for chunk in samples:
            counter.update(chunk)
    return counter.curve()


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


@dataclass(frozen=True)
class SimResult:
    curve: TailCurve
    meta: dict


def simulate_tail(model: PerpetuityModel, cfg: SimConfig, xs: Sequence[float],
                  use_abs: bool = True, workers: int | None = None,
                  n_terms: int | None = None, chunk_size: int = CHUNK_SIZE) -> SimResult:
    """Sample ``cfg.n_samples`` perpetuities in parallel chunks and count exceedances."""
    _require_contractive(model)
    workers = workers or cfg.worker_hint or os.cpu_count() or 1
    spans = _chunks(cfg.n_samples, chunk_size)

    def run(span: tuple[int, int]) -> tuple[TailCounter, int, float]:
        values, failures = sample_perpetuity_batch(
            model, cfg, np.arange(span[0], span[1]), n_terms=n_terms)
        part = TailCounter(np.asarray(xs, dtype=float), use_abs).update(values)
        return part, failures, float(np.sum(values))

    if workers == 1:
        parts = [run(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))

    total = parts[0][0]
    for part, _, _ in parts[1:]:
        total = total.merge(part)
    failures = sum(f for _, f, _ in parts)
    if failures:
        log.warning("%d samples hit max_terms=%d before truncation", failures, cfg.max_terms)
    meta = {
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "truncation_eps": cfg.truncation_eps,
        "max_terms": cfg.max_terms,
        "n_terms": n_terms,
        "residual_bound": None if n_terms is not None else residual_bound(model, cfg),
        "truncation_failures": failures,
        "sample_mean": math.fsum(s for _, _, s in parts) / cfg.n_samples,
        "chunk_size": chunk_size,
        "workers": workers,
        "use_abs": use_abs,
    }
    return SimResult(total.curve(), meta)
