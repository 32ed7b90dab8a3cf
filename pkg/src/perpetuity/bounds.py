"""Tail bounds for perpetuities with ``|M| <= 1`` and ``|Q| <= q``.

Everything works on the normalized threshold ``t = x / q`` and returns the
natural log of the bound, so bounds far below double underflow stay
comparable. Notation: ``p = P(1 - delta <= |M| <= 1)``.

Lower bounds (``0 <= M <= 1``, ``Q == q > 0``)::

    P(R > x) >= exp( ln(1 - c) / ln(1 - c/t) * ln p_{c/t} )        0 < c < 1
    P(R > x) >= exp( 2 ln2 * t * ln p_{1/(2t)} )                   c = 1/2

Upper bounds::

    P(|R| > qt) <= exp( -t lam + lam/delta + 2p/(1-p) * (e^lam - 1)/delta )
    P(|R| > x)  <= exp( t/4 * ln p_{2/t} )       when p_{2/t} < e^-2 / 9
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import PerpetuityModel, p_delta
from .errors import (HypothesisViolation, InfeasibleParameter, InvalidArgument, OutOfDomain,
                     UnsupportedRegime)

PAPER_P_THRESHOLD = math.exp(-2.0) / 9.0
CANDIDATE_P_LIMIT = 1.0 / 3.0
GRID_POINTS = 200


@dataclass(frozen=True)
class BoundResult:
    log_value: float
    valid: bool = True
    conditions: tuple[str, ...] = field(default_factory=tuple)

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709.0 else math.inf

    @property
    def vacuous(self) -> bool:
        return self.log_value >= 0.0

    def capped(self) -> float:
        """``min(1, value)``: the bound as a probability."""
        return min(1.0, self.value)


def _cond(name: str, ok: bool) -> str:
    return f"{name}: {'holds' if ok else 'fails'}"


@dataclass(frozen=True)
class ChernoffParams:
    delta: float
    lam: float
    p: float
    feasible: bool

    @property
    def paper_sufficient(self) -> bool:
        """The simpler sufficient condition ``e^lam p <= 1/2``."""
        return self.p == 0.0 or math.exp(self.lam) * self.p <= 0.5


def max_feasible_lambda(p: float) -> float:
    """Largest ``lam`` with ``e^lam p < 1`` and ``p/(1-p) (e^lam - 1) <= 1/2``.

    For ``0 < p < 1`` the second constraint binds: ``e^lam <= (1 + p)/(2p)``.
    """
    if p == 0.0:
        return math.inf
    return math.log((1.0 + p) / (2.0 * p))


def is_feasible(lam: float, p: float) -> bool:
    if not lam > 0.0:
        return False
    if p == 0.0:
        return True
    if p >= 1.0:
        return False
    return lam <= max_feasible_lambda(p)


def make_params(model: PerpetuityModel, delta: float, lam: float) -> ChernoffParams:
    p = p_delta(model, delta)
    return ChernoffParams(delta, lam, p, is_feasible(lam, p))


def geometric_mgf(p: float, lam: float) -> float:
    """``E e^{lam T}`` for ``P(T = j) = p^(j-1) (1 - p)``, ``j >= 1``."""
    if not (0.0 <= p < 1.0):
        raise InvalidArgument(f"p must lie in [0, 1), got {p!r}")
    if p == 0.0:
        return math.exp(lam)
    if lam >= -math.log(p) or math.exp(lam) * p >= 1.0:
        raise InfeasibleParameter(f"e^lambda * p >= 1 (lambda={lam!r}, p={p!r}): MGF diverges")
    e = math.exp(lam)
    return e * (1.0 - p) / (1.0 - e * p)


def chernoff_exponent(t: float, delta: float, lam: float, p: float) -> float:
    return -t * lam + lam / delta + (2.0 * p / (1.0 - p)) * math.expm1(lam) / delta


def _check_model(model: PerpetuityModel) -> None:
    if not model.contractive:
        raise UnsupportedRegime("P(|M| = 1) = 1: no tail bound applies")


def chernoff_bound(model: PerpetuityModel, t: float, params: ChernoffParams) -> BoundResult:
    """Chernoff bound on ``P(|R| > q t)`` at fixed ``(delta, lam)``."""
    _check_model(model)
    if not t > 0:
        raise OutOfDomain(f"t must be positive, got {t!r}")
    if not params.feasible:
        raise InfeasibleParameter(f"(delta={params.delta!r}, lambda={params.lam!r}) is infeasible "
                                  f"for p={params.p!r}")
    p = p_delta(model, params.delta)
    conds = (_cond("feasible", True), _cond("e^lam p <= 1/2", params.paper_sufficient))
    if p == 0.0:
        # every epoch has length one: the dominating sum is exactly 1/delta
        log_value = -math.inf if t * params.delta > 1.0 else 0.0
        return BoundResult(log_value, True, conds + ("p_delta = 0: exact",))
    return BoundResult(chernoff_exponent(t, params.delta, params.lam, p), True, conds)


def paper_candidate_params(model: PerpetuityModel, t: float) -> ChernoffParams:
    """``delta = 2/t`` and ``lam = ln(1/(3 p_delta))``, so that ``e^lam p = 1/3``.

    Returns ``lam = inf`` when ``p_delta = 0``; :func:`chernoff_bound` then
    uses the exact degenerate case.
    """
    if not t > 2.0:
        raise OutOfDomain(f"the candidate needs t > 2, got {t!r}")
    delta = 2.0 / t
    p = p_delta(model, delta)
    if p >= CANDIDATE_P_LIMIT:
        raise HypothesisViolation(f"p_delta = {p!r} >= 1/3 at delta = {delta!r}")
    lam = math.inf if p == 0.0 else -math.log(3.0 * p)
    return ChernoffParams(delta, lam, p, is_feasible(lam, p))


def upper_bound_paper(model: PerpetuityModel, x: float) -> BoundResult:
    """``P(|R| > x) <= exp(x/(4q) ln p_{2q/x})``.

    The value is always returned; ``valid`` records whether
    ``p_{2q/x} < e^-2/9`` holds, which is what makes the closed form a
    consequence of the Chernoff bound.
    """
    _check_model(model)
    t = x / model.q_bound
    if not t > 2.0:
        raise OutOfDomain(f"need x > 2q, got x={x!r}, q={model.q_bound!r}")
    p = p_delta(model, 2.0 / t)
    log_value = -math.inf if p == 0.0 else 0.25 * t * math.log(p)
    small = p < PAPER_P_THRESHOLD
    conds = (_cond("contractive", model.contractive), _cond("p_delta < e^-2/9", small),
             _cond("p_delta < 1/3", p < CANDIDATE_P_LIMIT))
    return BoundResult(log_value, small and model.contractive, conds)


def _lower_hypotheses(model: PerpetuityModel) -> tuple[bool, tuple[str, ...]]:
    conds = (_cond("0 <= M <= 1", model.m_nonneg), _cond("Q == q > 0", model.q_positive_constant))
    return model.m_nonneg and model.q_positive_constant, conds


def _lower_setup(model: PerpetuityModel, x: float, strict: bool):
    t = x / model.q_bound
    if not t > 1.0:
        raise OutOfDomain(f"need x > q, got x={x!r}, q={model.q_bound!r}")
    ok, conds = _lower_hypotheses(model)
    if strict and not ok:
        raise HypothesisViolation("lower bound needs 0 <= M <= 1 and Q constant and positive")
    return t, ok, conds


def lower_bound_gg(model: PerpetuityModel, x: float, c: float = 0.5,
                   strict: bool = False) -> BoundResult:
    """``P(R > x) >= exp(ln(1-c)/ln(1-cq/x) * ln p_{cq/x})``.

    Computed even when the hypotheses fail (then ``valid`` is False), unless
    ``strict`` is set.
    """
    if not (0.0 < c < 1.0):
        raise InvalidArgument(f"c must lie in (0, 1), got {c!r}")
    t, ok, conds = _lower_setup(model, x, strict)
    p = p_delta(model, c / t)
    if p == 0.0:
        return BoundResult(-math.inf, ok, conds)
    return BoundResult(math.log1p(-c) / math.log1p(-c / t) * math.log(p), ok, conds)


def lower_bound_simplified(model: PerpetuityModel, x: float, strict: bool = False) -> BoundResult:
    """``P(R > x) >= exp(2 ln2 / q * x * ln p_{q/(2x)})``, the ``c = 1/2`` weakening."""
    t, ok, conds = _lower_setup(model, x, strict)
    p = p_delta(model, 0.5 / t)
    if p == 0.0:
        return BoundResult(-math.inf, ok, conds)
    return BoundResult(2.0 * math.log(2.0) * t * math.log(p), ok, conds)


def delta_grid(t: float, n: int = GRID_POINTS) -> np.ndarray:
    """``n`` log-spaced deltas strictly inside ``(max(1/t, 0), 1)``.

    Deltas at or below ``1/t`` are left out: there ``-t lam + lam/delta >= 0``
    and the bound is vacuous.
    """
    if t <= 1.0:
        return np.empty(0)
    return np.geomspace(1.0 / t, 1.0, n + 2)[1:-1]


def inner_lambda(t: float, delta: float, p: float) -> float | None:
    """Minimizer over feasible ``lam > 0`` of the exponent, or None if it is vacuous."""
    if p == 0.0:
        return math.inf
    if p >= 1.0:
        return None
    ratio = (t * delta - 1.0) * (1.0 - p) / (2.0 * p)
    if ratio <= 1.0:
        return None
    return min(math.log(ratio), max_feasible_lambda(p))


def optimize_chernoff(model: PerpetuityModel, t: float,
                      n_grid: int = GRID_POINTS) -> tuple[ChernoffParams | None, BoundResult]:
    """Minimize the Chernoff exponent over ``(delta, lam)``.

    ``delta`` runs over :func:`delta_grid` plus the ``delta = 2/t``
    candidate when it is admissible; ``lam`` is the clipped stationary point.
    Among equal exponents the smallest ``delta`` wins. Returns
    ``(None, vacuous result)`` when no candidate gives a negative exponent.
    """
    _check_model(model)
    if not t > 0:
        raise OutOfDomain(f"t must be positive, got {t!r}")
    candidates: list[ChernoffParams] = []
    for delta in delta_grid(t, n_grid):
        delta = float(delta)
        p = p_delta(model, delta)
        lam = inner_lambda(t, delta, p)
        if lam is not None:
            candidates.append(ChernoffParams(delta, lam, p, is_feasible(lam, p)))
    if t > 2.0:
        try:
            candidates.append(paper_candidate_params(model, t))
        except HypothesisViolation:
            pass
    candidates.sort(key=lambda c: c.delta)

    best: tuple[ChernoffParams | None, BoundResult] = (
        None, BoundResult(0.0, True, ("no candidate with negative exponent",)))
    for params in candidates:
        if not params.feasible:
            continue
        res = chernoff_bound(model, t, params)
        if res.log_value < best[1].log_value:
            best = (params, res)
    return best
