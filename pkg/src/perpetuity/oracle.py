"""Ground truth for validating the sampler.

``exact_distribution`` runs the recursion ``R_n = M_n R_{n-1} + Q_n`` from
``R_0 = 0`` over finite supports in exact rational arithmetic.

``dickman_tail`` covers ``M ~ Uniform(0, 1)``, ``Q == 1``. There
``R = sum_k prod_{j<k} U_j = 1 + D`` with ``D = U_1 (1 + U_2 (1 + ...))``,
which solves ``D = U (1 + D)``: the Dickman law with density
``e^-gamma rho(u)``. Hence ``P(R > x) = e^-gamma * int_{x-1}^inf rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .dist import Discrete, PerpetuityModel
from .errors import BudgetExceeded, InvalidArgument, OutOfDomain

ENUMERATION_BUDGET = 10**7
EULER_GAMMA = 0.57721566490153286060651209008240243

DICKMAN_STEP = 1e-4
DICKMAN_UPPER = 30.0


@dataclass(frozen=True)
class ExactPmf:
    atoms: tuple[tuple[Fraction, Fraction], ...]
    n_steps: int

    @property
    def values(self) -> np.ndarray:
        return np.array([float(v) for v, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, p in self.atoms])

    def mean(self) -> Fraction:
        return sum((v * p for v, p in self.atoms), Fraction(0))

    def tail(self, x: float, use_abs: bool = False) -> float:
        xf = Fraction(x)
        return float(sum((p for v, p in self.atoms if (abs(v) if use_abs else v) > xf), Fraction(0)))

    def as_dict(self) -> dict[float, float]:
        return {float(v): float(p) for v, p in self.atoms}


def _exact_atoms(spec: Discrete) -> list[tuple[Fraction, Fraction]]:
    return [(Fraction(v), Fraction(p)) for v, p in spec.atoms]


def _step(pmf: dict[Fraction, Fraction], m_atoms, q_atoms) -> dict[Fraction, Fraction]:
    nxt: dict[Fraction, Fraction] = {}
    for r, pr in pmf.items():
        for m, pm in m_atoms:
            for q, pq in q_atoms:
                v = m * r + q
                nxt[v] = nxt.get(v, Fraction(0)) + pr * pm * pq
    return nxt


def _pack(pmf: dict[Fraction, Fraction], n: int) -> ExactPmf:
    return ExactPmf(tuple(sorted(pmf.items())), n)


def exact_distribution(model: PerpetuityModel, n: int) -> ExactPmf:
    """Law of ``R_n`` for finitely supported, independent ``M`` and ``Q``.

    Floats are rationals, so every value and probability is carried as a
    :class:`~fractions.Fraction` and equal values merge exactly.
    """
    if not (isinstance(model.m, Discrete) and isinstance(model.q_dist, Discrete)):
        raise InvalidArgument("exact_distribution needs discrete M and Q")
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    branching = len(model.m.atoms) * len(model.q_dist.atoms)
    if branching ** n > ENUMERATION_BUDGET:
        raise BudgetExceeded(f"{branching}^{n} paths exceed the budget of {ENUMERATION_BUDGET}")
    m_atoms, q_atoms = _exact_atoms(model.m), _exact_atoms(model.q_dist)
    pmf = {Fraction(0): Fraction(1)}
    for _ in range(n):
        pmf = _step(pmf, m_atoms, q_atoms)
    return _pack(pmf, n)


def step_forward(model: PerpetuityModel, pmf: ExactPmf) -> ExactPmf:
    """One more step of the recursion applied to an existing law."""
    nxt = _step(dict(pmf.atoms), _exact_atoms(model.m), _exact_atoms(model.q_dist))
    return _pack(nxt, pmf.n_steps + 1)


def total_variation(pmf: ExactPmf, samples: np.ndarray) -> float:
    """TV distance between ``pmf`` and the empirical law of ``samples``.

    Sample values that are not atoms of ``pmf`` count in full.
    """
    samples = np.asarray(samples, dtype=float)
    vals, counts = np.unique(samples, return_counts=True)
    emp = dict(zip(vals.tolist(), (counts / samples.size).tolist()))
    exact = pmf.as_dict()
    keys = set(emp) | set(exact)
    return 0.5 * math.fsum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)


# ------------------------------------------------------------------- Dickman

@dataclass(frozen=True)
class DickmanTable:
    """``rho`` on a uniform grid ``u_i = i h`` over ``[0, upper]`` and the
    trapezoidal tail integrals ``int_{u_i}^{upper} rho``."""

    step: float
    grid: np.ndarray
    rho: np.ndarray
    tail_integral: np.ndarray

    def total_integral(self) -> float:
        return float(self.tail_integral[0])

    def rho_at(self, u: float) -> float:
        return float(np.interp(u, self.grid, self.rho))

    def integral_from(self, a: float) -> float:
        """``int_a^inf rho`` by linear interpolation of rho inside the cell."""
        if a >= self.grid[-1]:
            return 0.0
        i = int(a / self.step)
        u0 = self.grid[i]
        r0 = self.rho[i]
        ra = self.rho_at(a)
        return float(self.tail_integral[i] - 0.5 * (a - u0) * (r0 + ra))


@lru_cache(maxsize=4)
def dickman_table(step: float = DICKMAN_STEP, upper: float = DICKMAN_UPPER) -> DickmanTable:
    """Solve ``u rho'(u) = -rho(u - 1)``, ``rho = 1`` on ``[0, 1]``.

    On ``[k, k+1]``: ``rho(u) = rho(k) - int_k^u rho(v-1)/v dv``, with the
    integrand known from the previous unit interval; cumulative trapezoid.
    """
    per_unit = round(1.0 / step)
    if abs(per_unit * step - 1.0) > 1e-12:
        raise InvalidArgument("step must divide 1")
    units = math.ceil(upper)
    n = units * per_unit
    grid = np.arange(n + 1) * step
    rho = np.empty(n + 1)
    rho[: per_unit + 1] = 1.0
    for k in range(1, units):
        lo, hi = k * per_unit, (k + 1) * per_unit
        f = rho[lo - per_unit: hi - per_unit + 1] / grid[lo: hi + 1]
        cum = np.concatenate(([0.0], np.cumsum(0.5 * step * (f[1:] + f[:-1]))))
        rho[lo: hi + 1] = rho[lo] - cum
    rho = np.maximum(rho, 0.0)
    cells = 0.5 * step * (rho[1:] + rho[:-1])
    tail = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
    return DickmanTable(step, grid, rho, tail)


def dickman_tail(x: float) -> float:
    """``P(R > x)`` for ``M ~ Uniform(0, 1)``, ``Q == 1``."""
    if not x >= 1.0:
        raise OutOfDomain(f"dickman_tail needs x >= 1, got {x!r}")
    if x == 1.0:
        return 1.0
    table = dickman_table()
    return min(1.0, math.exp(-EULER_GAMMA) * table.integral_from(x - 1.0))


def is_dickman_model(model: PerpetuityModel) -> bool:
    from .dist import Uniform

    m, q = model.m, model.q_dist
    return (isinstance(m, Uniform) and m.a == 0.0 and m.b == 1.0
            and isinstance(q, Discrete) and q.is_atom and q.atoms[0][0] == 1.0)
