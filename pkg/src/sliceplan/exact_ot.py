"""Ground-truth optimal-transport solvers used as oracles and lower bounds.

Two exact routes are provided: the 1D quantile coupling (general weights)
and the assignment solver for uniform equal-size instances. Both return
full plans with marginal guarantees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import UndefinedCorrelationError, UnsupportedInstanceError
from .measures import DiscreteMeasure, pairwise_costs

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix with prescribed marginals a (rows) and b (cols)."""

    entries: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if e.ndim != 2 or e.shape != (a.size, b.size):
            raise ValueError("plan shape must match marginal lengths")
        if np.any(e < 0):
            raise ValueError("plan entries must be nonnegative")
        if np.max(np.abs(e.sum(axis=1) - a)) > MARGINAL_TOL:
            raise ValueError("row sums do not match source weights")
        if np.max(np.abs(e.sum(axis=0) - b)) > MARGINAL_TOL:
            raise ValueError("column sums do not match target weights")
        if abs(e.sum() - 1.0) > MARGINAL_TOL:
            raise ValueError("total mass must be 1")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def shape(self):
        return self.entries.shape

    def nonzeros(self):
        """(i, j, mass) triples of the strictly positive entries."""
        ii, jj = np.nonzero(self.entries)
        return list(zip(ii.tolist(), jj.tolist(), self.entries[ii, jj].tolist()))


@dataclass(frozen=True)
class OtResult:
    plan: TransportPlan
    cost: float  # sum of plan * cost matrix (p-power cost)
    value: float  # cost ** (1/p)


def _result(plan, cost, p):
    cost = float(cost)
    return OtResult(plan=plan, cost=cost, value=cost ** (1.0 / p))


def ot_1d(u: DiscreteMeasure, v: DiscreteMeasure, p: float = 2.0) -> OtResult:
    """Exact OT on the line: quantile (north-west-corner on sorted atoms) coupling.

    Optimal for cost |x-y|^p with p >= 1; supports general weights. Ties are
    broken by original index (stable sort).
    """
    if u.dim != 1 or v.dim != 1:
        raise UnsupportedInstanceError("ot_1d requires 1D supports")
    xs = u.points[:, 0]
    ys = v.points[:, 0]
    xo = np.argsort(xs, kind="stable")
    yo = np.argsort(ys, kind="stable")
    a = u.weights[xo]
    b = v.weights[yo]

    plan = np.zeros((u.n, v.n))
    cost = 0.0
    i = j = 0
    ra, rb = a[0], b[0]
    while True:
        m = min(ra, rb)
        if m > 0:
            plan[xo[i], yo[j]] += m
            cost += m * abs(xs[xo[i]] - ys[yo[j]]) ** p
        ra -= m
        rb -= m
        if ra <= rb:
            i += 1
            if i >= u.n:
                break
            ra = a[i]
        else:
            j += 1
            if j >= v.n:
                break
            rb = b[j]
    return _result(TransportPlan(plan, u.weights, v.weights), cost, p)


def ot_assignment(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> OtResult:
    """Exact OT for uniform equal-size marginals via the assignment problem."""
    if mu.n != nu.n:
        raise UnsupportedInstanceError(
            f"assignment solver needs n == m (got {mu.n} vs {nu.n}); use ot_1d or reweight"
        )
    if not (mu.is_uniform() and nu.is_uniform()):
        raise UnsupportedInstanceError("assignment solver needs uniform weights on both sides")
    C = pairwise_costs(mu.points, nu.points, p)
    rows, cols = linear_sum_assignment(C)
    n = mu.n
    plan = np.zeros((n, n))
    plan[rows, cols] = 1.0 / n
    cost = C[rows, cols].sum() / n
    return _result(TransportPlan(plan, mu.weights, nu.weights), cost, p)


def plan_cost(plan: TransportPlan, cost_entries: np.ndarray) -> float:
    return float(np.sum(plan.entries * cost_entries))


def pearson(xs, ys) -> float:
    """Product-moment correlation; errors out on zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = float(np.sum(xc * yc) / (sx * sy))
    return min(1.0, max(-1.0, r))


def plan_to_csv(plan: TransportPlan, path) -> None:
    """Write (i, j, mass) triples of the nonzero plan entries."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,mass\n")
        for i, j, m in plan.nonzeros():
            fh.write(f"{i},{j},{m:.17g}\n")


def plan_to_json(plan: TransportPlan, path) -> None:
    payload = {
        "shape": list(plan.shape),
        "triples": [[i, j, m] for i, j, m in plan.nonzeros()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
