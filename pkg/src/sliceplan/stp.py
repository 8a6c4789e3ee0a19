"""Lifted sliced transport plans and their differentiable two-branch form.

A slicer projects both point sets to the line; the fixed staircase coupling
between sorted uniform atoms is pulled back through the sort orders to give
an ambient-space plan. The smoothed objective replaces the slicer by its
Laplace-perturbed version and averages the lifted cost over perturbations.
Training gradients come from the two-branch construction: each branch pairs
one soft sort with one hard sort, which keeps the estimator's variance down
compared with differentiating through both soft factors at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedInstanceError
from .exact_ot import TransportPlan
from .lapsum import soft_permutation_pair
from .measures import DiscreteMeasure, pairwise_costs
from .slicer import PerturbationConfig, Slicer, sample_perturbation, snapshot_id


@dataclass(frozen=True)
class NwCornerPlan:
    """Staircase coupling of uniform(n_rows) with uniform(n_cols), in rank space."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.rows, self.cols] = self.mass
        return out


def nw_corner(n_rows: int, n_cols: int) -> NwCornerPlan:
    """North-west-corner coupling between two sorted uniform discrete measures.

    Breakpoints are merged in exact integer arithmetic over the common
    denominator n_rows * n_cols.
    """
    if n_rows < 1 or n_cols < 1:
        raise ValueError("plan dimensions must be >= 1")
    bounds = np.union1d(
        np.arange(n_rows + 1, dtype=np.int64) * n_cols,
        np.arange(n_cols + 1, dtype=np.int64) * n_rows,
    )
    mass = np.diff(bounds) / float(n_rows * n_cols)
    rows = (bounds[:-1] // n_cols).astype(np.intp)
    cols = (bounds[:-1] // n_rows).astype(np.intp)
    return NwCornerPlan(n_rows, n_cols, rows, cols, mass)


@dataclass(frozen=True)
class StpResult:
    plan: TransportPlan
    cost: float
    value: float
    slicer_id: str


def _require_uniform(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if not (mu.is_uniform() and nu.is_uniform()):
        raise UnsupportedInstanceError("plan lifting requires uniform weights")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _lift_cost(proj_x, proj_y, X, Y, p) -> float:
    """Cost of the hard lifted plan, without materializing it."""
    xo = np.argsort(proj_x, kind="stable")
    yo = np.argsort(proj_y, kind="stable")
    n, m = len(xo), len(yo)
    if n == m:
        d = np.linalg.norm(X[xo] - Y[yo], axis=1)
        return float(np.mean(d**p))
    t = nw_corner(n, m)
    d = np.linalg.norm(X[xo[t.rows]] - Y[yo[t.cols]], axis=1)
    return float(np.sum(t.mass * d**p))


def lift_plan(f: Slicer, mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> StpResult:
    """Hard lift: sort projections, couple ranks by the staircase plan, map back.

    Ties in the projections are broken by original index (stable sort).
    """
    _require_uniform(mu, nu)
    X, Y = mu.points, nu.points
    ux, uy = f.eval(X), f.eval(Y)
    xo = np.argsort(ux, kind="stable")
    yo = np.argsort(uy, kind="stable")
    t = nw_corner(mu.n, nu.n)
    plan = np.zeros((mu.n, nu.n))
    np.add.at(plan, (xo[t.rows], yo[t.cols]), t.mass)
    d = np.linalg.norm(X[xo[t.rows]] - Y[yo[t.cols]], axis=1)
    cost = float(np.sum(t.mass * d**p))
    return StpResult(
        plan=TransportPlan(plan, mu.weights, nu.weights),
        cost=cost,
        value=cost ** (1.0 / p),
        slicer_id=snapshot_id(f),
    )


def stp_value(result: StpResult) -> float:
    """Dissimilarity value: p-th root of the plan cost."""
    return result.value


def _two_branch_arrays(f: Slicer, X, Y, alpha: float, p: float, C=None, want_plan=False):
    """Core of the two-branch construction on raw arrays.

    Returns (loss, parameter gradient, gamma or None). With T the rank-space
    staircase plan, branch one is soft_x^T T hard_y and branch two is
    hard_x^T T soft_y; the loss is <(branch1+branch2)/2, C> and the gradient
    flows only through the soft factors.
    """
    n, m = X.shape[0], Y.shape[0]
    ux, uy = f.eval(X), f.eval(Y)
    xo = np.argsort(ux, kind="stable")
    yo = np.argsort(uy, kind="stable")
    if C is None:
        C = pairwise_costs(X, Y, p)

    px, vjp_x = soft_permutation_pair(ux, alpha)
    py, vjp_y = soft_permutation_pair(uy, alpha)

    if n == m:
        # staircase = identity/n in rank space
        ux_up = C[:, yo].T / (2.0 * n)  # d loss / d px[a, i]
        uy_up = C[xo, :] / (2.0 * n)
    else:
        t = nw_corner(n, m)
        dense_t = t.dense()
        ux_up = 0.5 * (dense_t @ C[:, yo].T)
        uy_up = 0.5 * (dense_t.T @ C[xo, :])

    loss = float(np.sum(px * ux_up) + np.sum(py * uy_up))
    gx = vjp_x(ux_up)
    gy = vjp_y(uy_up)
    grad = f.eval_vjp(X, gx) + f.eval_vjp(Y, gy)

    gamma = None
    if want_plan:
        if n == m:
            g1 = np.empty((n, n))
            g1[:, yo] = px.T / n
            g2 = np.empty((n, n))
            g2[xo, :] = py / n
        else:
            t = nw_corner(n, m)
            dense_t = t.dense()
            g1 = np.zeros((n, m))
            g1[:, yo] = px.T @ dense_t
            g2 = np.zeros((n, m))
            g2[xo, :] = dense_t @ py
        gamma = 0.5 * (g1 + g2)
    return loss, grad, gamma


def two_branch_plan(f: Slicer, mu: DiscreteMeasure, nu: DiscreteMeasure, alpha: float, p: float = 2.0):
    """Differentiable plan: average of the two soft/hard branch plans.

    Returns (plan, cost, parameter_gradient). The hard permutations are
    treated as constants; gradients reach the parameters through the soft
    permutations and the slicer evaluations only.
    """
    _require_uniform(mu, nu)
    loss, grad, gamma = _two_branch_arrays(f, mu.points, nu.points, alpha, p, want_plan=True)
    plan = TransportPlan(gamma, mu.weights, nu.weights)
    return plan, loss, grad


def estimate_J_eta(
    f: Slicer,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cfg: PerturbationConfig,
    p: float = 2.0,
):
    """Monte Carlo estimate of the smoothed objective.

    Each sample perturbs the slicer by an independent Laplace draw, lifts the
    hard 1D plan of the perturbed projections, and scores it against the
    unperturbed ambient cost. Returns (mean cost, standard error). Sample
    streams are spawned per index from cfg.seed, so results do not depend on
    evaluation order or worker count.
    """
    _require_uniform(mu, nu)
    X, Y = mu.points, nu.points
    d = mu.dim
    base_x, base_y = f.eval(X), f.eval(Y)
    if cfg.eta == 0.0:
        return _lift_cost(base_x, base_y, X, Y, p), 0.0

    root = np.random.SeedSequence(entropy=int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(0x4A65,))
    children = root.spawn(cfg.num_samples)
    costs = np.empty(cfg.num_samples)
    for s, child in enumerate(children):
        rng = np.random.Generator(np.random.Philox(child))
        xi = sample_perturbation(cfg, d, rng=rng)
        costs[s] = _lift_cost(base_x + X @ xi, base_y + Y @ xi, X, Y, p)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / np.sqrt(cfg.num_samples)) if cfg.num_samples > 1 else 0.0
    return mean, se
