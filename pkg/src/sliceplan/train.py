"""Mini-batch slicer training and batch-statistic estimators.

The optimization loop: per epoch, draw k index batches, form the two-branch
differentiable plan on each batch's cost sub-matrix, accumulate gradients,
and take one (averaged) parameter step per epoch. Full-batch training is the
special case batch_size = n with one batch per epoch. A per-batch-update
mode exists behind a flag but is not the default.

The smoothing scale is resolved per batch as a fraction of the projected
batch spread (floored at 1e-8), so smoothing stays meaningful as the
projections drift during training.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .measures import DiscreteMeasure, pairwise_costs, stream
from .slicer import Slicer
from .stp import _lift_cost, _two_branch_arrays

ALPHA_FLOOR = 1e-8
COST_CACHE_LIMIT = 10_000_000  # precompute the full cost matrix below this n*m


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int | None = None  # None = full batch
    batches_per_epoch: int = 1
    lr: float = 1e-2
    alpha_fraction: float = 0.05
    optimizer: str = "gd"  # "gd" | "momentum"
    momentum: float = 0.9
    seed: int = 0
    p: float = 2.0
    full_cost_every: int = 0  # 0: record full-batch cost only at the end
    update_per_batch: bool = False
    keep_best: bool = False  # return the best hard-cost iterate (incl. the init)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batches_per_epoch < 1:
            raise ConfigurationError("batches_per_epoch must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if not self.alpha_fraction > 0:
            raise ConfigurationError("alpha_fraction must be > 0")
        if self.optimizer not in ("gd", "momentum"):
            raise ConfigurationError("optimizer must be 'gd' or 'momentum'")
        if not 1 <= self.p:
            raise ConfigurationError("p must be >= 1")


@dataclass
class TrainTrace:
    epoch_losses: list = field(default_factory=list)
    full_costs: list = field(default_factory=list)  # (epoch, hard full-batch cost)
    wall_clock: list = field(default_factory=list)
    checkpoint: dict | None = None

    @property
    def final_full_cost(self) -> float:
        return self.full_costs[-1][1]

    def to_jsonl(self, path) -> None:
        """One epoch per line; the last line carries the checkpoint."""
        costs = dict(self.full_costs)
        with open(path, "w", encoding="utf-8") as fh:
            for e, loss in enumerate(self.epoch_losses, start=1):
                rec = {"epoch": e, "loss": loss, "wall_clock": self.wall_clock[e - 1]}
                if e in costs:
                    rec["full_cost"] = costs[e]
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps({"checkpoint": self.checkpoint}) + "\n")


def minibatch_kernel(f: Slicer, x_batch, y_batch, p: float = 2.0) -> float:
    """Average p-cost of the rank pairing of two equal-size batches under f."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.float64)
    if x_batch.shape[0] != y_batch.shape[0]:
        raise ValueError("batches must have equal size")
    return _lift_cost(f.eval(x_batch), f.eval(y_batch), x_batch, y_batch, p)


def incomplete_estimator(f: Slicer, X, Y, batch_size: int, num_batches: int, seed: int, p: float = 2.0):
    """Average the batch kernel over independently drawn index subsets.

    Subsets are drawn uniformly without replacement within each batch,
    independently across batches. Returns (mean, per-batch values).
    """
    X = _points(X)
    Y = _points(Y)
    n, m = X.shape[0], Y.shape[0]
    if not 1 <= batch_size <= min(n, m):
        raise ConfigurationError(f"batch_size must be in [1, {min(n, m)}], got {batch_size}")
    if num_batches < 1:
        raise ConfigurationError("num_batches must be >= 1")
    rng = stream(seed, "incomplete-batches")
    values = np.empty(num_batches)
    for k in range(num_batches):
        i = rng.permutation(n)[:batch_size]
        j = rng.permutation(m)[:batch_size]
        values[k] = minibatch_kernel(f, X[i], Y[j], p)
    return float(values.mean()), values


def _points(data) -> np.ndarray:
    if isinstance(data, DiscreteMeasure):
        return data.points
    return np.asarray(data, dtype=np.float64)


def batch_alpha(proj_x, proj_y, fraction: float) -> float:
    spread = float(max(np.max(proj_x), np.max(proj_y)) - min(np.min(proj_x), np.min(proj_y)))
    return max(fraction * spread, ALPHA_FLOOR)


class _Stepper:
    def __init__(self, cfg: TrainConfig, n_params: int):
        self.cfg = cfg
        self.velocity = np.zeros(n_params)

    def step(self, f: Slicer, grad: np.ndarray) -> None:
        if self.cfg.optimizer == "momentum":
            self.velocity = self.cfg.momentum * self.velocity + grad
            f.set_params(f.get_params() - self.cfg.lr * self.velocity)
        else:
            f.set_params(f.get_params() - self.cfg.lr * grad)


def _validate_pair(mu: DiscreteMeasure, nu: DiscreteMeasure, cfg: TrainConfig):
    if not (mu.is_uniform() and nu.is_uniform()):
        raise ConfigurationError("training requires uniform weights")
    b = cfg.batch_size
    if b is None:
        if mu.n != nu.n:
            raise ConfigurationError("batch_size: full-batch mode needs equal sizes")
        return mu.n
    if not 1 <= b <= min(mu.n, nu.n):
        raise ConfigurationError(
            f"batch_size must be in [1, min(n, m)] = [1, {min(mu.n, nu.n)}], got {b}"
        )
    return b


def train_minstp(mu: DiscreteMeasure, nu: DiscreteMeasure, f0: Slicer, cfg: TrainConfig):
    """Minimize the sliced-plan cost over slicer parameters on one pair.

    Follows the printed mini-batch procedure: k batches per epoch, gradients
    accumulated and applied once per epoch (unless update_per_batch). The
    input slicer is not mutated; a trained copy is returned with its trace.
    """
    b = _validate_pair(mu, nu, cfg)
    X, Y = mu.points, nu.points
    n, m = mu.n, nu.n
    cost_full = pairwise_costs(X, Y, cfg.p) if n * m <= COST_CACHE_LIMIT else None

    f = f0.copy()
    if f.in_dim != mu.dim:
        raise ConfigurationError(f"slicer input dim {f.in_dim} != point dim {mu.dim}")
    rng = stream(cfg.seed, "train:batches")
    stepper = _Stepper(cfg, f.n_params)
    trace = TrainTrace()

    def full_cost():
        return _lift_cost(f.eval(X), f.eval(Y), X, Y, cfg.p)

    best_cost, best_params = (full_cost(), f.get_params()) if cfg.keep_best else (np.inf, None)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        grad_sum = np.zeros(f.n_params)
        losses = []
        for _ in range(cfg.batches_per_epoch):
            i = rng.permutation(n)[:b]
            j = rng.permutation(m)[:b]
            xb, yb = X[i], Y[j]
            c_sub = cost_full[np.ix_(i, j)] if cost_full is not None else pairwise_costs(xb, yb, cfg.p)
            alpha = batch_alpha(f.eval(xb), f.eval(yb), cfg.alpha_fraction)
            loss, grad, _ = _two_branch_arrays(f, xb, yb, alpha, cfg.p, C=c_sub)
            losses.append(loss)
            if cfg.update_per_batch:
                stepper.step(f, grad)
            else:
                grad_sum += grad
        if not cfg.update_per_batch:
            stepper.step(f, grad_sum / cfg.batches_per_epoch)
        trace.epoch_losses.append(float(np.mean(losses)))
        trace.wall_clock.append(time.perf_counter() - t0)
        if cfg.keep_best:
            cost = full_cost()
            if cost < best_cost:
                best_cost, best_params = cost, f.get_params()
            if cfg.full_cost_every and epoch % cfg.full_cost_every == 0:
                trace.full_costs.append((epoch, cost))
        elif cfg.full_cost_every and epoch % cfg.full_cost_every == 0:
            trace.full_costs.append((epoch, full_cost()))

    if cfg.keep_best:
        f.set_params(best_params)
    if not trace.full_costs or trace.full_costs[-1][0] != cfg.epochs:
        trace.full_costs.append((cfg.epochs, full_cost()))
    trace.checkpoint = f.to_payload()
    return f, trace


def default_context(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    """Moment descriptor of a pair: per measure, mean, per-axis std, and the
    top-2 principal axes (sign-fixed), concatenated. Length 8*d."""
    return np.concatenate([_measure_context(mu), _measure_context(nu)])


def _measure_context(m: DiscreteMeasure) -> np.ndarray:
    pts = m.points
    d = m.dim
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / max(1, m.n - 1)
    evals, evecs = np.linalg.eigh(cov)
    axes = np.zeros((2, d))
    order = np.argsort(evals)[::-1]
    for r, idx in enumerate(order[: min(2, d)]):
        v = evecs[:, idx]
        lead = np.argmax(np.abs(v))
        if v[lead] < 0:
            v = -v
        axes[r] = v
    return np.concatenate([mean, std, axes.ravel()])


def zero_context(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    """Ablation: same length as default_context, all zeros."""
    return np.zeros_like(default_context(mu, nu))


def augment_with_context(points: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    if ctx.size == 0:
        return points
    return np.concatenate([points, np.broadcast_to(ctx, (points.shape[0], ctx.size))], axis=1)


def train_amortized(pairs, f0: Slicer, cfg: TrainConfig, context_fn=default_context):
    """Train one slicer across a family of pairs.

    Each step samples a pair uniformly and applies one mini-batch step with
    the pair's context vector appended to every point (immediate update, the
    k = 1 special case of the epoch loop). With a single pair and an empty
    context this reproduces train_minstp(batches_per_epoch=1) exactly,
    because pair choices and batch indices come from separate streams.
    """
    if not pairs:
        raise ConfigurationError("pairs must be a nonempty list")
    d = pairs[0][0].dim
    for mu, nu in pairs:
        if mu.dim != d or nu.dim != d:
            raise ConfigurationError("all pairs must share the point dimension")
        if not (mu.is_uniform() and nu.is_uniform()):
            raise ConfigurationError("training requires uniform weights")
    contexts = [np.asarray(context_fn(mu, nu), dtype=np.float64).ravel() for mu, nu in pairs]
    ctx_len = contexts[0].size
    if any(c.size != ctx_len for c in contexts):
        raise ConfigurationError("context_fn must return a fixed-length descriptor")
    f = f0.copy()
    if f.in_dim != d + ctx_len:
        raise ConfigurationError(
            f"slicer input dim {f.in_dim} != point dim + context length = {d + ctx_len}"
        )

    sizes = [(mu.n, nu.n) for mu, nu in pairs]
    b = cfg.batch_size
    if b is not None and any(b > min(n, m) for n, m in sizes):
        raise ConfigurationError("batch_size exceeds the smallest pair")

    rng_pairs = stream(cfg.seed, "train:pairs")
    rng = stream(cfg.seed, "train:batches")
    stepper = _Stepper(cfg, f.n_params)
    trace = TrainTrace()

    for _epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for _ in range(cfg.batches_per_epoch):
            idx = int(rng_pairs.integers(len(pairs))) if len(pairs) > 1 else 0
            mu, nu = pairs[idx]
            n, m = sizes[idx]
            bk = b if b is not None else min(n, m)
            i = rng.permutation(n)[:bk]
            j = rng.permutation(m)[:bk]
            xb = augment_with_context(mu.points[i], contexts[idx])
            yb = augment_with_context(nu.points[j], contexts[idx])
            c_sub = pairwise_costs(mu.points[i], nu.points[j], cfg.p)
            alpha = batch_alpha(f.eval(xb), f.eval(yb), cfg.alpha_fraction)
            loss, grad, _ = _two_branch_arrays(f, xb, yb, alpha, cfg.p, C=c_sub)
            losses.append(loss)
            stepper.step(f, grad)
        trace.epoch_losses.append(float(np.mean(losses)))
        trace.wall_clock.append(time.perf_counter() - t0)

    trace.checkpoint = f.to_payload()
    return f, trace


def amortized_pair_cost(f: Slicer, mu: DiscreteMeasure, nu: DiscreteMeasure, context_fn=default_context, p: float = 2.0) -> float:
    """Hard lifted cost of a context-conditioned slicer on one pair.

    The cost is measured in the ambient (unaugmented) space; the context
    only steers the projections."""
    ctx = np.asarray(context_fn(mu, nu), dtype=np.float64).ravel()
    xa = augment_with_context(mu.points, ctx)
    ya = augment_with_context(nu.points, ctx)
    return _lift_cost(f.eval(xa), f.eval(ya), mu.points, nu.points, p)
