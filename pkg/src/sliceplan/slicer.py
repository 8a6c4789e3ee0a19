"""Parametric slicers f: R^d -> R with exact reverse-mode parameter gradients,
plus multivariate-Laplace perturbations of slicers.

Slicers are evaluated on frozen parameters during studies; only a trainer
mutates them (via set_params). The model-class regularity constants of the
theory (a Lipschitz bound and a sup bound) are not enforced here: tanh MLPs
are automatically bounded and Lipschitz on compact inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .measures import stream


class LinearSlicer:
    """f(x) = <x, theta>."""

    variant = "linear"

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=np.float64).ravel().copy()

    @property
    def in_dim(self) -> int:
        return self.theta.size

    @property
    def n_params(self) -> int:
        return self.theta.size

    def get_params(self) -> np.ndarray:
        return self.theta.copy()

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != self.theta.size:
            raise ValueError("parameter vector length mismatch")
        self.theta = flat.copy()

    def eval(self, X) -> np.ndarray:
        X = _check_points(X, self.in_dim)
        return X @ self.theta

    def eval_vjp(self, X, upstream) -> np.ndarray:
        X = _check_points(X, self.in_dim)
        upstream = np.asarray(upstream, dtype=np.float64).ravel()
        return X.T @ upstream

    def copy(self) -> "LinearSlicer":
        return LinearSlicer(self.theta)

    def to_payload(self) -> dict:
        return {"variant": "linear", "widths": [self.in_dim], "params": self.theta.tolist()}


class MlpSlicer:
    """tanh MLP R^d -> R; hidden widths fixed at construction.

    Parameters flatten as [W1, b1, W2, b2, ...] in layer order, row-major.
    """

    variant = "mlp"

    def __init__(self, widths, params=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or widths[-1] != 1:
            raise ValueError("widths must be [d, h1, ..., 1]")
        self.widths = widths
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(np.zeros((fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        if params is not None:
            self.set_params(params)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != self.n_params:
            raise ValueError("parameter vector length mismatch")
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = flat[k : k + b.size].copy()
            k += b.size

    def eval(self, X) -> np.ndarray:
        X = _check_points(X, self.in_dim)
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
        return a[:, 0]

    def eval_vjp(self, X, upstream) -> np.ndarray:
        X = _check_points(X, self.in_dim)
        upstream = np.asarray(upstream, dtype=np.float64).ravel()
        acts = [X]
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = upstream[:, None]
        for i in range(last, -1, -1):
            if i != last:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
        )

    def copy(self) -> "MlpSlicer":
        return MlpSlicer(self.widths, self.get_params())

    def to_payload(self) -> dict:
        return {"variant": "mlp", "widths": list(self.widths), "params": self.get_params().tolist()}


Slicer = LinearSlicer | MlpSlicer


def _check_points(X, dim) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"points must have shape (n, {dim})")
    return X


def random_linear_slicer(dim: int, seed: int) -> LinearSlicer:
    """Unit-norm direction drawn uniformly on the sphere."""
    rng = stream(seed, "slicer-init:linear")
    v = rng.standard_normal(dim)
    return LinearSlicer(v / np.linalg.norm(v))


def random_mlp_slicer(dim: int, hidden, seed: int) -> MlpSlicer:
    """He-style scaled-uniform init: W ~ U(+-sqrt(6/fan_in)), zero biases."""
    rng = stream(seed, "slicer-init:mlp")
    widths = [dim, *list(hidden), 1]
    m = MlpSlicer(widths)
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / fan_in)
        m.weights[i] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        m.biases[i] = np.zeros(fan_out)
    return m


def make_slicer(variant: str, dim: int, seed: int, hidden=(32, 32)) -> Slicer:
    if variant == "linear":
        return random_linear_slicer(dim, seed)
    if variant == "mlp":
        return random_mlp_slicer(dim, hidden, seed)
    raise ValueError(f"unknown slicer variant {variant!r}")


def snapshot_id(f: Slicer) -> str:
    h = hashlib.sha1()
    h.update(f.variant.encode())
    h.update(f.get_params().tobytes())
    return h.hexdigest()[:12]


def save_checkpoint(f: Slicer, path, seed: int | None = None) -> None:
    payload = f.to_payload()
    payload["seed"] = seed
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> Slicer:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return slicer_from_payload(payload)


def slicer_from_payload(payload: dict) -> Slicer:
    if payload["variant"] == "linear":
        return LinearSlicer(payload["params"])
    if payload["variant"] == "mlp":
        return MlpSlicer(payload["widths"], payload["params"])
    raise ValueError(f"unknown slicer variant {payload['variant']!r}")


@dataclass(frozen=True)
class PerturbationConfig:
    """Laplace perturbation xi ~ Lap_d(eta^2 * Sigma) added as x -> f(x) + <xi, x>."""

    eta: float
    sigma: np.ndarray | None = None  # default 2*I_d, resolved at sampling time
    num_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=np.float64)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError("sigma must be square")
            if np.max(np.abs(s - s.T)) > 1e-12:
                raise ValueError("sigma must be symmetric within 1e-12")
            object.__setattr__(self, "sigma", s)

    def sigma_for(self, d: int) -> np.ndarray:
        if self.sigma is None:
            return 2.0 * np.eye(d)
        if self.sigma.shape[0] != d:
            raise ValueError("sigma dimension does not match points")
        return self.sigma


def sample_perturbation(cfg: PerturbationConfig, d: int, rng=None) -> np.ndarray:
    """One draw xi ~ Lap_d(eta^2 Sigma) via the Gaussian scale mixture
    xi = eta * sqrt(W) * A z, with W ~ Exp(1), z ~ N(0, I), A A^T = Sigma."""
    sigma = cfg.sigma_for(d)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sigma must be positive definite") from exc
    if cfg.eta == 0.0:
        return np.zeros(d)
    if rng is None:
        rng = stream(cfg.seed, "perturbation")
    w = rng.standard_exponential()
    z = rng.standard_normal(d)
    return cfg.eta * np.sqrt(w) * (chol @ z)


def perturbed_eval(f: Slicer, X, xi) -> np.ndarray:
    """g(x) = f(x) + <xi, x>."""
    X = np.asarray(X, dtype=np.float64)
    return f.eval(X) + X @ np.asarray(xi, dtype=np.float64)
