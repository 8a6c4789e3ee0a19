"""Discrete measures, synthetic dataset generators, cost matrices, point-cloud I/O.

All generators are deterministic: each (spec, purpose) pair gets its own
counter-based Philox stream, so samples are bitwise reproducible regardless
of call order or thread count.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError

WEIGHT_TOL = 1e-12

FAMILIES = (
    "two-moons-plus-eight-gaussians",
    "two-moons",
    "eight-gaussians",
    "rings",
    "gaussian-blobs",
    "file",
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set in R^d. Immutable; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a nonempty (n, d) array")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must be a length-n vector")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {WEIGHT_TOL}")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self, tol: float = WEIGHT_TOL) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= tol))

    def centroid(self) -> np.ndarray:
        return self.weights @ self.points


def uniform_measure(points) -> DiscreteMeasure:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


@dataclass(frozen=True)
class Drift:
    """Rotation (radians) then zoom, both about the sample centroid."""

    rotation: float = 0.0
    zoom: float = 1.0

    def __post_init__(self):
        if not self.zoom > 0:
            raise ConfigurationError("drift zoom factor must be > 0")


@dataclass(frozen=True)
class DatasetSpec:
    family: str
    n: int
    seed: int
    drift: Drift | None = None
    path: str | None = None  # only for family="file"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(
                f"unknown dataset family {self.family!r}; known: {', '.join(FAMILIES)}"
            )
        if self.n < 1:
            raise ConfigurationError("dataset size n must be >= 1")
        if self.family == "file" and not self.path:
            raise ConfigurationError("family 'file' requires a path")


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Named, splittable, counter-based random stream."""
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def _two_moons(n, rng, noise=0.06):
    half = n // 2
    t1 = rng.uniform(0.0, np.pi, size=half)
    t2 = rng.uniform(0.0, np.pi, size=n - half)
    upper = np.stack([np.cos(t1), np.sin(t1)], axis=1)
    lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
    pts = np.concatenate([upper, lower], axis=0)
    return pts + noise * rng.standard_normal(pts.shape)


def _eight_gaussians(n, rng, radius=2.0, std=0.15):
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    comp = rng.integers(0, 8, size=n)
    return centers[comp] + std * rng.standard_normal((n, 2))


def _rings(n, rng):
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _gaussian_blobs(n, rng, n_blobs=4, spread=1.8, std=0.3):
    centers = spread * rng.standard_normal((n_blobs, 2))
    comp = rng.integers(0, n_blobs, size=n)
    return centers[comp] + std * rng.standard_normal((n, 2))


def apply_drift(points: np.ndarray, drift: Drift) -> np.ndarray:
    """Rotate then zoom about the centroid of the point set (2D only)."""
    if points.shape[1] != 2:
        raise ConfigurationError("drift is defined for 2D point sets")
    c = points.mean(axis=0)
    th = drift.rotation
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return c + drift.zoom * ((points - c) @ rot.T)


def generate(spec: DatasetSpec) -> DiscreteMeasure:
    """Sample a dataset family; uniform weights; optional centroid drift."""
    if spec.family == "file":
        m = load_points(spec.path)
        pts = m.points
        if spec.drift is not None:
            pts = apply_drift(pts, spec.drift)
        return DiscreteMeasure(pts, m.weights)

    rng = stream(spec.seed, f"generate:{spec.family}")
    if spec.family == "two-moons":
        pts = _two_moons(spec.n, rng)
    elif spec.family == "eight-gaussians":
        pts = _eight_gaussians(spec.n, rng)
    elif spec.family == "two-moons-plus-eight-gaussians":
        half = spec.n // 2
        moons = _two_moons(half, rng) if half else np.zeros((0, 2))
        gauss = _eight_gaussians(spec.n - half, rng)
        pts = np.concatenate([moons, gauss], axis=0)
    elif spec.family == "rings":
        pts = _rings(spec.n, rng)
    elif spec.family == "gaussian-blobs":
        pts = _gaussian_blobs(spec.n, rng)
    else:  # pragma: no cover - guarded by DatasetSpec
        raise ConfigurationError(f"unknown dataset family {spec.family!r}")

    if spec.drift is not None:
        pts = apply_drift(pts, spec.drift)
    return uniform_measure(pts)


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise ground costs ||x_i - y_j||_2^p."""

    entries: np.ndarray
    p: float
    metric: str = field(default="euclidean")

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("cost exponent p must be >= 1")
        e = np.asarray(self.entries, dtype=np.float64)
        if np.any(e < 0):
            raise ValueError("cost entries must be nonnegative")
        object.__setattr__(self, "entries", _readonly(e))


def pairwise_costs(x: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    d = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return d if p == 1 else d**p


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> CostMatrix:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if p < 1:
        raise ValueError("cost exponent p must be >= 1")
    return CostMatrix(pairwise_costs(mu.points, nu.points, p), p)


def save_points(measure: DiscreteMeasure, path, fmt: str | None = None) -> None:
    fmt = fmt or _infer_format(path)
    if fmt == "csv":
        np.savetxt(path, measure.points, delimiter=",", fmt="%.17g")
    elif fmt == "json":
        payload = {
            "points": measure.points.tolist(),
            "weights": measure.weights.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    else:
        raise ConfigurationError(f"unknown point-cloud format {fmt!r}")


def load_points(path, fmt: str | None = None) -> DiscreteMeasure:
    fmt = fmt or _infer_format(path)
    if fmt == "csv":
        rows = []
        width = None
        with open(path, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if width is None:
                    width = len(fields)
                elif len(fields) != width:
                    raise ParseError(f"ragged row: expected {width} columns", row=i)
                try:
                    rows.append([float(v) for v in fields])
                except ValueError:
                    raise ParseError("non-numeric field", row=i) from None
        if not rows:
            raise ParseError("empty point-cloud file")
        return uniform_measure(np.array(rows))
    if fmt == "json":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        pts = np.asarray(payload["points"], dtype=np.float64)
        if "weights" in payload and payload["weights"] is not None:
            return DiscreteMeasure(pts, np.asarray(payload["weights"], dtype=np.float64))
        return uniform_measure(pts)
    raise ConfigurationError(f"unknown point-cloud format {fmt!r}")


def _infer_format(path) -> str:
    s = str(path)
    if s.endswith(".json"):
        return "json"
    if s.endswith(".csv"):
        return "csv"
    raise ConfigurationError(f"cannot infer format from {s!r}; pass fmt explicitly")
