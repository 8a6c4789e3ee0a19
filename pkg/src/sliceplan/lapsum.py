"""Smoothed sorting built on the closed-form quantile of a Laplace-CDF mixture.

The smoothed empirical CDF of values x_1..x_n at scale alpha > 0 is
F(t) = (1/n) sum_i Phi_alpha(t - x_i), with Phi_alpha the CDF of a centered
Laplace of scale alpha. Between consecutive sorted values the function is a
two-exponential segment, so F and its inverse are available in closed form
from prefix sums anchored at each sorted value. Prefix sums are kept in log
domain so queries stay stable when the value spread is many orders of
magnitude larger than alpha.

alpha is an absolute scale. Callers that think in terms of a perturbation
scale per unit input norm should resolve their scale to an absolute alpha
before building (harness configs express alpha as a fraction of the data
spread and resolve it per batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DOUBLY_STOCHASTIC_TOL = 1e-9


def laplace_cdf(u, alpha: float):
    """CDF of a centered Laplace with scale alpha, elementwise."""
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u) / alpha)
    return np.where(u < 0, 0.5 * e, 1.0 - 0.5 * e)


def laplace_pdf(u, alpha: float):
    u = np.asarray(u, dtype=np.float64)
    return np.exp(-np.abs(u) / alpha) / (2.0 * alpha)


class LapSumCdf:
    """Smoothed CDF of a value multiset with O(n log n) build, O(log n) queries."""

    def __init__(self, values, alpha: float):
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size < 1:
            raise ValueError("need at least one value")
        self.alpha = float(alpha)
        self.order = np.argsort(values, kind="stable")
        x = values[self.order]
        self.sorted_values = x
        n = x.size
        self.n = n

        s = x / alpha
        # log P_j = log sum_{i<=j} exp((x_i - x_j)/alpha); P_j in [1, j].
        self.log_p = np.logaddexp.accumulate(s) - s
        # suffix_incl[j] = log sum_{i>=j} exp(-x_i/alpha)
        suffix_incl = np.logaddexp.accumulate((-s)[::-1])[::-1]
        self._log_tail0 = suffix_incl[0]
        # log Q_j = log sum_{i>j} exp((x_j - x_i)/alpha); Q_j in [0, n-j].
        log_q = np.full(n, -np.inf)
        if n > 1:
            log_q[:-1] = s[:-1] + suffix_incl[1:]
        self.log_q = log_q

        j = np.arange(1, n + 1)
        with np.errstate(over="ignore"):
            self.knot_cdf = (
                j / n - np.exp(self.log_p) / (2.0 * n) + np.exp(self.log_q) / (2.0 * n)
            )

    def cdf(self, t):
        """F(t); accepts scalars or arrays."""
        t = np.asarray(t, dtype=np.float64)
        scalar = t.ndim == 0
        tq = np.atleast_1d(t)
        n, a = self.n, self.alpha
        x = self.sorted_values
        j = np.searchsorted(x, tq, side="right")
        out = np.empty_like(tq)

        left = j == 0
        if np.any(left):
            out[left] = 0.5 / n * np.exp(self._log_tail0 + tq[left] / a)
        inner = ~left
        if np.any(inner):
            idx = j[inner] - 1
            delta = tq[inner] - x[idx]
            p_term = np.exp(self.log_p[idx] - delta / a)
            q_term = np.exp(self.log_q[idx] + delta / a)
            out[inner] = j[inner] / n - p_term / (2.0 * n) + q_term / (2.0 * n)
        return float(out[0]) if scalar else out

    def inverse_cdf(self, q):
        """t with F(t) = q, solved segmentwise in closed form; q in (0, 1)."""
        q = np.asarray(q, dtype=np.float64)
        scalar = q.ndim == 0
        qq = np.atleast_1d(q)
        if np.any(qq <= 0.0) or np.any(qq >= 1.0):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        n, a = self.n, self.alpha
        x = self.sorted_values
        j = np.searchsorted(self.knot_cdf, qq, side="right")
        out = np.empty_like(qq)

        left = j == 0
        if np.any(left):
            out[left] = a * (np.log(2.0 * n * qq[left]) - self._log_tail0)
        right = j == n
        if np.any(right):
            out[right] = x[-1] + a * (self.log_p[-1] - np.log(2.0 * n * (1.0 - qq[right])))
        inner = ~(left | right)
        if np.any(inner):
            idx = j[inner] - 1
            log_p = self.log_p[idx]
            log_q = self.log_q[idx]
            p = np.exp(log_p)
            b = 2.0 * (j[inner] - n * qq[inner])
            # Solve Q u^2 + b u - P = 0 for u = exp((t - x_(j))/alpha) > 0,
            # picking the cancellation-free form of the positive root.
            disc = np.sqrt(b * b + 4.0 * p * np.exp(log_q))
            with np.errstate(divide="ignore", invalid="ignore"):
                log_u = np.where(
                    b > 0,
                    np.log(2.0 * p) - np.log(b + disc),
                    np.where(
                        b < 0,
                        np.log(disc - b) - np.log(2.0) - log_q,
                        0.5 * (log_p - log_q),
                    ),
                )
            out[inner] = x[idx] + a * log_u
        return float(out[0]) if scalar else out


def cdf(c: LapSumCdf, t):
    return c.cdf(t)


def inverse_cdf(c: LapSumCdf, q):
    return c.inverse_cdf(q)


def soft_rank(values, alpha: float) -> np.ndarray:
    """Smoothed ranks n*F(x_i) in (0, n); order-preserving in the values."""
    values = np.asarray(values, dtype=np.float64).ravel()
    c = LapSumCdf(values, alpha)
    return c.n * c.cdf(values)


def _topk_threshold(c: LapSumCdf, k: int):
    n = c.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, n-1], got k={k} for n={n}")
    return c.inverse_cdf((n - k) / n)


def soft_topk_mask(scores, k: int, alpha: float) -> np.ndarray:
    """Soft indicator of the k largest scores; sums to k by construction.

    mask_i = Phi_alpha(s_i - b) with b the (n-k)/n quantile of the smoothed
    CDF, so sum_i mask_i = n - sum_i Phi_alpha(b - s_i) = n - (n-k) = k.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    c = LapSumCdf(scores, alpha)
    b = _topk_threshold(c, k)
    return laplace_cdf(scores - b, alpha)


@dataclass(frozen=True)
class SoftPermutation:
    """Doubly stochastic relaxation of the ascending sort permutation."""

    matrix: np.ndarray
    alpha: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _rank_thresholds(c: LapSumCdf) -> np.ndarray:
    n = c.n
    return c.inverse_cdf(np.arange(1, n) / n)


def _perm_parts(scores: np.ndarray, alpha: float):
    """Cumulative rank masks and (unnormalized) Laplace kernels at the rank
    thresholds, sharing one exp evaluation. Returns (masks, kernel), both
    (n-1) x n; the true density is kernel / (2 alpha)."""
    c = LapSumCdf(scores, alpha)
    b = _rank_thresholds(c)
    u = b[:, None] - scores[None, :]
    e = np.abs(u)
    e *= -1.0 / alpha
    np.exp(e, out=e)
    masks = np.where(u < 0, e, 2.0 - e)
    masks *= 0.5
    return masks, e


def _masks_to_matrix(masks: np.ndarray, n: int) -> np.ndarray:
    padded = np.vstack([np.zeros((1, n)), masks, np.ones((1, n))])
    return np.maximum(np.diff(padded, axis=0), 0.0)


def _vjp_from_parts(kernel: np.ndarray, upstream: np.ndarray, alpha: float) -> np.ndarray:
    # every term is linear in the density, so the 1/(2 alpha) normalization
    # is applied once at the end
    totals = kernel.sum(axis=1)
    # coefficient of each cumulative mask row in the differenced output
    v = upstream[:-1, :] - upstream[1:, :]
    va = v * kernel
    coef = va.sum(axis=1)
    scale = np.divide(coef, totals, out=np.zeros_like(coef), where=totals > 0.0)
    return (scale @ kernel - va.sum(axis=0)) / (2.0 * alpha)


def soft_permutation(scores, alpha: float) -> SoftPermutation:
    """Soft ascending-sort permutation from differenced cumulative rank masks.

    Row l is the soft indicator that an element occupies ascending rank l:
    cumulative masks M_l(i) = Phi_alpha(b_l - s_i) with b_l = F^{-1}(l/n)
    (each row of M sums to l), padded with a zero row and a ones row, then
    differenced. Rows and columns sum to 1; entries are nonnegative because
    the thresholds b_l increase with l.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if n == 1:
        return SoftPermutation(np.ones((1, 1)), float(alpha))
    masks, _ = _perm_parts(scores, alpha)
    return SoftPermutation(_masks_to_matrix(masks, n), float(alpha))


def soft_permutation_vjp(scores, alpha: float, upstream) -> np.ndarray:
    """Vector-Jacobian product of soft_permutation w.r.t. the scores.

    The thresholds b_l solve sum_i Phi_alpha(b_l - s_i) = l, so implicit
    differentiation gives db_l/ds_j = phi_alpha(b_l - s_j) / sum_i phi_alpha(b_l - s_i).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    upstream = np.asarray(upstream, dtype=np.float64)
    n = scores.size
    if upstream.shape != (n, n):
        raise ValueError("upstream must be an n x n matrix")
    if n == 1:
        return np.zeros(1)
    _, kernel = _perm_parts(scores, alpha)
    return _vjp_from_parts(kernel, upstream, alpha)


def soft_permutation_pair(scores, alpha: float):
    """(matrix, vjp function) computed from one shared kernel evaluation;
    the hot path for training loops."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if n == 1:
        return np.ones((1, 1)), lambda upstream: np.zeros(1)
    masks, kernel = _perm_parts(scores, alpha)
    return _masks_to_matrix(masks, n), lambda upstream: _vjp_from_parts(kernel, upstream, alpha)
