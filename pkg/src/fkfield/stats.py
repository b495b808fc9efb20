"""Empirical distributions, Wasserstein-2 distances, fits, resampled errors.

Chain samples are autocorrelated, so errors come from batch means (block
length well above the decorrelation interval) and derived statistics use
delete-one-block jackknife.  The Wasserstein-2 distance between empirical
laws is computed exactly through the quantile coupling: sorted pairing for
equal sizes, and the common-refinement quantile grid otherwise.
"""

import math
from dataclasses import dataclass

import numpy as np

from .field import batch_stderr


@dataclass
class EmpiricalDistribution:
    """Sorted sample vector with central moments and batch-means errors."""

    samples: np.ndarray
    n: int
    mean: float
    m2: float
    m3: float
    m4: float
    stderr: dict

    @classmethod
    def from_samples(cls, x, n_blocks: int = 20) -> "EmpiricalDistribution":
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            raise ValueError("empty sample")
        mean = float(x.mean())
        c = x - mean
        moments = {k: float((c**k).mean()) for k in (2, 3, 4)}
        stderr = {"mean": batch_stderr(x, n_blocks)}
        for k in (2, 3, 4):
            stderr[f"m{k}"] = batch_stderr(c**k, n_blocks)
        return cls(
            samples=np.sort(x),
            n=len(x),
            mean=mean,
            m2=moments[2],
            m3=moments[3],
            m4=moments[4],
            stderr=stderr,
        )


def _sorted_samples(p) -> np.ndarray:
    x = p.samples if isinstance(p, EmpiricalDistribution) else np.sort(np.asarray(p, dtype=float))
    if len(x) == 0:
        raise ValueError("empty sample")
    return x


def wasserstein2(p, q) -> float:
    """W2 between two empirical laws via the optimal one-dimensional coupling.

    Equal sizes pair order statistics directly; unequal sizes integrate the
    squared quantile difference over the merged quantile grid (exact, using
    integer interval widths over the common denominator).
    """
    xs, ys = _sorted_samples(p), _sorted_samples(q)
    n, m = len(xs), len(ys)
    if n == m:
        d = xs - ys
        return math.sqrt(float(np.dot(d, d)) / n)
    i = j = 0
    prev = 0
    total = 0.0
    nm = n * m
    while prev < nm:
        hi = min((i + 1) * m, (j + 1) * n)
        total += (hi - prev) * (xs[i] - ys[j]) ** 2
        prev = hi
        if hi == (i + 1) * m:
            i += 1
        if hi == (j + 1) * n:
            j += 1
    return math.sqrt(total / nm)


@dataclass
class ExponentFit:
    """Weighted least squares of log y on log x."""

    exponent: float
    amplitude: float
    stderr: float
    r_squared: float
    window: tuple
    n_points: int


@dataclass
class ExponentialFit:
    """Weighted least squares of log y on x (decay rate is -slope)."""

    rate: float
    amplitude: float
    stderr: float
    r_squared: float
    window: tuple
    n_points: int


def _weighted_line(X, Y, W):
    S = W.sum()
    Sx = float(np.dot(W, X))
    Sy = float(np.dot(W, Y))
    Sxx = float(np.dot(W, X * X))
    Sxy = float(np.dot(W, X * Y))
    denom = Sxx - Sx * Sx / S
    slope = (Sxy - Sx * Sy / S) / denom
    intercept = (Sy - slope * Sx) / S
    resid = Y - (intercept + slope * X)
    ss_res = float(np.dot(W, resid * resid))
    ybar = Sy / S
    ss_tot = float(np.dot(W, (Y - ybar) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, math.sqrt(1.0 / denom), r2


def _fit_weights(y, stderr):
    if stderr is None:
        return np.ones(len(y))
    s = np.asarray(stderr, dtype=float)
    rel = np.where(s > 0, s / y, np.nan)
    fallback = np.nanmax(rel) if np.isfinite(rel).any() else 1.0
    rel = np.where(np.isfinite(rel), rel, max(fallback, 1e-12))
    return 1.0 / rel**2


def fit_power_law(points) -> ExponentFit:
    """Fit y = A x^s on (x, y[, stderr]) triples; returns s with its error.

    Works on log-log coordinates with weights from the relative errors.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive x and y")
    err = np.array([p[2] for p in pts], dtype=float) if len(pts[0]) > 2 else None
    W = _fit_weights(y, err)
    slope, intercept, se, r2 = _weighted_line(np.log(x), np.log(y), W)
    return ExponentFit(
        exponent=slope,
        amplitude=math.exp(intercept),
        stderr=se,
        r_squared=r2,
        window=(float(x.min()), float(x.max())),
        n_points=len(pts),
    )


def fit_exponential(points) -> ExponentialFit:
    """Fit y = A exp(-rate x) on (x, y[, stderr]) triples."""
    pts = [tuple(p) for p in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(y <= 0):
        raise ValueError("exponential fit needs positive y")
    err = np.array([p[2] for p in pts], dtype=float) if len(pts[0]) > 2 else None
    W = _fit_weights(y, err)
    slope, intercept, se, r2 = _weighted_line(x, np.log(y), W)
    return ExponentialFit(
        rate=-slope,
        amplitude=math.exp(intercept),
        stderr=se,
        r_squared=r2,
        window=(float(x.min()), float(x.max())),
        n_points=len(pts),
    )


@dataclass
class TwoPointTable:
    """Radially binned same-cluster frequency (the FK two-point function)."""

    r: np.ndarray  # continuum units
    value: np.ndarray
    stderr: np.ndarray

    def rows(self):
        return list(zip(self.r, self.value, self.stderr))

    def points(self):
        return [(float(r), float(v), float(s)) for r, v, s in self.rows() if v > 0]


def two_point(geom, ensemble, r_values=None, n_blocks: int = 16) -> TwoPointTable:
    """Same-cluster frequency at axis displacements r (zero-field torus ensemble).

    Each configuration contributes the lattice average over all sites and
    both axis directions at each separation; errors are batch means over the
    sample stream.
    """
    if not geom.is_torus:
        raise ValueError("two_point expects a torus ensemble")
    L = geom.side_sites
    if r_values is None:
        r_values = sorted({1, 2, 3, 4, 6, 8, 11, 16, 22, 32, 45, 64} & set(range(1, L // 2)))
    r_values = list(r_values)
    per_sample = []
    for dec in ensemble:
        lab = dec.labels.reshape(L, L)
        row = [1.0 if r == 0 else 0.5 * (
            float((lab == np.roll(lab, -r, axis=1)).mean())
            + float((lab == np.roll(lab, -r, axis=0)).mean())
        ) for r in r_values]
        per_sample.append(row)
    arr = np.asarray(per_sample)
    if arr.size == 0:
        raise ValueError("empty ensemble")
    value = arr.mean(axis=0)
    stderr = np.array([batch_stderr(arr[:, k], n_blocks) for k in range(arr.shape[1])])
    return TwoPointTable(r=np.asarray(r_values, dtype=float) * geom.spacing,
                         value=value, stderr=stderr)


def truncated_two_point(geom, ensemble, r_values, n_blocks: int = 16) -> TwoPointTable:
    """P(same cluster at separation r AND the cluster avoids the ghost).

    At zero field this reduces to the critical two-point function; under a
    ghost field it decays exponentially with a finite mass.
    """
    if not geom.is_torus:
        raise ValueError("truncated_two_point expects a torus ensemble")
    L = geom.side_sites
    r_values = list(r_values)
    per_sample = []
    for dec in ensemble:
        lab = dec.labels.reshape(L, L)
        if dec.ghost_label >= 0:
            nonghost = (dec.labels != dec.ghost_label).reshape(L, L)
        else:
            nonghost = np.ones((L, L), dtype=bool)
        row = []
        for r in r_values:
            hit = 0.5 * (
                float(((lab == np.roll(lab, -r, axis=1)) & nonghost).mean())
                + float(((lab == np.roll(lab, -r, axis=0)) & nonghost).mean())
            )
            row.append(hit)
        per_sample.append(row)
    arr = np.asarray(per_sample)
    value = arr.mean(axis=0)
    stderr = np.array([batch_stderr(arr[:, k], n_blocks) for k in range(arr.shape[1])])
    return TwoPointTable(r=np.asarray(r_values, dtype=float) * geom.spacing,
                         value=value, stderr=stderr)


@dataclass
class SurvivalTail:
    """Empirical survival function of a count, with its geometric-decay fit.

    The geometric bound is an upper bound, not an identity; the fit is a
    consistency check over the k values with enough tail events.
    """

    k: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    decay: float  # fitted lambda
    decay_stderr: float
    r_squared: float
    fit_ks: np.ndarray

    def rows(self):
        return list(zip(self.k, self.survival, self.stderr))


def survival_tail(samples, min_tail_events: int = 50) -> SurvivalTail:
    """P(N >= k) for k = 0, 1, ... and the fitted geometric decay rate."""
    x = np.asarray(samples, dtype=np.int64)
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    kmax = int(x.max())
    ks = np.arange(kmax + 1)
    counts = np.array([(x >= k).sum() for k in ks], dtype=float)
    survival = counts / n
    stderr = np.sqrt(np.maximum(survival * (1 - survival), 0.0) / n)
    fit_mask = (ks >= 1) & (counts >= min_tail_events)
    fit_ks = ks[fit_mask]
    lam = lam_se = r2 = float("nan")
    if fit_mask.sum() >= 2:
        W = _fit_weights(survival[fit_mask], stderr[fit_mask])
        slope, _, se, r2 = _weighted_line(fit_ks.astype(float), np.log(survival[fit_mask]), W)
        lam, lam_se = math.exp(slope), math.exp(slope) * se
    return SurvivalTail(k=ks, survival=survival, stderr=stderr, decay=lam,
                        decay_stderr=lam_se, r_squared=r2, fit_ks=fit_ks)


def _central_moments_from_raw(r1, r2, r3, r4):
    m2 = r2 - r1 * r1
    m4 = r4 - 4 * r1 * r3 + 6 * r1 * r1 * r2 - 3 * r1**4
    return m2, m4


def kurtosis(p, n_blocks: int = 20):
    """Standardized fourth moment with a delete-one-block jackknife error."""
    x = p.samples if isinstance(p, EmpiricalDistribution) else np.asarray(p, dtype=float)
    n = len(x)
    if n < 100:
        raise ValueError(f"kurtosis needs n >= 100, got {n}")
    blen = n // n_blocks
    x = x[: n_blocks * blen]
    blocks = x.reshape(n_blocks, blen)
    raw = np.stack([np.mean(blocks**k, axis=1) for k in (1, 2, 3, 4)])  # (4, B)
    tot = raw.mean(axis=1)
    m2, m4 = _central_moments_from_raw(*tot)
    full = m4 / m2**2
    theta = np.empty(n_blocks)
    for b in range(n_blocks):
        rest = (tot * n_blocks - raw[:, b]) / (n_blocks - 1)
        m2b, m4b = _central_moments_from_raw(*rest)
        theta[b] = m4b / m2b**2
    jack = math.sqrt((n_blocks - 1) / n_blocks * float(((theta - theta.mean()) ** 2).sum()))
    return float(full), jack
