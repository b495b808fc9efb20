"""The rescaled magnetization field and its cluster-geometric representation.

The field pairs a test function f with the spins, Phi(f) = theta * sum_x
f(a x) S_x, where the scale factor theta is fixed so that the unit-square
block magnetization has second moment one.  Equivalently, theta^-2 is the
mean of sum_i |C_i restricted to the box|^2 over critical FK configurations,
and the field is distributed as a sum of per-cluster area masses with
independent symmetric signs.  Cutting off clusters whose boundary loop has
diameter <= eps gives the coupled cutoff field.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import clusters as _clusters
from .lattice import Rectangle, site_mask, unit_box


@dataclass(frozen=True)
class TestFunction:
    """A test function evaluated at embedded site positions.

    Either the indicator of a region or a grid-sampled continuous function
    with compact support (sampled at lattice resolution; the plain site sum
    convention is used, the scale factor absorbs normalization).
    """

    kind: str  # "indicator" | "grid"
    region: object = None
    fn: object = None
    name: str = "f"

    __test__ = False  # not a pytest class, despite the name

    @classmethod
    def indicator(cls, region, name="indicator"):
        return cls(kind="indicator", region=region, name=name)

    @classmethod
    def from_callable(cls, fn, support, name="grid"):
        """Continuous f with compact support, grid-sampled at the sites."""
        return cls(kind="grid", region=support, fn=fn, name=name)

    def values(self, geom) -> np.ndarray:
        inside = self.region.contains(geom.positions)
        if self.kind == "indicator":
            return inside.astype(float)
        vals = np.where(inside, self.fn(geom.positions), 0.0)
        return vals.astype(float)


def box_function(side: float = 1.0) -> TestFunction:
    return TestFunction.indicator(Rectangle(0.0, 0.0, side, side), name=f"box{side:g}")


@dataclass
class ScaleFactorEstimate:
    """Normalization for the block magnetization, with its resampling error.

    inv_sq is the estimated mean of sum_i (restricted cluster size)^2 over
    the box; scale_factor = inv_sq ** -0.5 makes the block second moment one.
    """

    scale_factor: float
    inv_sq: float
    stderr: float  # batch-means error of inv_sq
    box: object
    n_samples: int
    ensemble_id: str = ""

    @property
    def scale_factor_stderr(self) -> float:
        # delta method through theta = S^(-1/2)
        return 0.5 * self.inv_sq ** (-1.5) * self.stderr

    @classmethod
    def from_inv_sq_samples(cls, samples, box, n_blocks=16, ensemble_id=""):
        s = np.asarray(samples, dtype=float)
        if len(s) == 0:
            raise ValueError("empty ensemble")
        inv_sq = float(math.fsum(s) / len(s))
        return cls(
            scale_factor=inv_sq ** -0.5,
            inv_sq=inv_sq,
            stderr=batch_stderr(s, n_blocks),
            box=box,
            n_samples=len(s),
            ensemble_id=ensemble_id,
        )


def batch_stderr(x, n_blocks: int = 16) -> float:
    """Batch-means standard error for a (possibly autocorrelated) sample stream."""
    x = np.asarray(x, dtype=float)
    n_blocks = min(n_blocks, len(x))
    if n_blocks < 2:
        return float("nan")
    blen = len(x) // n_blocks
    bm = x[: n_blocks * blen].reshape(n_blocks, blen).mean(axis=1)
    return float(bm.std(ddof=1) / math.sqrt(n_blocks))


def restricted_sq_sum(dec, geom, box) -> float:
    """sum_i |C_i restricted to box|^2 for one configuration."""
    counts = _clusters.restricted_size_counts(dec, geom, box)
    return float(np.dot(counts, counts))


def estimate_theta(geom, ensemble, box=None, n_blocks: int = 16,
                   ensemble_id: str = "") -> ScaleFactorEstimate:
    """Estimate the field scale factor from a stream of decompositions.

    The ensemble must be sampled at criticality with zero field, with the
    box inside the torus bulk.
    """
    box = box if box is not None else unit_box()
    samples = [restricted_sq_sum(dec, geom, box) for dec in ensemble]
    return ScaleFactorEstimate.from_inv_sq_samples(samples, box, n_blocks, ensemble_id)


def field_value_from_spins(geom, spins, scale_factor: float, f: TestFunction) -> float:
    """Phi(f) = scale_factor * sum_x f(a x) S_x  (q = 2 spins)."""
    if scale_factor <= 0:
        raise ValueError("scale_factor must be positive")
    vals = f.values(geom)
    return float(scale_factor * np.dot(vals, spins.spins().astype(float)))


@dataclass
class PerClusterTerm:
    cluster_index: int
    sign: int
    mass: float  # mu_i(f): scale_factor times the f-weighted site count
    loop_diameter: float


@dataclass
class FieldSample:
    """One field realization with its coupled cutoff values.

    cutoff_values[eps] keeps only clusters whose loop diameter exceeds eps,
    with the same signs, so differences measure the small-cluster remainder;
    cutoff_values[0.0] is the full value exactly.
    """

    value: float
    cutoff_values: dict
    per_cluster: list = field(default_factory=list)

    def cut_sq_mass(self, eps: float) -> float:
        """Conditional E|value - cutoff(eps)|^2 over signs: sum of cut masses squared."""
        return math.fsum(t.mass**2 for t in self.per_cluster if t.loop_diameter <= eps)


def cluster_masses(dec, geom, scale_factor: float, f: TestFunction) -> np.ndarray:
    """Per-cluster area-measure mass mu_i(f) = scale_factor * sum_{x in C_i} f(a x)."""
    vals = f.values(geom)
    return scale_factor * np.bincount(dec.labels, weights=vals, minlength=dec.n_clusters)


def loop_diameters(dec, geom, which=None, exact_loops: bool = False) -> np.ndarray:
    """Loop diameter per cluster: traced exactly, or cluster diameter + a.

    The proxy sits inside the coherence bracket (cluster diameter <= loop
    diameter <= cluster diameter + 2a) and leaves scaling fits unchanged;
    exact tracing is for validation.  Wrapping torus clusters report the
    torus extent either way.
    """
    if exact_loops:
        out = np.empty(dec.n_clusters)
        idx = range(dec.n_clusters) if which is None else np.flatnonzero(which)
        for i in idx:
            loop = _clusters.trace_outer_loop(dec, geom, i)
            out[i] = geom.extent if loop is None else loop.diameter
        return out
    diam = dec.diameters(which=which)
    wrap_extra = np.where(dec.wraps, 0.0, geom.spacing) if geom.is_torus else geom.spacing
    return diam + wrap_extra


def field_sample_from_clusters(dec, geom, scale_factor: float, f: TestFunction,
                               epsilons=(), rng=None,
                               exact_loops: bool = False) -> FieldSample:
    """Draw signs per cluster and evaluate the field and all coupled cutoffs.

    Clusters with zero mass contribute nothing (and their loops are never
    traced).  epsilons must be sorted ascending.
    """
    epsilons = list(epsilons)
    if any(b < a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be sorted ascending")
    masses = cluster_masses(dec, geom, scale_factor, f)
    live = masses != 0.0
    idx = np.flatnonzero(live)
    masses = masses[live]
    if epsilons:
        diams = loop_diameters(dec, geom, which=live, exact_loops=exact_loops)[live]
    else:
        diams = np.full(len(idx), np.inf)
    signs = 1 - 2 * rng.integers(0, 2, size=len(idx)) if rng is not None else np.ones(len(idx), dtype=np.int64)
    value = float(np.dot(signs.astype(float), masses))
    cutoffs = {0.0: value}
    for eps in epsilons:
        keep = diams > eps
        cutoffs[float(eps)] = float(np.dot(signs[keep].astype(float), masses[keep]))
    per = [PerClusterTerm(int(i), int(s), float(m), float(d))
           for i, s, m, d in zip(idx, signs, masses, diams)]
    return FieldSample(value=value, cutoff_values=cutoffs, per_cluster=per)


def coupled_cutoff_gap_sq(dec, geom, scale_factor: float, f: TestFunction, epsilons,
                          exact_loops: bool = False) -> dict:
    """Per-configuration E|Phi - Phi_eps|^2 with coupled signs, for each eps.

    Signs are independent across clusters, so the conditional mean square of
    the coupled difference is the sum of squared masses of the cut clusters;
    averaging this over configurations estimates the L2 cutoff distance
    without sign noise.
    """
    masses = cluster_masses(dec, geom, scale_factor, f)
    live = masses != 0.0
    m = masses[live]
    d = loop_diameters(dec, geom, which=live, exact_loops=exact_loops)[live]
    return {float(eps): float(np.dot(m[d <= eps], m[d <= eps])) for eps in epsilons}


def block_magnetization(geom, state, scale_factor: float, box=None, rng=None) -> float:
    """The block magnetization: the field paired with the unit-box indicator.

    `state` may be a SpinConfiguration (direct spin sum) or a
    ClusterDecomposition (cluster masses with signs drawn from rng).
    """
    f = TestFunction.indicator(box if box is not None else unit_box(), name="block")
    if hasattr(state, "color"):
        return field_value_from_spins(geom, state, scale_factor, f)
    if rng is None:
        raise ValueError("cluster path needs an rng for the signs")
    return field_sample_from_clusters(state, geom, scale_factor, f, rng=rng).value


def potts_color_field(dec, geom, scale_factor: float, f: TestFunction, q: int,
                      rng) -> np.ndarray:
    """Color fields (Phi_1 .. Phi_q): per-cluster color weights on area masses.

    Each cluster takes one uniform color c; the weight toward color k is +1
    when c = k and -1/(q-1) otherwise, so the weights of one cluster sum to
    zero.  In floating point that constraint can leave a few-ulp residual
    (1/(q-1) is inexact for q = 4); when it does, the last component is
    replaced by the exact negation of the running sum of the others, so the
    color sum vanishes identically on every sample.  For q = 2 the residual
    is exactly zero and the components are untouched, which keeps the
    reduction to the two-valued field bitwise.
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    masses = cluster_masses(dec, geom, scale_factor, f)
    live = masses != 0.0
    masses = masses[live]
    colors = rng.integers(0, q, size=len(masses))
    out = np.empty(q)
    off = -1.0 / (q - 1)
    for k in range(q):
        eta = np.where(colors == k, 1.0, off)
        out[k] = float(np.dot(eta, masses))
    residual = float(out.sum())
    if residual != 0.0:
        scale = max(1.0, float(np.abs(out).max()))
        if abs(residual) > 1e-9 * scale:
            raise AssertionError(f"color-sum residual {residual} too large")
        out[q - 1] = -float(out[: q - 1].sum())
    return out


@dataclass
class CharacteristicFunctional:
    """Empirical characteristic function of the field law on a t grid.

    The real part is the estimator of interest; the imaginary part vanishes
    by global spin-flip symmetry and is reported as a symmetry diagnostic.
    """

    t: np.ndarray
    real: np.ndarray
    real_stderr: np.ndarray
    imag: np.ndarray
    imag_stderr: np.ndarray

    def rows(self):
        return list(zip(self.t, self.real, self.real_stderr, self.imag, self.imag_stderr))


def characteristic_functional(samples, t_grid, n_blocks: int = 16) -> CharacteristicFunctional:
    """Estimate E cos(t Phi) (and the sin part) over a grid of t values."""
    x = np.asarray(samples, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    re = np.empty(len(t))
    re_err = np.empty(len(t))
    im = np.empty(len(t))
    im_err = np.empty(len(t))
    for k, tk in enumerate(t):
        c, s = np.cos(tk * x), np.sin(tk * x)
        re[k], im[k] = c.mean(), s.mean()
        re_err[k], im_err[k] = batch_stderr(c, n_blocks), batch_stderr(s, n_blocks)
    return CharacteristicFunctional(t, re, re_err, im, im_err)
