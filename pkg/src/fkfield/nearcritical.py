"""Near-critical model: a vanishing external field via the ghost spin.

The external field enters as an extra ghost site bonded to every lattice
site (within an optional window) with probability 1 - exp(-2 beta_c H); the
ghost cluster's color is forced to the field direction.  The field strength
is parametrized by the reduced field h through H = h * scale_factor / beta_c,
so h = O(1) probes the regime where the correlation length is a finite
fraction of the observation box.

At h = 0 the model reduces bitwise to the critical sampler (no ghost site,
identical random streams for identical seeds).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import clusters as _clusters
from .field import batch_stderr, box_function, field_value_from_spins
from .lattice import site_mask
from .sampler import CRITICAL_BETA, ChainConfig, ModelParams, sample_ensemble
from .stats import TwoPointTable, fit_exponential, truncated_two_point


@dataclass
class GhostModel:
    """Critical coupling plus a renormalized external field h >= 0.

    The lattice field H and the ghost bond probability are always derived
    from (h, scale_factor), never stored independently.  window restricts
    where the field acts (None applies it to the whole lattice).
    """

    geom: object
    h: float
    scale_factor: float
    window: object = None

    def __post_init__(self):
        if self.h < 0:
            raise ValueError(f"h must be >= 0, got {self.h}")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")

    @property
    def lattice_field(self) -> float:
        return self.h * self.scale_factor / CRITICAL_BETA

    @property
    def ghost_p(self) -> float:
        # 1 - exp(-2 beta_c H) with H = h * scale / beta_c
        return 1.0 - math.exp(-2.0 * self.h * self.scale_factor)

    @property
    def params(self) -> ModelParams:
        return ModelParams.critical().with_ghost(self.ghost_p)

    def ghost_mask(self):
        if self.window is None:
            return None
        return site_mask(self.geom, self.window)

    @classmethod
    def from_lattice_field(cls, geom, H, scale_factor, window=None) -> "GhostModel":
        return cls(geom=geom, h=H * CRITICAL_BETA / scale_factor,
                   scale_factor=scale_factor, window=window)


def sample_ghost_ensemble(model: GhostModel, chain: ChainConfig, chain_index: int = 0):
    """Stream of coupled (bonds, spins) under the ghost-field dynamics.

    With h = 0 there is no ghost site at all and the stream equals the
    critical zero-field stream bit for bit for matched seeds.
    """
    return sample_ensemble(model.geom, model.params, chain, chain_index=chain_index,
                           ghost_mask=model.ghost_mask(), forced_color=1)


@dataclass
class MagnetizationPoint:
    h: float
    lattice_field: float
    ghost_p: float
    mean_spin: float
    stderr: float


def magnetization_curve(geom, scale_factor, h_grid, chain: ChainConfig,
                        window=None, n_blocks: int = 16):
    """Volume-averaged magnetization under each ghost model on the h grid.

    Each grid point runs its own chain (chain_index = grid position), so
    points are independent and can be computed concurrently.
    """
    rows = []
    for i, h in enumerate(h_grid):
        model = GhostModel(geom=geom, h=float(h), scale_factor=scale_factor, window=window)
        mask = model.ghost_mask()
        denom = int(mask.sum()) if mask is not None else geom.n_sites
        vals = []
        for _, spins in sample_ghost_ensemble(model, chain, chain_index=i):
            s = spins.spins()
            vals.append(float((s[mask].sum() if mask is not None else s.sum()) / denom))
        vals = np.asarray(vals)
        rows.append(MagnetizationPoint(
            h=float(h),
            lattice_field=model.lattice_field,
            ghost_p=model.ghost_p,
            mean_spin=float(vals.mean()),
            stderr=batch_stderr(vals, n_blocks),
        ))
    return rows


@dataclass
class TruncatedCorrelation:
    """Same-cluster-avoiding-the-ghost frequency with its exponential mass fit."""

    table: TwoPointTable
    mass: float
    mass_stderr: float
    r_squared: float
    correlation_length: float


def truncated_correlation(model: GhostModel, chain: ChainConfig, r_values,
                          chain_index: int = 0, n_blocks: int = 16) -> TruncatedCorrelation:
    """Estimate P(x ~ y, cluster avoids ghost) at separations r and fit the mass.

    The mass fit needs h > 0; at h = 0 the table is still returned (it is
    the critical two-point function) with the exponential fit attached for
    diagnostic comparison only.
    """
    geom = model.geom

    def stream():
        for bonds, _ in sample_ghost_ensemble(model, chain, chain_index=chain_index):
            yield _clusters.decompose(geom, bonds)

    table = truncated_two_point(geom, stream(), r_values, n_blocks=n_blocks)
    pts = table.points()
    if len(pts) < 3:
        # correlation hit zero within resolution: decay faster than measurable
        return TruncatedCorrelation(table=table, mass=math.inf, mass_stderr=math.nan,
                                    r_squared=math.nan, correlation_length=0.0)
    fit = fit_exponential(pts)
    return TruncatedCorrelation(
        table=table,
        mass=fit.rate,
        mass_stderr=fit.stderr,
        r_squared=fit.r_squared,
        correlation_length=math.inf if fit.rate <= 0 else 1.0 / fit.rate,
    )


@dataclass
class FreeEnergyEstimate:
    """Thermodynamic-integration estimate of the field free-energy density.

    mean_field[t] is the ghost-ensemble average of the block field at
    reduced field t; f_hat[t] integrates it from 0 (trapezoid) divided by
    the box area, so f_hat(0) = 0 and f_hat is convex increasing for h >= 0.
    """

    h_grid: np.ndarray
    mean_field: np.ndarray
    mean_field_stderr: np.ndarray
    f_hat: np.ndarray
    f_hat_stderr: np.ndarray
    box_side: float

    def value_at(self, h: float) -> float:
        k = int(np.argmin(np.abs(self.h_grid - h)))
        if not math.isclose(self.h_grid[k], h, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"h={h} not on the integration grid")
        return float(self.f_hat[k])


def geometric_grid(h: float, n: int = 9, ratio: float = 2.0) -> np.ndarray:
    """A [0, h] grid with geometric spacing toward 0 (n points, 0 included)."""
    if h <= 0:
        raise ValueError("h must be positive")
    steps = h / ratio ** np.arange(n - 1)
    return np.concatenate([[0.0], np.sort(steps)])


def free_energy_density(geom, scale_factor, h: float, t_grid, chain: ChainConfig,
                        box=None, window=None, n_blocks: int = 16) -> FreeEnergyEstimate:
    """f_hat(h) = (box area)^-1 * integral_0^h E_t[Phi(box)] dt over ghost ensembles.

    d/dt log Z(t) equals the mean block field, so each grid point is an
    ordinary ensemble average; the grid must start at 0 and the raw per-t
    means are returned so the integration can be redone offline.
    """
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if len(t_grid) < 2 or t_grid[0] != 0.0:
        raise ValueError("t_grid must start at 0")
    if not math.isclose(t_grid[-1], h, rel_tol=1e-9):
        raise ValueError("t_grid must end at h")
    f = box_function(1.0) if box is None else box
    area = _box_area(f.region)
    means = np.zeros(len(t_grid))
    errs = np.zeros(len(t_grid))
    for i, t in enumerate(t_grid):
        if t == 0.0:
            continue  # E_0[Phi] = 0 by symmetry, exactly
        model = GhostModel(geom=geom, h=t, scale_factor=scale_factor, window=window)
        vals = np.array([
            field_value_from_spins(geom, spins, scale_factor, f)
            for _, spins in sample_ghost_ensemble(model, chain, chain_index=i)
        ])
        means[i] = vals.mean()
        errs[i] = batch_stderr(vals, n_blocks)
    f_hat = np.zeros(len(t_grid))
    f_err_sq = np.zeros(len(t_grid))
    for i in range(1, len(t_grid)):
        dt = t_grid[i] - t_grid[i - 1]
        f_hat[i] = f_hat[i - 1] + 0.5 * dt * (means[i] + means[i - 1])
        f_err_sq[i] = f_err_sq[i - 1] + (0.5 * dt) ** 2 * (errs[i] ** 2 + errs[i - 1] ** 2)
    return FreeEnergyEstimate(
        h_grid=t_grid,
        mean_field=means,
        mean_field_stderr=errs,
        f_hat=f_hat / area,
        f_hat_stderr=np.sqrt(f_err_sq) / area,
        box_side=math.sqrt(area),
    )


def _box_area(region) -> float:
    return (region.x1 - region.x0) * (region.y1 - region.y0)
