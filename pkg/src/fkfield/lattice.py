"""Square-lattice geometry: sites, bonds, boundary conditions, continuum embedding.

Sites of an L x L lattice are indexed row-major: site k sits at column
k % L, row k // L, and is embedded at position (a * col, a * row) where a
is the lattice spacing in continuum units.  Bonds are enumerated in a fixed
order (all horizontal bonds row-major, then all vertical bonds row-major)
so bond indices are stable across runs for a fixed (L, boundary).

Geometry objects are immutable after construction and safe to share
between workers.
"""

from dataclasses import dataclass, field
from typing import Union

import numpy as np

TORUS = "torus"
FREE = "free"


@dataclass
class LatticeGeometry:
    """An L x L square lattice with torus or free boundary conditions."""

    side_sites: int
    boundary: str
    spacing: float
    n_sites: int = field(init=False)
    n_bonds: int = field(init=False)
    bond_endpoints: np.ndarray = field(init=False, repr=False)  # (n_bonds, 2) int32
    positions: np.ndarray = field(init=False, repr=False)  # (n_sites, 2) float

    def __post_init__(self):
        L = self.side_sites
        if L < 1:
            raise ValueError(f"side_sites must be >= 1, got {L}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.boundary not in (TORUS, FREE):
            raise ValueError(f"boundary must be 'torus' or 'free', got {self.boundary!r}")
        self.n_sites = L * L
        k = np.arange(self.n_sites, dtype=np.int64)
        x, y = k % L, k // L
        self.positions = np.column_stack([x, y]).astype(float) * self.spacing
        if self.boundary == TORUS:
            right = y * L + (x + 1) % L
            up = ((y + 1) % L) * L + x
            h = np.column_stack([k, right])
            v = np.column_stack([k, up])
        else:
            hmask = x < L - 1
            vmask = y < L - 1
            h = np.column_stack([k[hmask], k[hmask] + 1])
            v = np.column_stack([k[vmask], k[vmask] + L])
        self.bond_endpoints = np.concatenate([h, v]).astype(np.int32)
        self.n_bonds = len(self.bond_endpoints)
        self._adjacency = None

    @property
    def is_torus(self) -> bool:
        return self.boundary == TORUS

    @property
    def extent(self) -> float:
        """Linear size of the embedding box (torus circumference, in continuum units)."""
        return self.side_sites * self.spacing

    def site_position(self, k):
        return self.positions[k]

    def adjacency(self):
        """Per-site list of (neighbor site, bond index), built lazily."""
        if self._adjacency is None:
            adj = [[] for _ in range(self.n_sites)]
            for b, (i, j) in enumerate(self.bond_endpoints):
                adj[i].append((int(j), b))
                adj[j].append((int(i), b))
            self._adjacency = adj
        return self._adjacency

    def distances_from(self, z) -> np.ndarray:
        """Euclidean distance of every site from continuum point z.

        On the torus the minimum-image (wrap-around) distance is used.
        """
        d = self.positions - np.asarray(z, dtype=float)
        if self.is_torus:
            ext = self.extent
            d = np.abs(d)
            d = np.minimum(d, ext - d)
        return np.hypot(d[:, 0], d[:, 1])


def build_geometry(side_sites: int, boundary: str, spacing: float) -> LatticeGeometry:
    """Build an L x L lattice; bond enumeration is deterministic for fixed inputs."""
    return LatticeGeometry(side_sites=int(side_sites), boundary=boundary, spacing=float(spacing))


class GraphGeometry:
    """An arbitrary embedded graph exposing the lattice-geometry interface.

    Used for desk-scale oracle fixtures (a 2-site/1-bond graph, a single
    site with a ghost field) that the exhaustive-enumeration checks are
    defined on.  Always free-boundary.
    """

    def __init__(self, positions, bond_endpoints, spacing=1.0):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.bond_endpoints = np.asarray(bond_endpoints, dtype=np.int32).reshape(-1, 2)
        self.spacing = float(spacing)
        self.boundary = FREE
        self.n_sites = len(self.positions)
        self.n_bonds = len(self.bond_endpoints)
        self.side_sites = self.n_sites  # thermalization heuristics only
        self._adjacency = None

    is_torus = False

    @property
    def extent(self) -> float:
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(max(span.max(), self.spacing))

    adjacency = LatticeGeometry.adjacency

    def distances_from(self, z) -> np.ndarray:
        d = self.positions - np.asarray(z, dtype=float)
        return np.hypot(d[:, 0], d[:, 1])


def path_geometry(n_sites: int, spacing: float = 1.0) -> GraphGeometry:
    """A 1 x n path graph: n sites in a row, n-1 bonds."""
    pos = np.column_stack([np.arange(n_sites) * spacing, np.zeros(n_sites)])
    bonds = np.column_stack([np.arange(n_sites - 1), np.arange(1, n_sites)])
    return GraphGeometry(pos, bonds, spacing=spacing)


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned half-open rectangle [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return (
            (p[:, 0] >= self.x0)
            & (p[:, 0] < self.x1)
            & (p[:, 1] >= self.y0)
            & (p[:, 1] < self.y1)
        )


@dataclass(frozen=True)
class Disc:
    """Open disc {z : |z - center| < radius}."""

    center: tuple
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        dx = p[:, 0] - self.center[0]
        dy = p[:, 1] - self.center[1]
        return dx * dx + dy * dy < self.radius * self.radius


@dataclass(frozen=True)
class DiscComplement:
    """Complement of the open disc: {z : |z - center| >= radius}."""

    center: tuple
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        dx = p[:, 0] - self.center[0]
        dy = p[:, 1] - self.center[1]
        return dx * dx + dy * dy >= self.radius * self.radius


Region = Union[Rectangle, Disc, DiscComplement]


def unit_box() -> Rectangle:
    """The standard observation box [0, 1) x [0, 1)."""
    return Rectangle(0.0, 0.0, 1.0, 1.0)


def sites_in_region(geom: LatticeGeometry, region: Region) -> np.ndarray:
    """Indices of sites whose embedded position lies in the region."""
    return np.flatnonzero(region.contains(geom.positions))


def site_mask(geom: LatticeGeometry, region: Region) -> np.ndarray:
    """Boolean membership mask over all sites (fast path for observables)."""
    return region.contains(geom.positions)
