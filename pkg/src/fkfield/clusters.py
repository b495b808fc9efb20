"""FK-cluster decomposition and cluster geometry.

A bond configuration is decomposed into clusters (maximal sets of sites
joined by open bonds, plus the ghost vertex when present).  On the torus,
non-wrapping clusters are unwrapped to a consistent planar frame so that
Euclidean sizes are meaningful; wrapping clusters are flagged and take the
torus extent as their diameter.

Boundary loops between a cluster and its complement live on the medial
lattice (sites at bond midpoints).  The outer loop of a cluster is traced by
tiling the cluster with per-site diamonds and per-open-bond triangle pairs,
cancelling shared directed edges, and stitching the remaining edges into
cycles with a leftmost-turn rule (so loops may touch but never cross).
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from .lattice import site_mask

TYPE1_SITES_INSIDE = "type1_sites_inside"
TYPE2_SITES_OUTSIDE = "type2_sites_outside"


def _components(n_nodes: int, edges: np.ndarray) -> np.ndarray:
    """Connected-component labels for an undirected graph on n_nodes."""
    if len(edges) == 0:
        return np.arange(n_nodes, dtype=np.int64)
    if n_nodes <= 64:
        # sparse-matrix construction dominates on desk-scale graphs
        parent = list(range(n_nodes))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for u, v in edges.tolist():
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[rv] = ru
        return np.array([find(i) for i in range(n_nodes)], dtype=np.int64)
    g = coo_matrix(
        (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])),
        shape=(n_nodes, n_nodes),
    )
    _, labels = connected_components(g, directed=False)
    return labels


def _first_occurrence_order(raw_labels: np.ndarray, n_sites: int):
    """Remap raw labels so cluster i has the i-th smallest leading site index."""
    n_raw = int(raw_labels.max()) + 1 if len(raw_labels) else 0
    first = np.full(n_raw, n_sites, dtype=np.int64)
    np.minimum.at(first, raw_labels[:n_sites], np.arange(n_sites))
    site_raw = np.flatnonzero(first < n_sites)
    order = site_raw[np.argsort(first[site_raw], kind="stable")]
    rank = np.full(n_raw, -1, dtype=np.int64)
    rank[order] = np.arange(len(order))
    return rank


def label_sites(geom, opened: np.ndarray, ghost_open: np.ndarray | None = None):
    """Cluster labels per site in deterministic (smallest-site-first) order.

    Returns (labels, n_clusters, ghost_label); ghost_label is the label of
    the cluster connected to the ghost vertex, or -1 when there is none.
    """
    n = geom.n_sites
    edges = geom.bond_endpoints[opened]
    has_ghost = ghost_open is not None and bool(ghost_open.any())
    if has_ghost:
        gs = np.flatnonzero(ghost_open)
        ghost_edges = np.column_stack([gs, np.full(len(gs), n, dtype=gs.dtype)])
        raw = _components(n + 1, np.concatenate([edges, ghost_edges]))
    else:
        raw = _components(n, edges)
    rank = _first_occurrence_order(raw, n)
    labels = rank[raw[:n]]
    n_clusters = int(labels.max()) + 1
    ghost_label = int(rank[raw[n]]) if has_ghost else -1
    return labels, n_clusters, ghost_label


def point_set_diameter(points: np.ndarray) -> float:
    """Largest pairwise Euclidean distance in a finite planar point set."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= 1:
        return 0.0
    if n == 2:
        return float(np.hypot(*(pts[1] - pts[0])))
    if n > 48:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            # Degenerate (collinear) set: extremes along axes and diagonals
            # contain the endpoints of any line of lattice points.
            keys = [pts[:, 0], pts[:, 1], pts[:, 0] + pts[:, 1], pts[:, 0] - pts[:, 1]]
            idx = {int(np.argmin(k)) for k in keys} | {int(np.argmax(k)) for k in keys}
            pts = pts[sorted(idx)]
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d * d).sum(axis=2).max()))


class ClusterDecomposition:
    """Partition of sites into FK clusters, with lazy cluster geometry.

    Cluster i is the cluster whose smallest site index is i-th smallest;
    sizes always sum to the site count.  Geometry (unwrapped coordinates,
    bounding boxes, Euclidean diameters, wrap flags) is computed on first
    use since most observables only need labels and sizes.
    """

    def __init__(self, geom, bonds, labels, n_clusters, ghost_label):
        self.geom = geom
        self.bonds = bonds
        self.labels = labels
        self.n_clusters = n_clusters
        self.ghost_label = ghost_label
        self.sizes = np.bincount(labels, minlength=n_clusters)
        self._order = None
        self._starts = None
        self._unwrapped = None
        self._wraps = None
        self._diameters = None
        self._bboxes = None

    @property
    def ghost_connected(self) -> np.ndarray:
        flags = np.zeros(self.n_clusters, dtype=bool)
        if self.ghost_label >= 0:
            flags[self.ghost_label] = True
        return flags

    def _site_order(self):
        if self._order is None:
            self._order = np.argsort(self.labels, kind="stable")
            self._starts = np.concatenate([[0], np.cumsum(self.sizes)])
        return self._order, self._starts

    def cluster_sites(self, i: int) -> np.ndarray:
        order, starts = self._site_order()
        return order[starts[i]:starts[i + 1]]

    def iter_clusters(self):
        for i in range(self.n_clusters):
            yield i, self.cluster_sites(i)

    # -- torus unwrapping ---------------------------------------------------

    def _unwrap(self):
        if self._unwrapped is not None:
            return
        geom = self.geom
        pos = geom.positions
        self._wraps = np.zeros(self.n_clusters, dtype=bool)
        if not geom.is_torus:
            self._unwrapped = pos
            return
        opened = self.bonds.open
        wrap = _torus_wrap_mask(geom)
        planar = _components(geom.n_sites, geom.bond_endpoints[opened & ~wrap])
        n_pieces = int(planar.max()) + 1
        parent = np.arange(n_pieces)
        shift = np.zeros((n_pieces, 2), dtype=np.int64)  # lattice-unit offset to parent

        def find(i):
            root, acc = i, np.zeros(2, dtype=np.int64)
            while parent[root] != root:
                acc += shift[root]
                root = parent[root]
            # path compression with offset accumulation
            node, acc2 = i, acc.copy()
            while parent[node] != node:
                nxt = parent[node]
                step = shift[node].copy()
                parent[node] = root
                shift[node] = acc2
                acc2 = acc2 - step
                node = nxt
            return root, acc

        L = geom.side_sites
        coords = np.rint(pos / geom.spacing).astype(np.int64)
        for b in np.flatnonzero(opened & wrap):
            u, v = geom.bond_endpoints[b]
            step = np.array([1, 0] if b < geom.n_sites else [0, 1], dtype=np.int64)
            delta = coords[u] + step - coords[v]
            ru, ou = find(planar[u])
            rv, ov = find(planar[v])
            if ru == rv:
                if not np.array_equal(ov - ou, -delta):
                    self._wraps[self.labels[u]] = True
            else:
                parent[rv] = ru
                shift[rv] = ou - ov - delta
        # total offset of each piece relative to its root frame
        total = np.zeros((n_pieces, 2), dtype=np.int64)
        for i in range(n_pieces):
            _, off = find(i)
            total[i] = off
        self._unwrapped = pos - geom.spacing * total[planar].astype(float)

    @property
    def unwrapped_positions(self) -> np.ndarray:
        """Site positions in a per-cluster consistent planar frame."""
        self._unwrap()
        return self._unwrapped

    @property
    def wraps(self) -> np.ndarray:
        """Per-cluster flag: cluster winds around the torus (no outer loop exists)."""
        self._unwrap()
        return self._wraps

    # -- cluster geometry ---------------------------------------------------

    def bounding_boxes(self) -> np.ndarray:
        """(n_clusters, 4) array of (xmin, ymin, xmax, ymax) in unwrapped coordinates."""
        if self._bboxes is None:
            up = self.unwrapped_positions
            lo = np.full((self.n_clusters, 2), np.inf)
            hi = np.full((self.n_clusters, 2), -np.inf)
            np.minimum.at(lo, self.labels, up)
            np.maximum.at(hi, self.labels, up)
            self._bboxes = np.concatenate([lo, hi], axis=1)
        return self._bboxes

    def diameters(self, which: np.ndarray | None = None) -> np.ndarray:
        """Exact Euclidean cluster diameters in continuum units.

        Wrapping torus clusters take the torus extent.  When `which` (a
        boolean mask over clusters) is given, only those entries are
        guaranteed to be computed.
        """
        if self._diameters is None:
            self._diameters = np.full(self.n_clusters, np.nan)
        need = np.isnan(self._diameters)
        if which is not None:
            need &= which
        if not need.any():
            return self._diameters
        a = self.geom.spacing
        up = self.unwrapped_positions
        wraps = self.wraps
        bbox = self.bounding_boxes()
        span = np.hypot(bbox[:, 2] - bbox[:, 0], bbox[:, 3] - bbox[:, 1])
        for i in np.flatnonzero(need):
            if wraps[i]:
                self._diameters[i] = self.geom.extent
            elif self.sizes[i] == 1:
                self._diameters[i] = 0.0
            elif self.sizes[i] == 2 or span[i] <= a * 1.0001:
                # two sites, or all sites within one lattice step
                self._diameters[i] = span[i]
            else:
                self._diameters[i] = point_set_diameter(up[self.cluster_sites(i)])
        return self._diameters


def decompose(geom, bonds) -> ClusterDecomposition:
    """Decompose a bond configuration into clusters (deterministic order)."""
    labels, n_clusters, ghost_label = label_sites(geom, bonds.open, bonds.ghost_open)
    return ClusterDecomposition(geom, bonds, labels, n_clusters, ghost_label)


def _torus_wrap_mask(geom) -> np.ndarray:
    """Bonds that cross the periodic seam (torus geometries only)."""
    L = geom.side_sites
    k = np.arange(geom.n_sites)
    x, y = k % L, k // L
    return np.concatenate([x == L - 1, y == L - 1])


def restricted_size(dec: ClusterDecomposition, geom, region) -> dict:
    """Sites of each cluster inside the region; clusters with zero count omitted.

    The restriction of a cluster to a region need not be connected; no
    connectivity filtering is applied.
    """
    counts = restricted_size_counts(dec, geom, region)
    return {int(i): int(counts[i]) for i in np.flatnonzero(counts)}


def restricted_size_counts(dec: ClusterDecomposition, geom, region) -> np.ndarray:
    """Array form of restricted_size (zero entries kept), for hot loops."""
    mask = site_mask(geom, region)
    return np.bincount(dec.labels[mask], minlength=dec.n_clusters)


def count_crossing_clusters(dec: ClusterDecomposition, geom, z, r1: float, r2: float) -> int:
    """Number of distinct clusters with sites both within r1 of z and beyond r2 of z."""
    if not 0 < r1 < r2:
        raise ValueError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    d = geom.distances_from(z)
    inner = np.unique(dec.labels[d < r1])
    outer = np.zeros(dec.n_clusters, dtype=bool)
    outer[dec.labels[d > r2]] = True
    return int(outer[inner].sum())


# ---------------------------------------------------------------------------
# Medial-lattice loops
# ---------------------------------------------------------------------------


@dataclass
class Loop:
    """A closed interface loop on the medial lattice.

    Vertices are medial sites (bond midpoints) in continuum units, listed
    in traversal order without repeating the start; length is the number of
    medial edges.  Orientation is counterclockwise with the cluster on the
    left for outer (type-1) loops.
    """

    vertices: np.ndarray
    length: int
    diameter: float
    kind: str
    cluster_index: int

    def closed_polyline(self) -> np.ndarray:
        return np.concatenate([self.vertices, self.vertices[:1]])


def _cycle_area2(verts) -> float:
    x = np.array([v[0] for v in verts], dtype=float)
    y = np.array([v[1] for v in verts], dtype=float)
    return float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def trace_outer_loop(dec: ClusterDecomposition, geom, cluster_index: int) -> Loop | None:
    """Trace the outer (type-1) loop of one cluster on the medial lattice.

    Requires a free boundary or a torus cluster that does not wrap; wrapping
    clusters have no outer loop and yield None (their diameter is reported
    as the torus extent by ClusterDecomposition.diameters).
    """
    if geom.is_torus and dec.wraps[cluster_index]:
        return None
    sites = dec.cluster_sites(cluster_index)
    a = geom.spacing
    coords = np.rint(dec.unwrapped_positions[sites] / a).astype(np.int64)
    coord_of = {(int(cx), int(cy)): int(s) for (cx, cy), s in zip(coords, sites)}

    # open site pairs within this cluster (parallel torus bonds merged)
    u_all, v_all = geom.bond_endpoints[:, 0], geom.bond_endpoints[:, 1]
    in_this = dec.labels == cluster_index
    rel = dec.bonds.open & in_this[u_all] & in_this[v_all]
    open_pairs = {(min(int(bu), int(bv)), max(int(bu), int(bv)))
                  for bu, bv in geom.bond_endpoints[rel]}

    def bond_open(c1, c2):
        s1, s2 = coord_of[c1], coord_of[c2]
        return (min(s1, s2), max(s1, s2)) in open_pairs

    # Cover the cluster with half-cell triangles on the doubled grid: every
    # unit cell splits along its medial diagonal into a triangle at the
    # site-parity corner and one at the dual-parity corner.  A site diamond
    # is its four surrounding site-triangles; an open bond fills its four
    # cells completely.  The set collapses overlaps between adjacent bonds.
    tris = set()
    for cx, cy in coord_of:
        X, Y = 2 * cx, 2 * cy
        for cell in ((X - 1, Y - 1), (X, Y - 1), (X - 1, Y), (X, Y)):
            tris.add((cell, "site"))
        if (cx + 1, cy) in coord_of and bond_open((cx, cy), (cx + 1, cy)):
            for cell in ((X, Y - 1), (X + 1, Y - 1), (X, Y), (X + 1, Y)):
                tris.add((cell, "site"))
                tris.add((cell, "dual"))
        if (cx, cy + 1) in coord_of and bond_open((cx, cy), (cx, cy + 1)):
            for cell in ((X - 1, Y), (X, Y), (X - 1, Y + 1), (X, Y + 1)):
                tris.add((cell, "site"))
                tris.add((cell, "dual"))

    edges = set()

    def add(u, v):
        # cancel against the reversed edge if present (shared tile border)
        if (v, u) in edges:
            edges.discard((v, u))
        else:
            edges.add((u, v))

    for (i, j), kind in tris:
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        medial = [c for c in corners if (c[0] + c[1]) % 2 == 1]
        want = 0 if kind == "site" else 1  # site corners have both coords even
        (apex,) = [c for c in corners if c[0] % 2 == c[1] % 2 and c[0] % 2 == want]
        tri = [medial[0], medial[1], apex]
        area2 = _cycle_area2(tri)
        if area2 < 0:
            tri.reverse()
        add(tri[0], tri[1])
        add(tri[1], tri[2])
        add(tri[2], tri[0])

    # stitch remaining directed edges into non-crossing cycles (leftmost turn)
    out_map = {}
    for (u, v) in sorted(edges):
        out_map.setdefault(u, []).append(v)
    cycles = []
    while out_map:
        start = next(iter(out_map))
        u = start
        v = out_map[u][0]
        _take(out_map, u, v)
        cycle = [u]
        while v != start:
            cycle.append(v)
            candidates = out_map[v]
            if len(candidates) == 1:
                w = candidates[0]
            else:
                w = _leftmost_turn(u, v, candidates)
            _take(out_map, v, w)
            u, v = v, w
        cycles.append(cycle)

    outer = max(cycles, key=_cycle_area2)
    outer = _merge_collinear_dual_points(outer)
    verts = np.array(outer, dtype=float) * (a / 2.0)
    return Loop(
        vertices=verts,
        length=len(outer),
        diameter=point_set_diameter(verts),
        kind=TYPE1_SITES_INSIDE,
        cluster_index=cluster_index,
    )


def _merge_collinear_dual_points(cycle):
    """Drop dual-parity (odd, odd) pass-through points on straight runs.

    Loop vertices are medial sites; a straight strand alongside an open bond
    crosses the dual point between cell corners without turning, so such
    points are bookkeeping only.  Dual points where the boundary genuinely
    turns (concave cluster corners) are kept.
    """
    out = []
    n = len(cycle)
    for k, v in enumerate(cycle):
        if v[0] % 2 == 1 and v[1] % 2 == 1:
            p, q = cycle[k - 1], cycle[(k + 1) % n]
            if (v[0] - p[0]) * (q[1] - v[1]) == (v[1] - p[1]) * (q[0] - v[0]):
                continue
        out.append(v)
    return out


def _take(out_map, u, v):
    lst = out_map[u]
    lst.remove(v)
    if not lst:
        del out_map[u]


def _leftmost_turn(u, v, candidates):
    """At a pinch vertex, continue with the sharpest left turn (never crosses)."""
    din = (v[0] - u[0], v[1] - u[1])
    best, best_key = None, None
    for w in candidates:
        dout = (w[0] - v[0], w[1] - v[1])
        cross = din[0] * dout[1] - din[1] * dout[0]
        dot = din[0] * dout[0] + din[1] * dout[1]
        key = np.arctan2(cross, dot)  # turn angle in (-pi, pi]
        if best_key is None or key > best_key:
            best, best_key = w, key
    return best


