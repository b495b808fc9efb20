"""FK / Potts samplers at and near the critical point.

The generative core is the Edwards-Sokal coupling: given a coloring, open
each agreeing lattice bond independently with probability p = 1 - exp(-2 beta)
(and each site-ghost bond with its own probability when an external field is
present); given the bonds, recolor every cluster uniformly at random, except
the ghost cluster which keeps the forced color.  Alternating the two
conditionals is the Swendsen-Wang sweep.  A Wolff single-cluster update is
provided as an independent cross-check for q = 2 at zero field.

Exhaustive-enumeration oracles over bond space and over spin space are
included for desk-scale graphs; they are deliberately independent of the
samplers and of each other.
"""

import json
import struct
from dataclasses import dataclass, replace
from math import exp, log, sqrt

import numpy as np

from . import clusters as _clusters

CRITICAL_BETA = 0.5 * log(1.0 + sqrt(2.0))
CRITICAL_P = 2.0 - sqrt(2.0)

SWENDSEN_WANG = "swendsen_wang"
WOLFF = "wolff"

RAW_MAGIC = b"FKRAW01\n"


def p_from_beta(beta: float) -> float:
    """Bond probability p = 1 - exp(-2 beta) of the random-cluster coupling."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return 1.0 - exp(-2.0 * beta)


def ghost_p_from_field(H: float) -> float:
    """Site-ghost bond probability 1 - exp(-2 beta_c |H|) at the critical coupling."""
    return 1.0 - exp(-2.0 * CRITICAL_BETA * abs(H))


def critical_beta(q: int = 2) -> float:
    """Self-dual coupling of the q-state random-cluster model on the square lattice."""
    return 0.5 * log(1.0 + sqrt(q))


@dataclass(frozen=True)
class ModelParams:
    """Model parameters; p is always recomputed from beta, never stored."""

    q: int = 2
    beta: float = CRITICAL_BETA
    ghost_p: float = 0.0

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.ghost_p <= 1.0:
            raise ValueError(f"ghost_p must be in [0, 1], got {self.ghost_p}")

    @property
    def p(self) -> float:
        return p_from_beta(self.beta)

    @classmethod
    def critical(cls, q: int = 2) -> "ModelParams":
        return cls(q=q, beta=critical_beta(q))

    def with_ghost(self, ghost_p: float) -> "ModelParams":
        return replace(self, ghost_p=ghost_p)


@dataclass
class BondConfiguration:
    """One FK sample: a bit per lattice bond, plus per-site ghost bits when a field acts."""

    open: np.ndarray  # bool, (n_bonds,)
    ghost_open: np.ndarray | None = None  # bool, (n_sites,) or None

    @property
    def n_open(self) -> int:
        return int(self.open.sum())


@dataclass
class SpinConfiguration:
    """Cluster colors in {1..q}; for q = 2, color 1 maps to spin +1 and color 2 to -1."""

    color: np.ndarray  # int8, (n_sites,)

    def spins(self) -> np.ndarray:
        """Ising +-1 values (q = 2 color convention)."""
        return (3 - 2 * self.color.astype(np.int64))

    @classmethod
    def all_up(cls, n_sites: int) -> "SpinConfiguration":
        return cls(color=np.ones(n_sites, dtype=np.int8))


@dataclass(frozen=True)
class ChainConfig:
    """One Markov chain: seed, schedule and update algorithm.

    For the Wolff algorithm the thermalization/decorrelation counts are in
    single-cluster steps rather than full sweeps.
    """

    seed: int
    thermalization_sweeps: int
    decorrelation_sweeps: int
    n_samples: int
    algorithm: str = SWENDSEN_WANG

    def __post_init__(self):
        if min(self.thermalization_sweeps, self.decorrelation_sweeps, self.n_samples) < 0:
            raise ValueError("chain counts must be >= 0")
        if self.algorithm not in (SWENDSEN_WANG, WOLFF):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Independent counter-based stream for one chain, derived from (seed, chain index)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chain_index,))
    return np.random.Generator(np.random.Philox(ss))


def default_thermalization(geom) -> int:
    """Default thermalization: 10 * L sweeps (overridable, reported in metadata)."""
    return 10 * int(getattr(geom, "side_sites", np.sqrt(geom.n_sites)))


def sw_sweep(geom, params: ModelParams, spins: SpinConfiguration,
             rng: np.random.Generator, ghost_mask: np.ndarray | None = None,
             forced_color: int = 1):
    """One Swendsen-Wang sweep; returns the new coupled (bonds, spins) pair.

    Bonds are opened independently with probability p on color-agreeing edges
    only; if params.ghost_p > 0, site-ghost bonds are opened with probability
    ghost_p on sites carrying the forced color (restricted to ghost_mask when
    given).  Clusters of the resulting bond configuration are recolored
    uniformly over {1..q}, except the ghost cluster which keeps forced_color.
    """
    colors = spins.color
    u = geom.bond_endpoints[:, 0]
    v = geom.bond_endpoints[:, 1]
    agree = colors[u] == colors[v]
    opened = agree & (rng.random(geom.n_bonds) < params.p)

    ghost_open = None
    if params.ghost_p > 0.0:
        ghost_open = (colors == forced_color) & (rng.random(geom.n_sites) < params.ghost_p)
        if ghost_mask is not None:
            ghost_open &= ghost_mask

    labels, n_comp, ghost_label = _clusters.label_sites(geom, opened, ghost_open)
    new_cluster_colors = rng.integers(1, params.q + 1, size=n_comp, dtype=np.int8)
    if ghost_label >= 0:
        new_cluster_colors[ghost_label] = forced_color
    new_spins = SpinConfiguration(color=new_cluster_colors[labels])
    return BondConfiguration(open=opened, ghost_open=ghost_open), new_spins


def wolff_step(geom, params: ModelParams, spins: SpinConfiguration,
               rng: np.random.Generator) -> SpinConfiguration:
    """One Wolff single-cluster flip grown with link probability p from a random seed site.

    Only defined for q = 2 with no external field.
    """
    if params.q != 2:
        raise ValueError("wolff_step requires q = 2")
    if params.ghost_p > 0.0:
        raise ValueError("wolff_step requires zero ghost field")
    colors = spins.color.copy()
    adj = geom.adjacency()
    seed_site = int(rng.integers(geom.n_sites))
    seed_color = colors[seed_site]
    flipped_color = np.int8(3 - seed_color)
    p = params.p
    colors[seed_site] = flipped_color
    stack = [seed_site]
    while stack:
        site = stack.pop()
        for nbr, _bond in adj[site]:
            if colors[nbr] == seed_color and rng.random() < p:
                colors[nbr] = flipped_color
                stack.append(nbr)
    return SpinConfiguration(color=colors)


def sample_ensemble(geom, params: ModelParams, chain: ChainConfig,
                    chain_index: int = 0, ghost_mask: np.ndarray | None = None,
                    forced_color: int = 1, initial: SpinConfiguration | None = None,
                    rng: np.random.Generator | None = None):
    """Yield n_samples coupled (BondConfiguration, SpinConfiguration) snapshots.

    After thermalization_sweeps updates, states are emitted every
    decorrelation_sweeps updates.  A fixed (seed, chain_index, geom, params,
    chain) reproduces the identical stream bit for bit.  Emitted arrays are
    fresh copies, safe to hand to analysis workers.
    """
    if rng is None:
        rng = chain_rng(chain.seed, chain_index)
    spins = initial if initial is not None else SpinConfiguration.all_up(geom.n_sites)

    def update(spins):
        if chain.algorithm == WOLFF:
            return None, wolff_step(geom, params, spins, rng)
        return sw_sweep(geom, params, spins, rng, ghost_mask=ghost_mask,
                        forced_color=forced_color)

    for _ in range(chain.thermalization_sweeps):
        _, spins = update(spins)
    for _ in range(chain.n_samples):
        for _ in range(max(chain.decorrelation_sweeps, 1)):
            bonds, spins = update(spins)
        if bonds is None:
            # Wolff keeps no bond state; draw the coupled bonds given the spins.
            colors = spins.color
            u, v = geom.bond_endpoints[:, 0], geom.bond_endpoints[:, 1]
            agree = colors[u] == colors[v]
            bonds = BondConfiguration(open=agree & (rng.random(geom.n_bonds) < params.p))
        yield bonds, spins


# ---------------------------------------------------------------------------
# Exhaustive oracles (desk-scale graphs only)
# ---------------------------------------------------------------------------

MAX_ORACLE_BONDS = 26


def _count_nonghost_clusters(n_sites, edges, opened_mask, ghost_open):
    """Number of clusters not containing the ghost vertex (all clusters if no ghost)."""
    parent = list(range(n_sites + 1))
    ghost = n_sites

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for b in np.flatnonzero(opened_mask):
        i, j = edges[b]
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[rj] = ri
    if ghost_open is not None:
        for s in np.flatnonzero(ghost_open):
            ri, rj = find(int(s)), find(ghost)
            if ri != rj:
                parent[rj] = ri
    roots = {find(s) for s in range(n_sites)}
    if ghost_open is not None and find(ghost) in roots:
        return len(roots) - 1
    return len(roots)


def exact_expectation(geom, params: ModelParams, observable):
    """Exact random-cluster average of observable(BondConfiguration) by enumeration.

    Sums p^#open (1-p)^#closed q^#clusters over all 2^#bonds configurations
    (including per-site ghost bonds when params.ghost_p > 0; the ghost
    cluster carries weight 1).  The observable may return a scalar or an
    ndarray.  Restricted to graphs with at most 26 total bonds.
    """
    n_lat = geom.n_bonds
    has_ghost = params.ghost_p > 0.0
    n_ghost = geom.n_sites if has_ghost else 0
    m = n_lat + n_ghost
    if m > MAX_ORACLE_BONDS:
        raise ValueError(f"oracle limited to {MAX_ORACLE_BONDS} bonds, got {m}")

    p, gp, q = params.p, params.ghost_p, params.q
    edges = geom.bond_endpoints
    total_w = 0.0
    total = None
    for mask in range(1 << m):
        bits = np.array([(mask >> b) & 1 for b in range(m)], dtype=bool)
        opened = bits[:n_lat]
        ghost_open = bits[n_lat:] if has_ghost else None
        o = int(opened.sum())
        w = p**o * (1.0 - p) ** (n_lat - o)
        if has_ghost:
            og = int(ghost_open.sum())
            w *= gp**og * (1.0 - gp) ** (n_ghost - og)
        if w == 0.0:
            continue
        k = _count_nonghost_clusters(geom.n_sites, edges, opened, ghost_open)
        w *= float(q) ** k
        value = np.asarray(observable(BondConfiguration(open=opened, ghost_open=ghost_open)),
                           dtype=float)
        total = w * value if total is None else total + w * value
        total_w += w
    if total is None:
        raise ValueError("no configuration carried weight")
    result = total / total_w
    return float(result) if result.ndim == 0 else result


def exact_spin_distribution(geom, beta: float, H: float = 0.0, q: int = 2):
    """Exact Gibbs distribution over all q^n spin states by direct spin enumeration.

    Weights are exp(2 beta #{agreeing bonds} + 2 beta |H| #{sites at the
    field-favored color}); for q = 2 this is the +-1 Ising convention
    exp(beta sum S S' + beta H sum S) up to a constant.  Independent of the
    bond-space oracle.  Returns (states, probabilities) with states an
    (q^n, n_sites) array of colors in {1..q}.
    """
    n = geom.n_sites
    if q**n > 1 << 20:
        raise ValueError("spin enumeration limited to q^n <= 2^20")
    idx = np.arange(q**n)
    states = np.empty((q**n, n), dtype=np.int8)
    for s in range(n):
        states[:, s] = (idx // q**s) % q + 1
    u, v = geom.bond_endpoints[:, 0], geom.bond_endpoints[:, 1]
    agree = (states[:, u] == states[:, v]).sum(axis=1)
    log_w = 2.0 * beta * agree
    if H != 0.0:
        forced = 1 if H > 0 else 2
        log_w = log_w + 2.0 * beta * abs(H) * (states == forced).sum(axis=1)
    log_w -= log_w.max()
    w = np.exp(log_w)
    return states, w / w.sum()


# ---------------------------------------------------------------------------
# Raw sample dump (framed binary stream, JSON header)
# ---------------------------------------------------------------------------


def write_raw_header(fh, geom, params: ModelParams, seed: int, run_id: int):
    """Write the stream magic and JSON header describing geometry, params and seed."""
    header = {
        "side_sites": geom.side_sites,
        "boundary": geom.boundary,
        "spacing": geom.spacing,
        "n_bonds": geom.n_bonds,
        "n_sites": geom.n_sites,
        "q": params.q,
        "beta": params.beta,
        "ghost_p": params.ghost_p,
        "has_ghost": params.ghost_p > 0.0,
        "seed": seed,
        "run_id": run_id,
    }
    payload = json.dumps(header, sort_keys=True).encode()
    fh.write(RAW_MAGIC)
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)
    return header


def write_raw_record(fh, run_id: int, sample_index: int, bonds: BondConfiguration):
    """Append one framed record; bond bits are packed little-endian in bond-index order."""
    bond_bytes = np.packbits(bonds.open.astype(np.uint8), bitorder="little").tobytes()
    ghost_bytes = b""
    if bonds.ghost_open is not None:
        ghost_bytes = np.packbits(bonds.ghost_open.astype(np.uint8), bitorder="little").tobytes()
    body = struct.pack("<QQ", run_id, sample_index) + bond_bytes + ghost_bytes
    fh.write(struct.pack("<I", len(body)))
    fh.write(body)


def read_raw_stream(fh):
    """Yield (run_id, sample_index, open, ghost_open) records from a raw dump."""
    magic = fh.read(len(RAW_MAGIC))
    if magic != RAW_MAGIC:
        raise ValueError("not a raw sample stream")
    (hlen,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(hlen).decode())
    n_bonds, n_sites = header["n_bonds"], header["n_sites"]
    n_bond_bytes = (n_bonds + 7) // 8
    while True:
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            return
        (rec_len,) = struct.unpack("<I", raw_len)
        body = fh.read(rec_len)
        run_id, sample_index = struct.unpack("<QQ", body[:16])
        bond_bytes = np.frombuffer(body[16:16 + n_bond_bytes], dtype=np.uint8)
        opened = np.unpackbits(bond_bytes, count=n_bonds, bitorder="little").astype(bool)
        ghost = None
        if header["has_ghost"]:
            gb = np.frombuffer(body[16 + n_bond_bytes:], dtype=np.uint8)
            ghost = np.unpackbits(gb, count=n_sites, bitorder="little").astype(bool)
        yield run_id, sample_index, opened, ghost
