import numpy as np
import pytest

from fkfield.lattice import (
    Disc,
    DiscComplement,
    Rectangle,
    build_geometry,
    sites_in_region,
    unit_box,
)


def test_bond_counts_free():
    g = build_geometry(2, "free", 1.0)
    assert g.n_sites == 4
    assert g.n_bonds == 4


def test_bond_counts_torus():
    g = build_geometry(2, "torus", 1.0)
    assert g.n_sites == 4
    assert g.n_bonds == 8


def test_degenerate_single_site():
    g = build_geometry(1, "free", 1.0)
    assert g.n_sites == 1
    assert g.n_bonds == 0


@pytest.mark.parametrize("L,boundary", [(3, "free"), (3, "torus"), (5, "torus")])
def test_bond_count_formula(L, boundary):
    g = build_geometry(L, boundary, 0.5)
    expected = 2 * L * L if boundary == "torus" else 2 * L * (L - 1)
    assert g.n_bonds == expected


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_geometry(0, "free", 1.0)
    with pytest.raises(ValueError):
        build_geometry(2, "free", 0.0)
    with pytest.raises(ValueError):
        build_geometry(2, "klein bottle", 1.0)


def test_bond_length_is_spacing():
    a = 0.25
    g = build_geometry(4, "free", a)
    u, v = g.bond_endpoints[:, 0], g.bond_endpoints[:, 1]
    d = np.hypot(*(g.positions[u] - g.positions[v]).T)
    assert np.allclose(d, a)


def test_bond_length_is_spacing_torus_wrap():
    a = 0.5
    g = build_geometry(4, "torus", a)
    ext = g.extent
    diff = np.abs(g.positions[g.bond_endpoints[:, 0]] - g.positions[g.bond_endpoints[:, 1]])
    diff = np.minimum(diff, ext - diff)
    d = np.hypot(diff[:, 0], diff[:, 1])
    assert np.allclose(d, a)


def test_positions_range():
    g = build_geometry(4, "torus", 1.0)
    assert g.positions.min() == 0.0
    assert g.positions.max() == 3.0  # < L*a on the torus
    gf = build_geometry(4, "free", 1.0)
    assert gf.positions.max() == 3.0  # (L-1)*a


def test_sites_in_unit_square_covers_lattice():
    g = build_geometry(4, "free", 0.25)
    assert len(sites_in_region(g, unit_box())) == 16


def test_sites_in_quadrant():
    g = build_geometry(4, "free", 0.25)
    assert len(sites_in_region(g, Rectangle(0, 0, 0.5, 0.5))) == 4


def test_sites_in_disc():
    # The open disc of radius 1.5 around the origin contains the four sites
    # at distance 0, 1, 1 and sqrt(2).
    g = build_geometry(3, "free", 1.0)
    got = set(sites_in_region(g, Disc((0.0, 0.0), 1.5)))
    assert got == {0, 1, 3, 4}


def test_disc_complement_partitions():
    g = build_geometry(5, "free", 1.0)
    d = Disc((2.0, 2.0), 1.7)
    dc = DiscComplement((2.0, 2.0), 1.7)
    inside = set(sites_in_region(g, d))
    outside = set(sites_in_region(g, dc))
    assert inside | outside == set(range(g.n_sites))
    assert inside & outside == set()


def test_rectangles_tile_exactly():
    g = build_geometry(6, "torus", 1.0 / 3.0)
    quads = [Rectangle(x, y, x + 1, y + 1) for x in (0, 1) for y in (0, 1)]
    counts = [len(sites_in_region(g, r)) for r in quads]
    assert sum(counts) == g.n_sites
    assert all(c == 9 for c in counts)


def test_torus_distance_wraps():
    g = build_geometry(8, "torus", 1.0)
    d = g.distances_from((0.0, 0.0))
    # site (7, 0) is one step from the origin across the seam
    assert d[7] == 1.0
    assert d[4] == 4.0
