import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as nps

from cdnd import geometry as geo
from cdnd.verify import brute_force_fps, brute_force_knn

clouds = nps.arrays(np.float64, st.tuples(st.integers(20, 40), st.just(3)),
                    elements=st.floats(-10, 10, allow_nan=False, width=64))


def test_fps_collinear(line10):
    assert geo.farthest_point_sample(line10, 2) == [0, 9]
    # 4 and 5 tie at distance 4; the lower index wins
    assert geo.farthest_point_sample(line10, 3) == [0, 9, 4]
    assert sorted(geo.farthest_point_sample(line10, 10)) == list(range(10))


def test_fps_rejects_k_above_n(line10):
    with pytest.raises(geo.GeometryError):
        geo.farthest_point_sample(line10, 11)


def test_fps_seeded_start_is_deterministic(rng):
    pts = rng.standard_normal((40, 3))
    a = geo.farthest_point_sample(pts, 6, "seeded_random", np.random.default_rng(3))
    b = geo.farthest_point_sample(pts, 6, "seeded_random", np.random.default_rng(3))
    assert a == b


def test_knn_collinear(line10):
    assert sorted(geo.k_nearest(line10, 5, 2)) == [4, 6]
    assert geo.k_nearest(line10, 0, 1) == [1]
    with pytest.raises(geo.GeometryError):
        geo.k_nearest(line10, 0, 10)


def test_knn_matches_full_sort(rng):
    pts = rng.standard_normal((50, 3))
    assert geo.k_nearest(pts, 17, 7) == brute_force_knn(pts, 17, 7)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 64), st.integers(0, 10_000))
def test_fps_knn_equal_brute_force(n, seed):
    pts = np.random.default_rng(seed).standard_normal((n, 3))
    k = 1 + seed % n
    assert geo.farthest_point_sample(pts, k) == brute_force_fps(pts, k)
    assert geo.k_nearest(pts, seed % n, (seed // 7) % n) == brute_force_knn(pts, seed % n, (seed // 7) % n)


def test_curvature_coplanar_and_cube(rng):
    plane = np.column_stack([rng.uniform(-1, 1, (30, 2)), np.zeros(30)])
    assert geo.curvature_of(plane) == pytest.approx(0.0, abs=1e-9)
    cube = np.array(list(itertools.product([-1.0, 1.0], repeat=3)))
    assert geo.curvature_of(cube) == pytest.approx(1 / 3, abs=1e-9)
    field = geo.pca_curvature(cube, 8)
    assert np.allclose(field, 1 / 3, atol=1e-9)


def _char_poly_smallest(cov):
    # roots of det(cov - x I) = -x^3 + tr x^2 - c2 x + det, independent of eigvalsh
    tr = np.trace(cov)
    c2 = sum(cov[i, i] * cov[j, j] - cov[i, j] ** 2 for i, j in ((0, 1), (0, 2), (1, 2)))
    roots = np.roots([-1.0, tr, -c2, np.linalg.det(cov)])
    return float(np.min(roots.real)), float(tr)


def test_curvature_matches_characteristic_polynomial(rng):
    pts = rng.standard_normal((30, 3)) * [1.0, 0.5, 0.2]
    field = geo.pca_curvature(pts, 12)
    table = geo._neighborhood_table(pts, 12)
    for i in range(0, 30, 5):
        nb = pts[table[i]]
        c = nb - nb.mean(axis=0)
        lam_min, tr = _char_poly_smallest(c.T @ c / len(nb))
        assert field[i] == pytest.approx(lam_min / tr, abs=1e-9)


def test_curvature_degenerate_neighborhood_is_zero():
    assert geo.pca_curvature(np.zeros((5, 3)), 3).tolist() == [0.0] * 5


def test_curvature_rejects_bad_sizes(rng):
    with pytest.raises(geo.GeometryError):
        geo.pca_curvature(rng.standard_normal((5, 3)), 6)
    with pytest.raises(geo.GeometryError):
        geo.pca_curvature(rng.standard_normal((5, 3)), 2)


@settings(max_examples=30, deadline=None)
@given(clouds)
def test_curvature_bounds(points):
    c = geo.pca_curvature(points, 10)
    assert np.all(c >= 0) and np.all(c <= 1 / 3 + 1e-9)


def test_curvature_rigid_invariance(rng):
    pts = rng.standard_normal((60, 3))
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = pts @ q.T + rng.standard_normal(3)
    assert np.allclose(geo.pca_curvature(pts, 15), geo.pca_curvature(moved, 15), atol=1e-6)


def test_partition_counts(rng):
    pts = rng.standard_normal((16, 3))
    regions = geo.partition_regions(pts, geo.DeformConfig(k=4, m=3))
    assert len(regions) == 4
    for r in regions:
        assert len(r.member_indices) == 4 and r.center_index in r.member_indices
        assert len(set(r.member_indices)) == 4
    whole = geo.partition_regions(pts, geo.DeformConfig(k=1, m=15))
    assert sorted(whole[0].member_indices) == list(range(16))


def test_partition_matches_recomputation(rng):
    pts = np.concatenate([c + 0.05 * rng.standard_normal((20, 3)) for c in rng.uniform(-3, 3, (4, 3))])
    cfg = geo.DeformConfig(k=4, m=9)
    regions = geo.partition_regions(pts, cfg)
    centers = brute_force_fps(pts, 4)
    assert [r.center_index for r in regions] == centers
    for r in regions:
        assert list(r.member_indices[1:]) == brute_force_knn(pts, r.center_index, 9)


def test_default_m_follows_point_count():
    assert geo.DeformConfig(k=8).neighbors_for(128) == 15
    assert geo.DeformConfig(k=8).reconstruction_size(128) == 16


def test_entropy_values():
    region = geo.Region(0, (0, 1, 2))
    assert geo.diversity_score(region, np.full(3, 0.25)).score == 0.0
    h = geo.diversity_score(region, np.array([0.0, 0.5, 1.0])).score
    assert h == pytest.approx(0.34657359019531525, abs=1e-12)
    assert h == pytest.approx(0.5 * math.log(2), abs=1e-4)
    std = geo.diversity_score(geo.Region(0, (0, 1)), np.array([0.0, 1.0]), "std").score
    assert std == 0.5
    assert geo.diversity_score(geo.Region(0, (0,)), np.array([0.3])).score == 0.0


@settings(max_examples=50, deadline=None)
@given(nps.arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1 / 3)))
def test_entropy_floor(curv):
    region = geo.Region(0, tuple(range(len(curv))))
    assert geo.diversity_score(region, curv).score >= -1e-9 * len(curv)


def _scores(values):
    return [geo.DiversityScore(i, v, "entropy") for i, v in enumerate(values)]


def test_select_regions_modes():
    regions = [geo.Region(i, (i,)) for i in range(3)]
    scores = _scores([0.5, 0.1, 0.9])
    assert geo.select_regions(regions, scores, 1, "lowest") == [regions[1]]
    assert geo.select_regions(regions, scores, 1, "highest") == [regions[2]]
    tied = [geo.Region(i, (i,)) for i in range(2)]
    assert geo.select_regions(tied, _scores([0.5, 0.5]), 1, "lowest") == [tied[0]]
    with pytest.raises(geo.GeometryError):
        geo.select_regions(regions, scores, 4, "lowest")
    picked = geo.select_regions(regions, scores, 3, "random", np.random.default_rng(0))
    assert sorted(r.center_index for r in picked) == [0, 1, 2]


def test_deform_collapses_to_centroid(rng):
    pts = rng.standard_normal((20, 3))
    whole = [geo.Region(0, tuple(range(20)))]
    out = geo.deform(pts, whole, 1e-12, rng)
    assert np.all(np.abs(out.points - pts.mean(axis=0)) < 1e-4)
    assert np.array_equal(out.original_region_points, pts)


def test_deform_locality(rng):
    pts = rng.standard_normal((30, 3))
    regions = geo.partition_regions(pts, geo.DeformConfig(k=5, m=4))
    out = geo.deform(pts, regions[:2], 0.001, rng)
    untouched = np.setdiff1d(np.arange(30), out.deformed_indices)
    assert np.array_equal(out.points[untouched], pts[untouched])
    assert len(out.deformed_indices) == len(out.original_region_points)
    assert np.array_equal(out.original_region_points, pts[out.deformed_indices])


def test_deform_overlap_uses_first_region_centroid(rng):
    pts = rng.standard_normal((6, 3))
    first, second = geo.Region(0, (0, 1, 2)), geo.Region(3, (2, 3, 4))
    out = geo.deform(pts, [first, second], 1e-14, rng)
    assert out.deformed_indices.tolist() == [0, 1, 2, 3, 4]
    assert np.allclose(out.points[2], pts[[0, 1, 2]].mean(axis=0), atol=1e-5)
    assert np.allclose(out.points[3], pts[[2, 3, 4]].mean(axis=0), atol=1e-5)


def test_deform_rejects_empty(rng):
    with pytest.raises(geo.GeometryError):
        geo.deform(rng.standard_normal((4, 3)), [], 0.001, rng)


def test_deform_gaussian_statistics():
    from cdnd.verify import deformation_statistics

    mean_dev, var_dev = deformation_statistics()
    assert mean_dev <= 4 * math.sqrt(0.001 / 256)
    assert var_dev <= 0.0003


def test_cloud_text_roundtrip(tmp_path, rng):
    pts = rng.standard_normal((7, 3))
    path = tmp_path / "c.xyz"
    geo.write_cloud(path, pts, header="generated")
    assert np.array_equal(geo.read_cloud(path), pts)
    assert path.read_bytes().count(b"\r") == 0


def test_cloud_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("# c\n0 0 0\n1 2\n")
    with pytest.raises(geo.CloudParseError) as err:
        geo.read_cloud(path)
    assert err.value.line_no == 3
