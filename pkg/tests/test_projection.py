"""Depth rendering, back-projection, and PPM export contracts."""

import numpy as np
import pytest

from i2p.errors import InputError
from i2p.pointcloud import PointCloud, generate_shape
from i2p.projection import (DepthMap, GridMap, back_project, render_depth,
                            render_token_mask, render_views, write_ppm)


def test_single_point_lower_corner():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    m = render_depth(cloud, "z", 224)
    assert m.pixels[0, 0] == 0.5
    assert m.pixels.sum() == 0.5


def test_collision_keeps_max_depth():
    pts = np.array([[0.25, 0.25, 0.2], [0.25, 0.25, 0.8]])
    m = render_depth(PointCloud(pts), "z", 8)
    r = int(np.floor(0.25 * 7))
    assert m.pixels[r, r] == pytest.approx((0.8 + 1) / 2)


def test_render_rejects_out_of_range():
    with pytest.raises(InputError):
        render_depth(PointCloud(np.array([[0.0, 0.0, 1.5]])), "z", 8)


def test_view_axes_prefix_rule():
    cloud = PointCloud(np.random.default_rng(0).random((32, 3)))
    assert [m.axis for m in render_views(cloud, 3, 16)] == ["x", "y", "z"]
    assert [m.axis for m in render_views(cloud, 1, 16)] == ["x"]
    with pytest.raises(InputError):
        render_views(cloud, 4, 16)


def test_sphere_views_roughly_symmetric():
    cloud = generate_shape("sphere", 2048, seed=0)
    counts = [np.count_nonzero(m.pixels) for m in render_views(cloud, 3, 64)]
    assert (max(counts) - min(counts)) / max(counts) < 0.10


def test_render_is_permutation_invariant():
    rng = np.random.default_rng(1)
    pts = rng.random((100, 3))
    a = render_depth(PointCloud(pts), "y", 32).pixels
    b = render_depth(PointCloud(pts[rng.permutation(100)]), "y", 32).pixels
    assert np.array_equal(a, b)


def test_depth_monotonicity():
    rng = np.random.default_rng(2)
    pts = rng.random((20, 3))
    base = render_depth(PointCloud(pts), "z", 16)
    raised = pts.copy()
    raised[7, 2] = min(1.0, raised[7, 2] + 0.3)
    after = render_depth(PointCloud(raised), "z", 16)
    r = int(np.floor(pts[7, 0] * 15))
    c = int(np.floor(pts[7, 1] * 15))
    assert after.pixels[r, c] >= base.pixels[r, c]


def test_back_project_constant_map():
    grid = GridMap(axis="z", values=np.full((4, 4, 3), 2.5))
    out = back_project(grid, np.random.default_rng(3).random((10, 3)))
    assert np.all(out == 2.5)


def test_back_project_hand_indexed_cell():
    values = np.arange(8.0).reshape(2, 2, 2)
    grid = GridMap(axis="z", values=values)
    out = back_project(grid, np.array([[0.9, 0.1, 0.42]]))
    # u=0.9 → row floor(0.9·1)=0, v=0.1 → col 0
    assert np.array_equal(out[0], values[0, 0])
    out2 = back_project(grid, np.array([[1.0, 1.0, 0.0]]))
    assert np.array_equal(out2[0], values[1, 1])


def test_back_project_14x14_grid_shape():
    grid = GridMap(axis="x", values=np.random.default_rng(4).normal(size=(14, 14, 6)))
    out = back_project(grid, np.random.default_rng(5).random((21, 3)))
    assert out.shape == (21, 6)


def test_projection_backprojection_consistency():
    """One point per pixel → back-projected depth equals (d+1)/2 exactly."""
    rng = np.random.default_rng(6)
    res = 33  # res-1 a power of two keeps r/(res-1)·(res-1) exact
    # one point per pixel by construction: points sit on cell left edges
    cells = rng.choice(res * res, size=40, replace=False)
    u = (cells // res) / (res - 1)
    v = (cells % res) / (res - 1)
    d = rng.random(40)
    for axis, build in (("z", lambda: np.stack([u, v, d], 1)),
                        ("x", lambda: np.stack([d, u, v], 1)),
                        ("y", lambda: np.stack([u, d, v], 1))):
        pts = np.clip(build(), 0.0, 1.0)
        cloud = PointCloud(pts)
        m = render_depth(cloud, axis, res)
        got = back_project(m, pts)[:, 0]
        assert np.array_equal(got, (pts[:, {"x": 0, "y": 1, "z": 2}[axis]] + 1) / 2)


def test_ppm_header_and_black(tmp_path):
    path = tmp_path / "zero.ppm"
    write_ppm(np.zeros((4, 6)), path)
    blob = path.read_bytes()
    assert blob.startswith(b"P6\n6 4\n255\n")
    assert set(blob[len(b"P6\n6 4\n255\n"):]) == {0}


def test_ppm_max_value_maps_to_255(tmp_path):
    img = np.zeros((2, 2))
    img[1, 1] = 0.7
    path = tmp_path / "m.ppm"
    write_ppm(img, path)
    assert path.read_bytes()[-1] == 255


def test_ppm_rejects_multichannel(tmp_path):
    grid = GridMap(axis="z", values=np.zeros((2, 2, 3)))
    with pytest.raises(InputError):
        write_ppm(grid, tmp_path / "x.ppm")


def test_token_mask_has_three_levels():
    rng = np.random.default_rng(7)
    centers = rng.random((30, 3))
    visible = np.arange(6)
    img = render_token_mask(centers, visible, resolution=64)
    assert set(np.unique(img)) == {0.0, 0.5, 1.0}
