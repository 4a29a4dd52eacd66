import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from icanet import flow
from icanet.flow import FlowVectors, LkParams

MARGIN = 13  # half window plus the largest shift


def textured(seed, size=64):
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random((size, size)), 2.0, mode="wrap")
    return (img - img.min()) / (img.max() - img.min())


def shifted(img, dx, dy):
    return np.roll(img, (dy, dx), axis=(0, 1))


def interior(points, size=64, margin=MARGIN):
    p = np.asarray(points).reshape(-1, 2)
    return ((p >= margin) & (p <= size - 1 - margin)).all(axis=1)


def test_params_validation():
    with pytest.raises(ValueError):
        LkParams(window=4)
    with pytest.raises(ValueError):
        LkParams(pyramid_levels=0)


def test_gray_conversion_uses_luma():
    rgb = np.zeros((3, 16, 16), np.float32)
    rgb[1] = 1.0
    np.testing.assert_allclose(flow.to_gray(rgb), 0.587, rtol=1e-6)


def test_tiny_image_rejected():
    with pytest.raises(ValueError, match="16x16"):
        flow.shi_tomasi_corners(np.zeros((8, 32)))


# ---------------------------------------------------------------- corners

def test_constant_image_has_no_corners():
    assert flow.shi_tomasi_corners(np.full((32, 32), 0.4)) == []


def test_white_square_corners():
    img = np.zeros((32, 32))
    img[10:14, 10:14] = 1.0
    pts = flow.shi_tomasi_corners(img, LkParams(min_distance=2))
    geometric = [(9.5, 9.5), (13.5, 9.5), (9.5, 13.5), (13.5, 13.5)]
    top4 = pts[:4]
    for gx, gy in geometric:
        assert min(np.hypot(x - gx, y - gy) for x, y in top4) <= 1.5


def test_min_distance_of_diagonal_keeps_one_point():
    img = textured(3)
    pts = flow.shi_tomasi_corners(img, LkParams(min_distance=np.hypot(64, 64)))
    assert len(pts) == 1


def test_corners_are_sorted_thinned_and_capped():
    img = textured(4)
    params = LkParams(max_corners=25, min_distance=5)
    pts = flow.shi_tomasi_corners(img, params)
    assert 0 < len(pts) <= 25
    resp = flow.min_eigen_response(img)
    r = [resp[int(y), int(x)] for x, y in pts]
    assert r == sorted(r, reverse=True)
    p = np.array(pts)
    d = np.hypot(*(p[:, None, :] - p[None, :, :]).transpose(2, 0, 1))
    assert d[np.triu_indices(len(p), 1)].min() >= 5
    assert pts == flow.shi_tomasi_corners(img, params)


# ---------------------------------------------------------------- LK

def test_zero_motion():
    img = textured(0)
    pts = flow.shi_tomasi_corners(img)
    v = flow.pyr_lk_flow(img, img, pts)
    assert v.status.all()
    assert np.abs(v.displacements).max() < 1e-3


def test_translation_by_2_1():
    img = textured(1)
    nxt = shifted(img, 2, 1)
    pts = flow.shi_tomasi_corners(img)
    v = flow.pyr_lk_flow(img, nxt, pts)
    m = v.status & interior(v.points)
    assert m.sum() >= 5
    np.testing.assert_allclose(v.displacements[m], np.tile([2.0, 1.0], (m.sum(), 1)), atol=0.2)


def test_flat_region_is_invalid():
    img = np.full((64, 64), 0.5)
    img[:, 40:] = textured(2)[:, 40:]
    v = flow.pyr_lk_flow(img, img, [(10.0, 32.0), (52.0, 32.0)])
    assert list(v.status) == [False, True]
    np.testing.assert_array_equal(v.displacements[0], [0.0, 0.0])


def test_forward_backward_symmetry():
    for seed in range(5):
        img = textured(100 + seed)
        nxt = shifted(img, -3, 2)
        pts = flow.shi_tomasi_corners(img)
        fwd = flow.pyr_lk_flow(img, nxt, pts)
        back = flow.pyr_lk_flow(nxt, img, fwd.points + fwd.displacements)
        m = fwd.status & back.status & interior(fwd.points)
        assert m.any()
        assert np.abs(fwd.displacements[m] + back.displacements[m]).max() <= 0.4


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shapes differ"):
        flow.pyr_lk_flow(np.zeros((32, 32)), np.zeros((32, 48)), [(5.0, 5.0)])


def test_lk_is_deterministic():
    img, nxt = textured(7), shifted(textured(7), 1, -1)
    pts = flow.shi_tomasi_corners(img)
    a, b = flow.pyr_lk_flow(img, nxt, pts), flow.pyr_lk_flow(img, nxt, pts)
    assert a.displacements.tobytes() == b.displacements.tobytes()
    assert a.status.tobytes() == b.status.tobytes()


def test_pyramid_drops_odd_edges():
    pyr = flow.build_pyramid(np.arange(35 * 33, dtype=float).reshape(35, 33), 3)
    assert [p.shape for p in pyr] == [(35, 33), (17, 16), (8, 8)]


# ---------------------------------------------------------------- rasterize

def vectors(points, disps, status=None):
    n = len(points)
    return FlowVectors(np.array(points, float).reshape(n, 2), np.array(disps, float).reshape(n, 2),
                       np.ones(n, bool) if status is None else np.array(status))


def test_rasterize_empty():
    f = flow.rasterize_flow(vectors([], []), 10, 12)
    assert f.shape == (2, 10, 12) and not f.any()


def test_rasterize_single_vector():
    f = flow.rasterize_flow(vectors([(3.4, 7.6)], [(10, -5)]), 16, 16)
    assert f[0, 8, 3] == 0.5 and f[1, 8, 3] == -0.25
    f[:, 8, 3] = 0
    assert not f.any()


def test_rasterize_clamps():
    f = flow.rasterize_flow(vectors([(1, 1)], [(100, -100)]), 4, 4)
    assert f[0, 1, 1] == 1.0 and f[1, 1, 1] == -1.0


def test_rasterize_collision_keeps_smaller_y_x():
    pts = [(5.2, 4.9), (4.8, 5.1), (5.0, 4.6)]
    f = flow.rasterize_flow(vectors(pts, [(1, 0), (2, 0), (3, 0)]), 10, 10)
    assert f[0, 5, 5] == pytest.approx(3 / 20)


def test_rasterize_skips_invalid():
    f = flow.rasterize_flow(vectors([(2, 2)], [(4, 4)], [False]), 5, 5)
    assert not f.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 20), st.floats(-2, 20),
                          st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.booleans()), max_size=30))
def test_rasterize_bounded(items):
    pts = [(x, y) for x, y, *_ in items]
    disp = [(u, v) for _, _, u, v, _ in items]
    status = [s for *_, s in items]
    f = flow.rasterize_flow(vectors(pts, disp, status), 18, 18)
    assert np.isfinite(f).all() and f.min() >= -1 and f.max() <= 1


# ---------------------------------------------------------------- sequences

def test_sequence_of_identical_frames_is_zero():
    frames = [textured(9)] * 79
    out = flow.flow_sequence(frames)
    assert out.shape == (2, 79, 64, 64)
    assert not out.any()


def test_sequence_requires_exact_count():
    with pytest.raises(ValueError, match="expected 79 frames"):
        flow.flow_sequence([textured(9)] * 78)


def test_sequence_constant_velocity():
    base = textured(11)
    frames = [shifted(base, t, -t) for t in range(8)]
    out = flow.flow_sequence(frames, num_frames=8)
    assert out.shape == (2, 8, 64, 64)
    np.testing.assert_array_equal(out[:, 7], out[:, 6])
    yy, xx = np.mgrid[0:64, 0:64]
    inner = (xx >= MARGIN) & (xx <= 50) & (yy >= MARGIN) & (yy <= 50)
    for t in range(8):
        u, v = out[0, t], out[1, t]
        hit = inner & ((u != 0) | (v != 0))
        assert hit.any()
        np.testing.assert_allclose(u[hit], 1 / 20, atol=0.01)
        np.testing.assert_allclose(v[hit], -1 / 20, atol=0.01)
