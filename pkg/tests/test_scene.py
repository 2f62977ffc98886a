import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neucache.numerics.sh import sh_basis9
from neucache.scene import (
    DatasetError, HeadProxy, Intrinsics, ShadingParams, StabilizerState, deform_and_pose, generate_dataset,
    generate_trajectory, load_split, make_head_proxy, rasterize_uv, reference_render, rotation_matrix,
    stabilize_track,
)
from neucache.scene.dataset import decode_frame, encode_frame
from neucache.scene.proxy import FORWARD_AXIS, deform, vertex_normals
from neucache.scene.raster import rasterize
from neucache.scene.trajectory import rasterize_frame, rotate_view

CAM = np.array([0.0, 0.0, 3.0])


@pytest.fixture(scope="module")
def proxy():
    return make_head_proxy()


def quad_proxy(half=1.0, z=0.0, uv=None):
    verts = np.array([[-half, half, z], [half, half, z], [-half, -half, z], [half, -half, z]])
    uv = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float64) if uv is None else uv
    tris = np.array([[0, 2, 1], [1, 2, 3]])
    return HeadProxy(verts, tris, uv, np.zeros((0, 4, 3)), 0, 1)


# --- proxy ---------------------------------------------------------------

def test_proxy_invariants(proxy):
    assert proxy.triangles.max() < proxy.n_vertices
    assert proxy.uv_coords.min() >= 0 and proxy.uv_coords.max() <= 1
    norms = np.linalg.norm(proxy.blendshape_basis, axis=-1)
    assert norms.max() <= 0.2 * proxy.radius


def test_identity_pose(proxy):
    np.testing.assert_array_equal(deform_and_pose(proxy, np.zeros(6), np.zeros(4)), proxy.base_vertices)


def test_translation(proxy):
    v = deform_and_pose(proxy, [0, 0, 0, 1, 0, 0], np.zeros(4))
    np.testing.assert_allclose(v - proxy.base_vertices, np.tile([1.0, 0, 0], (proxy.n_vertices, 1)), atol=1e-15)


def test_one_hot_expression(proxy):
    for j in range(4):
        e = np.eye(4)[j]
        np.testing.assert_allclose(deform_and_pose(proxy, np.zeros(6), e),
                                   proxy.base_vertices + proxy.blendshape_basis[j], atol=1e-15)


def test_expression_clamped(proxy):
    np.testing.assert_array_equal(deform(proxy, [10, 0, 0, 0]), deform(proxy, [3, 0, 0, 0]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4), st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
def test_expression_linear(e1, e2):
    p = make_head_proxy()
    e1, e2 = np.array(e1), np.array(e2)
    base = deform(p, np.zeros(4))
    lhs = deform(p, e1 + e2) - base
    rhs = (deform(p, e1) - base) + (deform(p, e2) - base)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_extreme_expression_keeps_orientation(proxy):
    def face_normals(v):
        t = v[proxy.triangles]
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    n0 = face_normals(proxy.base_vertices)
    live = np.linalg.norm(n0, axis=1) > 1e-9   # pole triangles are degenerate
    for s in (-3.0, 3.0):
        n1 = face_normals(deform(proxy, np.full(4, s)))
        assert np.min(np.sum(n0 * n1, axis=1)[live]) > 0


def test_rotation_orthonormal():
    r = rotation_matrix([0.3, -0.2, 0.5])
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)


def test_h_obj_matches_rotated_forward():
    f = generate_trajectory(3, 5)[4]
    np.testing.assert_allclose(f.h_obj, sh_basis9(rotation_matrix(f.theta[:3]) @ FORWARD_AXIS))


# --- rasterizer ----------------------------------------------------------

@pytest.mark.parametrize("h,w", [(16, 16), (32, 48)])
def test_quad_uv_matches_pixel_centers(h, w):
    # the quad spans the view exactly: x = +-1 maps to the left/right image edges
    q = quad_proxy()
    focal_x = 3.0 * w / 2.0
    intr = Intrinsics(focal_x, w / 2.0, h / 2.0)
    # stretch vertically so y = +-1 maps to the top/bottom edges
    q = HeadProxy(q.base_vertices * [1, h / w, 1], q.triangles, q.uv_coords, q.blendshape_basis, 0, 1)
    uv, mask = rasterize_uv(q.base_vertices, q, CAM, intr, h, w)
    assert mask.all()
    px = (np.arange(w) + 0.5) / w
    py = (np.arange(h) + 0.5) / h
    assert np.max(np.abs(uv[0] - px[None, :])) < 1 / (2 * min(h, w))
    assert np.max(np.abs(uv[1] - py[:, None])) < 1 / (2 * min(h, w))


def test_camera_behind_mesh_is_empty():
    q = quad_proxy()
    # looking away from the quad
    intr = Intrinsics(40.0, 16, 16, look_at=(0.0, 0.0, 6.0))
    uv, mask = rasterize_uv(q.base_vertices, q, CAM, intr, 32, 32)
    assert mask.sum() == 0
    assert np.all(uv == 0)


def test_depth_test_near_wins():
    verts = np.array([[-1, -1, 0.0], [1, -1, 0.0], [0, 1, 0.0],        # far (z = 0)
                      [-1, 1, 1.0], [1, 1, 1.0], [0, -1, 1.0]])        # near (z = 1, closer to camera)
    uv = np.array([[0.1, 0.1]] * 3 + [[0.9, 0.9]] * 3)
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    p = HeadProxy(verts, tris, uv, np.zeros((0, 6, 3)), 0, 1)
    intr = Intrinsics(20.0, 16, 16)
    frags = rasterize(verts, tris, CAM, intr, 32, 32)
    near_only = rasterize(verts, tris[1:], CAM, intr, 32, 32).mask
    far_only = rasterize(verts, tris[:1], CAM, intr, 32, 32).mask
    contested = near_only & far_only
    assert contested.sum() > 20
    assert np.all(frags.tri_id[contested] == 1)
    uvm, _ = rasterize_uv(verts, p, CAM, intr, 32, 32)
    np.testing.assert_allclose(uvm[:, contested], 0.9, atol=1e-6)


def test_uv_in_range_and_reproducible(proxy):
    f = generate_trajectory(5, 1)[0]
    a = rasterize_frame(f, proxy, 32, 32)
    b = rasterize_frame(f, proxy, 32, 32)
    assert a.uv_map.min() >= 0 and a.uv_map.max() <= 1
    assert set(np.unique(a.mask)) <= {0.0, 1.0}
    assert a.uv_map.tobytes() == b.uv_map.tobytes()


# --- shading -------------------------------------------------------------

def test_lambert_isolation():
    q = quad_proxy()
    light = np.array([0.0, 0.6, 0.8])
    params = ShadingParams(light_dir=tuple(light), ambient=0.0, diffuse=1.0, specular=0.0)
    intr = Intrinsics(24.0, 16, 16)
    img = reference_render(q.base_vertices, q, CAM, intr, 32, 32, params, albedo_fn=lambda uv: np.ones((3,) + uv.shape[1:]))
    n = vertex_normals(q.base_vertices, q.triangles)[0]
    lam = max(float(n @ light), 0.0)
    mask = rasterize(q.base_vertices, q.triangles, CAM, intr, 32, 32).mask
    np.testing.assert_allclose(img[:, mask], lam, atol=1e-6)


def test_render_deterministic(proxy):
    f = generate_trajectory(2, 1)[0]
    v = deform_and_pose(proxy, f.theta, f.expr)
    intr = f.intrinsics(32, 32)
    a = reference_render(v, proxy, f.cam, intr, 32, 32)
    b = reference_render(v, proxy, f.cam, intr, 32, 32)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_camera_move_changes_only_head_pixels(proxy):
    intr = Intrinsics.centered(60.0, 32, 32)
    v = proxy.base_vertices
    cam2 = np.array([0.3, 0.1, 2.9])
    a = reference_render(v, proxy, CAM, intr, 32, 32)
    b = reference_render(v, proxy, cam2, intr, 32, 32)
    heads = rasterize(v, proxy.triangles, CAM, intr, 32, 32).mask | rasterize(v, proxy.triangles, cam2, intr, 32, 32).mask
    diff = np.any(np.abs(a - b) > 0, axis=0)
    assert diff.any()
    assert not np.any(diff & ~heads)


def test_coverage_equals_shader_foreground(proxy):
    f = rasterize_frame(generate_trajectory(4, 1)[0], proxy, 32, 32)
    v = deform_and_pose(proxy, f.theta, f.expr)
    img = reference_render(v, proxy, f.cam, f.intrinsics(32, 32), 32, 32)
    bg = np.asarray(ShadingParams().background, dtype=np.float32)[:, None, None]
    fg = np.any(img != bg, axis=0)
    np.testing.assert_array_equal(fg, f.mask.astype(bool))


# --- stabilization -------------------------------------------------------

def test_stabilizer_constant():
    c, s = stabilize_track(np.tile([0.3, -1, 2], (9, 1)), np.full(9, 4.0))
    np.testing.assert_allclose(c, np.tile([0.3, -1, 2], (9, 1)), atol=1e-12)
    np.testing.assert_allclose(s, 4.0, atol=1e-12)


def test_stabilizer_impulse():
    st_ = StabilizerState()
    track = np.zeros(12)
    track[4] = 1.0
    out = np.array([float(st_.push(x)) for x in track])
    np.testing.assert_allclose(out[4:9], st_.weights[::-1], atol=1e-12)
    np.testing.assert_allclose(st_.weights.sum(), 1.0)
    assert np.all(out[:4] == 0) and np.all(out[9:] == 0)


def test_stabilizer_jitter():
    track = np.array([(-1.0) ** i for i in range(20)])
    out = np.array([float(x) for x in stabilize_track(np.stack([track] * 3, 1), track)[1]])
    assert np.max(np.abs(out[5:])) < 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30))
def test_stabilizer_equals_convolution(xs):
    xs = np.array(xs)
    s = StabilizerState()
    out = np.array([float(s.push(x)) for x in xs])
    padded = np.concatenate([np.full(4, xs[0]), xs])
    ref = np.convolve(padded, s.weights[::-1], mode="valid")
    np.testing.assert_allclose(out, ref, atol=1e-9)


# --- trajectories --------------------------------------------------------

def test_trajectory_deterministic():
    a, b = generate_trajectory(11, 20), generate_trajectory(11, 20)
    for x, y in zip(a, b):
        assert x.theta.tobytes() == y.theta.tobytes() and x.cam.tobytes() == y.cam.tobytes()


def test_trajectory_60_subsample_exact():
    a = generate_trajectory(11, 80, fps=60)[::2]
    b = generate_trajectory(11, 40, fps=30)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.theta, y.theta)
        np.testing.assert_array_equal(x.expr, y.expr)
        np.testing.assert_array_equal(x.cam, y.cam)


def test_trajectory_60_halves_deltas():
    def mean_delta(fps):
        th = np.array([f.theta for f in generate_trajectory(5, 1000, fps=fps)])
        return np.mean(np.abs(np.diff(th, axis=0)))
    assert abs(mean_delta(60) / mean_delta(30) - 0.5) < 0.05


def test_trajectory_rejects_fps():
    with pytest.raises(ValueError):
        generate_trajectory(1, 10, fps=24)


def test_rotate_view_composes_yaw():
    f = generate_trajectory(3, 1)[0]
    g = rotate_view(f, np.radians(30))
    np.testing.assert_allclose(rotation_matrix(g.theta[:3]),
                               rotation_matrix([0, np.radians(30), 0]) @ rotation_matrix(f.theta[:3]), atol=1e-12)


# --- dataset -------------------------------------------------------------

def test_dataset_byte_identical(tmp_path):
    for run in ("a", "b"):
        generate_dataset(tmp_path / run, seed=7, n_frames=6, h=16, w=16, n_test=2)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 10
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_dataset_roundtrip(tmp_path):
    generate_dataset(tmp_path, seed=3, n_frames=4, h=16, w=16, n_test=2)
    train, test = load_split(tmp_path / "train"), load_split(tmp_path / "test")
    assert len(train) == 4 and len(test) == 2
    assert test.start_frame == 4
    ref = generate_trajectory(3, 6)
    np.testing.assert_allclose(test[1].params.theta, ref[5].theta, atol=1e-6)
    f = train[0]
    g = decode_frame(encode_frame(f))
    assert encode_frame(g) == encode_frame(f)


def test_dataset_errors(tmp_path):
    generate_dataset(tmp_path, seed=3, n_frames=2, h=16, w=16, n_test=0)
    buf = (tmp_path / "train" / "frame_00000.ncr").read_bytes()
    with pytest.raises(DatasetError, match="magic"):
        decode_frame(b"XXXX" + buf[4:])
    with pytest.raises(DatasetError, match="bytes"):
        decode_frame(buf[:-1])
    with pytest.raises(DatasetError):
        load_split(tmp_path / "nope")
