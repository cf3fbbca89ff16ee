import json

import numpy as np
import pytest

from rnfuse import core
from rnfuse.errors import DataError


def make_camera(width=8, height=8, f=None, R=None, t=(0.0, 0.0, -3.0)):
    f = f if f is not None else float(width)
    K = np.array([[f, 0, width / 2.0], [0, f, height / 2.0], [0, 0, 1.0]])
    R = np.eye(3) if R is None else R
    return core.Camera(K=K, R=R, t=np.asarray(t, dtype=float), width=width, height=height)


def rotation_about(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    K = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


# ---------------------------------------------------------------------------
# rays


def test_principal_ray_direction():
    cam = make_camera()
    ray = core.generate_ray(cam, (4.0, 4.0))
    np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(ray.origin, [0, 0, -3])


def test_bounding_sphere_chord():
    cam = make_camera(t=(0, 0, -3))
    bounds = core.SceneBounds(center=np.zeros(3), radius=1.0)
    ray = core.generate_ray(cam, (4.0, 4.0), bounds)
    assert ray.hits_bounds
    np.testing.assert_allclose([ray.t_near, ray.t_far], [2.0, 4.0], atol=1e-12)


def test_ray_missing_sphere_flagged():
    cam = make_camera(t=(0, 0, -3))
    bounds = core.SceneBounds(center=np.zeros(3), radius=0.01)
    ray = core.generate_ray(cam, (0.2, 0.2), bounds)
    assert not ray.hits_bounds


def test_camera_inside_sphere_clamps_near():
    cam = make_camera(t=(0, 0, 0))
    bounds = core.SceneBounds(center=np.zeros(3), radius=1.0)
    ray = core.generate_ray(cam, (4.0, 4.0), bounds)
    assert ray.t_near == 0.0
    np.testing.assert_allclose(ray.t_far, 1.0)


def test_pixel_out_of_bounds_raises():
    cam = make_camera()
    with pytest.raises(ValueError):
        core.generate_ray(cam, (-1.0, 2.0))


def test_reprojection_roundtrip_random_cameras():
    rng = np.random.default_rng(7)
    for _ in range(20):
        R = rotation_about(rng.normal(size=3), rng.uniform(0, np.pi))
        cam = make_camera(width=32, height=24, f=40.0, R=R, t=rng.normal(size=3))
        pixels = rng.uniform(0.0, [32, 24], size=(50, 2))
        o, d, _, _, _ = core.generate_rays(cam, pixels)
        ts = rng.uniform(0.5, 5.0, size=50)
        pts = o + ts[:, None] * d
        pix2, depth, ok = core.project_points(cam, pts)
        assert ok.all()
        np.testing.assert_allclose(pix2, pixels, atol=1e-6)


def test_world_to_pixel_principal_axis():
    cam = make_camera(t=(0, 0, 0))
    pix, depth = core.world_to_pixel(cam, (0, 0, 2.0))
    np.testing.assert_allclose(pix, [4.0, 4.0], atol=1e-12)
    assert depth == pytest.approx(2.0)


def test_world_to_pixel_behind_camera():
    cam = make_camera(t=(0, 0, 0))
    with pytest.raises(ValueError):
        core.world_to_pixel(cam, (0, 0, -1.0))


def test_projection_matches_homogeneous_oracle():
    rng = np.random.default_rng(11)
    R = rotation_about([0.3, 1.0, -0.2], 0.8)
    cam = make_camera(width=64, height=48, f=70.0, R=R, t=(0.5, -0.2, -2.0))
    pts = rng.normal(scale=0.4, size=(200, 3))
    pix, depth, ok = core.project_points(cam, pts)
    # independent homogeneous-coordinates projection
    P = cam.K @ np.hstack([cam.R.T, -cam.R.T @ cam.t[:, None]])
    hom = P @ np.hstack([pts, np.ones((len(pts), 1))]).T
    ref = (hom[:2] / hom[2]).T
    np.testing.assert_allclose(pix[ok], ref[ok], atol=1e-9)


# ---------------------------------------------------------------------------
# PFM io


def test_pfm_roundtrip_1ch(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.normal(size=(6, 5)).astype(np.float32)
    core.write_pfm(tmp_path / "a.pfm", img)
    back = core.read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back, img)


def test_pfm_roundtrip_3ch(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.normal(size=(4, 7, 3)).astype(np.float32)
    core.write_pfm(tmp_path / "b.pfm", img)
    back = core.read_pfm(tmp_path / "b.pfm")
    np.testing.assert_array_equal(back, img)


def test_float_image_validation():
    with pytest.raises(DataError):
        core.FloatImage(width=2, height=2, channels=1, data=np.zeros((2, 3, 1)))
    bad = np.zeros((2, 2, 1), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        core.FloatImage(width=2, height=2, channels=1, data=bad)


# ---------------------------------------------------------------------------
# view loading


def write_view(tmp_path, cam, normal_cam, reflectance=None, uncertainty=None, mask=None, name="view.json"):
    core.write_pfm(tmp_path / "n.pfm", normal_cam.astype(np.float32))
    kwargs = {}
    if reflectance is not None:
        core.write_pfm(tmp_path / "r.pfm", reflectance.astype(np.float32))
        kwargs["reflectance_map"] = "r.pfm"
    if uncertainty is not None:
        core.write_pfm(tmp_path / "u.pfm", uncertainty.astype(np.float32))
        kwargs["uncertainty_map"] = "u.pfm"
    if mask is not None:
        core.write_pfm(tmp_path / "m.pfm", mask.astype(np.float32))
        kwargs["mask"] = "m.pfm"
    core.write_view_manifest(tmp_path / name, cam, "n.pfm", **kwargs)
    return tmp_path / name


def test_load_view_identity_pose(tmp_path):
    cam = make_camera(width=2, height=2)
    normal = np.zeros((2, 2, 3), dtype=np.float32)
    normal[:, :, 2] = -1.0
    path = write_view(tmp_path, cam, normal)
    view = core.load_view(path)
    samples = view.pixel_samples()
    assert len(samples) == 4
    # camera-frame (0,0,-1) under identity rotation stays (0,0,-1) in world
    np.testing.assert_allclose(view.normal_world[0, 0], [0, 0, -1], atol=1e-7)


def test_load_view_rotated_pose_matches_oracle(tmp_path):
    rng = np.random.default_rng(2)
    R = rotation_about([1.0, 0.4, 0.2], 1.1)
    cam = make_camera(width=4, height=3, R=R)
    normal = rng.normal(size=(3, 4, 3))
    normal /= np.linalg.norm(normal, axis=2, keepdims=True)
    path = write_view(tmp_path, cam, normal)
    view = core.load_view(path)
    for iy in range(3):
        for ix in range(4):
            ref = R @ (normal[iy, ix] / np.linalg.norm(normal[iy, ix]))
            np.testing.assert_allclose(view.normal_world[iy, ix], ref, atol=1e-6)
            assert abs(np.linalg.norm(view.normal_world[iy, ix]) - 1.0) < 1e-6


def test_load_view_dimension_mismatch(tmp_path):
    cam = make_camera(width=4, height=4)
    normal = np.zeros((2, 2, 3), dtype=np.float32)
    normal[:, :, 2] = -1.0
    path = write_view(tmp_path, cam, normal)
    with pytest.raises(DataError):
        core.load_view(path)


def test_load_view_nonfinite(tmp_path):
    cam = make_camera(width=2, height=2)
    normal = np.zeros((2, 2, 3), dtype=np.float32)
    normal[:, :, 2] = -1.0
    normal[0, 0, 0] = np.nan
    path = write_view(tmp_path, cam, normal)
    with pytest.raises(DataError):
        core.load_view(path)


def test_load_view_missing_file(tmp_path):
    cam = make_camera(width=2, height=2)
    core.write_view_manifest(tmp_path / "v.json", cam, "absent.pfm")
    with pytest.raises(DataError):
        core.load_view(tmp_path / "v.json")


def test_scene_normalization_roundtrip(tmp_path):
    cam = make_camera(width=2, height=2, t=(2.0, 1.0, -4.0))
    normal = np.zeros((2, 2, 3), dtype=np.float32)
    normal[:, :, 2] = -1.0
    write_view(tmp_path, cam, normal)
    bounds = core.SceneBounds(center=[2.0, 1.0, 0.0], radius=2.0)
    core.write_scene_manifest(tmp_path / "scene.json", ["view.json"], bounds)
    scene = core.load_scene(tmp_path / "scene.json")
    # camera moved into normalized frame: (t - c)/r
    np.testing.assert_allclose(scene.views[0].camera.t, [0, 0, -2.0])
    assert scene.bounds.radius == 1.0
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(scene.normalize_points(scene.denormalize_points(pts)), pts)
    np.testing.assert_allclose(scene.denormalize_points([[0, 0, 0]]), [[2.0, 1.0, 0.0]])
