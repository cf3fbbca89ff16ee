"""Shared geometric and image primitives plus the on-disk scene format.

Conventions fixed here and relied on everywhere else:

* Camera frame is right-handed with +z pointing into the scene (OpenCV
  style); the pose is world-from-camera, ``x_world = R @ x_cam + t``.
* Pixel centers sit at integer + 0.5.
* Normal maps are stored per-pixel in the camera frame; visible surface
  normals therefore have negative z. World normals are ``R @ n_cam``.
* Scenes are normalized at load so the declared bounding sphere maps to
  the unit sphere at the origin; meshes are mapped back on export.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "FloatImage",
    "Camera",
    "Ray",
    "PixelSample",
    "SceneBounds",
    "ViewData",
    "Scene",
    "read_pfm",
    "write_pfm",
    "generate_ray",
    "generate_rays",
    "world_to_pixel",
    "project_points",
    "intersect_sphere",
    "load_view",
    "load_scene",
    "write_view_manifest",
    "write_scene_manifest",
]


# ---------------------------------------------------------------------------
# basic types


@dataclass
class FloatImage:
    """Row-major float32 raster with 1 or 3 channels."""

    width: int
    height: int
    channels: int
    data: np.ndarray  # (height, width, channels) float32

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise DataError(f"FloatImage supports 1 or 3 channels, got {self.channels}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = (self.height, self.width, self.channels)
        if self.data.shape != expected:
            raise DataError(f"FloatImage data shape {self.data.shape} != {expected}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("FloatImage contains non-finite samples")

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(width=arr.shape[1], height=arr.shape[0], channels=arr.shape[2], data=arr)


@dataclass
class Camera:
    """Pinhole camera with world-from-camera pose."""

    K: np.ndarray  # (3,3)
    R: np.ndarray  # (3,3) rotation, world-from-camera
    t: np.ndarray  # (3,) camera center in world coordinates
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6):
            raise DataError("camera rotation is not orthonormal")
        if np.linalg.det(self.R) < 0:
            raise DataError("camera rotation has negative determinant")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise DataError("intrinsics need positive focal lengths")
        if abs(self.K[1, 0]) > 1e-12 or abs(self.K[2, 0]) > 1e-12 or abs(self.K[2, 1]) > 1e-12:
            raise DataError("intrinsics must be upper-triangular")

    @property
    def center(self):
        return self.t

    def to_dict(self):
        return {
            "K": self.K.reshape(-1).tolist(),
            "R": self.R.reshape(-1).tolist(),
            "t": self.t.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(K=d["K"], R=d["R"], t=d["t"], width=int(d["width"]), height=int(d["height"]))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    hits_bounds: bool = True

    def point_at(self, t):
        return self.origin + t * self.direction


@dataclass
class PixelSample:
    view_index: int
    pixel: tuple
    reflectance: float
    normal: np.ndarray  # unit, world frame
    uncertainty_deg: float
    masked: bool


@dataclass
class SceneBounds:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.radius = float(self.radius)
        if self.radius <= 0:
            raise DataError("scene bounds radius must be positive")

    def to_dict(self):
        return {"center": self.center.tolist(), "radius": self.radius}


# ---------------------------------------------------------------------------
# PFM rasters


def write_pfm(path, array):
    """Write a float32 raster as PFM (little-endian, bottom-up rows)."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise DataError(f"PFM supports 1 or 3 channels, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path):
    """Read a PFM raster to (H, W) or (H, W, 3) float32."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise DataError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = width * height * channels
        data = np.frombuffer(f.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
        if data.size != count:
            raise DataError(f"{path}: truncated PFM payload")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float32)


# ---------------------------------------------------------------------------
# rays and projection


def intersect_sphere(origins, directions, center, radius):
    """Clamped entry/exit parameters of rays against a sphere.

    Returns (t_near, t_far, hit) with t_near >= 0; ``hit`` is False when the
    ray line misses the sphere or exits behind the origin.
    """
    oc = origins - center
    b = np.sum(directions * oc, axis=-1)
    c0 = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c0
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    hit = hit & (t1 > 0.0)
    t_near = np.where(hit, np.maximum(t0, 0.0), 0.0)
    t_far = np.where(hit, t1, 0.0)
    return t_near, t_far, hit


def generate_rays(camera, pixels, bounds=None):
    """Rays through continuous pixel coordinates (N, 2).

    Returns (origins (N,3), directions (N,3), t_near (N,), t_far (N,),
    hits (N,)). Without bounds the range is [0, inf) and hits is all-True.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    ones = np.ones((pixels.shape[0], 1))
    hom = np.concatenate([pixels, ones], axis=1)
    d_cam = hom @ np.linalg.inv(camera.K).T
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    d_world = d_cam @ camera.R.T
    origins = np.broadcast_to(camera.t, d_world.shape).copy()
    if bounds is None:
        n = pixels.shape[0]
        return origins, d_world, np.zeros(n), np.full(n, np.inf), np.ones(n, dtype=bool)
    t_near, t_far, hit = intersect_sphere(origins, d_world, bounds.center, bounds.radius)
    return origins, d_world, t_near, t_far, hit


def generate_ray(camera, pixel, bounds=None):
    """Single-ray convenience wrapper around :func:`generate_rays`."""
    pixel = np.asarray(pixel, dtype=np.float64).reshape(2)
    if not (0.0 <= pixel[0] <= camera.width and 0.0 <= pixel[1] <= camera.height):
        raise ValueError(f"pixel {pixel} outside image bounds {camera.width}x{camera.height}")
    o, d, tn, tf, hit = generate_rays(camera, pixel[None], bounds)
    return Ray(origin=o[0], direction=d[0], t_near=float(tn[0]), t_far=float(tf[0]), hits_bounds=bool(hit[0]))


def project_points(camera, points):
    """Batch pinhole projection. Returns (pixels (N,2), depth (N,), in_front (N,))."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x_cam = (points - camera.t) @ camera.R
    depth = x_cam[:, 2]
    in_front = depth > 0.0
    p = x_cam @ camera.K.T
    safe = np.where(in_front, p[:, 2], 1.0)
    pixels = p[:, :2] / safe[:, None]
    return pixels, depth, in_front


def world_to_pixel(camera, point):
    """Project one world point; raises ValueError behind the camera."""
    pix, depth, ok = project_points(camera, np.asarray(point)[None])
    if not ok[0]:
        raise ValueError("point is behind the camera")
    return pix[0], float(depth[0])


# ---------------------------------------------------------------------------
# views and scenes


@dataclass
class ViewData:
    """One viewpoint with its maps; all arrays share the camera image size."""

    camera: Camera
    normal_cam: np.ndarray  # (H,W,3) stored camera-frame normals
    normal_world: np.ndarray  # (H,W,3) float64, unit where masked
    reflectance: np.ndarray  # (H,W) float64
    uncertainty_deg: np.ndarray  # (H,W) float64
    mask: np.ndarray  # (H,W) bool
    has_reflectance: bool = True
    has_uncertainty: bool = True
    has_mask: bool = True
    view_index: int = 0

    def pixel_samples(self):
        """Flat list of PixelSample records (small images / tests only)."""
        out = []
        h, w = self.mask.shape
        for iy in range(h):
            for ix in range(w):
                out.append(
                    PixelSample(
                        view_index=self.view_index,
                        pixel=(ix, iy),
                        reflectance=float(self.reflectance[iy, ix]),
                        normal=self.normal_world[iy, ix].copy(),
                        uncertainty_deg=float(self.uncertainty_deg[iy, ix]),
                        masked=bool(self.mask[iy, ix]),
                    )
                )
        return out


@dataclass
class Scene:
    views: list
    bounds: SceneBounds  # in normalized coordinates (unit sphere at origin)
    norm_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    norm_scale: float = 1.0  # original units per normalized unit

    def denormalize_points(self, pts):
        return np.asarray(pts) * self.norm_scale + self.norm_center

    def normalize_points(self, pts):
        return (np.asarray(pts) - self.norm_center) / self.norm_scale


def _load_raster(base_dir, rel_path, camera, channels, what):
    path = Path(base_dir) / rel_path
    if not path.exists():
        raise DataError(f"{what} raster missing: {path}")
    arr = read_pfm(path)
    got_c = 1 if arr.ndim == 2 else arr.shape[2]
    if (arr.shape[0], arr.shape[1]) != (camera.height, camera.width):
        raise DataError(
            f"{what} raster {path} is {arr.shape[1]}x{arr.shape[0]}, "
            f"camera expects {camera.width}x{camera.height}"
        )
    if got_c != channels:
        raise DataError(f"{what} raster {path} has {got_c} channels, expected {channels}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} raster {path} contains non-finite samples")
    return arr.astype(np.float64)


def load_view(manifest_path, view_index=0):
    """Load one view manifest plus its rasters into a validated ViewData."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"view manifest missing: {manifest_path}")
    with open(manifest_path) as f:
        doc = json.load(f)
    camera = Camera.from_dict(doc["camera"])
    base = manifest_path.parent

    normal_cam = _load_raster(base, doc["normal_map"], camera, 3, "normal")
    norms = np.linalg.norm(normal_cam, axis=2)
    nonzero = norms > 1e-8
    normal_cam[nonzero] /= norms[nonzero][:, None]

    if doc.get("mask"):
        mask = _load_raster(base, doc["mask"], camera, 1, "mask") > 0.5
        has_mask = True
    else:
        mask = nonzero.copy()
        has_mask = False

    if doc.get("reflectance_map"):
        reflectance = _load_raster(base, doc["reflectance_map"], camera, 1, "reflectance")
        has_reflectance = True
        if np.any(reflectance[mask] <= 0.0):
            raise DataError(f"{manifest_path}: non-positive reflectance inside the mask")
    else:
        reflectance = np.ones((camera.height, camera.width))
        has_reflectance = False

    if doc.get("uncertainty_map"):
        uncertainty = _load_raster(base, doc["uncertainty_map"], camera, 1, "uncertainty")
        has_uncertainty = True
    else:
        uncertainty = np.zeros((camera.height, camera.width))
        has_uncertainty = False

    normal_world = np.einsum("ij,hwj->hwi", camera.R, normal_cam)

    return ViewData(
        camera=camera,
        normal_cam=normal_cam.astype(np.float32),
        normal_world=normal_world,
        reflectance=reflectance,
        uncertainty_deg=uncertainty,
        mask=mask,
        has_reflectance=has_reflectance,
        has_uncertainty=has_uncertainty,
        has_mask=has_mask,
        view_index=view_index,
    )


def _auto_bounds(cameras):
    """Least-squares intersection of principal rays; radius from camera span."""
    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    for cam in cameras:
        d = cam.R[:, 2]
        P = np.eye(3) - np.outer(d, d)
        A += P
        rhs += P @ cam.t
    center = np.linalg.solve(A, rhs)
    dists = [np.linalg.norm(cam.t - center) for cam in cameras]
    return SceneBounds(center=center, radius=0.4 * float(np.median(dists)))


def load_scene(scene_path, normalize=True):
    """Load a scene manifest and normalize it into the unit bounding sphere."""
    scene_path = Path(scene_path)
    if not scene_path.exists():
        raise DataError(f"scene manifest missing: {scene_path}")
    with open(scene_path) as f:
        doc = json.load(f)
    view_paths = doc["views"]
    if not view_paths:
        raise DataError(f"{scene_path}: scene has no views")
    views = [load_view(scene_path.parent / p, view_index=i) for i, p in enumerate(view_paths)]

    if doc.get("bounds"):
        bounds = SceneBounds(center=doc["bounds"]["center"], radius=doc["bounds"]["radius"])
    else:
        bounds = _auto_bounds([v.camera for v in views])

    if normalize:
        c, s = bounds.center, bounds.radius
        for v in views:
            v.camera = Camera(
                K=v.camera.K,
                R=v.camera.R,
                t=(v.camera.t - c) / s,
                width=v.camera.width,
                height=v.camera.height,
            )
        norm_bounds = SceneBounds(center=np.zeros(3), radius=1.0)
        return Scene(views=views, bounds=norm_bounds, norm_center=c, norm_scale=s)
    return Scene(views=views, bounds=bounds, norm_center=np.zeros(3), norm_scale=1.0)


def write_view_manifest(path, camera, normal_map, reflectance_map=None, uncertainty_map=None, mask=None):
    doc = {"camera": camera.to_dict(), "normal_map": str(normal_map)}
    if reflectance_map:
        doc["reflectance_map"] = str(reflectance_map)
    if uncertainty_map:
        doc["uncertainty_map"] = str(uncertainty_map)
    if mask:
        doc["mask"] = str(mask)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def write_scene_manifest(path, view_manifest_names, bounds=None):
    doc = {"views": [str(p) for p in view_manifest_names]}
    if bounds is not None:
        doc["bounds"] = bounds.to_dict()
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
