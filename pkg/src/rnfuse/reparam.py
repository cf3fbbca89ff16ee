"""Joint re-parameterization of (reflectance, normal) into radiance triplets.

A pixel's reflectance r and unit normal n are mapped to three Lambertian
radiances v = r * L @ n, where the rows of L are illumination directions.
With non-singular L the map is a bijection: r = ||L^-1 v|| and
n = L^-1 v / r. Radiances may be negative (self-shadowing); no clamping
happens anywhere on this path.

The default triplet is the minimum-uncertainty configuration: three lights
equally spaced 120 degrees apart in tilt at constant slant arccos(1/sqrt(3))
from the normal. Storing the slant exactly (rather than the rounded 54.74
degrees) makes L orthogonal to machine precision, so its condition number
is exactly 1 and L^-1 = L^T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SLANT_COS",
    "SLANT_SIN",
    "LightingTriplet",
    "RadianceTriplet",
    "canonical_triplet",
    "optimal_triplet",
    "optimal_triplets",
    "rotations_to_normals",
    "simulate_radiance",
    "simulate_radiance_batch",
    "invert_radiance",
    "invert_radiance_batch",
]

SLANT_COS = 1.0 / math.sqrt(3.0)
SLANT_SIN = math.sqrt(2.0 / 3.0)

_TILT = 2.0 * math.pi / 3.0  # 120 degrees

_CANONICAL = np.array(
    [
        [SLANT_SIN * math.cos(i * _TILT), SLANT_SIN * math.sin(i * _TILT), SLANT_COS]
        for i in range(3)
    ]
)
_CANONICAL.setflags(write=False)


@dataclass
class LightingTriplet:
    """3x3 illumination matrix whose rows are light directions, plus inverse."""

    L: np.ndarray
    L_inv: np.ndarray

    @classmethod
    def from_matrix(cls, L):
        L = np.asarray(L, dtype=np.float64).reshape(3, 3)
        det = np.linalg.det(L)
        if abs(det) < 1e-12:
            raise ValueError("illumination matrix is singular")
        return cls(L=L, L_inv=np.linalg.inv(L))


@dataclass
class RadianceTriplet:
    """Three simulated radiances; negative entries are legitimate."""

    v: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.v)):
            raise ValueError("radiance triplet contains non-finite values")


def canonical_triplet():
    """Optimal triplet for the reference normal e_z (rows are lights)."""
    return LightingTriplet(L=_CANONICAL.copy(), L_inv=_CANONICAL.T.copy())


def rotations_to_normals(normals):
    """Shortest-arc rotations taking e_z to each unit normal, (N, 3, 3).

    The antipode n = -e_z falls back to a 180-degree turn about e_x. The
    tangent frame this picks only spins the lights about n, which the
    triplet's optimality is invariant to.
    """
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(n)):
        raise ValueError("non-finite normal")
    norms = np.linalg.norm(n, axis=1)
    if np.any(norms < 1e-8):
        raise ValueError("zero-length normal")
    n = n / norms[:, None]

    # Rodrigues with axis k = e_z x n, using 1/(1+cos) to stay stable
    cos = n[:, 2]
    kx = -n[:, 1]
    ky = n[:, 0]
    R = np.zeros((len(n), 3, 3))
    regular = cos > -1.0 + 1e-12
    f = np.where(regular, 1.0 / (1.0 + np.where(regular, cos, 0.0)), 0.0)
    R[:, 0, 0] = 1.0 - f * ky * ky
    R[:, 0, 1] = f * kx * ky
    R[:, 0, 2] = ky
    R[:, 1, 0] = f * kx * ky
    R[:, 1, 1] = 1.0 - f * kx * kx
    R[:, 1, 2] = -kx
    R[:, 2, 0] = -ky
    R[:, 2, 1] = kx
    R[:, 2, 2] = cos
    R[~regular] = np.diag([1.0, -1.0, -1.0])
    return R


def optimal_triplets(normals):
    """Per-normal optimal lighting matrices L = R(n) @ L_canonic, (N, 3, 3)."""
    R = rotations_to_normals(normals)
    # rows l_i = R @ l_canon_i  -> L = L_canon @ R^T
    return np.einsum("ir,nkr->nik", _CANONICAL, R)


def optimal_triplet(normal):
    """Optimal triplet rotated so the canonical axis lands on ``normal``."""
    L = optimal_triplets(np.asarray(normal).reshape(1, 3))[0]
    return LightingTriplet(L=L, L_inv=L.T.copy())


def simulate_radiance_batch(r, normals, L):
    """v = r * L @ n for stacked inputs: r (N,), normals (N,3), L (N,3,3)."""
    r = np.asarray(r, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    return r[:, None] * np.einsum("nij,nj->ni", L, normals)


def simulate_radiance(r, normal, triplet):
    """Radiance triplet simulated from one (reflectance, normal) pair."""
    r = float(r)
    if not math.isfinite(r):
        raise ValueError("reflectance must be finite")
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    return RadianceTriplet(v=r * (triplet.L @ n))


def invert_radiance_batch(v, L_inv):
    """Exact inverse of the simulation: returns (r (N,), normals (N,3)).

    Entries with ||L^-1 v|| below 1e-12 are flagged degenerate (third
    return value) and their normals are left as zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.einsum("nij,nj->ni", L_inv, v)
    r = np.linalg.norm(u, axis=1)
    good = r > 1e-12
    n = np.zeros_like(u)
    n[good] = u[good] / r[good][:, None]
    return r, n, ~good


def invert_radiance(triplet_v, triplet):
    """Recover (r, n) from one radiance triplet; raises on degeneracy."""
    v = triplet_v.v if isinstance(triplet_v, RadianceTriplet) else np.asarray(triplet_v, dtype=np.float64)
    u = triplet.L_inv @ v.reshape(3)
    r = float(np.linalg.norm(u))
    if r <= 1e-12:
        raise ValueError("degenerate radiance triplet (reflectance underflow)")
    return r, u / r
