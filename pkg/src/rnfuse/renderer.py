"""Volume rendering of radiance triplets from SDF + albedo fields.

Weights follow the occlusion-aware discrete scheme built from logistic
CDF ratios of consecutive SDF samples:

    alpha_i = max((Phi_s(f_i) - Phi_s(f_{i+1})) / Phi_s(f_i), 0)
    T_i     = prod_{j<i} (1 - alpha_j)
    w_i     = T_i * alpha_i

The rendered triplet is sum_i w_i * rho(x_i) * (grad f(x_i) . l) per light;
the gradient is deliberately not normalized (the eikonal term drives it to
unit length) and radiance is never clamped, so negative self-shadowing
channels survive exactly as the inputs simulate them.

Everything exists twice: plain numpy for the single-ray API, importance
sampling and test oracles, and tape ops for training. A cross-check test
keeps the two in lockstep.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import fastops

__all__ = [
    "SharpnessParam",
    "RaySampleSet",
    "stratified_ts",
    "sample_pdf",
    "sample_ray_ts",
    "sample_ray",
    "alpha_from_sdf",
    "weights_from_alpha",
    "compute_weights",
    "render_triplets",
    "render_radiance",
    "eikonal_term",
    "mask_opacity",
    "dump_samples",
    "tape_render_batch",
    "tape_opacity_batch",
]

_UPSAMPLE_S = 64.0  # sharpness ladder base for importance placement
_T_FLOOR = 1e-12  # keeps the transmittance cumprod differentiable


@dataclass
class SharpnessParam:
    """Trainable inverse width of the logistic density, stored as log(s)."""

    log_s: float

    @classmethod
    def from_s(cls, s):
        if s <= 0:
            raise ValueError("sharpness must be positive")
        return cls(log_s=math.log(s))

    @property
    def s(self):
        return math.exp(self.log_s)


@dataclass
class RaySampleSet:
    """Samples along one ray with whatever stages have been filled in."""

    ray: object
    t: np.ndarray  # (S,) strictly increasing
    delta: np.ndarray  # (S,) section lengths
    sdf: np.ndarray = None  # (S,)
    grad: np.ndarray = None  # (S,3)
    albedo: np.ndarray = None  # (S,)
    weights: np.ndarray = None  # (S,)

    @property
    def points(self):
        return self.ray.origin[None, :] + self.t[:, None] * self.ray.direction[None, :]


# ---------------------------------------------------------------------------
# sampling


def stratified_ts(t_near, t_far, count, rng=None):
    """One coarse sample per stratum of [t_near, t_far]; rows are rays."""
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    b = t_near.shape[0]
    jitter = rng.random((b, count)) if rng is not None else np.full((b, count), 0.5)
    grid = (np.arange(count) + jitter) / count
    return t_near[:, None] + (t_far - t_near)[:, None] * grid


def sample_pdf(ts, interval_weights, n_new):
    """Deterministic inverse-CDF draw of n_new parameters per ray."""
    w = interval_weights + 1e-5
    pdf = w / w.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((len(w), 1)), np.cumsum(pdf, axis=1)], axis=1)
    u = (np.arange(n_new) + 0.5) / n_new
    inds = np.sum(cdf[:, None, :] < u[None, :, None], axis=2)  # first bin with cdf >= u
    below = np.clip(inds - 1, 0, cdf.shape[1] - 1)
    above = np.clip(inds, 0, cdf.shape[1] - 1)
    cdf_b = np.take_along_axis(cdf, below, axis=1)
    cdf_a = np.take_along_axis(cdf, above, axis=1)
    t_b = np.take_along_axis(ts, np.clip(below, 0, ts.shape[1] - 1), axis=1)
    t_a = np.take_along_axis(ts, np.clip(above, 0, ts.shape[1] - 1), axis=1)
    denom = np.where(cdf_a - cdf_b < 1e-10, 1.0, cdf_a - cdf_b)
    frac = (u[None, :] - cdf_b) / denom
    return t_b + frac * (t_a - t_b)


def sample_ray_ts(origins, dirs, t_near, t_far, sdf_value_fn, coarse_count, importance_rounds, importance_count, rng=None):
    """Hierarchical sample parameters (B, S_total) along a ray batch.

    Importance rounds place extra samples by inverse-CDF against weight
    estimates computed at a fixed sharpness ladder (doubling per round),
    which stays reliable while the trained sharpness is still soft. SDF
    values are cached between rounds so each point is evaluated once.
    """
    ts = np.sort(stratified_ts(t_near, t_far, coarse_count, rng), axis=1)
    f = None
    for round_idx in range(importance_rounds):
        if f is None:
            f = sdf_value_fn(_ray_points(origins, dirs, ts)).reshape(ts.shape)
        alpha = alpha_from_sdf(f, _UPSAMPLE_S * 2.0**round_idx)
        w = weights_from_alpha(alpha)
        new_ts = sample_pdf(ts, w[:, :-1], importance_count)
        new_f = sdf_value_fn(_ray_points(origins, dirs, new_ts)).reshape(new_ts.shape)
        ts = np.concatenate([ts, new_ts], axis=1)
        f = np.concatenate([f, new_f], axis=1)
        order = np.argsort(ts, axis=1)
        ts = np.take_along_axis(ts, order, axis=1)
        f = np.take_along_axis(f, order, axis=1)
    return ts


def _ray_points(origins, dirs, ts):
    return (origins[:, None, :] + ts[..., None] * dirs[:, None, :]).reshape(-1, 3)


def sample_ray(ray, coarse_count, importance_rounds, field, rng=None, importance_count=16, albedo_field=None):
    """Sample one ray against a field exposing value(x) and jet(x)."""
    ts = sample_ray_ts(
        ray.origin[None],
        ray.direction[None],
        np.array([ray.t_near]),
        np.array([ray.t_far]),
        field.value,
        coarse_count,
        importance_rounds,
        importance_count,
        rng,
    )[0]
    delta = np.diff(ts, append=ray.t_far)
    pts = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
    sdf, grad = field.jet(pts)
    albedo = albedo_field.value(pts) if albedo_field is not None else None
    return RaySampleSet(ray=ray, t=ts, delta=delta, sdf=sdf, grad=grad, albedo=albedo)


# ---------------------------------------------------------------------------
# weights and rendering (numpy)


def alpha_from_sdf(f, s):
    """Discrete opacities from consecutive SDF samples, (B, S); last is 0.

    The 1e-30 in the denominator only guards the 0/0 that appears deep
    inside the surface once the sigmoid underflows; transmittance is
    already extinct there, so those weights are zero either way.
    """
    phi = _sigmoid(s * f)
    alpha = np.zeros_like(f)
    alpha[:, :-1] = np.maximum((phi[:, :-1] - phi[:, 1:]) / (phi[:, :-1] + 1e-30), 0.0)
    return alpha


def weights_from_alpha(alpha):
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans = np.roll(trans, 1, axis=1)
    trans[:, 0] = 1.0
    return trans * alpha


def _sigmoid(z):
    return fastops.sigmoid(z)


def compute_weights(sample_set, sharpness):
    """Fill and return occlusion-aware weights for one sample set."""
    if sample_set.sdf is None:
        raise ValueError("sample set has no SDF values")
    alpha = alpha_from_sdf(sample_set.sdf[None], sharpness.s)[0]
    sample_set.weights = weights_from_alpha(alpha[None])[0]
    return sample_set.weights


def render_triplets(weights, albedo, grads, lights):
    """Batch render: weights (B,S), albedo (B,S), grads (B,S,3), lights (B,3,3)."""
    dots = np.einsum("bsj,blj->bsl", grads, lights)
    return np.sum(weights[:, :, None] * albedo[:, :, None] * dots, axis=1)


def render_radiance(sample_set, albedo_field, triplet):
    """Radiance triplet for one ray; evaluates the albedo field at samples."""
    from .reparam import RadianceTriplet

    if sample_set.weights is None:
        raise ValueError("compute_weights must run before rendering")
    if sample_set.albedo is None:
        sample_set.albedo = albedo_field.value(sample_set.points)
    v = render_triplets(
        sample_set.weights[None],
        sample_set.albedo[None],
        sample_set.grad[None],
        triplet.L[None],
    )[0]
    return RadianceTriplet(v=v)


def eikonal_term(sample_sets):
    """Mean over every sample of (||grad f||^2 - 1)^2."""
    sq = [np.sum(s.grad**2, axis=1) for s in sample_sets]
    all_sq = np.concatenate(sq)
    return float(np.mean((all_sq - 1.0) ** 2))


def mask_opacity(sample_set):
    """Accumulated opacity of one ray, for mask supervision."""
    if sample_set.weights is None:
        raise ValueError("compute_weights must run before mask_opacity")
    return float(sample_set.weights.sum())


def dump_samples(sample_set, path):
    """Debug CSV of one ray: t, f, ||grad f||, rho, w."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sdf", "grad_norm", "albedo", "weight"])
        for i in range(len(sample_set.t)):
            writer.writerow(
                [
                    f"{sample_set.t[i]:.9g}",
                    f"{sample_set.sdf[i]:.9g}" if sample_set.sdf is not None else "",
                    f"{np.linalg.norm(sample_set.grad[i]):.9g}" if sample_set.grad is not None else "",
                    f"{sample_set.albedo[i]:.9g}" if sample_set.albedo is not None else "",
                    f"{sample_set.weights[i]:.9g}" if sample_set.weights is not None else "",
                ]
            )


# ---------------------------------------------------------------------------
# tape rendering (training)


def _tape_weights(f, s_tensor):
    """Opacities/weights on the tape; f is a (B,S) tensor."""
    s = ad.exp(s_tensor)
    phi = ad.sigmoid(ad.mul(f, s))
    head = ad.slice_(phi, (slice(None), slice(None, -1)))
    tail = ad.slice_(phi, (slice(None), slice(1, None)))
    alpha = ad.maximum0(ad.div(ad.sub(head, tail), ad.add(head, 1e-30)))  # (B, S-1)
    trans = ad.exclusive_cumprod(ad.add(ad.sub(1.0, alpha), _T_FLOOR), axis=1)
    return ad.mul(trans, alpha)


def tape_render_batch(origins, dirs, ts, sdf_field, sdf_tensors, albedo_field, albedo_tensors, s_tensor, lights):
    """Differentiable render of a ray batch.

    Returns dict with tensors: 'v' (B,3) radiance triplets, 'opacity' (B,),
    'eikonal' scalar mean over all samples, plus detached diagnostics.
    """
    b, snum = ts.shape
    dtype = sdf_tensors[0].value.dtype
    pts = _ray_points(origins, dirs, ts).astype(dtype)

    enc = sdf_field.encode(pts, dtype)
    shared = sdf_field.encoding_config == albedo_field.encoding_config

    value, grad = sdf_field.tape_jet(pts, sdf_tensors, enc=enc)
    f = ad.reshape(value, (b, snum))
    w = _tape_weights(f, s_tensor)  # (B, S-1)

    rho = albedo_field.tape_value(pts, albedo_tensors, enc=enc if shared else None)
    rho = ad.slice_(ad.reshape(rho, (b, snum)), (slice(None), slice(None, -1)))

    grads3 = ad.reshape(grad, (b, snum, 3))
    dots = ad.dot_lights(ad.slice_(grads3, (slice(None), slice(None, -1), slice(None))), lights.astype(dtype))
    contrib = ad.mul(ad.reshape(ad.mul(w, rho), (b, snum - 1, 1)), dots)
    v = ad.sum_(contrib, axis=1)  # (B, 3)

    grad_sq = ad.sum_(ad.square(grads3), axis=2)
    eikonal = ad.mean(ad.square(ad.sub(grad_sq, 1.0)))

    opacity = ad.sum_(w, axis=1)
    return {"v": v, "opacity": opacity, "eikonal": eikonal, "weights": w, "sdf": f}


def tape_opacity_batch(origins, dirs, ts, sdf_field, sdf_tensors, s_tensor):
    """Opacity-only render used for mask supervision (no jets, cheaper)."""
    b, snum = ts.shape
    dtype = sdf_tensors[0].value.dtype
    pts = _ray_points(origins, dirs, ts).astype(dtype)
    value = sdf_field.tape_value(pts, sdf_tensors)
    f = ad.reshape(value, (b, snum))
    w = _tape_weights(f, s_tensor)
    return ad.sum_(w, axis=1)
