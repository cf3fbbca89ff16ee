"""Parametric SDF and albedo fields.

Both fields are small MLPs over a sinusoidal positional encoding, with a
smooth softplus activation so the SDF stays C^1. The spatial gradient of
the SDF is produced by an explicit reverse sweep written in tape
operations: it is exact to machine precision, and because the sweep itself
lives on the tape, losses that depend on the gradient (shading, eikonal)
backpropagate through it with exact second-order terms.

Parameters are held as one flat float64 vector per field; the tape works
on per-layer views cast to the training dtype.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fastops
from .errors import DataError

__all__ = [
    "EncodingConfig",
    "Encoding",
    "Jet",
    "SdfField",
    "AlbedoField",
    "eval_sdf_jet",
    "eval_albedo",
    "backprop",
    "save_checkpoint",
    "load_checkpoint",
]

ACT_BETA = 100.0  # softplus sharpness; near-ReLU but C-infinity

_CHECKPOINT_MAGIC = b"RNF1"


@dataclass
class EncodingConfig:
    num_frequencies: int = 6
    include_input: bool = True

    def __post_init__(self):
        if self.num_frequencies < 0:
            raise ValueError("num_frequencies must be >= 0")


class Encoding:
    """Sinusoidal features [x, sin(2^o x), cos(2^o x)] with exact jacobian."""

    def __init__(self, config):
        self.config = config
        self.freqs = 2.0 ** np.arange(config.num_frequencies, dtype=np.float64)
        self.dim = (3 if config.include_input else 0) + 6 * config.num_frequencies

    def forward(self, x):
        """Features (N, dim) plus a cache for jacobian products."""
        x = np.ascontiguousarray(x)
        n = x.shape[0]
        freqs = self.freqs.astype(x.dtype)
        phase = x[:, None, :] * freqs[:, None]
        sin_p = np.sin(phase)
        cos_p = np.cos(phase)
        parts = []
        if self.config.include_input:
            parts.append(x)
        if len(freqs):
            parts.append(sin_p.reshape(n, -1))
            parts.append(cos_p.reshape(n, -1))
        feats = np.concatenate(parts, axis=1) if parts else np.zeros((n, 0), dtype=x.dtype)
        # d sin(fx)/dx = f cos(fx), d cos(fx)/dx = -f sin(fx)
        cache = (freqs[:, None] * cos_p, -freqs[:, None] * sin_p)
        return feats, cache

    def vjp_tensor(self, delta, cache):
        """Tape op computing J_enc(x)^T @ delta -> (N, 3); linear in delta."""
        dsin, dcos = cache
        nf = self.config.num_frequencies
        off = 3 if self.config.include_input else 0

        def apply(d):
            n = d.shape[0]
            out = d[:, :3].copy() if self.config.include_input else np.zeros((n, 3), dtype=d.dtype)
            if nf:
                out += (d[:, off : off + 3 * nf].reshape(n, nf, 3) * dsin).sum(axis=1)
                out += (d[:, off + 3 * nf :].reshape(n, nf, 3) * dcos).sum(axis=1)
            return out

        def vjp(up):
            n = up.shape[0]
            parts = []
            if self.config.include_input:
                parts.append(up)
            if nf:
                parts.append((up[:, None, :] * dsin).reshape(n, -1))
                parts.append((up[:, None, :] * dcos).reshape(n, -1))
            return (np.concatenate(parts, axis=1),)

        return ad.Tensor(apply(delta.value), (delta,), vjp)


def _init_layers(rng, dims):
    """He-style init for softplus layers."""
    layers = []
    for din, dout in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
        layers.append((w, np.zeros(dout)))
    return layers


class _MlpField:
    """Flat-parameter MLP with layer views; subclasses fix output maps."""

    def __init__(self, hidden, width, encoding, seed):
        self.encoding_config = encoding or EncodingConfig()
        self.encoding = Encoding(self.encoding_config)
        self.dims = [self.encoding.dim] + [width] * hidden + [1]
        self._seed = seed
        self._layout = []
        offset = 0
        for din, dout in zip(self.dims[:-1], self.dims[1:]):
            self._layout.append((offset, (din, dout)))
            offset += din * dout
            self._layout.append((offset, (dout,)))
            offset += dout
        self.params = np.zeros(offset)

    @property
    def num_params(self):
        return self.params.size

    def _views(self, flat=None):
        flat = self.params if flat is None else flat
        out = []
        for off, shape in self._layout:
            out.append(flat[off : off + int(np.prod(shape))].reshape(shape))
        return out

    def set_layers(self, layers):
        views = self._views()
        for i, (w, b) in enumerate(layers):
            views[2 * i][:] = w
            views[2 * i + 1][:] = b

    def tape_params(self, dtype=np.float64):
        """Leaf tensors for one optimization step, cast to ``dtype``."""
        return [ad.param(v.astype(dtype)) for v in self._views()]

    def flat_grad(self, tensors):
        out = np.zeros(self.num_params)
        for (off, shape), t in zip(self._layout, tensors):
            if t.grad is not None:
                out[off : off + int(np.prod(shape))] = t.grad.reshape(-1)
        return out

    # --- plain numpy forward (sampling, extraction, oracles) ---

    def encode(self, x, dtype=np.float64):
        """Shareable encoding pass; feed the result to eval methods as enc=."""
        return self.encoding.forward(np.asarray(x, dtype=dtype))

    def _forward_raw(self, x, params=None, enc=None):
        views = self._views(params)
        a = enc[0] if enc is not None else self.encoding.forward(np.asarray(x))[0]
        last = len(self.dims) - 2
        for i in range(last + 1):
            w, b = views[2 * i], views[2 * i + 1]
            a = a @ w.astype(a.dtype) + b.astype(a.dtype)
            if i < last:
                a = fastops.softplus_val(a, ACT_BETA)
        return a[:, 0]

    def _jet_raw(self, x, params=None, enc=None):
        views = self._views(params)
        x = np.asarray(x, dtype=np.float64)
        feats, cache = enc if enc is not None else self.encoding.forward(x)
        last = len(self.dims) - 2
        a = feats
        sigs = []
        for i in range(last):
            w, b = views[2 * i], views[2 * i + 1]
            a, sig = fastops.softplus_pair(a @ w + b, ACT_BETA)
            sigs.append(sig)
        w_out, b_out = views[2 * last], views[2 * last + 1]
        value = (a @ w_out + b_out)[:, 0]
        delta = np.broadcast_to(w_out[:, 0], (x.shape[0], w_out.shape[0]))
        for i in range(last - 1, -1, -1):
            delta = (delta * sigs[i]) @ views[2 * i].T
        nf = self.encoding_config.num_frequencies
        off = 3 if self.encoding_config.include_input else 0
        dsin, dcos = cache
        grad = delta[:, :3].copy() if off else np.zeros((x.shape[0], 3))
        if nf:
            n = x.shape[0]
            grad += (delta[:, off : off + 3 * nf].reshape(n, nf, 3) * dsin).sum(axis=1)
            grad += (delta[:, off + 3 * nf :].reshape(n, nf, 3) * dcos).sum(axis=1)
        return value, grad

    # --- tape forward ---

    def _tape_trunk(self, x, tensors, enc=None):
        dtype = tensors[0].value.dtype
        feats, cache = enc if enc is not None else self.encoding.forward(np.asarray(x, dtype=dtype))
        last = len(self.dims) - 2
        a = ad.constant(feats)
        sigs = []
        for i in range(last):
            z = ad.add(ad.matmul(a, tensors[2 * i]), tensors[2 * i + 1])
            a, sig = _softplus_pair_op(z, ACT_BETA)
            sigs.append(sig)
        raw = ad.add(ad.matmul(a, tensors[2 * last]), tensors[2 * last + 1])
        return ad.reshape(raw, (-1,)), sigs, cache

    def tape_value(self, x, tensors, enc=None):
        value, _, _ = self._tape_trunk(x, tensors, enc)
        return value

    def tape_jet(self, x, tensors, enc=None):
        """(value (N,), spatial gradient (N,3)) with the sweep on the tape."""
        value, sigs, cache = self._tape_trunk(x, tensors, enc)
        last = len(self.dims) - 2
        n = value.value.shape[0]
        ones = ad.constant(np.ones((n, 1), dtype=tensors[0].value.dtype))
        delta = ad.matmul(ones, tensors[2 * last], transpose_b=True)
        for i in range(last - 1, -1, -1):
            delta = ad.mul(delta, sigs[i])
            delta = ad.matmul(delta, tensors[2 * i], transpose_b=True)
        grad = self.encoding.vjp_tensor(delta, cache)
        return value, grad


def _softplus_pair_op(z, beta):
    """Activation and its derivative as sibling tape nodes off one kernel."""
    act_v, sig_v = fastops.softplus_pair(z.value, beta)

    def vjp_act(g):
        return (g * sig_v,)

    def vjp_sig(g):
        return (g * (beta * sig_v * (1.0 - sig_v)),)

    return ad.Tensor(act_v, (z,), vjp_act), ad.Tensor(sig_v, (z,), vjp_sig)


@dataclass
class Jet:
    value: float
    spatial_gradient: np.ndarray


class SdfField(_MlpField):
    """Signed-distance MLP, geometrically initialized to a centered sphere."""

    def __init__(self, hidden=4, width=64, encoding=None, geometric_init=True, init_radius=0.5, seed=0):
        super().__init__(hidden, width, encoding, seed)
        self.geometric_init = geometric_init
        self.init_radius = init_radius
        rng = np.random.default_rng(seed)
        layers = _init_layers(rng, self.dims)
        if geometric_init:
            # smooth random features from the raw coordinates only (encoded
            # columns silenced so the start is low-frequency), then the
            # linear output layer is least-squares fit to ||x|| - r
            for i, (w, b) in enumerate(layers[:-1]):
                dout = w.shape[1]
                w[:] = rng.normal(0.0, np.sqrt(2.0 / dout), size=w.shape)
                if i == 0 and self.encoding_config.include_input:
                    keep = w[:3].copy()
                    w[:] = 0.0
                    w[:3] = keep
        self.set_layers(layers)
        if geometric_init:
            self._fit_output_to_sphere(init_radius, rng)

    def _fit_output_to_sphere(self, radius, rng):
        pts = rng.uniform(-1.2, 1.2, size=(8192, 3))
        target = np.linalg.norm(pts, axis=1) - radius
        views = self._views()
        a, _ = self.encoding.forward(pts)
        for i in range(len(self.dims) - 2):
            a = fastops.softplus_val(a @ views[2 * i] + views[2 * i + 1], ACT_BETA)
        A = np.hstack([a, np.ones((len(pts), 1))])
        theta, *_ = np.linalg.lstsq(A, target, rcond=1e-8)
        views[-2][:, 0] = theta[:-1]
        views[-1][:] = theta[-1]

    def value(self, x, params=None):
        return self._forward_raw(x, params)

    def jet(self, x, params=None):
        return self._jet_raw(x, params)


class AlbedoField(_MlpField):
    """Non-negative albedo MLP; positivity via a final softplus map."""

    def __init__(self, hidden=3, width=64, encoding=None, init_value=0.7, seed=1):
        super().__init__(hidden, width, encoding, seed)
        rng = np.random.default_rng(seed)
        layers = _init_layers(rng, self.dims)
        w, b = layers[-1]
        w[:] = rng.normal(0.0, 1e-4, size=w.shape)
        b[:] = np.log(np.expm1(init_value))  # softplus^-1
        self.set_layers(layers)

    def value(self, x, params=None):
        return fastops.softplus_val(self._forward_raw(x, params), 1.0)

    def tape_value(self, x, tensors, enc=None):
        return ad.softplus(super().tape_value(x, tensors, enc), 1.0)


def eval_sdf_jet(field, x):
    """Value and exact spatial gradient of the SDF at one point."""
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite evaluation point")
    v, g = field.jet(x)
    return Jet(value=float(v[0]), spatial_gradient=g[0])


def eval_albedo(field, x):
    """Albedo at one point; non-negative by construction."""
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite evaluation point")
    return float(field.value(x)[0])


def backprop(loss, field_tensor_pairs):
    """Gradient of a scalar tape node w.r.t. each field's flat parameters.

    ``field_tensor_pairs`` is a list of (field, tape_params tensors). Returns
    one float64 vector per field. Raises ValueError if ``loss`` is not scalar.
    """
    ad.backward(loss)
    return [field.flat_grad(tensors) for field, tensors in field_tensor_pairs]


# ---------------------------------------------------------------------------
# checkpoints


def _field_descriptor(field):
    return {
        "hidden": len(field.dims) - 2,
        "width": field.dims[1],
        "num_frequencies": field.encoding_config.num_frequencies,
        "include_input": field.encoding_config.include_input,
    }


def save_checkpoint(path, sdf_field, albedo_field, sharpness_log, iteration):
    header = {
        "version": 1,
        "sdf": _field_descriptor(sdf_field),
        "albedo": _field_descriptor(albedo_field),
        "sharpness_log": float(sharpness_log),
        "iteration": int(iteration),
        "sdf_params": sdf_field.num_params,
        "albedo_params": albedo_field.num_params,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(sdf_field.params.astype("<f8").tobytes())
        f.write(albedo_field.params.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint (magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        sdf_desc = header["sdf"]
        alb_desc = header["albedo"]
        sdf = SdfField(
            hidden=sdf_desc["hidden"],
            width=sdf_desc["width"],
            encoding=EncodingConfig(sdf_desc["num_frequencies"], sdf_desc["include_input"]),
            geometric_init=False,
        )
        albedo = AlbedoField(
            hidden=alb_desc["hidden"],
            width=alb_desc["width"],
            encoding=EncodingConfig(alb_desc["num_frequencies"], alb_desc["include_input"]),
        )
        sdf_raw = f.read(header["sdf_params"] * 8)
        alb_raw = f.read(header["albedo_params"] * 8)
        if len(sdf_raw) != header["sdf_params"] * 8 or len(alb_raw) != header["albedo_params"] * 8:
            raise DataError(f"{path}: truncated checkpoint payload")
        sdf.params[:] = np.frombuffer(sdf_raw, dtype="<f8")
        albedo.params[:] = np.frombuffer(alb_raw, dtype="<f8")
    return sdf, albedo, header["sharpness_log"], header["iteration"]
