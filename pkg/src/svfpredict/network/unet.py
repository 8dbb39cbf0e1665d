"""Attribute decoder + U-Net predicting a stationary velocity field."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..attributes import AttributeNormalizer, AttributeVector
from ..fields import Grid, ScalarImage, VectorField
from . import layers


@dataclass(frozen=True)
class NetConfig:
    levels: int = 3
    base_channels: int = 16
    max_channels: int = 64
    attribute_embed_channels: int = 4
    use_attributes: bool = True
    velocity_resolution: str = "full"
    leaky_slope: float = 0.2
    final_init_scale: float = 1e-3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_channels < 1 or self.max_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.use_attributes and self.attribute_embed_channels < 1:
            raise ValueError("attribute_embed_channels must be >= 1 when attributes are used")
        if self.velocity_resolution not in ("full", "half"):
            raise ValueError("velocity_resolution must be 'full' or 'half'")
        if self.velocity_resolution == "half" and self.levels < 2:
            raise ValueError("half-resolution velocities need at least two levels")

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2**level, self.max_channels)

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Ordered named weight tensors with a flat-index view.

    Tensors named in ``frozen`` are excluded from training; their gradients
    are reported as exact zeros.
    """

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]", seed: int | None = None, frozen=()):
        self.tensors = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in tensors.items())
        self.seed = seed
        self.frozen = set(frozen)
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter tensor {k} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def assign(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.count:
            raise ValueError("flat vector has the wrong length")
        off = 0
        for k, v in self.tensors.items():
            self.tensors[k] = flat[off:off + v.size].reshape(v.shape).copy()
            off += v.size

    def locate(self, index: int) -> tuple[str, int]:
        """Map a flat index to ``(tensor name, offset within tensor)``."""
        off = 0
        for k, v in self.tensors.items():
            if index < off + v.size:
                return k, index - off
            off += v.size
        raise IndexError(index)

    def flat_index(self, name: str, offset: int) -> int:
        off = 0
        for k, v in self.tensors.items():
            if k == name:
                if not 0 <= offset < v.size:
                    raise IndexError(offset)
                return off + offset
            off += v.size
        raise KeyError(name)

    def copy(self) -> "ModelParams":
        return ModelParams(OrderedDict((k, v.copy()) for k, v in self.tensors.items()), self.seed, self.frozen)


class BackwardBeforeForwardError(RuntimeError):
    pass


class VelocityNet:
    """``g(x0, a) -> v``: attribute decoder, channel concatenation, U-Net.

    The attribute vector goes through one dense layer, is broadcast to constant
    feature maps and concatenated with the image before the first convolution.
    """

    def __init__(self, cfg: NetConfig, ndim: int = 2, n_attributes: int = 6, seed: int = 0,
                 params: ModelParams | None = None, normalizer: AttributeNormalizer | None = None):
        if ndim not in (2, 3):
            raise ValueError("ndim must be 2 or 3")
        self.cfg = cfg
        self.ndim = ndim
        self.n_attributes = n_attributes if cfg.use_attributes else 0
        self.normalizer = normalizer
        self.params = params if params is not None else self._init_params(seed)
        self._cache = None

    # -- construction ----------------------------------------------------------

    def _layer_specs(self):
        """``(name, c_in, c_out, stride, activated)`` in forward order."""
        cfg = self.cfg
        E = cfg.attribute_embed_channels if self.n_attributes else 0
        specs = [("enc0", 1 + E, cfg.channels(0), 1, True)]
        for l in range(1, cfg.levels):
            specs.append((f"enc{l}", cfg.channels(l - 1), cfg.channels(l), 2, True))
        stop = 1 if cfg.velocity_resolution == "half" else 0
        for l in range(cfg.levels - 2, stop - 1, -1):
            specs.append((f"dec{l}", cfg.channels(l + 1) + cfg.channels(l), cfg.channels(l), 1, True))
        specs.append(("out", cfg.channels(stop), self.ndim, 1, False))
        return specs

    def _init_params(self, seed: int) -> ModelParams:
        rng = np.random.default_rng(seed)
        k = 3**self.ndim
        t = OrderedDict()
        if self.n_attributes:
            E = self.cfg.attribute_embed_channels
            t["attr.W"] = rng.normal(0.0, 1.0 / math.sqrt(self.n_attributes), (E, self.n_attributes))
            t["attr.b"] = np.zeros(E)
        gain = math.sqrt(2.0 / (1.0 + self.cfg.leaky_slope**2))
        for name, cin, cout, _, act in self._layer_specs():
            shape = (cout, cin) + (3,) * self.ndim
            std = gain / math.sqrt(cin * k) if act else self.cfg.final_init_scale
            t[f"{name}.W"] = rng.normal(0.0, std, shape)
            t[f"{name}.b"] = np.zeros(cout)
        return ModelParams(t, seed)

    # -- attributes ------------------------------------------------------------

    def normalize_attributes(self, attrs: list[AttributeVector]) -> tuple[np.ndarray, int]:
        """Stack normalized attribute rows; returns ``(array, imputed count)``."""
        if not self.n_attributes:
            return np.zeros((len(attrs), 0)), 0
        rows, imputed = [], 0
        for a in attrs:
            if self.normalizer is not None:
                x, m = self.normalizer.transform(a)
            else:
                x, m = np.nan_to_num(a.values), int(np.isnan(a.values).sum())
            if x.size != self.n_attributes:
                raise ValueError(f"expected {self.n_attributes} attributes, got {x.size}")
            rows.append(x)
            imputed += m
        return np.stack(rows), imputed

    def decode_attributes(self, a: np.ndarray, dims) -> np.ndarray:
        """Dense layer then spatial broadcast: ``(N, n_attr) -> (N, E, *dims)``."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if a.shape[1] != self.n_attributes:
            raise ValueError(f"expected {self.n_attributes} attributes, got {a.shape[1]}")
        e = a @ self.params["attr.W"].T + self.params["attr.b"]
        return np.broadcast_to(e.reshape(e.shape + (1,) * len(dims)), e.shape + tuple(dims)).copy()

    # -- forward / backward ----------------------------------------------------

    def check_dims(self, dims):
        m = 2 ** (self.cfg.levels - 1)
        bad = [n for n in dims if n % m]
        if bad:
            pads = [(-n) % m for n in dims]
            raise ValueError(
                f"grid {tuple(dims)} is not divisible by {m} (levels={self.cfg.levels}); "
                f"pad each axis by {pads} voxels"
            )

    def forward_batch(self, x: np.ndarray, a: np.ndarray | None = None, cache: bool = False) -> np.ndarray:
        """``x`` (N, *dims), normalized ``a`` (N, n_attr) -> velocities (N, D, *dims)."""
        x = np.asarray(x, dtype=np.float64)
        dims = x.shape[1:]
        if len(dims) != self.ndim:
            raise ValueError(f"expected {self.ndim}-D images, got shape {x.shape}")
        self.check_dims(dims)
        P = self.params
        slope = self.cfg.leaky_slope
        h = x[:, None]
        if self.n_attributes:
            if a is None:
                raise ValueError("this network needs attributes")
            a = np.atleast_2d(np.asarray(a, dtype=np.float64))
            h = np.concatenate([h, self.decode_attributes(a, dims)], axis=1)
        tape = {"a": a, "x_shape": h.shape}

        enc = []
        specs = {s[0]: s for s in self._layer_specs()}
        for l in range(self.cfg.levels):
            name = f"enc{l}"
            z, cols = layers.conv_forward(h, P[f"{name}.W"], P[f"{name}.b"], specs[name][3])
            tape[name] = (h.shape, cols, z)
            h = layers.leaky_forward(z, slope)
            enc.append(h)
        stop = 1 if self.cfg.velocity_resolution == "half" else 0
        for l in range(self.cfg.levels - 2, stop - 1, -1):
            name = f"dec{l}"
            up = layers.upsample_forward(h)
            cat = np.concatenate([up, enc[l]], axis=1)
            z, cols = layers.conv_forward(cat, P[f"{name}.W"], P[f"{name}.b"])
            tape[name] = (cat.shape, cols, z, up.shape[1])
            h = layers.leaky_forward(z, slope)
        v, cols = layers.conv_forward(h, P["out.W"], P["out.b"])
        tape["out"] = (h.shape, cols)
        tape["features"] = h
        if stop:
            tape["half"] = v
            v = self._upsample_velocity(v, dims)
        if cache:
            self._cache = tape
        return v

    def _upsample_coords(self, half_dims, dims):
        X = Grid(dims).identity()
        scale = np.array([(h - 1) / (n - 1) for h, n in zip(half_dims, dims)])
        return X * scale.reshape((-1,) + (1,) * len(dims)), 1.0 / scale

    def _upsample_velocity(self, vh: np.ndarray, dims) -> np.ndarray:
        """Linear upsampling of half-grid velocities, rescaled to full-grid voxel units."""
        coords, gain = self._upsample_coords(vh.shape[2:], dims)
        out = np.empty((vh.shape[0], self.ndim) + tuple(dims))
        for n in range(vh.shape[0]):
            out[n] = kernels.sample_linear(vh[n], coords) * gain.reshape((-1,) + (1,) * len(dims))
        return out

    def backward(self, grad_v: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        """Parameter gradients for upstream ``grad_v`` = dL/dv from the cached forward pass."""
        if self._cache is None:
            raise BackwardBeforeForwardError("backward called before a caching forward pass")
        tape = self._cache
        P = self.params
        slope = self.cfg.leaky_slope
        grads = OrderedDict((k, np.zeros_like(v)) for k, v in P.tensors.items())
        g = np.asarray(grad_v, dtype=np.float64)
        stop = 1 if self.cfg.velocity_resolution == "half" else 0
        if stop:
            vh = tape["half"]
            dims = g.shape[2:]
            coords, gain = self._upsample_coords(vh.shape[2:], dims)
            gh = np.empty_like(vh)
            for n in range(vh.shape[0]):
                gh[n], _ = kernels.sample_linear_backward(vh[n], coords, g[n] * gain.reshape((-1,) + (1,) * len(dims)))
            g = gh
        shape, cols = tape["out"]
        g, grads["out.W"], grads["out.b"] = layers.conv_backward(g, shape, P["out.W"], cols)

        skip = {}
        for l in range(stop, self.cfg.levels - 1):
            name = f"dec{l}"
            cat_shape, cols, z, n_up = tape[name]
            g = layers.leaky_backward(g, z, slope)
            g, grads[f"{name}.W"], grads[f"{name}.b"] = layers.conv_backward(g, cat_shape, P[f"{name}.W"], cols)
            skip[l] = g[:, n_up:]
            g = layers.upsample_backward(g[:, :n_up])

        for l in range(self.cfg.levels - 1, -1, -1):
            name = f"enc{l}"
            if l in skip:
                g = g + skip[l]
            shape, cols, z = tape[name]
            stride = 1 if l == 0 else 2
            g = layers.leaky_backward(g, z, slope)
            g, grads[f"{name}.W"], grads[f"{name}.b"] = layers.conv_backward(g, shape, P[f"{name}.W"], cols, stride)

        if self.n_attributes:
            E = self.cfg.attribute_embed_channels
            ge = g[:, 1:1 + E].reshape(g.shape[0], E, -1).sum(axis=2)
            grads["attr.W"] = ge.T @ tape["a"]
            grads["attr.b"] = ge.sum(axis=0)
        for k in P.frozen:
            grads[k] = np.zeros_like(P[k])
        return grads

    def clear_cache(self):
        self._cache = None

    # -- typed convenience -------------------------------------------------------

    def forward(self, x0: ScalarImage, a: AttributeVector | None = None) -> VectorField:
        """Velocity field for one subject."""
        arr = None
        if self.n_attributes:
            if a is None:
                raise ValueError("this network needs attributes")
            arr, _ = self.normalize_attributes([a])
        v = self.forward_batch(x0.values[None], arr)[0]
        return VectorField(v, x0.grid)

    def config_dict(self) -> dict:
        return {"net": self.cfg.to_dict(), "ndim": self.ndim, "n_attributes": self.n_attributes}
