"""Model families: convolutional encoder-decoders, plain MLPs on the
flattened signal, and coordinate-to-intensity ReLU networks.

A ModelSpec fully determines the parameter shapes and the seeded
initialization, so building the same spec twice gives bitwise-identical
models. Conv encoders downsample with strided convolutions; decoders
upsample with the fixed-kernel `upsample` op followed by stride-1
convolutions, so the output spatial shape always equals the input's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    activation,
    conv1d,
    conv2d,
    linear,
    reshape,
    upsample,
)

FAMILIES = ("dip_conv_1d", "dip_conv_2d", "dip_linear_1d", "dip_linear_2d", "relunet")
_CONV_FAMILIES = ("dip_conv_1d", "dip_conv_2d")


@dataclass
class ModelSpec:
    """Declarative description of a model.

    kernel_size / upsample_mode / upsample_stride apply to conv families
    only and must stay None elsewhere. signal_shape (the target's shape) is
    required for linear families (it fixes the flattened layer widths) and
    for relunet (its length fixes the coordinate dimension).
    """

    family: str
    depth: int
    width: int
    kernel_size: int | None = None
    upsample_mode: str | None = None
    upsample_stride: int | None = None
    activation: str | None = None
    activation_slope: float = 0.1
    signal_shape: tuple | None = None
    init_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.activation is None:
            # coordinate nets are plain-ReLU by construction; conv families
            # keep a small leak so dead units cannot stall tiny widths
            self.activation = "relu" if self.family == "relunet" else "leaky_relu"
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.signal_shape is not None:
            self.signal_shape = tuple(int(s) for s in self.signal_shape)
        if self.family in _CONV_FAMILIES:
            if self.kernel_size is None:
                self.kernel_size = 3
            if self.upsample_mode is None:
                self.upsample_mode = "nearest"
            if self.upsample_stride is None:
                self.upsample_stride = 2
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError(f"kernel_size must be odd positive, got {self.kernel_size}")
            if self.upsample_mode not in ("nearest", "bilinear"):
                raise ValueError(f"unknown upsample_mode {self.upsample_mode!r}")
            if self.upsample_stride < 1:
                raise ValueError(f"upsample_stride must be >= 1, got {self.upsample_stride}")
        else:
            for name in ("kernel_size", "upsample_mode", "upsample_stride"):
                if getattr(self, name) is not None:
                    raise ValueError(
                        f"{name} set on family {self.family!r}, which takes no {name}"
                    )
            if self.signal_shape is None:
                raise ValueError(f"family {self.family!r} requires signal_shape")
        if self.family == "dip_linear_1d" and self.signal_shape is not None and len(self.signal_shape) != 1:
            raise ValueError("dip_linear_1d needs a 1D signal_shape")
        if self.family == "dip_linear_2d" and len(self.signal_shape or ()) != 2:
            raise ValueError("dip_linear_2d needs a 2D signal_shape")
        if self.family == "relunet" and len(self.signal_shape or ()) not in (1, 2):
            raise ValueError("relunet needs a 1D or 2D signal_shape")
        if self.activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self):
        d = {
            "family": self.family,
            "depth": self.depth,
            "width": self.width,
            "activation": self.activation,
            "activation_slope": self.activation_slope,
            "init_seed": self.init_seed,
        }
        if self.kernel_size is not None:
            d["kernel_size"] = self.kernel_size
        if self.upsample_mode is not None:
            d["upsample_mode"] = self.upsample_mode
        if self.upsample_stride is not None:
            d["upsample_stride"] = self.upsample_stride
        if self.signal_shape is not None:
            d["signal_shape"] = list(self.signal_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if k == "signal_shape" else v) for k, v in d.items()})


def coordinate_grid(shape):
    """Pixel coordinates normalized to [−1, 1] per axis, one row per sample.

    1D shape (n,) → (n, 1); 2D shape (h, w) → (h·w, 2) in row-major order.
    """
    shape = tuple(shape)
    if any(s < 2 for s in shape):
        raise ValueError(f"each axis needs >= 2 samples, got {shape}")
    axes = [2.0 * np.arange(s) / (s - 1) - 1.0 for s in shape]
    if len(shape) == 1:
        return axes[0][:, None]
    if len(shape) == 2:
        yy, xx = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([yy.reshape(-1), xx.reshape(-1)], axis=1)
    raise ValueError(f"coordinate_grid handles 1D/2D shapes, got {shape}")


class Model:
    """A built model: spec, named parameter tensors and a layer program."""

    def __init__(self, spec, layers, parameters, names, grid=None, mid_bottleneck=False):
        self.spec = spec
        self.layers = layers
        self.parameters = parameters
        self.names = names
        self.grid = grid
        self.mid_bottleneck = mid_bottleneck

    def param_count(self):
        return int(sum(p.size for p in self.parameters))

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    # -- forward ------------------------------------------------------------

    def forward(self, z=None):
        if self.spec.family in _CONV_FAMILIES:
            return self._forward_conv(z)
        if self.spec.family == "relunet":
            return self._forward_relunet()
        return self._forward_linear(z)

    def _conv_input(self, z):
        nd = 1 if self.spec.family == "dip_conv_1d" else 2
        if z is None:
            raise ShapeError("conv families need an input tensor")
        data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=float)
        if data.ndim == nd:  # bare signal: add the channel axis
            z = Tensor(data[None]) if not isinstance(z, Tensor) else reshape(z, (1,) + data.shape)
        elif data.ndim != nd + 1:
            raise ShapeError(
                f"{self.spec.family} input must have {nd} spatial axes "
                f"(plus optional channel axis), got shape {data.shape}"
            )
        elif not isinstance(z, Tensor):
            z = Tensor(data)
        stride = self.spec.upsample_stride
        stages = self.spec.depth // 2
        div = stride ** stages
        for extent in z.data.shape[1:]:
            if extent % div:
                raise ShapeError(
                    f"spatial extent {extent} not divisible by "
                    f"{stride}^{stages} = {div} (encoder downsampling)"
                )
        return z

    def _forward_conv(self, z):
        h = self._conv_input(z)
        conv = conv1d if self.spec.family == "dip_conv_1d" else conv2d
        sdims = 1 if self.spec.family == "dip_conv_1d" else 2
        for kind, *args in self.layers:
            if kind == "conv":
                w, b, stride, pad = args
                h = conv(h, w, b, stride=stride, padding=pad)
            elif kind == "up":
                h = upsample(h, args[0], args[1], spatial_dims=sdims)
            else:
                h = activation(h, self.spec.activation, self.spec.activation_slope)
        if self.spec.signal_shape is not None:
            return reshape(h, self.spec.signal_shape)
        return reshape(h, h.shape[1:])  # drop the unit channel axis

    def _forward_linear(self, z):
        if z is None:
            raise ShapeError("linear families need an input tensor")
        h = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=float))
        n_in = int(np.prod(self.spec.signal_shape))
        if h.size != n_in:
            raise ShapeError(
                f"input has {h.size} samples, spec.signal_shape wants {n_in}"
            )
        h = reshape(h, (n_in,))
        h = self._mlp(h)
        return reshape(h, self.spec.signal_shape)

    def _forward_relunet(self):
        h = self._mlp(Tensor(self.grid))
        return reshape(h, self.spec.signal_shape)

    def _mlp(self, h):
        last = len([l for l in self.layers if l[0] == "linear"]) - 1
        i = 0
        for kind, *args in self.layers:
            if kind == "linear":
                h = linear(h, args[0], args[1])
                if i < last:
                    h = activation(h, self.spec.activation, self.spec.activation_slope)
                i += 1
        return h


def build_model(spec):
    """Construct and initialize a model from its spec.

    Parameters are drawn uniform in [−b, b] with b = sqrt(1/fan_in), in
    layer order, from a generator seeded with spec.init_seed.
    """
    rng = np.random.default_rng(spec.init_seed)
    params, names, layers = [], [], []

    def draw(shape, fan_in):
        b = float(np.sqrt(1.0 / fan_in))
        return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

    def add_conv(idx, c_in, c_out, stride):
        k = spec.kernel_size
        wshape = (c_out, c_in, k) if spec.family == "dip_conv_1d" else (c_out, c_in, k, k)
        fan_in = c_in * k if spec.family == "dip_conv_1d" else c_in * k * k
        w = draw(wshape, fan_in)
        b = draw((c_out,), fan_in)
        params.extend([w, b])
        names.extend([f"conv{idx}.weight", f"conv{idx}.bias"])
        layers.append(("conv", w, b, stride, (k - 1) // 2))

    def add_linear(idx, n_in, n_out):
        w = draw((n_out, n_in), n_in)
        b = draw((n_out,), n_in)
        params.extend([w, b])
        names.extend([f"linear{idx}.weight", f"linear{idx}.bias"])
        layers.append(("linear", w, b))

    mid = False
    if spec.family in _CONV_FAMILIES:
        d, w = spec.depth, spec.width
        c_in = [1] + [w] * (d - 1)
        c_out = [w] * (d - 1) + [1]
        n_enc = d // 2
        mid = d % 2 == 1
        li = 0
        for _ in range(n_enc):
            add_conv(li, c_in[li], c_out[li], spec.upsample_stride)
            layers.append(("act",))
            li += 1
        if mid:
            add_conv(li, c_in[li], c_out[li], 1)
            layers.append(("act",))
            li += 1
        for j in range(n_enc):
            layers.append(("up", spec.upsample_mode, spec.upsample_stride))
            add_conv(li, c_in[li], c_out[li], 1)
            if j < n_enc - 1:
                layers.append(("act",))
            li += 1
        grid = None
    elif spec.family == "relunet":
        cdim = len(spec.signal_shape)
        sizes = [cdim] + [spec.width] * (spec.depth - 1) + [1]
        for i in range(spec.depth):
            add_linear(i, sizes[i], sizes[i + 1])
        grid = coordinate_grid(spec.signal_shape)
    else:
        n = int(np.prod(spec.signal_shape))
        sizes = [n] + [spec.width] * (spec.depth - 1) + [n]
        for i in range(spec.depth):
            add_linear(i, sizes[i], sizes[i + 1])
        grid = None

    return Model(spec, layers, params, names, grid=grid, mid_bottleneck=mid)
