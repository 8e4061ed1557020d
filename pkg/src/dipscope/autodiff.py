"""Dense float64 tensors with reverse-mode differentiation.

The operator set is exactly what the encoder-decoder / MLP model families
need: convolution (1D/2D, strided, zero-padded), fully-connected layers,
fixed-kernel upsampling, relu / leaky_relu, reshape, sum and a
sum-of-squared-errors loss. Graphs are built eagerly; ``backward`` walks the
recorded nodes once in reverse topological order.

Gradients accumulate: calling ``backward`` twice without clearing ``grad``
in between adds the second set of gradients onto the first. Training code
is expected to call ``zero_grad`` (the optimizer does) before each pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """A node in the computation graph holding a float64 ndarray.

    ``grad`` is lazily allocated on first accumulation and has the same
    shape as ``data``. Only tensors with ``requires_grad`` (or with an
    ancestor that requires grad) participate in backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse-mode pass from a scalar root.

        Populates ``grad`` on every reachable tensor that requires grad.
        Each graph node's backward rule runs exactly once.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    # Iterative DFS; recursion would be fine for these graph sizes but this
    # keeps very deep models safe.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_node(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * mask)

    return _make_node(np.where(mask, x.data, 0.0), [x], bwd)


def leaky_relu(x, slope=0.1):
    x = _as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * np.where(mask, 1.0, slope))

    return _make_node(np.where(mask, x.data, slope * x.data), [x], bwd)


def activation(x, kind, slope=0.1):
    """Dispatch on activation kind: 'relu' or 'leaky_relu'."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ValueError(f"unknown activation kind {kind!r}")


def reshape(x, shape):
    x = _as_tensor(x)
    old_shape = x.data.shape

    def bwd(g):
        x._accumulate(g.reshape(old_shape))

    return _make_node(x.data.reshape(shape), [x], bwd)


def tsum(x):
    """Sum of all entries, as a scalar tensor."""
    x = _as_tensor(x)

    def bwd(g):
        x._accumulate(np.full(x.data.shape, float(g)))

    return _make_node(np.asarray(x.data.sum()), [x], bwd)


def sse_loss(pred, target):
    """Sum of squared elementwise differences (not the mean)."""
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"sse_loss shape mismatch: pred {pred.data.shape} vs "
            f"target {target.data.shape}"
        )
    diff = pred.data - target.data

    def bwd(g):
        scaled = (2.0 * float(g)) * diff
        if pred.requires_grad:
            pred._accumulate(scaled)
        if target.requires_grad:
            target._accumulate(-scaled)

    return _make_node(np.asarray((diff * diff).sum()), [pred, target], bwd)


# ---------------------------------------------------------------------------
# linear


def linear(x, weight, bias):
    """Affine map. ``x`` is (N_in,) or batched (B, N_in); weight is
    (N_out, N_in); bias is (N_out,)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    n_out, n_in = weight.data.shape
    if x.data.shape[-1] != n_in:
        raise ShapeError(
            f"linear input dim {x.data.shape[-1]} != weight fan-in {n_in}"
        )
    if bias.data.shape != (n_out,):
        raise ShapeError(
            f"linear bias shape {bias.data.shape} != ({n_out},)"
        )
    out = x.data @ weight.data.T + bias.data

    def bwd(g):
        if weight.requires_grad:
            if x.data.ndim == 1:
                weight._accumulate(np.outer(g, x.data))
            else:
                weight._accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias._accumulate(g if g.ndim == 1 else g.sum(axis=0))
        if x.requires_grad:
            x._accumulate(g @ weight.data)

    return _make_node(out, [x, weight, bias], bwd)


# ---------------------------------------------------------------------------
# convolution (cross-correlation convention, zero padding)


def _conv_out_len(w, k, stride, padding):
    return (w + 2 * padding - k) // stride + 1


def _check_conv_pre(name, spatial, k, stride, padding):
    for ax, (w, kk) in enumerate(zip(spatial, k)):
        if kk > w + 2 * padding:
            raise ShapeError(
                f"{name}: kernel {kk} exceeds padded extent {w + 2 * padding} "
                f"on spatial axis {ax}"
            )
        if _conv_out_len(w, kk, stride, padding) < 1:
            raise ShapeError(f"{name}: empty output on spatial axis {ax}")


def conv1d(x, weight, bias, stride=1, padding=0):
    """Strided 1D cross-correlation.

    x: (C_in, W); weight: (C_out, C_in, K); bias: (C_out,).
    Returns (C_out, W') with W' = floor((W + 2p - K)/stride) + 1.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d input must be (C_in, W), got {x.data.shape}")
    c_in, w = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in_w != c_in:
        raise ShapeError(
            f"conv1d weight expects {c_in_w} input channels, input has {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.data.shape} != ({c_out},)")
    _check_conv_pre("conv1d", (w,), (k,), stride, padding)

    xp = np.pad(x.data, ((0, 0), (padding, padding)))
    w_out = _conv_out_len(w, k, stride, padding)
    # cols: (C_in*K, W'), row index ci*K + kappa
    cols = (
        sliding_window_view(xp, k, axis=1)[:, ::stride, :]
        .transpose(0, 2, 1)
        .reshape(c_in * k, w_out)
    )
    out = weight.data.reshape(c_out, c_in * k) @ cols + bias.data[:, None]

    def bwd(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=1))
        if weight.requires_grad:
            weight._accumulate((g @ cols.T).reshape(c_out, c_in, k))
        if x.requires_grad:
            x._accumulate(
                _conv_input_grad_1d(g, weight.data, w, stride, padding)
            )

    return _make_node(out, [x, weight, bias], bwd)


def _conv_input_grad_1d(g, wdata, w, stride, padding):
    c_out, c_in, k = wdata.shape
    w_out = g.shape[1]
    # Zero-stuff the output grad by the stride, then full-correlate with the
    # flipped kernel; this is the exact transpose of the forward matmul.
    gz = np.zeros((c_out, (w_out - 1) * stride + 1))
    gz[:, ::stride] = g
    gzp = np.pad(gz, ((0, 0), (k - 1, k - 1)))
    u = gzp.shape[1] - k + 1  # = (w_out-1)*stride + k
    cols = (
        sliding_window_view(gzp, k, axis=1)
        .transpose(0, 2, 1)
        .reshape(c_out * k, u)
    )
    wf = wdata[:, :, ::-1].transpose(1, 0, 2).reshape(c_in, c_out * k)
    gxp = wf @ cols
    padded = w + 2 * padding
    if u < padded:  # stride skipped trailing columns in the forward pass
        gxp = np.pad(gxp, ((0, 0), (0, padded - u)))
    return gxp[:, padding : padding + w]


def conv2d(x, weight, bias, stride=1, padding=0):
    """Strided 2D cross-correlation with square kernels.

    x: (C_in, H, W); weight: (C_out, C_in, K, K); bias: (C_out,).
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be (C_in, H, W), got {x.data.shape}")
    c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if c_in_w != c_in:
        raise ShapeError(
            f"conv2d weight expects {c_in_w} input channels, input has {c_in}"
        )
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.data.shape} != ({c_out},)")
    _check_conv_pre("conv2d", (h, w), (kh, kw), stride, padding)

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    h_out = _conv_out_len(h, kh, stride, padding)
    w_out = _conv_out_len(w, kw, stride, padding)
    # windows: (C_in, H', W', K, K) -> cols (C_in*K*K, H'*W')
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, h_out * w_out)
    out = (
        weight.data.reshape(c_out, c_in * kh * kw) @ cols
        + bias.data[:, None]
    ).reshape(c_out, h_out, w_out)

    def bwd(g):
        gm = g.reshape(c_out, h_out * w_out)
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=1))
        if weight.requires_grad:
            weight._accumulate((gm @ cols.T).reshape(c_out, c_in, kh, kw))
        if x.requires_grad:
            x._accumulate(
                _conv_input_grad_2d(g, weight.data, h, w, stride, padding)
            )

    return _make_node(out, [x, weight, bias], bwd)


def _conv_input_grad_2d(g, wdata, h, w, stride, padding):
    c_out, c_in, k, _ = wdata.shape
    h_out, w_out = g.shape[1], g.shape[2]
    gz = np.zeros((c_out, (h_out - 1) * stride + 1, (w_out - 1) * stride + 1))
    gz[:, ::stride, ::stride] = g
    gzp = np.pad(gz, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    uh = gzp.shape[1] - k + 1
    uw = gzp.shape[2] - k + 1
    win = sliding_window_view(gzp, (k, k), axis=(1, 2))
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_out * k * k, uh * uw)
    wf = (
        wdata[:, :, ::-1, ::-1]
        .transpose(1, 0, 2, 3)
        .reshape(c_in, c_out * k * k)
    )
    gxp = (wf @ cols).reshape(c_in, uh, uw)
    ph, pw = h + 2 * padding, w + 2 * padding
    if uh < ph or uw < pw:
        gxp = np.pad(gxp, ((0, 0), (0, ph - uh), (0, pw - uw)))
    return gxp[:, padding : padding + h, padding : padding + w]


# ---------------------------------------------------------------------------
# fixed-kernel upsampling


def upsample_taps(mode, stride):
    """Discrete smoothing kernel applied after zero-insertion.

    nearest: box of `stride` ones. bilinear: triangle of length 2*stride-1
    with peak 1 and linear decay; both sum to `stride` (unit DC gain once
    combined with insertion of stride-1 zeros).
    """
    if stride < 1:
        raise ValueError(f"upsample stride must be >= 1, got {stride}")
    if mode == "nearest":
        return np.ones(stride)
    if mode == "bilinear":
        t = np.arange(-(stride - 1), stride)
        return 1.0 - np.abs(t) / stride
    raise ValueError(f"unknown upsample mode {mode!r}")


def _upsample_axis_fwd(a, mode, stride):
    """Upsample the last axis of a plain ndarray by zero-insertion followed
    by correlation with the mode's kernel, edge-replicated boundary."""
    taps = upsample_taps(mode, stride)
    w = a.shape[-1]
    ext = np.concatenate([a[..., :1], a, a[..., -1:]], axis=-1)
    z = np.zeros(a.shape[:-1] + (stride * (w + 2),))
    z[..., ::stride] = ext
    win = sliding_window_view(z, len(taps), axis=-1)
    # output position j reads z[j+1 : j+1+len(taps)] for both kernels
    return win[..., 1 : 1 + stride * w, :] @ taps


def _upsample_axis_bwd(g, mode, stride, w):
    taps = upsample_taps(mode, stride)
    lw = stride * w
    gz = np.zeros(g.shape[:-1] + (stride * (w + 2),))
    for m, t in enumerate(taps):
        gz[..., 1 + m : 1 + m + lw] += t * g
    gext = gz[..., ::stride]
    gx = gext[..., 1 : w + 1].copy()
    gx[..., 0] += gext[..., 0]
    gx[..., -1] += gext[..., -1]
    return gx


def upsample(x, mode, stride, spatial_dims=None):
    """Upsample trailing spatial axes by an integer stride.

    Implemented as zero-insertion (factor `stride`) followed by correlation
    with the fixed kernel of the mode (box for nearest, triangle for
    bilinear), with edge-replicated boundary handling. 2D inputs apply the
    separable kernel along each trailing axis. `spatial_dims` defaults to 1
    for inputs of rank <= 2 (channel x width) and 2 otherwise.
    """
    x = _as_tensor(x)
    if stride < 1:
        raise ValueError(f"upsample stride must be >= 1, got {stride}")
    if spatial_dims is None:
        spatial_dims = 1 if x.data.ndim <= 2 else 2
    if spatial_dims not in (1, 2):
        raise ValueError("spatial_dims must be 1 or 2")
    if x.data.ndim < spatial_dims:
        raise ShapeError(
            f"upsample needs {spatial_dims} spatial axes, input has rank {x.data.ndim}"
        )

    h, w = (None, x.data.shape[-1]) if spatial_dims == 1 else x.data.shape[-2:]
    out = _upsample_axis_fwd(x.data, mode, stride)
    if spatial_dims == 2:
        out = _upsample_axis_fwd(out.swapaxes(-1, -2), mode, stride)
        out = out.swapaxes(-1, -2)

    def bwd(g):
        if not x.requires_grad:
            return
        if spatial_dims == 2:
            gx = _upsample_axis_bwd(g.swapaxes(-1, -2), mode, stride, h)
            gx = _upsample_axis_bwd(gx.swapaxes(-1, -2), mode, stride, w)
        else:
            gx = _upsample_axis_bwd(g, mode, stride, w)
        x._accumulate(gx)

    return _make_node(out, [x], bwd)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x, eps=1e-4):
    """Worst relative error between analytic and central-difference grads.

    ``f`` maps a Tensor to a scalar Tensor. The relative error per
    coordinate uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(x.data)).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(x.data)).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
