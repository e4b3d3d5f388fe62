"""
Differentiable operations for the miner networks

This module contains the forward computation and the reverse-mode rule of
every operation the networks and losses need:
- conv2d, relu, max_pool, global_avg_pool, bilinear_resize
- elementwise_min, channel_min, multiply, add, scale, total
- multilabel_bce, normalize_map, frobenius_norm
- linear, log_sigmoid (toy minimax networks)

All operations take and return Tensor objects with float64 data. Ties in
max/min selections route the gradient to the first index in scan order.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ConfigurationError, DimensionError, LabelError


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, where):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(
            f"{where}: incompatible shapes {a.shape} and {b.shape}",
            {"left": list(a.shape), "right": list(b.shape)},
        ) from exc


def _output_size(size, kernel, stride, padding, where, exact):
    span = size + 2 * padding - kernel
    if span < 0:
        raise ConfigurationError(
            f"{where}: kernel {kernel} larger than padded input {size + 2 * padding}"
        )
    if exact and span % stride:
        raise ConfigurationError(
            f"{where}: output size ({size} + 2*{padding} - {kernel})/{stride} + 1 "
            f"is not an integer"
        )
    return span // stride + 1


# -- convolution and pooling --------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """
    2-D cross-correlation over a batch

    Args:
        x (Tensor): Input [B, Cin, H, W]
        weight (Tensor): Kernels [Cout, Cin, k, k]
        bias (Tensor | None): Bias [Cout]
        stride (int): Step between windows (>= 1)
        padding (int): Zero padding on every border (>= 0)

    Returns:
        Tensor: Output [B, Cout, H', W'] with H' = (H + 2p - k)/stride + 1

    Raises:
        DimensionError: If operand shapes disagree
        ConfigurationError: If k/stride/padding are invalid or H' is not
            a positive integer
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-D input and weights, got {x.shape} and {weight.shape}"
        )
    batch, in_channels, height, width = x.shape
    out_channels, weight_in, kernel, kernel_w = weight.shape
    if weight_in != in_channels or kernel != kernel_w:
        raise DimensionError(
            f"conv2d: weight {weight.shape} does not fit input {x.shape}"
        )
    if bias is not None and bias.shape != (out_channels,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not fit {out_channels}")
    if kernel < 1 or stride < 1 or padding < 0:
        raise ConfigurationError(
            f"conv2d: invalid kernel={kernel}, stride={stride}, padding={padding}"
        )

    out_h = _output_size(height, kernel, stride, padding, "conv2d", exact=True)
    out_w = _output_size(width, kernel, stride, padding, "conv2d", exact=True)

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad) if padding else x.data
    # [B, Cin, H', W', k, k] view, no copy
    cols = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    cols = cols[:, :, ::stride, ::stride]

    out = np.einsum("bchwij,ocij->bohw", cols, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(grad):
        grad_x = grad_w = grad_b = None
        if x.requires_grad:
            grad_cols = np.einsum("bohw,ocij->bchwij", grad, weight.data, optimize=True)
            grad_padded = np.zeros(padded.shape)
            for i in range(kernel):
                for j in range(kernel):
                    grad_padded[
                        :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                    ] += grad_cols[..., i, j]
            grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        if weight.requires_grad:
            grad_w = np.einsum("bohw,bchwij->ocij", grad, cols, optimize=True)
        if bias is not None and bias.requires_grad:
            grad_b = grad.sum(axis=(0, 2, 3))
        return (grad_x, grad_w, grad_b)[: 3 if bias is not None else 2]

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, backward, "conv2d")


def max_pool(x, kernel, stride, padding=0):
    """
    Windowed maximum over the two spatial axes

    Output size follows the floor convention:
    H' = floor((H + 2p - k)/stride) + 1. The gradient goes to the first
    maximal element of each window in row-major order.

    Args:
        x (Tensor): Input [B, C, H, W]
        kernel (int): Window size
        stride (int): Window step
        padding (int): Implicit -inf padding, at most kernel // 2

    Returns:
        Tensor: Pooled output [B, C, H', W']
    """
    if x.ndim != 4:
        raise DimensionError(f"max_pool expects a 4-D input, got {x.shape}")
    if kernel < 1 or stride < 1 or padding < 0 or padding > kernel // 2:
        raise ConfigurationError(
            f"max_pool: invalid kernel={kernel}, stride={stride}, padding={padding}"
        )
    batch, channels, height, width = x.shape
    out_h = _output_size(height, kernel, stride, padding, "max_pool", exact=False)
    out_w = _output_size(width, kernel, stride, padding, "max_pool", exact=False)

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad, constant_values=-np.inf) if padding else x.data
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    flat = windows.reshape(batch, channels, out_h, out_w, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(grad):
        rows = np.arange(out_h)[None, None, :, None] * stride + arg // kernel
        cols = np.arange(out_w)[None, None, None, :] * stride + arg % kernel
        b_idx = np.arange(batch)[:, None, None, None]
        c_idx = np.arange(channels)[None, :, None, None]
        grad_padded = np.zeros(padded.shape)
        np.add.at(
            grad_padded,
            (
                np.broadcast_to(b_idx, arg.shape),
                np.broadcast_to(c_idx, arg.shape),
                rows,
                cols,
            ),
            grad,
        )
        return (grad_padded[:, :, padding : padding + height, padding : padding + width],)

    return Tensor.from_op(out, (x,), backward, "max_pool")


def global_avg_pool(x):
    """
    Spatial mean per channel

    Args:
        x (Tensor): Input [B, C, H, W]

    Returns:
        Tensor: Means [B, C]
    """
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-D input, got {x.shape}")
    area = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward(grad):
        return (np.broadcast_to(grad[:, :, None, None] / area, x.shape).copy(),)

    return Tensor.from_op(out, (x,), backward, "global_avg_pool")


def _axis_weights(in_size, out_size):
    # align_corners=False: src = (dst + 0.5) * in/out - 0.5, clamped to the borders
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    low = np.floor(src).astype(np.int64)
    high = np.minimum(low + 1, in_size - 1)
    return low, high, src - low


def _interpolation_matrix(low, high, weight, in_size):
    # Row o holds the two source weights of output o
    matrix = np.zeros((low.size, in_size))
    np.add.at(matrix, (np.arange(low.size), low), 1.0 - weight)
    np.add.at(matrix, (np.arange(low.size), high), weight)
    return matrix


def bilinear_resize(x, out_h, out_w):
    """
    Bilinear resize over the two trailing axes

    Uses the align-corners-false convention; each output is
    x0 + w * (x1 - x0), which keeps constant inputs exactly constant and
    stays inside [min(x), max(x)].

    Args:
        x (Tensor): Input [..., H, W] (typically [B, C, H, W])
        out_h (int): Output height (>= 1)
        out_w (int): Output width (>= 1)

    Returns:
        Tensor: Resized tensor [..., out_h, out_w]

    Example:
        bilinear_resize(Tensor([[[[0.0, 1.0]]]]), 1, 4)  # [0, 0.25, 0.75, 1]
    """
    if x.ndim < 2:
        raise DimensionError(f"bilinear_resize needs >= 2 axes, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"bilinear_resize: invalid output {out_h}x{out_w}")

    in_h, in_w = x.shape[-2:]
    top, bottom, wy = _axis_weights(in_h, out_h)
    left, right, wx = _axis_weights(in_w, out_w)

    upper = x.data[..., top, :]
    rows = upper + wy[:, None] * (x.data[..., bottom, :] - upper)
    first = rows[..., left]
    out = first + wx * (rows[..., right] - first)

    def backward(grad):
        grad_rows = grad @ _interpolation_matrix(left, right, wx, in_w)
        grad_x = np.einsum(
            "oi,...oj->...ij", _interpolation_matrix(top, bottom, wy, in_h), grad_rows
        )
        return (grad_x,)

    return Tensor.from_op(out, (x,), backward, "bilinear_resize")


# -- elementwise --------------------------------------------------------------


def relu(x):
    """Elementwise max(0, x); gradient passes where x > 0"""
    out = np.maximum(x.data, 0.0)

    def backward(grad):
        return (grad * (x.data > 0),)

    return Tensor.from_op(out, (x,), backward, "relu")


def elementwise_min(inputs):
    """
    Per-location minimum over same-shaped tensors

    Args:
        inputs (list[Tensor]): At least one tensor, identical shapes

    Returns:
        Tensor: Entrywise minimum; the gradient goes to the first
        minimizing input

    Raises:
        DimensionError: On an empty list or mismatched shapes
    """
    inputs = [_as_tensor(t) for t in inputs]
    if not inputs:
        raise DimensionError("elementwise_min needs at least one input")
    shape = inputs[0].shape
    for tensor in inputs[1:]:
        if tensor.shape != shape:
            raise DimensionError(
                f"elementwise_min: shape {tensor.shape} differs from {shape}"
            )

    stacked = np.stack([t.data for t in inputs])
    arg = np.asarray(stacked.argmin(axis=0))
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def backward(grad):
        return tuple(grad * (arg == i) for i in range(len(inputs)))

    return Tensor.from_op(out, tuple(inputs), backward, "elementwise_min")


def channel_min(x, keep):
    """
    Minimum over the channel axis restricted to selected channels

    Channels with keep=False behave as the all-ones map, the identity of
    the min over region maps in [0, 1].

    Args:
        x (Tensor): Maps [B, C, H, W]
        keep (np.ndarray): Boolean [B, C] selecting channels per sample

    Returns:
        Tensor: Minimum map [B, 1, H, W]
    """
    keep = np.asarray(keep, dtype=bool)
    if x.ndim != 4 or keep.shape != x.shape[:2]:
        raise DimensionError(f"channel_min: keep {keep.shape} does not fit {x.shape}")

    selected = keep[:, :, None, None]
    filled = np.where(selected, x.data, 1.0)
    arg = filled.argmin(axis=1)[:, None]
    out = np.take_along_axis(filled, arg, axis=1)

    def backward(grad):
        channels = np.arange(x.shape[1])[None, :, None, None]
        return (grad * ((channels == arg) & selected),)

    return Tensor.from_op(out, (x,), backward, "channel_min")


def multiply(a, b):
    """
    Elementwise product with numpy broadcasting

    Typical use is masking features [B, C, H, W] with a map [B, 1, H, W].

    Raises:
        DimensionError: If the shapes cannot broadcast
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "multiply")
    out = a.data * b.data

    def backward(grad):
        grad_a = _unbroadcast(grad * b.data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(grad * a.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return Tensor.from_op(out, (a, b), backward, "multiply")


def add(a, b):
    """Elementwise sum with numpy broadcasting"""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return Tensor.from_op(out, (a, b), backward, "add")


def scale(x, factor):
    """Multiply by a Python scalar"""
    out = x.data * factor

    def backward(grad):
        return (grad * factor,)

    return Tensor.from_op(out, (x,), backward, "scale")


def total(x):
    """Sum of all entries as a scalar tensor"""
    out = np.asarray(x.data.sum())

    def backward(grad):
        return (np.full(x.shape, float(grad)),)

    return Tensor.from_op(out, (x,), backward, "total")


# -- losses and map operations ------------------------------------------------


def multilabel_bce(scores, labels):
    """
    Mean binary cross-entropy of independent per-category sigmoids

    Computed as softplus(s) - y*s, which is finite for every finite score.

    Args:
        scores (Tensor): Raw scores [B, C]
        labels (Tensor | np.ndarray): Binary targets [B, C]

    Returns:
        Tensor: Scalar mean over the B*C entries

    Raises:
        LabelError: If labels are not all 0/1
        DimensionError: If shapes differ

    Example:
        multilabel_bce(Tensor([[0.0]]), [[1.0]])  # ln 2
    """
    targets = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if targets.shape != scores.shape:
        raise DimensionError(
            f"multilabel_bce: labels {targets.shape} vs scores {scores.shape}"
        )
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise LabelError("multilabel_bce: labels must be binary")

    s = scores.data
    count = s.size
    softplus = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
    out = np.asarray((softplus - targets * s).sum() / count)

    def backward(grad):
        return (float(grad) * (expit(s) - targets) / count,)

    return Tensor.from_op(out, (scores,), backward, "multilabel_bce")


def normalize_map(h, eps):
    """
    Min-max normalize a score map into a region map

    M = 1 - (H - min H) / (max H - min H + eps), with min/max over the two
    trailing axes. The gradient reaches H directly and through the argmin
    and argmax locations.

    Args:
        h (Tensor): Scores [..., h, w]
        eps (float): Positive stabilizer

    Returns:
        Tensor: Region map in [0, 1], exactly 1 where H is minimal

    Example:
        normalize_map(Tensor([[0, 2], [4, 8]]), 1e-5)  # ~[[1, .75], [.5, 0]]
    """
    if eps <= 0:
        raise ConfigurationError(f"normalize_map: eps must be positive, got {eps}")
    if h.ndim < 2:
        raise DimensionError(f"normalize_map needs >= 2 axes, got {h.shape}")

    lead = h.shape[:-2]
    flat = h.data.reshape(*lead, -1)
    arg_min = np.asarray(flat.argmin(axis=-1))
    arg_max = np.asarray(flat.argmax(axis=-1))
    low = np.take_along_axis(flat, arg_min[..., None], axis=-1)[..., 0]
    high = np.take_along_axis(flat, arg_max[..., None], axis=-1)[..., 0]
    denom = (high - low + eps)[..., None, None]
    shifted = h.data - low[..., None, None]
    out = 1.0 - shifted / denom

    def backward(grad):
        grad_h = -grad / denom
        grad_low = (grad * (1.0 / denom - shifted / denom**2)).reshape(*lead, -1).sum(-1)
        grad_high = (grad * shifted / denom**2).reshape(*lead, -1).sum(-1)
        flat_grad = grad_h.reshape(*lead, -1).copy()
        lead_idx = np.indices(lead) if lead else ()
        flat_grad[(*lead_idx, arg_min)] += grad_low
        flat_grad[(*lead_idx, arg_max)] += grad_high
        return (flat_grad.reshape(h.shape),)

    return Tensor.from_op(out, (h,), backward, "normalize_map")


def frobenius_norm(x):
    """
    Frobenius norm over the two trailing axes

    Args:
        x (Tensor): Maps [..., h, w]

    Returns:
        Tensor: Norms [...]

    Example:
        frobenius_norm(Tensor(np.ones((2, 2))))  # 2.0
    """
    if x.ndim < 2:
        raise DimensionError(f"frobenius_norm needs >= 2 axes, got {x.shape}")
    norms = np.sqrt((x.data**2).sum(axis=(-2, -1)))

    def backward(grad):
        safe = np.where(norms > 0, norms, 1.0)
        factor = np.where(norms > 0, grad / safe, 0.0)
        return (x.data * factor[..., None, None],)

    return Tensor.from_op(norms, (x,), backward, "frobenius_norm")


def linear(x, weight, bias=None):
    """
    Affine map x @ W^T + b

    Args:
        x (Tensor): Inputs [N, in]
        weight (Tensor): Weights [out, in]
        bias (Tensor | None): Bias [out]

    Returns:
        Tensor: Outputs [N, out]
    """
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(grad):
        grad_x = grad @ weight.data if x.requires_grad else None
        grad_w = grad.T @ x.data if weight.requires_grad else None
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(grad.sum(axis=0))
        return tuple(grads)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, backward, "linear")


def log_sigmoid(z, clamp=50.0):
    """
    Stable log(sigmoid(z)) with logits clamped to [-clamp, clamp]

    log(1 - sigmoid(z)) is log_sigmoid(-z).
    """
    clipped = np.clip(z.data, -clamp, clamp)
    out = -(np.maximum(-clipped, 0.0) + np.log1p(np.exp(-np.abs(clipped))))

    def backward(grad):
        inside = np.abs(z.data) <= clamp
        return (grad * expit(-clipped) * inside,)

    return Tensor.from_op(out, (z,), backward, "log_sigmoid")
