"""Differentiable building blocks in plain numpy.

GELU, SimAM attention, bilinear sampling, a reference 2-D convolution and
dynamic snake convolution (DSConv), each with an explicit backward pass so
that the analytic gradients can be checked against finite differences.

All tensors are ``float64`` numpy arrays; feature maps use NCHW layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy.special import expit, ndtr

from .errors import ConfigurationError, UnsupportedOperationError, ValidationError

Axis = Literal["horizontal", "vertical"]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_tensor(x, ndim: Optional[int] = None, name: str = "tensor") -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf and wrong rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# GELU
# ---------------------------------------------------------------------------

def gelu_forward(x) -> np.ndarray:
    """``x * Phi(x)`` with the exact normal CDF (no tanh approximation)."""
    x = as_tensor(x, name="x")
    return x * ndtr(x)


def gelu_backward(x, grad) -> np.ndarray:
    """Gradient of GELU: ``grad * (Phi(x) + x * phi(x))``."""
    x = as_tensor(x, name="x")
    grad = np.asarray(grad, dtype=np.float64)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return grad * (ndtr(x) + x * pdf)


# ---------------------------------------------------------------------------
# SimAM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimAMConfig:
    e_lambda: float = 1e-4

    def __post_init__(self):
        if not (np.isfinite(self.e_lambda) and self.e_lambda > 0):
            raise ConfigurationError(f"SimAM lambda must be > 0, got {self.e_lambda}")


def _simam_inverse_energy(x: np.ndarray, e_lambda: float):
    # population variance over the spatial axes, per (batch, channel)
    mu = x.mean(axis=(2, 3), keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=(2, 3), keepdims=True)
    s = var + e_lambda
    # 1 / e_t = ((x - mu)^2 + 2 var + 2 lambda) / (4 (var + lambda))
    inv_e = (d * d + 2.0 * s) / (4.0 * s)
    return d, s, inv_e


def simam_energy(features, config: SimAMConfig = SimAMConfig()) -> np.ndarray:
    """Per-neuron energy ``e_t``; lower energy means a more distinctive neuron."""
    x = as_tensor(features, ndim=4, name="features")
    _, _, inv_e = _simam_inverse_energy(x, config.e_lambda)
    return 1.0 / inv_e


def simam_weights(features, config: SimAMConfig = SimAMConfig()) -> np.ndarray:
    """Attention coefficients ``sigmoid(1 / e_t)``, each in [0.5, 1)."""
    x = as_tensor(features, ndim=4, name="features")
    _, _, inv_e = _simam_inverse_energy(x, config.e_lambda)
    return expit(inv_e)


def simam_attend(features, config: SimAMConfig = SimAMConfig()) -> np.ndarray:
    """Parameter-free attention over an NCHW feature map."""
    x = as_tensor(features, ndim=4, name="features")
    _, _, inv_e = _simam_inverse_energy(x, config.e_lambda)
    return expit(inv_e) * x


def simam_backward(features, grad, config: SimAMConfig = SimAMConfig()) -> np.ndarray:
    x = as_tensor(features, ndim=4, name="features")
    g = np.asarray(grad, dtype=np.float64)
    n = x.shape[2] * x.shape[3]
    d, s, inv_e = _simam_inverse_energy(x, config.e_lambda)
    a = expit(inv_e)
    # q = dL/d(inv_e); inv_e = d^2 / (4 s) + 1/2 with s = var + lambda
    q = g * x * a * (1.0 - a)
    qd = (q * d).sum(axis=(2, 3), keepdims=True)
    qdd = (q * d * d).sum(axis=(2, 3), keepdims=True)
    through_mean = (q * d - qd / n) / (2.0 * s)
    through_var = -qdd * d / (2.0 * n * s * s)
    return g * a + through_mean + through_var


# ---------------------------------------------------------------------------
# Bilinear sampling
# ---------------------------------------------------------------------------

def _bilinear_setup(x, y, height: int, width: int):
    """Integer corners, fractions and in-range masks for border-clamped sampling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = np.clip(x, 0.0, width - 1)
    yc = np.clip(y, 0.0, height - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xc - x0
    fy = yc - y0
    # outside the map the clamped coordinate is constant, so d/dx = 0
    x_live = (x > 0.0) & (x < width - 1)
    y_live = (y > 0.0) & (y < height - 1)
    return x0, x1, y0, y1, fx, fy, x_live, y_live


def bilinear_sample(image, x, y):
    """Sample a 2-D map at fractional column ``x`` and row ``y``.

    Out-of-range coordinates are clamped to the border (edge replication).
    ``x`` and ``y`` may be scalars or broadcastable arrays.
    """
    img = as_tensor(image, ndim=2, name="map")
    h, w = img.shape
    x0, x1, y0, y1, fx, fy, _, _ = _bilinear_setup(x, y, h, w)
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    out = (1 - fy) * top + fy * bottom
    return float(out) if out.ndim == 0 else out


def bilinear_sample_backward(image, x, y, grad=1.0):
    """Gradients of ``bilinear_sample`` w.r.t. the map, ``x`` and ``y``."""
    img = as_tensor(image, ndim=2, name="map")
    h, w = img.shape
    x0, x1, y0, y1, fx, fy, x_live, y_live = _bilinear_setup(x, y, h, w)
    grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), fx.shape)

    d_map = np.zeros_like(img)
    np.add.at(d_map, (y0, x0), grad * (1 - fx) * (1 - fy))
    np.add.at(d_map, (y0, x1), grad * fx * (1 - fy))
    np.add.at(d_map, (y1, x0), grad * (1 - fx) * fy)
    np.add.at(d_map, (y1, x1), grad * fx * fy)

    dvdx = (1 - fy) * (img[y0, x1] - img[y0, x0]) + fy * (img[y1, x1] - img[y1, x0])
    dvdy = (1 - fx) * (img[y1, x0] - img[y0, x0]) + fx * (img[y1, x1] - img[y0, x1])
    d_x = np.where(x_live, grad * dvdx, 0.0)
    d_y = np.where(y_live, grad * dvdy, 0.0)
    return d_map, d_x, d_y


# ---------------------------------------------------------------------------
# Reference convolution
# ---------------------------------------------------------------------------

def _pair(value):
    if np.isscalar(value):
        return int(value), int(value)
    a, b = value
    return int(a), int(b)


def conv2d_reference(input, kernel, stride: int = 1, padding=0, padding_mode: str = "zeros") -> np.ndarray:
    """Plain cross-correlation, ``input`` NCHW and ``kernel`` (C_out, C_in, K_H, K_W).

    ``padding`` is an int or a ``(pad_h, pad_w)`` pair. ``padding_mode`` is
    ``"zeros"`` or ``"edge"`` (replicate border pixels).
    """
    x = as_tensor(input, ndim=4, name="input")
    k = as_tensor(kernel, ndim=4, name="kernel")
    if k.shape[1] != x.shape[1]:
        raise ValidationError(f"kernel expects {k.shape[1]} input channels, input has {x.shape[1]}")
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    pad_h, pad_w = _pair(padding)
    if pad_h < 0 or pad_w < 0:
        raise ValidationError("padding must be nonnegative")
    if padding_mode == "zeros":
        xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    elif padding_mode == "edge":
        xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)), mode="edge")
    else:
        raise ValidationError(f"unknown padding_mode {padding_mode!r}")

    c_out, _, kh, kw = k.shape
    h_out = (xp.shape[2] - kh) // stride + 1
    w_out = (xp.shape[3] - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValidationError("kernel larger than padded input")
    out = np.zeros((x.shape[0], c_out, h_out, w_out))
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i:i + stride * (h_out - 1) + 1:stride, j:j + stride * (w_out - 1) + 1:stride]
            out += np.einsum("oc,nchw->nohw", k[:, :, i, j], window)
    return out


# ---------------------------------------------------------------------------
# Dynamic snake convolution
# ---------------------------------------------------------------------------

@dataclass
class DSConvKernel:
    """One axial DSConv layer.

    weights: (C_out, C_in, K) per-tap weights.
    offsets: (N, K, H, W) raw per-step offsets, one per tap and output
        position; the center tap's entry is ignored. Each step is clipped to
        [-1, 1] and the steps are summed outward from the center.
    """

    axis: Axis
    weights: np.ndarray
    offsets: np.ndarray
    extent: int = field(init=False)

    def __post_init__(self):
        if self.axis not in ("horizontal", "vertical"):
            raise ValidationError(f"axis must be 'horizontal' or 'vertical', got {self.axis!r}")
        self.weights = as_tensor(self.weights, ndim=3, name="weights")
        self.offsets = as_tensor(self.offsets, ndim=4, name="offsets")
        self.extent = self.weights.shape[2]
        if self.extent % 2 != 1:
            raise ValidationError(f"kernel extent must be odd, got {self.extent}")
        if self.offsets.shape[1] != self.extent:
            raise ValidationError(
                f"offsets have {self.offsets.shape[1]} taps, kernel extent is {self.extent}"
            )


def _cumulative_shifts(offsets: np.ndarray) -> np.ndarray:
    """Shift of every tap from the straight axis, shape (N, K, H, W)."""
    k = offsets.shape[1]
    m = k // 2
    steps = np.clip(offsets, -1.0, 1.0)
    shifts = np.zeros_like(offsets)
    shifts[:, m + 1:] = np.cumsum(steps[:, m + 1:], axis=1)
    shifts[:, :m] = np.cumsum(steps[:, :m][:, ::-1], axis=1)[:, ::-1]
    return shifts


def _tap_coords(kernel: DSConvKernel, height: int, width: int):
    """Sampling coordinates ``(xs, ys)``, each (N, K, H, W)."""
    k = kernel.extent
    m = k // 2
    shifts = _cumulative_shifts(kernel.offsets)
    grid_y, grid_x = np.mgrid[0:height, 0:width].astype(np.float64)
    taps = (np.arange(k) - m)[None, :, None, None]
    if kernel.axis == "horizontal":
        xs = np.broadcast_to(grid_x[None, None] + taps, shifts.shape)
        ys = grid_y[None, None] + shifts
    else:
        xs = grid_x[None, None] + shifts
        ys = np.broadcast_to(grid_y[None, None] + taps, shifts.shape)
    return xs, ys


def _gather(x: np.ndarray, n_idx, yi, xi) -> np.ndarray:
    # x[n, :, y, x] with index arrays shaped (N, H, W) -> (N, C, H, W)
    return np.moveaxis(x[n_idx, :, yi, xi], -1, 1)


def _check_dsconv_shapes(x: np.ndarray, kernel: DSConvKernel):
    n, c, h, w = x.shape
    if kernel.weights.shape[1] != c:
        raise ValidationError(f"weights expect {kernel.weights.shape[1]} input channels, input has {c}")
    if kernel.offsets.shape[0] != n or kernel.offsets.shape[2:] != (h, w):
        raise ValidationError(
            f"offsets shape {kernel.offsets.shape} does not match input (N={n}, H={h}, W={w})"
        )


def dsconv_forward(input, kernel: DSConvKernel) -> np.ndarray:
    """Axial snake convolution, stride 1, output spatial size equal to input.

    For the horizontal axis tap ``c`` at output pixel ``(x_p, y_p)`` reads
    ``(x_p + c, y_p + shift_c)``; for the vertical axis it reads
    ``(x_p + shift_c, y_p + c)``. Samples are bilinear with border clamping.
    """
    x = as_tensor(input, ndim=4, name="input")
    _check_dsconv_shapes(x, kernel)
    n, _, h, w = x.shape
    xs, ys = _tap_coords(kernel, h, w)
    n_idx = np.arange(n)[:, None, None]
    out = np.zeros((n, kernel.weights.shape[0], h, w))
    for t in range(kernel.extent):
        x0, x1, y0, y1, fx, fy, _, _ = _bilinear_setup(xs[:, t], ys[:, t], h, w)
        fx = fx[:, None]
        fy = fy[:, None]
        sampled = ((1 - fy) * ((1 - fx) * _gather(x, n_idx, y0, x0) + fx * _gather(x, n_idx, y0, x1))
                   + fy * ((1 - fx) * _gather(x, n_idx, y1, x0) + fx * _gather(x, n_idx, y1, x1)))
        out += np.einsum("oc,nchw->nohw", kernel.weights[:, :, t], sampled)
    return out


def dsconv_backward(input, kernel: DSConvKernel, grad) -> dict:
    """Gradients of ``dsconv_forward`` w.r.t. input, weights and offsets."""
    x = as_tensor(input, ndim=4, name="input")
    _check_dsconv_shapes(x, kernel)
    g = np.asarray(grad, dtype=np.float64)
    n, c, h, w = x.shape
    k = kernel.extent
    m = k // 2
    xs, ys = _tap_coords(kernel, h, w)
    n_idx = np.arange(n)[:, None, None]

    d_input = np.zeros_like(x)
    d_weights = np.zeros_like(kernel.weights)
    d_shift = np.zeros((n, k, h, w))
    for t in range(k):
        x0, x1, y0, y1, fx, fy, x_live, y_live = _bilinear_setup(xs[:, t], ys[:, t], h, w)
        v00 = _gather(x, n_idx, y0, x0)
        v01 = _gather(x, n_idx, y0, x1)
        v10 = _gather(x, n_idx, y1, x0)
        v11 = _gather(x, n_idx, y1, x1)
        fxe = fx[:, None]
        fye = fy[:, None]
        sampled = (1 - fye) * ((1 - fxe) * v00 + fxe * v01) + fye * ((1 - fxe) * v10 + fxe * v11)
        d_weights[:, :, t] = np.einsum("nohw,nchw->oc", g, sampled)
        d_sampled = np.einsum("oc,nohw->nchw", kernel.weights[:, :, t], g)

        for yi, xi, wgt in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)),
                            (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy)):
            contrib = np.moveaxis(d_sampled * wgt[:, None], 1, -1)  # (N, H, W, C)
            np.add.at(d_input, (n_idx, slice(None), yi, xi), contrib)

        if kernel.axis == "horizontal":
            dv = (1 - fxe) * (v10 - v00) + fxe * (v11 - v01)
            live = y_live
        else:
            dv = (1 - fye) * (v01 - v00) + fye * (v11 - v10)
            live = x_live
        d_shift[:, t] = np.where(live, (d_sampled * dv).sum(axis=1), 0.0)

    # shift_t = sum of clipped steps between the center and tap t, inclusive of t
    step_live = (kernel.offsets > -1.0) & (kernel.offsets < 1.0)
    d_offsets = np.zeros_like(kernel.offsets)
    d_offsets[:, m + 1:] = np.cumsum(d_shift[:, m + 1:][:, ::-1], axis=1)[:, ::-1]
    d_offsets[:, :m] = np.cumsum(d_shift[:, :m], axis=1)
    d_offsets *= step_live
    return {"input": d_input, "weights": d_weights, "offsets": d_offsets}


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayerSpec:
    c_in: int
    c_out: int
    k_h: int
    k_w: int
    h_out: int
    w_out: int

    def __post_init__(self):
        for name in ("c_in", "c_out", "k_h", "k_w", "h_out", "w_out"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")


def conv_flops(spec: ConvLayerSpec) -> int:
    """``2 * C_in * H_out * W_out * K_H * K_W * C_out`` as an exact integer."""
    return 2 * spec.c_in * spec.h_out * spec.w_out * spec.k_h * spec.k_w * spec.c_out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    """A forward function plus an optional backward contract.

    ``forward(**inputs)`` returns an array. ``backward(grad, **inputs)``
    returns a dict with one gradient per name in ``differentiable``.
    """

    name: str
    forward: Callable[..., np.ndarray]
    backward: Optional[Callable[..., dict]]
    differentiable: tuple


def _bilinear_backward(grad, map, x, y):
    d_map, d_x, d_y = bilinear_sample_backward(map, x, y, grad)
    return {"map": d_map, "x": d_x, "y": d_y}


def _dsconv_backward(grad, input, weights, offsets, axis):
    return dsconv_backward(input, DSConvKernel(axis, weights, offsets), grad)


BLOCKS = {
    "gelu": Block(
        "gelu",
        forward=lambda x: gelu_forward(x),
        backward=lambda grad, x: {"x": gelu_backward(x, grad)},
        differentiable=("x",),
    ),
    "simam": Block(
        "simam",
        forward=lambda x, e_lambda=1e-4: simam_attend(x, SimAMConfig(e_lambda)),
        backward=lambda grad, x, e_lambda=1e-4: {"x": simam_backward(x, grad, SimAMConfig(e_lambda))},
        differentiable=("x",),
    ),
    "bilinear": Block(
        "bilinear",
        forward=lambda map, x, y: np.asarray(bilinear_sample(map, x, y)),
        backward=_bilinear_backward,
        differentiable=("map", "x", "y"),
    ),
    "dsconv": Block(
        "dsconv",
        forward=lambda input, weights, offsets, axis: dsconv_forward(input, DSConvKernel(axis, weights, offsets)),
        backward=_dsconv_backward,
        differentiable=("input", "weights", "offsets"),
    ),
    "conv2d": Block(
        "conv2d",
        forward=lambda input, kernel, stride=1, padding=0: conv2d_reference(input, kernel, stride, padding),
        backward=None,
        differentiable=("input", "kernel"),
    ),
}


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    return np.where(scale < 1e-8, diff, diff / np.where(scale < 1e-8, 1.0, scale))


def gradcheck_errors(block, inputs: dict, epsilon: float = 1e-6, blocks: Optional[dict] = None) -> dict:
    """Max relative error per differentiable input; loss is the sum of outputs."""
    if not (0.0 < epsilon <= 1e-3):
        raise ConfigurationError(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    if isinstance(block, str):
        registry = BLOCKS if blocks is None else blocks
        if block not in registry:
            raise UnsupportedOperationError(f"unknown block {block!r}")
        block = registry[block]
    if block.backward is None:
        raise UnsupportedOperationError(f"block {block.name!r} has no backward contract")

    base = {}
    for key, value in inputs.items():
        base[key] = np.array(value, dtype=np.float64) if key in block.differentiable else value
    out = np.asarray(block.forward(**base))
    analytic = block.backward(np.ones_like(out), **base)

    errors = {}
    for key in block.differentiable:
        if key not in base:
            continue
        value = base[key]
        numeric = np.zeros(value.shape)
        # perturb in extended precision: blocks that keep the dtype (affine maps,
        # plain arithmetic) then see the exact step, the rest round back to float64
        probe = dict(base)
        wide = value.astype(np.longdouble)
        probe[key] = wide
        flat = wide.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            hi, lo = orig + epsilon, orig - epsilon
            flat[i] = hi
            plus = np.asarray(block.forward(**probe))
            flat[i] = lo
            minus = np.asarray(block.forward(**probe))
            flat[i] = orig
            numeric.reshape(-1)[i] = np.sum(plus - minus) / (hi - lo)
        errors[key] = float(np.max(_relative_error(np.asarray(analytic[key]).reshape(value.shape), numeric),
                                   initial=0.0))
    return errors


def finite_diff_gradcheck(block, inputs: dict, epsilon: float = 1e-6, blocks: Optional[dict] = None) -> float:
    """Compare a block's backward pass with central differences.

    Returns the maximum elementwise relative error over all differentiable
    inputs (absolute error where both gradients are below 1e-8).
    """
    errors = gradcheck_errors(block, inputs, epsilon, blocks)
    return max(errors.values(), default=0.0)


# ---------------------------------------------------------------------------
# Random non-degenerate instances for gradient checks
# ---------------------------------------------------------------------------

_INTEGER_MARGIN = 1e-3


def _away_from_integers(values: np.ndarray, margin: float = _INTEGER_MARGIN) -> bool:
    frac = values - np.round(values)
    return bool(np.all(np.abs(frac) > margin))


def random_gradcheck_inputs(block: str, rng: np.random.Generator) -> dict:
    """Random inputs for ``block`` avoiding the kinks of bilinear sampling."""
    if block == "gelu":
        return {"x": rng.normal(0.0, 2.0, size=100)}
    if block == "simam":
        return {"x": rng.normal(size=(1, 2, 4, 4)), "e_lambda": 1e-4}
    if block == "bilinear":
        h, w = rng.integers(2, 7, size=2)
        while True:
            x, y = rng.uniform(-0.5, w - 0.5), rng.uniform(-0.5, h - 0.5)
            if _away_from_integers(np.array([x, y])):
                break
        return {"map": rng.normal(size=(h, w)), "x": x, "y": y}
    if block == "dsconv":
        extent = int(rng.choice([3, 5]))
        n, c_in, c_out, h, w = 1, 2, 2, 5, 5
        axis = "horizontal" if rng.random() < 0.5 else "vertical"
        for _ in range(1000):
            offsets = rng.uniform(-0.9, 0.9, size=(n, extent, h, w))
            if _away_from_integers(_cumulative_shifts(offsets)[:, np.arange(extent) != extent // 2]):
                break
        else:  # pragma: no cover - probability of exhausting is negligible
            raise RuntimeError("could not draw non-degenerate offsets")
        return {
            "input": rng.normal(size=(n, c_in, h, w)),
            "weights": rng.normal(size=(c_out, c_in, extent)),
            "offsets": offsets,
            "axis": axis,
        }
    raise UnsupportedOperationError(f"no random generator for block {block!r}")


GRADCHECK_BLOCKS = ("gelu", "simam", "bilinear", "dsconv")
