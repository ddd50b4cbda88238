"""Dense-array primitives shared by the model, attack, and frequency code.

Everything operates on float64 numpy arrays. Images are channel-first
[C, H, W]; batches add a leading axis [B, C, H, W]. Public functions treat
their inputs as read-only and return freshly allocated arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = ["as_f64", "require_finite", "sign", "clamp", "conv2d", "conv2d_batch", "conv_out_size"]


def as_f64(t) -> np.ndarray:
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(t, dtype=np.float64)


def require_finite(t: np.ndarray, name: str = "tensor") -> None:
    """Raise ValueError if any entry is NaN or infinite."""
    if not np.all(np.isfinite(t)):
        bad = int(np.size(t) - np.count_nonzero(np.isfinite(t)))
        raise ValueError(f"{name} contains {bad} non-finite value(s)")


def sign(t) -> np.ndarray:
    """Ternary elementwise sign: +1 where t > 0, -1 where t < 0, 0 where t == 0.

    Contrast thresholded variants: exact zeros map to 0, so untouched
    coordinates stay untouched when the result is used as a step direction.
    Rejects non-finite input since sign(NaN) has no meaningful direction.
    """
    t = as_f64(t)
    require_finite(t, "sign() input")
    return np.sign(t)


def clamp(t, lo: float, hi: float) -> np.ndarray:
    """Clip every entry of t into [lo, hi]."""
    if lo > hi:
        raise ValueError(f"clamp bounds are inverted: lo={lo} > hi={hi}")
    return np.clip(as_f64(t), lo, hi)


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    """Output length of a valid convolution along one axis; raises if not integral."""
    span = n + 2 * padding - k
    if span < 0:
        raise ValueError(f"kernel size {k} exceeds padded input extent {n + 2 * padding}")
    if span % stride != 0:
        raise ValueError(
            f"convolution geometry is not integral: (n={n} + 2*{padding} - {k}) is not divisible by stride={stride}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold [B, C, H, W] into patch columns [B, H'*W', C*kh*kw]."""
    b, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, padding)
    ow = conv_out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch columns back onto the image grid."""
    b, c, h, w = x_shape
    oh = conv_out_size(h, kh, stride, padding)
    ow = conv_out_size(w, kw, stride, padding)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    patches = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += patches[:, :, i, j]
    if padding:
        xp = xp[:, :, padding : padding + h, padding : padding + w]
    return xp


def conv2d_batch(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate a batch [B, C, H, W] with kernels [K, C, kh, kw] -> [B, K, H', W']."""
    x = as_f64(x)
    kernel = as_f64(kernel)
    if x.ndim != 4:
        raise ValueError(f"expected batched input of rank 4 [B, C, H, W], got shape {x.shape}")
    if kernel.ndim != 4:
        raise ValueError(f"expected kernel of rank 4 [K, C, kh, kw], got shape {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    b, _, h, w = x.shape
    k, _, kh, kw = kernel.shape
    oh = conv_out_size(h, kh, stride, padding)
    ow = conv_out_size(w, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding)
    out = cols @ kernel.reshape(k, -1).T
    if bias is not None:
        out = out + as_f64(bias)
    return out.transpose(0, 2, 1).reshape(b, k, oh, ow)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2-D cross-correlation of one image.

    Args:
        x: input image [C, H, W].
        kernel: filter bank [K, C, kh, kw].
        stride: step between window positions (>= 1).
        padding: zero padding added on every spatial side.

    Returns:
        Feature map [K, H', W'] with H' = (H + 2*padding - kh) / stride + 1.
    """
    x = as_f64(x)
    if x.ndim != 3:
        raise ValueError(f"expected input of rank 3 [C, H, W], got shape {x.shape}")
    return conv2d_batch(x[None], kernel, None, stride, padding)[0]
