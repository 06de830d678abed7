"""2-d convolution kernels, im2col + GEMM formulation.

``conv2d`` has cross-correlation semantics; ``conv_transpose2d`` is its exact
adjoint for the same (kernel, stride, padding), which the inner-product test
in the suite pins down. Kernels are laid out [out_ch, in_ch, kh, kw] for both
ops; the transpose maps out_ch back to in_ch.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import _make_output


def conv_output_extent(size, k, stride, padding):
    """Output extent of a convolution axis; rejects non-integral results."""
    span = size + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"conv2d: extent {size} with kernel {k}, stride {stride}, "
            f"padding {padding} gives a non-integral output"
        )
    out = span // stride + 1
    if out <= 0:
        raise ConfigError(f"conv2d: non-positive output extent for input {size}")
    return out


def _im2col(xp, kh, kw, stride, ho, wo):
    """[B,C,Hp,Wp] -> [B, C*kh*kw, ho*wo] patch matrix."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(cols, b, c, h, w, kh, kw, stride, ho, wo, padding):
    """Adjoint of ``_im2col``: scatter-add patches back onto the image."""
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if padding:
        return xp[:, :, padding : padding + h, padding : padding + w]
    return xp


def _pad(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlate [B,C,H,W] with kernel [O,C,kh,kw] -> [B,O,H',W']."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d: need 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    b, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d: input channels {c} vs kernel channels {ck}")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)

    cols = _im2col(_pad(x.data, padding), kh, kw, stride, ho, wo)
    kmat = kernel.data.reshape(o, c * kh * kw)
    out = (kmat[None] @ cols).reshape(b, o, ho, wo)

    inputs = [x, kernel]
    if bias is not None:
        if bias.shape != (o,):
            raise DimensionError(f"conv2d: bias {bias.shape} vs out channels {o}")
        out = out + bias.data[:, None, None]
        inputs.append(bias)

    def bwd(g):
        g2 = g.reshape(b, o, ho * wo)
        dk = (g2 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        dcols = kmat.T[None] @ g2
        dx = _col2im(dcols, b, c, h, w, kh, kw, stride, ho, wo, padding)
        if bias is not None:
            return dx, dk, g.sum(axis=(0, 2, 3))
        return dx, dk

    return _make_output(out, inputs, "conv2d", bwd)


def conv_transpose2d(x, kernel, bias=None, stride=1, padding=0):
    """Adjoint of ``conv2d``: [B,O,H',W'] with kernel [O,C,kh,kw] -> [B,C,H,W].

    Output extents satisfy H = (H' - 1) * stride - 2 * padding + kh.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv_transpose2d: need 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    b, o, ho, wo = x.shape
    ok, c, kh, kw = kernel.shape
    if ok != o:
        raise DimensionError(
            f"conv_transpose2d: input channels {o} vs kernel out channels {ok}"
        )
    h = (ho - 1) * stride - 2 * padding + kh
    w = (wo - 1) * stride - 2 * padding + kw
    if h <= 0 or w <= 0:
        raise ConfigError(f"conv_transpose2d: non-positive output extent {(h, w)}")

    kmat = kernel.data.reshape(o, c * kh * kw)
    x2 = x.data.reshape(b, o, ho * wo)
    out = _col2im(kmat.T[None] @ x2, b, c, h, w, kh, kw, stride, ho, wo, padding)

    inputs = [x, kernel]
    if bias is not None:
        if bias.shape != (c,):
            raise DimensionError(f"conv_transpose2d: bias {bias.shape} vs out channels {c}")
        out = out + bias.data[:, None, None]
        inputs.append(bias)

    def bwd(g):
        gcols = _im2col(_pad(g, padding), kh, kw, stride, ho, wo)
        dx = (kmat[None] @ gcols).reshape(b, o, ho, wo)
        dk = (x2 @ gcols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        if bias is not None:
            return dx, dk, g.sum(axis=(0, 2, 3))
        return dx, dk

    return _make_output(out, inputs, "conv_transpose2d", bwd)
