"""Differentiable primitives and the composite layers built from them."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .tensor import DimensionError, Function, Tensor, as_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise arithmetic ----------------------------------------------------

class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.a_shape), _unbroadcast(g, ctx.b_shape)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.a_shape), _unbroadcast(-g, ctx.b_shape)


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        ga = _unbroadcast(g * ctx.b, ctx.a.shape) if ctx.needs[0] else None
        gb = _unbroadcast(g * ctx.a, ctx.b.shape) if ctx.needs[1] else None
        return ga, gb


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return a / b

    @staticmethod
    def backward(ctx, g):
        ga = _unbroadcast(g / ctx.b, ctx.a.shape) if ctx.needs[0] else None
        gb = _unbroadcast(-g * ctx.a / (ctx.b * ctx.b), ctx.b.shape) if ctx.needs[1] else None
        return ga, gb


class Neg(Function):
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return -g


class Power(Function):
    @staticmethod
    def forward(ctx, a, p):
        ctx.save(a=a, p=p)
        return a ** p

    @staticmethod
    def backward(ctx, g):
        return g * ctx.p * ctx.a ** (ctx.p - 1)


class Exp(Function):
    @staticmethod
    def forward(ctx, a):
        out = np.exp(a)
        ctx.save(out=out)
        return out

    @staticmethod
    def backward(ctx, g):
        return g * ctx.out


class Log(Function):
    @staticmethod
    def forward(ctx, a):
        ctx.save(a=a)
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        return g / ctx.a


def add(a, b):
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a, b):
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a, b):
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a, b):
    return Div.apply(as_tensor(a), as_tensor(b))


def neg(a):
    return Neg.apply(as_tensor(a))


def power(a, p: float):
    return Power.apply(as_tensor(a), p=p)


def exp(a):
    return Exp.apply(as_tensor(a))


def log(a):
    return Log.apply(as_tensor(a))


# reductions and shape ------------------------------------------------------

class Sum(Function):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.save(shape=a.shape, axis=axis, keepdims=keepdims)
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, g):
        if ctx.axis is not None and not ctx.keepdims:
            axes = ctx.axis if isinstance(ctx.axis, tuple) else (ctx.axis,)
            axes = tuple(ax % len(ctx.shape) for ax in axes)
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, ctx.shape).copy()


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    if isinstance(axis, list):
        axis = tuple(axis)
    return Sum.apply(as_tensor(a), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, (tuple, list)) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


class Reshape(Function):
    @staticmethod
    def forward(ctx, a, shape):
        ctx.save(shape=a.shape)
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return g.reshape(ctx.shape)


def reshape(a, shape):
    return Reshape.apply(as_tensor(a), shape=tuple(shape))


class Transpose(Function):
    @staticmethod
    def forward(ctx, a, axes=None):
        if axes is None:
            axes = tuple(range(a.ndim))[::-1]
        ctx.save(inv=tuple(np.argsort(axes)))
        return np.ascontiguousarray(a.transpose(axes))

    @staticmethod
    def backward(ctx, g):
        return g.transpose(ctx.inv)


def transpose(a, axes=None):
    return Transpose.apply(as_tensor(a), axes=None if axes is None else tuple(axes))


def swap_last(a):
    nd = as_tensor(a).ndim
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


class GetItem(Function):
    @staticmethod
    def forward(ctx, a, index):
        ctx.save(shape=a.shape, dtype=a.dtype, index=index)
        return np.array(a[index], copy=True)

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.shape, dtype=g.dtype)
        if _is_advanced(ctx.index):
            np.add.at(out, ctx.index, g)
        else:
            out[ctx.index] = g
        return out


def getitem(a, index):
    return GetItem.apply(as_tensor(a), index=index)


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis=0):
        ctx.save(axis=axis, sizes=[x.shape[axis] for x in arrays])
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        splits = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ctx.axis))


def concat(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    return Concat.apply(*tensors, axis=ax)


def stack(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


# linear algebra ------------------------------------------------------------

class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.a, ctx.b
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if ctx.needs[0] else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if ctx.needs[1] else None
        return ga, gb


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


# activations ---------------------------------------------------------------

class Softmax(Function):
    @staticmethod
    def forward(ctx, a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)
        ctx.save(out=out, axis=axis)
        return out

    @staticmethod
    def backward(ctx, g):
        y = ctx.out
        return y * (g - (g * y).sum(axis=ctx.axis, keepdims=True))


def softmax(a, axis: int = -1):
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return Softmax.apply(a, axis=axis)


class Gelu(Function):
    @staticmethod
    def forward(ctx, a):
        cdf = 0.5 * (1.0 + erf(a / _SQRT2))
        ctx.save(a=a, cdf=cdf)
        return a * cdf

    @staticmethod
    def backward(ctx, g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * ctx.a * ctx.a)
        return g * (ctx.cdf + ctx.a * pdf)


def gelu(a):
    return Gelu.apply(as_tensor(a))


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, a):
        out = _stable_sigmoid(a)
        ctx.save(out=out)
        return out

    @staticmethod
    def backward(ctx, g):
        return g * ctx.out * (1.0 - ctx.out)


def sigmoid(a):
    return Sigmoid.apply(as_tensor(a))


class Softplus(Function):
    """log(1 + e^x) evaluated without overflow."""

    @staticmethod
    def forward(ctx, a):
        ctx.save(a=a)
        return np.maximum(a, 0) + np.log1p(np.exp(-np.abs(a)))

    @staticmethod
    def backward(ctx, g):
        return g * _stable_sigmoid(ctx.a)


def softplus(a):
    return Softplus.apply(as_tensor(a))


class LayerNorm(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-6):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        ctx.save(xhat=xhat, inv=inv, gamma=gamma)
        return xhat * gamma + beta

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gamma = ctx.xhat, ctx.inv, ctx.gamma
        lead = tuple(range(g.ndim - 1))
        gx = None
        if ctx.needs[0]:
            dxhat = g * gamma
            n = xhat.shape[-1]
            gx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        ggamma = (g * xhat).sum(axis=lead) if ctx.needs[1] else None
        gbeta = g.sum(axis=lead) if ctx.needs[2] else None
        return gx, ggamma, gbeta


def layer_norm(x, gamma, beta, eps: float = 1e-6):
    return LayerNorm.apply(as_tensor(x), as_tensor(gamma), as_tensor(beta), eps=eps)


# convolution ---------------------------------------------------------------

def same_padding(kernel: tuple[int, int], dilation: tuple[int, int] = (1, 1)):
    """(top, bottom, left, right) padding keeping H and W unchanged at stride 1."""
    th = dilation[0] * (kernel[0] - 1)
    tw = dilation[1] * (kernel[1] - 1)
    return (th // 2, th - th // 2, tw // 2, tw - tw // 2)


class Conv2d(Function):
    """Stride-1 grouped, dilated cross-correlation (no kernel flip)."""

    @staticmethod
    def forward(ctx, x, w, groups=1, dilation=(1, 1), padding=(0, 0, 0, 0)):
        B, C, H, W = x.shape
        O, Cg, kh, kw = w.shape
        G = groups
        Og = O // G
        dh, dw = dilation
        pt, pb, pl, pr = padding
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(padding) else x
        Hp, Wp = xp.shape[2], xp.shape[3]
        Ho, Wo = Hp - dh * (kh - 1), Wp - dw * (kw - 1)
        xg = xp.reshape(B, G, Cg, Hp, Wp)
        wg = w.reshape(G, Og, Cg, kh, kw)
        depthwise = Cg == 1 and Og == 1
        if depthwise:
            out = np.zeros((B, G, Ho, Wo), dtype=np.result_type(x, w))
            for i in range(kh):
                for j in range(kw):
                    patch = xg[:, :, 0, i * dh:i * dh + Ho, j * dw:j * dw + Wo]
                    out += patch * wg[None, :, 0, 0, i, j, None, None]
            cols = None
        else:
            cols = np.stack(
                [xg[:, :, :, i * dh:i * dh + Ho, j * dw:j * dw + Wo]
                 for i in range(kh) for j in range(kw)],
                axis=3,
            ).reshape(B, G, Cg * kh * kw, Ho * Wo)
            out = np.matmul(wg.reshape(G, Og, Cg * kh * kw), cols)
        ctx.save(xg=xg, wg=wg, cols=cols, dims=(B, C, H, W, O, Cg, kh, kw, G, Og, Ho, Wo),
                 dilation=dilation, padding=padding, depthwise=depthwise, wshape=w.shape)
        return out.reshape(B, O, Ho, Wo)

    @staticmethod
    def backward(ctx, g):
        B, C, H, W, O, Cg, kh, kw, G, Og, Ho, Wo = ctx.dims
        dh, dw = ctx.dilation
        pt, pb, pl, pr = ctx.padding
        xg, wg = ctx.xg, ctx.wg
        gx = gw = None
        if ctx.depthwise:
            gg = g.reshape(B, G, Ho, Wo)
            if ctx.needs[1]:
                gw = np.empty((G, 1, 1, kh, kw), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        patch = xg[:, :, 0, i * dh:i * dh + Ho, j * dw:j * dw + Wo]
                        gw[:, 0, 0, i, j] = (patch * gg).sum(axis=(0, 2, 3))
            if ctx.needs[0]:
                gxp = np.zeros(xg.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, 0, i * dh:i * dh + Ho, j * dw:j * dw + Wo] += (
                            gg * wg[None, :, 0, 0, i, j, None, None]
                        )
        else:
            gg = g.reshape(B, G, Og, Ho * Wo)
            if ctx.needs[1]:
                gw = np.matmul(gg, np.swapaxes(ctx.cols, -1, -2)).sum(axis=0)
            if ctx.needs[0]:
                gcols = np.matmul(
                    np.swapaxes(wg.reshape(G, Og, Cg * kh * kw), -1, -2), gg
                ).reshape(B, G, Cg, kh * kw, Ho, Wo)
                gxp = np.zeros(xg.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, :, i * dh:i * dh + Ho, j * dw:j * dw + Wo] += gcols[:, :, :, i * kw + j]
        if gw is not None:
            gw = gw.reshape(ctx.wshape)
        if ctx.needs[0]:
            gxp = gxp.reshape(B, C, xg.shape[3], xg.shape[4])
            gx = np.ascontiguousarray(gxp[:, :, pt:pt + H, pl:pl + W])
        return gx, gw


def conv2d(x, kernel, bias=None, groups: int = 1, dilation=1, padding="same"):
    """Cross-correlate ``x`` [B,C,H,W] with ``kernel`` [C_out, C/groups, kh, kw].

    ``padding`` is ``"same"``, an int, or a (top, bottom, left, right) tuple.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape}, {kernel.shape}")
    if groups < 1 or x.shape[1] % groups or kernel.shape[0] % groups:
        raise DimensionError(f"channels {x.shape[1]}/{kernel.shape[0]} not divisible by groups={groups}")
    if kernel.shape[1] * groups != x.shape[1]:
        raise DimensionError(
            f"kernel expects {kernel.shape[1] * groups} input channels, input has {x.shape[1]}"
        )
    dil = (dilation, dilation) if isinstance(dilation, int) else tuple(dilation)
    if min(dil) < 1:
        raise DimensionError("dilation must be >= 1")
    if padding == "same":
        pad = same_padding(kernel.shape[2:], dil)
    elif isinstance(padding, int):
        pad = (padding,) * 4
    else:
        pad = tuple(padding)
    out = Conv2d.apply(x, kernel, groups=groups, dilation=dil, padding=pad)
    if bias is not None:
        out = out + reshape(bias, (1, -1, 1, 1))
    return out


def conv_transpose2d(x, kernel, bias=None):
    """Transposed convolution with kernel size equal to stride (non-overlapping).

    ``kernel`` has shape [C_in, C_out, s, s]; output is [B, C_out, s*H, s*W].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    B, C, H, W = x.shape
    Ci, O, s, s2 = kernel.shape
    if Ci != C or s != s2:
        raise DimensionError(f"conv_transpose2d kernel {kernel.shape} does not fit input {x.shape}")
    tokens = reshape(transpose(x, (0, 2, 3, 1)), (B * H * W, C))
    y = matmul(tokens, reshape(kernel, (C, O * s * s)))
    y = reshape(y, (B, H, W, O, s, s))
    y = reshape(transpose(y, (0, 3, 1, 4, 2, 5)), (B, O, H * s, W * s))
    if bias is not None:
        y = y + reshape(bias, (1, -1, 1, 1))
    return y


def pad_edge(x, pad: tuple[int, int, int, int]):
    """Replicate-pad the last two axes by (top, bottom, left, right)."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    pt, pb, pl, pr = pad
    rows = np.clip(np.arange(-pt, H + pb), 0, H - 1)
    cols = np.clip(np.arange(-pl, W + pr), 0, W - 1)
    return getitem(x, (Ellipsis, rows[:, None], cols[None, :]))


def global_average_pool(x):
    """Per-channel spatial mean: [B,C,H,W] -> [B,C]."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"global_average_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


def scaled_dot_attention(q, k, v):
    """Softmax(q kᵀ / sqrt(d_k)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scale = 1.0 / math.sqrt(k.shape[-1])
    scores = matmul(q, swap_last(k)) * scale
    return matmul(softmax(scores, axis=-1), v)


def linear(x, weight, bias=None):
    """x @ weight + bias with weight stored as [in, out]."""
    y = matmul(x, weight) if as_tensor(x).ndim >= 2 else matmul(reshape(x, (1, -1)), weight)
    return y if bias is None else y + bias


# resampling ----------------------------------------------------------------

def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """[n_out, n_in] half-pixel-centred linear interpolation weights.

    Rows sum to one, so constants are preserved exactly up to rounding.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m.astype(dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    return m.astype(dtype)


def resize_bilinear(x, size: tuple[int, int]):
    """Bilinear resize of the last two axes of ``x`` to ``size``."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    Ho, Wo = size
    if (H, W) == (Ho, Wo):
        return x
    ry = Tensor(bilinear_matrix(H, Ho, x.dtype))
    rxT = Tensor(bilinear_matrix(W, Wo, x.dtype).T.copy())
    return matmul(matmul(ry, x), rxT)
