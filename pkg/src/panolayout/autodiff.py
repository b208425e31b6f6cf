"""Minimal reverse-mode differentiation engine on numpy arrays.

Feature maps are (H, W, C); vectors are 1-D.  Every primitive implements the
exact adjoint of its forward map, which the test suite checks against central
finite differences in 64-bit.
"""

from __future__ import annotations

import numpy as np

from . import projection
from .errors import DimensionError


class Tensor:
    """Node in the computation graph: value, optional gradient, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.ndim != 0:
            raise DimensionError("backward() starts from a scalar loss")
        order = []
        seen = set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, processed = stack.pop()
                if processed:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def tensor(data, requires_grad=False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _unary(x: Tensor, out_data, grad_fn) -> Tensor:
    out = Tensor(out_data, parents=(x,))
    if x.requires_grad:
        out._backward = lambda g: x.accumulate(grad_fn(g))
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    out._backward = bw
    return out


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _unary(x, x.data * np.asarray(s, dtype=x.dtype), lambda g: g * np.asarray(s, dtype=x.dtype))


def add_scaled(a: Tensor, b: Tensor, s: float) -> Tensor:
    """a + s * b in one node."""
    if a.shape != b.shape:
        raise DimensionError(f"add_scaled shapes differ: {a.shape} vs {b.shape}")
    s = float(s)
    out = Tensor(a.data + np.asarray(s, dtype=b.dtype) * b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g * np.asarray(s, dtype=b.dtype))

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0), lambda g: g * mask)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype)
    return _unary(x, y, lambda g: g * y * (1.0 - y))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    y = np.logaddexp(np.zeros((), dtype=d.dtype), d)
    e = np.exp(-np.abs(d))
    sig = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _unary(x, y, lambda g: g * sig)


# ---------------------------------------------------------------------------
# structural ops


def conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution with zero padding 1; stride 1 or 2.

    x: (H, W, Cin) or batched (B, H, W, Cin); w: (3, 3, Cin, Cout); b: (Cout,).
    """
    if stride not in (1, 2):
        raise DimensionError(f"stride must be 1 or 2, got {stride}")
    batched = x.data.ndim == 4
    h, wd, cin = x.shape[-3], x.shape[-2], x.shape[-1]
    if w.shape[:3] != (3, 3, cin):
        raise DimensionError(f"kernel {w.shape} does not fit input {x.shape}")
    cout = w.shape[3]
    pad = ((0, 0), (1, 1), (1, 1), (0, 0)) if batched else ((1, 1), (1, 1), (0, 0))
    xp = np.pad(x.data, pad)
    axes = (1, 2) if batched else (0, 1)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=axes)
    if batched:
        win = win[:, ::stride, ::stride]
        bsz, ho, wo = win.shape[0], win.shape[1], win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
            bsz * ho * wo, 9 * cin
        )
    else:
        win = win[::stride, ::stride]
        bsz, (ho, wo) = 1, (win.shape[0], win.shape[1])
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, 9 * cin)
    wmat = w.data.reshape(9 * cin, cout)
    out_shape = (bsz, ho, wo, cout) if batched else (ho, wo, cout)
    out_data = (cols @ wmat + b.data).reshape(out_shape)
    out = Tensor(out_data, parents=(x, w, b))

    def input_grad(g):
        if stride == 1:
            # correlation of the output gradient with the flipped kernel
            pad_g = ((0, 0), (1, 1), (1, 1), (0, 0)) if batched else ((1, 1), (1, 1), (0, 0))
            gp = np.pad(g, pad_g)
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (3, 3), axis=axes)
            if batched:
                gcols = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3)).reshape(
                    -1, 9 * cout
                )
            else:
                gcols = np.ascontiguousarray(gwin.transpose(0, 1, 3, 4, 2)).reshape(
                    -1, 9 * cout
                )
            wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * cout, cin)
            return (gcols @ wflip).reshape(x.shape)
        gflat = g.reshape(-1, cout)
        gpad = np.zeros_like(xp)
        if batched:
            dcols = (gflat @ wmat.T).reshape(bsz, ho, wo, 3, 3, cin)
            for di in range(3):
                for dj in range(3):
                    gpad[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += dcols[:, :, :, di, dj]
            return gpad[:, 1 : 1 + h, 1 : 1 + wd]
        dcols = (gflat @ wmat.T).reshape(ho, wo, 3, 3, cin)
        for di in range(3):
            for dj in range(3):
                gpad[di : di + stride * ho : stride, dj : dj + stride * wo : stride] += dcols[:, :, di, dj]
        return gpad[1 : 1 + h, 1 : 1 + wd]

    def bw(g):
        gflat = g.reshape(-1, cout)
        if b.requires_grad:
            b.accumulate(gflat.sum(axis=0))
        if w.requires_grad:
            w.accumulate((cols.T @ gflat).reshape(w.shape))
        if x.requires_grad:
            x.accumulate(input_grad(g))

    out._backward = bw
    return out


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling (the resize step of a resize convolution).

    Operates on the two spatial axes of (..., H, W, C)."""
    h, w, c = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    out_data = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)
    return _unary(
        x, out_data, lambda g: g.reshape(lead + (h, 2, w, 2, c)).sum(axis=(-4, -2))
    )


def global_avg_pool(x: Tensor) -> Tensor:
    """(..., H, W, C) -> (..., C) mean over both spatial dimensions."""
    h, w, c = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    inv = np.asarray(1.0 / (h * w), dtype=x.dtype)
    out_data = x.data.mean(axis=(-3, -2))
    return _unary(
        x,
        out_data,
        lambda g: np.broadcast_to((g * inv)[..., None, None, :], lead + (h, w, c)),
    )


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected: (..., N) @ (N, M) + (M,)."""
    if w.shape[0] != x.shape[-1]:
        raise DimensionError(f"linear shapes: x {x.shape}, w {w.shape}")
    out = Tensor(x.data @ w.data + b.data, parents=(x, w, b))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        x2 = x.data.reshape(-1, w.shape[0])
        if b.requires_grad:
            b.accumulate(g2.sum(axis=0))
        if w.requires_grad:
            w.accumulate(x2.T @ g2)
        if x.requires_grad:
            x.accumulate((g2 @ w.data.T).reshape(x.shape))

    out._backward = bw
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator = None, mask=None) -> Tensor:
    """Inverted dropout; identity when rate == 0 or no rng/mask is supplied."""
    if rate <= 0 or (rng is None and mask is None):
        return _unary(x, x.data.copy(), lambda g: g)
    if mask is None:
        mask = rng.random(x.shape) >= rate
    keep = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    m = mask.astype(x.dtype) * keep
    return _unary(x, x.data * m, lambda g: g * m)


def e2p_warp(x: Tensor, cfg: projection.E2PConfig) -> Tensor:
    """Differentiable equirect-to-perspective warp of a feature map.

    Accepts (H, W, C) or batched (B, H, W, C)."""
    if x.data.ndim == 3:
        h, w = x.shape[0], x.shape[1]
        out_data = projection.e2p(x.data, cfg)
        return _unary(
            x, out_data, lambda g: projection.e2p_backward(g, cfg, (h, w)).astype(x.dtype)
        )
    bsz, h, w, c = x.shape
    grid = projection.build_grid(cfg, w, h)
    i00, i01, i10, i11 = grid.flat_indices
    dt = x.dtype
    flat = x.data.reshape(bsz, h * w, c)
    out_data = (
        grid.w00.astype(dt)[..., None] * flat[:, i00]
        + grid.w01.astype(dt)[..., None] * flat[:, i01]
        + grid.w10.astype(dt)[..., None] * flat[:, i10]
        + grid.w11.astype(dt)[..., None] * flat[:, i11]
    )

    def bw(g):
        acc = np.zeros((bsz, h * w, c), dtype=dt)
        gflat = g.reshape(bsz, -1, c)
        for idx, wgt in zip(
            (i00, i01, i10, i11), (grid.w00, grid.w01, grid.w10, grid.w11)
        ):
            vals = wgt.astype(dt).ravel()[None, :, None] * gflat
            for bi in range(bsz):
                np.add.at(acc[bi], idx.ravel(), vals[bi])
        x.accumulate(acc.reshape(x.shape))

    out = Tensor(out_data, parents=(x,))
    if x.requires_grad:
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# losses


def bce_sum(pred: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Binary cross entropy summed over all elements; predictions clamped to
    [eps, 1-eps] (zero gradient outside the clamp)."""
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"bce shapes differ: {pred.shape} vs {t.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum(dtype=np.float64)
    out = Tensor(np.asarray(loss, dtype=pred.dtype), parents=(pred,))

    def bw(g):
        inside = (pred.data > eps) & (pred.data < 1.0 - eps)
        grad = np.where(inside, (p - t) / (p * (1.0 - p)), 0.0).astype(pred.dtype)
        pred.accumulate(g * grad)

    out._backward = bw
    return out


def l1_loss(pred: Tensor, target: float) -> Tensor:
    """Sum of absolute errors (scalar or array predictions)."""
    t = np.asarray(target, dtype=pred.dtype)
    diff = pred.data - t
    out = Tensor(np.asarray(np.abs(diff).sum(), dtype=pred.dtype), parents=(pred,))

    def bw(g):
        pred.accumulate(g * np.sign(diff))

    out._backward = bw
    return out


def add_constant(x: Tensor, c: float) -> Tensor:
    return _unary(x, x.data + np.asarray(c, dtype=x.dtype), lambda g: g)


def sum_tensors(ts) -> Tensor:
    ts = list(ts)
    out = ts[0]
    for t in ts[1:]:
        out = add(out, t)
    return out
