"""Reverse-mode autodiff over numpy arrays, scoped to the fixed layer set used here.

Conventions: feature vectors live on the last axis; nodes record a backward
closure over cached forward intermediates; constants (plain ndarrays, floats)
participate in math but never receive gradients. float32 in, float32 out —
scalar constants are Python floats so numpy's weak promotion keeps the dtype.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (planning, targets, eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense array with an optional gradient slot and a link into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        t = Tensor(self.data)
        return t

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            # copy so later in-place += never aliases a forward buffer
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Run reverse accumulation from this node (a scalar unless grad given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        # iterative topological order; graphs here are small but can be deep
        order, stack, seen = [], [(self, False)], set()
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -other if isinstance(other, (float, int)) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (float, int)):
        return x  # keep Python scalars weak so float32 arrays stay float32
    return np.asarray(x)


def _track(*xs):
    """Parents that need gradient flow, or () when the tape is off."""
    if not _grad_enabled:
        return ()
    return tuple(x for x in xs if isinstance(x, Tensor) and (x.requires_grad or x._parents or x._backward))


def _make(data, parents, backward):
    out = Tensor(data)
    if parents:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum g down to shape, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(x, y):
    xd, yd = _data(x), _data(y)
    parents = _track(x, y)

    def backward(g):
        if isinstance(x, Tensor) and x in parents:
            x.accumulate_grad(_unbroadcast(g, xd.shape))
        if isinstance(y, Tensor) and y in parents:
            y.accumulate_grad(_unbroadcast(g, yd.shape))

    return _make(xd + yd, parents, backward)


def mul(x, y):
    xd, yd = _data(x), _data(y)
    parents = _track(x, y)

    def backward(g):
        if isinstance(x, Tensor) and x in parents:
            x.accumulate_grad(_unbroadcast(g * yd, xd.shape))
        if isinstance(y, Tensor) and y in parents:
            y.accumulate_grad(_unbroadcast(g * xd, yd.shape))

    return _make(xd * yd, parents, backward)


def square(x):
    xd = _data(x)
    parents = _track(x)

    def backward(g):
        x.accumulate_grad(g * (2.0 * xd))

    return _make(xd * xd, parents, backward)


def tsum(x, axis=None):
    xd = _data(x)
    parents = _track(x)
    out = xd.sum(axis=axis)

    def backward(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, xd.shape).astype(xd.dtype, copy=True))
        else:
            x.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), xd.shape).astype(xd.dtype, copy=True))

    return _make(out, parents, backward)


def tmean(x, axis=None):
    xd = _data(x)
    n = xd.size if axis is None else xd.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / n)


def concat(xs, axis=-1):
    datas = [_data(x) for x in xs]
    parents = _track(*xs)
    sizes = [d.shape[axis] for d in datas]

    def backward(g):
        offset = 0
        for x, d, s in zip(xs, datas, sizes):
            if isinstance(x, Tensor) and x in parents:
                idx = [slice(None)] * g.ndim
                idx[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + s)
                x.accumulate_grad(g[tuple(idx)])
            offset += s

    return _make(np.concatenate(datas, axis=axis), parents, backward)


def slice_last(x, start, stop):
    xd = _data(x)
    parents = _track(x)

    def backward(g):
        full = np.zeros_like(xd)
        full[..., start:stop] = g
        x.accumulate_grad(full)

    return _make(xd[..., start:stop], parents, backward)


def reshape(x, shape):
    xd = _data(x)
    parents = _track(x)

    def backward(g):
        x.accumulate_grad(g.reshape(xd.shape))

    return _make(xd.reshape(shape), parents, backward)


# ---------------------------------------------------------------- layer math


def linear(x, w, b):
    """y = x @ w.T + b with w: [out, in]."""
    xd, wd, bd = _data(x), _data(w), _data(b)
    parents = _track(x, w, b)
    out = xd @ wd.T
    out += bd

    def backward(g):
        if isinstance(x, Tensor) and x in parents:
            x.accumulate_grad(g @ wd)
        if isinstance(w, Tensor) and w in parents:
            gm = g.reshape(-1, g.shape[-1])
            xm = xd.reshape(-1, xd.shape[-1])
            w.accumulate_grad(gm.T @ xm)
        if isinstance(b, Tensor) and b in parents:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out, parents, backward)


def ensemble_linear(x, w, b):
    """Stacked heads in one call: x [B,in] or [n,B,in], w [n,out,in], b [n,out] -> [n,B,out]."""
    xd, wd, bd = _data(x), _data(w), _data(b)
    parents = _track(x, w, b)
    out = np.matmul(xd, wd.transpose(0, 2, 1))
    out += bd[:, None, :]

    def backward(g):
        if isinstance(x, Tensor) and x in parents:
            gx = np.matmul(g, wd)  # [n,B,in]
            x.accumulate_grad(gx.sum(axis=0) if xd.ndim == 2 else gx)
        if isinstance(w, Tensor) and w in parents:
            xb = xd if xd.ndim == 3 else np.broadcast_to(xd, (wd.shape[0],) + xd.shape)
            w.accumulate_grad(np.matmul(g.transpose(0, 2, 1), xb))
        if isinstance(b, Tensor) and b in parents:
            b.accumulate_grad(g.sum(axis=1))

    return _make(out, parents, backward)


def layer_norm(x, scale, shift, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    xd, sd, bd = _data(x), _data(scale), _data(shift)
    parents = _track(x, scale, shift)
    inv_n = 1.0 / xd.shape[-1]
    # sum-based moments: the mean wrapper costs more than the reduction itself
    mu = xd.sum(axis=-1, keepdims=True)
    mu *= inv_n
    xc = xd - mu
    var = np.einsum("...i,...i->...", xc, xc)[..., None]
    var *= inv_n
    var += eps
    rstd = np.sqrt(var)
    np.divide(1.0, rstd, out=rstd)
    xhat = xc * rstd
    out = xhat * sd
    out += bd

    def backward(g):
        if isinstance(scale, Tensor) and scale in parents:
            scale.accumulate_grad(_unbroadcast(g * xhat, sd.shape))
        if isinstance(shift, Tensor) and shift in parents:
            shift.accumulate_grad(_unbroadcast(g, bd.shape))
        if isinstance(x, Tensor) and x in parents:
            gy = g * sd
            n = xd.shape[-1]
            # d/dx of (x - mu) * rstd: project out the mean and the xhat component
            dot = np.einsum("...i,...i->...", gy, xhat)[..., None]
            mean_gy = gy.sum(axis=-1, keepdims=True)
            mean_gy *= 1.0 / n
            x.accumulate_grad((gy - mean_gy - xhat * (dot * (1.0 / n))) * rstd)

    return _make(out, parents, backward)


def mish(x):
    """x * tanh(softplus(x)), computed with a single exp per element."""
    xd = _data(x)
    parents = _track(x)
    # tanh(softplus(x)) = ((1+e^x)^2 - 1) / ((1+e^x)^2 + 1); exact for x <= cap,
    # and 1 to machine precision past it
    u = np.minimum(xd, 30.0)
    np.exp(u, out=u)
    s = 1.0 + u
    s2 = s * s
    t = s2 - 1.0
    s2 += 1.0
    t /= s2
    out = xd * t

    def backward(g):
        sig = u / (1.0 + u)  # sigmoid(min(x, cap)); exact where it matters
        x.accumulate_grad(g * (t + xd * sig * (1.0 - t * t)))

    return _make(out, parents, backward)


def tanh(x):
    xd = _data(x)
    parents = _track(x)
    out = np.tanh(xd)

    def backward(g):
        x.accumulate_grad(g * (1.0 - out * out))

    return _make(out, parents, backward)


def texp(x):
    xd = _data(x)
    parents = _track(x)
    out = np.exp(xd)

    def backward(g):
        x.accumulate_grad(g * out)

    return _make(out, parents, backward)


def clamp(x, lo, hi):
    """Hard clip with pass-through gradient strictly inside [lo, hi]."""
    xd = _data(x)
    parents = _track(x)
    out = np.clip(xd, lo, hi)

    def backward(g):
        x.accumulate_grad(g * ((xd >= lo) & (xd <= hi)))

    return _make(out, parents, backward)


def simnorm(x, v, tau=1.0):
    """Per-group softmax: last axis split into groups of v, each projected onto a simplex."""
    xd = _data(x)
    if xd.shape[-1] % v != 0:
        raise ValueError(f"last axis {xd.shape[-1]} not divisible by group size {v}")
    parents = _track(x)
    shape = xd.shape
    xg = xd.reshape(shape[:-1] + (shape[-1] // v, v))
    z = xg / tau if tau != 1.0 else xg
    e = z - z.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    p = e / e.sum(axis=-1, keepdims=True)
    out = p.reshape(shape)

    def backward(g):
        gg = g.reshape(shape[:-1] + (shape[-1] // v, v))
        dot = np.sum(gg * p, axis=-1, keepdims=True)
        gx = p * (gg - dot)
        if tau != 1.0:
            gx = gx / tau
        x.accumulate_grad(gx.reshape(shape))

    return _make(out, parents, backward)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate == 0.0:
        return x
    xd = _data(x)
    parents = _track(x)
    keep = (rng.random(xd.shape, dtype=np.float32) >= rate).astype(xd.dtype)
    keep *= 1.0 / (1.0 - rate)
    out = xd * keep

    def backward(g):
        x.accumulate_grad(g * keep)

    return _make(out, parents, backward)


def soft_cross_entropy(logits, target):
    """-sum(target * log_softmax(logits)) along the last axis; target is a constant distribution."""
    ld = _data(logits)
    td = _data(target)
    if ld.shape[-1] != td.shape[-1]:
        raise ValueError(f"logits bins {ld.shape[-1]} != target bins {td.shape[-1]}")
    sums = td.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(td < 0.0):
        raise ValueError("soft targets must be distributions (nonnegative, sum to 1)")
    parents = _track(logits)
    m = ld.max(axis=-1, keepdims=True)
    e = ld - m
    np.exp(e, out=e)
    se = e.sum(axis=-1, keepdims=True)
    logz = np.log(se) + m
    out = (logz[..., 0] - np.einsum("...i,...i->...", td, ld)).astype(ld.dtype)

    def backward(g):
        p = e / se
        logits.accumulate_grad((p - td) * g[..., None])

    return _make(out, parents, backward)


def bin_expectation(logits, centers):
    """softmax(logits) @ centers along the last axis; centers is a constant vector."""
    ld = _data(logits)
    c = np.asarray(centers)
    parents = _track(logits)
    m = ld.max(axis=-1, keepdims=True)
    e = ld - m
    np.exp(e, out=e)
    # expectation without materializing normalized probabilities
    se = e.sum(axis=-1)
    out = (e @ c) / se

    def backward(g):
        p = e / se[..., None]
        logits.accumulate_grad(p * (c - out[..., None]) * g[..., None])

    return _make(out, parents, backward)


def symexp_t(x):
    """sign(x) * (exp(|x|) - 1) as a tape op."""
    xd = _data(x)
    parents = _track(x)
    a = np.exp(np.abs(xd))
    out = np.sign(xd) * (a - 1.0)

    def backward(g):
        x.accumulate_grad(g * a)

    return _make(out, parents, backward)


def embedding(table, ids):
    """Row lookup with scatter-add backward; ids is a constant int array."""
    td = _data(table)
    ids = np.asarray(ids)
    parents = _track(table)
    out = td[ids]

    def backward(g):
        acc = np.zeros_like(td)
        np.add.at(acc, ids, g)
        table.accumulate_grad(acc)

    return _make(out, parents, backward)
