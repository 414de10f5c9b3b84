"""Discrete regression in symlog space: scalar targets become soft two-hot
distributions over fixed bins; predictions decode as the softmax expectation
mapped back through symexp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def symlog(v):
    """sign(v) * ln(1 + |v|)."""
    v = np.asarray(v)
    return np.sign(v) * np.log1p(np.abs(v))


def symexp(v):
    """Exact inverse of symlog: sign(v) * (exp(|v|) - 1)."""
    v = np.asarray(v)
    return np.sign(v) * np.expm1(np.abs(v))


@dataclass(frozen=True)
class BinSpec:
    """Evenly spaced bin centers over [vmin, vmax] in symlog space."""

    num_bins: int = 101
    vmin: float = -10.0
    vmax: float = 10.0

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError("need at least 2 bins")
        if not self.vmin < self.vmax:
            raise ValueError("vmin must be below vmax")

    @property
    def centers(self):
        return np.linspace(self.vmin, self.vmax, self.num_bins)

    @property
    def step(self):
        return (self.vmax - self.vmin) / (self.num_bins - 1)


def two_hot_encode(values, bins: BinSpec, dtype=None):
    """Spread symlog(value) over the two adjacent bin centers with linear weights.

    values (...,) -> (..., num_bins); each row has at most 2 nonzeros summing to 1.
    """
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("two-hot encoding requires finite values")
    dtype = dtype or (values.dtype if values.dtype.kind == "f" else np.float64)
    x = np.clip(symlog(values), bins.vmin, bins.vmax)
    pos = (x - bins.vmin) / bins.step
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, bins.num_bins - 2)
    w_hi = (pos - lo).astype(dtype)
    out = np.zeros(values.shape + (bins.num_bins,), dtype)
    flat = out.reshape(-1, bins.num_bins)
    idx = np.arange(flat.shape[0])
    lo_f = lo.reshape(-1)
    whi_f = w_hi.reshape(-1)
    flat[idx, lo_f] = 1.0 - whi_f
    flat[idx, lo_f + 1] += whi_f
    return out


def two_hot_decode(logits, bins: BinSpec):
    """symexp of the softmax-expected bin center. logits (..., num_bins) -> (...,)."""
    logits = np.asarray(logits)
    if logits.shape[-1] != bins.num_bins:
        raise ValueError(f"expected {bins.num_bins} logits, got {logits.shape[-1]}")
    m = logits.max(axis=-1, keepdims=True)
    e = logits - m
    np.exp(e, out=e)
    return symexp((e @ bins.centers.astype(logits.dtype)) / e.sum(axis=-1))
