"""Fixed-step RK4 integration of latent state, differentiable end to end.

The dynamics function is an arbitrary callable (z, t) -> dz/dt built from
tape ops, so gradients flow through every solver step. No adaptive stepping:
determinism and exact differentiability matter more at this scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, axpy, rk4_combine

# guards against float fuzz when a gap is an exact multiple of max_step
_CEIL_EPS = 1e-9


class IntegrationDivergedError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"integration produced non-finite values near t={t}")
        self.t = t


@dataclass
class SolveSpec:
    max_step: float = 0.05
    method: str = "fixed-step-rk4"

    def __post_init__(self):
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")


def rk4_step(f, z, t, h):
    """One classical RK4 step; h may be a scalar or per-row [batch, 1] array.

    A per-row h of zero leaves that row unchanged, which is what lets a batch
    with ragged time grids advance in lockstep. Dynamics objects exposing a
    fused_step(z, t, h) fast path (single tape node, hand-derived backward)
    are dispatched to it; the result is the same to machine precision.
    """
    fused = getattr(f, "fused_step", None)
    if fused is not None:
        out = fused(z, t, h)
        if not np.all(np.isfinite(out.array)):
            raise IntegrationDivergedError(t if np.isscalar(t) else float(np.max(t)))
        return out
    k1 = f(z, t)
    k2 = f(axpy(z, k1, _half(h)), _shift(t, h, 0.5))
    k3 = f(axpy(z, k2, _half(h)), _shift(t, h, 0.5))
    k4 = f(axpy(z, k3, h), _shift(t, h, 1.0))
    out = rk4_combine(z, k1, k2, k3, k4, h)
    if not np.all(np.isfinite(out.array)):
        raise IntegrationDivergedError(t if np.isscalar(t) else float(np.max(t)))
    return out


def _half(h):
    return h * 0.5 if np.isscalar(h) else np.asarray(h) * 0.5


def _shift(t, h, frac):
    if np.isscalar(t) and np.isscalar(h):
        return t + frac * h
    return np.asarray(t) + frac * np.asarray(h)


def substeps(delta, max_step):
    """Number of equal sub-steps covering a gap without exceeding max_step."""
    if delta <= 0:
        return 0
    return max(1, math.ceil(delta / max_step - _CEIL_EPS))


def integrate_path(f, z0, t0, query_times, spec=None):
    """Latent state at each query time, starting from z0 at t0.

    Each gap between consecutive targets is covered by ceil(gap / max_step)
    equal sub-steps, so the local step never exceeds max_step regardless of
    how irregular the query grid is.
    """
    spec = spec or SolveSpec()
    times = [float(t) for t in query_times]
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise ValueError(f"query_times not strictly increasing: {a} then {b}")
    if times and times[0] < t0:
        raise ValueError(f"first query time {times[0]} precedes t0={t0}")

    out = []
    z = z0 if isinstance(z0, Tensor) else Tensor(z0)
    t = float(t0)
    for target in times:
        gap = target - t
        n = substeps(gap, spec.max_step)
        if n:
            h = gap / n
            for _ in range(n):
                z = rk4_step(f, z, t, h)
                t += h
            t = target
        out.append(z)
    return out


def integrate_offsets(f, z0, offsets, spec=None):
    """Batched ragged-grid integration used by the training loss.

    offsets is [batch, m], each row non-decreasing and starting at >= 0,
    giving per-sample time offsets from each row's own anchor. All rows
    advance together; the sub-step count for column j is the max over the
    batch of each row's own ceil(gap / max_step), so no row ever takes a
    step longer than max_step. With batch size 1 this reduces exactly to
    integrate_path on the row's times.
    """
    spec = spec or SolveSpec()
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 2:
        raise ValueError("offsets must be [batch, m]")
    if np.any(np.diff(offsets, axis=1) < 0) or np.any(offsets[:, 0] < 0):
        raise ValueError("offsets rows must be non-decreasing and non-negative")

    # per-column sub-step count: max over the batch of each row's own need
    deltas = np.diff(offsets, axis=1, prepend=0.0)
    counts = np.ceil(deltas / spec.max_step - _CEIL_EPS).astype(int)
    counts = np.maximum(counts, (deltas > 0).astype(int)).max(axis=0)

    out = []
    z = z0
    t = np.zeros((offsets.shape[0], 1))
    for j in range(offsets.shape[1]):
        n = int(counts[j])
        if n:
            h = (deltas[:, j] / n)[:, None]
            for _ in range(n):
                z = rk4_step(f, z, t, h)
                t = t + h
        out.append(z)
    return out
