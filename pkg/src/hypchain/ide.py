"""Scalar integral difference equations (IDEs) with up to two inputs.

The model is

    x(t) = a x(t - tau) + int_0^tau N(nu) x(t - nu) dnu
           + sum_j [ b_j V_j(t - theta_j)
                     + int_0^{theta_j + delta_j} M_j(nu) V_j(t - nu) dnu ]

All distributed terms use trapezoid quadrature on a uniform lattice of step
h which must divide every delay.  The nu = 0 endpoint makes each step a
scalar implicit equation, solved exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GridError, SpecValidationError


# ---------------------------------------------------------------------------
# Sampled kernels
# ---------------------------------------------------------------------------


@dataclass
class Kernel:
    """Uniformly sampled kernel on [lo, hi] with linear interpolation."""

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise SpecValidationError("kernel needs at least two samples")
        if not self.hi > self.lo:
            raise SpecValidationError("kernel support must have hi > lo")

    @classmethod
    def constant(cls, c, lo, hi, n=None):
        if n is None:
            n = 2
        return cls(lo, hi, np.full(n, float(c)))

    @classmethod
    def from_callable(cls, fn, lo, hi, n):
        nodes = np.linspace(lo, hi, n)
        return cls(lo, hi, np.asarray([fn(t) for t in nodes], dtype=float))

    @property
    def step(self):
        return (self.hi - self.lo) / (self.values.size - 1)

    @property
    def nodes(self):
        return np.linspace(self.lo, self.hi, self.values.size)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t <= self.hi),
                        np.interp(t, self.nodes, self.values), 0.0)

    def resample(self, h):
        """Samples on the lattice of step h covering [lo, hi].

        lo and hi must lie on the lattice; existing nodes are reused exactly
        when h matches the stored step.
        """
        k0 = _lattice_index(self.lo, h, "kernel support start")
        k1 = _lattice_index(self.hi, h, "kernel support end")
        if k1 <= k0:
            raise GridError("kernel support shorter than one lattice step")
        if abs(self.step - h) < 1e-12 * max(1.0, h):
            return k0, self.values.copy()
        return k0, self(h * np.arange(k0, k1 + 1))

    def max_abs(self):
        return float(np.max(np.abs(self.values)))


def _lattice_index(t, h, what="delay"):
    k = t / h
    kr = round(k)
    if abs(k - kr) > 1e-7:
        raise GridError(
            f"{what} {t} is not a multiple of the lattice step {h}; nearest "
            f"admissible value {kr * h!r}", suggested_h=t / max(1, kr))
    return int(kr)


def trapezoid_weights(n):
    """Trapezoid weights (unit step) for n+1 nodes: [1/2, 1, ..., 1, 1/2]."""
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class IdeInput:
    """One input channel: pointwise gain b at delay theta plus a distributed
    kernel M supported on [0, theta + delta]."""

    b: float
    theta: float
    delta: float = 0.0
    M: Kernel | None = None
    label: str = "V"

    @property
    def horizon(self):
        return self.theta + self.delta


@dataclass
class IdeModel:
    a: float
    tau: float
    N: Kernel | None = None
    inputs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise SpecValidationError("principal delay tau must be positive")
        for inp in self.inputs:
            if not (inp.theta > 0.0 and inp.delta >= 0.0):
                raise SpecValidationError("input delays must satisfy theta>0, delta>=0")

    @property
    def history_span(self):
        spans = [self.tau]
        if self.N is not None:
            spans.append(self.N.hi)
        for inp in self.inputs:
            spans.append(inp.horizon)
        return max(spans)

    def principal_part_stable(self):
        """The delayed-recursion part x(t) = a x(t - tau) is stable iff |a|<1."""
        return abs(self.a) < 1.0

    def without_inputs(self):
        return replace(self, inputs=[])


def principal_part_stable(model_or_a):
    if isinstance(model_or_a, IdeModel):
        return model_or_a.principal_part_stable()
    return abs(float(model_or_a)) < 1.0


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class _LagOp:
    """Discretized right-hand-side operator: pointwise lag plus kernel sum."""

    __slots__ = ("b", "kb", "wk", "k0", "w0")

    def __init__(self, b, theta, kernel, h):
        self.b = float(b)
        self.kb = _lattice_index(theta, h) if b != 0.0 else 0
        if kernel is not None:
            k0, vals = kernel.resample(h)
            w = trapezoid_weights(vals.size - 1) * h * vals
            self.k0 = k0
            self.wk = w[::-1].copy()  # reversed for dot with chronological slice
            self.w0 = w[0] if k0 == 0 else 0.0
        else:
            self.k0 = 0
            self.wk = None
            self.w0 = 0.0

    def apply_past(self, series, k):
        """Contribution using strictly past samples; the nu=0 term (if any)
        is excluded and reported via w0 for the implicit solve."""
        out = 0.0
        if self.b != 0.0:
            out += self.b * series[k - self.kb]
        if self.wk is not None:
            m = self.wk.size
            lo = k - (self.k0 + m - 1)
            seg = series[lo:k - self.k0 + 1]
            out += float(np.dot(self.wk, seg))
            if self.k0 == 0:
                out -= self.w0 * series[k]
        return out


def _history_array(history, h, n_hist):
    """Sample a history (callable or scalar or array) on the past lattice."""
    ts = -h * np.arange(n_hist, 0, -1)
    if history is None:
        return np.zeros(n_hist)
    if callable(history):
        return np.asarray([history(t) for t in ts], dtype=float)
    arr = np.asarray(history, dtype=float)
    if arr.ndim == 0:
        return np.full(n_hist, float(arr))
    if arr.size != n_hist:
        raise GridError(f"history must have {n_hist} samples, got {arr.size}")
    return arr.copy()


def simulate_ide(model, T, h, x_history=None, input_signals=None,
                 feedback=None, return_inputs=False):
    """March the IDE on the lattice t = k h, k = 0..T/h.

    `x_history` covers [-H, 0) (callable, scalar, or array); x(0) onward is
    computed.  `input_signals` is a list of callables/arrays, one per model
    input; `feedback` (if given) is a callable
    feedback(k, t, x_series, v_series_list) returning, per input, either a
    value (which must then use only strictly past x samples) or a pair
    (p, d) meaning V_j(t) = p + d x(t); the latter is resolved jointly with
    the implicit step so laws that read the current state stay exact.
    """
    n_steps = int(round(T / h))
    if abs(n_steps * h - T) > 1e-9 * max(1.0, T):
        raise GridError(f"horizon T={T} is not a multiple of h={h}")
    n_hist = _lattice_index(model.history_span, h, "history span") + 2
    ka = _lattice_index(model.tau, h, "principal delay")
    x = np.zeros(n_hist + n_steps + 1)
    x[:n_hist] = _history_array(x_history, h, n_hist)
    n_in = len(model.inputs)
    v = [np.zeros(n_hist + n_steps + 1) for _ in range(n_in)]
    if input_signals is not None:
        for j, sig in enumerate(input_signals):
            if sig is None:
                continue
            if callable(sig):
                ts = h * np.arange(-n_hist, n_steps + 1)
                v[j][:] = [sig(t) for t in ts]
            else:
                arr = np.asarray(sig, dtype=float)
                v[j][n_hist:n_hist + arr.size] = arr[:n_steps + 1]
    n_op = _LagOp(0.0, 1.0, model.N, h)
    in_ops = [_LagOp(inp.b, inp.theta, inp.M, h) for inp in model.inputs]
    for k in range(n_hist, n_hist + n_steps + 1):
        t = (k - n_hist) * h
        rhs = model.a * x[k - ka] + n_op.apply_past(x, k)
        denom = 1.0 - n_op.w0
        for j, op in enumerate(in_ops):
            rhs += op.apply_past(v[j], k)   # strictly past input samples
        pairs = None
        if feedback is not None:
            vals = feedback(k, t, x, v)
            if vals and isinstance(vals[0], tuple):
                pairs = vals
                for j, (p, d) in enumerate(pairs):
                    rhs += in_ops[j].w0 * p
                    denom -= in_ops[j].w0 * d
            else:
                for j, val in enumerate(vals):
                    v[j][k] = val
        if pairs is None:
            for j, op in enumerate(in_ops):
                rhs += op.w0 * v[j][k]      # current-instant inputs are known
        x[k] = rhs / denom
        if pairs is not None:
            for j, (p, d) in enumerate(pairs):
                v[j][k] = p + d * x[k]
    times = h * np.arange(n_steps + 1)
    xs = x[n_hist:]
    if return_inputs:
        return times, xs, [vj[n_hist:] for vj in v]
    return times, xs


def partial_trajectory_norm(times, xs, t, span):
    """L2 norm of x over the window [t - span, t] (trapezoid)."""
    h = times[1] - times[0]
    k1 = int(round((t - times[0]) / h))
    k0 = k1 - int(round(span / h))
    if k0 < 0 or k1 >= times.size:
        raise GridError("norm window extends outside the computed trajectory")
    seg = xs[k0:k1 + 1]
    return float(np.sqrt(np.trapezoid(seg * seg, dx=h)))


# ---------------------------------------------------------------------------
# Input substitution (two inputs -> one)
# ---------------------------------------------------------------------------


def _add_weighted(acc_w, k0, weights):
    acc_w[k0:k0 + weights.size] += weights


def substitute_v2(model, alpha, mode="state", step=None):
    """Absorb the second input into the model using

        state mode:  V2(t) =  alpha int_0^tau          x(t - nu) dnu
        input mode:  V2(t) = -alpha int_0^{theta1+delta1} V1(t - nu) dnu

    and return the equivalent single-input model.  The combination is done
    at the discrete (trapezoid) level on the kernels' lattice, so the
    resulting model reproduces the two-input loop exactly and its
    characteristic function satisfies the corresponding Laplace identity at
    machine-level quadrature accuracy.
    """
    if len(model.inputs) != 2:
        raise SpecValidationError("substitution requires exactly two inputs")
    v1, v2 = model.inputs
    if mode == "state" and v1.delta != 0.0:
        raise SpecValidationError(
            "state-mode substitution requires delta_1 = 0 (pointwise-reachable "
            "first input)")
    if mode not in ("state", "input"):
        raise SpecValidationError(f"unknown substitution mode {mode!r}")
    # lattice step: as requested, else finest of the kernels involved,
    # else tau/400
    if step is not None:
        h = float(step)
    else:
        steps = [k.step for k in (model.N, v1.M, v2.M) if k is not None]
        h = min(steps) if steps else model.tau / 400.0
    span = model.tau if mode == "state" else v1.horizon
    ks = _lattice_index(span, h, "substitution span")
    k_t2 = _lattice_index(v2.theta, h, "theta_2")
    box = trapezoid_weights(ks) * h  # discrete weights of int_0^span

    # accumulated discrete weights of the absorbed terms
    n_total_span = span + v2.horizon
    n_len = _lattice_index(n_total_span, h, "combined support") + 1
    acc = np.zeros(n_len)
    _add_weighted(acc, k_t2, v2.b * box)                      # b2 V2(t-theta2)
    if v2.M is not None:
        m0, mv = v2.M.resample(h)
        mw = trapezoid_weights(mv.size - 1) * h * mv
        conv = np.convolve(mw, box)
        _add_weighted(acc, m0, conv)
    sign = alpha if mode == "state" else -alpha
    acc *= sign

    base = model.N if mode == "state" else v1.M
    out_hi = n_total_span
    if base is not None:
        out_hi = max(out_hi, base.hi)
    out_len = _lattice_index(out_hi, h, "combined support") + 1
    total = np.zeros(out_len)
    if base is not None:
        b0, bv = base.resample(h)
        _add_weighted(total, b0, trapezoid_weights(bv.size - 1) * h * bv)
    total[:acc.size] += acc
    # back to samples: divide by the union trapezoid weights
    w_union = trapezoid_weights(out_len - 1) * h
    combined = Kernel(0.0, (out_len - 1) * h, total / w_union)

    if mode == "state":
        new_model = replace(model, N=combined, inputs=[v1],
                            meta={**model.meta, "substitution": ("state", alpha)})
    else:
        theta1 = v1.theta
        new_delta = combined.hi - theta1
        new_v1 = replace(v1, M=combined, delta=new_delta)
        new_model = replace(model, inputs=[new_v1],
                            meta={**model.meta, "substitution": ("input", alpha)})
    return new_model


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def series_to_csv(times, xs, extra=None):
    cols = ["t", "x"] + list((extra or {}).keys())
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for k in range(times.size):
        row = [times[k], xs[k]] + [v[k] for v in (extra or {}).values()]
        buf.write(",".join(f"{x:.17e}" for x in row) + "\n")
    return buf.getvalue()
