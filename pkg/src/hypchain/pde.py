"""Method-of-characteristics simulator for the three-subsystem chain.

Each channel uses its own spatial grid chosen so that one time step moves
the profile by exactly one cell (unit CFL): advection is exact and only the
in-domain couplings need numerical integration (explicit trapezoid /
predictor-corrector, second order).  With all sigma = 0 a step is a pure
index shift, bitwise.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .chainspec import ChainSpec, Config, InputSignal
from .errors import CompatibilityError, GridError

TRACE_COLUMNS = (
    "u1_0", "u1_1", "v1_0", "v1_1",
    "u2_0", "u2_1", "v2_0", "v2_1",
    "u3_0", "u3_1", "v3_0", "v3_1",
)


def transport_times(spec):
    """Round-trip transport times tau_i = 1/lambda_i + 1/mu_i."""
    return spec.transport_times()


def _cells(speed, h):
    n = 1.0 / (speed * h)
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-9 * max(1.0, n):
        return None
    return n_round


def grid_cells(spec, h):
    """Cells per channel for step h, or raise GridError with a suggestion."""
    nu, nv = [], []
    for i in range(3):
        cu = _cells(spec.lambdas[i], h)
        cv = _cells(spec.mus[i], h)
        if cu is None or cv is None:
            speed = spec.lambdas[i] if cu is None else spec.mus[i]
            n_near = max(1, round(1.0 / (speed * h)))
            raise GridError(
                f"step h={h} is not commensurate with subsystem {i + 1} "
                f"(speed {speed}); nearest admissible h = {1.0 / (speed * n_near)!r}",
                suggested_h=1.0 / (speed * n_near),
            )
        nu.append(cu)
        nv.append(cv)
    return tuple(nu), tuple(nv)


@dataclass
class ChainState:
    """Six channel profiles sampled on their per-channel uniform grids."""

    t: float
    u: list  # three arrays, u[i] has nu[i]+1 points on [0,1]
    v: list
    h: float  # step the grids were built for

    def copy(self):
        return ChainState(self.t, [a.copy() for a in self.u],
                          [a.copy() for a in self.v], self.h)

    def grids(self):
        gu = [np.linspace(0.0, 1.0, a.size) for a in self.u]
        gv = [np.linspace(0.0, 1.0, a.size) for a in self.v]
        return gu, gv

    def traces(self):
        out = np.empty(12)
        for i in range(3):
            out[4 * i + 0] = self.u[i][0]
            out[4 * i + 1] = self.u[i][-1]
            out[4 * i + 2] = self.v[i][0]
            out[4 * i + 3] = self.v[i][-1]
        return out


def make_state(spec, h, u_profiles=None, v_profiles=None, t=0.0):
    """Allocate a state on commensurate grids, optionally from callables."""
    nu, nv = grid_cells(spec, h)
    u, v = [], []
    for i in range(3):
        xu = np.linspace(0.0, 1.0, nu[i] + 1)
        xv = np.linspace(0.0, 1.0, nv[i] + 1)
        fu = u_profiles[i] if u_profiles else None
        fv = v_profiles[i] if v_profiles else None
        u.append(np.asarray([fu(x) for x in xu], dtype=float) if callable(fu)
                 else np.zeros(nu[i] + 1) if fu is None else np.asarray(fu, dtype=float))
        v.append(np.asarray([fv(x) for x in xv], dtype=float) if callable(fv)
                 else np.zeros(nv[i] + 1) if fv is None else np.asarray(fv, dtype=float))
        if u[i].size != nu[i] + 1 or v[i].size != nv[i] + 1:
            raise GridError(f"profile sample count does not match grid for subsystem {i+1}")
    return ChainState(t=float(t), u=u, v=v, h=float(h))


def bump(center=0.5, width=0.3, amplitude=1.0):
    """Smooth compactly supported profile (infinitely compatible at x=0,1)."""
    def f(x):
        z = (x - center) / width
        if abs(z) >= 1.0:
            return 0.0
        return amplitude * np.exp(1.0 - 1.0 / (1.0 - z * z))
    return f


def l2_norm(state):
    """L2 norm over all six channels: sqrt(sum_i int u_i^2 + v_i^2 dx)."""
    total = 0.0
    gu, gv = state.grids()
    for i in range(3):
        total += np.trapezoid(state.u[i] ** 2, gu[i])
        total += np.trapezoid(state.v[i] ** 2, gv[i])
    return float(np.sqrt(total))


def boundary_residuals(spec, state, inputs_value):
    """Residuals of the six boundary relations at the state's time."""
    q, r = spec.q, spec.rho
    U1, U2, U3, U4 = inputs_value
    u, v = state.u, state.v
    res = {
        "u1_left": u[0][0] - q.q11 * v[0][0],
        "u2_left": u[1][0] - (U4 + q.q22 * v[1][0] + q.q21 * u[0][-1]),
        "u3_left": u[2][0] - (U3 + q.q33 * v[2][0] + q.q32 * u[1][-1]),
        "v1_right": v[0][-1] - (U1 + r.rho11 * u[0][-1] + r.rho12 * v[1][0]),
        "v2_right": v[1][-1] - (U2 + r.rho22 * u[1][-1] + r.rho23 * v[2][0]),
        "v3_right": v[2][-1] - r.rho33 * u[2][-1],
    }
    return res


def check_compatibility(spec, state, inputs=None, tol=1e-9, raise_on_fail=True):
    """Zero-order compatibility of initial data with the boundary relations."""
    if inputs is None:
        inputs = InputSignal.zero(spec.config)
    scale = max(1.0, max(float(np.max(np.abs(a))) for a in state.u + state.v))
    res = boundary_residuals(spec, state, inputs(state.t))
    worst = max(abs(x) for x in res.values()) / scale
    ok = worst <= tol
    if not ok and raise_on_fail:
        raise CompatibilityError(
            f"initial data violates boundary relations (worst relative residual "
            f"{worst:.3e} > {tol:.1e})", residuals=res)
    return {"ok": ok, "worst": worst, "residuals": res}


# ---------------------------------------------------------------------------
# Stepper
# ---------------------------------------------------------------------------


class _Interp:
    """Precomputed linear interpolation from one uniform grid to fixed points."""

    __slots__ = ("idx", "frac")

    def __init__(self, positions, dx, npts):
        p = np.clip(positions / dx, 0.0, npts - 1.0)
        idx = np.floor(p).astype(np.intp)
        idx = np.minimum(idx, npts - 2)
        self.idx = idx
        self.frac = p - idx

    def __call__(self, a):
        return a[self.idx] * (1.0 - self.frac) + a[self.idx + 1] * self.frac


class Stepper:
    """Caches grids, sigma samples and interpolation tables for a (spec, h)."""

    def __init__(self, spec, h):
        self.spec = spec
        self.h = float(h)
        self.nu, self.nv = grid_cells(spec, h)
        self.xu = [np.linspace(0.0, 1.0, n + 1) for n in self.nu]
        self.xv = [np.linspace(0.0, 1.0, n + 1) for n in self.nv]
        self.sp_u = [spec.sigma_plus[i](self.xu[i]) for i in range(3)]
        self.sm_v = [spec.sigma_minus[i](self.xv[i]) for i in range(3)]
        self.pure_transport = [spec.sigma_plus[i].is_zero and spec.sigma_minus[i].is_zero
                               for i in range(3)]
        self.v_at_u = [
            _Interp(self.xu[i], 1.0 / self.nv[i], self.nv[i] + 1) for i in range(3)]
        self.u_at_v = [
            _Interp(self.xv[i], 1.0 / self.nu[i], self.nu[i] + 1) for i in range(3)]

    def _predict(self, state):
        """Euler predictor for the interiors; boundary cells left stale."""
        h = self.h
        up, vp = [], []
        for i in range(3):
            u, v = state.u[i], state.v[i]
            if self.pure_transport[i]:
                u_new = np.empty_like(u)
                v_new = np.empty_like(v)
                u_new[1:] = u[:-1]
                v_new[:-1] = v[1:]
                up.append(u_new)
                vp.append(v_new)
                continue
            fu = self.sp_u[i] * self.v_at_u[i](v)
            fv = self.sm_v[i] * self.u_at_v[i](u)
            u_new = np.empty_like(u)
            v_new = np.empty_like(v)
            u_new[1:] = u[:-1] + h * fu[:-1]
            v_new[:-1] = v[1:] + h * fv[1:]
            up.append(u_new)
            vp.append(v_new)
        return up, vp

    def _fill_boundaries(self, u, v, inputs_value):
        q, r = self.spec.q, self.spec.rho
        U1, U2, U3, U4 = inputs_value
        v[2][-1] = r.rho33 * u[2][-1]
        v[1][-1] = U2 + r.rho22 * u[1][-1] + r.rho23 * v[2][0]
        v[0][-1] = U1 + r.rho11 * u[0][-1] + r.rho12 * v[1][0]
        u[0][0] = q.q11 * v[0][0]
        u[1][0] = U4 + q.q22 * v[1][0] + q.q21 * u[0][-1]
        u[2][0] = U3 + q.q33 * v[2][0] + q.q32 * u[1][-1]

    def step(self, state, inputs, controller=None, history=None):
        """Advance one step.  `inputs` is an InputSignal (open loop); if a
        controller callback is given it overrides the inputs, receiving the
        predicted state at the new time."""
        h = self.h
        t_new = state.t + h
        up, vp = self._predict(state)
        pred = ChainState(t_new, up, vp, h)
        if controller is not None:
            inputs_value = np.asarray(controller(t_new, pred, history), dtype=float)
        else:
            inputs_value = inputs(t_new)
        self._fill_boundaries(up, vp, inputs_value)
        un, vn = [], []
        for i in range(3):
            u, v = state.u[i], state.v[i]
            if self.pure_transport[i]:
                un.append(up[i])
                vn.append(vp[i])
                continue
            fu = self.sp_u[i] * self.v_at_u[i](v)
            fv = self.sm_v[i] * self.u_at_v[i](u)
            fu_p = self.sp_u[i] * self.v_at_u[i](vp[i])
            fv_p = self.sm_v[i] * self.u_at_v[i](up[i])
            u_new = np.empty_like(u)
            v_new = np.empty_like(v)
            u_new[1:] = u[:-1] + (h / 2.0) * (fu[:-1] + fu_p[1:])
            v_new[:-1] = v[1:] + (h / 2.0) * (fv[1:] + fv_p[:-1])
            un.append(u_new)
            vn.append(v_new)
        self._fill_boundaries(un, vn, inputs_value)
        return ChainState(t_new, un, vn, h), inputs_value


def step(spec, state, inputs, h):
    """Single functional step (builds a throwaway stepper; prefer simulate)."""
    stepper = Stepper(spec, h)
    new_state, _ = stepper.step(state, inputs)
    return new_state


# ---------------------------------------------------------------------------
# Trajectory recording
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    traces: np.ndarray          # (n+1, 12) boundary traces
    inputs: np.ndarray          # (n+1, 4) inputs applied
    norms: np.ndarray | None = None
    states: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # named recorded signals

    def trace(self, name):
        return self.traces[:, TRACE_COLUMNS.index(name)]

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t," + ",".join(TRACE_COLUMNS) + "\n")
        for k in range(self.times.size):
            row = [self.times[k]] + list(self.traces[k])
            buf.write(",".join(f"{x:.17e}" for x in row) + "\n")
        return buf.getvalue()


def simulate(spec, state0, inputs=None, T=1.0, h=None, controller=None,
             record_norms=False, snapshot_times=(), check=True,
             signal_probes=None, compat_tol=1e-9):
    """March the chain from state0 to time state0.t + T.

    `controller(t_new, predicted_state, history)` may replace the open-loop
    inputs; `signal_probes` is a dict name -> fn(state) recorded per step.
    """
    if h is None:
        h = state0.h
    if inputs is None:
        inputs = InputSignal.zero(spec.config)
    if check:
        check_compatibility(spec, state0, inputs, tol=compat_tol)
    stepper = Stepper(spec, h)
    n_steps = int(round(T / h))
    if abs(n_steps * h - T) > 1e-9 * max(1.0, T):
        raise GridError(f"horizon T={T} is not a multiple of h={h}")
    times = state0.t + h * np.arange(n_steps + 1)
    traces = np.empty((n_steps + 1, 12))
    applied = np.zeros((n_steps + 1, 4))
    norms = np.empty(n_steps + 1) if record_norms else None
    probes = {k: np.empty(n_steps + 1) for k in (signal_probes or {})}
    state = state0.copy()
    traces[0] = state.traces()
    applied[0] = inputs(state.t)
    if record_norms:
        norms[0] = l2_norm(state)
    for k, fn in (signal_probes or {}).items():
        probes[k][0] = fn(state)
    snap_idx = {int(round((ts - state0.t) / h)): ts for ts in snapshot_times}
    states = {}
    if 0 in snap_idx:
        states[snap_idx[0]] = state.copy()
    history = {"times": times, "traces": traces, "inputs": applied,
               "probes": probes, "k": 0}
    for k in range(1, n_steps + 1):
        history["k"] = k - 1
        state, u_applied = stepper.step(state, inputs, controller, history)
        traces[k] = state.traces()
        applied[k] = u_applied
        if record_norms:
            norms[k] = l2_norm(state)
        for name, fn in (signal_probes or {}).items():
            probes[name][k] = fn(state)
        if k in snap_idx:
            states[snap_idx[k]] = state.copy()
    return Trajectory(times=times, traces=traces, inputs=applied, norms=norms,
                      states=states, extra=probes), state
