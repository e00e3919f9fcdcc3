"""Triangular integral-transform kernels for each 2x2 subsystem.

Every subsystem carries four direct kernels (K^uu, K^uv, K^vu, K^vv) and
four inverse kernels, defined on a triangle: subsystem 1 transforms with
integrals over [0, x] (lower triangle 0 <= y <= x), subsystems 2 and 3 over
[x, 1] (upper triangle x <= y <= 1).  The kernels satisfy first-order
characteristic boundary-value problems:

  * "slope" kernels are transported along the (1, 1) direction with data on
    the horizontal edge (y = 0 lower, y = 1 upper), the edge value being
    proportional to a companion kernel;
  * "cross" kernels are transported along (speed_u, -speed_v) with data on
    the diagonal y = x fixed by the local coupling over the speed sum.

Both are solved by successive approximation of the equivalent integral
equations along characteristics on a uniform triangle grid.  Slope kernels
integrate exactly along grid diagonals; cross kernels use a level-by-level
recurrence with cubic row interpolation (the integral itself is trapezoid,
so the scheme is second order overall).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, GridError, NumericsError, SpecValidationError
from .chainspec import ChainSpec, Config

LOWER, UPPER = "lower", "upper"


# ---------------------------------------------------------------------------
# Storage
# ---------------------------------------------------------------------------


@dataclass
class TriKernel:
    """Kernel samples on an (n x n) grid, valid on one triangle of [0,1]^2.

    Entries outside the triangle are filled with the nearest diagonal value
    so that bilinear interpolation stays accurate in cells straddling the
    diagonal.
    """

    values: np.ndarray
    triangle: str

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    def interp(self, x, y):
        """Piecewise-linear interpolation, vectorized over broadcastable x, y.

        Bilinear in the interior; in grid cells cut by the diagonal the value
        is taken from the linear interpolant on the in-triangle half so that
        only valid samples are used."""
        n, h = self.n, self.h
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
        fx = x / h
        fy = y / h
        i0 = np.clip(fx.astype(int), 0, n - 2)
        j0 = np.clip(fy.astype(int), 0, n - 2)
        tx = fx - i0
        ty = fy - j0
        v = self.values
        out = ((1 - tx) * (1 - ty) * v[i0, j0] + tx * (1 - ty) * v[i0 + 1, j0]
               + (1 - tx) * ty * v[i0, j0 + 1] + tx * ty * v[i0 + 1, j0 + 1])
        cut = i0 == j0
        if np.any(cut):
            f00 = v[i0, j0]
            f10 = v[i0 + 1, j0]
            f01 = v[i0, j0 + 1]
            f11 = v[i0 + 1, j0 + 1]
            if self.triangle == LOWER:
                bary = f00 + tx * (f10 - f00) + ty * (f11 - f10)
            else:
                bary = f00 + ty * (f01 - f00) + tx * (f11 - f01)
            out = np.where(cut, bary, out)
        return out

    def row(self, x):
        """Samples K(x, y_j) on the kernel grid nodes."""
        nodes = np.linspace(0.0, 1.0, self.n)
        return self.interp(np.full(self.n, float(x)), nodes)

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("x,y,value\n")
        nodes = np.linspace(0.0, 1.0, self.n)
        for i, x in enumerate(nodes):
            for j, y in enumerate(nodes):
                if (self.triangle == LOWER and y <= x) or \
                   (self.triangle == UPPER and y >= x):
                    buf.write(f"{x:.17e},{y:.17e},{self.values[i, j]:.17e}\n")
        return buf.getvalue()


def _zero_tri(n, triangle):
    return TriKernel(np.zeros((n, n)), triangle)


def _fill_invalid(values, triangle):
    """Extend across the diagonal by the nearest diagonal value."""
    n = values.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mid = np.clip(((i + j) + 1) // 2, 0, n - 1)
    diag = values[np.arange(n), np.arange(n)]
    if triangle == LOWER:
        invalid = j > i
    else:
        invalid = j < i
    values[invalid] = diag[mid[invalid]]
    return values


# ---------------------------------------------------------------------------
# Goursat solver engine
# ---------------------------------------------------------------------------


def _diag_index_arrays(n, triangle):
    d = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    if triangle == LOWER:
        I = np.minimum(d + k, n - 1)
        J = np.broadcast_to(k, (n, n)).copy()
        valid = (d + k) <= (n - 1)
    else:
        I = np.broadcast_to(k, (n, n)).copy()
        J = np.minimum(d + k, n - 1)
        valid = (d + k) <= (n - 1)
    return I, J, valid


def _cumtrapz_rows(G, h):
    inc = 0.5 * h * (G[:, 1:] + G[:, :-1])
    out = np.zeros_like(G)
    out[:, 1:] = np.cumsum(inc, axis=1)
    return out


def _cubic_row(vals, pos, lo, hi):
    """Cubic Lagrange interpolation of `vals` (indexed 0..n-1, valid on
    [lo, hi]) at fractional index positions `pos` (clipped to the valid
    range).  Falls back to linear when fewer than four valid nodes exist."""
    pos = np.clip(pos, lo, hi)
    if hi - lo < 3:
        base = np.clip(np.floor(pos).astype(int), lo, max(lo, hi - 1))
        t = pos - base
        return (1 - t) * vals[base] + t * vals[np.minimum(base + 1, hi)]
    base = np.clip(np.floor(pos).astype(int) - 1, lo, hi - 3)
    t = pos - base
    w0 = -(t - 1) * (t - 2) * (t - 3) / 6.0
    w1 = t * (t - 2) * (t - 3) / 2.0
    w2 = -t * (t - 1) * (t - 3) / 2.0
    w3 = t * (t - 1) * (t - 2) / 6.0
    return w0 * vals[base] + w1 * vals[base + 1] + w2 * vals[base + 2] \
        + w3 * vals[base + 3]


def _linear_row(vals, pos, lo, hi):
    pos = np.clip(pos, lo, hi)
    base = np.clip(np.floor(pos).astype(int), lo, max(lo, hi - 1))
    t = pos - base
    return (1 - t) * vals[base] + t * vals[np.minimum(base + 1, hi)]


class _GoursatSystem:
    """Coupled kernel definitions on one triangle, solved by successive
    approximation (Gauss–Seidel ordering: cross kernels first, then slope
    kernels, whose edge data read the fresh cross values)."""

    def __init__(self, n, triangle, sigma_plus, sigma_minus):
        self.n = n
        self.h = 1.0 / (n - 1)
        self.triangle = triangle
        self.nodes = np.linspace(0.0, 1.0, n)
        self.sig = {"+": np.asarray([sigma_plus(t) for t in self.nodes]),
                    "-": np.asarray([sigma_minus(t) for t in self.nodes])}
        self.defs = {}
        self.I, self.J, self.valid = _diag_index_arrays(n, triangle)

    def add_slope(self, name, c, sign, sigma, sigma_arg, partner,
                  edge_partner, edge_coef):
        self.defs[name] = dict(kind="slope", c=c, sign=sign, sigma=sigma,
                               sigma_arg=sigma_arg, partner=partner,
                               edge_partner=edge_partner, edge_coef=edge_coef)

    def add_cross(self, name, p, m, sign, sigma, sigma_arg, partner,
                  diag_coef, diag_sigma):
        diag = diag_coef * self.sig[diag_sigma]
        self.defs[name] = dict(kind="cross", p=p, m=m, sign=sign, sigma=sigma,
                               sigma_arg=sigma_arg, partner=partner, diag=diag)

    # -- sweeps --------------------------------------------------------------

    def _sigma_skew(self, d):
        if d["sigma_arg"] == "x":
            return self.sig[d["sigma"]][self.I]
        return self.sig[d["sigma"]][self.J]

    def _sweep_slope(self, K, d, fields):
        n, h = self.n, self.h
        P = fields[d["partner"]]
        G = d["sign"] * self._sigma_skew(d) * P[self.I, self.J]
        G[~self.valid] = 0.0
        C = _cumtrapz_rows(G, h) / d["c"]
        EP = fields[d["edge_partner"]]
        if self.triangle == LOWER:
            edge = d["edge_coef"] * EP[np.arange(n), 0]
            skew = edge[:, None] + C
        else:
            edge = d["edge_coef"] * EP[n - 1 - np.arange(n), n - 1]
            kmax = n - 1 - np.arange(n)
            c_end = C[np.arange(n), kmax]
            skew = edge[:, None] - (c_end[:, None] - C)
        out = K.copy()
        out[self.I[self.valid], self.J[self.valid]] = skew[self.valid]
        return out

    def _sweep_cross(self, K, d, fields):
        n, h = self.n, self.h
        p, m, sign = d["p"], d["m"], d["sign"]
        P = fields[d["partner"]]
        sig = self.sig[d["sigma"]]
        arg_x = d["sigma_arg"] == "x"
        diag = d["diag"]
        out = np.array(K, copy=True)
        idx = np.arange(n)
        out[idx, idx] = diag
        shift = p / m                 # x-index shift per level
        dt = h / m
        nodes = self.nodes
        diag_vals = diag               # data along the diagonal (index = x/h)
        if self.triangle == LOWER:
            levels = range(n - 2, -1, -1)
        else:
            levels = range(1, n)
        for j in levels:
            if self.triangle == LOWER:
                i = np.arange(j + 1, n)
                if i.size == 0:
                    continue
                x = nodes[i]
                y = nodes[j]
                jn = j + 1                      # next level toward diagonal
                xp_idx = i - shift              # crossing x index at level jn
                full = xp_idx >= jn             # crossing inside the triangle
                ylev = nodes[jn]
                lo_row, hi_row = jn, n - 1
            else:
                i = np.arange(0, j)
                if i.size == 0:
                    continue
                x = nodes[i]
                y = nodes[j]
                jn = j - 1
                xp_idx = i + shift
                full = xp_idx <= jn
                ylev = nodes[jn]
                lo_row, hi_row = 0, jn
            g_here = sign * (sig[i] if arg_x else sig[j]) * P[i, j]
            res = np.empty(i.size)
            if np.any(full):
                xi = xp_idx[full]
                k_next = _cubic_row(out[:, jn], xi, lo_row, hi_row)
                p_next = _linear_row(P[:, jn], xi, lo_row, hi_row)
                s_next = np.interp(xi * h, nodes, sig) if arg_x \
                    else sig[jn]
                g_next = sign * s_next * p_next
                seg = 0.5 * dt * (g_here[full] + g_next)
                res[full] = k_next + (seg if self.triangle == LOWER else -seg)
            part = ~full
            if np.any(part):
                xs = x[part]
                tstar = np.abs(xs - y) / (p + m)
                foot = (m * xs + p * y) / (p + m)
                d_foot = np.interp(foot / h, idx, diag_vals)
                p_foot = np.interp(foot / h, idx, P[idx, idx])
                s_foot = np.interp(foot, nodes, sig)
                g_foot = sign * s_foot * p_foot
                seg = 0.5 * tstar * (g_here[part] + g_foot)
                res[part] = d_foot + (seg if self.triangle == LOWER else -seg)
            out[i, j] = res
        return out

    def solve(self, tol=1e-12, max_iter=200):
        n = self.n
        fields = {name: np.zeros((n, n)) for name in self.defs}
        for it in range(max_iter):
            change = 0.0
            for name, d in self.defs.items():
                if d["kind"] == "cross":
                    new = self._sweep_cross(fields[name], d, fields)
                    change = max(change, float(np.max(np.abs(new - fields[name]))))
                    fields[name] = new
            for name, d in self.defs.items():
                if d["kind"] == "slope":
                    new = self._sweep_slope(fields[name], d, fields)
                    change = max(change, float(np.max(np.abs(new - fields[name]))))
                    fields[name] = new
            scale = max(1.0, max(float(np.max(np.abs(f))) for f in fields.values()))
            if change <= tol * scale:
                for name in fields:
                    fields[name] = _fill_invalid(fields[name], self.triangle)
                return fields, it + 1
        raise NumericsError(
            f"kernel iteration did not converge within {max_iter} sweeps "
            f"(last change {change:.3e})")


# ---------------------------------------------------------------------------
# Per-subsystem kernel construction
# ---------------------------------------------------------------------------


def _build_direct(sys: _GoursatSystem, lam, mu, edge_coef_uu, edge_coef_vv):
    s = sys
    if s.triangle == LOWER:
        duv, dvu = 1.0, -1.0
    else:
        duv, dvu = -1.0, 1.0
    s.add_cross("uv", p=lam, m=mu, sign=-1.0, sigma="+", sigma_arg="y",
                partner="uu", diag_coef=duv / (lam + mu), diag_sigma="+")
    s.add_slope("uu", c=lam, sign=-1.0, sigma="-", sigma_arg="y",
                partner="uv", edge_partner="uv", edge_coef=edge_coef_uu)
    s.add_cross("vu", p=mu, m=lam, sign=1.0, sigma="-", sigma_arg="y",
                partner="vv", diag_coef=dvu / (lam + mu), diag_sigma="-")
    s.add_slope("vv", c=mu, sign=1.0, sigma="+", sigma_arg="y",
                partner="vu", edge_partner="vu", edge_coef=edge_coef_vv)
    return s


def _build_inverse(sys: _GoursatSystem, lam, mu, edge_coef_uu, edge_coef_vv):
    s = sys
    if s.triangle == LOWER:
        duv, dvu = 1.0, -1.0
    else:
        duv, dvu = -1.0, 1.0
    s.add_slope("uu", c=lam, sign=1.0, sigma="+", sigma_arg="x",
                partner="vu", edge_partner="uv", edge_coef=edge_coef_uu)
    s.add_cross("uv", p=lam, m=mu, sign=1.0, sigma="+", sigma_arg="x",
                partner="vv", diag_coef=duv / (lam + mu), diag_sigma="+")
    s.add_cross("vu", p=mu, m=lam, sign=-1.0, sigma="-", sigma_arg="x",
                partner="uu", diag_coef=dvu / (lam + mu), diag_sigma="-")
    s.add_slope("vv", c=mu, sign=-1.0, sigma="-", sigma_arg="x",
                partner="uv", edge_partner="vu", edge_coef=edge_coef_vv)
    return s


@dataclass
class KernelSet:
    """Direct and inverse transform kernels for the three subsystems."""

    direct: list        # per subsystem: dict name -> TriKernel
    inverse: list
    n_tri: int
    spec: ChainSpec
    meta: dict = field(default_factory=dict)

    def triangle(self, i):
        return LOWER if i == 0 else UPPER


def solve_kernels(spec: ChainSpec, n_tri=201):
    """Solve all direct and inverse kernel systems at resolution n_tri.

    Subsystems with identically zero couplings get exactly zero kernels.
    The edge data divides by q11 (subsystem 1) or rho_ii (subsystems 2, 3),
    which must be nonzero whenever the corresponding couplings are active.
    """
    if n_tri < 5:
        raise GridError("triangle resolution must be at least 5")
    direct, inverse, meta = [], [], {"iterations": []}
    edge_coeffs = [spec.q.q11, spec.rho.rho22, spec.rho.rho33]
    for i in range(3):
        lam, mu = spec.lambdas[i], spec.mus[i]
        sp, sm = spec.sigma_plus[i], spec.sigma_minus[i]
        tri = LOWER if i == 0 else UPPER
        if sp.is_zero and sm.is_zero:
            direct.append({k: _zero_tri(n_tri, tri) for k in ("uu", "uv", "vu", "vv")})
            inverse.append({k: _zero_tri(n_tri, tri) for k in ("uu", "uv", "vu", "vv")})
            meta["iterations"].append((0, 0))
            continue
        coef = edge_coeffs[i]
        if coef == 0.0:
            raise AssumptionError(
                f"subsystem {i+1} has active in-domain couplings but its "
                f"boundary reflection coefficient is zero; the kernel edge "
                f"data is undefined",
                assumption="nonzero-boundary-coefficients")
        if i == 0:
            e_uu = mu / (lam * coef)      # K(x,0) edge from the uv kernel
            e_vv = lam * coef / mu
        else:
            e_uu = mu * coef / lam        # K(x,1) edge from the uv kernel
            e_vv = lam / (mu * coef)
        sys_d = _build_direct(_GoursatSystem(n_tri, tri, sp, sm), lam, mu, e_uu, e_vv)
        fd, it_d = sys_d.solve()
        sys_i = _build_inverse(_GoursatSystem(n_tri, tri, sp, sm), lam, mu, e_uu, e_vv)
        fi, it_i = sys_i.solve()
        direct.append({k: TriKernel(fd[k], tri) for k in fd})
        inverse.append({k: TriKernel(fi[k], tri) for k in fi})
        meta["iterations"].append((it_d, it_i))
    return KernelSet(direct, inverse, n_tri, spec, meta)


# ---------------------------------------------------------------------------
# Residual oracle
# ---------------------------------------------------------------------------


def goursat_residual(kset: KernelSet, subsystem, which="direct", n_probe=24,
                     path_step=1.0 / 2048.0):
    """Sup residual of the characteristic integral equations at probe nodes,
    using a fixed fine path quadrature independent of the solve grid."""
    i = subsystem
    spec = kset.spec
    lam, mu = spec.lambdas[i], spec.mus[i]
    sp, sm = spec.sigma_plus[i], spec.sigma_minus[i]
    tri = kset.triangle(i)
    kers = (kset.direct if which == "direct" else kset.inverse)[i]
    coef = [spec.q.q11, spec.rho.rho22, spec.rho.rho33][i]
    if all(k.max_abs() == 0.0 for k in kers.values()):
        return 0.0
    sys = _GoursatSystem(3, tri, sp, sm)  # only for defs bookkeeping
    if which == "direct":
        if i == 0:
            _build_direct(sys, lam, mu, mu / (lam * coef), lam * coef / mu)
        else:
            _build_direct(sys, lam, mu, mu * coef / lam, lam / (mu * coef))
    else:
        if i == 0:
            _build_inverse(sys, lam, mu, mu / (lam * coef), lam * coef / mu)
        else:
            _build_inverse(sys, lam, mu, mu * coef / lam, lam / (mu * coef))
    sig = {"+": sp, "-": sm}
    worst = 0.0
    ts = np.linspace(0.05, 0.95, n_probe)
    for name, d in sys.defs.items():
        K = kers[name]
        P = kers[d["partner"]]
        for fx in ts:
            for fy in ts:
                if tri == LOWER:
                    x, y = max(fx, fy), min(fx, fy)
                else:
                    x, y = min(fx, fy), max(fx, fy)
                if d["kind"] == "slope":
                    c, sign = d["c"], d["sign"]
                    if tri == LOWER:
                        xe, span = x - y, y
                        edge = d["edge_coef"] * kers[d["edge_partner"]].interp(xe, 0.0)
                        npth = max(2, int(span / path_step) + 1)
                        eta = np.linspace(0.0, span, npth)
                        px, py = xe + eta, eta
                    else:
                        xe, span = x + 1.0 - y, 1.0 - y
                        edge = d["edge_coef"] * kers[d["edge_partner"]].interp(xe, 1.0)
                        npth = max(2, int(span / path_step) + 1)
                        eta = np.linspace(0.0, span, npth)
                        px, py = x + eta, y + eta
                    sarg = sig[d["sigma"]](px if d["sigma_arg"] == "x" else py)
                    g = sign * sarg * P.interp(px, py)
                    integ = np.trapezoid(g, dx=(eta[1] - eta[0]) if npth > 1 else 0.0)
                    if tri == LOWER:
                        pred = edge + integ / c
                    else:
                        pred = edge - integ / c
                else:
                    p, m, sign = d["p"], d["m"], d["sign"]
                    tstar = abs(x - y) / (p + m)
                    foot = (m * x + p * y) / (p + m)
                    # diagonal data evaluated exactly at the foot point
                    if name == "uv":
                        dv = (1.0 if tri == LOWER else -1.0) * sp(foot) / (lam + mu)
                    else:
                        dv = (-1.0 if tri == LOWER else 1.0) * sm(foot) / (lam + mu)
                    npth = max(2, int(tstar / path_step) + 1)
                    tt = np.linspace(0.0, tstar, npth)
                    if tri == LOWER:
                        px, py = x - p * tt, y + m * tt
                    else:
                        px, py = x + p * tt, y - m * tt
                    sarg = sig[d["sigma"]](px if d["sigma_arg"] == "x" else py)
                    g = sign * sarg * P.interp(px, py)
                    integ = np.trapezoid(g, dx=(tt[1] - tt[0]) if npth > 1 else 0.0)
                    pred = dv + (integ if tri == LOWER else -integ)
                worst = max(worst, abs(float(K.interp(x, y)) - float(pred)))
    return worst


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def _volterra_weights(ker: TriKernel, x_grid, y_grid):
    """Matrix W with W[i] = quadrature row of int K(x_i, y) f(y) dy over
    [0, x_i] (lower triangle) or [x_i, 1] (upper), f sampled on y_grid."""
    nx, ny = x_grid.size, y_grid.size
    hy = y_grid[1] - y_grid[0]
    W = np.zeros((nx, ny))
    X, Y = np.meshgrid(x_grid, y_grid, indexing="ij")
    KV = ker.interp(X, Y)
    if ker.triangle == LOWER:
        # full cells [0, y_J], partial [y_J, x]
        for ii, x in enumerate(x_grid):
            Jf = min(int(np.floor(x / hy + 1e-12)), ny - 1)
            if Jf >= 1:
                w = np.zeros(ny)
                w[:Jf + 1] = hy
                w[0] = w[Jf] = 0.5 * hy
                W[ii, :] = w * KV[ii, :]
            rem = x - y_grid[Jf]
            if rem > 1e-14 and Jf + 1 < ny:
                kx = float(ker.interp(x, x))
                t = rem / hy
                # f(x) ~ (1-t) f_J + t f_{J+1}
                W[ii, Jf] += 0.5 * rem * (KV[ii, Jf] + kx * (1 - t))
                W[ii, Jf + 1] += 0.5 * rem * kx * t
    else:
        for ii, x in enumerate(x_grid):
            Jc = max(int(np.ceil(x / hy - 1e-12)), 0)
            if Jc <= ny - 2:
                w = np.zeros(ny)
                w[Jc:] = hy
                w[Jc] = w[-1] = 0.5 * hy
                W[ii, :] = w * KV[ii, :]
            rem = y_grid[Jc] - x if Jc < ny else 0.0
            if rem > 1e-14 and Jc >= 1:
                kx = float(ker.interp(x, x))
                t = rem / hy
                W[ii, Jc] += 0.5 * rem * (KV[ii, Jc] + kx * (1 - t))
                W[ii, Jc - 1] += 0.5 * rem * kx * t
    return W


def apply_transform(kset: KernelSet, state, direction="direct", variant="Fbar"):
    """Map (u_i, v_i) to target coordinates (direction="direct") or back
    (direction="inverse").  Both variants share the same structure here; the
    extra cross-subsystem coupling kernels of the second variant vanish for
    every spec this solver accepts (see reduction module).
    """
    if variant not in ("Fbar", "F"):
        raise SpecValidationError(f"unknown transform variant {variant!r}")
    if direction not in ("direct", "inverse"):
        raise SpecValidationError(f"unknown transform direction {direction!r}")
    out = state.copy()
    sgn = -1.0 if direction == "direct" else 1.0
    kers_all = kset.direct if direction == "direct" else kset.inverse
    gus, gvs = state.grids()
    for i in range(3):
        kers = kers_all[i]
        gu, gv = gus[i], gvs[i]
        u, v = state.u[i], state.v[i]
        if all(k.max_abs() == 0.0 for k in kers.values()):
            continue
        Wuu = _volterra_weights(kers["uu"], gu, gu)
        Wuv = _volterra_weights(kers["uv"], gu, gv)
        Wvu = _volterra_weights(kers["vu"], gv, gu)
        Wvv = _volterra_weights(kers["vv"], gv, gv)
        out.u[i] = u + sgn * (Wuu @ u + Wuv @ v)
        out.v[i] = v + sgn * (Wvu @ u + Wvv @ v)
    return out


def trace_row(kset: KernelSet, subsystem, which, x_value, u_grid, v_grid):
    """Quadrature rows (w_u, w_v) of int K^{which,u}(x,.) u + K^{which,v}(x,.) v
    over the subsystem's full transform range at the boundary point x_value.

    which = "u" gives the alpha-trace rows (kernels uu, uv), "v" the beta
    rows (vu, vv).  Valid only at x_value = 0 (upper triangle) or 1 (lower),
    where the Volterra range spans all of [0, 1]."""
    kers = kset.direct[subsystem]
    names = ("uu", "uv") if which == "u" else ("vu", "vv")
    rows = []
    for name, grid in zip(names, (u_grid, v_grid)):
        k = kers[name]
        vals = k.interp(np.full(grid.size, float(x_value)), grid)
        w = np.full(grid.size, grid[1] - grid[0])
        w[0] = w[-1] = 0.5 * (grid[1] - grid[0])
        rows.append(w * vals)
    return rows


# ---------------------------------------------------------------------------
# Boundary output kernels
# ---------------------------------------------------------------------------


def boundary_output_kernels(kset: KernelSet, spec: ChainSpec):
    """Sampled kernels entering the target-system boundary conditions.

    For all configurations: the J/C (right-boundary) and P/W (left-boundary)
    rows built from inverse-kernel traces.  For the (U4, U2) configuration:
    additionally the Q/R rows at x = 1 prescribed by the explicit formulas
    (requires q32 != 0)."""
    n = kset.n_tri
    y = np.linspace(0.0, 1.0, n)
    L1, L2, L3 = kset.inverse
    K3 = kset.direct[2]
    rho, q = spec.rho, spec.q
    out = {"y": y}
    out["J11"] = rho.rho11 * L1["uu"].row(1.0) - L1["vu"].row(1.0)
    out["C11"] = rho.rho11 * L1["uv"].row(1.0) - L1["vv"].row(1.0)
    out["J12"] = rho.rho12 * L2["vu"].row(0.0)
    out["C12"] = rho.rho12 * L2["vv"].row(0.0)
    out["P21"] = q.q21 * L1["uu"].row(1.0)
    out["W21"] = q.q21 * L1["uv"].row(1.0)
    out["P22"] = q.q22 * L2["vu"].row(0.0) - L2["uu"].row(0.0)
    out["W22"] = q.q22 * L2["vv"].row(0.0) - L2["uv"].row(0.0)
    out["J23"] = rho.rho23 * L3["vu"].row(0.0)
    out["C23"] = rho.rho23 * L3["vv"].row(0.0)
    out["P33"] = q.q33 * L3["vu"].row(0.0) - L3["uu"].row(0.0)
    out["W33"] = q.q33 * L3["vv"].row(0.0) - L3["uv"].row(0.0)
    out["J33"] = rho.rho33 * L3["uu"].row(1.0) - L3["vu"].row(1.0)
    out["C33"] = rho.rho33 * L3["uv"].row(1.0) - L3["vv"].row(1.0)
    if spec.config is Config.U4U2:
        if q.q32 == 0.0:
            raise AssumptionError(
                "the (U4, U2) boundary rows divide by q32, which is zero",
                assumption="nonzero-boundary-coefficients")
        k3uu, k3uv = K3["uu"].row(0.0), K3["uv"].row(0.0)
        k3vu, k3vv = K3["vu"].row(0.0), K3["vv"].row(0.0)
        out["R_alpha"] = (k3uv - q.q33 * k3vv) / q.q32
        out["Q_alpha"] = (k3uu - q.q33 * k3vu) / q.q32
        out["R_beta"] = rho.rho22 * out["R_alpha"] + rho.rho23 * k3vv
        out["Q_beta"] = rho.rho22 * out["Q_alpha"] + rho.rho23 * k3vu
    return out
