"""Characteristic quasi-polynomials of delay systems and their zeros.

A quasi-polynomial here is a finite sum of shifted exponentials plus
kernel-integral terms,

    F(s) = sum_k c_k e^{-d_k s} + sum_m int_{l_m}^{r_m} kappa_m(nu) e^{-nu s} dnu

with real coefficients and compactly supported sampled kernels.  These are
entire functions; zeros are isolated and are located by the argument
principle (winding numbers on rectangles) with Newton refinement.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, NumericsError, SpecValidationError
from .ide import IdeModel, Kernel, trapezoid_weights

_SERIES_THRESHOLD = 0.1
_SERIES_TERMS = 18


def _abc(z):
    """A, B, C with A = int_0^1 e^{-z u} du, B = int u e^{-zu}, C = int u^2 e^{-zu}.

    Scaled to a unit segment; multiply by h, h^2, h^3 for a segment of
    length h with z = h s.  Series fallback keeps small |z| stable.
    """
    z = np.asarray(z, dtype=complex)
    A = np.empty_like(z)
    B = np.empty_like(z)
    C = np.empty_like(z)
    small = np.abs(z) < _SERIES_THRESHOLD
    zs = z[small]
    a = np.zeros_like(zs)
    b = np.zeros_like(zs)
    c = np.zeros_like(zs)
    term = np.ones_like(zs)
    for k in range(_SERIES_TERMS):
        a += term / (k + 1)
        b += term / (k + 2)
        c += term / (k + 3)
        term = term * (-zs) / (k + 1)
    A[small], B[small], C[small] = a, b, c
    zl = z[~small]
    ez = np.exp(-zl)
    A[~small] = (1.0 - ez) / zl
    B[~small] = (1.0 - (1.0 + zl) * ez) / zl**2
    C[~small] = (2.0 - (2.0 + 2.0 * zl + zl**2) * ez) / zl**3
    return A, B, C


def box_integral(s, lo, hi):
    """int_lo^hi e^{-nu s} dnu, numerically stable for all complex s."""
    s = np.asarray(s, dtype=complex)
    h = hi - lo
    A, _, _ = _abc(h * s)
    return np.exp(-lo * s) * h * A


def box_integral_trapezoid(s, lo, hi, h):
    """Trapezoid-rule discretization of the same integral on a step-h lattice."""
    n = int(round((hi - lo) / h))
    nodes = lo + h * np.arange(n + 1)
    w = trapezoid_weights(n) * h
    s = np.asarray(s, dtype=complex)
    return np.exp(-np.multiply.outer(s, nodes)) @ w


@dataclass
class QuasiPoly:
    """Sum of exponential terms (c_k, d_k) and signed kernel-integral terms."""

    exp_terms: list = field(default_factory=list)     # (coefficient, delay>=0)
    int_terms: list = field(default_factory=list)     # Kernel instances
    label: str = "F"

    def __post_init__(self):
        for c, d in self.exp_terms:
            if d < 0:
                raise SpecValidationError("exponential delays must be >= 0")
        if not self.exp_terms and not self.int_terms:
            raise SpecValidationError("quasi-polynomial must have at least one term")

    # -- evaluation ---------------------------------------------------------

    def _int_eval(self, s, derivative=False):
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape, dtype=complex)
        for ker in self.int_terms:
            h = ker.step
            y = ker.values
            nodes = ker.nodes[:-1]
            slopes = np.diff(y) / h
            A, B, C = _abc(h * s[..., None])
            E = np.exp(-np.multiply.outer(s, nodes))
            if not derivative:
                seg = h * A * y[:-1] + h * h * B * slopes
            else:
                seg = (-nodes) * (h * A * y[:-1] + h * h * B * slopes) \
                    - h * h * B * y[:-1] - h**3 * C * slopes
            out += np.sum(E * seg, axis=-1)
        return out

    def __call__(self, s, method="exact"):
        s_in = np.asarray(s, dtype=complex)
        out = np.zeros(s_in.shape, dtype=complex)
        for c, d in self.exp_terms:
            out += c * np.exp(-d * s_in)
        if self.int_terms:
            if method == "exact":
                out += self._int_eval(s_in)
            elif method == "trapezoid":
                for ker in self.int_terms:
                    w = trapezoid_weights(ker.values.size - 1) * ker.step
                    out += np.exp(-np.multiply.outer(s_in, ker.nodes)) @ (w * ker.values)
            else:
                raise SpecValidationError(f"unknown evaluation method {method!r}")
        return out if out.shape else complex(out)

    def deriv(self, s):
        s_in = np.asarray(s, dtype=complex)
        out = np.zeros(s_in.shape, dtype=complex)
        for c, d in self.exp_terms:
            out += -d * c * np.exp(-d * s_in)
        if self.int_terms:
            out += self._int_eval(s_in, derivative=True)
        return out if out.shape else complex(out)

    # -- helpers ------------------------------------------------------------

    def coarsened(self, n=257):
        """Copy with kernels resampled to at most n nodes (zero finding speed)."""
        kers = []
        for ker in self.int_terms:
            if ker.values.size > n:
                nodes = np.linspace(ker.lo, ker.hi, n)
                kers.append(Kernel(ker.lo, ker.hi, ker(nodes)))
            else:
                kers.append(ker)
        return QuasiPoly(list(self.exp_terms), kers, self.label)

    def max_delay(self):
        ds = [d for _, d in self.exp_terms] + [k.hi for k in self.int_terms]
        return max(ds) if ds else 0.0


def build_characteristic_triple(model: IdeModel):
    """Characteristic functions of the IDE: the state part

        F0(s) = 1 - a e^{-tau s} - int_0^tau N(nu) e^{-nu s} dnu

    and one F_j(s) = b_j e^{-theta_j s} + int M_j(nu) e^{-nu s} dnu per input.
    Missing inputs yield None slots so the triple degenerates to a pair.
    """
    n_terms = []
    if model.N is not None and not np.all(model.N.values == 0.0):
        n_terms.append(Kernel(model.N.lo, model.N.hi, -model.N.values))
    f0 = QuasiPoly([(1.0, 0.0), (-model.a, model.tau)], n_terms, "F0")
    fs = []
    for j, inp in enumerate(model.inputs):
        terms = [(inp.b, inp.theta)] if inp.b != 0.0 else []
        kers = []
        if inp.M is not None and not np.all(inp.M.values == 0.0):
            kers.append(inp.M)
        if not terms and not kers:
            terms = [(0.0, inp.theta)]
        fs.append(QuasiPoly(terms, kers, f"F{j+1}"))
    while len(fs) < 2:
        fs.append(None)
    return (f0, fs[0], fs[1])


# ---------------------------------------------------------------------------
# Zero location
# ---------------------------------------------------------------------------


@dataclass
class Rect:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def corners(self):
        return [complex(self.re_min, self.im_min), complex(self.re_max, self.im_min),
                complex(self.re_max, self.im_max), complex(self.re_min, self.im_max)]

    @property
    def diameter(self):
        return math.hypot(self.re_max - self.re_min, self.im_max - self.im_min)

    def contains(self, s, pad=0.0):
        return (self.re_min - pad <= s.real <= self.re_max + pad
                and self.im_min - pad <= s.imag <= self.im_max + pad)

    def expanded(self, eps):
        return Rect(self.re_min - eps, self.re_max + eps,
                    self.im_min - eps, self.im_max + eps)


def default_rect(model_or_tau_min, omega_cap=None):
    """Bounded verification region: Re in [-5/tau_min, 1], |Im| <= 200/tau_min.

    Zeros relevant to stabilization at a given decay rate lie in a right
    half-plane, so a bounded rectangle gives a usable (explicitly caveated)
    certificate.
    """
    if isinstance(model_or_tau_min, IdeModel):
        tau_min = model_or_tau_min.tau
    else:
        tau_min = float(model_or_tau_min)
    omega = 200.0 / tau_min if omega_cap is None else omega_cap
    return Rect(-5.0 / tau_min, 1.0, -omega, omega)


class _BoundaryZero(Exception):
    pass


def _edge_nodes(F, a, b, density, abs_floor, max_rounds=40):
    """Adaptive samples of F on the segment [a, b] with phase steps < ~0.8 rad."""
    n0 = max(8, int(density * abs(b - a)) + 1)
    ts = np.linspace(0.0, 1.0, n0 + 1)
    pts = a + (b - a) * ts
    vals = np.asarray(F(pts), dtype=complex)
    for _round in range(max_rounds):
        if np.any(np.abs(vals) < abs_floor):
            raise _BoundaryZero()
        ratio = vals[1:] / vals[:-1]
        dphi = np.abs(np.angle(ratio))
        bad = np.nonzero((dphi > 0.8) | (np.abs(ratio) > 8.0) | (np.abs(ratio) < 0.125))[0]
        if bad.size == 0:
            return pts, vals
        new_ts = 0.5 * (ts[bad] + ts[bad + 1])
        new_pts = a + (b - a) * new_ts
        new_vals = np.asarray(F(new_pts), dtype=complex)
        ts = np.insert(ts, bad + 1, new_ts)
        pts = np.insert(pts, bad + 1, new_pts)
        vals = np.insert(vals, bad + 1, new_vals)
    raise NumericsError("boundary phase tracking did not resolve; possible zero "
                        "cluster on or near the contour")


def _densify(pts):
    """Insert midpoints between consecutive contour nodes (order preserved)."""
    out = np.empty(2 * pts.size - 1, dtype=complex)
    out[0::2] = pts
    out[1::2] = 0.5 * (pts[1:] + pts[:-1])
    return out


def _winding(F, dF, rect, density, abs_floor, cross_check=True):
    """Winding number of F along the rectangle boundary.

    Primary count from tracked phase increments; cross-checked (top level)
    with a trapezoid estimate of the logarithmic-derivative contour integral
    on the same nodes.
    """
    corners = rect.corners()
    total_phase = 0.0
    edge_pts = []
    for i in range(4):
        pts, vals = _edge_nodes(F, corners[i], corners[(i + 1) % 4], density, abs_floor)
        total_phase += float(np.sum(np.angle(vals[1:] / vals[:-1])))
        edge_pts.append(pts)
    count = total_phase / (2.0 * math.pi)
    count_int = int(round(count))
    if abs(count - count_int) > 0.25:
        raise NumericsError(f"non-integer winding number {count:.3f} on {rect}")
    if not cross_check:
        return count_int
    # cross-check: trapezoid of F'/F on the same contour, densified until the
    # estimate agrees with the tracked phase
    for _round in range(5):
        logint = 0.0 + 0.0j
        for pts in edge_pts:
            ld = dF(pts) / F(pts)
            logint += np.sum(0.5 * (ld[1:] + ld[:-1]) * np.diff(pts))
        check = logint.imag / (2.0 * math.pi)
        if abs(check - count_int) <= 0.35:
            return count_int
        edge_pts = [_densify(pts) for pts in edge_pts]
    raise NumericsError(
        f"argument principle cross-check mismatch: phase {count_int}, "
        f"contour integral {check:.3f} on {rect}")


def _split_rect(F, rect, density, abs_floor):
    """Quadrisect, nudging the split lines off any boundary zero."""
    for fr in (0.5, 0.513, 0.471, 0.537, 0.449):
        rm = rect.re_min + fr * (rect.re_max - rect.re_min)
        im = rect.im_min + fr * (rect.im_max - rect.im_min)
        quads = [Rect(rect.re_min, rm, rect.im_min, im),
                 Rect(rm, rect.re_max, rect.im_min, im),
                 Rect(rect.re_min, rm, im, rect.im_max),
                 Rect(rm, rect.re_max, im, rect.im_max)]
        try:
            counts = [_winding(F, F.deriv, q, density, abs_floor,
                               cross_check=False) for q in quads]
        except _BoundaryZero:
            continue
        return quads, counts
    raise NumericsError("could not find zero-free split lines while subdividing")


def _newton(F, dF, s0, mult, tol_abs, rect, max_iter=60):
    s = complex(s0)
    for _ in range(max_iter):
        f = complex(F(s))
        if abs(f) <= tol_abs:
            # polish once more and stop
            d = complex(dF(s))
            if d != 0.0:
                s2 = s - mult * f / d
                if abs(complex(F(s2))) < abs(f):
                    s = s2
            return s, abs(complex(F(s)))
        d = complex(dF(s))
        if d == 0.0:
            break
        step = mult * f / d
        if abs(step) > 0.5 * max(rect.diameter, 1.0):
            step *= 0.5 * rect.diameter / abs(step)
        s = s - step
    return s, abs(complex(F(s)))


def zeros_in_rect(F, rect, tol=1e-9, dF=None, density=None):
    """Zeros of F inside rect, with multiplicities.

    Argument-principle counting on the boundary, recursive quadrisection
    until each cell isolates one cluster, then Newton refinement using the
    analytic derivative.  Raises on boundary zeros that survive perturbation
    and on count/refinement mismatches.
    """
    if isinstance(rect, tuple):
        rect = Rect(*rect)
    if dF is None:
        dF = F.deriv
    if density is None:
        density = 1.5 * (F.max_delay() / (2.0 * math.pi)) + 0.5
    # overall scale from boundary samples
    corners = rect.corners()
    probe = np.concatenate([corners[i] + np.linspace(0, 1, 17)[:, None].ravel()
                            * (corners[(i + 1) % 4] - corners[i]) for i in range(4)])
    scale = float(np.max(np.abs(F(probe))))
    if scale == 0.0:
        raise SpecValidationError("function vanishes identically on the boundary probe")
    abs_floor = 1e-12 * scale
    tol_abs = tol * scale

    work_rect = rect
    for attempt in range(6):
        try:
            total = _winding(F, dF, work_rect, density, abs_floor)
            break
        except _BoundaryZero:
            eps = (1e-7 + attempt * 3e-6) * max(1.0, work_rect.diameter)
            work_rect = rect.expanded(eps * (attempt + 1))
    else:
        raise NumericsError("zero persists on the contour after perturbation attempts")
    zeros = []

    cluster_size = max(1e3 * tol, 1e-6)
    deriv_scale = float(np.max(np.abs(dF(probe))))

    def recurse(r, count):
        if count == 0:
            return
        center = complex(0.5 * (r.re_min + r.re_max), 0.5 * (r.im_min + r.im_max))
        # try multiplicity-aware Newton from the cell center; for count > 1
        # additionally require the derivative to vanish, confirming a genuine
        # multiple zero rather than an unresolved cluster of simple ones
        if count <= 2 or r.diameter <= 8.0 * cluster_size:
            z, res = _newton(F, dF, center, count, tol_abs, r,
                             max_iter=60 if count == 1 else 25)
            pad = 1e-3 * r.diameter + 10.0 * tol
            if res <= tol_abs and r.contains(z, pad=pad):
                if count == 1 or abs(complex(dF(z))) <= math.sqrt(tol) * deriv_scale:
                    zeros.append((z, count))
                    return
        if r.diameter <= cluster_size:
            raise NumericsError(
                f"Newton refinement stalled near {center}: |F|={res:.3e} "
                f"(tolerance {tol_abs:.3e})")
        quads, counts = _split_rect(F, r, density, abs_floor)
        if sum(counts) != count:
            raise NumericsError(
                f"zero count mismatch while subdividing: parent {count}, "
                f"children {counts}")
        for q, c in zip(quads, counts):
            recurse(q, c)

    recurse(work_rect, total)

    # dedupe and clip to the requested rectangle
    merged = []
    for z, m in sorted(zeros, key=lambda p: (p[0].real, p[0].imag)):
        if merged and abs(z - merged[-1][0]) <= 10.0 * max(tol, 1e-12):
            merged[-1] = (merged[-1][0], merged[-1][1] + m)
        else:
            merged.append((z, m))
    pad = 10.0 * max(tol, 1e-12)
    merged = [(z, m) for z, m in merged if rect.contains(z, pad=pad)]
    if sum(m for _, m in merged) != total and work_rect is rect:
        raise NumericsError("refined zero count does not match contour count")
    return merged


# ---------------------------------------------------------------------------
# Assumption checks and alpha selection
# ---------------------------------------------------------------------------


@dataclass
class CommonZeroVerdict:
    common: list            # (s, residual triple)
    zeros_f0: list          # (s, multiplicity)
    rect: Rect
    tol: float
    scales: tuple

    @property
    def ok(self):
        return not self.common

    def report(self):
        lines = [
            "common-zero check (bounded-region certificate)",
            f"  rect: Re in [{self.rect.re_min:g}, {self.rect.re_max:g}], "
            f"Im in [{self.rect.im_min:g}, {self.rect.im_max:g}]",
            f"  tol: {self.tol:g}   boundary scales: "
            + ", ".join(f"{s:.6g}" for s in self.scales),
            f"  zeros of F0 found: {len(self.zeros_f0)}",
        ]
        if self.common:
            lines.append("  verdict: COMMON ZEROS FOUND")
            for s, res in self.common:
                lines.append(f"    s = {s.real:+.9g}{s.imag:+.9g}j  residuals "
                             + ", ".join(f"{r:.3e}" for r in res))
        else:
            lines.append("  verdict: no common zero found in rect")
        lines.append("  caveat: the spectral condition is verified only on this "
                     "bounded region, not on all of the complex plane")
        return "\n".join(lines)


def _boundary_sup(F, rect, n=64):
    corners = rect.corners()
    pts = np.concatenate([corners[i] + np.linspace(0, 1, n, endpoint=False)[:, None].ravel()
                          * (corners[(i + 1) % 4] - corners[i]) for i in range(4)])
    return float(np.max(np.abs(F(pts))))


def check_common_zeros(F0, F1, F2, rect, tol=1e-8):
    """Zeros of F0 in rect at which every other (non-None) F_j also vanishes."""
    if isinstance(rect, tuple):
        rect = Rect(*rect)
    others = [f for f in (F1, F2) if f is not None]
    scales = tuple(_boundary_sup(f, rect) for f in (F0, *others))
    z0 = zeros_in_rect(F0, rect, tol=min(tol, 1e-9))
    common = []
    for s, _m in z0:
        vals = [abs(complex(f(s))) for f in others]
        if all(v <= tol * sc for v, sc in zip(vals, scales[1:])):
            common.append((s, (abs(complex(F0(s))), *vals)))
    return CommonZeroVerdict(common, z0, rect, tol, scales)


def select_alpha(F0, F1, F2, rect, mode, rng_seed, span, tol=1e-8,
                 exclusion_radius=1e-6):
    """Pick alpha in [1/2, 2] such that F0 - alpha * B(s) * F2 and F1 keep no
    common zero in rect, where B is the box integral over [0, span]
    (span = tau in state mode, theta1 + delta1 in input mode).

    Only real excluded ratios matter since alpha is real.  Raises
    AssumptionError when some zero of F1 kills both F0 and B*F2 (no alpha
    can restore the rank condition there).
    """
    if isinstance(rect, tuple):
        rect = Rect(*rect)
    if mode not in ("state", "input"):
        raise SpecValidationError(f"unknown substitution mode {mode!r}")
    z1 = zeros_in_rect(F1, rect, tol=min(tol, 1e-9))
    scale0 = _boundary_sup(F0, rect)
    scale2 = _boundary_sup(F2, rect)
    excluded = []
    for s, _m in z1:
        f2t = complex(box_integral(s, 0.0, span)) * complex(F2(s))
        f0 = complex(F0(s))
        if abs(f2t) <= tol * scale2:
            if abs(f0) <= tol * scale0:
                raise AssumptionError(
                    f"all characteristic functions vanish at s = {s:.9g}; "
                    f"no input-combination gain can restore the rank "
                    f"condition there", assumption="spectral-rank")
            continue
        ratio = f0 / f2t
        if abs(ratio.imag) <= 1e-9 * max(1.0, abs(ratio)):
            excluded.append(ratio.real)
    rng = np.random.default_rng(rng_seed)
    alpha = None
    for _ in range(1000):
        cand = float(rng.uniform(0.5, 2.0))
        if all(abs(cand - e) >= exclusion_radius for e in excluded):
            alpha = cand
            break
    if alpha is None:
        raise NumericsError("could not find an admissible alpha in [1/2, 2]")
    # a-posteriori rank check at the F1 zeros
    for s, _m in z1:
        combo = complex(F0(s)) - alpha * complex(box_integral(s, 0.0, span)) \
            * complex(F2(s))
        if abs(combo) <= tol * max(scale0, scale2):
            raise NumericsError(
                f"selected alpha={alpha} fails the rank condition at s={s:.9g}")
    return alpha, excluded


def zeros_to_csv(zeros, F=None):
    buf = io.StringIO()
    buf.write("re,im,residual\n")
    for z, _m in zeros:
        res = abs(complex(F(z))) if F is not None else 0.0
        buf.write(f"{z.real:.17e},{z.imag:.17e},{res:.17e}\n")
    return buf.getvalue()
