"""Problem data for a chain of three boundary-coupled 2x2 hyperbolic systems.

Each subsystem i = 1, 2, 3 carries a rightward state u_i (speed lambda_i > 0)
and a leftward state v_i (speed mu_i > 0) on x in [0, 1]:

    du_i/dt + lambda_i du_i/dx = sigma_i^+(x) v_i
    dv_i/dt - mu_i     dv_i/dx = sigma_i^-(x) u_i

with boundary relations

    u_i(t,0) = [i=2] Ub4 + [i=3] Ub3 + q_ii v_i(t,0) + q_{i,i-1} u_{i-1}(t,1)
    v_i(t,1) = [i=1] Ub1 + [i=2] Ub2 + rho_ii u_i(t,1) + rho_{i,i+1} v_{i+1}(t,0)

(q_10 = rho_34 = 0).  Exactly two of the four boundary inputs are active,
selected by the configuration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecValidationError


class Config(enum.Enum):
    """Two-input actuation configuration."""

    U1U4 = "U1U4"
    U4U2 = "U4U2"
    U4U3 = "U4U3"
    U1U3 = "U1U3"

    @property
    def active_inputs(self):
        return {
            Config.U1U4: (1, 4),
            Config.U4U2: (4, 2),
            Config.U4U3: (4, 3),
            Config.U1U3: (1, 3),
        }[self]


class SpatialProfile:
    """Scalar function of x in [0,1], stored as uniform samples.

    Linear interpolation between samples; constants stay exact.
    """

    def __init__(self, values):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if values.ndim != 1 or values.size < 1:
            raise SpecValidationError("profile must be a 1-d sample array")
        if not np.all(np.isfinite(values)):
            raise SpecValidationError("profile samples must be finite")
        if values.size == 1:
            values = np.repeat(values, 2)
        self.values = values

    @classmethod
    def constant(cls, c):
        return cls([float(c), float(c)])

    @classmethod
    def from_callable(cls, fn, n=257):
        xs = np.linspace(0.0, 1.0, n)
        return cls(np.asarray([fn(x) for x in xs], dtype=float))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, np.linspace(0.0, 1.0, self.values.size), self.values)

    @property
    def is_zero(self):
        return bool(np.all(self.values == 0.0))

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        if np.all(self.values == self.values[0]):
            return f"SpatialProfile(const={self.values[0]:g})"
        return f"SpatialProfile(n={self.values.size})"


def _as_profile(p):
    if isinstance(p, SpatialProfile):
        return p
    if callable(p):
        return SpatialProfile.from_callable(p)
    if np.isscalar(p):
        return SpatialProfile.constant(p)
    return SpatialProfile(p)


@dataclass
class BoundaryQ:
    """Left-end reflection/transmission coefficients (q_10 = 0 implicitly)."""

    q11: float
    q21: float
    q22: float
    q32: float
    q33: float

    def as_dict(self):
        return {k: getattr(self, k) for k in ("q11", "q21", "q22", "q32", "q33")}


@dataclass
class BoundaryRho:
    """Right-end reflection/transmission coefficients (rho_34 = 0 implicitly)."""

    rho11: float
    rho12: float
    rho22: float
    rho23: float
    rho33: float

    def as_dict(self):
        return {k: getattr(self, k) for k in ("rho11", "rho12", "rho22", "rho23", "rho33")}


@dataclass
class ChainSpec:
    """Full problem datum: speeds, in-domain couplings, boundary couplings."""

    lambdas: tuple
    mus: tuple
    sigma_plus: tuple  # three SpatialProfile
    sigma_minus: tuple
    q: BoundaryQ
    rho: BoundaryRho
    config: Config = Config.U1U3

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        self.mus = tuple(float(x) for x in self.mus)
        if len(self.lambdas) != 3 or len(self.mus) != 3:
            raise SpecValidationError("exactly three subsystems are required")
        for name, speeds in (("lambda", self.lambdas), ("mu", self.mus)):
            for i, s in enumerate(speeds):
                if not (math.isfinite(s) and s > 0.0):
                    raise SpecValidationError(
                        f"{name}_{i + 1} must be positive and finite, got {s}",
                        field=f"{name}{i + 1}",
                    )
        self.sigma_plus = tuple(_as_profile(p) for p in self.sigma_plus)
        self.sigma_minus = tuple(_as_profile(p) for p in self.sigma_minus)
        if len(self.sigma_plus) != 3 or len(self.sigma_minus) != 3:
            raise SpecValidationError("sigma profiles must come in triples")
        for coeff, val in {**self.q.as_dict(), **self.rho.as_dict()}.items():
            if not math.isfinite(val):
                raise SpecValidationError(f"{coeff} must be finite", field=coeff)
        if not isinstance(self.config, Config):
            self.config = Config(self.config)

    # -- derived quantities -------------------------------------------------

    def transport_times(self):
        """Per-subsystem round-trip times tau_i = 1/lambda_i + 1/mu_i."""
        return tuple(1.0 / l + 1.0 / m for l, m in zip(self.lambdas, self.mus))

    # -- assumptions ---------------------------------------------------------

    def assumption1_report(self):
        """Sufficient stability check for the zero-coupling (sigma = 0) chain.

        Builds the nonnegative boundary-trace recursion matrix for
        z = (u1(1), u2(1), u3(1), v1(0), v2(0), v3(0)) and checks its
        spectral radius < 1 (delay-independent sufficient condition).
        """
        q, r = self.q, self.rho
        M = np.zeros((6, 6))
        M[0, 3] = abs(q.q11)
        M[1, 4] = abs(q.q22)
        M[1, 0] = abs(q.q21)
        M[2, 5] = abs(q.q33)
        M[2, 1] = abs(q.q32)
        M[3, 0] = abs(r.rho11)
        M[3, 4] = abs(r.rho12)
        M[4, 1] = abs(r.rho22)
        M[4, 5] = abs(r.rho23)
        M[5, 2] = abs(r.rho33)
        radius = float(np.max(np.abs(np.linalg.eigvals(M))))
        products = {
            "q11*rho11": abs(q.q11 * r.rho11),
            "q22*rho22": abs(q.q22 * r.rho22),
            "q33*rho33": abs(q.q33 * r.rho33),
        }
        holds = radius < 1.0 and all(p < 1.0 for p in products.values())
        return {"holds": holds, "spectral_radius": radius, "products": products}

    def assumption2_report(self):
        """All boundary coefficients nonzero (full actuation/propagation)."""
        coeffs = {**self.q.as_dict(), **self.rho.as_dict()}
        zeros = sorted(k for k, v in coeffs.items() if v == 0.0)
        return {"holds": not zeros, "zero_coefficients": zeros}

    def summary(self):
        taus = self.transport_times()
        return {
            "config": self.config.value,
            "lambdas": list(self.lambdas),
            "mus": list(self.mus),
            "taus": list(taus),
            "q": self.q.as_dict(),
            "rho": self.rho.as_dict(),
            "sigma_plus": [repr(p) for p in self.sigma_plus],
            "sigma_minus": [repr(p) for p in self.sigma_minus],
            "assumption1": self.assumption1_report(),
            "assumption2": self.assumption2_report(),
        }


# ---------------------------------------------------------------------------
# Canonical spec families
# ---------------------------------------------------------------------------


def counterexample_spec(lambdas=(1.0, 1.0, 1.0), mus=(1.0, 1.0, 1.0), rho33=1.0):
    """Decoupled-chain family with constant couplings tuned so that, at
    rho33 = 1, the three characteristic functions share a zero at s = 0.

    The family uses configuration (U1, U3) and the sparse boundary pattern
    rho11 = rho12 = q32 = q33 = 0, rho22 = 1/2, q11 = q21 = q22 = rho23 = 1.
    """
    lambdas = tuple(float(x) for x in lambdas)
    mus = tuple(float(x) for x in mus)
    tau = [1.0 / l + 1.0 / m for l, m in zip(lambdas, mus)]
    s1p = -(1.0 + lambdas[0] / mus[0]) / tau[0]
    s2m = (1.0 + mus[1] / lambdas[2]) / (2.0 * tau[1])
    s3m = -(1.0 + mus[2] / lambdas[2]) / tau[2]
    return ChainSpec(
        lambdas=lambdas,
        mus=mus,
        sigma_plus=(SpatialProfile.constant(s1p), SpatialProfile.constant(0.0),
                    SpatialProfile.constant(0.0)),
        sigma_minus=(SpatialProfile.constant(0.0), SpatialProfile.constant(s2m),
                     SpatialProfile.constant(s3m)),
        q=BoundaryQ(q11=1.0, q21=1.0, q22=1.0, q32=0.0, q33=0.0),
        rho=BoundaryRho(rho11=0.0, rho12=0.0, rho22=0.5, rho23=1.0, rho33=float(rho33)),
        config=Config.U1U3,
    )


#: speeds drawn for seeded specs: reciprocals are multiples of 0.05, so all
#: transport times land on a common rational lattice.
_SPEED_CHOICES = (0.5, 0.8, 1.0, 1.25, 2.0)


def seeded_spec(config, seed, sigma_scale=0.25):
    """Deterministic admissible spec for a given configuration and seed.

    Speeds come from a rational menu (commensurate grids), boundary
    couplings keep |q_ii rho_ii| < 1, and sigma patterns respect what the
    reduction machinery for the configuration supports (the U4U2 route
    requires sigma_2 = sigma_3 = 0).
    """
    config = Config(config)
    rng = np.random.default_rng(seed)
    lambdas = tuple(rng.choice(_SPEED_CHOICES, 3))
    mus = tuple(rng.choice(_SPEED_CHOICES, 3))

    def signed(lo, hi):
        return float(rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi))

    q = BoundaryQ(q11=signed(0.3, 0.7), q21=signed(0.5, 1.0), q22=signed(0.3, 0.7),
                  q32=signed(0.5, 1.0), q33=signed(0.3, 0.7))
    rho = BoundaryRho(rho11=signed(0.3, 0.7), rho12=signed(0.5, 1.0),
                      rho22=signed(0.3, 0.7), rho23=signed(0.5, 1.0),
                      rho33=signed(0.3, 0.7))
    sp = [signed(0.2, 1.0) * sigma_scale for _ in range(3)]
    sm = [signed(0.2, 1.0) * sigma_scale for _ in range(3)]
    if config is Config.U4U2:
        sp[1] = sp[2] = sm[1] = sm[2] = 0.0
    return ChainSpec(
        lambdas=lambdas,
        mus=mus,
        sigma_plus=tuple(SpatialProfile.constant(c) for c in sp),
        sigma_minus=tuple(SpatialProfile.constant(c) for c in sm),
        q=q,
        rho=rho,
        config=config,
    )


# ---------------------------------------------------------------------------
# Boundary input signals
# ---------------------------------------------------------------------------


class InputSignal:
    """The four boundary inputs (U1, U2, U3, U4) as functions of time.

    Inputs that are inactive for the configuration are forced to zero.
    """

    def __init__(self, u1=None, u2=None, u3=None, u4=None, config=None):
        self._fns = [self._wrap(f) for f in (u1, u2, u3, u4)]
        self.config = Config(config) if config is not None else None

    @staticmethod
    def _wrap(f):
        if f is None:
            return None
        if callable(f):
            return f
        c = float(f)
        return lambda t, c=c: c

    @classmethod
    def zero(cls, config=None):
        return cls(config=config)

    def __call__(self, t):
        out = np.zeros(4)
        active = self.config.active_inputs if self.config is not None else (1, 2, 3, 4)
        for k in range(4):
            fn = self._fns[k]
            if fn is not None and (k + 1) in active:
                out[k] = fn(t)
        return out
