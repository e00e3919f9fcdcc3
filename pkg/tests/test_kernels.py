import dataclasses

import numpy as np
import pytest

from hypchain.chainspec import Config, counterexample_spec, seeded_spec
from hypchain.errors import AssumptionError
from hypchain.kernels import (apply_transform, boundary_output_kernels,
                              goursat_residual, solve_kernels)
from hypchain.pde import bump, l2_norm, make_state


def _zero_sigma_spec():
    spec = counterexample_spec()
    zero = lambda x: 0.0 * x
    return dataclasses.replace(spec, sigma_plus=(zero,) * 3,
                               sigma_minus=(zero,) * 3)


def test_kernels_vanish_without_in_domain_coupling():
    # [DERIVED] with sigma = 0 the Goursat systems are homogeneous with
    # zero boundary data, so every transform kernel is identically zero
    kset = solve_kernels(_zero_sigma_spec(), n_tri=51)
    for fam in list(kset.direct) + list(kset.inverse):
        for ker in fam.values():
            assert ker.max_abs() == 0.0


def test_round_trip_direct_then_inverse():
    # [DERIVED] the inverse transform undoes the direct one up to the
    # discretization error of the Volterra quadrature
    spec = seeded_spec(Config.U1U3, seed=2)
    kset = solve_kernels(spec, n_tri=201)
    prof = bump()
    st = make_state(spec, h=2e-3, u_profiles=[prof] * 3, v_profiles=[prof] * 3)
    back = apply_transform(kset, apply_transform(kset, st, "direct"), "inverse")
    err = max(max(np.max(np.abs(back.u[i] - st.u[i])),
                  np.max(np.abs(back.v[i] - st.v[i]))) for i in range(3))
    assert err < 1e-3 * max(1.0, l2_norm(st))


def test_goursat_residual_shrinks_under_refinement():
    spec = seeded_spec(Config.U4U3, seed=1)
    coarse = solve_kernels(spec, n_tri=51)
    fine = solve_kernels(spec, n_tri=101)
    for which in ("direct", "inverse"):
        rc = max(goursat_residual(coarse, i, which) for i in range(3))
        rf = max(goursat_residual(fine, i, which) for i in range(3))
        assert rf < rc


def test_boundary_output_kernels_require_q32():
    spec = seeded_spec(Config.U4U2, seed=1)
    kset = solve_kernels(spec, n_tri=51)
    bad = dataclasses.replace(
        spec, q=dataclasses.replace(spec.q, q32=0.0))
    with pytest.raises(AssumptionError):
        boundary_output_kernels(kset, bad)
    rows = boundary_output_kernels(kset, spec)
    for key in ("R_alpha", "Q_alpha", "R_beta", "Q_beta"):
        assert key in rows and rows[key].shape == rows["y"].shape


def test_transform_is_identity_when_kernels_vanish():
    spec = _zero_sigma_spec()
    kset = solve_kernels(spec, n_tri=51)
    prof = bump()
    st = make_state(spec, h=5e-3, u_profiles=[prof] * 3, v_profiles=[prof] * 3)
    out = apply_transform(kset, st, "direct")
    for i in range(3):
        assert np.array_equal(out.u[i], st.u[i])
        assert np.array_equal(out.v[i], st.v[i])
