import numpy as np
import pytest

from hypchain.chainspec import (Config, InputSignal, counterexample_spec,
                                seeded_spec)
from hypchain.errors import SpecValidationError
from hypchain.pde import (bump, check_compatibility, l2_norm, make_state,
                          simulate)


def test_zero_state_stays_zero():
    # [TRIVIAL] the chain is linear and homogeneous without inputs
    spec = counterexample_spec()
    st0 = make_state(spec, h=1e-2)
    traj, _ = simulate(spec, st0, T=3.0, record_norms=True)
    assert np.max(traj.norms) == 0.0


def test_bump_state_is_compatible_and_norm_finite():
    spec = seeded_spec(Config.U1U3, seed=1)
    prof = bump()
    st0 = make_state(spec, h=2e-3, u_profiles=[prof] * 3, v_profiles=[prof] * 3)
    check_compatibility(spec, st0)
    traj, _ = simulate(spec, st0, T=2.0, record_norms=True)
    assert np.all(np.isfinite(traj.norms))
    assert traj.norms[0] == pytest.approx(l2_norm(st0))


def test_transport_delay_of_boundary_input():
    # [DERIVED] in the shared-zero family sigma_1^- = 0 and rho11 = rho12
    # = 0, so v1 is pure leftward transport of the right-boundary input:
    # v1(t, 0) = U1(t - 1/mu_1) exactly
    spec = counterexample_spec()
    gate = lambda t: 1.0 if t >= 0.0 else 0.0
    inputs = InputSignal(u1=gate, config=spec.config)
    st0 = make_state(spec, h=1e-3)
    traj, _ = simulate(spec, st0, inputs=inputs, T=2.0, check=False)
    v1_0 = traj.trace("v1_0")
    t = traj.times
    mu1 = spec.mus[0]
    before = np.max(np.abs(v1_0[t < 1.0 / mu1 - 1e-6]))
    after = v1_0[np.searchsorted(t, 1.0 / mu1 + 0.1)]
    assert before < 1e-12
    assert after == pytest.approx(1.0, abs=1e-12)


def test_grid_refinement_consistency():
    # [DERIVED] first-order upwind scheme: halving h roughly halves the
    # error, so coarse-vs-fine trace differences shrink under refinement
    spec = counterexample_spec(rho33=0.9)
    prof = bump()

    def run(h):
        st0 = make_state(spec, h=h, u_profiles=[prof] * 3,
                         v_profiles=[prof] * 3)
        traj, _ = simulate(spec, st0, T=4.0, record_norms=True)
        return traj.norms[-1]

    e1 = abs(run(4e-3) - run(1e-3))
    e2 = abs(run(2e-3) - run(1e-3))
    assert e2 < e1


def test_incompatible_state_rejected():
    spec = counterexample_spec()
    st0 = make_state(spec, h=1e-2,
                     u_profiles=[lambda x: 1.0 + 0.0 * x] * 3,
                     v_profiles=[None] * 3)
    rep = check_compatibility(spec, st0, raise_on_fail=False)
    assert not rep["ok"]


def test_spec_validation_rejects_bad_speed():
    import dataclasses
    good = counterexample_spec()
    with pytest.raises(SpecValidationError):
        dataclasses.replace(good, lambdas=(1.0, -1.0, 1.0))
