import numpy as np
import pytest

from hypchain.chainspec import counterexample_spec
from hypchain.ide import Kernel
from hypchain.reduction import reduce_decoupled_u1u3
from hypchain.spectral import (QuasiPoly, Rect, box_integral,
                               build_characteristic_triple,
                               check_common_zeros, default_rect, select_alpha,
                               zeros_in_rect)


def test_box_integral_closed_form():
    # [TRIVIAL] B(s) = (1 - e^{-s L}) / s with removable singularity L at 0
    assert complex(box_integral(0.0, 0.0, 2.0)) == pytest.approx(2.0)
    s = 0.7 + 1.3j
    want = (1.0 - np.exp(-2.0 * s)) / s
    assert complex(box_integral(s, 0.0, 2.0)) == pytest.approx(want)


def test_scalar_delay_zeros_closed_form():
    # [DERIVED] zeros of 1 - 0.5 e^{-s} are s = -ln 2 + 2 pi i k
    F = QuasiPoly([(1.0, 0.0), (-0.5, 1.0)], [], "F")
    rect = Rect(-2.0, 1.0, -30.0, 30.0)
    zeros = zeros_in_rect(F, rect, tol=1e-10)
    want = sorted(-np.log(2.0) + 2j * np.pi * k for k in range(-4, 5))
    got = sorted((z for z, _ in zeros), key=lambda z: z.imag)
    assert len(got) == len(want)
    for g, w in zip(got, sorted(want, key=lambda z: z.imag)):
        assert abs(g - w) < 1e-9


def test_double_zero_multiplicity():
    # [DERIVED] (1 - 0.5 e^{-s})^2 expanded: 1 - e^{-s} + 0.25 e^{-2s}
    F = QuasiPoly([(1.0, 0.0), (-1.0, 1.0), (0.25, 2.0)], [], "F")
    zeros = zeros_in_rect(F, Rect(-1.5, 0.5, -1.0, 1.0), tol=1e-9)
    assert len(zeros) == 1
    z, mult = zeros[0]
    assert mult == 2
    assert abs(z - (-np.log(2.0))) < 1e-8


def test_kernel_term_against_semi_analytic():
    # [DERIVED] F(s) = 1 - int_0^1 e^{-s nu} dnu = 1 - B(s); its real zero
    # solves 1 = (1 - e^{-s})/s, i.e. s = 0 is NOT a zero, and there are
    # complex pairs near s = -ln|.|; we verify F evaluates to 1 - B exactly
    F = QuasiPoly([(1.0, 0.0)], [Kernel(0.0, 1.0, -np.ones(401))], "F")
    for s in (0.3 + 0.9j, -0.5, 2.0 - 3.0j):
        want = 1.0 - complex(box_integral(s, 0.0, 1.0))
        assert abs(F(s) - want) < 1e-12


def test_counterexample_triple_shares_zero_at_origin():
    res = reduce_decoupled_u1u3(counterexample_spec())
    F0, F1, F2 = build_characteristic_triple(res.model)
    for F in (F0, F1, F2):
        assert abs(F(0.0)) <= 1e-12
    verdict = check_common_zeros(F0, F1, F2, default_rect(res.model.tau))
    assert not verdict.ok
    assert any(abs(z) < 1e-6 for z, _ in verdict.common)


def test_perturbed_family_has_no_common_zero():
    res = reduce_decoupled_u1u3(counterexample_spec(rho33=0.9))
    F0, F1, F2 = build_characteristic_triple(res.model)
    verdict = check_common_zeros(F0, F1, F2, default_rect(res.model.tau))
    assert verdict.ok
    assert verdict.common == []


def test_select_alpha_avoids_excluded_ratios():
    res = reduce_decoupled_u1u3(counterexample_spec(rho33=0.9))
    F0, F1, F2 = build_characteristic_triple(res.model)
    rect = default_rect(res.model.tau)
    alpha, excluded = select_alpha(F0, F1, F2, rect, mode="state",
                                   rng_seed=0, span=res.model.tau)
    assert 0.5 <= alpha <= 2.0
    assert all(abs(alpha - e) >= 1e-6 for e in excluded)


def test_select_alpha_raises_on_shared_zero():
    res = reduce_decoupled_u1u3(counterexample_spec())
    F0, F1, F2 = build_characteristic_triple(res.model)
    rect = default_rect(res.model.tau)
    from hypchain.errors import AssumptionError
    with pytest.raises(AssumptionError):
        select_alpha(F0, F1, F2, rect, mode="state", rng_seed=0,
                     span=res.model.tau)
