import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypchain.errors import GridError
from hypchain.ide import (IdeInput, IdeModel, Kernel, principal_part_stable,
                          simulate_ide, substitute_v2, trapezoid_weights)
from hypchain.spectral import box_integral, build_characteristic_triple


def test_trapezoid_weights_integrate_linear_exactly():
    # [TRIVIAL] trapezoid rule is exact on affine integrands
    n = 17
    w = trapezoid_weights(n)
    x = np.arange(n + 1, dtype=float)
    assert abs(np.sum(w) - n) < 1e-12
    assert abs(np.dot(w, 3.0 * x + 2.0) - (1.5 * n * n + 2.0 * n)) < 1e-10


def test_pure_delay_staircase():
    # [DERIVED] x(t) = a x(t - tau) with unit history gives x = a^(k+1)
    # on [k tau, (k+1) tau)
    a, tau = 0.5, 1.0
    model = IdeModel(a=a, tau=tau)
    times, xs = simulate_ide(model, T=6.0, h=0.01, x_history=1.0)
    for k in range(6):
        t_mid = k * tau + 0.5 * tau
        i = int(round(t_mid / 0.01))
        assert xs[i] == pytest.approx(a ** (k + 1), abs=1e-12)


def test_distributed_kernel_matches_scalar_ode_limit():
    # [DERIVED] N = constant c on [0, tau] with a = 0 approximates
    # x(t) = c int_{t-tau}^t x; for small c the lattice solution converges
    # to the exact exponential-polynomial solution computed on a fine grid
    c, tau = 0.3, 1.0
    model = IdeModel(a=0.0, tau=tau, N=Kernel.constant(c, 0.0, tau))
    _, coarse = simulate_ide(model, T=4.0, h=2e-2, x_history=1.0)
    times, fine = simulate_ide(model, T=4.0, h=2.5e-3, x_history=1.0)
    err = abs(coarse[-1] - fine[-1])
    assert err < 5e-3 * max(1.0, abs(fine[-1]))


def test_grid_errors():
    model = IdeModel(a=0.5, tau=1.0)
    with pytest.raises(GridError):
        simulate_ide(model, T=1.05, h=0.1)
    with pytest.raises(GridError):
        simulate_ide(IdeModel(a=0.5, tau=0.95), T=1.0, h=0.1)


def test_input_channel_delay():
    # [DERIVED] with a = 0 and a single point input, x(t) = b V(t - theta)
    model = IdeModel(a=0.0, tau=1.0,
                     inputs=[IdeInput(b=2.0, theta=0.5)])
    sig = lambda t: np.sin(t)
    times, xs = simulate_ide(model, T=3.0, h=1e-3, input_signals=[sig])
    mask = times >= 0.5
    expect = 2.0 * np.sin(times[mask] - 0.5)
    assert np.max(np.abs(xs[mask] - expect)) < 1e-12


@given(a=st.floats(-3.0, 3.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_principal_part_stability_boundary(a):
    assert principal_part_stable(a) == (abs(a) < 1.0)


def _two_input_model(delta1=0.0):
    # state-mode substitution requires delta_1 = 0; input mode allows it
    N = Kernel.from_callable(lambda t: 0.2 * np.cos(t), 0.0, 1.0, 101)
    hi = 0.5 + delta1
    M1 = Kernel.from_callable(lambda t: 0.1 * t, 0.0, hi,
                              int(round(hi / 0.01)) + 1)
    return IdeModel(a=0.4, tau=1.0, N=N,
                    inputs=[IdeInput(b=0.8, theta=0.5, delta=delta1, M=M1),
                            IdeInput(b=-0.6, theta=0.25)])


@pytest.mark.parametrize("mode", ["state", "input"])
def test_substitute_v2_matches_direct_simulation(mode):
    # [DERIVED] replacing V2 by its defining integral must reproduce the
    # two-input simulation when V2 is driven by exactly that integral
    model = _two_input_model(0.0 if mode == "state" else 0.25)
    alpha, h, T = 1.3, 1e-2, 6.0
    sub = substitute_v2(model, alpha, mode=mode)
    # V1 vanishes for t <= 0 so the substituted V2 history is zero too,
    # matching the zero input history of the direct two-input run
    V1 = lambda t: np.sin(1.7 * t) if t > 0.0 else 0.0
    if mode == "state":
        span = model.tau
        # V2(t) = alpha * int_0^tau x(t - nu) dnu, resolved inside the march
        n_box = int(round(span / h))
        w_box = trapezoid_weights(n_box) * h

        def feedback(k, t, x, v):
            acc = float(np.dot(w_box[1:], x[k - n_box:k][::-1]))
            return [(V1(t), 0.0), (alpha * acc, alpha * w_box[0])]

        _, x_two = simulate_ide(model, T=T, h=h, feedback=feedback)
    else:
        span = model.inputs[0].horizon
        n_box = int(round(span / h))
        w_box = trapezoid_weights(n_box) * h

        def feedback(k, t, x, v):
            vals = np.array([V1(t - m * h) for m in range(n_box + 1)])
            return [V1(t), float(-alpha * np.dot(w_box, vals))]

        _, x_two = simulate_ide(model, T=T, h=h, feedback=feedback)
    _, x_sub = simulate_ide(sub, T=T, h=h, input_signals=[V1])
    assert np.max(np.abs(x_two - x_sub)) < 1e-8


@pytest.mark.parametrize("mode,span_of", [("state", "tau"), ("input", "h1")])
def test_substituted_characteristic_identity(mode, span_of):
    # [DERIVED] the substituted model's state characteristic function equals
    # F0(s) - alpha B(s) F2(s) (state mode) where B is the box integral over
    # the substitution span; input mode folds -alpha B into the V1 channel
    model = _two_input_model(0.0 if mode == "state" else 0.25)
    alpha = 0.9
    sub = substitute_v2(model, alpha, mode=mode)
    F0, F1, F2 = build_characteristic_triple(model)
    G0, G1, _ = build_characteristic_triple(sub)
    span = model.tau if span_of == "tau" else model.inputs[0].horizon
    pts = [0.1 + 0.3j, -0.2 + 2.0j, 0.05 - 1.1j, 0.0]
    for s in pts:
        B = complex(box_integral(s, 0.0, span))
        if mode == "state":
            want0, want1 = F0(s) - alpha * B * F2(s), F1(s)
        else:
            want0, want1 = F0(s), F1(s) - alpha * B * F2(s)
        # substituted kernels live on their own lattice: quadrature accuracy
        assert abs(G0(s) - want0) < 1e-4
        assert abs(G1(s) - want1) < 1e-4
