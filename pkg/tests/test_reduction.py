import dataclasses

import numpy as np
import pytest

from hypchain.chainspec import Config, counterexample_spec, seeded_spec
from hypchain.errors import AssumptionError, SpecValidationError
from hypchain.reduction import (decouple_u1u4, make_decoupling_controller,
                                model_structure, reduce,
                                reduce_decoupled_u1u3, validate_reduction)


def test_closed_form_counterexample_model(ce_result):
    # [DERIVED] unit speeds, sigma as in the shared-zero family: the reduced
    # model has tau = 2 and point input delays theta = 2 (V1 through
    # subsystems 1-2) and theta = 2 (V2 path)
    m = ce_result.model
    assert m.tau == pytest.approx(2.0)
    assert len(m.inputs) == 2
    assert m.principal_part_stable()


def test_closed_form_validates_against_pde(ce_result):
    rel = validate_reduction(ce_result, h=2e-3)
    assert rel < 1e-2


def test_reduce_dispatcher_matches_explicit():
    spec = counterexample_spec(rho33=0.9)
    a = reduce(spec)
    b = reduce_decoupled_u1u3(spec)
    assert a.model.a == pytest.approx(b.model.a)
    assert a.model.tau == pytest.approx(b.model.tau)


def test_model_structure_names_input_chain():
    for cfg in (Config.U1U3, Config.U4U3, Config.U4U2, Config.U1U4):
        spec = seeded_spec(cfg, seed=0)
        s = model_structure(spec)
        assert isinstance(s, dict) and s


def test_u4u2_requires_zero_sigma_23():
    spec = seeded_spec(Config.U4U3, seed=0)  # nonzero sigma everywhere
    bad = dataclasses.replace(spec, config=Config.U4U2)
    with pytest.raises((AssumptionError, SpecValidationError)):
        reduce(bad)


def test_u1u4_decoupling_manifest():
    spec = seeded_spec(Config.U1U4, seed=0)
    res = decouple_u1u4(spec)
    man = res.manifest()
    assert isinstance(man, dict)
    ctrl = make_decoupling_controller(spec)
    assert callable(ctrl)
