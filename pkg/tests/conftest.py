import pytest

from hypchain.chainspec import counterexample_spec
from hypchain.reduction import reduce_decoupled_u1u3


@pytest.fixture(scope="session")
def ce_result():
    """Closed-form reduction of the shared-zero family at rho33 = 1."""
    return reduce_decoupled_u1u3(counterexample_spec())


@pytest.fixture(scope="session")
def ce9_result():
    """Same family at rho33 = 0.9 (no common zero; stabilizable)."""
    return reduce_decoupled_u1u3(counterexample_spec(rho33=0.9))


@pytest.fixture(scope="session")
def ce9_law(ce9_result):
    from hypchain.control import design_feedback
    return design_feedback(ce9_result)
