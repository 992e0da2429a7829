"""
Shared fixtures: the unit box and a few small spectral states.

Odd-mode counts relate to n_max as count = (n_max + 1) // 2.
"""
import pytest

from app.core.domain import BoxDomain
from app.services.spectral_service import (
    build_custom,
    build_parabola,
    build_triangle,
    build_uniform,
)


@pytest.fixture
def domain():
    return BoxDomain()


@pytest.fixture
def uniform_3(domain):
    """Full-box uniform state with modes 1, 3, 5."""
    return build_uniform(domain, 0.0, 1.0, 5)


@pytest.fixture
def uniform_15(domain):
    return build_uniform(domain, 0.0, 1.0, 29)


@pytest.fixture
def uniform_31(domain):
    return build_uniform(domain, 0.0, 1.0, 61)


@pytest.fixture
def uniform_64(domain):
    return build_uniform(domain, 0.0, 1.0, 127)


@pytest.fixture
def ground_state(domain):
    return build_custom(domain, [1], [1.0])


@pytest.fixture
def padded_mode_2(domain):
    """Mode 2 alone, stored next to zero-weight modes 1, 3 and 4."""
    return build_custom(domain, [1, 2, 3, 4], [0.0, 1.0, 0.0, 0.0])


@pytest.fixture
def triangle_256(domain):
    return build_triangle(domain, 511)


@pytest.fixture
def parabola_256(domain):
    return build_parabola(domain, 511)
