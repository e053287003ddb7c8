import numpy as np
import pytest

from parasitelab import OffspringLaw, luchsinger_linear, luchsinger_nonlinear
from parasitelab.ode import integrate
from parasitelab.rates import (BaselineGenerator, Envelopes, InteractionSpec,
                               ModelSpec)
from parasitelab.state import PopulationState

STANDARD_X0 = np.array([0.9, 0.1])


@pytest.fixture(scope="session")
def model61():
    """Fixed-population model, the convergence-study instance."""
    return luchsinger_nonlinear(1.0, 1.0, 1.0, OffspringLaw.poisson(0.8))


@pytest.fixture(scope="session")
def model61_heavy():
    """Same model with supercritical offspring mean (positive bound margins)."""
    return luchsinger_nonlinear(1.0, 1.0, 1.0, OffspringLaw.poisson(1.5))


@pytest.fixture(scope="session")
def model62():
    """Open-population linear model."""
    return luchsinger_linear(1.0, 1.0, 1.0, OffspringLaw.poisson(0.8))


@pytest.fixture(scope="session")
def model_tiny():
    """Point-mass transmission instance whose joint chain is enumerable."""
    return luchsinger_nonlinear(0.5, 1.0, 0.5, OffspringLaw.point_mass(1))


@pytest.fixture(scope="session")
def sol61(model61):
    return integrate(model61, STANDARD_X0, 2.0, J=54)


@pytest.fixture(scope="session")
def sol61_T1(model61):
    return integrate(model61, STANDARD_X0, 1.0, J=54)


def pure_death_model(mu: float = 1.0) -> ModelSpec:
    """Single baseline move 1 -> 0 at rate mu; no interaction at all."""

    def moves(i):
        return ((0, mu),) if i == 1 else ()

    base = BaselineGenerator(moves, lambda i: 0.0, m1=max(mu, 1.0), m2=1.0)
    inter = InteractionSpec(
        alpha_total=lambda i, x: 0.0,
        alpha_sample=None,
        alpha_pointwise=lambda i, l, x: 0.0,
        beta_total=lambda x: 0.0,
        beta_sample=None,
        beta_pointwise=lambda i, x: 0.0,
        delta=lambda i, x: 0.0,
        envelopes=Envelopes(),
        alpha_loads=frozenset(),
        delta_zero=True,
        beta_zero=True,
    )
    return ModelSpec("pure_death", base, inter)


def empty_interaction(**env) -> InteractionSpec:
    return InteractionSpec(
        alpha_total=lambda i, x: 0.0,
        alpha_sample=None,
        alpha_pointwise=lambda i, l, x: 0.0,
        beta_total=lambda x: 0.0,
        beta_sample=None,
        beta_pointwise=lambda i, x: 0.0,
        delta=lambda i, x: 0.0,
        envelopes=Envelopes(**env),
        alpha_loads=frozenset(),
        delta_zero=True,
        beta_zero=True,
    )


@pytest.fixture(scope="session")
def xi0_100():
    return PopulationState.from_dict({0: 90, 1: 10})
