import numpy as np
import pytest

from tristate_prop.core import Grid, MediumParams, SystemKind, make_sech_pulses, normalize


def make_problem(q=1.0, kind=SystemKind.LAMBDA, a=10.0, t_d=2.5, z=(0.0,), n_tau=2048,
                 delta_p=0.0, gamma=0.0, T=1.0):
    medium = MediumParams(kind, q, delta_p, gamma)
    pulses = make_sech_pulses(a, T, t_d)
    return normalize(medium, pulses, Grid.default_for(pulses, z, n_tau))


@pytest.fixture
def problem_factory():
    return make_problem


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)
