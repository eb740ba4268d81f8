import numpy as np
import pytest

from darkfocus import BeamParams, ParticleMedium

# Parameters of the silica-in-oil experiment the toolkit models by default.
LAMBDA0 = 780e-9
N_MEDIUM = 1.53
NA = 0.46
RADIUS = 575e-9
N_PARTICLE = 1.45
VISCOSITY = 0.89e-3
TEMPERATURE = 293.0


@pytest.fixture(scope="session")
def beam():
    return BeamParams(lambda0=LAMBDA0, n_medium=N_MEDIUM, na=NA, p_total=50e-3)


@pytest.fixture(scope="session")
def particle():
    return ParticleMedium(
        radius=RADIUS,
        n_particle=N_PARTICLE,
        n_medium=N_MEDIUM,
        viscosity=VISCOSITY,
        temperature=TEMPERATURE,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
