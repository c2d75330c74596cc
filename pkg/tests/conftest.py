"""Shared builders for the standard collision maps used across the suite."""

import numpy as np
import pytest

from qmap import cptpmap, model


def make_spec(sites, h, jx, jy, beta, jx_c, jy_c, tau, h_b=None):
    chain = model.SpinChainParams(sites=sites, h=h, jx=jx, jy=jy)
    bath = model.BathParams(h_b=h if h_b is None else h_b, beta=beta)
    coup = model.CouplingSpec(jx_c=jx_c, jy_c=jy_c, tau=tau)
    return cptpmap.MapSpec(
        h_s=model.build_chain(chain),
        h_b=model.build_bath(bath),
        v=model.build_coupling(coup, sites),
        tau=tau,
        beta=beta,
    )


@pytest.fixture(scope="session")
def thermal_spec():
    """Single spin exchanged with a bath spin at the same field: thermal map."""
    return make_spec(1, 1.0, (), (), 1.0, 3.0, 3.0, 4.0)


@pytest.fixture(scope="session")
def drive_spec():
    """Single spin with unequal x/y coupling weights: off-thermal drive."""
    return make_spec(1, 1.0, (), (), 1.0, 3.3, 3.0, 1.0)


@pytest.fixture(scope="session")
def xx3_spec():
    """3-site XX chain collision; commuting-magnetization equilibrium map."""
    return make_spec(3, 2.0, (3.0, 3.0), (), 1.2, 3.0, 3.0, 1.0)


@pytest.fixture(scope="session")
def xy3_spec():
    """3-site XY chain collision; steady state is a NESS."""
    return make_spec(3, 2.0, (3.0, 3.0), (2.0, 2.0), 1.2, 3.0, 3.0, 1.0)


@pytest.fixture(scope="session")
def xy2_spec():
    """2-site XY chain collision used for the fluctuation-relation checks."""
    return make_spec(2, 2.0, (3.0,), (2.0,), 1.2, 3.0, 3.0, 1.0)


@pytest.fixture(scope="session")
def thermal_kraus(thermal_spec):
    return cptpmap.kraus_from_dilation(thermal_spec)


@pytest.fixture(scope="session")
def xx3_kraus(xx3_spec):
    return cptpmap.kraus_from_dilation(xx3_spec)


@pytest.fixture(scope="session")
def xy3_kraus(xy3_spec):
    return cptpmap.kraus_from_dilation(xy3_spec)


@pytest.fixture(scope="session")
def xy2_kraus(xy2_spec):
    return cptpmap.kraus_from_dilation(xy2_spec)


def random_density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2
