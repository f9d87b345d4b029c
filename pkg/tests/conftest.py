import numpy as np
import pytest

from dcmpc import ClusterParams, PlantParams, PowerModel, SystemState


def make_params(n_clusters=1, a1=10.0, a2=1.0, alpha=0.05, beta=0.95, sigma=1.5,
                mu=1.0, d_max=0.05, t_cpu_max=80.0, tc_min=18.0, tc_max=27.0):
    cl = ClusterParams(alpha=alpha, beta=beta, sigma=sigma, mu=mu,
                       d_max=d_max, t_cpu_max=t_cpu_max)
    return PlantParams(PowerModel(a1, a2), (cl,) * n_clusters, tc_min, tc_max)


def fd_grad(fn, w, h=1e-5):
    """Central-difference gradient of a scalar function."""
    w = np.asarray(w, dtype=float)
    g = np.zeros_like(w)
    for i in range(w.size):
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fn(up) - fn(dn)) / (2 * h)
    return g


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def params3():
    return make_params(n_clusters=3)


@pytest.fixture
def state(params):
    return SystemState(0, np.full(params.n_clusters, 27.0))
