import numpy as np
import pytest

from tlalpan_lab.collapse import OrderParameters, scaling_laws

TRUTH = {"chi_c": 0.6, "beta": 0.5, "nu": 2.0, "gamma": 1.0, "v0": 1.0}


def synthetic_sweep(truth=TRUTH, chi=None, noise=0.0, rng=None):
    """Order parameters drawn from the scaling laws, with optional multiplicative noise."""
    chi = np.linspace(0.02, 0.98, 50) if chi is None else np.asarray(chi, dtype=float)
    v, o, t = scaling_laws(chi, **truth)
    out = []
    for c, a, b, d in zip(chi, v, o, t):
        if noise:
            a, b, d = (x * (1 + noise * rng.standard_normal()) for x in (a, b, d))
        out.append(OrderParameters(float(c), max(b, 0.0), max(d, 0.0), min(max(a, 0.0), 1.0)))
    return out


@pytest.fixture
def exact_sweep():
    return synthetic_sweep()
