import math

import numpy as np
import pytest

from biphoton.device import BANDS, BandParams, DeviceSpec, PolingPattern, load_device, reference_device_path

REFERENCE = {"pump": 775.0, "signal": 1550.0, "idler": 1550.0}


def make_random_device(rng, n=None, length=None, max_loss_length=2.0, nonreciprocity=0.0,
                       kappa=1e-4):
    """Short random array: defects, losses up to alpha*L = max_loss_length, detunings."""
    n = int(rng.integers(2, 6)) if n is None else n
    length = float(rng.uniform(500, 5000)) if length is None else length
    period = float(rng.uniform(14, 18))
    start = float(rng.uniform(0, 0.2 * length))
    end = float(rng.uniform(0.8 * length, length))
    n_def = int(rng.integers(0, 5))
    defects = tuple(np.sort(rng.uniform(0, end - start, n_def)))
    bands = {}
    for b in BANDS:
        bands[b] = BandParams(
            band=b,
            beta0=tuple(rng.normal(0, 2e-3, n)),
            beta1=float(rng.uniform(-0.03, 0.0)),
            reference_wavelength=REFERENCE[b],
            coupling=tuple(rng.uniform(2e-4, 2e-3, n - 1)) if b != "pump" or rng.random() < 0.5
            else 0.0,
            loss=tuple(rng.uniform(0, max_loss_length / length, n)),
            nonreciprocity=nonreciprocity,
        )
    poling = PolingPattern(period, float(rng.uniform(0.35, 0.65)), start, end, defects,
                           tuple(rng.uniform(0.5, 1.5, n)))
    return DeviceSpec(n, length, bands, poling, mismatch0=2 * math.pi / period + rng.normal(0, 1e-3),
                      kappa=kappa, sbend_length=float(rng.uniform(0, 500)), name="random")


@pytest.fixture
def random_device():
    return make_random_device


@pytest.fixture(scope="session")
def reference_spec():
    return load_device(reference_device_path())


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
