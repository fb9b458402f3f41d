import numpy as np
import pytest

from satqkd.protocol import ProtocolParams
from satqkd.receiver import DetectorConfig, ReceiverConfig


@pytest.fixture
def params():
    return ProtocolParams()


@pytest.fixture
def receiver(params):
    return ReceiverConfig.default(params)


@pytest.fixture
def ideal_receiver(params):
    """Perfect visibility, no dark counts, no dead time."""
    return ReceiverConfig.default(
        params,
        visibility=1.0,
        insertion_loss_db=0.0,
        detector=DetectorConfig(efficiency=1.0, dark_rate=0.0, dead_time=0.0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def poisson_band(lam, z=3.0):
    """Inclusive (lo, hi) acceptance band for a Poisson count, covering
    at least the central ~99.7% of the distribution for any rate."""
    import math

    if lam < 0:
        raise ValueError
    if lam == 0:
        return 0, 0
    if lam > 100:
        s = math.sqrt(lam)
        return lam - z * s, lam + z * s
    # exact tail walk for small rates
    tail = 0.00135
    p = math.exp(-lam)
    cdf = p
    k = 0
    lo = 0
    while cdf < tail:
        k += 1
        p *= lam / k
        cdf += p
        lo = k
    hi = k
    while cdf <= 1.0 - tail and k < 10000:
        k += 1
        p *= lam / k
        cdf += p
        hi = k
    return lo, hi
