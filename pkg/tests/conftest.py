"""Shared test helpers: deterministic seeds and z-score assertions."""

import numpy as np
import pytest


def zcheck(values, target, max_z=3.0):
    """Assert a Monte Carlo mean hits `target` within `max_z` standard errors.

    Returns (mean, stderr, z) so tests can log the margin.
    """
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    stderr = values.std(ddof=1) / np.sqrt(len(values))
    z = (mean - target) / stderr
    assert abs(z) <= max_z, (
        f"mean {mean:.6g} vs target {target:.6g}: z = {z:.2f} "
        f"(stderr {stderr:.3g})")
    return mean, stderr, z


@pytest.fixture
def goe20():
    from emflab import ensembles

    return ensembles.EnsembleSpec(kind="goe", n=20)
