"""Synthetic sideband traces shared by the fitting and acceptance tests."""
import math

import numpy as np

from ionmotion.fitting import required_duration
from ionmotion.signals import DriveParams, SignalTrace, p_down_distribution


def sideband_trace(pops, drive: DriveParams, span: float = 1.5, per_half_period: int = 4):
    """Noiseless trace of a distribution truncated to ``len(pops)`` levels.

    The trace covers ``span`` times the separation-limited duration and samples
    the fastest ``cos(2 Omega t)`` at least ``per_half_period`` times per half period.
    """
    pops = np.asarray(pops, float)
    pops = pops / pops.sum()
    nmax = pops.size - 1
    duration = span * required_duration(drive, nmax)
    fastest = 2 * float(np.max(drive.rabi(np.arange(nmax + 1))))
    npts = max(int(math.ceil(duration * fastest / math.pi * per_half_period)) + 1, 64)
    t = np.linspace(0.0, duration, npts)
    return SignalTrace(t, p_down_distribution(t, pops, drive)), pops
