"""Simulation and analysis of the motional states of a single trapped ion.

Submodules:

* :mod:`ionmotion.fock` - truncated Fock-space states and displacement operators
* :mod:`ionmotion.signals` - blue-sideband and cat-interferometer signals
* :mod:`ionmotion.tomography` - density-matrix and Wigner-function reconstruction
* :mod:`ionmotion.forced` - analytic and numeric propagation under classical forces
* :mod:`ionmotion.decoherence` - white-noise Monte Carlo for superposed coherent states
* :mod:`ionmotion.fitting` - damped-sinusoid, population and cat-fringe fits
* :mod:`ionmotion.cli` - command-line entry point
"""

__version__ = "0.1.0"
