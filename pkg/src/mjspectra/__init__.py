"""Semiclassical spectra of quasi-periodic Hamiltonian flows.

Numerical toolkit for conformal Hamiltonian pairs sharing an energy surface:
flow reparametrization and rotation-vector rescaling, KAM rotation profiles and
Diophantine masks, Birkhoff normal forms with quasi-energy ladders, rational
averaging along a fast angle with the induced 1-d Schroedinger model, and torus
Weyl matrices with windowed eigensolves, Husimi localization, quasi-projectors
and Gram-Schmidt quasi-mode pairs.
"""

__version__ = "0.1.0"

from . import bnf, flow, kam, models, quantize, series, spectra  # noqa: F401
