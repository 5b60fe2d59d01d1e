"""valzeta: exact zeta functions and Euler-characteristic invariants for
valuation-defined sets.

The package is organised in layers:

* :mod:`valzeta.presburger` -- integer linear constraint sets with congruences,
  quantifier elimination, piecewise-unimodular maps.
* :mod:`valzeta.semilinear` -- cell decomposition over the rational value
  group, Euler characteristics, convolution.
* :mod:`valzeta.grothring` -- graded residue/value classes, retractions.
* :mod:`valzeta.genfun` -- exact summation of geometric-type series into
  rational functions of ``q`` and ``T_i``.
* :mod:`valzeta.vfrag` -- monomial regions: volumes, zeta functions, Fubini
  and change-of-variables checks.
* :mod:`valzeta.padic` -- truncated p-adic / Laurent-series integration
  oracle used to validate the symbolic results.
* :mod:`valzeta.cli` -- a small constraint DSL plus command line front end.
"""

__version__ = "0.1.0"
