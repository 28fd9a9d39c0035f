"""Quasi-experimental estimators for multigenerational microdata.

The package pairs a set of design-based estimators (sibling fixed effects,
continuous-treatment difference-in-differences, shift-share instrumental
variables, selection correction, instrumented hazard models, causal
mediation) with a synthetic three-generation population simulator that
plants known effects, so every estimator can be validated against ground
truth end to end.
"""

__version__ = "0.1.0"
