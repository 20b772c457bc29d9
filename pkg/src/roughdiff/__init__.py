"""roughdiff: a numerical laboratory for divergence-form diffusions.

The package simulates diffusions generated by L = div(a grad) with
uniformly elliptic, possibly very rough, coefficient fields and measures
the objects of the associated stochastic calculus along dyadic time grids:
quadratic variations, covariations, forward (trapezoid) integrals, heat
kernel envelopes, resolvent potentials of the initial law, and the
integrability conditions tying test functions to initial laws.
"""

__version__ = "0.1.0"

from . import errors  # noqa: E402
from . import (  # noqa: E402
    calculus,
    fields,
    integrability,
    kernels,
    sampling,
    testfunctions,
)
from . import runner  # noqa: E402  (imports the modules above)
from .runner import load_scenario, run_scenario, summarize  # noqa: E402

__all__ = [
    "__version__",
    "calculus",
    "errors",
    "fields",
    "integrability",
    "kernels",
    "load_scenario",
    "run_scenario",
    "runner",
    "sampling",
    "summarize",
    "testfunctions",
]
