"""Guaranteed two-sided error bounds for convection-diffusion problems."""

from . import (adapt, assembly, cli, errors, estimate_spacetime,
               estimate_static, expressions, fem, homotopy, linsolve, mesh,
               presets, quadrature)
from .expressions import parse_coefficient

__all__ = ["adapt", "assembly", "cli", "errors", "estimate_spacetime",
           "estimate_static", "expressions", "fem", "homotopy", "linsolve",
           "mesh", "presets", "quadrature", "parse_coefficient"]
