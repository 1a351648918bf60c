"""Semiparametric geometric extremes with piecewise-linear gauge functions."""

from .data import (DISTRIBUTIONS, LAPLACE_GAUSSIAN, CopulaSpec, Dataset, box_probability,
                   simulate, to_exponential_margins, to_laplace_margins)
from .diagnostics import (chi_empirical, chi_model, export_limit_set, pp_qq_data, return_curve,
                          u0)
from .fitting import (ExceedanceSample, FitConfig, FittedModel, bound, fit, gradient_penalty,
                      nll_angular, nll_joint, nll_radial, select_lambda)
from .gauge import ParametricGauge, PwlGauge, project_gauge
from .sampling import (AngularSampler, ExtremalRegion, estimate_probability,
                       sample_exceedances, sample_truncated_gamma)
from .simplex import (LaplaceMesh, SimplexMesh, delaunay_triangulate, laplace_decompose,
                      laplace_recompose, make_regular_mesh, make_sparse_mesh, to_angle)
from .threshold import ThresholdModel, check_score

__version__ = "0.1.0"
