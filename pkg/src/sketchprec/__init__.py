"""Randomized error indicators for interpolated parameter-dependent preconditioners."""

from .affine import AffineOperator, AffineVector, Constant, ParameterGrid, Power, Rational, Trig
from .errors import (
    DenominatorNonpositiveError,
    DimensionError,
    NotOrthonormalError,
    NotPowerOfTwoError,
    NotSPDError,
    NotThetaOrthonormalError,
    RankDeficientError,
    SingularError,
    SingularReducedError,
    SketchPrecError,
)
from .linalg import MetricSpace, hs_norm, lu_factorize, metric_factorize, orthonormalize_u, singular_bounds
from .operator_sketch import OperatorSketchMap, build_sketch_map, composed_accuracy
from .preconditioner import IndicatorSystem, PreconditionerBasis, greedy_select, solve_coefficients
from .sketching import SketchingMatrix, UEmbedding, fwht, gaussian_min_rows, srht_min_rows

__version__ = "0.1.0"

__all__ = [
    "AffineOperator",
    "AffineVector",
    "Constant",
    "DenominatorNonpositiveError",
    "DimensionError",
    "IndicatorSystem",
    "MetricSpace",
    "NotOrthonormalError",
    "NotPowerOfTwoError",
    "NotSPDError",
    "NotThetaOrthonormalError",
    "OperatorSketchMap",
    "ParameterGrid",
    "Power",
    "PreconditionerBasis",
    "RankDeficientError",
    "Rational",
    "SingularError",
    "SingularReducedError",
    "SketchPrecError",
    "SketchingMatrix",
    "Trig",
    "UEmbedding",
    "build_sketch_map",
    "composed_accuracy",
    "fwht",
    "gaussian_min_rows",
    "greedy_select",
    "hs_norm",
    "lu_factorize",
    "metric_factorize",
    "orthonormalize_u",
    "singular_bounds",
    "solve_coefficients",
    "srht_min_rows",
]
