"""Shared numerical machinery: splines, penalized IRLS, ARIMA."""

from .arima import ArimaModel, arima_fit, arima_forecast, forecast_series
from .irls import (
    BlockDesign,
    ConvergenceError,
    DenseDesign,
    IrlsResult,
    SmoothingProblem,
    gcv_score,
    penalized_poisson_irls,
    poisson_deviance,
    select_smoothing,
)
from .splines import DomainError, SplineBasis, bspline_basis, difference_penalty, tensor_design, tensor_penalties
