"""Tree-based improvement factors on top of a Lee-Carter baseline."""

from .models import ForestModel, ForestParams, GbmModel, GbmParams
from .pipeline import (
    ImprovementTargets,
    MlForecast,
    fit_forest,
    fit_gbm,
    fit_tree,
    forecast_ml,
    improved_rates,
    improvement_targets,
    predict_q,
    q_surface,
)
from .trees import TreeModel, TreeParams
