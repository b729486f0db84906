"""Tree ensembles used to learn choice rates from problem features."""

from .ensemble import (BoostConfig, EnsembleModel, ForestConfig, averaged_predictions, fit_boosted,
                       fit_forest, fit_model, load_model, save_model)
from .tree import RegressionTree, fit_tree, presort

__all__ = ["BoostConfig", "EnsembleModel", "ForestConfig", "RegressionTree", "averaged_predictions",
           "fit_boosted", "fit_forest", "fit_model", "fit_tree", "load_model", "presort", "save_model"]
