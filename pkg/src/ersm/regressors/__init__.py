"""Regressors mapping aligned extended-station features to the local station."""

from .features import STORM_KP, FeatureMatrix, build_features, concat_features, time_of_day
from .knn import KnnModel, QuantileTransform, fit_knn, knn_distance, predict_knn
from .linear import LinearModel, fit_linear, predict_linear
from .nn import NnEnsemble, fit_nn, predict_nn, trimmed_ensemble_mean
from .serialize import load_model, loads_model, save_model, dumps_model


def predict(model, fm):
    """Dispatch on the model kind."""
    return {"linear": predict_linear, "knn": predict_knn, "nn": predict_nn}[model.kind](model, fm)
