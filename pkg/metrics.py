"""
Evaluation losses - MSE and RMSE over pooled residual cells
"""

import numpy as np

from domain_models import LossPair, ParameterError


def _residuals(y, y_hat) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ParameterError(f"Actual {y.shape} and predicted {y_hat.shape} shapes differ")
    if y.size == 0:
        raise ParameterError("Cannot score empty vectors")
    return (y - y_hat).ravel()


def mse(y, y_hat) -> float:
    """Mean of squared residuals; matrices are flattened so every cell counts once"""
    r = _residuals(y, y_hat)
    return float(np.mean(r * r))


def rmse(y, y_hat) -> float:
    return float(np.sqrt(mse(y, y_hat)))


def loss_pair(y, y_hat) -> LossPair:
    value = mse(y, y_hat)
    return LossPair(mse=value, rmse=float(np.sqrt(value)))
