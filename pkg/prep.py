"""
Preprocessing - Robust Scaler, chronological split and sliding windows
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from domain_models import ParameterError, ShapeError
from ndcore import Matrix, Vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature median and quartiles fitted on training rows"""
    median: Vector
    q25: Vector
    q75: Vector
    iqr: Vector

    @property
    def degenerate(self) -> np.ndarray:
        """Features with zero interquartile range"""
        return self.iqr == 0

    @property
    def divisor(self) -> Vector:
        return np.where(self.degenerate, 1.0, self.iqr)

    @property
    def n_features(self) -> int:
        return self.median.shape[0]


@dataclass
class WindowSet:
    """Sliding windows: inputs (N, window, F), targets (N, F'), origins (N,)"""
    inputs: np.ndarray
    targets: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, mask: np.ndarray) -> 'WindowSet':
        return WindowSet(self.inputs[mask], self.targets[mask], self.origins[mask])


def _as_series(x, name: str) -> Matrix:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be week x feature, got shape {arr.shape}")
    return arr


def fit_scaler(train) -> ScalerParams:
    """
    Fit the Robust Scaler on training rows.

    Quartiles use linear interpolation between order statistics.
    Features with zero IQR are flagged degenerate and later divided by 1.
    """
    x = _as_series(train, "Training data")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ParameterError("Cannot fit a scaler on empty data")
    if x.shape[0] < 2:
        raise ParameterError(f"Scaler needs at least 2 training weeks, got {x.shape[0]}")
    q25, median, q75 = np.percentile(x, [25, 50, 75], axis=0)
    params = ScalerParams(median=median, q25=q25, q75=q75, iqr=q75 - q25)
    if params.degenerate.any():
        logger.debug(f"{int(params.degenerate.sum())} feature(s) have zero IQR; scaling by 1")
    return params


def _check_features(s: ScalerParams, x: Matrix) -> None:
    if x.shape[1] != s.n_features:
        raise ShapeError(f"Data has {x.shape[1]} features, scaler was fit on {s.n_features}")


def transform(s: ScalerParams, x) -> Matrix:
    """(x - median) / iqr per feature"""
    arr = _as_series(x, "Data")
    _check_features(s, arr)
    return (arr - s.median) / s.divisor


def inverse_transform(s: ScalerParams, x) -> Matrix:
    arr = _as_series(x, "Data")
    _check_features(s, arr)
    return arr * s.divisor + s.median


def split_train_test(panel, train_weeks: int, test_weeks: int) -> Tuple[Matrix, Matrix]:
    """Chronological split by week index, no shuffling"""
    x = _as_series(panel, "Panel")
    total = x.shape[0]
    if train_weeks < 1:
        raise ParameterError("Training split cannot be empty")
    if test_weeks < 0:
        raise ParameterError("Test split cannot be negative")
    if train_weeks + test_weeks != total:
        raise ParameterError(
            f"train_weeks ({train_weeks}) + test_weeks ({test_weeks}) != total weeks ({total})")
    return x[:train_weeks], x[train_weeks:]


def make_windows(series, window: int) -> WindowSet:
    """
    Stride-1 windows over a week x feature series.

    The window with origin t covers weeks [t - window, t - 1] and its
    target is every feature at week t.
    """
    x = _as_series(series, "Series")
    if window < 1:
        raise ParameterError(f"Window must be >= 1, got {window}")
    weeks = x.shape[0]
    if weeks <= window:
        raise ParameterError(f"Series of {weeks} weeks is too short for window {window}; "
                             f"at least {window + 1} weeks are required")
    origins = np.arange(window, weeks)
    inputs = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)[:-1]
    # sliding_window_view puts the window axis last
    inputs = np.ascontiguousarray(inputs.transpose(0, 2, 1))
    return WindowSet(inputs=inputs, targets=x[origins].copy(), origins=origins)
