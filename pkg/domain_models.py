"""
Domain Models for the variant case forecasting toolkit
Value objects, enums, entities and exceptions shared by every module
"""

import json
import re
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import List, Optional, Dict, Any, Tuple

import numpy as np

# =============================================================================
# EXCEPTIONS
# =============================================================================

class ForecastError(Exception):
    """Base class for every error raised by the toolkit"""

class ShapeError(ForecastError, ValueError):
    """Raised when tensor dimensions disagree"""

class ParameterError(ForecastError, ValueError):
    """Raised for invalid counts, ranges or empty inputs"""

class ConsistencyError(ForecastError):
    """Raised when two artifacts that must match do not"""

class DivergenceError(ForecastError, ArithmeticError):
    """Raised when a gradient holds non-finite entries"""

    def __init__(self, message: str, tensor: str = ""):
        super().__init__(message)
        self.tensor = tensor

class DataFormatError(ForecastError):
    """Raised for CSV schema or row problems"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column:
            location.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.line = line
        self.column = column

class DataError(ForecastError):
    """Raised when there is no usable data"""

class ConfigError(ForecastError):
    """Raised for invalid experiment configuration"""

# =============================================================================
# ENUMS
# =============================================================================

class ModelKind(Enum):
    RNN = "RNN"
    LSTM = "LSTM"
    BILSTM = "BiLSTM"

    @classmethod
    def parse(cls, label: str) -> 'ModelKind':
        for kind in cls:
            if kind.value.lower() == label.strip().lower():
                return kind
        raise ConfigError(f"Unknown model kind: {label}")

class Mode(Enum):
    UNIVARIATE = "univariate"
    MULTIVARIATE = "multivariate"

    @classmethod
    def parse(cls, label: str) -> 'Mode':
        aliases = {'uni': cls.UNIVARIATE, 'univariate': cls.UNIVARIATE,
                   'multi': cls.MULTIVARIATE, 'multivariate': cls.MULTIVARIATE}
        try:
            return aliases[label.strip().lower()]
        except KeyError:
            raise ConfigError(f"Unknown mode: {label}") from None

class DataSource(Enum):
    GISAID = "GISAID"
    TESSY = "TESSy"

    @classmethod
    def parse(cls, label: str) -> 'DataSource':
        for source in cls:
            if source.value.lower() == label.strip().lower():
                return source
        raise ValueError(f"Unknown data source: {label}")

class Stage(Enum):
    HIDDEN = "hidden"
    LAYER = "layer"

# Canonical kind order for tables and tie-breaks
KIND_ORDER = (ModelKind.LSTM, ModelKind.BILSTM, ModelKind.RNN)

# Pango lineage -> (WHO label, reported origin); metadata only
VARIANT_INFO: Dict[str, Tuple[str, str]] = {
    'B.1.1.7': ('Alpha', 'United Kingdom'),
    'B.1.351': ('Beta', 'South Africa'),
    'B.1.427/B.1.429': ('Epsilon', 'South Africa'),
    'B.1.525': ('Eta', 'United Kingdom and Nigeria'),
    'B.1.616': ('-', 'France'),
    'B.1.617.1': ('Kappa', 'India'),
    'B.1.617.2': ('Delta', 'India'),
    'B.1.620': ('-', 'Cameroon, Africa'),
    'B.1.621': ('Mu', 'South America'),
    'BA.1': ('Omicron', 'South Africa'),
    'BA.2': ('Omicron', 'South Africa'),
    'BA.2.75': ('Omicron', 'India'),
    'BA.4': ('Omicron', 'South Africa'),
    'BA.5': ('Omicron', 'South Africa'),
    'BQ.1': ('Omicron', 'Nigeria'),
    'C.37': ('Lambda', 'Peru, Chile, USA and Germany'),
    'Other': ('-', '-'),
    'P.1': ('Gamma', 'Brazil'),
    'P.3': ('-', 'Philippines'),
    'UNK': ('Unknown', 'Unknown'),
    'XBB': ('Omicron', 'South Asia'),
}

# =============================================================================
# VALUE OBJECTS
# =============================================================================

YEAR_WEEK_PATTERN = re.compile(r'^\d{4}-\d{2}$')

@dataclass(frozen=True)
class CaseRecord:
    """One weekly detection count for a (country, variant, source)"""
    country: str
    year_week: str
    source: DataSource
    variant: str
    detections: int

    def __post_init__(self):
        if not self.country:
            raise ValueError("Country must be specified")
        if not YEAR_WEEK_PATTERN.match(self.year_week):
            raise ValueError(f"Invalid year_week: {self.year_week}")
        week = int(self.year_week[5:])
        if not 1 <= week <= 53:
            raise ValueError(f"Week out of range: {self.year_week}")
        if not self.variant:
            raise ValueError("Variant must be specified")
        if self.detections < 0:
            raise ValueError(f"Detections cannot be negative: {self.detections}")

@dataclass(frozen=True)
class LossPair:
    """MSE and RMSE of one evaluation"""
    mse: float
    rmse: float

    def __post_init__(self):
        if self.mse < 0 or self.rmse < 0:
            raise ValueError("Losses cannot be negative")

    @classmethod
    def diverged(cls) -> 'LossPair':
        return cls(float('inf'), float('inf'))

# =============================================================================
# DOMAIN ENTITIES
# =============================================================================

@dataclass
class VariantPanel:
    """Dense week x country detection matrix for one variant"""
    variant: str
    countries: List[str]
    weeks: List[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.weeks), len(self.countries)):
            raise ShapeError(
                f"Panel values shape {self.values.shape} does not match "
                f"{len(self.weeks)} weeks x {len(self.countries)} countries")

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def column(self, country: str) -> np.ndarray:
        """Single-country series as a week x 1 matrix"""
        try:
            j = self.countries.index(country)
        except ValueError:
            raise ConsistencyError(f"Country {country} not in panel {self.variant}") from None
        return self.values[:, j:j + 1]

@dataclass
class ExperimentConfig:
    """Protocol settings for one sweep"""
    mode: Mode = Mode.UNIVARIATE
    kinds: List[ModelKind] = field(default_factory=lambda: list(KIND_ORDER))
    hidden_sizes: List[int] = field(default_factory=lambda: [25, 50, 75, 100])
    layer_sizes: List[int] = field(default_factory=lambda: [2, 3, 4, 5])
    epochs: int = 1000
    window: int = 10
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    train_weeks: Optional[int] = None
    test_weeks: int = 26
    seed: int = 42
    source: DataSource = DataSource.GISAID
    jobs: int = 1

    def __post_init__(self):
        if not self.kinds:
            raise ConfigError("At least one model kind is required")
        if len(set(self.kinds)) != len(self.kinds):
            raise ConfigError("Model kinds must be distinct")
        for name in ('hidden_sizes', 'layer_sizes'):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"{name} must not be empty")
            if any(v < 1 for v in values):
                raise ConfigError(f"{name} entries must be >= 1")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        if self.epochs < 0:
            raise ConfigError("Epochs cannot be negative")
        if self.window < 1:
            raise ConfigError("Window must be >= 1")
        if self.test_weeks < 1:
            raise ConfigError("test_weeks must be >= 1")
        if self.train_weeks is not None and self.train_weeks < 1:
            raise ConfigError("train_weeks must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("Learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam decay rates must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("Epsilon must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("Seed must be a 64-bit unsigned integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['mode'] = self.mode.value
        data['kinds'] = [k.value for k in self.kinds]
        data['source'] = self.source.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Build a config from plain values, as found in a JSON config file"""
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        values = dict(data)
        try:
            if 'mode' in values:
                values['mode'] = Mode.parse(str(values['mode']))
            if 'kinds' in values:
                values['kinds'] = [ModelKind.parse(str(k)) for k in values['kinds']]
            if 'source' in values:
                values['source'] = DataSource.parse(str(values['source']))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(**values)

    @classmethod
    def load(cls, path: Optional[str], overrides: Optional[Dict[str, Any]] = None,
             defaults: Optional[Dict[str, Any]] = None) -> 'ExperimentConfig':
        """Layer defaults < JSON config file < overrides; None overrides are ignored"""
        data: Dict[str, Any] = dict(defaults or {})
        if path:
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    loaded = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Cannot read config {path}: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigError(f"Config {path} must hold a JSON object")
            data.update(loaded)
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

@dataclass
class CellResult:
    """Outcome of training and evaluating one experiment cell"""
    variant: str
    kind: ModelKind
    mode: Mode
    hidden: int
    layers: int
    seed: int
    loss: LossPair
    train_loss_curve: List[float] = field(default_factory=list)
    diverged: bool = False
    param_count: int = 0
    input_dim: int = 0
    output_dim: int = 0
    model_count: int = 0
    countries: List[str] = field(default_factory=list)
    test_weeks: List[str] = field(default_factory=list)
    actual: Optional[np.ndarray] = None
    predicted: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.diverged and not np.isfinite(self.loss.mse):
            raise ValueError("Loss must be finite unless the cell diverged")

    @property
    def key(self) -> Tuple[str, str, int, int]:
        return (self.variant, self.kind.value, self.hidden, self.layers)

@dataclass
class StageResult:
    """One sweep stage: every cell plus its frequency tallies"""
    stage: Stage
    candidates: List[int]
    cells: List[CellResult]
    tallies: Dict[ModelKind, Dict[int, int]]
    selected_per_kind: Dict[ModelKind, int]
    selected: int
    headline_kind: ModelKind
    diverged: List[CellResult] = field(default_factory=list)

    def __post_init__(self):
        if self.selected not in self.candidates:
            raise ValueError(f"Selected value {self.selected} is not a candidate")

@dataclass
class ExperimentReport:
    """Both stages of one mode's sweep"""
    mode: Mode
    config: ExperimentConfig
    hidden_stage: StageResult
    layer_stage: StageResult
    variants: List[str]

    @property
    def selected_hidden(self) -> int:
        return self.hidden_stage.selected

    @property
    def selected_layers(self) -> int:
        return self.layer_stage.selected

    @property
    def headline_kind(self) -> ModelKind:
        return self.layer_stage.headline_kind

@dataclass
class ComparisonRow:
    variant: str
    univariate_mse: float
    multivariate_mse: float
    winner: str  # 'univariate', 'multivariate' or 'tie'

@dataclass
class ModeComparison:
    """Per-variant univariate vs multivariate minimum MSE"""
    kind: ModelKind
    rows: List[ComparisonRow]

    @property
    def wins(self) -> Dict[str, int]:
        counts = {'univariate': 0, 'multivariate': 0, 'tie': 0}
        for row in self.rows:
            counts[row.winner] += 1
        return counts
