"""
Experiment Harness - two-stage hidden size / layer size sweeps
Trains every (variant x kind x configuration) cell, in parallel when
asked, and selects configurations by minimum-loss frequency
"""

import concurrent.futures
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from domain_models import (
    ExperimentConfig, ExperimentReport, CellResult, StageResult, Stage, ModelKind, Mode,
    LossPair, VariantPanel, ModeComparison, ComparisonRow, KIND_ORDER,
    ParameterError, ConsistencyError, DivergenceError, ForecastError
)
from metrics import loss_pair
from ndcore import Rng, derive_seed
from nn import StackedNet, init_net, forward_sequence, backward_sequence
from optim import AdamState, adam_step
from prep import ScalerParams, WindowSet, fit_scaler, transform, inverse_transform, split_train_test, make_windows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellSpec:
    """One unit of sweep work"""
    stage: Stage
    variant: str
    kind: ModelKind
    hidden: int
    layers: int
    seed: int


@dataclass
class TrainedModel:
    """A fitted net with its scaler and test-window evaluation"""
    net: StackedNet
    scaler: ScalerParams
    train_loss_curve: List[float]
    diverged: bool
    actual: np.ndarray
    predicted: np.ndarray


def cell_seed(master: int, mode: Mode, variant: str, kind: ModelKind, hidden: int, layers: int) -> int:
    return derive_seed(master, mode.value, variant, kind.value, hidden, layers)


def resolve_split(config: ExperimentConfig, total_weeks: int) -> Tuple[int, int]:
    """Train/test week counts for a panel; train defaults to the weeks before the test block"""
    test_weeks = config.test_weeks
    train_weeks = config.train_weeks if config.train_weeks is not None else total_weeks - test_weeks
    needed = config.window + test_weeks + 1
    if total_weeks < needed:
        raise ParameterError(f"Panel has {total_weeks} weeks; window {config.window} and "
                             f"{test_weeks} test weeks need at least {needed}")
    if train_weeks + test_weeks != total_weeks:
        raise ParameterError(f"train_weeks ({train_weeks}) + test_weeks ({test_weeks}) "
                             f"!= total weeks ({total_weeks})")
    if train_weeks <= config.window:
        raise ParameterError(f"train_weeks ({train_weeks}) must exceed the window ({config.window})")
    return train_weeks, test_weeks

# =============================================================================
# TRAINING
# =============================================================================

def fit_model(net: StackedNet, windows: WindowSet, config: ExperimentConfig) -> Tuple[List[float], bool]:
    """
    Full-batch Adam on training MSE in scaled space.

    Returns the per-epoch loss curve (measured before each update) and
    whether training diverged.
    """
    state = AdamState.for_net(net, alpha=config.learning_rate, beta1=config.beta1,
                              beta2=config.beta2, epsilon=config.epsilon)
    curve: List[float] = []
    cells = windows.targets.size
    with np.errstate(over='ignore', invalid='ignore'):
        for epoch in range(config.epochs):
            prediction, tape = forward_sequence(net, windows.inputs)
            residual = prediction - windows.targets
            loss = float(np.mean(residual * residual))
            if not np.isfinite(loss):
                logger.warning(f"Training loss became non-finite at epoch {epoch}")
                return curve, True
            curve.append(loss)
            grads = backward_sequence(net, tape, 2.0 * residual / cells)
            try:
                adam_step(state, net, grads)
            except DivergenceError as e:
                logger.warning(f"Diverged at epoch {epoch}: {e}")
                return curve, True
    return curve, False


def train_model(config: ExperimentConfig, series: np.ndarray, kind: ModelKind, hidden: int,
                layers: int, rng: Rng) -> TrainedModel:
    """Fit one net on a week x feature series and score it on the test weeks"""
    train_weeks, test_weeks = resolve_split(config, series.shape[0])
    train_rows, _ = split_train_test(series, train_weeks, test_weeks)
    scaler = fit_scaler(train_rows)
    windows = make_windows(transform(scaler, series), config.window)
    train_windows = windows.subset(windows.origins < train_weeks)
    test_windows = windows.subset(windows.origins >= train_weeks)

    features = series.shape[1]
    net = init_net(kind, features, features, hidden, layers, rng)
    curve, diverged = fit_model(net, train_windows, config)

    with np.errstate(over='ignore', invalid='ignore'):
        scaled_prediction, _ = forward_sequence(net, test_windows.inputs)
        predicted = inverse_transform(scaler, scaled_prediction)
    if not np.all(np.isfinite(predicted)):
        diverged = True
    return TrainedModel(net=net, scaler=scaler, train_loss_curve=curve, diverged=diverged,
                        actual=series[test_windows.origins], predicted=predicted)


def train_cell(config: ExperimentConfig, panel: VariantPanel, kind: ModelKind, hidden: int,
               layers: int, rng: Rng) -> CellResult:
    """
    Train and evaluate one experiment cell.

    Multivariate mode fits one model over all countries; univariate mode
    fits one model per country and pools the residuals of all of them.
    """
    train_weeks, _ = resolve_split(config, len(panel.weeks))
    if config.mode == Mode.MULTIVARIATE:
        series_list = [panel.values]
    else:
        series_list = [panel.column(country) for country in panel.countries]

    models = [train_model(config, series, kind, hidden, layers, rng) for series in series_list]
    diverged = any(m.diverged for m in models)
    actual = np.hstack([m.actual for m in models])
    predicted = np.hstack([m.predicted for m in models])

    shortest = min(len(m.train_loss_curve) for m in models)
    curve = np.mean([m.train_loss_curve[:shortest] for m in models], axis=0) if shortest else []

    loss = LossPair.diverged()
    if not diverged:
        with np.errstate(over='ignore'):
            loss = loss_pair(actual, predicted)
        if not np.isfinite(loss.mse):
            diverged, loss = True, LossPair.diverged()
    net = models[0].net
    if diverged:
        logger.warning(f"Cell {panel.variant}/{kind.value}/h{hidden}/l{layers} diverged")
    return CellResult(
        variant=panel.variant, kind=kind, mode=config.mode, hidden=hidden, layers=layers,
        seed=rng.seed, loss=loss, train_loss_curve=[float(v) for v in curve], diverged=diverged,
        param_count=net.param_count(), input_dim=net.input_dim, output_dim=net.output_dim,
        model_count=len(models), countries=list(panel.countries),
        test_weeks=list(panel.weeks[train_weeks:]), actual=actual, predicted=predicted,
    )


def _execute_cell(config: ExperimentConfig, panel: VariantPanel, spec: CellSpec) -> CellResult:
    return train_cell(config, panel, spec.kind, spec.hidden, spec.layers, Rng(spec.seed))


def _cell_order(cell: CellResult) -> Tuple:
    return (cell.variant, KIND_ORDER.index(cell.kind), cell.hidden, cell.layers)


def run_cells(config: ExperimentConfig, panels: Dict[str, VariantPanel],
              specs: List[CellSpec], description: str = "cells") -> List[CellResult]:
    """Train every cell; the result order is canonical whatever the completion order"""
    results = []
    with tqdm(total=len(specs), desc=description, unit='cell', disable=None) as progress:
        if config.jobs == 1:
            for spec in specs:
                results.append(_execute_cell(config, panels[spec.variant], spec))
                progress.update(1)
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as executor:
                future_to_spec = {
                    executor.submit(_execute_cell, config, panels[spec.variant], spec): spec
                    for spec in specs
                }
                try:
                    for future in concurrent.futures.as_completed(future_to_spec):
                        spec = future_to_spec[future]
                        try:
                            results.append(future.result())
                        except ForecastError:
                            raise
                        except Exception as e:
                            raise ForecastError(f"Cell {spec.variant}/{spec.kind.value}/"
                                                f"h{spec.hidden}/l{spec.layers} failed: {e}") from e
                        progress.update(1)
                except BaseException:
                    cancelled = sum(f.cancel() for f in future_to_spec)
                    logger.error(f"Sweep aborted; cancelled {cancelled} pending cell(s)")
                    raise
    return sorted(results, key=_cell_order)

# =============================================================================
# SELECTION
# =============================================================================

def _stage_value(cell: CellResult, stage: Stage) -> int:
    return cell.hidden if stage == Stage.HIDDEN else cell.layers


def tally_minima(cells: List[CellResult], stage: Stage, candidates: List[int],
                 kinds: List[ModelKind]) -> Dict[ModelKind, Dict[int, int]]:
    """
    Count, per kind, how many variants reach their minimum MSE at each candidate.

    Diverged cells are ignored; a shared minimum credits the smaller candidate.
    """
    tallies = {kind: {c: 0 for c in candidates} for kind in kinds}
    groups: Dict[Tuple[ModelKind, str], List[CellResult]] = defaultdict(list)
    for cell in cells:
        if not cell.diverged:
            groups[(cell.kind, cell.variant)].append(cell)
    for (kind, _), group in groups.items():
        best = min(group, key=lambda c: (c.loss.mse, _stage_value(c, stage)))
        tallies[kind][_stage_value(best, stage)] += 1
    return tallies


def select_by_frequency(tally: Dict[int, int]) -> int:
    """Candidate with the largest tally; ties go to the smaller candidate"""
    if not tally:
        raise ParameterError("Cannot select from an empty tally")
    return max(sorted(tally), key=lambda c: tally[c])


def combined_tally(tallies: Dict[ModelKind, Dict[int, int]]) -> Dict[int, int]:
    combined: Dict[int, int] = defaultdict(int)
    for tally in tallies.values():
        for candidate, count in tally.items():
            combined[candidate] += count
    return dict(combined)


def variant_minima(cells: List[CellResult], metric: str = 'mse') -> Dict[str, Dict[ModelKind, float]]:
    """Minimum loss per variant per kind over the stage's candidates"""
    minima: Dict[str, Dict[ModelKind, float]] = defaultdict(dict)
    for cell in cells:
        value = float('inf') if cell.diverged else getattr(cell.loss, metric)
        current = minima[cell.variant].get(cell.kind, float('inf'))
        minima[cell.variant][cell.kind] = min(current, value)
    return dict(minima)


def _kind_rank(kind: ModelKind) -> int:
    return KIND_ORDER.index(kind)


def winning_kind(per_kind: Dict[ModelKind, float]) -> Optional[ModelKind]:
    finite = {k: v for k, v in per_kind.items() if np.isfinite(v)}
    if not finite:
        return None
    return min(finite, key=lambda k: (finite[k], _kind_rank(k)))


def select_headline_kind(cells: List[CellResult], kinds: List[ModelKind]) -> ModelKind:
    """
    Kind winning the most per-variant minima.

    Ties are settled by pairwise per-variant wins among the tied kinds,
    then by the order LSTM, BiLSTM, RNN.
    """
    minima = variant_minima(cells)
    wins = {kind: 0 for kind in kinds}
    for per_kind in minima.values():
        winner = winning_kind(per_kind)
        if winner is not None:
            wins[winner] += 1
    best = max(wins.values())
    tied = [k for k in kinds if wins[k] == best]
    if len(tied) > 1:
        pairwise = {k: 0 for k in tied}
        for per_kind in minima.values():
            for a in tied:
                for b in tied:
                    if a != b and per_kind.get(a, float('inf')) < per_kind.get(b, float('inf')):
                        pairwise[a] += 1
        top = max(pairwise.values())
        tied = [k for k in tied if pairwise[k] == top]
    return min(tied, key=_kind_rank)


def summarize_stage(stage: Stage, candidates: List[int], cells: List[CellResult],
                    kinds: List[ModelKind]) -> StageResult:
    tallies = tally_minima(cells, stage, candidates, kinds)
    selected_per_kind = {kind: select_by_frequency(tally) for kind, tally in tallies.items()}
    selected = select_by_frequency(combined_tally(tallies))
    diverged = [c for c in cells if c.diverged]
    if diverged:
        logger.warning(f"{len(diverged)} {stage.value} stage cell(s) diverged and were excluded from tallies")
    headline = select_headline_kind(cells, kinds)
    logger.info(f"{stage.value} stage selected {selected} (headline kind {headline.value})")
    return StageResult(stage=stage, candidates=list(candidates), cells=cells, tallies=tallies,
                       selected_per_kind=selected_per_kind, selected=selected,
                       headline_kind=headline, diverged=diverged)

# =============================================================================
# SWEEPS
# =============================================================================

def _specs(config: ExperimentConfig, panels: Dict[str, VariantPanel], stage: Stage,
           hidden_values: List[int], layer_values: List[int]) -> List[CellSpec]:
    return [
        CellSpec(stage, variant, kind, hidden, layers,
                 cell_seed(config.seed, config.mode, variant, kind, hidden, layers))
        for variant in sorted(panels)
        for kind in config.kinds
        for hidden in hidden_values
        for layers in layer_values
    ]


def run_hidden_sweep(config: ExperimentConfig, panels: Dict[str, VariantPanel]) -> StageResult:
    """Every (variant x kind x hidden size) cell with a single layer"""
    specs = _specs(config, panels, Stage.HIDDEN, config.hidden_sizes, [1])
    logger.info(f"Hidden size stage: {len(specs)} cells")
    cells = run_cells(config, panels, specs, description="hidden sweep")
    return summarize_stage(Stage.HIDDEN, config.hidden_sizes, cells, config.kinds)


def run_layer_sweep(config: ExperimentConfig, panels: Dict[str, VariantPanel], hidden: int) -> StageResult:
    """Every (variant x kind x layer size) cell at a fixed hidden size"""
    if hidden < 1:
        raise ParameterError(f"Hidden size must be >= 1, got {hidden}")
    specs = _specs(config, panels, Stage.LAYER, [hidden], config.layer_sizes)
    logger.info(f"Layer size stage at hidden {hidden}: {len(specs)} cells")
    cells = run_cells(config, panels, specs, description="layer sweep")
    return summarize_stage(Stage.LAYER, config.layer_sizes, cells, config.kinds)


def run_experiment(config: ExperimentConfig, panels: Dict[str, VariantPanel]) -> ExperimentReport:
    """Hidden size stage, then layer size stage at the selected hidden size"""
    if not panels:
        raise ParameterError("No panels to sweep")
    hidden_stage = run_hidden_sweep(config, panels)
    layer_stage = run_layer_sweep(config, panels, hidden_stage.selected)
    return ExperimentReport(mode=config.mode, config=config, hidden_stage=hidden_stage,
                            layer_stage=layer_stage, variants=sorted(panels))


def compare_modes(univariate: ExperimentReport, multivariate: ExperimentReport,
                  kind: ModelKind = ModelKind.LSTM) -> ModeComparison:
    """Per-variant minimum layer-stage MSE of each mode for one kind"""
    if univariate.mode != Mode.UNIVARIATE or multivariate.mode != Mode.MULTIVARIATE:
        raise ConsistencyError("compare_modes needs a univariate and a multivariate report")
    if sorted(univariate.variants) != sorted(multivariate.variants):
        missing = set(univariate.variants) ^ set(multivariate.variants)
        raise ConsistencyError(f"Reports cover different variants: {', '.join(sorted(missing))}")
    uni = variant_minima(univariate.layer_stage.cells)
    multi = variant_minima(multivariate.layer_stage.cells)

    rows = []
    for variant in sorted(univariate.variants):
        u = uni.get(variant, {}).get(kind, float('inf'))
        m = multi.get(variant, {}).get(kind, float('inf'))
        if u == m:
            winner = 'tie'
        else:
            winner = 'univariate' if u < m else 'multivariate'
        rows.append(ComparisonRow(variant=variant, univariate_mse=u, multivariate_mse=m, winner=winner))
    return ModeComparison(kind=kind, rows=rows)

# =============================================================================
# CHECKS AND FORECASTS
# =============================================================================

def check_hidden_25(stage: StageResult) -> str:
    """pass / flag (shared maximum) / fail / n/a for hidden 25 holding the largest tally"""
    tally = combined_tally(stage.tallies)
    if 25 not in tally:
        return 'n/a'
    top = max(tally.values())
    if tally[25] < top:
        return 'fail'
    return 'pass' if sum(1 for v in tally.values() if v == top) == 1 else 'flag'


def check_multivariate_majority(comparison: ModeComparison) -> str:
    wins = comparison.wins
    if wins['multivariate'] > wins['univariate']:
        return 'pass'
    return 'flag' if wins['multivariate'] == wins['univariate'] else 'fail'


def predict_ahead(net: StackedNet, scaler: ScalerParams, history: np.ndarray, window: int,
                  weeks_ahead: int = 1) -> np.ndarray:
    """
    Forecast weeks_ahead steps from the last window of history.

    Steps after the first feed earlier predictions back as inputs.
    Returns (weeks_ahead, features) in original units.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise ParameterError(f"History must be week x feature, got shape {history.shape}")
    if net.input_dim != history.shape[1] or net.output_dim != history.shape[1]:
        raise ConsistencyError(f"Net maps {net.input_dim} -> {net.output_dim} features, "
                               f"history has {history.shape[1]}")
    if weeks_ahead < 1:
        raise ParameterError(f"weeks_ahead must be >= 1, got {weeks_ahead}")
    if history.shape[0] < window:
        raise ParameterError(f"History of {history.shape[0]} weeks is shorter than window {window}")

    buffer = transform(scaler, history)[-window:]
    steps = []
    for _ in range(weeks_ahead):
        prediction, _ = forward_sequence(net, buffer)
        steps.append(prediction)
        buffer = np.vstack([buffer[1:], prediction[None]])
    return inverse_transform(scaler, np.array(steps))
