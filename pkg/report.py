"""
Report Writer - tables, prediction traces and run manifests for sweeps
Emits plot-ready CSV files mirroring the per-stage loss tables
"""

import hashlib
import json
import logging
import glob
import os
import shutil
import tempfile
from typing import Dict, List, Optional

import pandas as pd

from domain_models import (
    ExperimentConfig, ExperimentReport, CellResult, StageResult, Stage, ModelKind, Mode,
    LossPair, ModeComparison, KIND_ORDER, ConfigError, ConsistencyError
)
from experiments import (
    summarize_stage, variant_minima, winning_kind, combined_tally, check_hidden_25
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = "1"
RUN_TABLE_PATTERNS = ("cells.csv", "*_min_mse.csv", "*_min_rmse.csv", "*_tally.csv", "*_grid_*.csv")


def atomic_write_text(path: str, text: str) -> str:
    """Write to a temporary sibling, then rename into place"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def write_frame(df: pd.DataFrame, path: str) -> str:
    return atomic_write_text(path, df.to_csv(index=False, lineterminator='\n'))


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()

# =============================================================================
# TABLES
# =============================================================================

def _kinds_in(cells: List[CellResult]) -> List[ModelKind]:
    present = {c.kind for c in cells}
    return [k for k in KIND_ORDER if k in present]


def cells_frame(report: ExperimentReport) -> pd.DataFrame:
    rows = []
    for stage in (report.hidden_stage, report.layer_stage):
        for cell in stage.cells:
            rows.append({
                'stage': stage.stage.value,
                'mode': cell.mode.value,
                'variant': cell.variant,
                'kind': cell.kind.value,
                'hidden': cell.hidden,
                'layers': cell.layers,
                'seed': cell.seed,
                'mse': cell.loss.mse,
                'rmse': cell.loss.rmse,
                'diverged': cell.diverged,
                'param_count': cell.param_count,
                'input_dim': cell.input_dim,
                'output_dim': cell.output_dim,
                'model_count': cell.model_count,
            })
    return pd.DataFrame(rows)


def minimum_frame(stage: StageResult, metric: str = 'mse') -> pd.DataFrame:
    """Minimum loss per variant per kind, plus the winning kind"""
    minima = variant_minima(stage.cells, metric)
    kinds = _kinds_in(stage.cells)
    rows = []
    for variant in sorted(minima):
        per_kind = minima[variant]
        row = {'Variant': variant}
        for kind in kinds:
            row[f"{metric.upper()} {kind.value}"] = per_kind.get(kind, float('inf'))
        winner = winning_kind(per_kind)
        row['Best'] = winner.value if winner else 'diverged'
        rows.append(row)
    return pd.DataFrame(rows)


def tally_frame(stage: StageResult) -> pd.DataFrame:
    column = stage.stage.value
    rows = []
    for kind in KIND_ORDER:
        if kind not in stage.tallies:
            continue
        for candidate, count in stage.tallies[kind].items():
            rows.append({'kind': kind.value, column: candidate, 'minima': count,
                         'selected': stage.selected_per_kind[kind] == candidate})
    for candidate, count in sorted(combined_tally(stage.tallies).items()):
        rows.append({'kind': 'all', column: candidate, 'minima': count,
                     'selected': stage.selected == candidate})
    return pd.DataFrame(rows)


def grid_frame(stage: StageResult, kind: ModelKind, metric: str = 'mse') -> pd.DataFrame:
    """Variant x candidate loss grid for one kind (the data behind a loss area chart)"""
    column = stage.stage.value
    rows = [{'variant': c.variant, column: c.hidden if stage.stage == Stage.HIDDEN else c.layers,
             'loss': getattr(c.loss, metric)}
            for c in stage.cells if c.kind == kind]
    grid = pd.DataFrame(rows).pivot(index='variant', columns=column, values='loss')
    grid.columns = [f"{column}_{c}" for c in grid.columns]
    return grid.reset_index()


def comparison_frame(comparison: ModeComparison) -> pd.DataFrame:
    return pd.DataFrame([{
        'Variant': row.variant,
        'MSE Univariate': row.univariate_mse,
        'MSE Multivariate': row.multivariate_mse,
        'Winner': row.winner,
    } for row in comparison.rows])


class ReportWriter:
    """
    Writes one sweep's result files into a run directory.

    The manifest is written last and marks the run complete; an existing
    manifest is only replaced when force is set, and a forced write
    removes it before any new file is written.
    """

    def __init__(self, out_dir: str, force: bool = False):
        self.out_dir = out_dir
        self.force = force
        self.written: List[str] = []

    def _path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def ensure_writable(self) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        if os.path.exists(self._path(MANIFEST_NAME)) and not self.force:
            raise ConfigError(f"{self.out_dir} already holds a completed run; use --force to overwrite")

    def clear_previous_run(self) -> None:
        """Drop an earlier run's manifest first, then its tables and traces"""
        manifest = self._path(MANIFEST_NAME)
        if os.path.exists(manifest):
            os.remove(manifest)
            logger.info(f"Removed the previous manifest in {self.out_dir}")
        for pattern in RUN_TABLE_PATTERNS:
            for path in glob.glob(self._path(pattern)):
                os.remove(path)
        shutil.rmtree(self._path("traces"), ignore_errors=True)

    def _frame(self, df: pd.DataFrame, *parts: str) -> None:
        self.written.append(write_frame(df, self._path(*parts)))

    def write_stage(self, stage: StageResult) -> None:
        name = stage.stage.value
        self._frame(minimum_frame(stage, 'mse'), f"{name}_min_mse.csv")
        self._frame(minimum_frame(stage, 'rmse'), f"{name}_min_rmse.csv")
        self._frame(tally_frame(stage), f"{name}_tally.csv")
        for kind in _kinds_in(stage.cells):
            for metric in ('mse', 'rmse'):
                self._frame(grid_frame(stage, kind, metric),
                            f"{name}_grid_{kind.value.lower()}_{metric}.csv")

    def write_traces(self, report: ExperimentReport) -> None:
        """Week, actual and predicted per (kind, variant, country) at the selected configuration"""
        for cell in report.layer_stage.cells:
            if cell.layers != report.selected_layers or cell.actual is None:
                continue
            for j, country in enumerate(cell.countries):
                trace = pd.DataFrame({
                    'week': cell.test_weeks,
                    'actual': cell.actual[:, j],
                    'predicted': cell.predicted[:, j],
                })
                self._frame(trace, "traces", cell.kind.value, _safe_name(cell.variant), f"{_safe_name(country)}.csv")

    def manifest_lines(self, report: ExperimentReport, data_path: Optional[str],
                       wall_time: Optional[float]) -> List[str]:
        lines = [f"format_version={MANIFEST_VERSION}", f"mode={report.mode.value}"]
        for key, value in report.config.to_dict().items():
            lines.append(f"config.{key}={json.dumps(value)}")
        lines.append(f"master_seed={report.config.seed}")
        if data_path:
            lines.append(f"data_path={data_path}")
            lines.append(f"data_sha256={file_sha256(data_path)}")
        lines.append(f"variants={len(report.variants)}")
        lines.append(f"cells={len(report.hidden_stage.cells) + len(report.layer_stage.cells)}")
        lines.append(f"diverged_cells={len(report.hidden_stage.diverged) + len(report.layer_stage.diverged)}")
        for stage in (report.hidden_stage, report.layer_stage):
            for kind, value in stage.selected_per_kind.items():
                lines.append(f"selected.{stage.stage.value}.{kind.value}={value}")
        lines.append(f"selected_kind={report.headline_kind.value}")
        lines.append(f"selected_hidden={report.selected_hidden}")
        lines.append(f"selected_layers={report.selected_layers}")
        lines.append(f"check.hidden_25_most_minima={check_hidden_25(report.hidden_stage)}")
        if wall_time is not None:
            lines.append(f"wall_time_seconds={wall_time:.3f}")
        return lines

    def write(self, report: ExperimentReport, data_path: Optional[str] = None,
              wall_time: Optional[float] = None) -> List[str]:
        self.ensure_writable()
        self.clear_previous_run()
        self._frame(cells_frame(report), "cells.csv")
        self.write_stage(report.hidden_stage)
        self.write_stage(report.layer_stage)
        self.write_traces(report)
        manifest = "\n".join(self.manifest_lines(report, data_path, wall_time)) + "\n"
        self.written.append(atomic_write_text(self._path(MANIFEST_NAME), manifest))
        logger.info(f"Wrote {len(self.written)} files to {self.out_dir}")
        return self.written

    def write_comparison(self, comparison: ModeComparison, check: str) -> List[str]:
        self._frame(comparison_frame(comparison), "comparison.csv")
        wins = comparison.wins
        text = (f"kind={comparison.kind.value}\n"
                f"univariate_wins={wins['univariate']}\n"
                f"multivariate_wins={wins['multivariate']}\n"
                f"ties={wins['tie']}\n"
                f"check.multivariate_majority={check}\n")
        self.written.append(atomic_write_text(self._path("comparison.txt"), text))
        return self.written


def _safe_name(label: str) -> str:
    return label.replace('/', '_').replace(os.sep, '_')

# =============================================================================
# LOADING
# =============================================================================

def read_manifest(run_dir: str) -> Dict[str, str]:
    path = os.path.join(run_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ConsistencyError(f"{run_dir} has no {MANIFEST_NAME}; the run is missing or incomplete")
    entries = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.rstrip('\n')
            if line:
                key, _, value = line.partition('=')
                entries[key] = value
    return entries


def load_report(run_dir: str) -> ExperimentReport:
    """Rebuild an ExperimentReport (without traces or curves) from a run directory"""
    manifest = read_manifest(run_dir)
    config = ExperimentConfig.from_dict({
        key[len('config.'):]: json.loads(value)
        for key, value in manifest.items() if key.startswith('config.')
    })
    frame = pd.read_csv(os.path.join(run_dir, "cells.csv"))
    stages = {}
    for stage, candidates in ((Stage.HIDDEN, config.hidden_sizes), (Stage.LAYER, config.layer_sizes)):
        rows = frame[frame['stage'] == stage.value]
        cells = [CellResult(
            variant=str(r.variant), kind=ModelKind.parse(r.kind), mode=Mode.parse(r.mode),
            hidden=int(r.hidden), layers=int(r.layers), seed=int(r.seed),
            loss=LossPair(float(r.mse), float(r.rmse)), diverged=bool(r.diverged),
            param_count=int(r.param_count), input_dim=int(r.input_dim),
            output_dim=int(r.output_dim), model_count=int(r.model_count),
        ) for r in rows.itertuples(index=False)]
        stages[stage] = summarize_stage(stage, candidates, cells, config.kinds)
    variants = sorted(frame['variant'].astype(str).unique())
    return ExperimentReport(mode=config.mode, config=config, hidden_stage=stages[Stage.HIDDEN],
                            layer_stage=stages[Stage.LAYER], variants=variants)

# =============================================================================
# CONSOLE
# =============================================================================

def print_summary(report: ExperimentReport) -> None:
    """Print the sweep outcome"""
    print("\n" + "=" * 80)
    print(f"{report.mode.value.upper()} SWEEP SUMMARY")
    print("=" * 80)
    print(f"Variants: {len(report.variants)}")
    for stage in (report.hidden_stage, report.layer_stage):
        label = "Hidden size" if stage.stage == Stage.HIDDEN else "Layer size"
        tally = combined_tally(stage.tallies)
        counts = ", ".join(f"{c}: {tally[c]}" for c in sorted(tally))
        print(f"{label} minima frequency: {counts}")
        print(f"  Selected {label.lower()}: {stage.selected}")
        if stage.diverged:
            print(f"  Diverged cells: {len(stage.diverged)}")
    print(f"\nSelected configuration: {report.headline_kind.value}, "
          f"hidden {report.selected_hidden}, layers {report.selected_layers}")
    print("=" * 80)


def print_comparison(comparison: ModeComparison, check: str) -> None:
    wins = comparison.wins
    print("\n" + "=" * 80)
    print(f"UNIVARIATE VS MULTIVARIATE ({comparison.kind.value})")
    print("=" * 80)
    for row in comparison.rows:
        print(f"  {row.variant:<18} {row.univariate_mse:>16.6g} {row.multivariate_mse:>16.6g}  {row.winner}")
    print(f"\nUnivariate wins: {wins['univariate']}")
    print(f"Multivariate wins: {wins['multivariate']}")
    print(f"Ties: {wins['tie']}")
    print(f"Multivariate majority check: {check}")
    print("=" * 80)
