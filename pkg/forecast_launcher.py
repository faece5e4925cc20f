"""
Forecast Launcher - Main entry point for variant case forecasting
Ingestion checks, single-model training, two-stage sweeps, mode comparison and forecasts
"""

import argparse
import logging
import os
import sys
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from domain_models import (
    ExperimentConfig, ModelKind, Mode, DataSource, VariantPanel, VARIANT_INFO,
    ForecastError, ConfigError, DataFormatError, DataError, ConsistencyError
)
from experiments import (
    cell_seed, train_model, run_experiment, compare_modes, check_multivariate_majority, predict_ahead
)
from ingest import parse_csv, filter_source, build_panels, weeks_after
from metrics import loss_pair
from ndcore import Rng
from nn import save_checkpoint, load_checkpoint
from prep import ScalerParams
from report import ReportWriter, atomic_write_text, load_report, print_summary, print_comparison

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONSISTENCY = 4

DEFAULT_DATA = os.path.join("data", "ecdc_variants.csv.gz")

EPILOG = """
Examples:
  # Check the data file
  variantcast ingest-check --data data/ecdc_variants.csv.gz

  # Full univariate sweep on 8 worker processes
  variantcast sweep --mode uni --jobs 8 --out runs/uni

  # Multivariate sweep with a reduced grid
  variantcast sweep --mode multi --hidden-sizes 25,50 --layer-sizes 2,4 --epochs 200 --out runs/multi

  # Compare the two modes (LSTM by default)
  variantcast compare runs/uni runs/multi --out runs/compare

  # Train one model, then forecast two weeks ahead
  variantcast train-one --mode multi --variant BA.2 --kind BiLSTM --hidden 25 --layers 4 --checkpoint ba2.npz
  variantcast predict --checkpoint ba2.npz --weeks-ahead 2 --out forecasts

Configuration precedence: built-in defaults < --config JSON file < command-line flags.

Exit codes:
  0  success
  1  unexpected failure
  2  configuration error (including invalid arguments)
  3  data format or data error
  4  consistency error (checkpoint/panel or report mismatch)
"""


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )


def int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'") from None


def kind_label(text: str) -> str:
    try:
        return ModelKind.parse(text).value
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def kind_list(text: str) -> List[str]:
    return [kind_label(v) for v in text.split(',') if v.strip()]

# =============================================================================
# SHARED PLUMBING
# =============================================================================

def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the --config file, then flags"""
    overrides = {
        'mode': getattr(args, 'mode', None),
        'kinds': getattr(args, 'kinds', None),
        'hidden_sizes': getattr(args, 'hidden_sizes', None),
        'layer_sizes': getattr(args, 'layer_sizes', None),
        'epochs': getattr(args, 'epochs', None),
        'window': getattr(args, 'window', None),
        'learning_rate': getattr(args, 'lr', None),
        'seed': getattr(args, 'seed', None),
        'train_weeks': getattr(args, 'train_weeks', None),
        'test_weeks': getattr(args, 'test_weeks', None),
        'source': getattr(args, 'source', None),
        'jobs': getattr(args, 'jobs', None),
    }
    return ExperimentConfig.load(getattr(args, 'config', None), overrides,
                                 defaults={'jobs': os.cpu_count() or 1})


def load_panels(data_path: str, source: DataSource) -> Tuple[Dict[str, VariantPanel], List[str]]:
    """Parse, filter and pivot; also returns the variants the source filter removed"""
    if not os.path.exists(data_path):
        raise DataError(f"Data file {data_path} not found")
    records = parse_csv(data_path)
    kept = filter_source(records, source)
    dropped = sorted({r.variant for r in records} - {r.variant for r in kept})
    if not kept:
        raise DataError(f"No {source.value} records in {data_path}")
    return build_panels(kept), dropped


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (DataFormatError, DataError)):
        return EXIT_DATA
    if isinstance(error, ConsistencyError):
        return EXIT_CONSISTENCY
    if isinstance(error, ForecastError):
        return EXIT_CONFIG
    return EXIT_UNEXPECTED

# =============================================================================
# COMMANDS
# =============================================================================

def cmd_ingest_check(args: argparse.Namespace) -> int:
    """Summarize the data file"""
    source = DataSource.parse(args.source) if args.source else DataSource.GISAID
    panels, dropped = load_panels(args.data, source)
    first = next(iter(panels.values()))

    print("\n" + "=" * 80)
    print("INGEST CHECK")
    print("=" * 80)
    print(f"{len(panels)} variants, {len(first.countries)} countries")
    print(f"Weeks: {first.weeks[0]} to {first.weeks[-1]} ({len(first.weeks)} weeks)")
    print(f"Source: {source.value}")
    print("\nDetections per variant:")
    for variant, panel in panels.items():
        label = VARIANT_INFO.get(variant, ('', ''))[0]
        print(f"  {variant:<18} {label:<10} {int(panel.total):>12}")
    if dropped:
        print(f"\nDropped by source filter: {', '.join(dropped)}")
    print("=" * 80)
    return EXIT_OK


def cmd_train_one(args: argparse.Namespace) -> int:
    """Train one configuration for one variant and save a checkpoint"""
    config = load_config(args)
    panels, _ = load_panels(args.data, config.source)
    if args.variant not in panels:
        raise DataError(f"Variant {args.variant} not in the data")
    panel = panels[args.variant]
    kind = ModelKind.parse(args.kind)

    if config.mode == Mode.MULTIVARIATE:
        countries = list(panel.countries)
        series = panel.values
    else:
        if not args.country:
            raise ConfigError("--country is required in univariate mode")
        countries = [args.country]
        series = panel.column(args.country)

    seed = cell_seed(config.seed, config.mode, args.variant, kind, args.hidden, args.layers)
    model = train_model(config, series, kind, args.hidden, args.layers, Rng(seed))

    print("\n" + "=" * 80)
    print(f"TRAINED {kind.value} hidden {args.hidden} layers {args.layers} on {args.variant}")
    print("=" * 80)
    if model.train_loss_curve:
        print(f"Final training MSE (scaled): {model.train_loss_curve[-1]:.6g}")
    if model.diverged:
        print("Training diverged")
    else:
        loss = loss_pair(model.actual, model.predicted)
        print(f"Test MSE: {loss.mse:.6g}")
        print(f"Test RMSE: {loss.rmse:.6g}")

    if args.checkpoint:
        metadata = {
            'variant': args.variant,
            'mode': config.mode.value,
            'countries': countries,
            'window': config.window,
            'seed': seed,
        }
        scaler = model.scaler
        save_checkpoint(args.checkpoint, model.net, metadata,
                        extras={'median': scaler.median, 'q25': scaler.q25,
                                'q75': scaler.q75, 'iqr': scaler.iqr})
        print(f"Checkpoint saved to: {args.checkpoint}")
    print("=" * 80)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Two-stage sweep for the configured mode"""
    config = load_config(args)
    writer = ReportWriter(args.out, force=args.force)
    writer.ensure_writable()
    panels, dropped = load_panels(args.data, config.source)
    if dropped:
        logger.info(f"Source filter dropped: {', '.join(dropped)}")

    started = time.perf_counter()
    report = run_experiment(config, panels)
    wall_time = time.perf_counter() - started

    writer.write(report, data_path=args.data, wall_time=wall_time)
    print_summary(report)
    print(f"Results written to: {args.out}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    """Univariate vs multivariate minimum MSE per variant"""
    univariate = load_report(args.univariate_run)
    multivariate = load_report(args.multivariate_run)
    comparison = compare_modes(univariate, multivariate, ModelKind.parse(args.kind))
    check = check_multivariate_majority(comparison)
    print_comparison(comparison, check)
    if args.out:
        ReportWriter(args.out, force=True).write_comparison(comparison, check)
        print(f"Comparison written to: {args.out}")
    return EXIT_OK


def forecast_frame(panel: VariantPanel, countries: List[str], forecast: np.ndarray) -> pd.DataFrame:
    labels = weeks_after(panel.weeks[-1], forecast.shape[0])
    rows = []
    for step, week in enumerate(labels):
        for j, country in enumerate(countries):
            rows.append({'step': step + 1, 'week': week, 'country': country,
                         'predicted': float(forecast[step, j]), 'extrapolated': step > 0})
    return pd.DataFrame(rows)


def cmd_predict(args: argparse.Namespace) -> int:
    """Forecast from the last window of a variant's panel"""
    net, metadata, extras = load_checkpoint(args.checkpoint)
    for key in ('variant', 'countries', 'window'):
        if key not in metadata:
            raise ConsistencyError(f"Checkpoint metadata lacks '{key}'")
    missing = [k for k in ('median', 'q25', 'q75', 'iqr') if k not in extras]
    if missing:
        raise ConsistencyError(f"Checkpoint lacks scaler arrays: {', '.join(missing)}")
    scaler = ScalerParams(median=extras['median'], q25=extras['q25'], q75=extras['q75'], iqr=extras['iqr'])

    source = DataSource.parse(args.source) if args.source else DataSource.GISAID
    panels, _ = load_panels(args.data, source)
    variant = metadata['variant']
    if variant not in panels:
        raise ConsistencyError(f"Checkpoint variant {variant} not in the data")
    panel = panels[variant]
    countries = list(metadata['countries'])
    history = np.hstack([panel.column(country) for country in countries])

    forecast = predict_ahead(net, scaler, history, int(metadata['window']), args.weeks_ahead)
    frame = forecast_frame(panel, countries, forecast)
    path = os.path.join(args.out, f"forecast_{variant.replace('/', '_')}.csv")
    atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n'))

    print(frame.to_string(index=False))
    print(f"\nForecast written to: {path}")
    return EXIT_OK

# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    defaults = ExperimentConfig()

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--data', default=DEFAULT_DATA, help=f'ECDC variant CSV, optionally compressed (default: {DEFAULT_DATA})')
    data.add_argument('--source', choices=[s.value for s in DataSource],
                      help=f'Surveillance source to keep (default: {defaults.source.value})')
    data.add_argument('--verbose', action='store_true', help='Debug logging')

    protocol = argparse.ArgumentParser(add_help=False)
    protocol.add_argument('--config', help='JSON config file; flags override its values')
    protocol.add_argument('--mode', choices=['uni', 'multi'], help='Univariate or multivariate (default: uni)')
    protocol.add_argument('--epochs', type=int, help=f'Training epochs (default: {defaults.epochs})')
    protocol.add_argument('--window', type=int, help=f'Input window in weeks (default: {defaults.window})')
    protocol.add_argument('--lr', type=float, help=f'Adam learning rate (default: {defaults.learning_rate})')
    protocol.add_argument('--seed', type=int, help=f'Master seed (default: {defaults.seed})')
    protocol.add_argument('--train-weeks', type=int, help='Training weeks (default: every week before the test block)')
    protocol.add_argument('--test-weeks', type=int, help=f'Test weeks (default: {defaults.test_weeks})')

    parser = argparse.ArgumentParser(
        prog='variantcast',
        description="Recurrent network forecasting of weekly variant case counts",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    commands = parser.add_subparsers(dest='command', required=True)

    check = commands.add_parser('ingest-check', parents=[data], help='Parse and summarize a data file')
    check.set_defaults(handler=cmd_ingest_check)

    sweep = commands.add_parser('sweep', parents=[data, protocol], help='Run the two-stage sweep',
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=EPILOG)
    sweep.add_argument('--out', default='runs', help='Run directory (default: runs)')
    sweep.add_argument('--kinds', type=kind_list,
                       help=f"Model kinds (default: {','.join(k.value for k in defaults.kinds)})")
    sweep.add_argument('--hidden-sizes', type=int_list,
                       help=f"Hidden size candidates (default: {','.join(map(str, defaults.hidden_sizes))})")
    sweep.add_argument('--layer-sizes', type=int_list,
                       help=f"Layer size candidates (default: {','.join(map(str, defaults.layer_sizes))})")
    sweep.add_argument('--jobs', type=int, help='Worker processes (default: number of CPUs)')
    sweep.add_argument('--force', action='store_true', help='Overwrite a completed run')
    sweep.set_defaults(handler=cmd_sweep)

    train = commands.add_parser('train-one', parents=[data, protocol], help='Train one configuration')
    train.add_argument('--variant', required=True, help='Variant lineage, e.g. BA.2')
    train.add_argument('--kind', default='LSTM', type=kind_label,
                       help='RNN, LSTM or BiLSTM (default: LSTM)')
    train.add_argument('--hidden', type=int, default=25, help='Hidden size (default: 25)')
    train.add_argument('--layers', type=int, default=4, help='Layer count (default: 4)')
    train.add_argument('--country', help='Country to model (univariate mode only)')
    train.add_argument('--checkpoint', help='Checkpoint path to write (.npz)')
    train.set_defaults(handler=cmd_train_one)

    compare = commands.add_parser('compare', help='Compare a univariate and a multivariate run')
    compare.add_argument('univariate_run', help='Univariate run directory')
    compare.add_argument('multivariate_run', help='Multivariate run directory')
    compare.add_argument('--kind', default='LSTM', help='Model kind to compare (default: LSTM)')
    compare.add_argument('--out', help='Directory for comparison.csv')
    compare.add_argument('--verbose', action='store_true', help='Debug logging')
    compare.set_defaults(handler=cmd_compare)

    predict = commands.add_parser('predict', parents=[data], help='Forecast from a checkpoint')
    predict.add_argument('--checkpoint', required=True, help='Checkpoint written by train-one')
    predict.add_argument('--weeks-ahead', type=int, default=1, help='Weeks to forecast (default: 1)')
    predict.add_argument('--out', default='.', help='Directory for the forecast CSV (default: .)')
    predict.set_defaults(handler=cmd_predict)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, 'verbose', False))
    try:
        return args.handler(args)
    except ForecastError as e:
        logger.error(str(e))
        return exit_code_for(e)
    except ValueError as e:
        # enum parsing outside the config layer
        logger.error(str(e))
        return EXIT_CONFIG
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
