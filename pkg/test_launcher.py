"""
Tests for the command-line launcher
"""

import json
import os

import numpy as np
import pandas as pd
import pytest

import forecast_launcher
from domain_models import Mode, ModelKind, ExperimentConfig
from experiments import predict_ahead, train_model
from forecast_launcher import EXIT_CONFIG, EXIT_CONSISTENCY, EXIT_DATA, EXIT_OK, main
from ndcore import Rng
from nn import save_checkpoint
from report import ReportWriter

SMALL_SWEEP = ['--hidden-sizes', '2,3', '--layer-sizes', '1,2', '--epochs', '3', '--window', '4',
               '--test-weeks', '6', '--kinds', 'LSTM,RNN', '--jobs', '1']


def test_help_lists_flags_defaults_and_exit_codes(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(['sweep', '--help'])
    assert excinfo.value.code == 0
    text = capsys.readouterr().out
    for flag in ('--data', '--out', '--config', '--mode', '--kinds', '--hidden-sizes', '--layer-sizes',
                 '--epochs', '--window', '--lr', '--seed', '--jobs', '--force'):
        assert flag in text
    assert 'default: 1000' in text
    assert '25,50,75,100' in text
    assert 'Exit codes' in text


def test_bad_arguments_exit_with_config_code():
    with pytest.raises(SystemExit) as excinfo:
        main(['sweep', '--mode', 'sideways'])
    assert excinfo.value.code == EXIT_CONFIG


def test_ingest_check_summary(synthetic_csv, capsys):
    assert main(['ingest-check', '--data', synthetic_csv]) == EXIT_OK
    out = capsys.readouterr().out
    assert '3 variants, 2 countries' in out
    assert '2021-01 to 2021-40 (40 weeks)' in out
    assert 'Dropped by source filter: P.3' in out
    assert 'Omicron' in out


def test_ingest_check_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert main(['ingest-check', '--data', str(path)]) == EXIT_DATA


def test_ingest_check_reports_row_location(tmp_path, caplog):
    path = tmp_path / "bad.csv"
    path.write_text("country,year_week,source,variant,number_detections_variant\n"
                    "Austria,2021-01,GISAID,BA.1,-4\n")
    assert main(['ingest-check', '--data', str(path)]) == EXIT_DATA
    assert 'line 2' in caplog.text
    assert 'number_detections_variant' in caplog.text


def test_ingest_check_rejects_non_utf8_file(tmp_path):
    path = tmp_path / "latin1.csv"
    path.write_bytes(b"country,year_week,source,variant,number_detections_variant\n"
                     b"Fran\xe7a,2021-01,GISAID,BA.1,3\n")
    assert main(['ingest-check', '--data', str(path)]) == EXIT_DATA


def test_missing_data_file(tmp_path):
    assert main(['ingest-check', '--data', str(tmp_path / "absent.csv")]) == EXIT_DATA


def test_sweep_writes_report_and_refuses_overwrite(synthetic_csv, tmp_path, capsys):
    out = str(tmp_path / "run")
    args = ['sweep', '--data', synthetic_csv, '--out', out, '--mode', 'multi'] + SMALL_SWEEP
    assert main(args) == EXIT_OK
    for name in ('cells.csv', 'manifest.txt', 'hidden_min_mse.csv', 'hidden_min_rmse.csv',
                 'hidden_tally.csv', 'layer_min_mse.csv', 'layer_tally.csv',
                 'hidden_grid_lstm_mse.csv', 'layer_grid_rnn_rmse.csv'):
        assert os.path.exists(os.path.join(out, name)), name
    assert 'Selected configuration' in capsys.readouterr().out

    assert main(args) == EXIT_CONFIG
    assert main(args + ['--force']) == EXIT_OK


def test_failed_forced_sweep_is_not_marked_complete(synthetic_csv, tmp_path, monkeypatch):
    out = str(tmp_path / "run")
    args = ['sweep', '--data', synthetic_csv, '--out', out, '--mode', 'multi'] + SMALL_SWEEP
    assert main(args + ['--seed', '1']) == EXIT_OK
    before = open(os.path.join(out, 'cells.csv')).read()

    def fail(self, report):
        raise OSError("disk full")

    monkeypatch.setattr(ReportWriter, 'write_traces', fail)
    assert main(args + ['--seed', '2', '--force']) == forecast_launcher.EXIT_UNEXPECTED
    assert open(os.path.join(out, 'cells.csv')).read() != before
    assert not os.path.exists(os.path.join(out, 'manifest.txt'))
    assert main(['compare', out, out]) == EXIT_CONSISTENCY


def test_config_file_is_overridden_by_flags(synthetic_csv, tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({'epochs': 2, 'seed': 5, 'mode': 'multivariate', 'window': 4,
                                       'test_weeks': 6, 'hidden_sizes': [2], 'layer_sizes': [1],
                                       'kinds': ['RNN'], 'jobs': 1}))
    out = str(tmp_path / "run")
    assert main(['sweep', '--data', synthetic_csv, '--out', out, '--config', str(config_path),
                 '--seed', '9']) == EXIT_OK
    manifest = dict(line.split('=', 1) for line in open(os.path.join(out, 'manifest.txt')).read().splitlines())
    assert manifest['config.seed'] == '9'
    assert manifest['config.epochs'] == '2'
    assert manifest['mode'] == 'multivariate'


def test_invalid_config_file(synthetic_csv, tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({'hidden_sizes': [50, 25]}))
    assert main(['sweep', '--data', synthetic_csv, '--out', str(tmp_path / "run"),
                 '--config', str(config_path)]) == EXIT_CONFIG
    config_path.write_text(json.dumps({'dropout': 0.5}))
    assert main(['sweep', '--data', synthetic_csv, '--out', str(tmp_path / "run"),
                 '--config', str(config_path)]) == EXIT_CONFIG


def test_compare_two_runs(synthetic_csv, tmp_path, capsys):
    runs = {}
    for mode in ('uni', 'multi'):
        runs[mode] = str(tmp_path / mode)
        assert main(['sweep', '--data', synthetic_csv, '--out', runs[mode], '--mode', mode] + SMALL_SWEEP) == EXIT_OK
    out = str(tmp_path / "compare")
    assert main(['compare', runs['uni'], runs['multi'], '--out', out]) == EXIT_OK
    table = pd.read_csv(os.path.join(out, 'comparison.csv'))
    assert list(table.columns) == ['Variant', 'MSE Univariate', 'MSE Multivariate', 'Winner']
    assert sorted(table['Variant']) == ['B.1.616', 'BA.1', 'BA.2']
    assert table.set_index('Variant').loc['B.1.616', 'Winner'] == 'tie'
    assert 'Multivariate majority check' in capsys.readouterr().out

    # reversed arguments are a consistency error
    assert main(['compare', runs['multi'], runs['uni']]) == EXIT_CONSISTENCY


def test_train_one_then_predict(synthetic_csv, tmp_path, capsys):
    checkpoint = str(tmp_path / "ba1.npz")
    assert main(['train-one', '--data', synthetic_csv, '--mode', 'multi', '--variant', 'BA.1',
                 '--kind', 'bilstm', '--hidden', '3', '--layers', '2', '--epochs', '5',
                 '--window', '4', '--test-weeks', '6', '--checkpoint', checkpoint]) == EXIT_OK
    assert 'Test MSE' in capsys.readouterr().out

    out = str(tmp_path / "forecasts")
    assert main(['predict', '--data', synthetic_csv, '--checkpoint', checkpoint,
                 '--weeks-ahead', '2', '--out', out]) == EXIT_OK
    frame = pd.read_csv(os.path.join(out, 'forecast_BA.1.csv'))
    assert list(frame.columns) == ['step', 'week', 'country', 'predicted', 'extrapolated']
    assert list(frame['week'].unique()) == ['2021-41', '2021-42']
    assert list(frame['extrapolated']) == [False, False, True, True]


def test_univariate_train_one_needs_country(synthetic_csv):
    assert main(['train-one', '--data', synthetic_csv, '--mode', 'uni', '--variant', 'BA.1',
                 '--epochs', '1', '--window', '4', '--test-weeks', '6']) == EXIT_CONFIG


def test_predict_matches_in_memory_model(synthetic_csv, synthetic_panels, tmp_path):
    panel = synthetic_panels['BA.2']
    config = ExperimentConfig(mode=Mode.MULTIVARIATE, epochs=5, window=4, test_weeks=6)
    model = train_model(config, panel.values, ModelKind.LSTM, 3, 1, Rng(2))
    expected = predict_ahead(model.net, model.scaler, panel.values, 4, 1)

    checkpoint = str(tmp_path / "ba2.npz")
    s = model.scaler
    save_checkpoint(checkpoint, model.net,
                    {'variant': 'BA.2', 'mode': 'multivariate', 'countries': panel.countries, 'window': 4, 'seed': 2},
                    extras={'median': s.median, 'q25': s.q25, 'q75': s.q75, 'iqr': s.iqr})
    out = str(tmp_path / "forecasts")
    assert main(['predict', '--data', synthetic_csv, '--checkpoint', checkpoint, '--out', out]) == EXIT_OK
    frame = pd.read_csv(os.path.join(out, 'forecast_BA.2.csv'))
    np.testing.assert_allclose(frame['predicted'].to_numpy(), expected[0], rtol=1e-15)


def test_predict_rejects_foreign_variant(synthetic_csv, tmp_path):
    net = train_model(ExperimentConfig(epochs=0, window=4, test_weeks=6),
                      np.arange(40.0)[:, None], ModelKind.RNN, 2, 1, Rng(0)).net
    checkpoint = str(tmp_path / "xbb.npz")
    save_checkpoint(checkpoint, net, {'variant': 'XBB', 'countries': ['Austria'], 'window': 4},
                    extras={k: np.zeros(1) for k in ('median', 'q25', 'q75', 'iqr')})
    assert main(['predict', '--data', synthetic_csv, '--checkpoint', checkpoint,
                 '--out', str(tmp_path)]) == EXIT_CONSISTENCY


def test_exit_code_mapping():
    from domain_models import ConfigError, ConsistencyError, DataError, DataFormatError, ShapeError
    assert forecast_launcher.exit_code_for(ConfigError("x")) == EXIT_CONFIG
    assert forecast_launcher.exit_code_for(ShapeError("x")) == EXIT_CONFIG
    assert forecast_launcher.exit_code_for(DataFormatError("x", line=3)) == EXIT_DATA
    assert forecast_launcher.exit_code_for(DataError("x")) == EXIT_DATA
    assert forecast_launcher.exit_code_for(ConsistencyError("x")) == EXIT_CONSISTENCY
    assert forecast_launcher.exit_code_for(RuntimeError("x")) == forecast_launcher.EXIT_UNEXPECTED
