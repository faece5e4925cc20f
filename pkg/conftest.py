"""
Shared fixtures: small synthetic ECDC-style data sets and panels
"""

import os

import numpy as np
import pandas as pd
import pytest

from domain_models import ExperimentConfig, Mode, ModelKind, VariantPanel
from ingest import week_range

SNAPSHOT_PATH = os.path.join(os.path.dirname(__file__), "data", "ecdc_variants.csv.gz")

requires_snapshot = pytest.mark.skipif(
    not os.path.exists(SNAPSHOT_PATH), reason="ECDC snapshot not vendored in data/"
)

COUNTRIES = ["Austria", "Belgium"]
WEEKS = week_range("2021-01", "2021-40")


def synthetic_values(variant_index: int, weeks: int = len(WEEKS), countries: int = len(COUNTRIES)) -> np.ndarray:
    """Smooth, positive, country-shifted curves"""
    t = np.arange(weeks)[:, None]
    phase = np.arange(countries)[None, :] * 0.7 + variant_index
    return np.round(200 + 150 * np.sin(t / 5.0 + phase) + 3 * t).astype(float)


def frame_for(panels) -> pd.DataFrame:
    rows = []
    for panel in panels:
        for w, week in enumerate(panel.weeks):
            for j, country in enumerate(panel.countries):
                rows.append({
                    'country': country,
                    'country_code': country[:2].upper(),
                    'year_week': week,
                    'source': 'GISAID',
                    'variant': panel.variant,
                    'number_detections_variant': int(panel.values[w, j]),
                })
    return pd.DataFrame(rows)


@pytest.fixture
def synthetic_panels():
    """Three variants over 40 weeks x 2 countries; B.1.616 is all zero"""
    panels = {
        'BA.1': VariantPanel('BA.1', list(COUNTRIES), list(WEEKS), synthetic_values(0)),
        'BA.2': VariantPanel('BA.2', list(COUNTRIES), list(WEEKS), synthetic_values(1)),
        'B.1.616': VariantPanel('B.1.616', list(COUNTRIES), list(WEEKS), np.zeros((len(WEEKS), len(COUNTRIES)))),
    }
    return panels


@pytest.fixture
def synthetic_csv(tmp_path, synthetic_panels):
    """The synthetic panels as an ECDC CSV, plus a TESSy-only variant and an extra column"""
    frame = frame_for(synthetic_panels.values())
    tessy = pd.DataFrame([{
        'country': 'Austria', 'country_code': 'AU', 'year_week': '2021-05', 'source': 'TESSy',
        'variant': 'P.3', 'number_detections_variant': 4,
    }])
    path = tmp_path / "variants.csv"
    pd.concat([frame, tessy], ignore_index=True).to_csv(path, index=False)
    return str(path)


@pytest.fixture
def small_config():
    """Tiny protocol that trains in well under a second per cell"""
    return ExperimentConfig(
        mode=Mode.MULTIVARIATE,
        kinds=[ModelKind.LSTM, ModelKind.BILSTM, ModelKind.RNN],
        hidden_sizes=[2, 3],
        layer_sizes=[1, 2],
        epochs=5,
        window=4,
        test_weeks=6,
        seed=7,
        jobs=1,
    )
