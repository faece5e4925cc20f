"""
Tests for ECDC CSV parsing, source filtering and panel building
"""

import io

import numpy as np
import pytest

from conftest import SNAPSHOT_PATH, requires_snapshot
from domain_models import CaseRecord, DataError, DataFormatError, DataSource
from ingest import build_panels, filter_source, parse_csv, week_range, weeks_after, write_panels_csv

HEADER = "country,year_week,source,variant,number_detections_variant\n"


def records(text):
    return parse_csv(io.StringIO(HEADER + text))


def test_parse_reference_row():
    parsed = records("Austria,2021-01,GISAID,B.1.1.7,56\n")
    assert parsed == [CaseRecord('Austria', '2021-01', DataSource.GISAID, 'B.1.1.7', 56)]


def test_columns_matched_by_name_and_extras_ignored():
    text = ("new_cases,variant,country,source,year_week,number_detections_variant,valid_denominator\n"
            "10,BA.2,Belgium,TESSy,2022-07,3,Yes\n")
    parsed = parse_csv(io.StringIO(text))
    assert parsed == [CaseRecord('Belgium', '2022-07', DataSource.TESSY, 'BA.2', 3)]


def test_header_only_gives_empty_list():
    assert records("") == []


def test_empty_file_is_a_format_error():
    with pytest.raises(DataFormatError) as excinfo:
        parse_csv(io.StringIO(""))
    assert excinfo.value.line == 1


def test_non_utf8_bytes_are_a_format_error(tmp_path):
    path = tmp_path / "latin1.csv"
    path.write_bytes((HEADER + "Fran\xe7a,2021-01,GISAID,BA.1,3\n").encode("latin-1"))
    with pytest.raises(DataFormatError) as excinfo:
        parse_csv(str(path))
    assert "UTF-8" in str(excinfo.value)


def test_missing_column_is_named():
    with pytest.raises(DataFormatError) as excinfo:
        parse_csv(io.StringIO("country,year_week,source,variant\nAustria,2021-01,GISAID,BA.1\n"))
    assert excinfo.value.column == 'number_detections_variant'
    assert 'number_detections_variant' in str(excinfo.value)


@pytest.mark.parametrize("row,column", [
    ("Austria,2021-01,GISAID,B.1.1.7,-1\n", 'number_detections_variant'),
    ("Austria,2021-01,GISAID,B.1.1.7,many\n", 'number_detections_variant'),
    ("Austria,2021-1,GISAID,B.1.1.7,5\n", 'year_week'),
    ("Austria,2021-54,GISAID,B.1.1.7,5\n", 'year_week'),
    ("Austria,2021-01,ECDC,B.1.1.7,5\n", 'source'),
])
def test_bad_rows_fail_fast_with_location(row, column):
    good = "Austria,2021-02,GISAID,B.1.1.7,5\n"
    with pytest.raises(DataFormatError) as excinfo:
        records(good + row)
    assert excinfo.value.line == 3
    assert excinfo.value.column == column
    assert "line 3" in str(excinfo.value)


def test_filter_source_keeps_order_and_is_idempotent():
    parsed = records("Austria,2021-01,GISAID,BA.1,1\n"
                     "Austria,2021-01,TESSy,BA.1,2\n"
                     "Belgium,2021-02,GISAID,BA.1,3\n")
    kept = filter_source(parsed, DataSource.GISAID)
    assert [r.detections for r in kept] == [1, 3]
    assert filter_source(kept, DataSource.GISAID) == kept
    assert filter_source([r for r in parsed if r.source == DataSource.TESSY]) == []


def test_build_panels_single_record():
    panels = build_panels([CaseRecord('Austria', '2021-01', DataSource.GISAID, 'B.1.1.7', 56)])
    panel = panels['B.1.1.7']
    assert panel.countries == ['Austria']
    assert panel.weeks == ['2021-01']
    np.testing.assert_array_equal(panel.values, [[56.0]])


def test_duplicate_cells_are_summed():
    panels = build_panels([
        CaseRecord('Austria', '2021-01', DataSource.GISAID, 'BA.1', 5),
        CaseRecord('Austria', '2021-01', DataSource.GISAID, 'BA.1', 7),
    ])
    assert panels['BA.1'].values[0, 0] == 12.0


def test_panels_share_dense_axes():
    panels = build_panels([
        CaseRecord('Czechia', '2020-52', DataSource.GISAID, 'BA.1', 1),
        CaseRecord('Austria', '2021-02', DataSource.GISAID, 'BA.2', 2),
    ])
    expected_weeks = ['2020-52', '2020-53', '2021-01', '2021-02']
    for panel in panels.values():
        assert panel.weeks == expected_weeks
        assert panel.countries == ['Austria', 'Czechia']
    np.testing.assert_array_equal(panels['BA.2'].values[:, 0], [0, 0, 0, 2])


def test_sum_preservation(synthetic_csv):
    kept = filter_source(parse_csv(synthetic_csv))
    panels = build_panels(kept)
    assert sum(p.total for p in panels.values()) == sum(r.detections for r in kept)
    assert 'P.3' not in panels


def test_build_panels_empty_input():
    with pytest.raises(DataError):
        build_panels([])


def test_panel_csv_round_trip(tmp_path, synthetic_panels):
    path = str(tmp_path / "panels.csv")
    write_panels_csv(synthetic_panels.values(), path)
    rebuilt = build_panels(parse_csv(path))
    assert sorted(rebuilt) == sorted(synthetic_panels)
    for variant, panel in synthetic_panels.items():
        assert rebuilt[variant].weeks == panel.weeks
        assert rebuilt[variant].countries == panel.countries
        np.testing.assert_array_equal(rebuilt[variant].values, panel.values)


def test_week_helpers():
    assert week_range('2020-01', '2022-49')[:2] == ['2020-01', '2020-02']
    # 2020 has 53 ISO weeks
    assert len(week_range('2020-01', '2022-49')) == 154
    assert weeks_after('2020-52', 3) == ['2020-53', '2021-01', '2021-02']


@requires_snapshot
def test_reference_snapshot_shape():
    panels = build_panels(filter_source(parse_csv(SNAPSHOT_PATH)))
    assert len(panels) == 21
    for panel in panels.values():
        assert len(panel.countries) == 30
