"""
ECDC variant data ingestion
Parses the weekly variant CSV, filters by source and pivots per-variant panels
"""

import datetime
import logging
from typing import Dict, IO, Iterable, List, Union

import numpy as np
import pandas as pd

from domain_models import (
    CaseRecord, DataSource, VariantPanel, DataFormatError, DataError
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ['country', 'year_week', 'source', 'variant', 'number_detections_variant']


def _iso_week_start(year_week: str) -> datetime.date:
    return datetime.date.fromisocalendar(int(year_week[:4]), int(year_week[5:]), 1)


def _iso_label(day: datetime.date) -> str:
    year, week, _ = day.isocalendar()
    return f"{year:04d}-{week:02d}"


def week_range(first: str, last: str) -> List[str]:
    """Every ISO week label from first to last inclusive"""
    start, end = _iso_week_start(first), _iso_week_start(last)
    count = (end - start).days // 7 + 1
    return [_iso_label(start + datetime.timedelta(weeks=k)) for k in range(count)]


def weeks_after(last: str, count: int) -> List[str]:
    """The count ISO week labels following last"""
    start = _iso_week_start(last)
    return [_iso_label(start + datetime.timedelta(weeks=k)) for k in range(1, count + 1)]


def parse_csv(source: Union[str, IO]) -> List[CaseRecord]:
    """
    Read the ECDC variant CSV into CaseRecords.

    Columns are matched by header name; extra columns are ignored.
    The first bad row raises a DataFormatError naming its line.
    """
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False, compression='infer', encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataFormatError("File is empty, header row missing", line=1) from None
    except pd.errors.ParserError as e:
        raise DataFormatError(f"Malformed CSV: {e}") from e
    except UnicodeDecodeError as e:
        raise DataFormatError(f"File is not valid UTF-8 (byte offset {e.start})") from e

    df.columns = [c.strip() for c in df.columns]
    for column in REQUIRED_COLUMNS:
        if column not in df.columns:
            raise DataFormatError("Missing required column", line=1, column=column)

    records = []
    for offset, row in enumerate(df[REQUIRED_COLUMNS].itertuples(index=False, name=None)):
        line = offset + 2  # header is line 1
        country, year_week, source_label, variant, detections = (v.strip() for v in row)
        try:
            source_value = DataSource.parse(source_label)
        except ValueError:
            raise DataFormatError(f"Unknown source '{source_label}'", line=line, column='source') from None
        try:
            count = int(detections)
        except ValueError:
            raise DataFormatError(f"Unparseable detection count '{detections}'",
                                  line=line, column='number_detections_variant') from None
        try:
            record = CaseRecord(country=country, year_week=year_week, source=source_value,
                                variant=variant, detections=count)
            _iso_week_start(year_week)
        except ValueError as e:
            column = 'number_detections_variant' if count < 0 else 'year_week'
            if not country:
                column = 'country'
            elif not variant:
                column = 'variant'
            raise DataFormatError(str(e), line=line, column=column) from None
        records.append(record)

    logger.info(f"Parsed {len(records)} records")
    return records


def filter_source(records: Iterable[CaseRecord], source: DataSource = DataSource.GISAID) -> List[CaseRecord]:
    return [r for r in records if r.source == source]


def build_panels(records: Iterable[CaseRecord]) -> Dict[str, VariantPanel]:
    """
    Pivot records into one dense week x country panel per variant.

    The week axis spans the full observed range with no gaps, countries
    are sorted lexicographically, missing cells are 0 and duplicate
    cells are summed. Every panel shares the same axes.
    """
    records = list(records)
    if not records:
        raise DataError("No records to build panels from")

    df = pd.DataFrame({
        'variant': [r.variant for r in records],
        'country': [r.country for r in records],
        'year_week': [r.year_week for r in records],
        'detections': [r.detections for r in records],
    })
    # zero-padded labels sort chronologically
    weeks = week_range(df['year_week'].min(), df['year_week'].max())
    countries = sorted(df['country'].unique())

    panels = {}
    for variant in sorted(df['variant'].unique()):
        subset = df[df['variant'] == variant]
        table = subset.pivot_table(index='year_week', columns='country', values='detections',
                                   aggfunc='sum', fill_value=0)
        table = table.reindex(index=weeks, columns=countries, fill_value=0)
        panels[variant] = VariantPanel(variant=variant, countries=countries, weeks=weeks,
                                       values=table.to_numpy(dtype=np.float64))

    logger.info(f"Built {len(panels)} panels of {len(weeks)} weeks x {len(countries)} countries")
    return panels


def panel_to_frame(panel: VariantPanel, source: DataSource = DataSource.GISAID) -> pd.DataFrame:
    """Long-format rows in the ingest schema, one per (week, country) cell"""
    long = pd.DataFrame(panel.values.astype(np.int64), index=panel.weeks, columns=panel.countries)
    long = long.stack().reset_index()
    long.columns = ['year_week', 'country', 'number_detections_variant']
    long['source'] = source.value
    long['variant'] = panel.variant
    return long[['country', 'year_week', 'source', 'variant', 'number_detections_variant']]


def write_panels_csv(panels: Iterable[VariantPanel], path: str) -> str:
    frame = pd.concat([panel_to_frame(p) for p in panels], ignore_index=True)
    frame.to_csv(path, index=False)
    return path
