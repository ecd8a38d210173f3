"""Loading, validation and merging of quote series and expert label files.

Two CSV layouts are understood, both UTF-8 with a header row, ISO dates and
a plain decimal point:

* quotes:  ``date,open,high,low,close,volume,stockname``
* labels:  ``date,stockname,id_select,type,username`` with
  ``type in {Trend, Flat, N/A}``; the five quote columns may additionally be
  present, in which case they are cross-checked against already-loaded quotes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DefectFileError,
    DuplicateDateError,
    InvariantError,
    ParseError,
)

QUOTE_COLUMNS = ("date", "open", "high", "low", "close", "volume", "stockname")
LABEL_COLUMNS = ("date", "stockname", "id_select", "type", "username")
LABEL_QUOTE_COLUMNS = ("open", "high", "low", "close", "volume")

TREND = "Trend"
FLAT = "Flat"


@dataclass(frozen=True)
class QuoteBar:
    """One daily OHLCV bar."""

    date: Date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0.0:
            raise InvariantError(f"non-positive price on {self.date}")
        if self.volume < 0.0:
            raise InvariantError(f"negative volume on {self.date}")
        if self.low > min(self.open, self.close) or max(self.open, self.close) > self.high:
            raise InvariantError(
                f"OHLC ordering violated on {self.date}: "
                f"open={self.open} high={self.high} low={self.low} close={self.close}"
            )


@dataclass
class QuoteSeries:
    """Date-sorted bars for one stock, with cached column arrays."""

    stockname: str
    bars: list[QuoteBar]
    _index: dict[Date, int] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._index = {bar.date: i for i, bar in enumerate(self.bars)}

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def dates(self) -> list[Date]:
        return [bar.date for bar in self.bars]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(bar, name) for bar in self.bars], dtype=np.float64)

    @property
    def closes(self) -> np.ndarray:
        return self.column("close")

    @property
    def volumes(self) -> np.ndarray:
        return self.column("volume")

    def index_of(self, d: Date) -> int:
        try:
            return self._index[d]
        except KeyError:
            raise InvariantError(f"{self.stockname}: no quote for {d}") from None

    def has_date(self, d: Date) -> bool:
        return d in self._index

    def validate(self) -> None:
        for bar in self.bars:
            bar.validate()
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date <= prev.date:
                raise DuplicateDateError(
                    f"{self.stockname}: dates not strictly increasing at {cur.date}"
                )


@dataclass(frozen=True)
class ExpertLabelRow:
    """One per-day expert label; N/A tendencies are mapped to Flat at load."""

    date: Date
    stockname: str
    id_select: int
    tendency: str
    expert: str


def _parse_date(raw: str, path: Path, line: int) -> Date:
    try:
        return Date.fromisoformat(raw.strip())
    except ValueError:
        raise ParseError(f"{path}:{line}: bad date {raw!r}") from None


def _parse_float(raw: str, path: Path, line: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"{path}:{line}: bad {col} value {raw!r}") from None


def _reader(path: Path, required: Sequence[str]) -> tuple[csv.DictReader, object]:
    handle = path.open(newline="", encoding="utf-8")
    reader = csv.DictReader(handle)
    missing = [c for c in required if reader.fieldnames is None or c not in reader.fieldnames]
    if missing:
        handle.close()
        raise ParseError(f"{path}: missing columns {missing}")
    return reader, handle


def load_quotes(path: str | Path, schema: Mapping[str, str] | None = None) -> QuoteSeries:
    """Load one stock's quotes, sort by date and validate every invariant.

    ``schema`` optionally maps the logical column names of ``QUOTE_COLUMNS``
    to the actual header names in the file.
    """
    path = Path(path)
    colmap = {c: c for c in QUOTE_COLUMNS}
    if schema:
        colmap.update(schema)
    reader, handle = _reader(path, [colmap[c] for c in QUOTE_COLUMNS])
    bars: list[QuoteBar] = []
    stockname: str | None = None
    try:
        for line, row in enumerate(reader, start=2):
            name = row[colmap["stockname"]].strip()
            if stockname is None:
                stockname = name
            elif name != stockname:
                raise InvariantError(f"{path}:{line}: mixed stocknames {stockname!r}/{name!r}")
            bar = QuoteBar(
                date=_parse_date(row[colmap["date"]], path, line),
                open=_parse_float(row[colmap["open"]], path, line, "open"),
                high=_parse_float(row[colmap["high"]], path, line, "high"),
                low=_parse_float(row[colmap["low"]], path, line, "low"),
                close=_parse_float(row[colmap["close"]], path, line, "close"),
                volume=_parse_float(row[colmap["volume"]], path, line, "volume"),
            )
            bar.validate()
            bars.append(bar)
    finally:
        handle.close()
    if stockname is None:
        raise ParseError(f"{path}: no data rows")
    bars.sort(key=lambda b: b.date)
    for prev, cur in zip(bars, bars[1:]):
        if cur.date == prev.date:
            raise DuplicateDateError(f"{path}: two rows for {cur.date}")
    return QuoteSeries(stockname=stockname, bars=bars)


def _format_number(value: float) -> str:
    # integral values print without a trailing ".0" so synth files stay tidy
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def save_quotes(series: QuoteSeries, path: str | Path) -> None:
    """Write a quotes CSV that loads back field-for-field identical."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(QUOTE_COLUMNS)
        for bar in series.bars:
            writer.writerow(
                [
                    bar.date.isoformat(),
                    repr(bar.open),
                    repr(bar.high),
                    repr(bar.low),
                    repr(bar.close),
                    _format_number(bar.volume),
                    series.stockname,
                ]
            )


def _map_tendency(raw: str, path: Path, line: int) -> str:
    value = raw.strip()
    if value in (TREND, FLAT):
        return value
    if value == "N/A":
        return FLAT
    raise ParseError(f"{path}:{line}: unknown tendency {value!r}")


@dataclass
class LabelFile:
    """Parsed label file: rows plus any embedded quote tuples."""

    path: Path
    stockname: str
    expert: str
    rows: list[ExpertLabelRow]
    quotes: dict[tuple[Date, str], tuple[float, float, float, float, float]]


def load_label_file(path: str | Path) -> LabelFile:
    """Parse one label file; each file must carry a single (stockname, expert)."""
    path = Path(path)
    reader, handle = _reader(path, LABEL_COLUMNS)
    has_quotes = all(c in (reader.fieldnames or ()) for c in LABEL_QUOTE_COLUMNS)
    rows: list[ExpertLabelRow] = []
    quotes: dict[tuple[Date, str], tuple[float, float, float, float, float]] = {}
    stockname: str | None = None
    expert: str | None = None
    try:
        for line, row in enumerate(reader, start=2):
            name = row["stockname"].strip()
            user = row["username"].strip()
            if stockname is None:
                stockname, expert = name, user
            elif name != stockname or user != expert:
                raise InvariantError(
                    f"{path}:{line}: file mixes (stockname, expert) pairs"
                )
            try:
                id_select = int(row["id_select"])
            except ValueError:
                raise ParseError(f"{path}:{line}: bad id_select {row['id_select']!r}") from None
            d = _parse_date(row["date"], path, line)
            rows.append(
                ExpertLabelRow(
                    date=d,
                    stockname=name,
                    id_select=id_select,
                    tendency=_map_tendency(row["type"], path, line),
                    expert=user,
                )
            )
            if has_quotes:
                quotes[(d, name)] = tuple(
                    _parse_float(row[c], path, line, c) for c in LABEL_QUOTE_COLUMNS
                )
    finally:
        handle.close()
    if stockname is None or expert is None:
        raise ParseError(f"{path}: no data rows")
    return LabelFile(path=path, stockname=stockname, expert=expert, rows=rows, quotes=quotes)


def save_labels(rows: Iterable[ExpertLabelRow], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(LABEL_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.date.isoformat(), row.stockname, row.id_select, row.tendency, row.expert]
            )


def merge_label_files(
    paths: Sequence[str | Path],
    quotes: Iterable[QuoteSeries] | None = None,
    skip_defects: bool = False,
) -> list[ExpertLabelRow]:
    """Merge label files, dropping exact duplicates and rejecting defect files.

    A file is a defect when any of its embedded quote tuples contradicts a
    quote already registered for the same (date, stockname), either from
    ``quotes`` or from an earlier file. By default the merge raises
    ``DefectFileError``; with ``skip_defects`` the offending file is skipped
    and the merge continues, mirroring how such files are excluded upstream.
    """
    registry: dict[tuple[Date, str], tuple[float, float, float, float, float]] = {}
    for series in quotes or ():
        for bar in series.bars:
            registry[(bar.date, series.stockname)] = (
                bar.open,
                bar.high,
                bar.low,
                bar.close,
                bar.volume,
            )

    merged: list[ExpertLabelRow] = []
    seen: set[ExpertLabelRow] = set()
    by_key: dict[tuple[Date, str, str], ExpertLabelRow] = {}
    for raw_path in paths:
        lf = load_label_file(raw_path)
        conflict = next(
            (key for key, q in lf.quotes.items() if key in registry and registry[key] != q),
            None,
        )
        if conflict is not None:
            message = (
                f"{lf.path}: quotes for {conflict[0]}/{conflict[1]} contradict "
                "already-loaded quotes; file rejected"
            )
            if skip_defects:
                import warnings

                warnings.warn(message)
                continue
            raise DefectFileError(message)
        registry.update(lf.quotes)
        for row in lf.rows:
            if row in seen:
                continue
            key = (row.date, row.stockname, row.expert)
            other = by_key.get(key)
            if other is not None:
                raise InvariantError(
                    f"{lf.path}: expert {row.expert} labels {row.date}/{row.stockname} twice"
                )
            seen.add(row)
            by_key[key] = row
            merged.append(row)
    return merged
