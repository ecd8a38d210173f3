"""Day-by-day two-stage simulation and profit accounting.

The walk mirrors how the signals would be available in real time: the
changepoint features for day t need five future bars, so a positive
changepoint decision for day t becomes actionable only on day t+5. From the
day the window prefix reaches ``min_window_days``, the trend/flat model is
asked about the prefix every day; its first positive answer opens a position
at that day's close, with the direction latched from the sign of the
prefix's close-slope feature. A position closes when the trend/flat answer
flips back to flat (unless ``hold_until_changepoint``), when the next
changepoint signal becomes actionable, or at the end of the series.
"""

from __future__ import annotations

import bisect
import csv
import json
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gbdt
from .errors import ConfigError, EmptyInputError, SeriesTooShortError
from .features import TofRow, cp_feature_matrix, tof_features
from .labels import ExpertWindow
from .market_data import TREND, QuoteSeries

BUSINESS_DAYS_PER_YEAR = 250
CP_LAG_DAYS = 5

CpScorer = Callable[[int, np.ndarray], float]
TofScorer = Callable[[int, int, TofRow], float]


@dataclass(frozen=True)
class PipelineConfig:
    cp_threshold: float = 0.5
    tof_threshold: float = 0.5
    min_window_days: int = 6
    log_mode: bool = True
    hold_until_changepoint: bool = False
    cp_lag_days: int = CP_LAG_DAYS

    def __post_init__(self) -> None:
        if not 0.0 < self.cp_threshold < 1.0 or not 0.0 < self.tof_threshold < 1.0:
            raise ConfigError("thresholds must lie strictly inside (0, 1)")
        if self.min_window_days < 2:
            raise ConfigError("min_window_days must be >= 2")
        if self.cp_lag_days != CP_LAG_DAYS:
            raise ConfigError(
                f"cp_lag_days is fixed at {CP_LAG_DAYS} by the +/-5-day feature window"
            )

    @property
    def entry_lag(self) -> int:
        """Rows between a window start and its first possible entry day."""
        return max(self.cp_lag_days, self.min_window_days - 1)


@dataclass(frozen=True)
class Position:
    stockname: str
    direction: int
    entry_date: Date
    exit_date: Date
    entry_close: float
    exit_close: float
    entry_row: int
    exit_row: int
    profit: float
    exit_reason: str

    @property
    def days_in(self) -> int:
        return self.exit_row - self.entry_row + 1


@dataclass
class TraceRow:
    date: Date
    cp_proba: float | None = None
    cp_signal: int = 0
    window_id: int | None = None
    tof_proba: float | None = None
    tof_signal: int | None = None
    direction: int = 0
    position_state: str = "flat"


@dataclass
class SignalTrace:
    stockname: str
    rows: list[TraceRow] = field(default_factory=list)
    positions: list[Position] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        def cell(v: object) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                [
                    "date",
                    "cp_proba",
                    "cp_signal",
                    "window_id",
                    "tof_proba",
                    "tof_signal",
                    "direction",
                    "position_state",
                ]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.date.isoformat(),
                        cell(r.cp_proba),
                        r.cp_signal,
                        cell(r.window_id),
                        cell(r.tof_proba),
                        cell(r.tof_signal),
                        r.direction,
                        r.position_state,
                    ]
                )


@dataclass(frozen=True)
class StockStats:
    stockname: str
    profit: float = 0.0
    days_in: int = 0
    times_in: int = 0
    profit_lng: float = 0.0
    days_in_lng: int = 0
    times_in_lng: int = 0
    profit_sht: float = 0.0
    days_in_sht: int = 0
    times_in_sht: int = 0

    @classmethod
    def from_positions(cls, stockname: str, positions: Sequence[Position]) -> "StockStats":
        longs = [p for p in positions if p.direction > 0]
        shorts = [p for p in positions if p.direction < 0]
        profit_lng = sum(p.profit for p in longs)
        profit_sht = sum(p.profit for p in shorts)
        days_lng = sum(p.days_in for p in longs)
        days_sht = sum(p.days_in for p in shorts)
        return cls(
            stockname=stockname,
            profit=profit_lng + profit_sht,
            days_in=days_lng + days_sht,
            times_in=len(longs) + len(shorts),
            profit_lng=profit_lng,
            days_in_lng=days_lng,
            times_in_lng=len(longs),
            profit_sht=profit_sht,
            days_in_sht=days_sht,
            times_in_sht=len(shorts),
        )

    def to_dict(self) -> dict:
        return {
            "stockname": self.stockname,
            "Profit": self.profit,
            "Days_in": self.days_in,
            "Times_in": self.times_in,
            "Profit_lng": self.profit_lng,
            "Days_in_lng": self.days_in_lng,
            "Times_in_lng": self.times_in_lng,
            "Profit_sht": self.profit_sht,
            "Days_in_sht": self.days_in_sht,
            "Times_in_sht": self.times_in_sht,
        }


@dataclass(frozen=True)
class BacktestReport:
    num_stocks: int
    profit: float
    days_in: int
    times_in: int
    profit_lng: float
    days_in_lng: int
    times_in_lng: int
    profit_sht: float
    days_in_sht: int
    times_in_sht: int
    num_datapoints: int
    day_profit: float
    year_profit: float
    year_profit_avg: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "numStocks": self.num_stocks,
            "Profit": self.profit,
            "Days_in": self.days_in,
            "Times_in": self.times_in,
            "Profit_lng": self.profit_lng,
            "Days_in_lng": self.days_in_lng,
            "Times_in_lng": self.times_in_lng,
            "Profit_sht": self.profit_sht,
            "Days_in_sht": self.days_in_sht,
            "Times_in_sht": self.times_in_sht,
            "numDatapoints": self.num_datapoints,
            "DayProfit": self.day_profit,
            "YearProfit": self.year_profit,
            "YearProfit_avg": self.year_profit_avg,
            "flags": list(self.flags),
        }


def trend_profit(entry_close: float, exit_close: float, direction: int) -> float:
    """Fractional profit of one position: long gains on rises, short on falls."""
    if entry_close <= 0.0:
        raise ValueError("entry_close must be positive")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    return direction * (exit_close - entry_close) / entry_close


def aggregate(stats: Sequence[StockStats], num_datapoints: int) -> BacktestReport:
    """Totals plus the per-day and annualized profit indicators."""
    if num_datapoints <= 0:
        raise ValueError("num_datapoints must be positive")
    flags: list[str] = []
    profit = sum(s.profit for s in stats)
    days_in = sum(s.days_in for s in stats)
    if days_in == 0:
        flags.append("no_days_in_position")
        day_profit = 0.0
    else:
        day_profit = profit / days_in
    return BacktestReport(
        num_stocks=len(stats),
        profit=profit,
        days_in=days_in,
        times_in=sum(s.times_in for s in stats),
        profit_lng=sum(s.profit_lng for s in stats),
        days_in_lng=sum(s.days_in_lng for s in stats),
        times_in_lng=sum(s.times_in_lng for s in stats),
        profit_sht=sum(s.profit_sht for s in stats),
        days_in_sht=sum(s.days_in_sht for s in stats),
        times_in_sht=sum(s.times_in_sht for s in stats),
        num_datapoints=num_datapoints,
        day_profit=day_profit,
        year_profit=day_profit * BUSINESS_DAYS_PER_YEAR,
        year_profit_avg=profit / num_datapoints * BUSINESS_DAYS_PER_YEAR,
        flags=tuple(flags),
    )


def save_report(report: BacktestReport, path: str | Path, per_stock: Sequence[StockStats] = ()) -> None:
    doc = report.to_dict()
    if per_stock:
        doc["per_stock"] = [s.to_dict() for s in per_stock]
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def _as_cp_scorer(cp_model: gbdt.GbdtModel | CpScorer) -> CpScorer:
    if isinstance(cp_model, gbdt.GbdtModel):
        return lambda t, row: gbdt.predict_row_proba(cp_model, row)
    return cp_model


def _as_tof_scorer(tof_model: gbdt.GbdtModel | TofScorer) -> TofScorer:
    if isinstance(tof_model, gbdt.GbdtModel):
        return lambda start, t, row: gbdt.predict_row_proba(tof_model, row.vector())
    return tof_model


def oracle_cp_scorer(windows: Sequence[ExpertWindow], quotes: QuoteSeries) -> CpScorer:
    """Fires with probability 1 exactly on the true window start rows."""
    starts = {quotes.index_of(w.start_date) for w in windows}
    return lambda t, row: 1.0 if t in starts else 0.0


def oracle_tof_scorer(windows: Sequence[ExpertWindow], quotes: QuoteSeries) -> TofScorer:
    """Answers 1 iff the window containing the prefix start is a trend."""
    bounds = [
        (quotes.index_of(w.start_date), quotes.index_of(w.end_date), w.tendency == TREND)
        for w in windows
    ]

    def score(start: int, t: int, row: TofRow) -> float:
        for lo, hi, is_trend in bounds:
            if lo <= start <= hi:
                return 1.0 if is_trend else 0.0
        return 0.0

    return score


def run_pipeline(
    series: QuoteSeries,
    cp_model: gbdt.GbdtModel | CpScorer,
    tof_model: gbdt.GbdtModel | TofScorer,
    cfg: PipelineConfig | None = None,
) -> tuple[SignalTrace, StockStats]:
    """Walk the series in order and trade on the two-stage signals."""
    cfg = cfg or PipelineConfig()
    n = len(series)
    if n < 2 * CP_LAG_DAYS + 1:
        raise SeriesTooShortError(f"{series.stockname}: {n} bars < {2 * CP_LAG_DAYS + 1}")

    closes = series.closes
    volumes = series.volumes
    dates = series.dates
    cp_score = _as_cp_scorer(cp_model)
    tof_score = _as_tof_scorer(tof_model)

    ts, cp_X = cp_feature_matrix(series, log_mode=cfg.log_mode)
    if isinstance(cp_model, gbdt.GbdtModel) and len(ts):
        probas = gbdt.predict_proba(cp_model, cp_X)
        cp_proba_by_t = {int(t): float(probas[i]) for i, t in enumerate(ts)}
    else:
        cp_proba_by_t = {int(t): cp_score(int(t), cp_X[i]) for i, t in enumerate(ts)}

    trace = SignalTrace(stockname=series.stockname)
    window_start: int | None = None
    window_id = 0
    window_had_position = False
    entry_row: int | None = None
    entry_direction = 0

    def close_position(exit_row: int, reason: str) -> None:
        nonlocal entry_row, entry_direction
        assert entry_row is not None
        trace.positions.append(
            Position(
                stockname=series.stockname,
                direction=entry_direction,
                entry_date=dates[entry_row],
                exit_date=dates[exit_row],
                entry_close=float(closes[entry_row]),
                exit_close=float(closes[exit_row]),
                entry_row=entry_row,
                exit_row=exit_row,
                profit=trend_profit(float(closes[entry_row]), float(closes[exit_row]), entry_direction),
                exit_reason=reason,
            )
        )
        entry_row = None
        entry_direction = 0

    for d in range(n):
        row = TraceRow(date=dates[d])
        opened_today = False
        closed_today = False

        t = d - cfg.cp_lag_days
        if t in cp_proba_by_t:
            proba = cp_proba_by_t[t]
            row.cp_proba = proba
            if proba >= cfg.cp_threshold:
                row.cp_signal = 1
                if entry_row is not None:
                    close_position(d, "changepoint")
                    closed_today = True
                window_id += 1
                window_start = t
                window_had_position = False

        if window_start is not None:
            row.window_id = window_id
            if d - window_start + 1 >= cfg.min_window_days:
                tof_row = tof_features(
                    closes[window_start : d + 1],
                    volumes[window_start : d + 1],
                    log_mode=cfg.log_mode,
                )
                proba = tof_score(window_start, d, tof_row)
                signal = int(proba >= cfg.tof_threshold)
                row.tof_proba = proba
                row.tof_signal = signal
                if signal == 1 and entry_row is None and not window_had_position:
                    entry_row = d
                    entry_direction = tof_row.direction_hint
                    window_had_position = True
                    opened_today = True
                elif signal == 0 and entry_row is not None and not cfg.hold_until_changepoint:
                    close_position(d, "tof_flat")
                    closed_today = True

        row.direction = entry_direction
        if opened_today and closed_today:
            row.position_state = "exit_enter"
        elif opened_today:
            row.position_state = "enter"
        elif closed_today:
            row.position_state = "exit"
        elif entry_row is not None:
            row.position_state = "in"
        else:
            row.position_state = "flat"
        trace.rows.append(row)

    if entry_row is not None:
        close_position(n - 1, "series_end")
        trace.rows[-1].position_state = "exit"
        trace.rows[-1].direction = trace.positions[-1].direction

    stats = StockStats.from_positions(series.stockname, trace.positions)
    return trace, stats


def clip_windows_to_span(
    windows: Sequence[ExpertWindow],
    quotes: QuoteSeries,
    start_date: Date | None = None,
    end_date: Date | None = None,
) -> list[ExpertWindow]:
    """Restrict windows to a date span, trimming the ones that straddle it.

    Window dates need not exist in ``quotes``; boundaries snap inward to the
    nearest covered row, so this also re-bases windows onto a sliced series.
    """
    from dataclasses import replace as _replace

    dates = quotes.dates
    lo = bisect.bisect_left(dates, start_date) if start_date else 0
    hi = (bisect.bisect_right(dates, end_date) - 1) if end_date else len(quotes) - 1

    out: list[ExpertWindow] = []
    for w in windows:
        s = bisect.bisect_left(dates, w.start_date)  # first row at or after the start
        e = bisect.bisect_right(dates, w.end_date) - 1  # last row at or before the end
        s2, e2 = max(s, lo), min(e, hi)
        if s2 > e2:
            continue
        out.append(_replace(w, start_date=dates[s2], end_date=dates[e2]))
    return out


def expert_position_stats(series: QuoteSeries, windows: Sequence[ExpertWindow]) -> StockStats:
    """Positions an expert's labels imply: every trend window held end to end."""
    positions: list[Position] = []
    for w in windows:
        if w.tendency != TREND:
            continue
        i0 = series.index_of(w.start_date)
        i1 = series.index_of(w.end_date)
        positions.append(
            Position(
                stockname=series.stockname,
                direction=w.direction,
                entry_date=w.start_date,
                exit_date=w.end_date,
                entry_close=float(series.closes[i0]),
                exit_close=float(series.closes[i1]),
                entry_row=i0,
                exit_row=i1,
                profit=trend_profit(float(series.closes[i0]), float(series.closes[i1]), w.direction),
                exit_reason="window_end",
            )
        )
    return StockStats.from_positions(series.stockname, positions)


def expert_baseline(series: QuoteSeries, windows: Sequence[ExpertWindow]) -> BacktestReport:
    """Profit report of the labels themselves (no lag, perfect hindsight)."""
    if not windows:
        raise EmptyInputError("no windows for baseline")
    stats = expert_position_stats(series, windows)
    span = (
        series.index_of(windows[-1].end_date) - series.index_of(windows[0].start_date) + 1
    )
    return aggregate([stats], num_datapoints=span)
