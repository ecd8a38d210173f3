"""Classification metrics, stratified cross-validation and grid search."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import gbdt
from .errors import FoldDegenerateError, ShapeError, SingleClassError


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the rank statistic.

    Equals the probability that a positive outscores a negative, counting
    ties as one half, so the tie convention is exact rather than an artifact
    of threshold interpolation.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError("scores and labels must be equal-length vectors")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    sv = s[order]
    new_group = np.empty(len(sv), dtype=bool)
    new_group[0] = True
    new_group[1:] = sv[1:] != sv[:-1]
    starts = np.nonzero(new_group)[0]
    ends = np.append(starts[1:], len(sv))
    avg_rank = (starts + ends - 1) / 2.0 + 1.0  # 1-based average rank per tie group
    ranks = np.empty(len(sv), dtype=np.float64)
    ranks[order] = np.repeat(avg_rank, ends - starts)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class ClassReport:
    """Per-class precision/recall/F1 with the usual aggregate rows.

    Metrics with a zero denominator are reported as 0 and recorded in
    ``flags`` so degenerate extremes stay well defined.
    """

    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    support: dict[int, int]
    accuracy: float
    auc: float | None
    f1_macro: float
    weighted_avg: dict[str, float]
    flags: tuple[str, ...]


def _safe_div(num: float, den: float, flags: list[str], flag: str) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def class_report(
    pred: Sequence[int], labels: Sequence[int], scores: Sequence[float] | None = None
) -> ClassReport:
    p = np.asarray(pred, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ShapeError("pred and labels must be equal-length")
    flags: list[str] = []
    precision: dict[int, float] = {}
    recall: dict[int, float] = {}
    f1: dict[int, float] = {}
    support: dict[int, int] = {}
    for c in (0, 1):
        tp = int(((p == c) & (y == c)).sum())
        fp = int(((p == c) & (y != c)).sum())
        fn = int(((p != c) & (y == c)).sum())
        support[c] = tp + fn
        precision[c] = _safe_div(tp, tp + fp, flags, f"zero_predicted_class_{c}")
        recall[c] = _safe_div(tp, tp + fn, flags, f"zero_support_class_{c}")
        denom = precision[c] + recall[c]
        f1[c] = 0.0 if denom == 0 else 2 * precision[c] * recall[c] / denom

    accuracy = float((p == y).mean()) if len(y) else 0.0
    auc: float | None = None
    if scores is not None:
        try:
            auc = roc_auc(scores, y)
        except SingleClassError:
            flags.append("auc_undefined_single_class")
    total = support[0] + support[1]
    weighted_avg = {
        name: (vals[0] * support[0] + vals[1] * support[1]) / total if total else 0.0
        for name, vals in (("precision", precision), ("recall", recall), ("f1", f1))
    }
    return ClassReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=accuracy,
        auc=auc,
        f1_macro=(f1[0] + f1[1]) / 2.0,
        weighted_avg=weighted_avg,
        flags=tuple(flags),
    )


def f1_macro(pred: Sequence[int], labels: Sequence[int]) -> float:
    return class_report(pred, labels).f1_macro


SCORING = ("f1_macro", "auc", "accuracy", "f1_minority")


def _score(name: str, y_true: np.ndarray, proba: np.ndarray, threshold: float = 0.5) -> float:
    if name == "auc":
        return roc_auc(proba, y_true)
    pred = (proba >= threshold).astype(np.int64)
    report = class_report(pred, y_true)
    if name == "f1_macro":
        return report.f1_macro
    if name == "accuracy":
        return report.accuracy
    if name == "f1_minority":
        return report.f1[1]
    raise ValueError(f"unknown scoring {name!r}; expected one of {SCORING}")


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order determined by content only, so folding ignores input order."""
    # lexsort treats the last key as primary: X[:, 0] first, then X[:, 1], ... then y
    return np.lexsort((y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1)))


def stratified_fold_indices(
    X: np.ndarray, y: np.ndarray, k: int, seed: int
) -> list[np.ndarray]:
    """Seed-shuffled stratified folds, each returned in canonical row order."""
    if k < 2:
        raise FoldDegenerateError("k must be >= 2")
    if k > len(y):
        raise FoldDegenerateError(f"cannot make {k} folds from {len(y)} rows")
    canon = _canonical_order(X, y)
    rank = np.empty(len(y), dtype=np.int64)
    rank[canon] = np.arange(len(y))
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0  # rotates across classes so no fold stays empty when k is near n
    for c in sorted(np.unique(y)):
        rows = canon[y[canon] == c]
        shuffled = rows[rng.permutation(rows.size)]
        for r in shuffled:
            folds[cursor % k].append(int(r))
            cursor += 1
    out: list[np.ndarray] = []
    for fold in folds:
        if not fold:
            raise FoldDegenerateError("a fold came out empty")
        arr = np.asarray(fold, dtype=np.int64)
        out.append(arr[np.argsort(rank[arr], kind="stable")])
    return out


def _kfold_scores(
    X: np.ndarray,
    y: np.ndarray,
    params: gbdt.GbdtParams,
    k: int,
    scoring: str,
    seed: int,
) -> tuple[list[float], list[float]]:
    Xa = np.asarray(X, dtype=np.float64)
    ya = np.asarray(y, dtype=np.int64)
    folds = stratified_fold_indices(Xa, ya, k, seed)
    rank = np.empty(len(ya), dtype=np.int64)
    rank[_canonical_order(Xa, ya)] = np.arange(len(ya))
    scores: list[float] = []
    seconds: list[float] = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[j] for j in range(k) if j != i])
        train_idx = train_idx[np.argsort(rank[train_idx], kind="stable")]
        if len(np.unique(ya[train_idx])) < 2:
            raise FoldDegenerateError(f"fold {i}: training side has a single class")
        if scoring == "auc" and len(np.unique(ya[test_idx])) < 2:
            raise FoldDegenerateError(f"fold {i}: held-out side has a single class")
        started = time.perf_counter()
        model = gbdt.fit(Xa[train_idx], ya[train_idx], params)
        seconds.append(time.perf_counter() - started)
        proba = gbdt.predict_proba(model, Xa[test_idx])
        scores.append(_score(scoring, ya[test_idx], proba))
    return scores, seconds


def kfold_cv(
    X: object,
    y: object,
    params: gbdt.GbdtParams,
    k: int = 5,
    scoring: str = "f1_macro",
    seed: int = 0,
) -> float:
    """Mean held-out score over seed-shuffled stratified folds."""
    scores, _ = _kfold_scores(np.asarray(X, dtype=np.float64), np.asarray(y), params, k, scoring, seed)
    return float(np.mean(scores))


@dataclass(frozen=True)
class SearchEntry:
    params: dict[str, object]
    mean_score: float
    fold_scores: tuple[float, ...]
    fit_seconds: tuple[float, ...]


@dataclass(frozen=True)
class SearchResult:
    entries: tuple[SearchEntry, ...]
    best_params: dict[str, object]
    best_score: float
    param_names: tuple[str, ...]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(list(self.param_names) + ["mean_score", "fit_seconds"])
            for e in self.entries:
                writer.writerow(
                    [e.params[name] for name in self.param_names]
                    + [repr(e.mean_score), repr(sum(e.fit_seconds))]
                )


def grid_search(
    X: object,
    y: object,
    grid: Mapping[str, Sequence[object]],
    base_params: gbdt.GbdtParams | None = None,
    mode: str = "full",
    n_draws: int | None = None,
    k: int = 5,
    scoring: str = "f1_macro",
    seed: int = 0,
) -> SearchResult:
    """Score every grid point (or seeded draws without replacement) by CV.

    ``grid`` maps GbdtParams field names to candidate values; everything not
    in the grid comes from ``base_params``.
    """
    names = tuple(grid.keys())
    if not names or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must name at least one parameter with at least one value")
    combos = list(itertools.product(*[list(grid[name]) for name in names]))
    if mode == "randomized":
        if n_draws is None or n_draws < 1:
            raise ValueError("randomized mode needs n_draws >= 1")
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(combos), size=min(n_draws, len(combos)), replace=False)
        combos = [combos[int(i)] for i in pick]
    elif mode != "full":
        raise ValueError(f'mode must be "full" or "randomized", got {mode!r}')

    base = base_params or gbdt.GbdtParams()
    Xa = np.asarray(X, dtype=np.float64)
    ya = np.asarray(y)
    entries: list[SearchEntry] = []
    for combo in combos:
        assignment = dict(zip(names, combo))
        params = replace(base, **assignment)
        scores, seconds = _kfold_scores(Xa, ya, params, k, scoring, seed)
        entries.append(
            SearchEntry(
                params=assignment,
                mean_score=float(np.mean(scores)),
                fold_scores=tuple(scores),
                fit_seconds=tuple(seconds),
            )
        )
    best = max(entries, key=lambda e: e.mean_score)
    return SearchResult(
        entries=tuple(entries),
        best_params=dict(best.params),
        best_score=best.mean_score,
        param_names=names,
    )
