"""Reference splitting, confusion-matrix accuracy measures and Monte-Carlo aggregation."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, LidarHsiError
from .raster import ClassMap
from .seeding import rng as make_rng

DEFAULT_FRACTION = 0.01
DEFAULT_MIN_PER_CLASS = 20
METRICS = ("oa", "aa", "kappa")
TIMINGS = ("train_seconds", "test_seconds")


def train_count(n_class: int, fraction: float = DEFAULT_FRACTION, min_per_class: int = DEFAULT_MIN_PER_CLASS) -> int:
    """``max(round_half_up(fraction * n_class), min_per_class)``, computed in decimal."""
    share = (Decimal(repr(float(fraction))) * n_class).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return max(int(share), int(min_per_class))


@dataclass(frozen=True, eq=False)
class Split:
    """Flat (row-major) pixel indices of the training and test samples."""

    train: np.ndarray
    test: np.ndarray


def split_reference(
    class_map: ClassMap | np.ndarray,
    fraction: float = DEFAULT_FRACTION,
    min_per_class: int = DEFAULT_MIN_PER_CLASS,
    seed: int = 0,
) -> Split:
    """Per class, draw ``train_count`` labelled pixels uniformly without replacement for training.

    Every other labelled pixel becomes a test sample.  Both index arrays are
    sorted.  Classes with ``min_per_class`` or fewer pixels are rejected.
    """
    labels = class_map.labels if isinstance(class_map, ClassMap) else np.asarray(class_map)
    if not 0 < fraction <= 1:
        raise DataError("fraction must be in (0, 1]")
    flat = labels.ravel()
    gen = make_rng(seed)
    train, test = [], []
    classes = np.unique(flat[flat > 0])
    if classes.size == 0:
        raise DataError("class map has no labelled pixels")
    for c in classes:
        members = np.flatnonzero(flat == c)
        if members.size <= min_per_class:
            raise DataError(f"class {c} has {members.size} labelled pixels; more than {min_per_class} are required")
        k = min(train_count(members.size, fraction, min_per_class), members.size)
        chosen = gen.choice(members.size, size=k, replace=False)
        mask = np.zeros(members.size, dtype=bool)
        mask[chosen] = True
        train.append(members[mask])
        test.append(members[~mask])
    train = np.sort(np.concatenate(train))
    test = np.sort(np.concatenate(test))
    if test.size == 0:
        warnings.warn("every labelled pixel went to training; the test set is empty", RuntimeWarning, stacklevel=2)
    return Split(train, test)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are reference classes, columns predicted classes; index ``i`` is class ``i + 1``."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or np.any(counts < 0):
            raise DataError("confusion matrix must be square with non-negative entries")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion(true, predicted, n_classes: int | None = None) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true.shape != predicted.shape:
        raise DataError("true and predicted labels differ in length")
    if true.size and (true.min() < 1 or predicted.min() < 1):
        raise DataError("class ids must be >= 1")
    k = int(max(true.max(initial=0), predicted.max(initial=0))) if n_classes is None else int(n_classes)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true - 1, predicted - 1), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class Metrics:
    oa: float
    aa: float
    kappa: float
    degenerate: bool = False


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Overall accuracy, mean per-class recall over non-empty reference rows, and Cohen's kappa.

    When chance agreement is 1 the kappa ratio is undefined; it is then 1 for
    perfect agreement and 0 otherwise, and the result is flagged degenerate.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    p_o = np.trace(counts) / total
    present = rows > 0
    aa = float(np.mean(np.diag(counts)[present] / rows[present]))
    p_e = float(np.sum(rows * cols) / (total * total))
    if math.isclose(p_e, 1.0, rel_tol=0, abs_tol=1e-12):
        return Metrics(float(p_o), aa, 1.0 if p_o == 1 else 0.0, True)
    kappa = (p_o - p_e) / (1.0 - p_e)
    return Metrics(float(p_o), aa, float(min(max(kappa, -1.0), 1.0)))


@dataclass(frozen=True, eq=False)
class RunResult:
    run: int
    confusion: ConfusionMatrix
    metrics: Metrics
    train_seconds: float
    test_seconds: float

    def value(self, name: str) -> float:
        if name in TIMINGS:
            return getattr(self, name)
        return getattr(self.metrics, name)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-run results of one classifier plus mean and sample standard deviation."""

    classifier: str
    runs: list[RunResult] = field(default_factory=list)

    def __post_init__(self):
        if not self.runs:
            raise DataError("a report needs at least one run")
        object.__setattr__(self, "runs", sorted(self.runs, key=lambda r: r.run))

    def values(self, name: str) -> np.ndarray:
        return np.array([r.value(name) for r in self.runs])

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        v = self.values(name)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def _cell(report: EvalReport, name: str, scale: float, digits: int) -> str:
    return f"{report.mean(name) * scale:.{digits}f}±{report.std(name) * scale:.{digits}f}"


def _rows(names):
    for name in names:
        if name in ("oa", "aa"):
            yield name, name.upper(), 100.0, 2
        elif name == "kappa":
            yield name, "K", 100.0, 2
        else:
            yield name, name.replace("_seconds", " time (s)"), 1.0, 3


def format_table(reports: Sequence[EvalReport], names: Sequence[str] = METRICS + TIMINGS) -> str:
    """Aligned text: one row per measure, one ``mean±std`` column per classifier (accuracies in percent)."""
    header = ["", *(r.classifier.upper() for r in reports)]
    body = [[label, *(_cell(r, key, scale, digits) for r in reports)] for key, label, scale, digits in _rows(names)]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in [header, *body]]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def format_tsv(reports: Sequence[EvalReport], names: Sequence[str] = METRICS) -> str:
    """Tab-separated ``mean±std`` table at full precision (no rounding, no scaling)."""
    lines = ["metric\t" + "\t".join(r.classifier for r in reports)]
    for name in names:
        lines.append(name + "\t" + "\t".join(f"{r.mean(name)!r}±{r.std(name)!r}" for r in reports))
    return "\n".join(lines) + "\n"


def format_runs_tsv(reports: Sequence[EvalReport], names: Sequence[str] = METRICS) -> str:
    lines = ["classifier\trun\t" + "\t".join(names)]
    for r in reports:
        for run in r.runs:
            lines.append(f"{r.classifier}\t{run.run}\t" + "\t".join(repr(run.value(n)) for n in names))
    return "\n".join(lines) + "\n"


def timed(fn: Callable, *args, **kwargs):
    """``(result, wall seconds)``."""
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


class RunFailure(LidarHsiError):
    def __init__(self, run: int, cause: BaseException):
        super().__init__(f"run {run} failed: {cause}")
        self.run = run
        self.cause = cause


def monte_carlo(
    run_once: Callable[[int], tuple[np.ndarray, np.ndarray, float, float]],
    runs: int = 10,
    classifier: str = "",
    n_classes: int | None = None,
    threads: int = 1,
) -> EvalReport:
    """Aggregate ``runs`` calls of ``run_once(run_index) -> (true, predicted, train_s, test_s)``.

    Runs may execute concurrently; results are reduced in run-index order.
    A failing run aborts the whole evaluation with its index.
    """
    if runs < 1:
        raise DataError("runs must be >= 1")

    def one(i):
        try:
            true, pred, t_train, t_test = run_once(i)
        except Exception as exc:  # noqa: BLE001 - re-raised with the run index
            raise RunFailure(i, exc) from exc
        cm = confusion(true, pred, n_classes)
        return RunResult(i, cm, metrics(cm), float(t_train), float(t_test))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(runs)))
    else:
        results = [one(i) for i in range(runs)]
    return EvalReport(classifier, results)
