"""Confusion matrices, completeness / correctness / overall accuracy and run comparison."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from utils.errors import ConfigError, DataError, DomainError


@dataclass
class ConfusionMatrix:
    """Counts with rows = reference class and columns = predicted class."""

    layer: str
    class_names: tuple
    counts: np.ndarray = None

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        n = len(self.class_names)
        if self.counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (n, n):
            raise DomainError(f"Confusion counts {self.counts.shape} do not fit {n} classes")
        if np.any(self.counts < 0):
            raise DomainError("Confusion counts must be non-negative")

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        _check_same_domain(self, other)
        return ConfusionMatrix(self.layer, self.class_names, self.counts + other.counts)


def _check_same_domain(a, b):
    if a.layer != b.layer or a.class_names != b.class_names:
        raise ConfigError(f"Confusion matrices differ in layer or classes ({a.layer} vs {b.layer})")


def accumulate(cm, reference, predicted, mask=None):
    """Add the (reference, predicted) pairs of all unmasked sites; ``mask`` True means counted.

    Returns a new matrix; ``cm`` is left unchanged.
    """
    reference = np.asarray(reference, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if reference.shape != predicted.shape:
        raise DomainError(f"Reference {reference.shape} and prediction {predicted.shape} differ in shape")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != reference.shape:
            raise DomainError(f"Mask {mask.shape} does not match the labelings {reference.shape}")
        reference, predicted = reference[mask], predicted[mask]
    n = len(cm.class_names)
    for values in (reference, predicted):
        if values.size and (values.min() < 0 or values.max() >= n):
            raise DomainError(f"{cm.layer} label outside [0, {n})")
    counts = np.bincount(reference.ravel() * n + predicted.ravel(), minlength=n * n).reshape(n, n)
    return ConfusionMatrix(cm.layer, cm.class_names, cm.counts + counts)


@dataclass
class LayerMetrics:
    """Per-class completeness and correctness (nan where undefined) and overall accuracy."""

    layer: str
    class_names: tuple
    completeness: np.ndarray
    correctness: np.ndarray
    overall_accuracy: float
    n_sites: int


def metrics(cm):
    if cm.total == 0:
        raise DataError(f"Confusion matrix of layer {cm.layer} is empty")
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    rows, cols = counts.sum(axis=1), counts.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        completeness = np.where(rows > 0, diag / rows, np.nan)
        correctness = np.where(cols > 0, diag / cols, np.nan)
    return LayerMetrics(
        layer=cm.layer,
        class_names=cm.class_names,
        completeness=completeness,
        correctness=correctness,
        overall_accuracy=float(diag.sum() / counts.sum()),
        n_sites=cm.total,
    )


@dataclass
class RunComparison:
    """Signed differences b − a and which run wins per metric ("a", "b" or "tie")."""

    layer: str
    class_names: tuple
    completeness_delta: np.ndarray
    correctness_delta: np.ndarray
    oa_delta: float
    verdict: dict


def _winner(delta):
    if delta is None or math.isnan(delta) or delta == 0:
        return "tie"
    return "b" if delta > 0 else "a"


def compare_runs(cm_a, cm_b):
    _check_same_domain(cm_a, cm_b)
    a, b = metrics(cm_a), metrics(cm_b)
    cm_delta = b.completeness - a.completeness
    cr_delta = b.correctness - a.correctness
    verdict = {"OA": _winner(b.overall_accuracy - a.overall_accuracy)}
    for k, name in enumerate(cm_a.class_names):
        verdict[f"{name}.Cm"] = _winner(float(cm_delta[k]))
        verdict[f"{name}.Cr"] = _winner(float(cr_delta[k]))
    return RunComparison(
        layer=cm_a.layer,
        class_names=cm_a.class_names,
        completeness_delta=cm_delta,
        correctness_delta=cr_delta,
        oa_delta=b.overall_accuracy - a.overall_accuracy,
        verdict=verdict,
    )


def _pct(value, signed=False):
    if value is None or math.isnan(value):
        return "n/a"
    return f"{value * 100:+.1f}" if signed else f"{value * 100:.1f}"


def format_table(results, run_names=None):
    """Text table with one row per class and a Cm/Cr column pair per run, then OA.

    Args:
        results: list of LayerMetrics of the same layer, one per run
        run_names: column group titles
    """
    run_names = run_names or [f"run{k + 1}" for k in range(len(results))]
    first = results[0]
    width = max(len(n) for n in first.class_names + ("class",)) + 2
    head = "".join(f"{name:>16}" for name in run_names)
    sub = "".join(f"{'Cm.':>8}{'Cr.':>8}" for _ in results)
    lines = [f"Layer: {first.layer}", f"{'':<{width}}{head}", f"{'class':<{width}}{sub}"]
    for k, name in enumerate(first.class_names):
        cells = "".join(f"{_pct(m.completeness[k]):>8}{_pct(m.correctness[k]):>8}" for m in results)
        lines.append(f"{name:<{width}}{cells}")
    lines.append(f"{'OA':<{width}}" + "".join(f"{_pct(m.overall_accuracy):>16}" for m in results))
    return "\n".join(lines)


def format_comparison(comparison, names=("crf", "tcrf")):
    """Per-class deltas (percentage points) of run b against run a."""
    width = max(len(n) for n in comparison.class_names + ("class",)) + 2
    lines = [
        f"Layer: {comparison.layer}  ({names[1]} - {names[0]}, points)",
        f"{'class':<{width}}{'dCm.':>8}{'dCr.':>8}",
    ]
    for k, name in enumerate(comparison.class_names):
        lines.append(
            f"{name:<{width}}{_pct(comparison.completeness_delta[k], True):>8}"
            f"{_pct(comparison.correctness_delta[k], True):>8}"
        )
    lines.append(f"{'OA':<{width}}{_pct(comparison.oa_delta, True):>8}   winner: {comparison.verdict['OA']}")
    return "\n".join(lines)


def _csv_value(value):
    return "nan" if math.isnan(value) else repr(float(value))


def metrics_csv(results):
    """CSV text ``layer,class,completeness,correctness`` plus an ``layer,OA,<value>,`` row per layer."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["layer", "class", "completeness", "correctness"])
    for m in results:
        for k, name in enumerate(m.class_names):
            writer.writerow([m.layer, name, _csv_value(m.completeness[k]), _csv_value(m.correctness[k])])
        writer.writerow([m.layer, "OA", _csv_value(m.overall_accuracy), ""])
    return buffer.getvalue()
