"""Fidelity metrics for generated vectors and classification metrics for the IDS proxy."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError


# --------------------------------------------------------------------------- similarity

def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(getattr(x, "bits", x), dtype=np.float64).reshape(-1)
    y = np.asarray(getattr(y, "bits", y), dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"vectors differ in length: {x.size} vs {y.size}")
    return x, y


def cosine_similarity(x, y) -> float:
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise UndefinedMetricError("cosine similarity is undefined for a zero vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def pearson_correlation(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise UndefinedMetricError("correlation needs at least two entries")
    # anchoring on the first entry makes exactly representable shifts cancel before any rounding
    x, y = x - x[0], y - y[0]
    xc, yc = x - x.mean(), y - y.mean()
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx == 0 or ny == 0:
        raise UndefinedMetricError("correlation is undefined for a constant vector")
    return float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))


class PairingStrategy(Enum):
    NEAREST_NEIGHBOR = "nearest_neighbor"
    RANDOM_PAIRS = "random_pairs"


@dataclass(frozen=True)
class SimilarityReport:
    mean_cosine: float
    mean_pearson: float
    strategy: PairingStrategy
    n_generated: int
    n_reference: int
    n_cosine_pairs: int
    n_pearson_pairs: int

    TSV_HEADER = ("strategy", "mean_cosine", "mean_pearson", "n_generated", "n_reference",
                  "n_cosine_pairs", "n_pearson_pairs")

    def tsv_row(self) -> str:
        return "\t".join([self.strategy.value, f"{self.mean_cosine:.6f}", f"{self.mean_pearson:.6f}",
                          str(self.n_generated), str(self.n_reference),
                          str(self.n_cosine_pairs), str(self.n_pearson_pairs)])


def _stack(vectors) -> tuple[np.ndarray, object]:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors).astype(np.float64), None
    vectors = list(vectors)
    modes = {getattr(v, "mode", None) for v in vectors}
    if len(modes) > 1:
        raise DimensionError("vectors of mixed modes")
    return np.array([np.asarray(getattr(v, "bits", v)) for v in vectors], dtype=np.float64), modes.pop() if modes else None


def _row_stats(m: np.ndarray):
    norms = np.linalg.norm(m, axis=1)
    anchored = m - m[:, :1]
    centered = anchored - anchored.mean(axis=1, keepdims=True)
    cnorms = np.linalg.norm(centered, axis=1)
    return norms, centered, cnorms


def dataset_similarity_report(generated, reference,
                              strategy: PairingStrategy = PairingStrategy.NEAREST_NEIGHBOR,
                              seed: int = 0, chunk: int = 1024) -> SimilarityReport:
    """Mean cosine similarity and Pearson correlation between generated and reference vectors.

    Nearest-neighbor pairs each generated vector with the reference of highest
    cosine (first index on ties); random pairing draws one uniform reference
    per generated vector from ``seed``. Pearson is computed on the same pairs.
    Pairs for which a metric is undefined (zero or constant vectors) are left
    out of that metric's mean; the report counts the pairs that were used.
    """
    g, g_mode = _stack(generated)
    r, r_mode = _stack(reference)
    if g.shape[0] == 0 or r.shape[0] == 0:
        raise ValueError("both vector sets must be nonempty")
    if g.shape[1] != r.shape[1] or (g_mode is not None and r_mode is not None and g_mode is not r_mode):
        raise DimensionError("generated and reference vectors use different encodings")

    g_norm, g_cent, g_cnorm = _row_stats(g)
    r_norm, r_cent, r_cnorm = _row_stats(r)

    if strategy is PairingStrategy.NEAREST_NEIGHBOR:
        r_ok = r_norm > 0
        if not r_ok.any():
            raise UndefinedMetricError("every reference vector is zero")
        r_unit = np.where(r_ok[:, None], r / np.where(r_ok, r_norm, 1.0)[:, None], 0.0)
        match = np.full(g.shape[0], -1)
        cos = np.full(g.shape[0], np.nan)
        for s in range(0, g.shape[0], chunk):
            block = g[s:s + chunk]
            bn = g_norm[s:s + chunk]
            sims = (block @ r_unit.T) / np.where(bn > 0, bn, 1.0)[:, None]
            sims[:, ~r_ok] = -np.inf
            best = np.argmax(sims, axis=1)
            match[s:s + chunk] = best
            cos[s:s + chunk] = np.where(bn > 0, sims[np.arange(len(best)), best], np.nan)
    else:
        rng = np.random.default_rng(seed)
        match = rng.integers(0, r.shape[0], size=g.shape[0])
        denom = g_norm * r_norm[match]
        cos = np.where(denom > 0, (g * r[match]).sum(axis=1) / np.where(denom > 0, denom, 1.0), np.nan)

    cos_ok = ~np.isnan(cos) & (match >= 0)
    pden = g_cnorm * r_cnorm[np.maximum(match, 0)]
    p_ok = (pden > 0) & (match >= 0)
    pearson = (g_cent[p_ok] * r_cent[match[p_ok]]).sum(axis=1) / pden[p_ok]
    if not cos_ok.any():
        raise UndefinedMetricError("no generated/reference pair has a defined cosine similarity")
    return SimilarityReport(
        mean_cosine=float(np.clip(cos[cos_ok], -1, 1).mean()),
        mean_pearson=float(np.clip(pearson, -1, 1).mean()) if p_ok.any() else float("nan"),
        strategy=strategy,
        n_generated=g.shape[0],
        n_reference=r.shape[0],
        n_cosine_pairs=int(cos_ok.sum()),
        n_pearson_pairs=int(p_ok.sum()),
    )


# --------------------------------------------------------------------------- classification

@dataclass(frozen=True)
class ClassTally:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ConfusionTally:
    """One-vs-rest TP/FP/TN/FN counts per class.

    A single-class tally is an ordinary binary confusion matrix.
    """

    classes: tuple[str, ...]
    counts: tuple[ClassTally, ...]

    def __post_init__(self):
        if len(self.classes) != len(self.counts) or not self.classes:
            raise ValueError("one tally per class required")
        if len({c.total for c in self.counts}) != 1:
            raise ValueError("every class tally must cover the same evaluated items")

    @property
    def total(self) -> int:
        return self.counts[0].total

    @classmethod
    def binary(cls, tp: int, tn: int, fp: int, fn: int, name: str = "positive") -> "ConfusionTally":
        return cls((name,), (ClassTally(tp, fp, tn, fn),))

    @classmethod
    def from_predictions(cls, y_true: Sequence, y_pred: Sequence, classes: Sequence) -> "ConfusionTally":
        y_true, y_pred = list(y_true), list(y_pred)
        if len(y_true) != len(y_pred):
            raise DimensionError("one prediction per label required")
        n = len(y_true)
        tallies = []
        for c in classes:
            tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
            fp = sum(t != c and p == c for t, p in zip(y_true, y_pred))
            fn = sum(t == c and p != c for t, p in zip(y_true, y_pred))
            tallies.append(ClassTally(tp, fp, n - tp - fp - fn, fn))
        return cls(tuple(getattr(c, "value", str(c)) for c in classes), tuple(tallies))


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    support: dict[str, int]
    auc: float | None = None
    per_class_auc: dict[str, float] = field(default_factory=dict)
    degenerate: tuple[tuple[str, str], ...] = ()

    @property
    def macro_f1(self) -> float:
        """Unweighted mean F1 over classes that occur in the evaluated labels."""
        present = [c for c, s in self.support.items() if s > 0] or list(self.f1)
        return float(np.mean([self.f1[c] for c in present]))

    TSV_HEADER = ("class", "precision", "recall", "f1", "support")

    def tsv(self) -> str:
        lines = ["\t".join(self.TSV_HEADER)]
        for c in self.precision:
            lines.append(f"{c}\t{self.precision[c]:.6f}\t{self.recall[c]:.6f}\t{self.f1[c]:.6f}\t{self.support[c]}")
        lines.append(f"accuracy\t\t\t{self.accuracy:.6f}\t{sum(self.support.values())}")
        lines.append(f"macro_f1\t\t\t{self.macro_f1:.6f}\t")
        lines.append(f"macro_auc\t\t\t{'' if self.auc is None else f'{self.auc:.6f}'}\t")
        return "\n".join(lines) + "\n"


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def classification_metrics(tally: ConfusionTally, auc: float | None = None,
                           per_class_auc: dict[str, float] | None = None) -> ClassificationReport:
    """Accuracy, per-class precision/recall/F1 from confusion counts.

    Precision, recall and F1 are 0 where their denominator is 0; such cells
    are listed in ``degenerate`` as (class, metric).
    """
    if tally.total <= 0:
        raise ValueError("confusion tally is empty")
    if len(tally.counts) == 1:
        c = tally.counts[0]
        accuracy = (c.tp + c.tn) / c.total
    else:
        # with one-vs-rest tallies every correct prediction is a TP of exactly one class
        accuracy = sum(c.tp for c in tally.counts) / tally.total
    precision, recall, f1, support, degenerate = {}, {}, {}, {}, []
    for name, c in zip(tally.classes, tally.counts):
        p, p_bad = _ratio(c.tp, c.tp + c.fp)
        r, r_bad = _ratio(c.tp, c.tp + c.fn)
        if p + r > 0:
            f = 2 * p * r / (p + r)
        else:
            f = 0.0
            degenerate.append((name, "f1"))
        if p_bad:
            degenerate.append((name, "precision"))
        if r_bad:
            degenerate.append((name, "recall"))
        precision[name], recall[name], f1[name], support[name] = p, r, f, c.tp + c.fn
    return ClassificationReport(accuracy, precision, recall, f1, support, auc,
                                dict(per_class_auc or {}), tuple(degenerate))


def roc_auc(scores: Sequence[float], labels: Sequence) -> float:
    """Area under the ROC curve as the Mann-Whitney U statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError("one label per score required")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_ovr_auc(probs: np.ndarray, y_true: Sequence[int], class_names: Sequence[str]) -> tuple[float | None, dict[str, float]]:
    """One-vs-rest AUC per class (classes with both outcomes present) and their mean."""
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true)
    per_class = {}
    for k, name in enumerate(class_names):
        positives = y_true == k
        if positives.any() and not positives.all():
            per_class[name] = roc_auc(probs[:, k], positives)
    return (float(np.mean(list(per_class.values()))) if per_class else None), per_class
