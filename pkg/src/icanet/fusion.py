"""Decision-level fusion, accuracy, confusion matrices and the weight-ratio sweep."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dataio import LABELS

NUM_CLASSES = len(LABELS)


def score_vector(probs, tol: float = 1e-6) -> tuple[float, ...]:
    p = tuple(float(v) for v in np.asarray(probs, dtype=np.float64).ravel())
    if len(p) != NUM_CLASSES:
        raise ValueError(f"score vector needs {NUM_CLASSES} entries, got {len(p)}")
    if any(not 0.0 <= v <= 1.0 for v in p):
        raise ValueError(f"score entries must lie in [0, 1]: {p}")
    if abs(sum(p) - 1.0) > tol:
        raise ValueError(f"score vector sums to {sum(p)}, not 1")
    return p


@dataclass(frozen=True)
class FusionWeights:
    rgb: float = 4
    flow: float = 2
    audio: float = 4

    def __post_init__(self):
        w = self.as_tuple()
        if any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise ValueError(f"fusion weights must be non-negative and not all zero: {w}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rgb, self.flow, self.audio)

    def normalized(self) -> tuple[Fraction, Fraction, Fraction]:
        w = [Fraction(v) for v in self.as_tuple()]
        s = sum(w)
        return tuple(v / s for v in w)

    @classmethod
    def parse(cls, text: str) -> "FusionWeights":
        """Parse ``"w_rgb:w_flow:w_audio"``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"fusion weights must look like 4:2:4, got {text!r}")
        return cls(*(float(p) for p in parts))

    def __str__(self):
        return ":".join(f"{v:g}" for v in self.as_tuple())


def fuse_scores(rgb, flow, audio, weights: FusionWeights = FusionWeights()) -> tuple[float, ...]:
    """Weighted average of the three score vectors.

    Evaluated in exact rational arithmetic and rounded once, so the result is
    independent of weight scale and of the order the modalities are summed.
    """
    exact = [tuple(map(Fraction, score_vector(v))) for v in (rgb, flow, audio)]
    return _fuse_exact(exact, weights.normalized())


def _fuse_exact(vecs, w) -> tuple[float, ...]:
    return tuple(
        float(sum(wk * v[i] for wk, v in zip(w, vecs)))
        for i in range(NUM_CLASSES))


def predict(fused) -> int:
    """Arg-max class; ties go to the lowest index."""
    p = score_vector(fused)
    return max(range(NUM_CLASSES), key=lambda i: (p[i], -i))


def _check_pairs(preds, labels):
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions vs {len(labels)} labels")
    if not len(preds):
        raise ValueError("accuracy of an empty evaluation is undefined")
    for v in itertools.chain(preds, labels):
        if not 0 <= int(v) < NUM_CLASSES:
            raise ValueError(f"class index {v} outside 0..{NUM_CLASSES - 1}")


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Multiclass accuracy: matches / total."""
    _check_pairs(preds, labels)
    return sum(int(p) == int(l) for p, l in zip(preds, labels)) / len(labels)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, ...], ...]  # rows = true class, cols = predicted

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(NUM_CLASSES))

    def accuracy(self) -> float:
        return self.trace / self.total

    def one_vs_rest(self, k: int) -> tuple[int, int, int, int]:
        """(TP, TN, FP, FN) treating class ``k`` as positive."""
        c = self.counts
        tp = c[k][k]
        fn = sum(c[k]) - tp
        fp = sum(c[t][k] for t in range(NUM_CLASSES)) - tp
        return tp, self.total - tp - fn - fp, fp, fn

    def binary_accuracy(self, k: int) -> float:
        """(TP + TN) / (TP + TN + FP + FN) for class ``k`` against the rest."""
        tp, tn, fp, fn = self.one_vs_rest(k)
        return (tp + tn) / (tp + tn + fp + fn)

    def per_class_accuracy(self) -> dict[str, float]:
        return {LABELS[k]: self.binary_accuracy(k) for k in range(NUM_CLASSES)}

    def as_lists(self) -> list[list[int]]:
        return [list(r) for r in self.counts]

    def format(self) -> str:
        w = max(7, *(len(l) for l in LABELS))
        lines = [f"{'true/pred':<{w}}" + "".join(f"{l:>{w + 1}}" for l in LABELS)]
        for k, row in enumerate(self.counts):
            lines.append(f"{LABELS[k]:<{w}}" + "".join(f"{c:>{w + 1}}" for c in row))
        return "\n".join(lines)


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions vs {len(labels)} labels")
    counts = [[0] * NUM_CLASSES for _ in range(NUM_CLASSES)]
    for p, t in zip(preds, labels):
        p, t = int(p), int(t)
        if not (0 <= p < NUM_CLASSES and 0 <= t < NUM_CLASSES):
            raise ValueError(f"class index outside 0..{NUM_CLASSES - 1}: true {t}, predicted {p}")
        counts[t][p] += 1
    return ConfusionMatrix(tuple(tuple(r) for r in counts))


def per_class_accuracy(preds, labels) -> dict[str, float]:
    _check_pairs(preds, labels)
    return confusion(preds, labels).per_class_accuracy()


def default_grid(total: int = 10) -> list[tuple[int, int, int]]:
    """All non-negative integer triples summing to ``total``, lexicographic."""
    return [(a, b, total - a - b) for a in range(total + 1) for b in range(total + 1 - a)]


def weight_grid_search(scores: Sequence[tuple], labels: Sequence[int],
                       grid: Sequence[tuple] | None = None) -> tuple[FusionWeights, float]:
    """Fusion ratio with the best accuracy; ties go to the smallest triple."""
    if not len(scores) or len(scores) != len(labels):
        raise ValueError("grid search needs aligned, non-empty scores and labels")
    grid = default_grid() if grid is None else list(grid)
    grid = [tuple(g) for g in grid if any(g)]
    if not grid:
        raise ValueError("grid search needs at least one non-zero ratio")
    exact = [[tuple(map(Fraction, score_vector(v))) for v in triple] for triple in scores]
    best = None
    for ratio in sorted(grid):
        w = FusionWeights(*ratio)
        wn = w.normalized()
        preds = [predict(_fuse_exact(vecs, wn)) for vecs in exact]
        acc = accuracy(preds, labels)
        if best is None or acc > best[1]:
            best = (w, acc)
    return best
