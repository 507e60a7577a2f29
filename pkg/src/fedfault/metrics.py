"""Accuracy, rank-based AUROC and per-round history records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

AUROC_REDUCTION = "macro-ovr"


def accuracy(predicted, true) -> float:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {true.shape}")
    if true.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predicted == true))


def confusion_counts(predicted, true, num_classes: int) -> np.ndarray:
    """``out[t, p]`` counts examples of true class ``t`` predicted as ``p``."""
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (np.asarray(true), np.asarray(predicted)), 1)
    return out


def auroc_binary(scores, labels) -> float | None:
    """Mann-Whitney AUROC with average ranks for ties.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_macro_ovr(probabilities, labels) -> float:
    """Unweighted mean of one-vs-rest AUROCs over classes present in ``labels``."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("macro AUROC needs at least two classes in the labels")
    per_class = [auroc_binary(probabilities[:, c], (labels == c).astype(int)) for c in present]
    return float(np.mean(per_class))


def sanitize_probabilities(probabilities: np.ndarray) -> tuple[np.ndarray, bool]:
    """Replace non-finite rows by the uniform distribution; report if any were hit."""
    bad = ~np.isfinite(probabilities).all(axis=1)
    if not bad.any():
        return probabilities, False
    out = probabilities.copy()
    out[bad] = 1.0 / probabilities.shape[1]
    return out, True


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    auroc: float | None
    nonfinite: bool


def evaluate_probabilities(probabilities: np.ndarray, labels: np.ndarray) -> Evaluation:
    """Accuracy and macro AUROC; corrupted rows count as uniform guesses."""
    bad = ~np.isfinite(probabilities).all(axis=1)
    probabilities, nonfinite = sanitize_probabilities(probabilities)
    hits = probabilities.argmax(axis=1) == labels
    # a uniform guess is right with probability 1/C
    acc = float((hits[~bad].sum() + bad.sum() / probabilities.shape[1]) / labels.size)
    try:
        auroc = auroc_macro_ovr(probabilities, labels)
    except ValueError:
        auroc = None
    return Evaluation(acc, auroc, nonfinite)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    test_accuracy: float
    test_auroc: float | None
    train_loss: float
    participated: str = ""
    uploaded: str = ""
    downloaded: str = ""
    nonfinite: bool = False


@dataclass
class RunHistory:
    records: list[RoundRecord] = field(default_factory=list)
    fingerprint: str = ""
    events: list[str] = field(default_factory=list)
    label: str = ""

    def append(self, record: RoundRecord) -> None:
        if self.records and record.round <= self.records[-1].round:
            raise ValueError(
                f"round {record.round} does not follow round {self.records[-1].round}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> RoundRecord:
        if not self.records:
            raise ValueError("empty history")
        return self.records[-1]

    def series(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        rounds = np.array([r.round for r in self.records])
        values = np.array(
            [np.nan if getattr(r, metric) is None else getattr(r, metric) for r in self.records],
            dtype=np.float64,
        )
        return rounds, values

    def summary(self) -> dict[str, float | int | None]:
        final = self.final
        return {
            "round": final.round,
            "accuracy": final.test_accuracy,
            "auroc": final.test_auroc,
            "train_loss": final.train_loss,
            "best_accuracy": max(r.test_accuracy for r in self.records),
            "nonfinite_events": len(self.events),
        }
