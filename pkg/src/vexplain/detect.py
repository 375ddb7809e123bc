"""Explanation size as a detection score.

Inputs the model gets wrong, and inputs far from what it was built for, tend
to need more features to pin down the prediction. Scoring a dataset with
(max softmax confidence, explanation size) pairs therefore supports both
incorrectness and out-of-distribution detection, evaluated here with ROC
curves / AUROC and a small KNN classifier over the two features.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .explain import explain
from .model import Network, Sample, infer
from .traversal import compute_traversal
from .verifier import PerturbationSpec


@dataclass(frozen=True)
class SampleScore:
    sample_id: int
    predicted: int
    correct: bool | None
    max_confidence: float
    explanation_size: int
    robust: bool
    error: str | None = None


@dataclass(frozen=True)
class RocCurve:
    """Threshold-sweep ROC curve; ``auroc`` is its trapezoidal area."""

    points: tuple[tuple[float, float], ...]
    auroc: float


def max_softmax(values: np.ndarray) -> float:
    """Maximum softmax probability of a logit vector, computed stably."""
    shifted = values - np.max(values)
    e = np.exp(shifted)
    return float(np.max(e) / np.sum(e))


def score_sample(
    network: Network,
    sample: Sample,
    sample_id: int,
    spec: PerturbationSpec,
    order_method: str,
    search_method: str,
    confidence_ranking: bool = True,
) -> SampleScore:
    logits = infer(network, sample.features)
    traversal = compute_traversal(network, sample.features, spec.epsilon, order_method)
    result = explain(
        network,
        sample.features,
        traversal,
        spec,
        search=search_method,
        confidence_ranking=confidence_ranking,
    )
    correct = None
    if sample.label is not None:
        if sample.label >= network.num_classes:
            raise ValueError(
                f"sample {sample_id}: label {sample.label} out of range"
            )
        correct = logits.predicted == sample.label
    return SampleScore(
        sample_id=sample_id,
        predicted=logits.predicted,
        correct=correct,
        max_confidence=max_softmax(logits.values),
        explanation_size=len(result.explanation),
        robust=result.robust,
    )


def score_dataset(
    network: Network,
    samples: Sequence[Sample],
    spec: PerturbationSpec,
    order_method: str = "bound-crown",
    search_method: str = "binary",
    confidence_ranking: bool = True,
    jobs: int = 1,
) -> list[SampleScore]:
    """One SampleScore per input sample, in input order. A failing sample is
    recorded with its error message and the run continues."""

    def one(item: tuple[int, Sample]) -> SampleScore:
        idx, sample = item
        try:
            return score_sample(
                network, sample, idx, spec, order_method, search_method,
                confidence_ranking,
            )
        except Exception as exc:  # noqa: BLE001 - per-sample isolation
            return SampleScore(
                sample_id=idx,
                predicted=-1,
                correct=None,
                max_confidence=float("nan"),
                explanation_size=-1,
                robust=False,
                error=str(exc),
            )

    items = list(enumerate(samples))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def auroc(scores: Sequence[float], positives: Sequence[bool]) -> tuple[float, RocCurve]:
    """Pair-counting AUROC plus the descending-threshold ROC curve.

    The returned value is (#{positive > negative} + 0.5 * #ties) / (P * N);
    the curve's trapezoidal area agrees with it up to float rounding.
    """
    s = np.asarray(scores, dtype=np.float64)
    p = np.asarray(positives, dtype=bool)
    if s.shape != p.shape or s.ndim != 1:
        raise ValueError("scores and positives must be equal-length vectors")
    n_pos = int(p.sum())
    n_neg = int((~p).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    pos, neg = s[p], s[~p]
    greater = int((pos[:, None] > neg[None, :]).sum())
    ties = int((pos[:, None] == neg[None, :]).sum())
    value = (greater + 0.5 * ties) / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_pos = p[order]
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(~sorted_pos)
    # one curve point at the end of each tie group
    group_end = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tpr = np.concatenate(([0.0], tp[group_end] / n_pos))
    fpr = np.concatenate(([0.0], fp[group_end] / n_neg))
    area = float(np.trapezoid(tpr, fpr))
    points = tuple((float(x), float(y)) for x, y in zip(fpr, tpr))
    return value, RocCurve(points=points, auroc=area)


def knn_classify(
    train: Sequence[tuple[float, float, int]],
    k: int,
    query: tuple[float, float],
    normalize: bool = True,
) -> int:
    """Majority label among the k nearest training points by Euclidean
    distance in (optionally min-max normalized) feature space. Distance ties
    go to the lower training index; vote ties go to the lowest label."""
    if not train:
        raise ValueError("empty training set")
    if not 1 <= k <= len(train):
        raise ValueError("k must be between 1 and the training set size")
    feats = np.array([[t[0], t[1]] for t in train], dtype=np.float64)
    labels = [int(t[2]) for t in train]
    q = np.array(query, dtype=np.float64)
    if normalize:
        lo = feats.min(axis=0)
        hi = feats.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        feats = (feats - lo) / span
        q = (q - lo) / span
    dist = np.sqrt(((feats - q) ** 2).sum(axis=1))
    nearest = sorted(range(len(train)), key=lambda i: (dist[i], i))[:k]
    votes: dict[int, int] = {}
    for i in nearest:
        votes[labels[i]] = votes.get(labels[i], 0) + 1
    best = max(votes.values())
    return min(label for label, count in votes.items() if count == best)


def split_indices(n: int, train_frac: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic shuffled train/test split of range(n)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return [int(i) for i in perm[:cut]], [int(i) for i in perm[cut:]]


def detection_summary(
    scores: Sequence[SampleScore],
    k: int = 5,
    train_frac: float = 0.7,
    seed: int = 0,
) -> dict:
    """Incorrectness-detection metrics over labeled, successfully scored
    samples: AUROC of explanation size and of negated confidence (positive
    class = incorrect), and the accuracy of a KNN over both features."""
    usable = [s for s in scores if s.error is None and s.correct is not None]
    if not usable:
        raise ValueError("no labeled samples to summarize")
    incorrect = [not s.correct for s in usable]
    auroc_size, _ = auroc([s.explanation_size for s in usable], incorrect)
    auroc_conf, _ = auroc([-s.max_confidence for s in usable], incorrect)

    train_idx, test_idx = split_indices(len(usable), train_frac, seed)
    knn_accuracy = None
    train = [
        (usable[i].max_confidence, float(usable[i].explanation_size),
         0 if usable[i].correct else 1)
        for i in train_idx
    ]
    if train and test_idx and k <= len(train):
        hits = 0
        for i in test_idx:
            guess = knn_classify(
                train, k, (usable[i].max_confidence, float(usable[i].explanation_size))
            )
            hits += guess == (0 if usable[i].correct else 1)
        knn_accuracy = hits / len(test_idx)
    mean_sizes = [s.explanation_size for s in usable if not s.robust]
    return {
        "samples": len(usable),
        "errors": sum(1 for s in scores if s.error is not None),
        "auroc_size": auroc_size,
        "auroc_confidence": auroc_conf,
        "knn_accuracy": knn_accuracy,
        "knn_k": k,
        "train_frac": train_frac,
        "split_seed": seed,
        "mean_size_nonrobust": (
            float(np.mean(mean_sizes)) if mean_sizes else None
        ),
    }


def auroc_standard_error(n_pos: int, n_neg: int) -> float:
    """Standard error of AUROC under the no-separation null hypothesis."""
    return math.sqrt((n_pos + n_neg + 1) / (12.0 * n_pos * n_neg))
