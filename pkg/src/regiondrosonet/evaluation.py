"""Ground-truth checks, precision-recall, AUC, extended precision, timing, per-region scores."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .voting import vote


@dataclass(frozen=True)
class GroundTruth:
    """Reference index for each query plus the allowed frame distance."""

    mapping: Mapping[int, int]
    tolerance: int = 0

    def __post_init__(self):
        if self.tolerance < 0:
            raise InvalidInputError(f"tolerance must be >= 0, got {self.tolerance}")

    @classmethod
    def identity(cls, n_queries: int, tolerance: int = 0) -> "GroundTruth":
        return cls({q: q for q in range(n_queries)}, tolerance)


@dataclass(frozen=True)
class MatchRecord:
    query: int
    retrieved: int
    confidence: float
    correct: bool


@dataclass(frozen=True)
class Metrics:
    pr_points: list[tuple[float, float]]
    auc: float
    ep: float
    r_p100: float
    p_r0: float

    def summary(self) -> dict:
        return {"auc": self.auc, "ep": self.ep, "r_p100": self.r_p100, "p_r0": self.p_r0}


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    median_ms: float
    p99_ms: float
    samples: int

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms


def check_match(retrieved: int, query: int, gt: GroundTruth) -> bool:
    if query not in gt.mapping:
        raise InvalidInputError(f"query {query} has no ground truth")
    return abs(retrieved - gt.mapping[query]) <= gt.tolerance


def pr_sweep(records: Sequence[MatchRecord]) -> list[tuple[float, float, float]]:
    """(threshold, recall, precision) for every distinct confidence, highest threshold first.

    At threshold t the retrieved set is every record with confidence >= t;
    recall is measured against all records.
    """
    if not records:
        raise InvalidInputError("need at least one match record")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.int64)
    order = np.argsort(-conf, kind="stable")
    conf = conf[order]
    hits = np.cumsum(correct[order])
    # last position of each run of equal confidences
    ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    retrieved = ends + 1
    recall = hits[ends] / len(records)
    precision = hits[ends] / retrieved
    return [(float(t), float(r), float(p)) for t, r, p in zip(conf[ends], recall, precision)]


def pr_curve(records: Sequence[MatchRecord]) -> list[tuple[float, float]]:
    return [(r, p) for _, r, p in pr_sweep(records)]


def auc(pr_points: Sequence[tuple[float, float]]) -> float:
    """Area under the PR curve.

    The first point (by ascending recall, ties kept in sweep order) is held
    flat back to recall 0, then consecutive points are joined by trapezoids.
    A single point therefore contributes its precision x recall rectangle.
    """
    if not pr_points:
        raise InvalidInputError("need at least one PR point")
    pts = sorted(pr_points, key=lambda rp: rp[0])
    r0, p0 = pts[0]
    area = r0 * p0
    for (ra, pa), (rb, pb) in zip(pts, pts[1:]):
        area += (rb - ra) * (pa + pb) / 2.0
    return float(area)


def extended_precision(pr_points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """(ep, p_r0, r_p100): precision at the smallest recall, largest recall at precision 1, their mean."""
    if not pr_points:
        raise InvalidInputError("need at least one PR point")
    min_recall = min(r for r, _ in pr_points)
    p_r0 = next(p for r, p in pr_points if r == min_recall)
    r_p100 = max((r for r, p in pr_points if p == 1.0), default=0.0)
    return (p_r0 + r_p100) / 2.0, p_r0, r_p100


def compute_metrics(records: Sequence[MatchRecord]) -> Metrics:
    points = pr_curve(records)
    ep, p_r0, r_p100 = extended_precision(points)
    return Metrics(points, auc(points), ep, r_p100, p_r0)


def time_inference(pipeline: Callable[[np.ndarray], object], queries: Sequence[np.ndarray],
                   warmup: int = 1) -> TimingStats:
    """Wall-clock per query from decoded image to retrieval, run on the calling thread.

    ``warmup`` extra calls on the first query run untimed so one-off costs
    (compilation, table construction) stay out of the statistics.
    """
    if len(queries) < 1:
        raise InvalidInputError("need at least one query to time")
    for _ in range(warmup):
        pipeline(queries[0])
    samples = []
    for img in queries:
        start = time.perf_counter_ns()
        pipeline(img)
        samples.append((time.perf_counter_ns() - start) / 1e6)
    arr = np.asarray(samples)
    return TimingStats(float(arr.mean()), float(np.median(arr)), float(np.percentile(arr, 99)), len(samples))


@dataclass
class Evaluation:
    records: list[MatchRecord]
    metrics: Metrics
    region_records: list[list[MatchRecord]]
    region_metrics: list[Metrics]


def evaluate(ensemble, queries: Sequence[np.ndarray], gt: GroundTruth, k: int | None = None,
             per_region: bool = True) -> Evaluation:
    """Full-system and per-region matching of every query in one inference pass.

    Per-region results vote with only that group's Z score vectors.
    """
    if len(queries) < 1:
        raise InvalidInputError("need at least one query")
    k = ensemble.config.k_votes if k is None else k
    n_regions = ensemble.config.region_count
    records = []
    region_records = [[] for _ in range(n_regions if per_region else 0)]
    for q, img in enumerate(queries):
        scores = ensemble.infer(img)
        hit = vote(scores, k)
        records.append(MatchRecord(q, hit.place, hit.confidence, check_match(hit.place, q, gt)))
        for p in range(len(region_records)):
            sub = vote(scores[ensemble.group_slice(p)], k)
            region_records[p].append(MatchRecord(q, sub.place, sub.confidence, check_match(sub.place, q, gt)))
    return Evaluation(records, compute_metrics(records), region_records,
                      [compute_metrics(r) for r in region_records])


def per_region_metrics(ensemble, queries: Sequence[np.ndarray], gt: GroundTruth) -> list[Metrics]:
    return evaluate(ensemble, queries, gt).region_metrics


def write_matches_json(records: Sequence[MatchRecord], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in records], indent=1))


def write_metrics_json(metrics: Metrics, path: str | Path, **extra) -> None:
    Path(path).write_text(json.dumps({**metrics.summary(), **extra}, indent=2))


def write_pr_csv(records: Sequence[MatchRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "recall", "precision"])
        w.writerows(pr_sweep(records))


def write_per_region_csv(ensemble, region_metrics: Sequence[Metrics], path: str | Path) -> None:
    labels = ensemble.plan.region_labels()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "grid", "auc", "ep"])
        for p, ((grid, _row, _col), m) in enumerate(zip(labels, region_metrics)):
            w.writerow([p, str(grid), m.auc, m.ep])
