"""
Evaluation
Teacher-forced rollout over test events and the four prediction metrics
"""

import csv
import logging
from collections import Counter
from dataclasses import astuple, dataclass, fields
from enum import Enum
from typing import IO, List, Optional, Sequence, Tuple

import numpy as np

from corpus.mobility_data import EventSequence
from services.environment import MobilityEnvironment
from services.exceptions import InsufficientDataError
from services.geo import haversine_km
from services.imitation_dqn import QNetwork, q_values
from services.reward import CategoryVectors, cosine

logger = logging.getLogger(__name__)

METRIC_NAMES = ("prec_cat", "rec_cat", "avg_sim", "avg_dist")
CSV_FIELDS = ("run_id", "group") + METRIC_NAMES + ("L",)
STD_FIELDS = tuple(f"{name}_std" for name in METRIC_NAMES)


class Predictor(Enum):
    GREEDY = "greedy"
    ORACLE = "oracle"
    RANDOM = "random"


@dataclass(frozen=True)
class PredictionRecord:
    real_poi: str
    pred_poi: str
    real_cat: str
    pred_cat: str
    real_loc: Tuple[float, float]
    pred_loc: Tuple[float, float]


@dataclass(frozen=True)
class MetricsReport:
    prec_cat: float
    rec_cat: float
    avg_sim: float
    avg_dist: float
    L: int

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in METRIC_NAMES)


@dataclass
class EvaluationResult:
    report: MetricsReport
    records: List[PredictionRecord]
    skipped: int = 0


# ============================================
# METRICS
# ============================================


def _require(records: Sequence[PredictionRecord]):
    if not records:
        raise InsufficientDataError("Metrics need at least one prediction record")


def _confusion(records: Sequence[PredictionRecord]):
    support = Counter(r.real_cat for r in records)
    predicted = Counter(r.pred_cat for r in records)
    hits = Counter(r.real_cat for r in records if r.real_cat == r.pred_cat)
    return support, predicted, hits


def weighted_precision(records: Sequence[PredictionRecord]) -> float:
    """Per-category precision weighted by the category's real-label count"""
    _require(records)
    support, predicted, hits = _confusion(records)
    total = sum(support.values())
    return sum(n * (hits[k] / predicted[k] if predicted[k] else 0.0)
               for k, n in support.items()) / total


def weighted_recall(records: Sequence[PredictionRecord]) -> float:
    """Per-category recall weighted by the category's real-label count"""
    _require(records)
    support, _, hits = _confusion(records)
    total = sum(support.values())
    return sum(n * (hits[k] / n) for k, n in support.items()) / total


def avg_similarity(records: Sequence[PredictionRecord], vectors: CategoryVectors) -> float:
    _require(records)
    return float(np.mean([cosine(vectors.embed(r.real_cat), vectors.embed(r.pred_cat))
                          for r in records]))


def avg_distance(records: Sequence[PredictionRecord]) -> float:
    """Mean haversine km between real and predicted locations"""
    _require(records)
    return float(np.mean([haversine_km(r.real_loc, r.pred_loc) for r in records]))


def compute_metrics(records: Sequence[PredictionRecord], vectors: CategoryVectors) -> MetricsReport:
    return MetricsReport(weighted_precision(records), weighted_recall(records),
                         avg_similarity(records, vectors), avg_distance(records), len(records))


# ============================================
# ROLLOUT
# ============================================


def evaluate(net: Optional[QNetwork], env: MobilityEnvironment, test: EventSequence,
             vectors: CategoryVectors, predictor: Predictor = Predictor.GREEDY,
             seed: int = 0) -> EvaluationResult:
    """
    Predict each test event from the state before it, then advance the
    environment with the real event. env is copied, never modified.
    """
    if predictor is Predictor.GREEDY and net is None:
        raise InsufficientDataError("Greedy evaluation needs a Q-network")
    env = env.copy()
    rng = np.random.default_rng(seed)
    pois = env.catalog.pois
    records: List[PredictionRecord] = []
    skipped = 0
    for event in test:
        if not env.knows(event):
            skipped += 1
            continue
        obs = env.observe(event)
        real = env.schema.action_index[event.poi_id]
        if predictor is Predictor.ORACLE:
            action = real
        elif predictor is Predictor.RANDOM:
            action = int(rng.integers(env.n_actions))
        else:
            action = int(np.argmax(q_values(net, obs.state)))
        real_info, pred_info = pois[real], pois[action]
        records.append(PredictionRecord(real_info.poi_id, pred_info.poi_id,
                                        real_info.category_name, pred_info.category_name,
                                        (real_info.lat, real_info.lon),
                                        (pred_info.lat, pred_info.lon)))
        env.commit(event, obs.T)
    if skipped:
        logger.warning(f"Skipped {skipped} test events with unknown users or POIs")
    return EvaluationResult(compute_metrics(records, vectors), records, skipped)


# ============================================
# OUTPUT
# ============================================


def write_predictions(records: Sequence[PredictionRecord], stream: IO[str]):
    names = [f.name for f in fields(PredictionRecord)]
    header = []
    for name in names:
        header += [f"{name}_lat", f"{name}_lon"] if name.endswith("_loc") else [name]
    stream.write("\t".join(header) + "\n")
    for rec in records:
        row = []
        for value in astuple(rec):
            row += [repr(float(v)) for v in value] if isinstance(value, tuple) else [value]
        stream.write("\t".join(row) + "\n")


def read_predictions(stream: IO[str]) -> List[PredictionRecord]:
    lines = stream.read().splitlines()
    records = []
    for line in lines[1:]:
        if not line:
            continue
        rp, pp, rc, pc, rla, rlo, pla, plo = line.split("\t")
        records.append(PredictionRecord(rp, pp, rc, pc, (float(rla), float(rlo)),
                                        (float(pla), float(plo))))
    return records


def summarize(reports: Sequence[MetricsReport]) -> Tuple[MetricsReport, Tuple[float, ...]]:
    """Per-metric mean (as a report, L summed) and population standard deviation"""
    _require(reports)
    values = np.array([r.values() for r in reports])
    mean = MetricsReport(*(float(v) for v in values.mean(axis=0)), sum(r.L for r in reports))
    return mean, tuple(float(v) for v in values.std(axis=0))


def metrics_writer(stream: IO[str], with_std: bool = False):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_FIELDS + (STD_FIELDS if with_std else ()))
    return writer


def write_metrics_row(writer, run_id: str, group: str, report: MetricsReport,
                      std: Optional[Tuple[float, ...]] = None, with_std: bool = False):
    row = [run_id, group] + [repr(v) for v in report.values()] + [str(report.L)]
    if with_std:
        row += [repr(v) for v in std] if std is not None else [""] * len(STD_FIELDS)
    writer.writerow(row)
