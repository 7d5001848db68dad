"""
Experiment Commands
Corpus loading, the overall (90/10) experiment, the five-group robustness check
and evaluation of a saved agent
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

from corpus.mobility_data import (CITY_COLUMN_MAPS, EventSequence, KGSchema,
                                  PoiCatalog, TaxiRecord, TemporalContextIndex,
                                  ZoneGrid, build_catalog, build_schema,
                                  build_temporal_context, parse_checkins,
                                  parse_taxi, split_groups, split_train_test,
                                  write_events, write_taxi,
                                  write_temporal_contexts)
from corpus.snapshot_store import load_snapshots, save_snapshots
from corpus.synthetic import SynthSpec, generate_synthetic, make_preferences
from handlers.config import RunConfig, write_echo
from scripts.setup_logging import PerformanceMonitor
from services.environment import MobilityEnvironment
from services.evaluation import (MetricsReport, evaluate, metrics_writer,
                                 summarize, write_metrics_row,
                                 write_predictions)
from services.exceptions import ShapeError
from services.reward import CategoryVectors, HashedCategoryVectors
from services.trainer import (TrainingCorpus, TrainingLogRecord, run_training,
                              write_group_training_logs, write_training_log)

logger = logging.getLogger(__name__)


class LoadedCorpus(NamedTuple):
    events: EventSequence
    schema: KGSchema
    catalog: PoiCatalog
    temporal: TemporalContextIndex
    vectors: CategoryVectors

    def training_corpus(self) -> TrainingCorpus:
        return TrainingCorpus(self.schema, self.catalog, self.temporal, self.vectors,
                              self.events.user_ids())


@dataclass
class ExperimentOutcome:
    report: MetricsReport
    aborted_steps: int
    train_events: int
    test_events: int
    log: List[TrainingLogRecord]


def load_vectors(cfg: RunConfig) -> CategoryVectors:
    if cfg.word_vectors:
        return CategoryVectors.from_file(cfg.word_vectors)
    return HashedCategoryVectors(cfg.vector_dim)


def load_corpus(cfg: RunConfig, data_dir: Optional[Path] = None) -> LoadedCorpus:
    """
    Real corpora when --checkins/--taxi are given, otherwise a synthetic world

    With data_dir, the hourly flow counts are written there, and a synthetic
    world also leaves its check-ins and taxi trips in the "tsv" layouts.
    """
    if cfg.checkins:
        checkin_fmt, taxi_fmt = CITY_COLUMN_MAPS[cfg.city]
        events = parse_checkins(cfg.checkins, checkin_fmt)
        taxis = parse_taxi(cfg.taxi, taxi_fmt)
        catalog = build_catalog([events])
        grid = ZoneGrid.covering(((p.lat, p.lon) for p in catalog.pois),
                                 cfg.grid_rows, cfg.grid_cols)
        schema = build_schema(catalog, grid)
    else:
        spec = SynthSpec(n_users=cfg.synth_users, n_pois=cfg.synth_pois,
                         n_categories=cfg.synth_categories, n_events=cfg.synth_events,
                         preferences=make_preferences(cfg.synth_users, cfg.synth_pois,
                                                      cfg.synth_concentration, cfg.seed),
                         grid_rows=cfg.grid_rows, grid_cols=cfg.grid_cols)
        world = generate_synthetic(spec, cfg.seed)
        events, taxis, schema, catalog, grid = world
        if data_dir is not None:
            export_world(data_dir, events, taxis)
    contexts = build_temporal_context(taxis, grid)
    if data_dir is not None:
        data_dir.mkdir(parents=True, exist_ok=True)
        with open(data_dir / "temporal_contexts.tsv", "w", encoding="utf-8", newline="\n") as fh:
            write_temporal_contexts(contexts, fh)
    logger.info(f"Corpus: {len(events)} events, {len(catalog)} POIs, "
                f"{len(schema.categories)} categories, {grid.M} zones, {len(contexts)} windows")
    return LoadedCorpus(events, schema, catalog, TemporalContextIndex(contexts, grid.M),
                        load_vectors(cfg))


def export_world(data_dir: Path, events: EventSequence, taxis: Sequence[TaxiRecord]):
    """checkins.tsv and taxi.tsv, readable again with --city=tsv"""
    data_dir.mkdir(parents=True, exist_ok=True)
    with open(data_dir / "checkins.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_events(events, fh)
    with open(data_dir / "taxi.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_taxi(taxis, fh)


def run_experiment(cfg: RunConfig, corpus: LoadedCorpus, events: EventSequence, seed: int,
                   out_dir: Path, monitor: Optional[PerformanceMonitor] = None) -> ExperimentOutcome:
    """Split, train, evaluate and write every artifact of one run into out_dir"""
    monitor = monitor or PerformanceMonitor()
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = split_train_test(events, cfg.train_ratio)
    trainer_cfg = cfg.trainer_config(seed)

    with monitor.phase("train"):
        result = run_training(trainer_cfg, train, corpus.training_corpus())
    with monitor.phase("evaluate"):
        evaluation = evaluate(result.agent.eval_net, result.env, test, corpus.vectors)

    with open(out_dir / "training.log", "w", encoding="utf-8", newline="\n") as fh:
        write_training_log(result.log, fh)
    with open(out_dir / "predictions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_predictions(evaluation.records, fh)
    save_snapshots(out_dir, result.env.profiles, result.env.kg, result.env.params,
                   result.agent.eval_net, result.agent.target_net)

    report = evaluation.report
    logger.info(f"Seed {seed}: prec_cat={report.prec_cat:.4f} rec_cat={report.rec_cat:.4f} "
                f"avg_sim={report.avg_sim:.4f} avg_dist={report.avg_dist:.4f} L={report.L}")
    return ExperimentOutcome(report, result.aborted_steps, len(train), len(test), result.log)


def run_overall(cfg: RunConfig) -> int:
    """90/10 experiment; exit status 0 when every artifact was written and no step aborted"""
    out_dir = Path(cfg.out_dir)
    monitor = PerformanceMonitor()
    write_echo(cfg, out_dir)
    with monitor.phase("load"):
        corpus = load_corpus(cfg, out_dir / "data")
    outcome = run_experiment(cfg, corpus, corpus.events, cfg.seed, out_dir, monitor)
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_metrics_row(metrics_writer(fh), cfg.run_id, "all", outcome.report)
    return _status(outcome.aborted_steps)


def run_robustness(cfg: RunConfig) -> int:
    """
    Chronological groups, each trained and evaluated independently with seed
    seed + group index; metrics.csv holds one row per group plus a summary row
    """
    out_dir = Path(cfg.out_dir)
    monitor = PerformanceMonitor()
    write_echo(cfg, out_dir)
    with monitor.phase("load"):
        corpus = load_corpus(cfg, out_dir / "data")
    groups = split_groups(corpus.events, cfg.groups)
    outcomes: List[Tuple[int, ExperimentOutcome]] = []
    for index, group in enumerate(groups):
        logger.info(f"Group {index + 1}/{len(groups)}: {len(group)} events")
        outcomes.append((index, run_experiment(cfg, corpus, group, cfg.seed + index,
                                               out_dir / f"group_{index}", monitor)))

    mean, std = summarize([o.report for _, o in outcomes])
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = metrics_writer(fh, with_std=True)
        for index, outcome in outcomes:
            write_metrics_row(writer, cfg.run_id, str(index), outcome.report, with_std=True)
        write_metrics_row(writer, cfg.run_id, "summary", mean, std, with_std=True)
    with open(out_dir / "training.log", "w", encoding="utf-8", newline="\n") as fh:
        write_group_training_logs([(str(index), o.log) for index, o in outcomes], fh)
    return _status(sum(o.aborted_steps for _, o in outcomes))


def run_snapshot_evaluation(cfg: RunConfig) -> int:
    """
    Evaluate the agent saved under --eval_from on the test split, without training

    Snapshots of a run with the same data settings reproduce its
    predictions.tsv and metrics.csv.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_echo(cfg, out_dir)
    corpus = load_corpus(cfg)
    _, test = split_train_test(corpus.events, cfg.train_ratio)
    profiles, kg, params, eval_net, _ = load_snapshots(cfg.eval_from, corpus.schema)
    env = MobilityEnvironment.restore(corpus.schema, corpus.catalog, profiles, kg, params,
                                      corpus.temporal, corpus.vectors, cfg.reward_config(),
                                      cfg.state_pooling, cfg.tail_sigmoid)
    if (eval_net.state_dim, eval_net.n_actions) != (env.state_dim, env.n_actions):
        raise ShapeError(f"Saved network maps {eval_net.state_dim} -> {eval_net.n_actions}; "
                         f"the corpus needs {env.state_dim} -> {env.n_actions}")
    evaluation = evaluate(eval_net, env, test, corpus.vectors)

    with open(out_dir / "predictions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_predictions(evaluation.records, fh)
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_metrics_row(metrics_writer(fh), cfg.run_id, "all", evaluation.report)
    report = evaluation.report
    logger.info(f"Snapshot {cfg.eval_from}: prec_cat={report.prec_cat:.4f} "
                f"avg_sim={report.avg_sim:.4f} L={report.L}")
    return 0


def read_metrics(path: Path) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _status(aborted_steps: int) -> int:
    if aborted_steps:
        logger.error(f"{aborted_steps} representation steps aborted; run marked as failed")
        return 1
    return 0
