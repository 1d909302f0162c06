"""Replicate and experiment orchestration."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from homeonet import nn
from homeonet.drift import (SEASONAL_SCHEDULES, DriftStream, ShiftSchedule,
                            constant_schedule, load_idx, stratified_subset)
from homeonet.homeostat import HomeostatState, Learner, ReplayStore
from homeonet.harness.config import ExperimentConfig

log = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    replicate: int
    learner: str
    shift_rate: str
    epoch: int
    presentation: int
    val_accuracy: float
    val_loss: float
    lr: float
    ingest_rate: float
    train_accuracy: float

    @property
    def failed(self) -> bool:
        return math.isnan(self.val_accuracy)


@dataclass
class AggregateRow:
    learner: str
    shift_rate: str
    epoch: int
    acc_mean: float
    acc_sem: float
    lr_mean: float
    lr_sem: float
    n_replicates: int


@dataclass
class ReplicateResult:
    rows: list
    events: list = field(default_factory=list)
    failure: str | None = None


@dataclass
class ExperimentResult:
    rows: list
    aggregates: list
    events: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


@lru_cache(maxsize=8)
def _load(images_path: str, labels_path: str, split: str):
    return load_idx(images_path, labels_path, split)


def load_datasets(config: ExperimentConfig):
    config.check_paths()
    p = {k: str(v) for k, v in config.data_paths().items()}
    train = _load(p["train_images"], p["train_labels"], "train")
    val = _load(p["val_images"], p["val_labels"], "validation")
    return train, val


def make_schedule(config: ExperimentConfig, shift) -> ShiftSchedule:
    """A schedule from a numeric rate, a seasonal schedule id, or a schedule."""
    if isinstance(shift, ShiftSchedule):
        return shift
    if isinstance(shift, str) and shift in SEASONAL_SCHEDULES:
        kwargs = {"segment": config.season_epochs} if config.season_epochs else {}
        return SEASONAL_SCHEDULES[shift](config.epoch_length, **kwargs)
    return constant_schedule(float(shift), config.epoch_length)


def shift_settings(config: ExperimentConfig) -> list:
    if config.shift_mode == "seasonal":
        return list(config.schedules)
    return list(config.shift_rates)


def make_learner(config: ExperimentConfig, kind: str, seed: int) -> Learner:
    """Fresh He-initialised network and controller for one replicate."""
    weight_seq, _, ctrl_seq, _ = np.random.SeedSequence(seed).spawn(4)
    net = nn.init_mlp(config.layer_dims, np.random.default_rng(weight_seq))
    state = HomeostatState(
        controller=kind, lr_init=config.lr_init, lr_min=config.lr_min,
        lr_max=config.lr_max, delta=config.delta, step_rule=config.step_rule,
        store=ReplayStore(config.store_capacity),
        realized_effect=config.realized_effect, store_passes=config.store_passes,
        rng=np.random.default_rng(ctrl_seq))
    return Learner(net, state)


def _open_step_log(config, kind, label, replicate):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f = open(out / f"steps_{kind}_{label}_rep{replicate}.csv", "w", encoding="utf-8")
    f.write("presentation,predicted,true_label,correct,choice,expected_direction,"
            "realized_direction,loss_ingest,loss_reject,lr_before,lr_after,loss\n")
    return f


def _write_step(f, s):
    d = s.decision
    fields = [s.presentation_index, s.predicted_label, s.true_label, int(s.correct),
              d.choice if d else "", d.expected_direction if d else "",
              d.realized_direction if d else "",
              f"{d.loss_ingest:.9g}" if d else "", f"{d.loss_reject:.9g}" if d else "",
              f"{s.lr_before:.9g}", f"{s.lr_after:.9g}", f"{s.loss:.9g}"]
    f.write(",".join(str(v) for v in fields) + "\n")


def run_replicate(config: ExperimentConfig, kind: str, shift, seed: int,
                  replicate: int = 0, datasets=None, observer=None) -> ReplicateResult:
    """Train one learner on one drifting stream and record validation metrics.

    The seed is split into independent streams for weights, presentation
    order/swaps, controller noise and data subsetting; the latter two are
    shared across learner kinds so every kind sees the same data and swaps
    for a given seed. ``observer``, if given, is called with every StepLog.
    """
    schedule = make_schedule(config, shift)
    train, val = load_datasets(config) if datasets is None else datasets
    _, stream_seq, _, data_seq = np.random.SeedSequence(seed).spawn(4)
    data_rng = np.random.default_rng(data_seq)
    train = stratified_subset(train, config.train_size, data_rng)
    val = stratified_subset(val, config.val_size, data_rng)
    stream = DriftStream(train, schedule, np.random.default_rng(stream_seq))
    learner = make_learner(config, kind, seed)
    label = schedule.label
    length = config.epoch_length
    epochs = schedule.n_epochs or config.epochs
    total = epochs * length
    rows = []

    def record(g, ingests, correct, seen):
        acc, loss = nn.evaluate(learner.net, val.images, val.labels, stream.permutation)
        epoch = 0 if g == 0 else (g - 1) // length + 1
        ingest = ingests / seen if seen and kind == "homeostatic" else math.nan
        train_acc = correct / seen if seen else math.nan
        rows.append(MetricsRow(replicate, kind, label, epoch, g, acc, loss,
                               learner.lr, ingest, train_acc))

    step_file = _open_step_log(config, kind, label, replicate) if config.step_log else None
    failure = None
    record(0, 0, 0, 0)
    ingests = correct = seen = 0
    try:
        for g in range(total):
            _, image, target, _ = stream.next_presentation()
            s = learner.step(image, target, g)
            seen += 1
            correct += s.correct
            if s.decision is not None and s.decision.ingested:
                ingests += 1
            if step_file is not None:
                _write_step(step_file, s)
            if observer is not None:
                observer(s)
            done = g + 1
            if done % config.eval_interval == 0 or done % length == 0:
                record(done, ingests, correct, seen)
                ingests = correct = seen = 0
    except nn.NonFiniteError as exc:
        failure = f"{kind} {label} replicate {replicate}: {exc}"
        log.warning("aborting %s", failure)
        g = stream.presentation_index - 1  # the presentation that failed
        rows.append(MetricsRow(replicate, kind, label, g // length + 1, g, math.nan, math.nan,
                               learner.lr, math.nan, math.nan))
    finally:
        if step_file is not None:
            step_file.close()
    return ReplicateResult(rows, list(stream.event_log), failure)


def sem(values) -> float:
    """Standard error of the mean with the n-1 sample deviation; 0 for n = 1."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2 or np.all(values == values[0]):
        return 0.0  # exact zero; np.std can leave rounding residue here
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def aggregate(rows, epoch_length: int | None = None) -> list:
    """Mean and SEM across replicates of the end-of-epoch rows.

    Replicates with a failure row are left out of every cell they touch.
    Without ``epoch_length`` the last row of each (replicate, epoch) is used.
    """
    failed = {(r.learner, r.shift_rate, r.replicate) for r in rows if r.failed}
    ends = {}
    for r in rows:
        if (r.learner, r.shift_rate, r.replicate) in failed:
            continue
        if epoch_length is not None and r.presentation % epoch_length:
            continue
        key = (r.learner, r.shift_rate, r.epoch, r.replicate)
        if key not in ends or r.presentation > ends[key].presentation:
            ends[key] = r
    cells = {}
    for (learner, rate, epoch, _), r in ends.items():
        cells.setdefault((learner, rate, epoch), []).append(r)
    out = []
    for (learner, rate, epoch), members in cells.items():
        members.sort(key=lambda r: r.replicate)
        acc = [r.val_accuracy for r in members]
        lr = [r.lr for r in members]
        out.append(AggregateRow(learner, rate, epoch, float(np.mean(acc)), sem(acc),
                                float(np.mean(lr)), sem(lr), len(members)))
    return sort_aggregates(out)


LEARNER_ORDER = {"homeostatic": 0, "random": 1, "constant": 2}


def shift_key(label: str):
    try:
        return (0, float(label), "")
    except ValueError:
        return (1, 0.0, label)


def sort_rows(rows):
    return sorted(rows, key=lambda r: (LEARNER_ORDER.get(r.learner, 9), r.learner,
                                       shift_key(r.shift_rate), r.replicate,
                                       r.presentation))


def sort_aggregates(rows):
    return sorted(rows, key=lambda r: (LEARNER_ORDER.get(r.learner, 9), r.learner,
                                       shift_key(r.shift_rate), r.epoch))


def _run_cell(args):
    config, kind, shift, seed, replicate = args
    return run_replicate(config, kind, shift, seed, replicate)


def run_experiment(config: ExperimentConfig, shifts=None, learners=None) -> ExperimentResult:
    """Every (learner, shift, replicate) cell; replicate r uses seed ``seed + r``."""
    config.check_paths()
    shifts = shift_settings(config) if shifts is None else list(shifts)
    learners = config.learners if learners is None else list(learners)
    cells = [(config, kind, shift, config.seed + r, r)
             for kind in learners for shift in shifts
             for r in range(config.replicates)]
    if config.threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        datasets = load_datasets(config)
        results = [run_replicate(c, k, s, seed, r, datasets)
                   for c, k, s, seed, r in cells]
    rows, events, failures = [], {}, []
    for (_, kind, shift, _, r), res in zip(cells, results):
        rows.extend(res.rows)
        label = make_schedule(config, shift).label
        events.setdefault((label, r), res.events)
        if res.failure:
            failures.append(res.failure)
    rows = sort_rows(rows)
    return ExperimentResult(rows, aggregate(rows, config.epoch_length), events, failures)
