"""Generative knowledge transfer.

Teacher-driven transfer: the teacher samples text and the distributions it
sampled from become the student's soft targets. Student-driven transfer: the
student samples a lot of text, the teacher scores exactly that text, the
student trains one pass on it, and the next cycle samples from the updated
student.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import clm, trainer
from .clm import ModelParams
from .corpus import EOS, VOCAB, VOCAB_SIZE
from .trainer import OptimizerState, TrainConfig

log = logging.getLogger(__name__)

TEACHER_DRIVEN = "teacher_driven"
STUDENT_DRIVEN = "student_driven"
REPORT_COLUMNS = (
    "cycle", "chars", "frames", "updates", "bpc_full", "bpc_private", "bpc_public",
    "oov_log2p", "oov_count",
)


@dataclass
class GktConfig:
    mode: str = STUDENT_DRIVEN
    lot_chars: int = 20_000
    cycles: int = 1
    budget_chars: int = 20_000
    temperature: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    passes: int = 1  # student-driven: training passes over each lot
    hard_labels: bool = False  # train on sampled ids instead of soft labels (ablation)

    def __post_init__(self):
        if self.mode not in (TEACHER_DRIVEN, STUDENT_DRIVEN):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lot_chars < self.train.bptt_window:
            raise ValueError("lot_chars must be >= bptt_window")
        if self.lot_chars // self.train.batch_streams < 2:
            raise ValueError("lot_chars too small for the number of batch streams")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        if self.mode == TEACHER_DRIVEN and self.budget_chars < self.lot_chars:
            raise ValueError("teacher-driven transfer needs budget_chars >= lot_chars")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


@dataclass
class TransferRecord:
    cycle: int
    chars: int
    frames: int
    updates: int
    bpc_full: float = math.nan
    bpc_private: float = math.nan
    bpc_public: float = math.nan
    oov_log2p: float = math.nan
    oov_count: int = 0


@dataclass
class TransferReport:
    records: list[TransferRecord] = field(default_factory=list)
    generations: list[int] = field(default_factory=list)  # chars per generation pass

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def frames_to(self, column: str, threshold: float) -> float:
        """First frame count at which ``column`` is at or below ``threshold``."""
        for r in self.records:
            if getattr(r, column) <= threshold:
                return float(r.frames)
        return math.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([getattr(r, c) for c in REPORT_COLUMNS])


@dataclass
class ProbeScore:
    log2p: float
    count: int


_TOKEN_SPLIT = re.compile(r"[ \n'.]+")


def count_words(text: str, words) -> Counter:
    wanted = set(words)
    return Counter(t for t in _TOKEN_SPLIT.split(text) if t in wanted)


def oov_probe(
    params: ModelParams,
    words: Sequence[str],
    contexts: Sequence[str] = ("",),
    sample_chars: int = 100_000,
    seed: int = 0,
    n_streams: int = 50,
) -> dict[str, ProbeScore]:
    """Score how well a model knows each word.

    ``log2p`` is the mean log2-probability per symbol of the word, averaged
    over the given context prefixes (each preceded by a sentence start).
    ``count`` is the number of whole-word occurrences in a fixed-seed sample
    of ``sample_chars`` symbols."""
    out = {}
    per = max(1, sample_chars // n_streams)
    ids, _ = clm.sample_streams(params, n_streams, per, seed)
    text = "\n".join(VOCAB.decode(row) for row in ids)
    counts = count_words(text, words)
    for w in words:
        scores = []
        for ctx in contexts:
            seq = np.concatenate(([EOS], VOCAB.encode(ctx + w))).astype(np.uint8)
            _, log2p = clm.score_sequence(params, seq)
            scores.append(log2p[-len(w):].mean())
        out[w] = ProbeScore(float(np.mean(scores)), counts.get(w, 0))
    return out


class Evaluator:
    """Computes the report metrics for a model snapshot."""

    def __init__(
        self,
        eval_sets: Mapping[str, np.ndarray] | None = None,
        oov_words: Sequence[str] = (),
        oov_contexts: Sequence[str] = ("",),
        oov_sample_chars: int = 100_000,
        n_streams: int = 16,
        seed: int = 0,
    ):
        self.eval_sets = dict(eval_sets or {})
        unknown = set(self.eval_sets) - {"full", "private", "public"}
        if unknown:
            raise ValueError(f"unknown eval sets {sorted(unknown)}")
        self.oov_words = tuple(oov_words)
        self.oov_contexts = tuple(oov_contexts)
        self.oov_sample_chars = oov_sample_chars
        self.n_streams = n_streams
        self.seed = seed

    def __call__(self, params: ModelParams) -> dict:
        row = {}
        for name, seq in self.eval_sets.items():
            row[f"bpc_{name}"] = clm.bpc_streams(params, seq, self.n_streams)
        if self.oov_words:
            probe = oov_probe(params, self.oov_words, self.oov_contexts, self.oov_sample_chars, self.seed)
            row["oov_log2p"] = float(np.mean([p.log2p for p in probe.values()]))
            row["oov_count"] = int(sum(p.count for p in probe.values()))
        return row


def _record(cycle: int, chars: int, row: Mapping) -> TransferRecord:
    fields = {k: row[k] for k in REPORT_COLUMNS[4:] if k in row}
    return TransferRecord(cycle, chars, int(row["frames"]), int(row["updates"]), **fields)


def _check_pair(teacher: ModelParams, student: ModelParams) -> None:
    if teacher.spec.vocab_size != student.spec.vocab_size:
        raise ValueError("teacher and student use different vocabularies")


def generate_lot(params: ModelParams, lot_chars: int, n_streams: int, seed, temperature=1.0):
    """Sample a lot as ``n_streams`` parallel streams.

    Returns ``(inputs, sampled_ids, labels)`` with ``inputs`` the
    sentence-start-primed training inputs aligned to both targets."""
    ids, labels = clm.sample_streams(params, n_streams, lot_chars // n_streams, seed, temperature)
    return clm.training_pair(ids), ids, labels


def run_tdgkt(
    teacher: ModelParams,
    student: ModelParams,
    cfg: GktConfig,
    evaluator: Evaluator | None = None,
    valid=None,
    opt: OptimizerState | None = None,
) -> tuple[ModelParams, TransferReport]:
    """Teacher-driven transfer over a fixed generated set of ``budget_chars``.

    The set is produced in lots of ``lot_chars`` and the student iterates over
    it under ``cfg.train`` (``max_updates``/``patience``), keeping the
    snapshot with the best BPC on ``valid`` when given. ``opt`` continues an
    existing optimizer state (accumulators only, see
    :meth:`OptimizerState.restart`) instead of starting from zero."""
    _check_pair(teacher, student)
    S = cfg.train.batch_streams
    report = TransferReport()
    inputs, targets = [], []
    remaining, lot = cfg.budget_chars, 0
    while remaining >= S * 2:
        size = min(cfg.lot_chars, remaining)
        x, ids, labels = generate_lot(teacher, size, S, [cfg.seed, lot], cfg.temperature)
        inputs.append(x)
        targets.append(ids if cfg.hard_labels else labels)
        report.generations.append(int(x.size))
        remaining -= size
        lot += 1
    X = np.concatenate(inputs, axis=1)
    Y = np.concatenate(targets, axis=1)
    chars = int(X.size)
    ev = evaluator or Evaluator()
    report.records.append(_record(0, 0, {"frames": 0, "updates": 0, **ev(student)}))
    start = opt.restart() if opt is not None else None
    res = trainer.train(student, X, Y, cfg.train, valid=valid, opt=start, on_eval=ev)
    report.records += [_record(1, chars, row) for row in res.log]
    return res.params, report


LabelFn = Callable[[np.ndarray, int], np.ndarray]
GenerateFn = Callable[[ModelParams, int], np.ndarray]


def teacher_labels(teacher: ModelParams) -> LabelFn:
    """Label function scoring a block with a single teacher from zero state."""
    return lambda inputs, cycle: clm.score_block(teacher, inputs)


def student_generator(cfg: GktConfig) -> GenerateFn:
    def gen(student: ModelParams, cycle: int) -> np.ndarray:
        x, _, _ = generate_lot(student, cfg.lot_chars, cfg.train.batch_streams, [cfg.seed, cycle], cfg.temperature)
        return x

    return gen


@dataclass
class CycleState:
    params: ModelParams
    opt: OptimizerState | None = None
    frames: int = 0
    updates: int = 0
    chars: int = 0


def transfer_cycle(
    st: CycleState, cfg: GktConfig, cycle: int, inputs: np.ndarray, labels: np.ndarray,
    evaluator: Evaluator | None,
) -> tuple[CycleState, list[dict]]:
    """Train the student on one labelled lot (``cfg.passes`` passes)."""
    if labels.shape[:2] != inputs.shape or labels.shape[-1] != VOCAB_SIZE:
        raise ValueError(f"labels {labels.shape} not aligned with lot {inputs.shape}")
    tc = cfg.train.replace(max_updates=10**12)
    res = trainer.train(
        st.params, inputs, labels, tc, opt=st.opt, frames0=st.frames, updates0=st.updates,
        max_epochs=cfg.passes, on_eval=evaluator,
    )
    return CycleState(res.params, res.opt, res.frames, res.updates, st.chars + int(inputs.size)), res.log


def run_cycles(
    student: ModelParams,
    cfg: GktConfig,
    generate: GenerateFn,
    label: LabelFn,
    evaluator: Evaluator | None = None,
    on_cycle: Callable[[int, CycleState], None] | None = None,
    opt: OptimizerState | None = None,
) -> tuple[ModelParams, TransferReport]:
    """Generic generate -> label -> train loop shared by the student-driven
    transfer and the federation rounds."""
    ev = evaluator or Evaluator()
    report = TransferReport()
    report.records.append(_record(0, 0, {"frames": 0, "updates": 0, **ev(student)}))
    st = CycleState(student, opt.restart() if opt is not None else None)
    for c in range(cfg.cycles):
        inputs = generate(st.params, c)
        labels = label(inputs, c)
        report.generations.append(int(inputs.size))
        st, rows = transfer_cycle(st, cfg, c, inputs, labels, ev)
        report.records += [_record(c + 1, st.chars, row) for row in rows]
        if on_cycle is not None:
            on_cycle(c, st)
    return st.params, report


def run_sdgkt(
    teacher: ModelParams,
    student: ModelParams,
    cfg: GktConfig,
    evaluator: Evaluator | None = None,
    opt: OptimizerState | None = None,
) -> tuple[ModelParams, TransferReport]:
    """Student-driven transfer: ``cfg.cycles`` lots of ``cfg.lot_chars``.

    The student must already be pretrained; each lot is generated by the
    current student, labelled by the teacher and consumed ``cfg.passes``
    times before the next lot is drawn from the updated student. Passing the
    pretraining ``opt`` keeps its Adadelta accumulators (momentum is reset),
    which matters: fresh accumulators move every weight of a trained model at
    a similar rate and wash out what it already knows."""
    _check_pair(teacher, student)
    return run_cycles(student, cfg, student_generator(cfg), teacher_labels(teacher), evaluator, opt=opt)
