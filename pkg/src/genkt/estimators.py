"""Scikit-learn style wrappers around the language model and the transfer
procedures.

``CharLSTM`` behaves like an estimator over symbol sequences: ``fit`` trains
on text (hard targets) or on text plus soft labels, ``predict_proba`` and
``transform`` return next-symbol distributions, and ``score`` is the negated
bits per character so that higher is better, as sklearn expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import clm, gkt, trainer
from .clm import ModelParams, ModelSpec
from .corpus import VOCAB, VOCAB_SIZE, check_symbols, preprocess


def check_sequence(X, name: str = "X", min_length: int = 2) -> np.ndarray:
    """Coerce text or an id array into a validated 1-D uint8 symbol sequence.

    Strings and bytes go through :func:`corpus.preprocess`; anything else
    must already hold symbol ids."""
    if isinstance(X, (str, bytes)):
        s = preprocess(X)
    else:
        s = check_symbols(X, name)
    if s.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} symbols, got {s.size}")
    return s


def check_soft_labels(y, n: int, name: str = "y") -> np.ndarray:
    """Validate an ``(n, 30)`` array of probability vectors."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, VOCAB_SIZE):
        raise ValueError(f"{name} must have shape ({n}, {VOCAB_SIZE}), got {y.shape}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError(f"{name} must hold finite nonnegative probabilities")
    if np.max(np.abs(y.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError(f"{name} rows must sum to 1")
    return y


class CharLSTM(TransformerMixin, BaseEstimator):
    """Stacked-LSTM character language model over the 30-symbol alphabet.

    Parameters mirror :class:`trainer.TrainConfig` plus the architecture.
    With ``warm_start=True`` a second ``fit`` continues from the current
    weights and optimizer state instead of reinitialising.
    """

    def __init__(
        self,
        cells: int = 64,
        layers: int = 2,
        bptt_window: int = 64,
        batch_streams: int = 32,
        lr: float = 1.0,
        momentum: float = 0.9,
        max_updates: int = 1000,
        eval_every: int = 100,
        patience: int = 0,
        clip_norm: float = 5.0,
        seed: int = 0,
        warm_start: bool = False,
    ):
        self.cells = cells
        self.layers = layers
        self.bptt_window = bptt_window
        self.batch_streams = batch_streams
        self.lr = lr
        self.momentum = momentum
        self.max_updates = max_updates
        self.eval_every = eval_every
        self.patience = patience
        self.clip_norm = clip_norm
        self.seed = seed
        self.warm_start = warm_start

    def _train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            bptt_window=self.bptt_window,
            batch_streams=self.batch_streams,
            lr=self.lr,
            momentum=self.momentum,
            max_updates=self.max_updates,
            eval_every=self.eval_every,
            patience=self.patience,
            clip_norm=self.clip_norm,
            seed=self.seed,
        )

    @classmethod
    def from_params(cls, params: ModelParams, **kwargs) -> "CharLSTM":
        """Wrap already trained weights."""
        est = cls(cells=params.spec.cells, layers=params.spec.layers, **kwargs)
        est.params_ = params
        est.spec_ = params.spec
        est.log_ = []
        est.opt_ = None
        est.frames_ = 0
        return est

    def fit(self, X, y=None, valid=None):
        """Train on the sequence ``X``.

        Without ``y`` the targets are the next symbols of ``X``. With ``y``
        of shape ``(len(X), 30)`` row ``t`` is the soft target for the
        prediction made after consuming ``X[t]``."""
        s = check_sequence(X)
        cfg = self._train_config()
        if y is None:
            inputs, targets = trainer.hard_targets(s)
        else:
            inputs, targets = s, check_soft_labels(y, s.size)
        if valid is not None:
            valid = check_sequence(valid, "valid")
        spec = ModelSpec(self.cells, self.layers)
        if self.warm_start and hasattr(self, "params_"):
            if self.params_.spec != spec:
                raise ValueError(f"warm start from {self.params_.spec} into {spec}")
            start, opt, frames0 = self.params_, self.opt_, self.frames_
        else:
            start, opt, frames0 = ModelParams.initialize(spec, self.seed), None, 0
        res = trainer.train(start, inputs, targets, cfg, valid=valid, opt=opt, frames0=frames0)
        self.params_ = res.params
        self.spec_ = spec
        self.opt_ = res.opt
        self.frames_ = res.frames
        self.log_ = res.log
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Next-symbol distributions after each symbol of ``X`` (zero start state)."""
        check_is_fitted(self, "params_")
        s = check_sequence(X, min_length=1)
        return clm.score_block(self.params_, s[None, :])[0]

    def transform(self, X) -> np.ndarray:
        return self.predict_proba(X)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1).astype(np.uint8)

    def bpc(self, X) -> float:
        check_is_fitted(self, "params_")
        return clm.bpc(self.params_, check_sequence(X))

    def score(self, X, y=None) -> float:
        return -self.bpc(X)

    def sample(self, n_chars: int, seed: int = 0, temperature: float = 1.0) -> str:
        check_is_fitted(self, "params_")
        ids, _ = clm.sample_sequence(self.params_, n_chars, seed, temperature)
        return VOCAB.decode(ids)


class GenerativeKnowledgeTransfer(BaseEstimator):
    """Fits a student ``CharLSTM`` from a fitted teacher without real data.

    ``fit`` takes no training text: the student only ever sees text sampled
    by the teacher (teacher-driven) or by itself (student-driven) together
    with the teacher's soft labels. ``X`` is accepted and ignored so the
    object composes with sklearn tooling.
    """

    def __init__(
        self,
        teacher: CharLSTM | None = None,
        student: CharLSTM | None = None,
        mode: str = gkt.TEACHER_DRIVEN,
        lot_chars: int = 20_000,
        cycles: int = 1,
        budget_chars: int = 20_000,
        temperature: float = 1.0,
        passes: int = 1,
        hard_labels: bool = False,
        seed: int = 0,
    ):
        self.teacher = teacher
        self.student = student
        self.mode = mode
        self.lot_chars = lot_chars
        self.cycles = cycles
        self.budget_chars = budget_chars
        self.temperature = temperature
        self.passes = passes
        self.hard_labels = hard_labels
        self.seed = seed

    def fit(self, X=None, y=None, valid=None, evaluator: gkt.Evaluator | None = None):
        if self.teacher is None:
            raise ValueError("a fitted teacher is required")
        check_is_fitted(self.teacher, "params_")
        student = self.student if self.student is not None else CharLSTM()
        if self.mode == gkt.STUDENT_DRIVEN:
            try:
                check_is_fitted(student, "params_")
            except NotFittedError as exc:
                raise ValueError("student-driven transfer needs a pretrained student") from exc
        start = (
            student.params_
            if hasattr(student, "params_")
            else ModelParams.initialize(ModelSpec(student.cells, student.layers), student.seed)
        )
        cfg = gkt.GktConfig(
            mode=self.mode,
            lot_chars=self.lot_chars,
            cycles=self.cycles,
            budget_chars=self.budget_chars,
            temperature=self.temperature,
            train=student._train_config(),
            seed=self.seed,
            passes=self.passes,
            hard_labels=self.hard_labels,
        )
        if valid is not None:
            valid = check_sequence(valid, "valid")
        opt = getattr(student, "opt_", None)
        if self.mode == gkt.TEACHER_DRIVEN:
            params, report = gkt.run_tdgkt(self.teacher.params_, start, cfg, evaluator, valid=valid, opt=opt)
        else:
            params, report = gkt.run_sdgkt(self.teacher.params_, start, cfg, evaluator, opt=opt)
        self.student_ = CharLSTM.from_params(params, **{
            k: v for k, v in student.get_params().items() if k not in ("cells", "layers")
        })
        self.report_ = report
        return self

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "student_")
        return self.student_.score(X)


__all__ = ["CharLSTM", "GenerativeKnowledgeTransfer", "check_sequence", "check_soft_labels"]
