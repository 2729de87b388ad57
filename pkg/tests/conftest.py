import math

import numpy as np
import pytest

from genkt import trainer
from genkt.clm import ModelParams, ModelSpec
from genkt.corpus import VOCAB
from genkt.numkernel import LstmCellState, lstm_cell_forward


def onehot(k):
    v = np.zeros(30)
    v[k] = 1.0
    return v


def step_by_cells(params, x, states):
    """One model step built only from single-vector cell calls."""
    h = onehot(x)
    new = []
    for p, s in zip(params.layers, states):
        h, s = lstm_cell_forward(p, h, s)
        new.append(s)
    z = params.out_w @ h + params.out_b
    z = z - z.max()
    return np.exp(z) / np.exp(z).sum(), new


def brute_force_log2p(params, s):
    """log2 P(s[t+1] | s[:t+1]) recomputed from scratch for every prefix."""
    out = []
    for t in range(len(s) - 1):
        states = [LstmCellState.zeros(params.spec.cells) for _ in range(params.spec.layers)]
        for x in s[: t + 1]:
            p, states = step_by_cells(params, int(x), states)
        out.append(math.log2(p[int(s[t + 1])]))
    return np.array(out)


def random_model(cells, layers, seed, scale=0.5):
    spec = ModelSpec(cells, layers)
    rng = np.random.default_rng(seed)
    return ModelParams(spec, rng.uniform(-scale, scale, spec.n_params))


@pytest.fixture(scope="session")
def ab_corpus():
    return VOCAB.encode("AB." * 2000)


@pytest.fixture(scope="session")
def ab_teacher(ab_corpus):
    """A small model trained on the cyclic 'AB.' corpus."""
    X, Y = trainer.hard_targets(ab_corpus)
    cfg = trainer.TrainConfig(bptt_window=16, batch_streams=8, max_updates=300, eval_every=100)
    return trainer.train(ModelParams.initialize(ModelSpec(16, 1), seed=0), X, Y, cfg).params



ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
