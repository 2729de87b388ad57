import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from genkt import clm
from genkt.corpus import VOCAB
from genkt.estimators import CharLSTM, GenerativeKnowledgeTransfer, check_sequence, check_soft_labels

TEXT = "THE MARKET ROSE.\nSHARES FELL.\n" * 20
FAST = dict(cells=6, layers=1, bptt_window=8, batch_streams=4, max_updates=20, eval_every=10)


class TestValidation:
    def test_text_is_preprocessed(self):
        np.testing.assert_array_equal(check_sequence("ab, c"), VOCAB.encode("AB C"))

    def test_ids_checked(self):
        with pytest.raises(ValueError):
            check_sequence(np.array([1, 30]))
        with pytest.raises(ValueError):
            check_sequence(np.array([1]))

    def test_soft_labels(self):
        good = np.full((3, 30), 1 / 30)
        assert check_soft_labels(good, 3) is not None
        with pytest.raises(ValueError, match="shape"):
            check_soft_labels(good, 4)
        with pytest.raises(ValueError, match="sum"):
            check_soft_labels(good * 2, 3)
        bad = good.copy()
        bad[0, 0] = -0.1
        with pytest.raises(ValueError, match="nonnegative"):
            check_soft_labels(bad, 3)


class TestCharLSTM:
    def test_params_roundtrip_through_clone(self):
        est = CharLSTM(cells=12, lr=0.5)
        c = clone(est)
        assert c.get_params() == est.get_params()
        assert not hasattr(c, "params_")

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CharLSTM().predict_proba("ABC")

    def test_fit_and_query(self):
        est = CharLSTM(**FAST).fit(TEXT, valid=TEXT[:200])
        proba = est.predict_proba("THE")
        assert proba.shape == (3, 30)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert est.predict("THE").shape == (3,)
        assert est.score(TEXT) == -est.bpc(TEXT)
        assert [r["updates"] for r in est.log_] == [10, 20]
        assert isinstance(est.sample(40, seed=1), str)

    def test_deterministic(self):
        a = CharLSTM(**FAST).fit(TEXT)
        b = CharLSTM(**FAST).fit(TEXT)
        assert a.params_ == b.params_

    def test_warm_start_continues(self):
        est = CharLSTM(**FAST, warm_start=True).fit(TEXT)
        frames = est.frames_
        est.fit(TEXT)
        assert est.frames_ == 2 * frames

    def test_soft_targets(self):
        s = VOCAB.encode("AB." * 50)
        teacher = CharLSTM(**FAST).fit(s)
        y = teacher.predict_proba(s)
        student = CharLSTM(**FAST, seed=1).fit(s, y)
        assert np.isfinite(student.bpc(s))

    def test_from_params(self):
        params = clm.ModelParams.initialize(clm.ModelSpec(4, 1))
        est = CharLSTM.from_params(params)
        assert est.cells == 4 and est.bpc("AB CD") > 0


@pytest.fixture(scope="module")
def teacher():
    return CharLSTM(**FAST).fit(TEXT)


class TestTransfer:
    def test_teacher_driven(self, teacher):
        gk = GenerativeKnowledgeTransfer(teacher, CharLSTM(**FAST, seed=2), lot_chars=200, budget_chars=400)
        gk.fit()
        assert gk.student_.params_.spec == clm.ModelSpec(6, 1)
        assert gk.report_.generations == [200, 200]
        assert gk.score(TEXT) < 0

    def test_student_driven_needs_pretrained_student(self, teacher):
        gk = GenerativeKnowledgeTransfer(teacher, CharLSTM(**FAST), mode="student_driven", lot_chars=200)
        with pytest.raises(ValueError, match="pretrained"):
            gk.fit()

    def test_student_driven(self, teacher):
        student = CharLSTM(**FAST, seed=3).fit(TEXT[:300])
        gk = GenerativeKnowledgeTransfer(teacher, student, mode="student_driven", lot_chars=160, cycles=2)
        gk.fit()
        assert gk.report_.generations == [160, 160]
        assert student.params_ != gk.student_.params_

    def test_requires_teacher(self):
        with pytest.raises(ValueError):
            GenerativeKnowledgeTransfer().fit()

    def test_clone(self, teacher):
        gk = GenerativeKnowledgeTransfer(teacher, cycles=3)
        assert clone(gk).get_params()["cycles"] == 3
