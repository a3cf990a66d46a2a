import csv

import numpy as np
import pytest

from remixit.analysis import (DEFAULT_EDGES, bracket_analysis, decomposition_trace, mean_student_sweep,
                              write_decomposition_csv)
from remixit.exceptions import AnalysisError
from remixit.model import ModelArch, init_params
from helpers import OracleSeparator, toy_corpus

ARCH = ModelArch(depth=1, hidden_dim=16, fft_size=64, hop=16, depth_schedule=(1,))


@pytest.fixture(scope="module")
def corpus():
    return toy_corpus(12, T=256)


@pytest.fixture(scope="module")
def models():
    return init_params(ARCH, 0), init_params(ARCH, 1)


def test_bracket_identical_models(corpus, models):
    report = bracket_analysis(models[0], models[0], corpus)
    assert report.total == len(corpus)
    for b in report.brackets:
        if b.count:
            assert b.mean == 0.0 and b.median == 0.0 and b.q25 == 0.0 and b.q75 == 0.0
        else:
            assert b.mean is None


def test_bracket_single_item(corpus, models):
    report = bracket_analysis(models[0], models[1], corpus.subset([0]))
    assert [b.count for b in report.brackets].count(1) == 1
    assert report.total == 1
    assert len(report.brackets) == len(DEFAULT_EDGES) - 1


def test_bracket_folds_out_of_range(corpus, models):
    report = bracket_analysis(models[0], models[1], corpus, edges=[100.0, 200.0])
    assert report.brackets[0].count == len(corpus)


def test_bracket_csv(tmp_path, corpus, models):
    bracket_analysis(*models, corpus).to_csv(tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["bracket_lo", "bracket_hi", "count", "mean_delta", "median_delta", "q25", "q75"]
    assert sum(int(r[2]) for r in rows[1:]) == len(corpus)


def test_bracket_rejects_bad_edges(corpus, models):
    with pytest.raises(AnalysisError):
        bracket_analysis(*models, corpus, edges=[0.0, 0.0])
    with pytest.raises(AnalysisError, match="paired"):
        bracket_analysis(*models, corpus.subset(range(3), "mixture_only"))


def test_sweep_is_deterministic(corpus, models):
    a = mean_student_sweep(*models, corpus, [1, 2, 4], seed=3, max_teacher_snr_db=None)
    b = mean_student_sweep(*models, corpus, [1, 2, 4], seed=3, max_teacher_snr_db=None)
    assert a == b
    assert [p.B for p in a.points] == [1, 2, 4]
    assert a.n_probe == len(corpus)


def test_sweep_perfect_teacher_gives_no_gain(corpus, models):
    oracle = OracleSeparator(corpus)
    sweep = mean_student_sweep(oracle, oracle, corpus, [1, 4, 11], max_teacher_snr_db=None)
    for p in sweep.points:
        assert abs(p.mean_snr_improvement_db) < 1e-6
        assert abs(p.correlation_term) < 1e-12


def test_sweep_errors(corpus, models):
    with pytest.raises(AnalysisError, match="exceeds"):
        mean_student_sweep(*models, corpus, [1, 12])
    with pytest.raises(AnalysisError, match="probe"):
        mean_student_sweep(*models, corpus, [1], max_teacher_snr_db=-500.0)


def test_sweep_csv_rows(tmp_path, corpus, models):
    mean_student_sweep(*models, corpus, [1, 8], max_teacher_snr_db=None).to_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["B", "mean_snr_improvement_db", "correlation_term"]
    assert [r[0] for r in rows[1:]] == ["1", "8"]


@pytest.mark.parametrize("unit_norm", [True, False])
def test_decomposition_rows(tmp_path, corpus, models, unit_norm):
    rows = decomposition_trace(*models, corpus, unit_norm=unit_norm)
    assert len(rows) == len(corpus)
    for r in rows:
        assert np.isfinite([r.total, r.student_err_sq, r.teacher_err_sq, r.correlation]).all()
        assert r.residual < 1e-9
    write_decomposition_csv(rows, tmp_path / "d.csv")
    header = open(tmp_path / "d.csv").readline().strip()
    assert header == "item,total,student_err_sq,teacher_err_sq,correlation"


def test_decomposition_oracle_teacher(corpus, models):
    for r in decomposition_trace(OracleSeparator(corpus), models[1], corpus, unit_norm=False):
        assert r.teacher_err_sq == 0.0 and r.correlation == 0.0
