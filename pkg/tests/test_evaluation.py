import json
import math

import numpy as np
import pytest
from scipy import stats

from depmicrodiff.errors import DataError
from depmicrodiff.evaluation import (MetricsReport, cosine, evaluate, format_pm, knn_impute, mae, mean_impute, pcc,
                                    rmse, summarize, write_boxplot, write_heatmap, write_report)


def test_pcc_values(rng):
    a = rng.standard_normal(20)
    assert pcc(a, a) == pytest.approx(1.0) and pcc(a, -a) == pytest.approx(-1.0)
    # centered: [-1, 0, 1] and [-13/6, -1/6, 7/3]; r = 4.5 / sqrt(2 * 61/6)
    assert pcc([1, 2, 3], [2, 4, 6.5]) == pytest.approx(4.5 / math.sqrt(2 * 61 / 6), rel=1e-12)
    assert pcc([1, 2, 3], [2, 4, 6.5]) == pytest.approx(0.997949, abs=1e-6)
    b = rng.standard_normal(20)
    assert pcc(a, b) == pytest.approx(stats.pearsonr(a, b)[0], rel=1e-12)
    assert math.isnan(pcc([1, 1, 1], [1, 2, 3])) and math.isnan(pcc([1], [2]))


def test_other_metrics(rng):
    a = rng.standard_normal(10)
    assert cosine(a, 2 * a) == pytest.approx(1.0)
    assert rmse(a, a) == 0 and mae(a, a) == 0
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5)) and mae([0, 0], [3, 4]) == 3.5
    assert math.isnan(cosine([0, 0], [1, 2]))
    with pytest.raises(DataError):
        rmse([1, 2], [1])


def test_evaluate_identity_and_shift(rng):
    truth = rng.uniform(0, 2, (10, 4))
    mask = (rng.random((10, 4)) < 0.4).astype(int)
    mask[0, :] = 1
    r = evaluate(truth, truth, mask)
    assert (r.pcc, r.rmse, r.mae) == (pytest.approx(1.0), 0.0, 0.0) and r.cosine == pytest.approx(1.0)
    s = evaluate(truth + 0.3, truth, mask)
    assert s.pcc == pytest.approx(1.0) and s.mae == pytest.approx(0.3)
    assert r.masked_count == mask.sum() and len(r.per_feature_pcc) == 4


def test_evaluate_ignores_unmasked_entries(rng):
    truth = rng.uniform(0, 2, (8, 3))
    imp = truth + rng.normal(0, 0.2, truth.shape)
    mask = np.zeros((8, 3), int)
    mask[:5, 1] = 1
    mask[2, 0] = 1
    a = evaluate(imp, truth, mask)
    imp2, truth2 = imp.copy(), truth.copy()
    imp2[mask == 0] = 99.0
    truth2[mask == 0] = -5.0
    b = evaluate(imp2, truth2, mask)
    assert (a.pcc, a.cosine, a.rmse, a.mae) == (b.pcc, b.cosine, b.rmse, b.mae)
    assert math.isnan(a.per_feature_pcc[0]) and math.isnan(a.per_feature_pcc[2])


def test_evaluate_errors():
    with pytest.raises(DataError, match="empty"):
        evaluate(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DataError):
        evaluate(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 3)))


def test_mean_impute():
    Y = np.array([[2.0, 1.0], [4.0, 1.0], [0.0, 1.0]])
    m = np.array([[0, 0], [0, 0], [1, 0]])
    assert mean_impute(Y, m)[2, 0] == 3.0
    assert np.array_equal(mean_impute(Y, np.zeros_like(m)), Y)
    full = np.array([[0, 1], [0, 1], [0, 1]])
    assert np.allclose(mean_impute(Y, full)[:, 1], 2.0)


def test_knn_matches_sklearn(rng):
    from sklearn.impute import KNNImputer

    Y = rng.uniform(0, 2, (40, 6))
    m = (rng.random((40, 6)) < 0.15).astype(int)
    Yn = np.where(m == 1, np.nan, Y)
    ref = KNNImputer(n_neighbors=5).fit_transform(Yn)
    ours = knn_impute(np.where(m == 1, 0.0, Y), m, 5)
    assert np.allclose(ours, ref, atol=1e-10)


def test_knn_duplicate_rows_and_limits(rng):
    base = rng.uniform(0, 2, (5, 4))
    Y = np.vstack([base, base])
    m = np.zeros_like(Y, dtype=int)
    m[0, 2] = m[6, 1] = 1
    out = knn_impute(np.where(m == 1, 0.0, Y), m, 1)
    assert out[0, 2] == Y[0, 2] and out[6, 1] == Y[6, 1]
    Z = rng.uniform(0, 2, (6, 3))
    m2 = np.zeros_like(Z, dtype=int)
    m2[0, 0] = 1
    out = knn_impute(np.where(m2 == 1, 0.0, Z), m2, 5)
    assert out[0, 0] == pytest.approx(Z[1:, 0].mean())
    with pytest.raises(DataError):
        knn_impute(Z, m2, 6)


def test_summarize_format():
    reps = [MetricsReport(p, 0.5, 1.0, 0.5, [], 1) for p in (0.70, 0.72, 0.71)]
    s = summarize(reps)
    assert s["pcc"]["mean"] == pytest.approx(0.71)
    assert s["pcc"]["std"] == pytest.approx(0.01)
    assert s["pcc"]["text"] == "0.710±0.010"
    assert format_pm(0.712, 0.011) == "0.712±0.011"


def test_exports(tmp_path):
    r = MetricsReport(0.5, 0.6, 0.7, 0.4, [0.1, float("nan")], 3, {"seed": 1})
    write_report(tmp_path / "r.json", r, {"extra": 1})
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["per_feature_pcc"] == [0.1, None] and data["extra"] == 1
    write_heatmap(tmp_path / "h.tsv", ["f0", "f1"], {"COAD": [0.1, float("nan")], "STAD": [0.2, 0.3]})
    assert (tmp_path / "h.tsv").read_text().splitlines() == ["feature_id\tCOAD\tSTAD", "f0\t0.1\t0.2", "f1\tNA\t0.3"]
    write_boxplot(tmp_path / "b.tsv", {"knn": [0.5, 0.6]})
    assert (tmp_path / "b.tsv").read_text().splitlines()[1:] == ["knn\t0\t0.5", "knn\t1\t0.6"]
