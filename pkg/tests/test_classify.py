import csv

import numpy as np
import pytest

from aquarius.apps.classify import (CLASS_NAMES, TrafficClassifier, build_corpus, classify, cluster_profile,
                                    corpus_specs, isolation, write_labels)


@pytest.fixture(scope="module")
def small_corpus():
    return build_corpus(seed=1, rows_per_class=24, warmup=10.0)


def test_corpus_shape(small_corpus):
    fm, y = small_corpus
    assert fm.shape[1] == 73
    assert np.bincount(y).tolist() == [24] * 4
    assert np.all(fm.t_start >= 10.0 - 1e-9)


def test_corpus_classes_differ_as_built():
    cpu, io, mixed, flood = corpus_specs()
    assert io.io_fraction == 1.0 and mixed.io_fraction == 0.5 == flood.io_fraction
    assert flood.flood_rate and not mixed.flood_rate


@pytest.mark.parametrize("method", ["kmeans4", "gmm4"])
def test_centroid_methods_separate_small_corpus(small_corpus, method):
    fm, y = small_corpus
    labels, rep = classify(fm, method, seed=0, truth=y)
    assert rep["ari"] >= 0.8
    assert rep["n_clusters"] == 4 and rep["rows"] == len(fm)


def test_flood_rows_stand_out_on_syn_and_miss(small_corpus):
    fm, y = small_corpus
    labels, rep = classify(fm, "kmeans4", seed=0, truth=y)
    flood_cluster = isolation(labels, y, 3)["cluster"]
    prof = {p["cluster"]: p for p in rep["profile"]}[flood_cluster]
    top = [name for name, _ in prof["top_features"]]
    assert "d_n_miss" in top or "d_n_syn" in top


def test_dbscan_reports_noise(small_corpus):
    fm, y = small_corpus
    labels, rep = classify(fm, "dbscan", eps=0.1, truth=y)
    assert rep["n_noise"] == int((labels == -1).sum())
    assert rep["eps"] == 0.1


def test_estimator_surface(small_corpus):
    fm, _ = small_corpus
    clf = TrafficClassifier("kmeans4", random_state=0).fit(fm.values)
    assert np.array_equal(clf.predict(fm.values), clf.labels_)
    assert clf.transform(fm.values).shape == (len(fm), 25)
    db = TrafficClassifier("dbscan").fit(fm.values)
    with pytest.raises(AttributeError):
        db.predict(fm.values)
    with pytest.raises(ValueError):
        TrafficClassifier("spectral").fit(fm.values)
    with pytest.raises(ValueError):
        TrafficClassifier("dbscan", eps=0).fit(fm.values)


def test_isolation_metric():
    labels = np.array([0, 0, 1, 1, -1, 1])
    truth = np.array([0, 0, 1, 1, 1, 0])
    iso = isolation(labels, truth, 1)
    assert iso["cluster"] == 1 and iso["others_excluded"] == pytest.approx(2 / 3)
    assert iso["target_share"] == pytest.approx(2 / 3)
    assert isolation(np.full(4, -1), truth[:4], 1)["target_share"] == 0.0


def test_cluster_profile_ranks_distinctive_column():
    X = np.array([[0.0, 1.0], [0.0, 1.1], [10.0, 1.0], [10.0, 0.9]])
    prof = cluster_profile(X, [0, 0, 1, 1], ["a", "b"], top=1)
    assert prof[1]["top_features"][0][0] == "a" and prof[1]["size"] == 2


def test_write_labels(tmp_path, small_corpus):
    fm, y = small_corpus
    p = tmp_path / "l.csv"
    write_labels(p, fm, np.zeros(len(fm), dtype=int), [CLASS_NAMES[c] for c in y])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["row", "egress", "t_start", "cluster", "truth"] and len(rows) == len(fm) + 1
