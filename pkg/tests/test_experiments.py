import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbn_transfer import experiments as ex
from dbn_transfer.corpus import SyntheticCorpusSpec, generate_synthetic
from dbn_transfer.experiments import (
    DEFAULT_FRACTIONS,
    RESULT_COLUMNS,
    ExperimentConfig,
    ExperimentError,
    axis_rotation,
    cross_corpus,
    desk_config,
    leave_one_corpus_out,
    random_rotation,
    read_results_csv,
    results_to_csv,
    run_suite,
    synthetic_pair,
    synthetic_suite,
    SyntheticSuiteConfig,
    target_fraction_sweep,
    transfer_run,
    uar_values,
    within_corpus,
    write_results_csv,
)
from dbn_transfer.metrics import EvaluationResult, evaluate, summarize

SEEDS = [0, 1, 2, 3, 4]


def svm_cfg(**kw):
    return ExperimentConfig(model_kind="SparseAeSvm", **kw)


def small_suite(n=3, n_per_class=60, seed=0):
    return synthetic_suite(SyntheticSuiteConfig(n_corpora=n, dim=8, n_per_class=n_per_class, seed=seed))


# --- metrics -------------------------------------------------------------------


def test_perfect_confusion():
    r = EvaluationResult.from_confusion([[50, 0], [0, 50]])
    assert (r.accuracy, r.uar, r.n_test) == (1.0, 1.0, 100)


def test_worked_confusion():
    r = EvaluationResult.from_confusion([[40, 10], [25, 25]])
    assert r.accuracy == pytest.approx(0.65) and r.uar == pytest.approx(0.65)
    pred = [0] * 40 + [1] * 10 + [0] * 25 + [1] * 25
    true = [0] * 50 + [1] * 50
    assert np.array_equal(evaluate(pred, true).confusion, [[40, 10], [25, 25]])


def test_all_negative_predictor():
    r = evaluate(np.zeros(100), np.repeat([0, 1], 50))
    assert r.accuracy == 0.5 and r.uar == 0.5


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50), st.randoms())
def test_evaluate_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = evaluate(*zip(*pairs))
    b = evaluate(*zip(*shuffled))
    assert np.array_equal(a.confusion, b.confusion) and a.uar == b.uar


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.integers(0, 1))
def test_constant_predictor_accuracy(truth, const):
    truth = np.array(truth)
    r = evaluate(np.full(truth.size, const), truth)
    assert r.accuracy == np.mean(truth == const)
    if const == np.bincount(truth, minlength=2).argmax():
        assert r.accuracy == np.bincount(truth, minlength=2).max() / truth.size
    assert r.confusion.sum() == r.n_test == truth.size
    assert 0 <= r.accuracy <= 1 and 0 <= r.uar <= 1


def test_absent_class_counts_as_recalled():
    r = evaluate([1, 1, 0], [1, 1, 1])
    assert r.uar == pytest.approx((1.0 + 2 / 3) / 2)


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate([0, 1], [0])
    with pytest.raises(ValueError):
        evaluate([], [])


def test_summarize():
    s = summarize([0.5, 0.7, 0.9])
    assert s["median"] == 0.7 and s["min"] == 0.5 and s["max"] == 0.9


# --- config --------------------------------------------------------------------


def test_default_fraction_list():
    assert len(DEFAULT_FRACTIONS) == 8
    assert DEFAULT_FRACTIONS[0] == 0.1 and DEFAULT_FRACTIONS[-1] == 0.8
    assert ExperimentConfig().seeds == SEEDS


def test_config_round_trip_and_validation():
    cfg = desk_config("DBN", train_corpora=["A"], test_corpus="B", target_fraction=0.2)
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ExperimentError):
        ExperimentConfig.from_dict({"model_kind": "DBN", "bogus": 1})
    with pytest.raises(ExperimentError):
        ExperimentConfig(model_kind="RandomForest")
    with pytest.raises(ExperimentError):
        ExperimentConfig(fractions=[0.9])
    with pytest.raises(ExperimentError):
        ExperimentConfig(target_fraction=1.0)


def test_rotations_are_orthogonal():
    rng = np.random.default_rng(0)
    for r in (random_rotation(6, 0.8, rng), axis_rotation(6, 1.2, rng)):
        assert np.allclose(r @ r.T, np.eye(6), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)
    # the axis rotation turns e_0 by exactly the requested angle
    r = axis_rotation(6, 1.2, rng)
    assert r[0, 0] == pytest.approx(np.cos(1.2))


# --- within-corpus -------------------------------------------------------------


def test_within_split_sizes():
    c = generate_synthetic(SyntheticCorpusSpec(n_per_class=247, dim=5, class_gap=4.0))
    res = within_corpus(c, svm_cfg())
    assert [r.n_test for r in res] == [124] * 5


def test_within_single_class_errors():
    c = generate_synthetic(SyntheticCorpusSpec(n_per_class=20, dim=5, class_gap=4.0))
    one = c.take(np.flatnonzero(c.y == 0))
    for kind in ("DBN", "SparseAeSvm"):
        with pytest.raises(ValueError):
            within_corpus(one, desk_config(kind, seeds=[0]))


def test_within_gap6_dbn():
    c = generate_synthetic(SyntheticCorpusSpec(n_per_class=200, dim=30, class_gap=6.0, seed=1))
    acc = [r.accuracy for r in within_corpus(c, desk_config())]
    assert np.mean(acc) >= 0.9


# --- cross-corpus --------------------------------------------------------------


def test_self_test_is_optimistic():
    c = generate_synthetic(SyntheticCorpusSpec(n_per_class=150, dim=30, class_gap=2.0, seed=3))
    cfg = desk_config(train_corpora=["S"], test_corpus="S")
    self_acc = np.mean([r.accuracy for r in cross_corpus({"S": c}, cfg)])
    within_acc = np.mean([r.accuracy for r in within_corpus(c, cfg)])
    assert self_acc >= within_acc


def test_identity_shift_cross_matches_within():
    pair = synthetic_pair(0.0, 0.0)
    cfg = desk_config(train_corpora=["SRC"], test_corpus="TGT")
    cross = uar_values(cross_corpus(pair, cfg)).mean()
    within = uar_values(within_corpus(pair["TGT"], cfg)).mean()
    assert abs(cross - within) <= 0.03


def test_strong_shift_cross_drops():
    pair = synthetic_pair(1.2, 0.5)
    cfg = desk_config(train_corpora=["SRC"], test_corpus="TGT")
    cross = np.mean([r.accuracy for r in cross_corpus(pair, cfg)])
    within = np.mean([r.accuracy for r in within_corpus(pair["TGT"], cfg)])
    assert cross <= within - 0.10


def test_dimension_mismatch():
    a = generate_synthetic(SyntheticCorpusSpec(10, 4, 1.0), "A")
    b = generate_synthetic(SyntheticCorpusSpec(10, 5, 1.0), "B")
    with pytest.raises(ExperimentError):
        cross_corpus({"A": a, "B": b}, svm_cfg(train_corpora=["A"], test_corpus="B"))


def test_subset_reference():
    c = generate_synthetic(SyntheticCorpusSpec(30, 4, 3.0), "C")
    from dbn_transfer.corpus import Corpus

    c = Corpus(c.id, c.language, c.ids, c.x, c.y, c.raw_labels, {"first": c.ids[:20]})
    res = cross_corpus({"C": c}, svm_cfg(train_corpora=["C"], test_corpus="C:first", seeds=[0]))
    assert res[0].n_test == 20
    with pytest.raises(ExperimentError):
        cross_corpus({"C": c}, svm_cfg(train_corpora=["C"], test_corpus="C:nope"))


# --- sweep ---------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["DBN", "SparseAeSvm"])
def test_sweep_zero_equals_cross(kind):
    suite = small_suite(2)
    cfg = desk_config(kind, train_corpora=["SYN0"], test_corpus="SYN1", seeds=[0, 1])
    sweep = target_fraction_sweep(suite, cfg, [0.0])[0.0]
    cross = cross_corpus(suite, cfg)
    for a, b in zip(sweep, cross):
        assert np.array_equal(a.confusion, b.confusion) and a.uar == b.uar


def test_moved_utterances_leave_test_set():
    suite = small_suite(2)
    cfg = svm_cfg(train_corpora=["SYN0"], test_corpus="SYN1", seeds=[0])
    n = len(suite["SYN1"])
    for f, res in target_fraction_sweep(suite, cfg, [0.0, 0.1, 0.5, 0.8]).items():
        assert res[0].n_test == n - int(np.floor(f * n))


def test_sweep_target_in_sources_rejected():
    suite = small_suite(2)
    with pytest.raises(ExperimentError):
        target_fraction_sweep(suite, svm_cfg(train_corpora=["SYN0", "SYN1"], test_corpus="SYN1"), [0.1])


@pytest.mark.parametrize("kind", ["DBN", "SparseAeSvm"])
def test_no_test_leakage(kind, monkeypatch):
    """A sentinel planted in the test side must not change the trained model."""
    suite = small_suite(2, n_per_class=40)
    cfg = desk_config(kind, seeds=[0])
    fitted = []
    real_fit = ex.fit_model
    monkeypatch.setattr(ex, "fit_model", lambda *a, **k: fitted.append(real_fit(*a, **k)) or fitted[-1])

    seed, f = 11, 0.3
    target = suite["SYN1"]
    n = len(target)
    perm = np.random.default_rng(ex.derive_seed(seed, ex._TARGET)).permutation(n)
    test_row = int(perm[-1])  # never moved into training
    x = np.array(target.x)
    x[test_row] = 0.999
    poisoned = target.with_features(x)

    transfer_run([suite["SYN0"]], target, cfg, f, seed)
    transfer_run([suite["SYN0"]], poisoned, cfg, f, seed)
    a, b = fitted
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


# --- leave-one-corpus-out ------------------------------------------------------


def test_loco_two_corpora_is_cross():
    suite = small_suite(2)
    cfg = svm_cfg(seeds=[0, 1])
    loco = leave_one_corpus_out(suite, cfg)
    assert set(loco) == {"SYN0", "SYN1"}
    for held, other in (("SYN0", "SYN1"), ("SYN1", "SYN0")):
        cross = cross_corpus(suite, svm_cfg(seeds=[0, 1], train_corpora=[other], test_corpus=held))
        assert [r.uar for r in loco[held]] == [r.uar for r in cross]


def test_loco_one_entry_per_corpus():
    suite = small_suite(4)
    assert sorted(leave_one_corpus_out(suite, svm_cfg(seeds=[0]))) == sorted(suite)
    with pytest.raises(ExperimentError):
        leave_one_corpus_out({"SYN0": suite["SYN0"]}, svm_cfg())


# --- suite runner --------------------------------------------------------------


def suite_cells():
    base = desk_config(seeds=[0, 1]).to_dict()
    return [
        {**base, "protocol": "cross", "train_corpora": ["SYN0"], "test_corpus": "SYN1"},
        {"model_kind": "SparseAeSvm", "protocol": "sweep", "train_corpora": ["SYN0"], "test_corpus": "SYN2",
         "fractions": [0.0, 0.2], "seeds": [0, 1]},
        {"model_kind": "SparseAeSvm", "protocol": "loco", "seeds": [0]},
        {"model_kind": "SparseAeSvm", "protocol": "within", "test_corpus": "SYN2", "seeds": [3]},
    ]


def test_empty_manifest():
    assert run_suite([], small_suite(2)) == []
    assert results_to_csv([]).splitlines() == [",".join(RESULT_COLUMNS)]


def test_bad_cell_is_isolated():
    suite = small_suite(3)
    cells = suite_cells()
    good = run_suite(cells, suite, master_seed=5)
    bad = run_suite(cells[:1] + [{"model_kind": "Nope"}, {"protocol": "cross", "test_corpus": "MISSING",
                                                          "train_corpora": ["SYN0"]}] + cells[1:], suite, 5)
    errors = [r for r in bad if r["error"]]
    assert [r["cell"] for r in errors] == [1, 2]
    assert all(r["uar"] is None for r in errors)
    # cells keep their own seeds, so the first cell's rows are untouched
    assert [r["uar"] for r in bad if r["cell"] == 0] == [r["uar"] for r in good if r["cell"] == 0]


def test_suite_csv_byte_identical(tmp_path):
    suite = small_suite(3)
    write_results_csv(run_suite(suite_cells(), suite, master_seed=42), tmp_path / "a.csv")
    write_results_csv(run_suite(suite_cells(), suite, master_seed=42), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_results_csv(tmp_path / "a.csv")
    assert list(rows[0]) == list(RESULT_COLUMNS)
    assert [int(r["cell"]) for r in rows] == sorted(int(r["cell"]) for r in rows)


def test_suite_parallel_matches_serial():
    suite = small_suite(3)
    cells = suite_cells()
    assert results_to_csv(run_suite(cells, suite, 3, jobs=2)) == results_to_csv(run_suite(cells, suite, 3, jobs=1))


def test_master_seed_matters():
    suite = small_suite(3)
    cells = suite_cells()[1:2]
    assert results_to_csv(run_suite(cells, suite, 1)) != results_to_csv(run_suite(cells, suite, 2))


def test_cell_seed_scheme():
    suite = small_suite(2)
    cell = {"model_kind": "SparseAeSvm", "protocol": "cross", "train_corpora": ["SYN0"],
            "test_corpus": "SYN1", "seeds": [4]}
    rows = run_suite([cell, cell], suite, master_seed=9)
    direct = cross_corpus(suite, ExperimentConfig.from_dict(cell), seed_base=9 ^ 1)
    assert rows[1]["uar"] == direct[0].uar


# --- pretraining non-inferiority ------------------------------------------------


@pytest.mark.slow
def test_pretraining_not_worse_than_random_init():
    suite = synthetic_suite(SyntheticSuiteConfig(rotation=1.0, offset_scale=0.25))
    acc = {}
    for kind in ("DBN", "DbnNoPretrain"):
        res = leave_one_corpus_out(suite, desk_config(kind))
        acc[kind] = np.mean([r.accuracy for rs in res.values() for r in rs])
    assert acc["DBN"] >= acc["DbnNoPretrain"] - 0.02
