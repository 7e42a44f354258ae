import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dbn_transfer.baselines import (
    AeConfig,
    AeSvmModel,
    LinearSvm,
    SingleClassError,
    SparseAutoencoder,
    SvmConfig,
    ae_loss_and_grad,
    ae_transfer,
    baseline_pipeline,
    fit_ae_svm,
    init_ae,
    kl_sparsity,
    reconstruct,
    reconstruction_error,
    svm_objective,
    svm_predict,
    svm_predict_indices,
    train_ae,
    train_svm,
)
from dbn_transfer.corpus import Corpus, SyntheticCorpusSpec, ValenceLabel, generate_synthetic, split
from dbn_transfer.features import fit_standardizer
from dbn_transfer.rbm import FormatVersionError, ShapeError
from gradcheck import central_diff, rel_error


def corpus_from(x, y, cid="C"):
    y = np.asarray(y)
    return Corpus(cid, "x", tuple(f"u{i}" for i in range(len(y))), x, y, tuple(ValenceLabel(int(v)).short for v in y))


# --- autoencoder ---------------------------------------------------------------


def test_ae_gradient_finite_differences():
    rng = np.random.default_rng(0)
    ae = SparseAutoencoder(rng.normal(0, 0.5, (3, 4)), rng.normal(0, 0.5, 3), rng.normal(0, 0.5, (4, 3)),
                           rng.normal(0, 0.5, 4), sparsity_target=0.2, sparsity_weight=0.7, weight_decay=0.01)
    x = rng.random((6, 4))
    _, g = ae_loss_and_grad(ae, x)
    params = [ae.W_enc, ae.b_enc, ae.W_dec, ae.b_dec]
    numeric = central_diff(lambda: ae_loss_and_grad(ae, x)[0], params)
    assert rel_error([g.W_enc, g.b_enc, g.W_dec, g.b_dec], numeric) < 1e-4


def test_ae_loss_matches_definition():
    rng = np.random.default_rng(1)
    ae = init_ae(4, AeConfig(hidden=3, sparsity_target=0.1, sparsity_weight=2.0, weight_decay=0.05, seed=2))
    x = rng.random((5, 4))
    h = 1 / (1 + np.exp(-(x @ ae.W_enc.T + ae.b_enc)))
    xh = 1 / (1 + np.exp(-(h @ ae.W_dec.T + ae.b_dec)))
    rho_hat = h.mean(0)
    kl = np.sum(0.1 * np.log(0.1 / rho_hat) + 0.9 * np.log(0.9 / (1 - rho_hat)))
    expected = np.sum((xh - x) ** 2) / (2 * 5) + 0.05 * (np.sum(ae.W_enc**2) + np.sum(ae.W_dec**2)) + 2.0 * kl
    assert ae_loss_and_grad(ae, x)[0] == pytest.approx(expected, rel=1e-12)


def test_ae_memorizes_tiny_set():
    x = np.random.default_rng(2).uniform(0.1, 0.9, (5, 4))
    ae = train_ae(x, AeConfig(hidden=8, sparsity_weight=0.0, weight_decay=0.0, learning_rate=0.5, epochs=5000))
    assert reconstruction_error(ae, x) < 1e-2


def test_ae_zero_learning_rate():
    x = np.random.default_rng(3).random((5, 4))
    cfg = AeConfig(hidden=3, learning_rate=0.0, epochs=10, seed=4)
    a, b = train_ae(x, cfg), init_ae(4, cfg)
    assert np.array_equal(a.W_enc, b.W_enc) and np.array_equal(a.W_dec, b.W_dec)


def test_ae_training_beats_constant_output():
    x = np.random.default_rng(5).random((40, 6))
    ae = train_ae(x, AeConfig(hidden=16, epochs=300))
    zero = SparseAutoencoder.zeros(6, 16)
    assert reconstruction_error(ae, x) < reconstruction_error(zero, x)


def test_ae_loss_decreases():
    x = np.random.default_rng(6).random((30, 5))
    hist = []
    train_ae(x, AeConfig(hidden=10, epochs=100, learning_rate=0.1), hist)
    assert hist[-1] < hist[0]


def test_zero_ae_outputs_half():
    out = reconstruct(SparseAutoencoder.zeros(3, 5), np.random.default_rng(0).normal(size=(4, 3)))
    assert np.array_equal(out, np.full((4, 3), 0.5))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_reconstruction_in_unit_interval(x):
    ae = init_ae(4, AeConfig(hidden=3, seed=1))
    ae.b_dec[:] = 0.3
    out = reconstruct(ae, x)
    assert np.all((out > 0) & (out < 1))


def test_reconstruct_dimension_mismatch():
    with pytest.raises(ShapeError):
        reconstruct(SparseAutoencoder.zeros(3, 2), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), arrays(np.float64, 5, elements=st.floats(1e-6, 1 - 1e-6)))
def test_kl_nonnegative(rho, rho_hat):
    assert np.all(kl_sparsity(rho, rho_hat) >= -1e-12)
    assert np.all(np.abs(kl_sparsity(rho, np.full(5, rho))) < 1e-12)


def test_ae_config_validation():
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            AeConfig(sparsity_target=bad)
    d = AeConfig()
    assert (d.hidden, d.sparsity_target, d.sparsity_weight) == (128, 0.05, 3.0)


def test_ae_round_trip():
    ae = init_ae(4, AeConfig(hidden=3, seed=9))
    back = SparseAutoencoder.from_dict(json.loads(json.dumps(ae.to_dict())))
    assert np.array_equal(back.W_enc, ae.W_enc) and np.array_equal(back.b_dec, ae.b_dec)
    with pytest.raises(FormatVersionError):
        SparseAutoencoder.from_dict({**ae.to_dict(), "version": 99})


# --- transfer -----------------------------------------------------------------


def test_transfer_preserves_size_and_labels():
    rng = np.random.default_rng(7)
    src = corpus_from(rng.random((12, 4)), rng.integers(0, 2, 12))
    out, _ = ae_transfer(rng.random((5, 4)), src, AeConfig(hidden=6, epochs=20))
    assert len(out) == len(src) and np.array_equal(out.y, src.y) and out.ids == src.ids


def test_transfer_untrained_collapses_to_half():
    rng = np.random.default_rng(8)
    src = corpus_from(rng.random((6, 3)), [0, 1] * 3)
    cfg = AeConfig(hidden=4, epochs=0)
    out, ae = ae_transfer(rng.random((3, 3)), src, cfg)
    zero = SparseAutoencoder.zeros(3, 4)
    assert np.array_equal(reconstruct(zero, src.x), np.full((6, 3), 0.5))
    assert out.x.shape == src.x.shape


def test_transfer_near_identity_on_own_data():
    x = np.random.default_rng(9).uniform(0.1, 0.9, (5, 4))
    src = corpus_from(x, [0, 1, 0, 1, 0])
    cfg = AeConfig(hidden=8, sparsity_weight=0.0, weight_decay=0.0, epochs=5000)
    out, _ = ae_transfer(x, src, cfg)
    assert np.mean((out.x - x) ** 2) < 1e-2
    assert np.array_equal(out.y, src.y)


def test_transfer_dimension_mismatch():
    with pytest.raises(ShapeError):
        ae_transfer(np.zeros((3, 5)), corpus_from(np.zeros((2, 4)), [0, 1]), AeConfig(epochs=1))


# --- SVM -----------------------------------------------------------------------


def test_separable_2d():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [1.0, 1.0], [0.9, 1.0], [1.0, 0.9]])
    y = np.array([0, 0, 0, 1, 1, 1])
    svm = train_svm(x, y, SvmConfig(C=10.0, epochs=200))
    assert np.array_equal(svm_predict_indices(svm, x), y)


def test_sign_rule_example():
    svm = LinearSvm(np.array([1.0, 0.0]), -0.5)
    assert svm_predict(svm, np.array([0.4, 9.0])) is ValenceLabel.NEGATIVE
    assert svm_predict(svm, np.array([0.5, 0.0])) is ValenceLabel.NEGATIVE  # exactly 0
    assert svm_predict(svm, np.array([0.6, -9.0])) is ValenceLabel.POSITIVE


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 3, elements=st.floats(-10, 10)),
    st.floats(-10, 10),
    st.floats(1e-3, 1e3),
    arrays(np.float64, (6, 3), elements=st.floats(-10, 10)),
)
def test_positive_scaling_invariance(w, b, c, x):
    a = svm_predict_indices(LinearSvm(w, b), x)
    s = svm_predict_indices(LinearSvm(w * c, b * c), x)
    # exact zeros can flip only through rounding; compare where the margin is clear
    clear = np.abs(x @ w + b) > 1e-9 * (1 + np.abs(x) @ np.abs(w) + abs(b))
    assert np.array_equal(a[clear], s[clear])


def blobs(n, spread, seed):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    return rng.normal(size=(n, 2)) * spread + np.where(y[:, None] == 1, 1.0, 0.0), y


# Toy suite for the averaged-iterate property: two-class blobs of 100 and 200
# points, five sampling seeds each. The property is empirical, not a theorem of
# the method: late epochs can tick up by ~1e-4 when a run of margin violators
# lands together. The two counterexamples found in this suite stay visible as
# strict xfails rather than being dropped.
_COUNTEREXAMPLE = pytest.mark.xfail(strict=True, reason="averaged objective rises at epoch 15 (known counterexample)")
_SVM_TOY_SUITE = [
    pytest.param(n, spread, seed, marks=_COUNTEREXAMPLE) if (n, seed) == (100, 3) else (n, spread, seed)
    for n in (100, 200)
    for spread in (0.3, 1.0)
    for seed in range(5)
]


@pytest.mark.parametrize("n,spread,seed", _SVM_TOY_SUITE)
def test_averaged_objective_non_increasing(n, spread, seed):
    x, y = blobs(n, spread, seed=n + int(10 * spread))
    hist = []
    train_svm(x, y, SvmConfig(C=1.0, seed=seed), hist)
    assert len(hist) == 20
    assert np.all(np.diff(hist) <= 1e-6)


@pytest.mark.parametrize("n,spread,seed", [(n, sp, s) for n in (100, 200) for sp in (0.3, 1.0) for s in range(5)])
def test_averaged_objective_settles(n, spread, seed):
    # what does hold everywhere: the last epoch is far below the first
    x, y = blobs(n, spread, seed=n + int(10 * spread))
    hist = []
    train_svm(x, y, SvmConfig(C=1.0, seed=seed), hist)
    assert hist[-1] < hist[0]
    assert max(np.diff(hist)) < 1e-3 * hist[0]


def test_objective_definition():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([1.0, -1.0])
    w = np.array([0.5, 0.5])
    # margins: 0.5+0.1, -(0.5+0.1) -> hinge 0.4, 1.6
    assert svm_objective(w, 0.1, x, y, 0.2) == pytest.approx(0.1 * (0.5 + 0.01) + 1.0)


def test_single_class_rejected():
    with pytest.raises(SingleClassError):
        train_svm(np.zeros((4, 2)), np.ones(4, dtype=int), SvmConfig())


def test_svm_deterministic_and_round_trip():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(40, 3)), rng.integers(0, 2, 40)
    a, b = train_svm(x, y, SvmConfig(seed=3)), train_svm(x, y, SvmConfig(seed=3))
    assert np.array_equal(a.w, b.w) and a.bias == b.bias
    back = LinearSvm.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(back.w, a.w) and back.bias == a.bias


# --- pipeline ------------------------------------------------------------------


def gap_corpus(gap, seed, n=200, cid="S", **kw):
    return generate_synthetic(SyntheticCorpusSpec(n_per_class=n, dim=10, class_gap=gap, seed=seed, **kw), cid)


def standardized(train, *others):
    std = fit_standardizer(train.x)
    return [c.with_features(std.apply(c.x)) for c in (train, *others)]


def test_within_corpus_gap6():
    c = gap_corpus(6.0, seed=1)
    tr, te = split(c, 0.75, seed=2)
    tr, te = standardized(tr, te)
    assert baseline_pipeline(tr, te).accuracy > 0.9


def test_empty_target_is_plain_svm():
    c = gap_corpus(3.0, seed=3)
    tr, te = split(c, 0.75, seed=4)
    tr, te = standardized(tr, te)
    empty = np.zeros((0, 10))
    a = baseline_pipeline(tr, te, empty)
    b = baseline_pipeline(tr, te, None)
    assert np.array_equal(a.confusion, b.confusion)
    model = fit_ae_svm(tr, empty, AeConfig(), SvmConfig())
    assert model.ae is None


def test_self_test_beats_shifted_test():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    same, shifted = [], []
    for s in range(5):
        src = gap_corpus(3.0, seed=10 + s)
        tgt = gap_corpus(3.0, seed=20 + s, shift_matrix=q, shift_offset=rng.normal(0, 1, 10))
        a, b = standardized(src, tgt)
        same.append(baseline_pipeline(a, a, None, svm_cfg=SvmConfig(seed=s)).accuracy)
        shifted.append(baseline_pipeline(a, b, None, svm_cfg=SvmConfig(seed=s)).accuracy)
    assert np.mean(same) >= np.mean(shifted)


def test_ae_svm_model_round_trip():
    c = gap_corpus(3.0, seed=5, n=30)
    (tr,) = standardized(c)
    model = fit_ae_svm(tr, tr.x[:10], AeConfig(hidden=5, epochs=5), SvmConfig())
    back = AeSvmModel.from_dict(json.loads(json.dumps(model.to_dict())))
    assert np.array_equal(back.predict_indices(tr.x), model.predict_indices(tr.x))
    assert np.array_equal(back.ae.W_enc, model.ae.W_enc)
