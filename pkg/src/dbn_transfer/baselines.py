"""Comparison system: sparse autoencoder feature transfer followed by a linear SVM.

The autoencoder is fitted on target-domain features and every source vector
is replaced by its reconstruction before the SVM sees it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import Corpus, ValenceLabel
from .metrics import EvaluationResult, evaluate
from .rbm import FormatVersionError, MalformedModelError, ShapeError

AE_FORMAT_VERSION = 1
SVM_FORMAT_VERSION = 1


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class AeConfig:
    hidden: int = 128
    sparsity_target: float = 0.05
    sparsity_weight: float = 3.0
    weight_decay: float = 1e-4
    learning_rate: float = 0.5
    epochs: int = 400
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.sparsity_target < 1.0:
            raise ValueError("sparsity_target must lie in (0, 1)")
        if self.hidden < 1 or self.epochs < 0 or not self.learning_rate >= 0:
            raise ValueError("hidden >= 1, epochs >= 0, learning_rate >= 0 required")


@dataclass
class SparseAutoencoder:
    W_enc: np.ndarray  # (H, D)
    b_enc: np.ndarray  # (H,)
    W_dec: np.ndarray  # (D, H)
    b_dec: np.ndarray  # (D,)
    sparsity_target: float = 0.05
    sparsity_weight: float = 3.0
    weight_decay: float = 1e-4

    def __post_init__(self):
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        H, D = self.W_enc.shape
        if self.b_enc.shape != (H,) or self.W_dec.shape != (D, H) or self.b_dec.shape != (D,):
            raise ShapeError("inconsistent autoencoder shapes")

    @property
    def input_dim(self) -> int:
        return self.W_enc.shape[1]

    @property
    def hidden(self) -> int:
        return self.W_enc.shape[0]

    @classmethod
    def zeros(cls, D: int, H: int, **kw) -> "SparseAutoencoder":
        return cls(np.zeros((H, D)), np.zeros(H), np.zeros((D, H)), np.zeros(D), **kw)

    def copy(self) -> "SparseAutoencoder":
        return SparseAutoencoder(
            self.W_enc.copy(), self.b_enc.copy(), self.W_dec.copy(), self.b_dec.copy(),
            self.sparsity_target, self.sparsity_weight, self.weight_decay,
        )

    def to_dict(self) -> dict:
        return {
            "version": AE_FORMAT_VERSION,
            "W_enc": self.W_enc.tolist(),
            "b_enc": self.b_enc.tolist(),
            "W_dec": self.W_dec.tolist(),
            "b_dec": self.b_dec.tolist(),
            "sparsity_target": self.sparsity_target,
            "sparsity_weight": self.sparsity_weight,
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseAutoencoder":
        if d.get("version") != AE_FORMAT_VERSION:
            raise FormatVersionError(f"unsupported autoencoder format version {d.get('version')!r}")
        try:
            return cls(
                d["W_enc"], d["b_enc"], d["W_dec"], d["b_dec"],
                d["sparsity_target"], d["sparsity_weight"], d["weight_decay"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedModelError(f"bad autoencoder record: {exc}") from exc


def _check_dim(ae: SparseAutoencoder, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ae.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, autoencoder expects {ae.input_dim}")
    return x


def encode(ae: SparseAutoencoder, x) -> np.ndarray:
    x = _check_dim(ae, x)
    return expit(x @ ae.W_enc.T + ae.b_enc)


def reconstruct(ae: SparseAutoencoder, fv) -> np.ndarray:
    return expit(encode(ae, fv) @ ae.W_dec.T + ae.b_dec)


def reconstruction_error(ae: SparseAutoencoder, x) -> float:
    """Mean squared error per entry."""
    x = _check_dim(ae, np.atleast_2d(x))
    return float(np.mean((reconstruct(ae, x) - x) ** 2))


def kl_sparsity(rho: float, rho_hat: np.ndarray) -> np.ndarray:
    return rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))


def ae_loss_and_grad(ae: SparseAutoencoder, x) -> tuple[float, SparseAutoencoder]:
    """Objective ``sum ||x_hat - x||^2 / (2n) + lam (|W_enc|^2 + |W_dec|^2) + beta sum_j KL(rho || rho_hat_j)``.

    The gradient comes back as a SparseAutoencoder holding partial derivatives.
    """
    x = _check_dim(ae, np.atleast_2d(x))
    n = x.shape[0]
    rho, beta, lam = ae.sparsity_target, ae.sparsity_weight, ae.weight_decay
    h = expit(x @ ae.W_enc.T + ae.b_enc)
    x_hat = expit(h @ ae.W_dec.T + ae.b_dec)
    rho_hat = np.clip(h.mean(axis=0), 1e-12, 1.0 - 1e-12)
    err = x_hat - x
    value = (
        0.5 * np.sum(err * err) / n
        + lam * (np.sum(ae.W_enc**2) + np.sum(ae.W_dec**2))
        + beta * float(np.sum(kl_sparsity(rho, rho_hat)))
    )
    d_out = err * x_hat * (1.0 - x_hat) / n
    d_hidden = d_out @ ae.W_dec + beta * (-rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat)) / n
    dz = d_hidden * h * (1.0 - h)
    grad = SparseAutoencoder(
        W_enc=dz.T @ x + 2.0 * lam * ae.W_enc,
        b_enc=dz.sum(axis=0),
        W_dec=d_out.T @ h + 2.0 * lam * ae.W_dec,
        b_dec=d_out.sum(axis=0),
        sparsity_target=rho,
        sparsity_weight=beta,
        weight_decay=lam,
    )
    return float(value), grad


def init_ae(D: int, cfg: AeConfig) -> SparseAutoencoder:
    rng = np.random.default_rng(cfg.seed)
    r = np.sqrt(6.0 / (cfg.hidden + D + 1))
    return SparseAutoencoder(
        rng.uniform(-r, r, size=(cfg.hidden, D)),
        np.zeros(cfg.hidden),
        rng.uniform(-r, r, size=(D, cfg.hidden)),
        np.zeros(D),
        cfg.sparsity_target,
        cfg.sparsity_weight,
        cfg.weight_decay,
    )


def train_ae(data, cfg: AeConfig, history: list | None = None) -> SparseAutoencoder:
    """Full-batch gradient descent on ``ae_loss_and_grad``."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("autoencoder training data must be a non-empty 2-D array")
    ae = init_ae(x.shape[1], cfg)
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        value, g = ae_loss_and_grad(ae, x)
        if history is not None:
            history.append(value)
        ae.W_enc -= lr * g.W_enc
        ae.b_enc -= lr * g.b_enc
        ae.W_dec -= lr * g.W_dec
        ae.b_dec -= lr * g.b_dec
    return ae


def ae_transfer(target_sample, source: Corpus, cfg: AeConfig) -> tuple[Corpus, SparseAutoencoder]:
    target = np.asarray(target_sample, dtype=np.float64)
    if target.ndim != 2 or target.shape[0] == 0:
        raise ValueError("target sample is empty")
    if target.shape[1] != source.feature_dim:
        raise ShapeError(f"target has {target.shape[1]} features, source has {source.feature_dim}")
    ae = train_ae(target, cfg)
    return source.with_features(reconstruct(ae, source.x)), ae


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0 or self.epochs < 1:
            raise ValueError("C > 0 and epochs >= 1 required")


@dataclass
class LinearSvm:
    w: np.ndarray
    bias: float
    C: float = 1.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.bias = float(self.bias)

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.w.size:
            raise ShapeError(f"input has {x.shape[-1]} features, SVM expects {self.w.size}")
        return x @ self.w + self.bias

    def to_dict(self) -> dict:
        return {"version": SVM_FORMAT_VERSION, "w": self.w.tolist(), "bias": self.bias, "C": self.C}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSvm":
        if d.get("version") != SVM_FORMAT_VERSION:
            raise FormatVersionError(f"unsupported SVM format version {d.get('version')!r}")
        try:
            return cls(d["w"], d["bias"], d["C"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedModelError(f"bad SVM record: {exc}") from exc


def svm_objective(w: np.ndarray, bias: float, x: np.ndarray, y_pm: np.ndarray, lam: float) -> float:
    """lam/2 |(w, bias)|^2 + mean hinge; the bias is regularized like a weight."""
    margins = y_pm * (x @ w + bias)
    return float(0.5 * lam * (w @ w + bias * bias) + np.mean(np.maximum(0.0, 1.0 - margins)))


def train_svm(x, y, cfg: SvmConfig, history: list | None = None) -> LinearSvm:
    """Pegasos: one sample per step, step size 1/(lam t), projection onto the
    ball of radius 1/sqrt(lam); the returned weights are the running average
    of all iterates. ``history`` gets the averaged iterate's objective per epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("features and labels disagree")
    if np.unique(y).size < 2:
        raise SingleClassError("SVM training needs both classes")
    n, d = x.shape
    y_pm = np.where(y == 1, 1.0, -1.0)
    xa = np.hstack([x, np.ones((n, 1))])
    lam = 1.0 / (cfg.C * n)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(d + 1)
    w_avg = np.zeros(d + 1)
    t = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y_pm[i] * (xa[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y_pm[i] * xa[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            w_avg += (w - w_avg) / t
        if history is not None:
            history.append(svm_objective(w_avg[:d], w_avg[d], x, y_pm, lam))
    return LinearSvm(w_avg[:d].copy(), w_avg[d], cfg.C)


def svm_predict(svm: LinearSvm, fv) -> ValenceLabel:
    return ValenceLabel.POSITIVE if svm.decision(fv) > 0 else ValenceLabel.NEGATIVE


def svm_predict_indices(svm: LinearSvm, x) -> np.ndarray:
    return (svm.decision(np.atleast_2d(x)) > 0).astype(np.int64)


@dataclass
class AeSvmModel:
    svm: LinearSvm
    ae: SparseAutoencoder | None = None
    standardizer: dict | None = None

    def to_dict(self) -> dict:
        d = {"version": SVM_FORMAT_VERSION, "kind": "ae-svm", "svm": self.svm.to_dict()}
        d["ae"] = None if self.ae is None else self.ae.to_dict()
        if self.standardizer is not None:
            d["standardizer"] = self.standardizer
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AeSvmModel":
        if not isinstance(d, dict):
            raise MalformedModelError("model file must hold a JSON object")
        if d.get("version") != SVM_FORMAT_VERSION:
            raise FormatVersionError(f"unsupported model format version {d.get('version')!r}")
        try:
            ae = None if d.get("ae") is None else SparseAutoencoder.from_dict(d["ae"])
            return cls(LinearSvm.from_dict(d["svm"]), ae, d.get("standardizer"))
        except (KeyError, TypeError) as exc:
            raise MalformedModelError(f"bad ae-svm record: {exc}") from exc

    def predict_indices(self, x) -> np.ndarray:
        # the autoencoder only rewrites training data; test vectors go to the SVM as-is
        return svm_predict_indices(self.svm, x)


def fit_ae_svm(train: Corpus, target_sample, ae_cfg: AeConfig, svm_cfg: SvmConfig) -> AeSvmModel:
    """AE transfer when a target sample is given (and non-empty), else plain SVM."""
    ae = None
    if target_sample is not None and len(target_sample) > 0:
        train, ae = ae_transfer(target_sample, train, ae_cfg)
    return AeSvmModel(train_svm(train.x, train.y, svm_cfg), ae)


def baseline_pipeline(
    train: Corpus,
    test: Corpus,
    target_sample=None,
    ae_cfg: AeConfig = AeConfig(),
    svm_cfg: SvmConfig = SvmConfig(),
) -> EvaluationResult:
    if train.feature_dim != test.feature_dim:
        raise ShapeError("train and test feature dimensions differ")
    model = fit_ae_svm(train, target_sample, ae_cfg, svm_cfg)
    return evaluate(model.predict_indices(test.x), test.y)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")
