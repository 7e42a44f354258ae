"""Deep belief network classifier: greedy RBM pretraining plus a softmax head.

Inference is mean-field (hidden probabilities, never samples). Output index 0
is Negative valence, 1 is Positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ._rng import derive_seed
from .corpus import Corpus, ValenceLabel
from .rbm import (
    CdConfig,
    FormatVersionError,
    MalformedModelError,
    Rbm,
    ShapeError,
    hidden_prob,
    init_rbm,
    train_rbm,
)

DBN_FORMAT_VERSION = 1
N_CLASSES = 2


@dataclass(frozen=True)
class DbnArchitecture:
    layer_sizes: tuple[int, ...] = (1000, 1000, 2000)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError("layer_sizes must be non-empty and positive")
        object.__setattr__(self, "layer_sizes", sizes)


@dataclass(frozen=True)
class FineTuneConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("learning_rate >= 0, epochs >= 0 and batch_size >= 1 required")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class DbnClassifier:
    rbm_stack: list[Rbm]
    out_weights: np.ndarray  # (2, K_last)
    out_bias: np.ndarray  # (2,)
    standardizer: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.out_weights = np.asarray(self.out_weights, dtype=np.float64)
        self.out_bias = np.asarray(self.out_bias, dtype=np.float64)
        if not self.rbm_stack:
            raise ShapeError("a DBN needs at least one RBM")
        for lower, upper in zip(self.rbm_stack, self.rbm_stack[1:]):
            if upper.D != lower.K:
                raise ShapeError(f"layer chain broken: {lower.K} hidden units feed {upper.D} visible")
        if self.out_weights.shape != (N_CLASSES, self.rbm_stack[-1].K) or self.out_bias.shape != (N_CLASSES,):
            raise ShapeError("output layer shape does not match the top RBM")

    @property
    def input_dim(self) -> int:
        return self.rbm_stack[0].D

    def copy(self) -> "DbnClassifier":
        return DbnClassifier(
            [r.copy() for r in self.rbm_stack], self.out_weights.copy(), self.out_bias.copy(), self.standardizer
        )


def pretrain(x, arch: DbnArchitecture, cfg: CdConfig) -> list[Rbm]:
    """Greedy layer-wise CD training; layer l sees layer l-1's hidden probabilities."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("pretraining data must be a non-empty 2-D array")
    stack = []
    layer_input = x
    for depth, n_hidden in enumerate(arch.layer_sizes):
        layer_cfg = replace(cfg, seed=derive_seed(cfg.seed, depth))
        rbm = train_rbm(layer_input, n_hidden, layer_cfg)
        stack.append(rbm)
        layer_input = hidden_prob(rbm, layer_input)
    return stack


def random_stack(input_dim: int, arch: DbnArchitecture, seed: int) -> list[Rbm]:
    """Same initialization as pretraining starts from, without any CD epochs."""
    stack = []
    d = input_dim
    for depth, k in enumerate(arch.layer_sizes):
        stack.append(init_rbm(d, k, np.random.default_rng(derive_seed(seed, depth))))
        d = k
    return stack


def attach_head(stack: list[Rbm], seed: int) -> DbnClassifier:
    rng = np.random.default_rng(derive_seed(seed, 0x4EAD))
    k = stack[-1].K
    return DbnClassifier(list(stack), rng.normal(0.0, 0.01, size=(N_CLASSES, k)), np.zeros(N_CLASSES))


def _hidden_activations(model: DbnClassifier, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for rbm in model.rbm_stack:
        acts.append(expit(acts[-1] @ rbm.W + rbm.b_h))
    return acts


def logits(model: DbnClassifier, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, model expects {model.input_dim}")
    h = x
    for rbm in model.rbm_stack:
        h = expit(h @ rbm.W + rbm.b_h)
    return h @ model.out_weights.T + model.out_bias


def forward(model: DbnClassifier, fv) -> np.ndarray:
    """Class probabilities (Negative, Positive) for one vector or a batch of rows."""
    return softmax(logits(model, fv), axis=-1)


def loss(model: DbnClassifier, x, y) -> float:
    """Mean cross-entropy of integer labels ``y`` under the model."""
    lp = log_softmax(logits(model, x), axis=-1)
    y = np.asarray(y, dtype=np.int64)
    return float(-lp[np.arange(y.size), y].mean())


@dataclass
class DbnGrad:
    W: list[np.ndarray]
    b_h: list[np.ndarray]
    out_weights: np.ndarray
    out_bias: np.ndarray


def loss_and_grad(model: DbnClassifier, x, y) -> tuple[float, DbnGrad]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, model expects {model.input_dim}")
    n = x.shape[0]
    acts = _hidden_activations(model, x)
    z = acts[-1] @ model.out_weights.T + model.out_bias
    lp = log_softmax(z, axis=1)
    value = float(-lp[np.arange(n), y].mean())

    delta = np.exp(lp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    g_out_w = delta.T @ acts[-1]
    g_out_b = delta.sum(axis=0)
    back = delta @ model.out_weights
    g_w, g_b = [], []
    for layer in range(len(model.rbm_stack) - 1, -1, -1):
        h = acts[layer + 1]
        dz = back * h * (1.0 - h)
        g_w.append(acts[layer].T @ dz)
        g_b.append(dz.sum(axis=0))
        back = dz @ model.rbm_stack[layer].W.T
    return value, DbnGrad(g_w[::-1], g_b[::-1], g_out_w, g_out_b)


def fine_tune(model: DbnClassifier, x, y, cfg: FineTuneConfig, history: list | None = None) -> DbnClassifier:
    """Mini-batch gradient descent (optionally with momentum) on cross-entropy
    through every layer.

    Visible biases never enter the forward pass and stay as pretrained. If
    ``history`` is a list it receives the full-data loss before training and
    after every epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("fine-tuning needs at least one labelled example")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    lr, mu = cfg.learning_rate, cfg.momentum
    params = [p for rbm in model.rbm_stack for p in (rbm.W, rbm.b_h)] + [model.out_weights, model.out_bias]
    velocity = [np.zeros_like(p) for p in params]
    if history is not None:
        history.append(loss(model, x, y))
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, g = loss_and_grad(model, x[idx], y[idx])
            grads = [q for pair in zip(g.W, g.b_h) for q in pair] + [g.out_weights, g.out_bias]
            for p, v, q in zip(params, velocity, grads):
                v *= mu
                v -= lr * q
                p += v
        if history is not None:
            history.append(loss(model, x, y))
    return model


def train_dbn(
    x,
    y,
    arch: DbnArchitecture,
    cd: CdConfig,
    ft: FineTuneConfig,
    pretrained: bool = True,
) -> DbnClassifier:
    if pretrained:
        stack = pretrain(x, arch, cd)
    else:
        stack = random_stack(np.shape(x)[1], arch, cd.seed)
    return fine_tune(attach_head(stack, ft.seed), x, y, ft)


def predict(model: DbnClassifier, fv) -> ValenceLabel:
    p = forward(model, fv)
    return ValenceLabel.POSITIVE if p[1] > p[0] else ValenceLabel.NEGATIVE


def predict_indices(model: DbnClassifier, x) -> np.ndarray:
    """Vectorized argmax with ties resolved to Negative (index 0)."""
    p = forward(model, np.atleast_2d(x))
    return (p[:, 1] > p[:, 0]).astype(np.int64)


def predict_batch(model: DbnClassifier, corpus: Corpus) -> list[ValenceLabel]:
    return [ValenceLabel(int(i)) for i in predict_indices(model, corpus.x)]


def to_dict(model: DbnClassifier) -> dict:
    d = {
        "version": DBN_FORMAT_VERSION,
        "kind": "dbn",
        "rbm_stack": [r.to_dict() for r in model.rbm_stack],
        "out_weights": model.out_weights.tolist(),
        "out_bias": model.out_bias.tolist(),
    }
    if model.standardizer is not None:
        d["standardizer"] = model.standardizer
    return d


def from_dict(d: dict) -> DbnClassifier:
    if not isinstance(d, dict):
        raise MalformedModelError("model file must hold a JSON object")
    if d.get("version") != DBN_FORMAT_VERSION:
        raise FormatVersionError(f"unsupported DBN format version {d.get('version')!r}")
    try:
        stack = [Rbm.from_dict(r) for r in d["rbm_stack"]]
        return DbnClassifier(stack, d["out_weights"], d["out_bias"], d.get("standardizer"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatVersionError):
            raise
        raise MalformedModelError(f"bad DBN record: {exc}") from exc


def save(model: DbnClassifier, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)), encoding="utf-8")


def load(path) -> DbnClassifier:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{path}: {exc}") from exc
    return from_dict(d)
