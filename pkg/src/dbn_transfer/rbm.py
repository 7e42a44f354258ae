"""Bernoulli-Bernoulli restricted Boltzmann machine.

Energy ``E(v, h) = -v W h - b_v . v - b_h . h`` with sigmoid conditionals.
Training uses CD-k with mean-field visible reconstructions; small instances
can be scored exactly by enumerating the partition function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

RBM_FORMAT_VERSION = 1
MAX_ENUM_UNITS = 20


class ShapeError(ValueError):
    pass


class EnumerationTooLargeError(ValueError):
    pass


class FormatVersionError(ValueError):
    pass


class MalformedModelError(ValueError):
    pass


@dataclass
class Rbm:
    W: np.ndarray  # (D, K)
    b_v: np.ndarray  # (D,)
    b_h: np.ndarray  # (K,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b_v = np.asarray(self.b_v, dtype=np.float64)
        self.b_h = np.asarray(self.b_h, dtype=np.float64)
        if self.W.ndim != 2 or self.b_v.shape != (self.W.shape[0],) or self.b_h.shape != (self.W.shape[1],):
            raise ShapeError(f"inconsistent shapes W{self.W.shape} b_v{self.b_v.shape} b_h{self.b_h.shape}")

    @property
    def D(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, D: int, K: int) -> "Rbm":
        return cls(np.zeros((D, K)), np.zeros(D), np.zeros(K))

    def copy(self) -> "Rbm":
        return Rbm(self.W.copy(), self.b_v.copy(), self.b_h.copy())

    def to_dict(self) -> dict:
        return {
            "version": RBM_FORMAT_VERSION,
            "D": self.D,
            "K": self.K,
            "W": self.W.ravel().tolist(),
            "b_v": self.b_v.tolist(),
            "b_h": self.b_h.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rbm":
        if d.get("version") != RBM_FORMAT_VERSION:
            raise FormatVersionError(f"unsupported RBM format version {d.get('version')!r}")
        try:
            D, K = int(d["D"]), int(d["K"])
            W = np.asarray(d["W"], dtype=np.float64).reshape(D, K)
            return cls(W, d["b_v"], d["b_h"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedModelError(f"bad RBM record: {exc}") from exc


def save_rbm(rbm: Rbm, path) -> None:
    Path(path).write_text(json.dumps(rbm.to_dict()), encoding="utf-8")


def load_rbm(path) -> Rbm:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{path}: {exc}") from exc
    return Rbm.from_dict(d)


@dataclass(frozen=True)
class CdConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 64
    cd_k: int = 1
    momentum: float = 0.5
    weight_decay: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.cd_k < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, cd_k >= 1 and batch_size >= 1 required")


def _check_visible(rbm: Rbm, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != rbm.D:
        raise ShapeError(f"visible vector has {v.shape[-1]} units, RBM has {rbm.D}")
    return v


def _check_hidden(rbm: Rbm, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != rbm.K:
        raise ShapeError(f"hidden vector has {h.shape[-1]} units, RBM has {rbm.K}")
    return h


def energy(rbm: Rbm, v, h) -> np.ndarray | float:
    """Energy of one configuration, or row-wise for stacked ``v``/``h``."""
    v = _check_visible(rbm, v)
    h = _check_hidden(rbm, h)
    e = -np.einsum("...i,ij,...j->...", v, rbm.W, h) - v @ rbm.b_v - h @ rbm.b_h
    return float(e) if np.ndim(e) == 0 else e


def hidden_prob(rbm: Rbm, v) -> np.ndarray:
    v = _check_visible(rbm, v)
    return expit(v @ rbm.W + rbm.b_h)


def visible_prob(rbm: Rbm, h) -> np.ndarray:
    h = _check_hidden(rbm, h)
    return expit(h @ rbm.W.T + rbm.b_v)


def sample_hidden(rbm: Rbm, v, rng: np.random.Generator) -> np.ndarray:
    p = hidden_prob(rbm, v)
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_visible(rbm: Rbm, h, rng: np.random.Generator) -> np.ndarray:
    p = visible_prob(rbm, h)
    return (rng.random(p.shape) < p).astype(np.float64)


def free_energy(rbm: Rbm, v) -> np.ndarray | float:
    """F(v) = -b_v . v - sum_j softplus(b_h_j + (v W)_j)."""
    v = _check_visible(rbm, v)
    f = -(v @ rbm.b_v) - np.logaddexp(0.0, v @ rbm.W + rbm.b_h).sum(axis=-1)
    return float(f) if np.ndim(f) == 0 else f


def binary_states(n: int) -> np.ndarray:
    """All 2**n binary vectors as rows, most significant bit first."""
    codes = np.arange(2**n)[:, None]
    return ((codes >> np.arange(n - 1, -1, -1)) & 1).astype(np.float64)


def _guard(rbm: Rbm) -> None:
    if rbm.D + rbm.K > MAX_ENUM_UNITS:
        raise EnumerationTooLargeError(
            f"exact enumeration needs D + K <= {MAX_ENUM_UNITS}, got {rbm.D} + {rbm.K}"
        )


def log_partition(rbm: Rbm) -> float:
    _guard(rbm)
    return float(logsumexp(-free_energy(rbm, binary_states(rbm.D))))


def exact_log_likelihood(rbm: Rbm, data) -> float:
    """Mean log P(v) over ``data`` with Z summed over every visible state."""
    data = _check_visible(rbm, np.atleast_2d(data))
    log_z = log_partition(rbm)
    return float(np.mean(-free_energy(rbm, data)) - log_z)


def exact_log_likelihood_grad(rbm: Rbm, data) -> Rbm:
    """Gradient of ``exact_log_likelihood`` packed as an Rbm of partial derivatives.

    Data term minus model term, the model expectation taken exactly under P(v).
    """
    data = _check_visible(rbm, np.atleast_2d(data))
    _guard(rbm)
    states = binary_states(rbm.D)
    neg_f = -free_energy(rbm, states)
    p_v = np.exp(neg_f - logsumexp(neg_f))
    ph_model = hidden_prob(rbm, states)
    ph_data = hidden_prob(rbm, data)
    n = data.shape[0]
    return Rbm(
        W=data.T @ ph_data / n - (states * p_v[:, None]).T @ ph_model,
        b_v=data.mean(axis=0) - p_v @ states,
        b_h=ph_data.mean(axis=0) - p_v @ ph_model,
    )


@dataclass
class RbmDelta:
    """Parameter step (also the momentum state carried between updates)."""

    W: np.ndarray
    b_v: np.ndarray
    b_h: np.ndarray

    @classmethod
    def zeros_like(cls, rbm: Rbm) -> "RbmDelta":
        return cls(np.zeros_like(rbm.W), np.zeros_like(rbm.b_v), np.zeros_like(rbm.b_h))

    def apply(self, rbm: Rbm) -> Rbm:
        return Rbm(rbm.W + self.W, rbm.b_v + self.b_v, rbm.b_h + self.b_h)


def cd_update(
    rbm: Rbm,
    batch,
    cfg: CdConfig,
    rng: np.random.Generator,
    velocity: RbmDelta | None = None,
) -> RbmDelta:
    """One CD-k step on a mini-batch; returns the delta to add to the parameters.

    Pass the previous delta as ``velocity`` to get momentum.
    """
    v0 = _check_visible(rbm, np.atleast_2d(batch))
    n = v0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    ph0 = hidden_prob(rbm, v0)
    ph, vk = ph0, v0
    for _ in range(cfg.cd_k):
        h = (rng.random(ph.shape) < ph).astype(np.float64)
        vk = visible_prob(rbm, h)
        ph = hidden_prob(rbm, vk)

    lr = cfg.learning_rate
    grad_W = (v0.T @ ph0 - vk.T @ ph) / n - cfg.weight_decay * rbm.W
    grad_bv = (v0 - vk).mean(axis=0)
    grad_bh = (ph0 - ph).mean(axis=0)
    if velocity is None:
        velocity = RbmDelta.zeros_like(rbm)
    m = cfg.momentum
    return RbmDelta(
        W=m * velocity.W + lr * grad_W,
        b_v=m * velocity.b_v + lr * grad_bv,
        b_h=m * velocity.b_h + lr * grad_bh,
    )


def init_rbm(D: int, K: int, rng: np.random.Generator) -> Rbm:
    return Rbm(rng.normal(0.0, 0.01, size=(D, K)), np.zeros(D), np.zeros(K))


def train_rbm(data, n_hidden: int, cfg: CdConfig, callback=None) -> Rbm:
    """Fit an RBM by mini-batch CD-k.

    ``callback(epoch, rbm)`` runs after every epoch if given.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("training data must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    rbm = init_rbm(data.shape[1], n_hidden, rng)
    velocity = RbmDelta.zeros_like(rbm)
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            velocity = cd_update(rbm, batch, cfg, rng, velocity)
            rbm = velocity.apply(rbm)
        if callback is not None:
            callback(epoch, rbm)
    return rbm
