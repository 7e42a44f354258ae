"""Corpora, the valence mapping, CSV/manifest ingestion, splitting and synthetic data."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit


class ValenceLabel(IntEnum):
    # index order is frozen: classifier output 0 is Negative
    NEGATIVE = 0
    POSITIVE = 1

    @property
    def short(self) -> str:
        return "neg" if self is ValenceLabel.NEGATIVE else "pos"


class CorpusError(ValueError):
    pass


class UnknownCorpusError(CorpusError):
    pass


class UnknownLabelError(CorpusError):
    pass


class RaggedRowError(CorpusError):
    pass


class NonNumericCellError(CorpusError):
    pass


@dataclass(frozen=True)
class CorpusInfo:
    language: str
    age_group: str
    n_utterances: int
    negative: tuple[str, ...]
    positive: tuple[str, ...]


# Corpus metadata and categorical-to-valence mapping of the five benchmark corpora.
# FAU-AIBO's "Rest" class is listed on the positive side.
CORPORA = {
    "FAU-AIBO": CorpusInfo(
        "German", "Children", 18216,
        ("Angry", "Touchy", "Emphatic", "Reprimanding"),
        ("Motherese", "Joyful", "Neutral", "Rest"),
    ),
    "IEMOCAP": CorpusInfo(
        "English", "Adults", 5531,
        ("Angry", "Sadness"),
        ("Neutral", "Happy", "Excited"),
    ),
    "EMO-DB": CorpusInfo(
        "German", "Adults", 494,
        ("Anger", "Sadness", "Fear", "Disgust", "Boredom"),
        ("Neutral", "Happiness"),
    ),
    "SAVEE": CorpusInfo(
        "English", "Adults", 480,
        ("Anger", "Sadness", "Fear", "Disgust"),
        ("Neutral", "Happiness", "Surprise"),
    ),
    "EMOVO": CorpusInfo(
        "Italian", "Adults", 588,
        ("Anger", "Sadness", "Fear", "Disgust"),
        ("Neutral", "Joy", "Surprise"),
    ),
}

_VALENCE_TABLE = {
    cid: {
        **{lab.lower(): ValenceLabel.NEGATIVE for lab in info.negative},
        **{lab.lower(): ValenceLabel.POSITIVE for lab in info.positive},
    }
    for cid, info in CORPORA.items()
}


def map_to_valence(corpus_id: str, raw_label: str) -> ValenceLabel:
    try:
        table = _VALENCE_TABLE[corpus_id]
    except KeyError:
        raise UnknownCorpusError(f"no valence mapping for corpus {corpus_id!r}") from None
    try:
        return table[raw_label.strip().lower()]
    except KeyError:
        raise UnknownLabelError(f"label {raw_label!r} is not mapped for corpus {corpus_id}") from None


def parse_label(corpus_id: str, raw_label: str) -> ValenceLabel:
    """Literal ``neg``/``pos`` pass through; anything else goes through the table."""
    key = raw_label.strip().lower()
    if key == "neg":
        return ValenceLabel.NEGATIVE
    if key == "pos":
        return ValenceLabel.POSITIVE
    return map_to_valence(corpus_id, raw_label)


@dataclass(frozen=True)
class Utterance:
    id: str
    features: np.ndarray
    label: ValenceLabel
    raw_label: str


@dataclass(frozen=True)
class Corpus:
    """Immutable labelled feature matrix.

    ``x`` is (n, feature_dim), ``y`` holds 0/1 valence indices. ``subsets``
    names groups of utterance ids (sessions, schools) for fold construction.
    """

    id: str
    language: str
    ids: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    raw_labels: tuple[str, ...]
    subsets: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise CorpusError("corpus id must be non-empty")
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2:
            raise CorpusError("feature matrix must be 2-D")
        n = x.shape[0]
        if y.shape != (n,) or len(self.ids) != n or len(self.raw_labels) != n:
            raise CorpusError("ids, features, labels and raw labels disagree in length")
        if n and not np.isin(y, (0, 1)).all():
            raise CorpusError("labels must be 0 (negative) or 1 (positive)")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "raw_labels", tuple(self.raw_labels))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    @property
    def utterances(self) -> Iterator[Utterance]:
        for i, uid in enumerate(self.ids):
            yield Utterance(uid, self.x[i], ValenceLabel(int(self.y[i])), self.raw_labels[i])

    def take(self, index, id: str | None = None) -> "Corpus":
        index = np.asarray(index, dtype=np.int64)
        return Corpus(
            id=id or self.id,
            language=self.language,
            ids=tuple(self.ids[i] for i in index),
            x=self.x[index],
            y=self.y[index],
            raw_labels=tuple(self.raw_labels[i] for i in index),
        )

    def subset(self, name: str) -> "Corpus":
        wanted = set(self.subsets[name])
        index = [i for i, uid in enumerate(self.ids) if uid in wanted]
        return self.take(index, id=f"{self.id}:{name}")

    def with_features(self, x: np.ndarray) -> "Corpus":
        return Corpus(self.id, self.language, self.ids, x, self.y, self.raw_labels, dict(self.subsets))


def concat(corpora: Sequence[Corpus], id: str | None = None) -> Corpus:
    if not corpora:
        raise CorpusError("nothing to concatenate")
    dims = {c.feature_dim for c in corpora}
    if len(dims) != 1:
        raise CorpusError(f"feature dimensions differ across corpora: {sorted(dims)}")
    return Corpus(
        id=id or "+".join(c.id for c in corpora),
        language="+".join(sorted({c.language for c in corpora})),
        ids=tuple(f"{c.id}/{u}" for c in corpora for u in c.ids),
        x=np.concatenate([c.x for c in corpora]),
        y=np.concatenate([c.y for c in corpora]),
        raw_labels=tuple(r for c in corpora for r in c.raw_labels),
    )


def feature_header(dim: int) -> list[str]:
    return ["utt_id", "label"] + [f"f_{i}" for i in range(dim)]


def write_feature_csv(path, ids, labels, x) -> None:
    """Write the feature CSV: ``utt_id,label,f_0,...``; floats use repr for exact round trips."""
    x = np.asarray(x, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(feature_header(x.shape[1]))
        for uid, lab, row in zip(ids, labels, x):
            writer.writerow([uid, lab, *(repr(float(v)) for v in row)])


def load_feature_csv(path, corpus_id: str, language: str) -> Corpus:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CorpusError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["utt_id", "label"] or len(header) < 3:
        raise CorpusError(f"{path}: header must start with utt_id,label followed by feature columns")
    dim = len(header) - 2
    ids, raw, labels, feats = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 2:
            raise RaggedRowError(f"{path}:{lineno}: expected {dim} features, found {len(row) - 2}")
        try:
            values = [float(v) for v in row[2:]]
        except ValueError:
            raise NonNumericCellError(f"{path}:{lineno}: non-numeric feature cell") from None
        if not np.all(np.isfinite(values)):
            raise NonNumericCellError(f"{path}:{lineno}: non-finite feature value")
        ids.append(row[0])
        raw.append(row[1])
        labels.append(int(parse_label(corpus_id, row[1])))
        feats.append(values)
    x = np.asarray(feats, dtype=np.float64).reshape(len(feats), dim)
    return Corpus(corpus_id, language, tuple(ids), x, np.asarray(labels, dtype=np.int64), tuple(raw))


def load_manifest(path) -> Corpus:
    """Load a corpus from ``{id, language, feature_dim, csv_path[, subsets]}``.

    ``csv_path`` is resolved relative to the manifest's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    missing = {"id", "language", "feature_dim", "csv_path"} - meta.keys()
    if missing:
        raise CorpusError(f"{path}: manifest lacks {sorted(missing)}")
    corpus = load_feature_csv(path.parent / meta["csv_path"], meta["id"], meta["language"])
    if len(corpus) and corpus.feature_dim != meta["feature_dim"]:
        raise CorpusError(
            f"{path}: manifest declares feature_dim {meta['feature_dim']}, CSV has {corpus.feature_dim}"
        )
    subsets = {name: tuple(ids) for name, ids in meta.get("subsets", {}).items()}
    unknown = {u for ids in subsets.values() for u in ids} - set(corpus.ids)
    if unknown:
        raise CorpusError(f"{path}: subsets reference unknown utterances {sorted(unknown)[:5]}")
    return Corpus(corpus.id, corpus.language, corpus.ids, corpus.x, corpus.y, corpus.raw_labels, subsets)


def write_manifest(path, corpus_id: str, language: str, feature_dim: int, csv_path, subsets=None) -> None:
    meta = {"id": corpus_id, "language": language, "feature_dim": feature_dim, "csv_path": str(csv_path)}
    if subsets:
        meta["subsets"] = {k: list(v) for k, v in subsets.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


@dataclass
class SyntheticCorpusSpec:
    n_per_class: int
    dim: int
    class_gap: float
    shift_matrix: np.ndarray | None = None  # None means identity
    shift_offset: np.ndarray | None = None  # None means zeros
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_per_class < 1:
            raise CorpusError("n_per_class must be >= 1")
        if self.dim < 1:
            raise CorpusError("dim must be >= 1")
        if not self.noise_sigma > 0:
            raise CorpusError("noise_sigma must be > 0")
        m = self.matrix
        if m.shape != (self.dim, self.dim):
            raise CorpusError(f"shift_matrix must be {self.dim}x{self.dim}")
        if np.linalg.matrix_rank(m) < self.dim:
            raise CorpusError("shift_matrix is singular")
        if self.offset.shape != (self.dim,):
            raise CorpusError(f"shift_offset must have length {self.dim}")

    @property
    def matrix(self) -> np.ndarray:
        if self.shift_matrix is None:
            return np.eye(self.dim)
        return np.asarray(self.shift_matrix, dtype=np.float64)

    @property
    def offset(self) -> np.ndarray:
        if self.shift_offset is None:
            return np.zeros(self.dim)
        return np.asarray(self.shift_offset, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "n_per_class": self.n_per_class,
            "dim": self.dim,
            "class_gap": self.class_gap,
            "shift_matrix": None if self.shift_matrix is None else self.matrix.tolist(),
            "shift_offset": None if self.shift_offset is None else self.offset.tolist(),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise CorpusError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)


def synthetic_latents(spec: SyntheticCorpusSpec) -> tuple[np.ndarray, np.ndarray]:
    """Pre-shift Gaussian draws and labels: negatives first, then positives."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_per_class
    mu = np.zeros(spec.dim)
    mu[0] = spec.class_gap / 2.0
    z = rng.normal(0.0, spec.noise_sigma, size=(2 * n, spec.dim))
    z[:n] -= mu
    z[n:] += mu
    y = np.repeat(np.array([0, 1], dtype=np.int64), n)
    return z, y


def generate_synthetic(spec: SyntheticCorpusSpec, corpus_id: str = "SYNTH", language: str = "synthetic") -> Corpus:
    z, y = synthetic_latents(spec)
    x = expit(z @ spec.matrix.T + spec.offset)
    ids = tuple(f"{corpus_id}-{i:06d}" for i in range(len(y)))
    raw = tuple(ValenceLabel(int(v)).short for v in y)
    return Corpus(corpus_id, language, ids, x, y, raw)


def split(corpus: Corpus, train_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Unstratified random split; the train side gets floor(n * train_fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    if n < 2:
        raise CorpusError("need at least two utterances to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(n * train_fraction))
    return corpus.take(perm[:n_train]), corpus.take(perm[n_train:])


def kfold(corpus: Corpus, k: int, seed: int) -> list[tuple[Corpus, Corpus]]:
    n = len(corpus)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise CorpusError(f"cannot make {k} folds from {n} utterances")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((corpus.take(train_idx), corpus.take(test_idx)))
    return out
