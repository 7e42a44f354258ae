"""Evaluation protocols: within-corpus, cross-corpus, target-fraction sweep and
leave-one-corpus-out, plus a seeded suite runner that writes a result CSV.

Seeding: a replicate's seed drives everything it does through ``derive_seed``
children (split, target draw, pretraining, fine-tuning). In a suite, cell ``i``
of a run with master seed ``m`` uses base ``m ^ i`` and replicate seed
``derive_seed(m ^ i, s)`` for each listed seed ``s``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from ._rng import derive_seed
from .baselines import AeConfig, AeSvmModel, SvmConfig, fit_ae_svm
from .corpus import Corpus, CorpusError, SyntheticCorpusSpec, concat, generate_synthetic, split
from .dbn import DbnArchitecture, DbnClassifier, FineTuneConfig, predict_indices, train_dbn
from .features import Standardizer, fit_standardizer
from .metrics import EvaluationResult, evaluate
from .rbm import CdConfig

log = logging.getLogger(__name__)

MODEL_KINDS = ("DBN", "SparseAeSvm", "DbnNoPretrain")
PROTOCOLS = ("within", "cross", "sweep", "loco")
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 9))
RESULT_COLUMNS = ("cell", "model", "train", "test", "fraction", "seed", "acc", "uar", "n_test", "error")

# child-seed keys
_SPLIT, _TARGET, _PRETRAIN, _FINETUNE, _BASELINE = 1, 2, 3, 4, 5


class ExperimentError(ValueError):
    pass


# Scaled-down recipe for synthetic benchmarks: full-size layers and the 1e-3
# step size do not train in a desk-scale budget (see scripts/select_dbn_config.py).
DESK_ARCHITECTURE = DbnArchitecture((32, 32, 64))
DESK_CD = CdConfig(learning_rate=0.1, epochs=100, batch_size=16)
DESK_FINE_TUNE = FineTuneConfig(learning_rate=0.3, epochs=100, batch_size=16, momentum=0.5)


@dataclass
class ExperimentConfig:
    model_kind: str = "DBN"
    protocol: str = "cross"
    train_corpora: list[str] = field(default_factory=list)
    test_corpus: str | None = None
    target_fraction: float = 0.0
    fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    train_fraction: float = 0.75
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    architecture: DbnArchitecture = field(default_factory=DbnArchitecture)
    cd: CdConfig = field(default_factory=CdConfig)
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)
    ae: AeConfig = field(default_factory=AeConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ExperimentError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.protocol not in PROTOCOLS:
            raise ExperimentError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if not 0.0 <= self.target_fraction < 1.0:
            raise ExperimentError("target_fraction must lie in [0, 1)")
        if any(not 0.0 <= f <= 0.8 for f in self.fractions):
            raise ExperimentError("sweep fractions must lie in [0, 0.8]")
        if not self.seeds:
            raise ExperimentError("at least one seed is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"]["layer_sizes"] = list(self.architecture.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        nested = {
            "architecture": DbnArchitecture,
            "cd": CdConfig,
            "fine_tune": FineTuneConfig,
            "ae": AeConfig,
            "svm": SvmConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ExperimentError(f"unknown experiment fields: {sorted(unknown)}")
        kw = dict(d)
        try:
            for name, typ in nested.items():
                if name in kw and isinstance(kw[name], dict):
                    kw[name] = typ(**kw[name])
            return cls(**kw)
        except TypeError as exc:
            raise ExperimentError(str(exc)) from exc


def desk_config(model_kind: str = "DBN", **kwargs) -> ExperimentConfig:
    kwargs.setdefault("architecture", DESK_ARCHITECTURE)
    kwargs.setdefault("cd", DESK_CD)
    kwargs.setdefault("fine_tune", DESK_FINE_TUNE)
    return ExperimentConfig(model_kind=model_kind, **kwargs)


@dataclass
class FittedModel:
    """Standardizer plus classifier, both fitted on training-side data only."""

    standardizer: Standardizer
    model: DbnClassifier | AeSvmModel

    def predict_indices(self, x) -> np.ndarray:
        xs = self.standardizer.apply(x)
        if isinstance(self.model, DbnClassifier):
            return predict_indices(self.model, xs)
        return self.model.predict_indices(xs)

    def to_dict(self) -> dict:
        from . import dbn

        if isinstance(self.model, DbnClassifier):
            d = dbn.to_dict(self.model)
        else:
            d = self.model.to_dict()
        d["standardizer"] = self.standardizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        from . import dbn
        from .rbm import MalformedModelError

        if not isinstance(d, dict) or "standardizer" not in d:
            raise MalformedModelError("model file lacks a standardizer")
        std = Standardizer.from_dict(d["standardizer"])
        if d.get("kind") == "ae-svm":
            return cls(std, AeSvmModel.from_dict(d))
        return cls(std, dbn.from_dict(d))


def fit_model(train: Corpus, cfg: ExperimentConfig, seed: int, target_sample: Corpus | None = None) -> FittedModel:
    if len(train) == 0:
        raise ExperimentError("empty training set")
    std = fit_standardizer(train.x)
    xs = std.apply(train.x)
    if cfg.model_kind == "SparseAeSvm":
        base = derive_seed(seed, _BASELINE)
        ae_cfg = replace(cfg.ae, seed=derive_seed(base, 0))
        svm_cfg = replace(cfg.svm, seed=derive_seed(base, 1))
        sample = None if target_sample is None or len(target_sample) == 0 else std.apply(target_sample.x)
        model = fit_ae_svm(train.with_features(xs), sample, ae_cfg, svm_cfg)
    else:
        if np.unique(train.y).size < 2:
            raise ExperimentError("training set holds a single class")
        cd = replace(cfg.cd, seed=derive_seed(seed, _PRETRAIN))
        ft = replace(cfg.fine_tune, seed=derive_seed(seed, _FINETUNE))
        model = train_dbn(xs, train.y, cfg.architecture, cd, ft, pretrained=cfg.model_kind == "DBN")
    return FittedModel(std, model)


def evaluate_model(model: FittedModel, test: Corpus, seed: int | None = None) -> EvaluationResult:
    return evaluate(model.predict_indices(test.x), test.y, seed)


def _replicate_seed(seed: int, seed_base: int | None) -> int:
    return seed if seed_base is None else derive_seed(seed_base, seed)


def resolve(corpora: Mapping[str, Corpus], ref: str) -> Corpus:
    """Look up ``ID`` or ``ID:subset`` (a named subset from the corpus manifest)."""
    cid, _, sub = ref.partition(":")
    if cid not in corpora:
        raise ExperimentError(f"unknown corpus {cid!r}")
    c = corpora[cid]
    if sub:
        if sub not in c.subsets:
            raise ExperimentError(f"corpus {cid} has no subset {sub!r}")
        return c.subset(sub)
    return c


def _check_dims(parts: Sequence[Corpus]) -> None:
    dims = {c.feature_dim for c in parts}
    if len(dims) > 1:
        raise ExperimentError(f"feature dimensions differ: {sorted(dims)}")


def transfer_run(
    sources: Sequence[Corpus], target: Corpus, cfg: ExperimentConfig, fraction: float, seed: int
) -> EvaluationResult:
    """Train on the sources plus floor(fraction * n) random target utterances, test on the rest."""
    _check_dims([*sources, target])
    n = len(target)
    n_move = int(np.floor(fraction * n))
    if n_move >= n:
        raise ExperimentError(f"fraction {fraction} leaves no test utterances")
    moved = None
    test = target
    train_parts = list(sources)
    if n_move > 0:
        perm = np.random.default_rng(derive_seed(seed, _TARGET)).permutation(n)
        moved = target.take(np.sort(perm[:n_move]))
        test = target.take(np.sort(perm[n_move:]))
        train_parts.append(moved)
    train = concat(train_parts) if len(train_parts) > 1 else train_parts[0]
    model = fit_model(train, cfg, seed, target_sample=moved)
    return evaluate_model(model, test, seed)


def within_corpus(corpus: Corpus, cfg: ExperimentConfig, seed_base: int | None = None) -> list[EvaluationResult]:
    results = []
    for s in cfg.seeds:
        seed = _replicate_seed(s, seed_base)
        train, test = split(corpus, cfg.train_fraction, derive_seed(seed, _SPLIT))
        results.append(evaluate_model(fit_model(train, cfg, seed), test, seed))
    return results


def cross_corpus(corpora: Mapping[str, Corpus], cfg: ExperimentConfig, seed_base: int | None = None) -> list[EvaluationResult]:
    """Train on the union of ``cfg.train_corpora``, test on all of ``cfg.test_corpus``.

    When the test corpus is also a training corpus this is a self-test on
    training data.
    """
    sources = [resolve(corpora, r) for r in cfg.train_corpora]
    target = resolve(corpora, cfg.test_corpus)
    if not sources:
        raise ExperimentError("no training corpora")
    return [
        transfer_run(sources, target, cfg, 0.0, _replicate_seed(s, seed_base)) for s in cfg.seeds
    ]


def target_fraction_sweep(
    corpora: Mapping[str, Corpus],
    cfg: ExperimentConfig,
    fractions: Sequence[float] | None = None,
    seed_base: int | None = None,
) -> dict[float, list[EvaluationResult]]:
    fractions = list(cfg.fractions if fractions is None else fractions)
    if any(not 0.0 <= f <= 0.8 for f in fractions):
        raise ExperimentError("sweep fractions must lie in [0, 0.8]")
    sources = [resolve(corpora, r) for r in cfg.train_corpora]
    target = resolve(corpora, cfg.test_corpus)
    if target.id in {c.id for c in sources}:
        raise ExperimentError("the sweep target must not be a training corpus")
    return {
        f: [transfer_run(sources, target, cfg, f, _replicate_seed(s, seed_base)) for s in cfg.seeds]
        for f in fractions
    }


def leave_one_corpus_out(
    corpora: Mapping[str, Corpus],
    cfg: ExperimentConfig,
    ids: Sequence[str] | None = None,
    seed_base: int | None = None,
) -> dict[str, list[EvaluationResult]]:
    ids = list(ids if ids is not None else (cfg.train_corpora or corpora))
    if len(ids) < 2:
        raise ExperimentError("leave-one-corpus-out needs at least two corpora")
    parts = {r: resolve(corpora, r) for r in ids}
    _check_dims(list(parts.values()))
    out = {}
    for held in ids:
        sources = [parts[r] for r in ids if r != held]
        out[held] = [
            transfer_run(sources, parts[held], cfg, cfg.target_fraction, _replicate_seed(s, seed_base))
            for s in cfg.seeds
        ]
    return out


def uar_values(results: Sequence[EvaluationResult]) -> np.ndarray:
    return np.array([r.uar for r in results])


def random_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix exp(A) for a random skew-symmetric A whose largest
    rotation angle equals ``angle`` radians."""
    if angle == 0.0 or dim < 2:
        return np.eye(dim)
    g = rng.normal(size=(dim, dim))
    a = g - g.T
    omega = np.max(np.abs(np.linalg.eigvals(a).imag))
    return expm(a * (angle / omega))


def axis_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Planar rotation turning the class axis e_0 by exactly ``angle`` radians
    towards a random direction orthogonal to it."""
    if dim < 2:
        return np.eye(dim)
    w = rng.normal(size=dim)
    w[0] = 0.0
    w /= np.linalg.norm(w)
    e = np.zeros(dim)
    e[0] = 1.0
    c, s = np.cos(angle), np.sin(angle)
    return (
        np.eye(dim)
        + (c - 1.0) * (np.outer(e, e) + np.outer(w, w))
        + s * (np.outer(w, e) - np.outer(e, w))
    )


@dataclass(frozen=True)
class SyntheticSuiteConfig:
    """Family of synthetic corpora, each a random rotation + offset of a shared latent task."""

    n_corpora: int = 5
    dim: int = 30
    class_gap: float = 4.0
    n_per_class: int = 200
    noise_sigma: float = 1.0
    rotation: float = 0.5
    offset_scale: float = 0.5
    seed: int = 0


def synthetic_specs(cfg: SyntheticSuiteConfig) -> list[SyntheticCorpusSpec]:
    specs = []
    for c in range(cfg.n_corpora):
        rng = np.random.default_rng(derive_seed(cfg.seed, c, 0))
        specs.append(
            SyntheticCorpusSpec(
                n_per_class=cfg.n_per_class,
                dim=cfg.dim,
                class_gap=cfg.class_gap,
                shift_matrix=random_rotation(cfg.dim, cfg.rotation, rng),
                shift_offset=rng.normal(0.0, cfg.offset_scale, size=cfg.dim),
                noise_sigma=cfg.noise_sigma,
                seed=derive_seed(cfg.seed, c, 1),
            )
        )
    return specs


def synthetic_suite(cfg: SyntheticSuiteConfig, prefix: str = "SYN") -> dict[str, Corpus]:
    out = {}
    for c, spec in enumerate(synthetic_specs(cfg)):
        cid = f"{prefix}{c}"
        out[cid] = generate_synthetic(spec, corpus_id=cid, language=f"lang{c}")
    return out


def synthetic_pair(
    rotation: float,
    offset_scale: float,
    dim: int = 30,
    class_gap: float = 4.0,
    n_per_class: int = 200,
    noise_sigma: float = 1.0,
    seed: int = 0,
) -> dict[str, Corpus]:
    """Unshifted source ``SRC`` and a target ``TGT`` whose class axis is turned
    by ``rotation`` radians and which carries a random offset."""
    rng = np.random.default_rng(derive_seed(seed, 0x7A))
    base = dict(n_per_class=n_per_class, dim=dim, class_gap=class_gap, noise_sigma=noise_sigma)
    src = SyntheticCorpusSpec(**base, seed=derive_seed(seed, 1))
    tgt = SyntheticCorpusSpec(
        **base,
        shift_matrix=axis_rotation(dim, rotation, rng),
        shift_offset=rng.normal(0.0, offset_scale, size=dim),
        seed=derive_seed(seed, 2),
    )
    return {
        "SRC": generate_synthetic(src, corpus_id="SRC", language="source"),
        "TGT": generate_synthetic(tgt, corpus_id="TGT", language="target"),
    }


def _row(cell, cfg, train, test, fraction, seed, result=None, error=""):
    return {
        "cell": cell,
        "model": cfg.model_kind if cfg is not None else "",
        "train": train,
        "test": test,
        "fraction": fraction,
        "seed": seed,
        "acc": None if result is None else result.accuracy,
        "uar": None if result is None else result.uar,
        "n_test": None if result is None else result.n_test,
        "error": error,
    }


def run_cell(cell: int, raw_cfg, corpora: Mapping[str, Corpus], master_seed: int) -> list[dict]:
    """Execute one suite entry; any failure becomes a single error row."""
    base = master_seed ^ cell
    cfg = None
    try:
        cfg = raw_cfg if isinstance(raw_cfg, ExperimentConfig) else ExperimentConfig.from_dict(raw_cfg)
        train_label = "+".join(cfg.train_corpora)
        rows = []
        if cfg.protocol == "within":
            ref = cfg.test_corpus or (cfg.train_corpora[0] if cfg.train_corpora else None)
            if ref is None:
                raise ExperimentError("within-corpus cell names no corpus")
            for s, r in zip(cfg.seeds, within_corpus(resolve(corpora, ref), cfg, base)):
                rows.append(_row(cell, cfg, ref, ref, cfg.train_fraction, s, r))
        elif cfg.protocol == "cross":
            if cfg.target_fraction > 0:
                sweep = target_fraction_sweep(corpora, cfg, [cfg.target_fraction], base)
                res = sweep[cfg.target_fraction]
            else:
                res = cross_corpus(corpora, cfg, base)
            for s, r in zip(cfg.seeds, res):
                rows.append(_row(cell, cfg, train_label, cfg.test_corpus, cfg.target_fraction, s, r))
        elif cfg.protocol == "sweep":
            for f, res in target_fraction_sweep(corpora, cfg, None, base).items():
                for s, r in zip(cfg.seeds, res):
                    rows.append(_row(cell, cfg, train_label, cfg.test_corpus, f, s, r))
        else:
            ids = cfg.train_corpora or sorted(corpora)
            for held, res in leave_one_corpus_out(corpora, cfg, ids, base).items():
                label = "+".join(r for r in ids if r != held)
                for s, r in zip(cfg.seeds, res):
                    rows.append(_row(cell, cfg, label, held, cfg.target_fraction, s, r))
        return rows
    except (ValueError, KeyError, TypeError) as exc:
        log.warning("cell %d failed: %s", cell, exc)
        return [_row(cell, cfg, "", "", "", "", error=f"{type(exc).__name__}: {exc}")]


def _run_cell_star(args):
    return run_cell(*args)


def run_suite(configs: Sequence, corpora: Mapping[str, Corpus], master_seed: int = 0, jobs: int = 1) -> list[dict]:
    """Run every manifest entry; rows come back ordered by cell index then emission order."""
    tasks = [(i, c, corpora, master_seed) for i, c in enumerate(configs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_cell = list(pool.map(_run_cell_star, tasks))
    else:
        per_cell = [_run_cell_star(t) for t in tasks]
    return [row for rows in per_cell for row in rows]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def results_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(results_to_csv(rows))


def read_results_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def load_suite(path) -> list:
    """A suite manifest is a JSON list of experiment configs (kept raw so bad
    entries fail per cell rather than for the whole suite)."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ExperimentError("suite manifest must be a JSON list")
    return data
