"""Command-line front end.

Every subcommand reads and writes the file formats of the library modules:
feature CSVs with JSON corpus manifests, JSON model files, and the result
CSV of the suite runner. Logs go to stderr. Exit status is 0 on success,
1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import MODEL_FORMAT_VERSIONS, __version__
from ._rng import derive_seed
from .corpus import (
    Corpus,
    CorpusError,
    SyntheticCorpusSpec,
    generate_synthetic,
    load_manifest,
    parse_label,
    split,
    write_feature_csv,
    write_manifest,
)
from .experiments import (
    ExperimentConfig,
    FittedModel,
    evaluate_model,
    fit_model,
    load_suite,
    run_suite,
    write_results_csv,
)
from .features import extract_features, load_wav

log = logging.getLogger("dbn_transfer")

MODEL_NAMES = {"dbn": "DBN", "ae-svm": "SparseAeSvm", "dbn-nopretrain": "DbnNoPretrain"}
_SPLIT = 1  # same child key the experiments module uses for within-corpus splits


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(path, model: str | None = None, **overrides) -> ExperimentConfig:
    d = _read_json(path) if path else {}
    if not isinstance(d, dict):
        raise CorpusError(f"{path}: experiment config must be a JSON object")
    if model is not None:
        d["model_kind"] = MODEL_NAMES[model]
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def _load_corpora(paths) -> dict[str, Corpus]:
    corpora = {}
    for p in paths:
        c = load_manifest(p)
        if c.id in corpora:
            raise CorpusError(f"corpus id {c.id!r} appears in more than one manifest")
        corpora[c.id] = c
    return corpora


def _rel(target, manifest) -> str:
    # manifests store csv_path relative to their own directory
    return os.path.relpath(Path(target).resolve(), Path(manifest).resolve().parent)


def _within_part(corpus: Corpus, fraction: float | None, seed: int, side: int) -> Corpus:
    if fraction is None:
        return corpus
    return split(corpus, fraction, derive_seed(seed, _SPLIT))[side]


# subcommands -------------------------------------------------------------


def cmd_extract(args) -> int:
    labels = {}
    with open(args.labels, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                labels[row["utt_id"]] = row["label"]
            except KeyError:
                raise CorpusError(f"{args.labels}: header must name utt_id and label columns") from None
    wavs = sorted(Path(args.wav_dir).glob("*.wav"))
    if not wavs:
        raise CorpusError(f"no .wav files in {args.wav_dir}")
    ids, raw, rows = [], [], []
    for wav in wavs:
        if wav.stem not in labels:
            log.warning("%s has no label, skipped", wav.name)
            continue
        parse_label(args.corpus_id, labels[wav.stem])  # fail early on unmapped labels
        ids.append(wav.stem)
        raw.append(labels[wav.stem])
        rows.append(extract_features(load_wav(wav)))
        log.info("extracted %s", wav.name)
    if not rows:
        raise CorpusError("no labelled WAV files")
    x = np.vstack(rows)
    write_feature_csv(args.out, ids, raw, x)
    if args.manifest:
        write_manifest(args.manifest, args.corpus_id, args.language, x.shape[1], _rel(args.out, args.manifest))
    log.info("wrote %d utterances to %s", len(ids), args.out)
    return 0


def cmd_synth(args) -> int:
    d = _read_json(args.spec)
    if not isinstance(d, dict):
        raise CorpusError(f"{args.spec}: synthetic spec must be a JSON object")
    if args.seed is not None:
        d["seed"] = args.seed
    spec = SyntheticCorpusSpec.from_dict(d)
    corpus = generate_synthetic(spec, corpus_id=args.corpus_id, language=args.language)
    write_feature_csv(args.out, corpus.ids, corpus.raw_labels, corpus.x)
    if args.manifest:
        write_manifest(args.manifest, corpus.id, corpus.language, corpus.feature_dim, _rel(args.out, args.manifest))
    log.info("wrote %d synthetic utterances to %s", len(corpus), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.model)
    seed = args.seed or 0
    corpus = load_manifest(args.manifest)
    train = _within_part(corpus, args.split, seed, 0)
    model = fit_model(train, cfg, seed)
    _write_json(args.out, model.to_dict())
    log.info("trained %s on %d utterances, saved to %s", cfg.model_kind, len(train), args.out)
    return 0


def cmd_eval(args) -> int:
    model = FittedModel.from_dict(_read_json(args.model_file))
    seed = args.seed or 0
    test = _within_part(load_manifest(args.test), args.split, seed, 1)
    res = evaluate_model(model, test, seed)
    out = {
        "accuracy": res.accuracy,
        "uar": res.uar,
        "n_test": res.n_test,
        "confusion": res.confusion.tolist(),
    }
    if args.out:
        _write_json(args.out, out)
    print(f"uar={res.uar:.6f} accuracy={res.accuracy:.6f} n_test={res.n_test}")
    return 0


def _models(args, cfg: ExperimentConfig) -> list[str]:
    return [MODEL_NAMES[m] for m in args.model] if args.model else [cfg.model_kind]


def cmd_sweep(args) -> int:
    corpora = _load_corpora(args.manifest)
    cfg = _load_config(args.config, train_corpora=args.train, test_corpus=args.test)
    fractions = args.fractions if args.fractions is not None else cfg.fractions
    cells = []
    for kind in _models(args, cfg):
        for f in fractions:
            d = cfg.to_dict()
            d.update(model_kind=kind, protocol="cross", target_fraction=f)
            cells.append(d)
    rows = run_suite(cells, corpora, args.seed or 0, args.jobs)
    write_results_csv(rows, args.out)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_loco(args) -> int:
    corpora = _load_corpora(args.manifest)
    cfg = _load_config(args.config)
    ids = list(cfg.train_corpora or corpora)
    cells = []
    for kind in _models(args, cfg):
        for held in ids:
            d = cfg.to_dict()
            d.update(model_kind=kind, protocol="cross", train_corpora=[r for r in ids if r != held], test_corpus=held)
            cells.append(d)
    rows = run_suite(cells, corpora, args.seed or 0, args.jobs)
    write_results_csv(rows, args.out)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_suite(args) -> int:
    corpora = _load_corpora(args.manifest)
    rows = run_suite(load_suite(args.suite), corpora, args.seed or 0, args.jobs)
    write_results_csv(rows, args.out)
    n_err = sum(1 for r in rows if r["error"])
    if n_err:
        log.warning("%d cell(s) failed; see the error column", n_err)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def summarize_results(rows) -> dict[tuple[str, str, float], np.ndarray]:
    groups = defaultdict(list)
    for r in rows:
        if r.get("error") or not r.get("uar"):
            continue
        groups[(r["model"], r["test"], float(r["fraction"] or 0.0))].append(float(r["uar"]))
    return {k: np.asarray(v) for k, v in sorted(groups.items())}


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    groups = summarize_results(rows)
    if not groups:
        raise CorpusError(f"{args.input}: no successful result rows")
    for (model, test, f), v in groups.items():
        log.info(
            "%-14s test=%-10s f=%.2f  UAR median %.3f  min %.3f  max %.3f  (n=%d)",
            model, test, f, np.median(v), v.min(), v.max(), v.size,
        )

    plt.rcParams["svg.hashsalt"] = "dbn-transfer"
    fig, ax = plt.subplots(figsize=(7, 4))
    fractions = sorted({f for _, _, f in groups})
    if len(fractions) > 1:
        curves = defaultdict(list)
        for (model, test, f), v in groups.items():
            curves[(model, test)].append((f, np.median(v), v.min(), v.max()))
        for (model, test), pts in curves.items():
            f, med, lo, hi = map(np.asarray, zip(*pts))
            ax.plot(f, med, marker="o", label=f"{model} / {test}")
            ax.fill_between(f, lo, hi, alpha=0.15)
        ax.set_xlabel("target fraction in training")
    else:
        models = sorted({m for m, _, _ in groups})
        tests = sorted({t for _, t, _ in groups})
        width = 0.8 / len(models)
        for i, m in enumerate(models):
            heights = [np.mean(groups.get((m, t, fractions[0]), [np.nan])) for t in tests]
            ax.bar(np.arange(len(tests)) + i * width, heights, width, label=m)
        ax.set_xticks(np.arange(len(tests)) + 0.4 - width / 2, tests)
        ax.set_xlabel("test corpus")
    ax.set_ylabel("UAR")
    ax.set_ylim(0.0, 1.0)
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    log.info("wrote %s", args.svg)
    return 0


# parser ------------------------------------------------------------------


def _fractions(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    versions = ", ".join(f"{k} v{v}" for k, v in MODEL_FORMAT_VERSIONS.items())
    p = _Parser(prog="dbn-transfer", description="Cross-corpus valence recognition toolkit.")
    p.add_argument("--version", action="version", version=f"dbn-transfer {__version__} (model formats: {versions})")
    p.add_argument("--seed", type=int, default=None, help="master seed for all randomness (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("extract", help="WAV directory to feature CSV")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--labels", required=True, help="CSV with utt_id,label columns")
    s.add_argument("--corpus-id", required=True)
    s.add_argument("--language", default="unknown")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", help="also write a corpus manifest here")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="synthetic corpus from a JSON spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--corpus-id", default="SYNTH")
    s.add_argument("--language", default="synthetic")
    s.add_argument("--manifest", help="also write a corpus manifest here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit a model on one corpus")
    s.add_argument("--model", choices=sorted(MODEL_NAMES), required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="experiment config JSON (hyperparameters)")
    s.add_argument("--split", type=_unit_interval, help="train on this seeded fraction only")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a saved model on a corpus")
    s.add_argument("--model-file", required=True)
    s.add_argument("--test", required=True, help="corpus manifest")
    s.add_argument("--split", type=_unit_interval, help="score the held-out side of this seeded split")
    s.add_argument("--out", help="write the result as JSON")
    s.set_defaults(func=cmd_eval)

    for name, func, text in (
        ("sweep", cmd_sweep, "target-fraction sweep"),
        ("loco", cmd_loco, "leave-one-corpus-out"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("--manifest", action="append", required=True, help="corpus manifest (repeatable)")
        s.add_argument("--config", help="experiment config JSON")
        s.add_argument("--model", action="append", choices=sorted(MODEL_NAMES), help="override model (repeatable)")
        s.add_argument("--out", required=True, help="result CSV")
        s.add_argument("--jobs", type=int, default=1)
        if name == "sweep":
            s.add_argument("--train", action="append", help="source corpus id (repeatable)")
            s.add_argument("--test", help="target corpus id")
            s.add_argument("--fractions", type=_fractions, help="comma-separated, e.g. 0,0.1,0.2")
        s.set_defaults(func=func)

    s = sub.add_parser("suite", help="run a JSON list of experiment configs")
    s.add_argument("--suite", required=True)
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("report", help="plot a result CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--svg", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "jobs", 1) < 1:
        print("dbn-transfer: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
