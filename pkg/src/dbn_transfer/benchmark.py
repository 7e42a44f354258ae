"""The synthetic transfer benchmark: corpora, suite cells and row summaries.

One suite covers three questions. LOCO cells compare the DBN with the
sparse-AE + SVM baseline on five mutually shifted corpora, single-source
cross cells give the best one-corpus reference for every target, and a
target-fraction sweep runs on a strongly shifted source/target pair.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping

import numpy as np

from .corpus import Corpus
from .experiments import SyntheticSuiteConfig, desk_config, synthetic_pair, synthetic_suite

SUITE = SyntheticSuiteConfig(rotation=1.0, offset_scale=0.25)
PAIR_ROTATION = 1.2
PAIR_OFFSET = 0.5
SWEEP_FRACTIONS = [0.0, 0.1, 0.2, 0.3, 0.4]
SEEDS = [0, 1, 2, 3, 4]


def benchmark_corpora() -> dict[str, Corpus]:
    corpora = synthetic_suite(SUITE)
    corpora.update(synthetic_pair(PAIR_ROTATION, PAIR_OFFSET))
    return corpora


def benchmark_cells() -> list[dict]:
    ids = [f"SYN{i}" for i in range(SUITE.n_corpora)]
    cells = [
        desk_config(kind, protocol="loco", train_corpora=ids, seeds=SEEDS).to_dict()
        for kind in ("DBN", "SparseAeSvm")
    ]
    for target in ids:
        for source in ids:
            if source != target:
                cells.append(
                    desk_config(protocol="cross", train_corpora=[source], test_corpus=target, seeds=SEEDS).to_dict()
                )
    cells.append(
        desk_config(
            protocol="sweep", train_corpora=["SRC"], test_corpus="TGT", fractions=SWEEP_FRACTIONS, seeds=SEEDS
        ).to_dict()
    )
    return cells


def grouped_uar(rows, cells) -> dict[tuple, list[float]]:
    """UAR lists keyed by (protocol, model, train, test, fraction)."""
    out = defaultdict(list)
    for r in rows:
        if r["error"]:
            raise RuntimeError(f"cell {r['cell']} failed: {r['error']}")
        proto = cells[int(r["cell"])]["protocol"]
        out[(proto, r["model"], r["train"], r["test"], float(r["fraction"]))].append(float(r["uar"]))
    return dict(out)


def loco_means(groups: Mapping, model: str) -> dict[str, float]:
    return {k[3]: float(np.mean(v)) for k, v in sorted(groups.items()) if k[0] == "loco" and k[1] == model}


def best_single_source(groups: Mapping) -> dict[str, tuple[str, float]]:
    best = {}
    for (proto, _, train, test, _), v in sorted(groups.items()):
        if proto == "cross" and (test not in best or np.mean(v) > best[test][1]):
            best[test] = (train, float(np.mean(v)))
    return best


def sweep_medians(groups: Mapping) -> dict[float, float]:
    return {k[4]: float(np.median(v)) for k, v in sorted(groups.items()) if k[0] == "sweep"}
