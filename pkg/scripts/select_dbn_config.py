"""Pick the desk-scale DBN recipe on validation data no acceptance run touches.

Stage 1 checks that greedy pretraining leaves the first layer informative on
the smallest corpus size in use (200 utterances): with too few CD updates the
weights stay near their 0.01 init, every hidden unit sits at ~0.5 for all
inputs and fine-tuning stalls on a flat plateau.

Stage 2 scores fine-tuning step size, momentum and batch size by
within-corpus UAR (75/25 split) on an unshifted corpus drawn with seed 99.

    python scripts/select_dbn_config.py [--seeds 3]
"""

import argparse
import itertools
import time

import numpy as np

from dbn_transfer.corpus import SyntheticCorpusSpec, generate_synthetic
from dbn_transfer.dbn import FineTuneConfig, hidden_prob
from dbn_transfer.experiments import DESK_ARCHITECTURE, desk_config, uar_values, within_corpus
from dbn_transfer.features import fit_standardizer
from dbn_transfer.rbm import CdConfig, train_rbm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    seeds = list(range(args.seeds))

    small = generate_synthetic(SyntheticCorpusSpec(n_per_class=100, dim=30, class_gap=4.0, seed=99), "VAL")
    x = fit_standardizer(small.x).apply(small.x)
    print("stage 1: first-layer activation spread after CD (200 utterances)")
    for epochs, batch in ((50, 32), (100, 32), (50, 16), (100, 16), (200, 16)):
        spread = []
        for s in seeds:
            rbm = train_rbm(x, DESK_ARCHITECTURE.layer_sizes[0], CdConfig(0.1, epochs, batch, seed=s))
            spread.append(hidden_prob(rbm, x).std(axis=0).mean())
        print(f"  epochs={epochs:<4} batch={batch:<3} per-unit std={np.mean(spread):.4f}")

    corpus = generate_synthetic(SyntheticCorpusSpec(n_per_class=200, dim=30, class_gap=4.0, seed=99), "VAL")
    print("stage 2: fine-tuning recipe, within-corpus UAR")
    scores = []
    for lr, momentum, batch in itertools.product((0.1, 0.3, 1.0), (0.0, 0.5, 0.9), (16, 32)):
        ft = FineTuneConfig(learning_rate=lr, epochs=100, batch_size=batch, momentum=momentum)
        t0 = time.perf_counter()
        uar = uar_values(within_corpus(corpus, desk_config(fine_tune=ft, seeds=seeds)))
        scores.append((round(uar.mean(), 4), -uar.std(), ft))
        print(
            f"  lr={lr:<4} momentum={momentum:<4} batch={batch:<3} "
            f"uar={uar.mean():.4f} +- {uar.std():.4f}  ({time.perf_counter() - t0:.1f}s)"
        )
    _, _, best = max(scores, key=lambda r: r[:2])
    print(f"  -> lr={best.learning_rate} momentum={best.momentum} batch={best.batch_size}")


if __name__ == "__main__":
    main()
