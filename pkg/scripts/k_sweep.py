"""Chebyshev order sweep: supervised test accuracy on the benchmark for each K.

    python scripts/k_sweep.py --K 1 2 3 4 --epochs 50
"""
import argparse
import time

from gmss.data import BENCHMARK_SPLIT, as_arrays, benchmark_spec, gen_synthetic
from gmss.trainer import Setup, SplitSpec, TrainConfig, evaluate, make_splits, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = as_arrays(gen_synthetic(benchmark_spec())[1])
    fold = make_splits(data, SplitSpec("subject_dependent", *BENCHMARK_SPLIT))[0]
    tr, te = data.take(fold.train), data.take(fold.test)
    print("K\tacc\tseconds")
    for K in args.K:
        cfg = TrainConfig(mode="supervised", epochs=args.epochs, K=K, seed=args.seed)
        setup = Setup.default(cfg)
        t = time.perf_counter()
        model, _ = train(tr, cfg, setup=setup, n_classes=3)
        acc = evaluate(model, te, setup.SL, head="c").accuracy
        print(f"{K}\t{acc:.3f}\t{time.perf_counter() - t:.0f}", flush=True)


if __name__ == "__main__":
    main()
