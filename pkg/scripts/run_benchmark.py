"""Supervised run and pretrain-then-probe run on the frozen 3-class benchmark.

    python scripts/run_benchmark.py --epochs 200 --out bench_results.json
"""
import argparse
import time

from gmss.data import BENCHMARK_SPLIT, as_arrays, benchmark_spec, gen_synthetic
from gmss.trainer import (Setup, SplitSpec, TrainConfig, dumps_stable, evaluate, linear_probe, make_splits,
                          new_model, pretext_accuracy, train)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip", choices=("supervised", "unsupervised"))
    ap.add_argument("--out")
    args = ap.parse_args()

    data = as_arrays(gen_synthetic(benchmark_spec())[1])
    fold = make_splits(data, SplitSpec("subject_dependent", *BENCHMARK_SPLIT))[0]
    tr, te = data.take(fold.train), data.take(fold.test)
    out = {"n_train": len(tr), "n_test": len(te), "epochs": args.epochs, "seed": args.seed}

    if args.skip != "supervised":
        cfg = TrainConfig(mode="supervised", epochs=args.epochs, seed=args.seed)
        setup = Setup.default(cfg)
        t = time.process_time()
        model, _ = train(tr, cfg, setup=setup, n_classes=3)
        out["supervised"] = {"test_acc": evaluate(model, te, setup.SL, head="c").accuracy,
                             "cpu_seconds": time.process_time() - t}
        print("supervised", out["supervised"], flush=True)

    if args.skip != "unsupervised":
        cfg = TrainConfig(mode="unsupervised", epochs=args.epochs, seed=args.seed)
        setup = Setup.default(cfg)
        rand = linear_probe(new_model(cfg, 3), tr, te, cfg, setup.SL, 3).accuracy
        model, _ = train(tr, cfg, model=new_model(cfg, 3), setup=setup, n_classes=3)
        out["unsupervised"] = {"random_probe_acc": rand,
                               "pretrained_probe_acc": linear_probe(model, tr, te, cfg, setup.SL, 3).accuracy,
                               "pretext_acc": pretext_accuracy(model, te.X, setup)}
        print("unsupervised", out["unsupervised"], flush=True)

    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps_stable(out) + "\n")


if __name__ == "__main__":
    main()
