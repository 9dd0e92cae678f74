"""Benchmark design sweep over the broadband nuisance level.

For each level c the benchmark is regenerated with common_noise = profile_scale = c
(other fields unchanged), then reports supervised test accuracy, the probe on a
random frozen extractor and the probe after unsupervised pretraining.  This is
the experiment behind the choice of the shipped benchmark.

    python scripts/nuisance_sweep.py --levels 3 6 8 12
"""
import argparse
import dataclasses

from gmss.data import BENCHMARK_SPLIT, as_arrays, benchmark_spec, gen_synthetic
from gmss.trainer import (Setup, SplitSpec, TrainConfig, evaluate, linear_probe, make_splits, new_model,
                          pretext_accuracy, train)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=float, nargs="+", default=[3.0, 6.0, 8.0, 12.0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--sup-epochs", type=int, default=150)
    args = ap.parse_args()

    print("level\tsupervised\trandom_probe\tpretrained_probe\tpuzzle_s\tpuzzle_f")
    for c in args.levels:
        spec = dataclasses.replace(benchmark_spec(), common_noise=c, profile_scale=c)
        data = as_arrays(gen_synthetic(spec)[1])
        fold = make_splits(data, SplitSpec("subject_dependent", *BENCHMARK_SPLIT))[0]
        tr, te = data.take(fold.train), data.take(fold.test)

        sup = TrainConfig(mode="supervised", epochs=args.sup_epochs)
        setup = Setup.default(sup)
        model, _ = train(tr, sup, setup=setup, n_classes=3)
        sup_acc = evaluate(model, te, setup.SL, head="c").accuracy

        uns = TrainConfig(mode="unsupervised", epochs=args.epochs)
        rand = linear_probe(new_model(uns, 3), tr, te, uns, setup.SL, 3).accuracy
        model, _ = train(tr, uns, model=new_model(uns, 3), setup=setup, n_classes=3)
        pre = linear_probe(model, tr, te, uns, setup.SL, 3).accuracy
        puz = pretext_accuracy(model, te.X, setup)
        print(f"{c:g}\t{sup_acc:.3f}\t{rand:.3f}\t{pre:.3f}\t{puz['spatial']:.3f}\t{puz['frequency']:.3f}",
              flush=True)


if __name__ == "__main__":
    main()
