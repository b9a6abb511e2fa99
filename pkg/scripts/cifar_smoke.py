#!/usr/bin/env python3
"""Two-class CIFAR-10 smoke check for regression tracking.

Not a correctness gate: at this scale (one training batch, two classes,
K=200) the run only confirms the full pipeline holds together on real data
and stays above 65% binary accuracy.  Point --data at a directory with the
standard binary batches (data_batch_1.bin .. data_batch_5.bin,
test_batch.bin).
"""

import argparse
import time
from pathlib import Path

import numpy as np

from krica.dataio import load_cifar10_binary
from krica.kernels import KernelSpec
from krica.pipeline import accuracy, encode_dataset, extract_patches, train_classifier
from krica.solver import Hyperparams, SolveConfig, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--classes", type=int, nargs=2, default=[0, 1])
    p.add_argument("--train-per-class", type=int, default=500)
    p.add_argument("--test-per-class", type=int, default=200)
    p.add_argument("--basis-size", type=int, default=200)
    p.add_argument("--patch-size", type=int, default=6)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--retained", type=int, default=24)
    p.add_argument("--patch-budget", type=int, default=20000)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    batches = sorted(args.data.glob("data_batch_*.bin"))
    if not batches:
        raise SystemExit(f"no data_batch_*.bin under {args.data}")
    t0 = time.time()
    train_imgs, train_y = load_cifar10_binary(
        batches, classes_filter=args.classes, limit_per_class=args.train_per_class)
    test_imgs, test_y = load_cifar10_binary(
        args.data / "test_batch.bin", classes_filter=args.classes,
        limit_per_class=args.test_per_class)
    print(f"{len(train_imgs)} train / {len(test_imgs)} test images")

    patches = np.vstack([extract_patches(im, args.patch_size, stride=2) for im in train_imgs])
    rng = np.random.default_rng(args.seed)
    keep = np.sort(rng.choice(patches.shape[0], min(args.patch_budget, patches.shape[0]),
                              replace=False))
    hp = Hyperparams(mode="krica", kernel=KernelSpec("gaussian", gamma=args.gamma),
                     basis_size=args.basis_size, lam=1e-2, whiten="kpca",
                     retained=args.retained, whiten_sample_limit=2000)
    model, rep = train(patches[keep], None, hp,
                       SolveConfig(max_outer_iters=args.max_iters, seed=args.seed))
    print(f"trained: iters={rep.iterations_used} converged={rep.converged} "
          f"objective={rep.objective_trace[-1]:.4f}")

    D_train = encode_dataset(model, train_imgs, args.patch_size)
    D_test = encode_dataset(model, test_imgs, args.patch_size)
    clf = train_classifier(D_train, train_y, reg=1e-2, epochs=300, seed=args.seed)
    acc = accuracy(clf, D_test, test_y)
    print(f"binary test accuracy: {acc:.4f}  ({time.time() - t0:.0f}s)")
    print("PASS" if acc >= 0.65 else "FAIL", "(threshold 0.65, regression tracking only)")


if __name__ == "__main__":
    main()
