#!/usr/bin/env python3
"""End-to-end comparison of the four learner modes on oriented gratings.

Trains RICA, kRICA, d-kRICA, and the alpha=0 twin of d-kRICA on patches from
a seeded 3-class grating dataset, classifies held-out images from pooled
descriptors, and reports test accuracy, the homogeneous energy ratio, and
within/between descriptor distances.  Optionally renders similarity matrices
as PGM images.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from krica.dataio import write_pgm
from krica.kernels import KernelSpec
from krica.objective import encode, homogeneous_energy_ratio, make_selectors
from krica.pipeline import (
    accuracy,
    descriptor_distance_matrix,
    encode_dataset,
    extract_patches,
    similarity_render,
    train_classifier,
    within_between_distances,
)
from krica.solver import Hyperparams, SolveConfig, train
from krica.synthetic import grating_dataset
from krica.whitening import apply_whitener


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=6)
    p.add_argument("--basis-size", type=int, default=30)
    p.add_argument("--gamma", type=float, default=2.0,
                   help="gaussian width in whitened (unit-variance) coordinates")
    p.add_argument("--retained", type=int, default=12, help="kpca axes kept")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    p.add_argument("--alpha", type=float, default=1e-1)
    p.add_argument("--patch-budget", type=int, default=4000)
    p.add_argument("--max-iters", type=int, default=60)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--render-dir", type=Path, default=None,
                   help="write per-mode similarity PGMs here")
    return p.parse_args()


def main():
    args = parse_args()
    classes = 3
    train_imgs, train_y = grating_dataset(args.per_class, args.image_size, seed=3)
    test_imgs, test_y = grating_dataset(args.per_class, args.image_size, seed=4)

    patches = np.vstack([extract_patches(im, args.patch_size) for im in train_imgs])
    grid = (args.image_size - args.patch_size + 1) ** 2
    patch_labels = np.repeat(train_y, grid)
    rng = np.random.default_rng(5)
    keep = np.sort(rng.choice(patches.shape[0], min(args.patch_budget, patches.shape[0]),
                              replace=False))
    X, XL = patches[keep], patch_labels[keep]
    print(f"training patches: {X.shape[0]} x {X.shape[1]}")

    cfg = SolveConfig(max_outer_iters=args.max_iters, tol=1e-5, seed=args.seed)
    runs = {
        "rica": ("rica", 0.0, None),
        "krica": ("krica", 0.0, None),
        "d-krica(a=0)": ("d_krica", 0.0, XL),
        "d-krica": ("d_krica", args.alpha, XL),
    }
    sel = make_selectors(args.basis_size // classes, classes)
    centered = X - X.mean(axis=1, keepdims=True)

    print(f"{'model':14s} {'iters':>5s} {'conv':>5s} {'objective':>10s} "
          f"{'homog':>6s} {'acc':>6s} {'w/b':>6s} {'sec':>5s}")
    for name, (mode, alpha, labels) in runs.items():
        t0 = time.time()
        hp = Hyperparams(
            mode=mode,
            kernel=KernelSpec("gaussian", gamma=args.gamma) if mode.endswith("krica") else None,
            basis_size=args.basis_size,
            class_count=classes if mode.startswith("d_") else 0,
            lam=args.lam, alpha=alpha,
            whiten="kpca" if mode.endswith("krica") else "pca",
            retained=args.retained if mode.endswith("krica") else None,
            whiten_sample_limit=1500,
        )
        model, rep = train(X, labels, hp, cfg)
        responses = encode(model, apply_whitener(model.whitener, centered))
        homog = homogeneous_energy_ratio(sel, responses, XL)
        D_train = encode_dataset(model, train_imgs, args.patch_size)
        D_test = encode_dataset(model, test_imgs, args.patch_size)
        clf = train_classifier(D_train, train_y, reg=1e-2, epochs=300, seed=0)
        acc = accuracy(clf, D_test, test_y)
        dist = descriptor_distance_matrix(D_test)
        wi, bt = within_between_distances(dist, test_y)
        print(f"{name:14s} {rep.iterations_used:5d} {str(rep.converged):>5s} "
              f"{rep.objective_trace[-1]:10.4f} {homog:6.3f} {acc:6.3f} "
              f"{wi / bt:6.3f} {time.time() - t0:5.1f}")
        if args.render_dir:
            args.render_dir.mkdir(parents=True, exist_ok=True)
            order = np.argsort(test_y, kind="stable")
            write_pgm(args.render_dir / f"similarity_{name.replace('(', '_').replace(')', '')}.pgm",
                      similarity_render(dist[np.ix_(order, order)]))


if __name__ == "__main__":
    main()
