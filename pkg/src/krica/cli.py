"""Command-line frontend wiring the modules into reproducible experiments.

Exit codes: 0 success, 2 usage/validation error, 3 training finished without
converging (outputs still written), 4 I/O or file-format failure.  Every run
writes a JSON config echo capturing the resolved flag values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, pipeline, solver
from .kernels import KERNEL_KINDS, KernelSpec
from .objective import encode, full_objective, is_discriminative

_MODE_FLAGS = {"rica": "rica", "krica": "krica", "d-rica": "d_rica", "d-krica": "d_krica"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="reserved concurrency hint; outputs never depend on it")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--config-out", default=None,
                   help="path of the JSON config echo (default: next to the output)")


def _echo_config(args, default_path) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in payload.items():
        if isinstance(v, Path):
            payload[k] = str(v)
    path = args.config_out or default_path
    Path(path).write_text(json.dumps(payload, indent=2, default=str) + "\n", "utf-8")


def _load_dataset(fmt: str, inputs: list[str]):
    if fmt == "pnm-dir":
        if len(inputs) != 1:
            raise ValueError("pnm-dir input takes exactly one directory")
        return dataio.load_image_dir(inputs[0])
    return dataio.load_cifar10_binary(inputs)


def _parse_kernel(args) -> KernelSpec:
    return KernelSpec(args.kernel, gamma=args.gamma, b=args.b)


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args) -> int:
    images, labels = _load_dataset(args.format, args.input)
    chunks, label_chunks = [], []
    for img, lab in zip(images, labels):
        patches = pipeline.extract_patches(img, args.patch_size, stride=args.stride)
        chunks.append(patches)
        label_chunks.append(np.full(patches.shape[0], lab, dtype=np.float64))
    X = np.vstack(chunks)
    y = np.concatenate(label_chunks)
    if args.limit is not None and args.limit < X.shape[0]:
        rng = np.random.default_rng(args.seed)
        keep = np.sort(rng.choice(X.shape[0], size=args.limit, replace=False))
        X, y = X[keep], y[keep]
    dataio.write_kmx(args.out, X)
    if args.labels_out:
        dataio.write_kmx(args.labels_out, y[:, None])
    _echo_config(args, f"{args.out}.config.json")
    if args.verbose:
        print(f"wrote {X.shape[0]} patches of dimension {X.shape[1]}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    mode = _MODE_FLAGS[args.mode]
    if is_discriminative(mode):
        if args.labels is None:
            raise ValueError(f"--mode {args.mode} requires --labels")
        if args.classes < 2:
            raise ValueError(f"--mode {args.mode} requires --classes >= 2")
        if args.basis_size % args.classes != 0:
            raise ValueError("--basis-size must be divisible by --classes")
    X = dataio.read_kmx(args.patches)
    labels = None
    if args.labels is not None:
        labels = dataio.read_kmx(args.labels).ravel().astype(np.intp)
    eta = None if args.eta == "auto" else float(args.eta)
    retained = None if args.retained == "auto" else float(args.retained)
    hp = solver.Hyperparams(
        mode=mode, kernel=_parse_kernel(args), basis_size=args.basis_size,
        class_count=args.classes, lam=getattr(args, "lambda"), alpha=args.alpha,
        eta=eta, pooling=args.pooling, pooling_eps=args.epsilon,
        whiten=args.whiten, retained=retained, whiten_eps=args.whiten_eps,
        whiten_sample_limit=args.whiten_sample_limit,
        center_patches=not args.no_center_patches,
    )
    cfg = solver.SolveConfig(
        max_outer_iters=args.max_iters, tol=args.tol, kmeans_iters=args.kmeans_iters,
        seed=args.seed, damping=args.damping, step_size=args.step_size,
    )
    model, report = solver.train(X, labels, hp, cfg)
    outdir = Path(args.out)
    dataio.save_model(outdir, model)
    dataio.write_kmx(outdir / "trace.kmx", np.asarray(report.objective_trace)[:, None])
    _echo_config(args, outdir / "config.json")
    if args.verbose or not report.converged:
        print(
            f"iterations={report.iterations_used} converged={report.converged} "
            f"final_objective={report.objective_trace[-1]:.6g} "
            f"grad_norm={report.final_grad_norm:.3g} stalls={report.stall_count}",
            file=sys.stderr,
        )
    return 0 if report.converged else 3


def cmd_encode(args) -> int:
    model = dataio.load_model(args.model)
    images, labels = _load_dataset(args.format, args.input)
    D = pipeline.encode_dataset(model, images, args.patch_size, pool=args.pool)
    dataio.write_kmx(args.out, D)
    if args.labels_out:
        dataio.write_kmx(args.labels_out, np.asarray(labels, dtype=np.float64)[:, None])
    _echo_config(args, f"{args.out}.config.json")
    return 0


def cmd_classify(args) -> int:
    D = dataio.read_kmx(args.descriptors)
    y = dataio.read_kmx(args.labels).ravel().astype(np.intp)
    if args.action == "train":
        if not args.model_out:
            raise ValueError("classify train requires --model-out")
        clf = pipeline.train_classifier(D, y, reg=args.reg, epochs=args.epochs, seed=args.seed)
        dataio.save_classifier(args.model_out, clf)
        _echo_config(args, Path(args.model_out) / "config.json")
        return 0
    if not args.model_in:
        raise ValueError("classify eval requires --model-in")
    clf = dataio.load_classifier(args.model_in)
    overall = pipeline.accuracy(clf, D, y)
    print(f"overall\t{overall:.6f}")
    for cls, acc in sorted(pipeline.per_class_accuracy(clf, D, y).items()):
        print(f"class\t{cls}\t{acc:.6f}")
    _echo_config(args, "classify-eval.config.json")
    return 0


def cmd_similarity(args) -> int:
    model = dataio.load_model(args.model)
    images, _ = _load_dataset(args.format, args.input)
    dist = pipeline.similarity_matrix(model, images, args.patch_size)
    dataio.write_kmx(args.out, dist)
    if args.render:
        dataio.write_pgm(args.render, pipeline.similarity_render(dist))
    _echo_config(args, f"{args.out}.config.json")
    return 0


def cmd_gradcheck(args) -> int:
    from .objective import BasisModel, default_pooling, make_selectors

    mode = _MODE_FLAGS[args.mode]
    if args.K < 1 or args.n < 1 or args.m < 1:
        raise ValueError("--K, --n, and --m must be positive")
    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.m, args.n))
    labels = None
    selectors = None
    eta = 0.0
    if is_discriminative(mode):
        if args.classes < 2:
            raise ValueError(f"--mode {args.mode} requires --classes >= 2")
        if args.K % args.classes != 0:
            raise ValueError("--K must be divisible by --classes")
        selectors = make_selectors(args.K // args.classes, args.classes)
        eta = float(args.eta) if args.eta != "auto" else selectors.per_class_size + 1.0
        labels = rng.integers(0, args.classes, size=args.m)
    kernel = _parse_kernel(args)
    if mode in ("rica", "d_rica"):
        kernel = KernelSpec("linear")
    # near-isometry scale keeps the instance well conditioned for the check
    W = rng.normal(size=(args.K, args.n)) / np.sqrt(args.K)
    model = BasisModel(
        W=W, mode=mode, kernel=kernel, pooling=default_pooling(args.K, mode, args.epsilon),
        selectors=selectors, lam=getattr(args, "lambda"), alpha=args.alpha, eta=eta,
    )
    err = solver.grad_check(model, X, labels, step=args.step)
    print(f"max_relative_error\t{err:.6e}")
    _echo_config(args, "gradcheck.config.json")
    return 0 if err < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="krica",
        description="Sparse over-complete feature learning and patch-based image classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract image patches into a KMX matrix")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--format", choices=("pnm-dir", "cifar10"), required=True)
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--limit", type=int, default=None,
                   help="seeded uniform subsample of the extracted patches")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a basis model on a patch matrix")
    p.add_argument("--patches", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--mode", choices=tuple(_MODE_FLAGS), required=True)
    p.add_argument("--kernel", choices=KERNEL_KINDS, default="gaussian")
    p.add_argument("--gamma", type=float, default=1e-1)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--lambda", type=float, default=1e-2)
    p.add_argument("--alpha", type=float, default=1e-1)
    p.add_argument("--eta", default="auto", help="'auto' means per-class size + 1")
    p.add_argument("--basis-size", type=int, required=True)
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--whiten", choices=("none", "pca", "kpca", "auto"), default="auto")
    p.add_argument("--retained", default="auto",
                   help="pca retained energy in (0,1] or kpca axis count")
    p.add_argument("--whiten-eps", type=float, default=1e-8)
    p.add_argument("--whiten-sample-limit", type=int, default=2000)
    p.add_argument("--no-center-patches", action="store_true")
    p.add_argument("--pooling", choices=("auto", "identity", "grid3x3"), default="auto")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--step-size", type=float, default=1e-1)
    p.add_argument("--kmeans-iters", type=int, default=50)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode images into pooled descriptors")
    p.add_argument("--model", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--format", choices=("pnm-dir", "cifar10"), required=True)
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--pool", choices=("sum", "max"), default="sum")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("classify", help="train or evaluate the linear classifier")
    p.add_argument("action", choices=("train", "eval"))
    p.add_argument("--descriptors", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model-out", default=None)
    p.add_argument("--model-in", default=None)
    p.add_argument("--reg", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=300)
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("similarity", help="pairwise descriptor distance matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--format", choices=("pnm-dir", "cifar10"), required=True)
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render", default=None, help="optional PGM rendering")
    _add_common(p)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("gradcheck", help="verify the analytic gradient on a random instance")
    p.add_argument("--mode", choices=tuple(_MODE_FLAGS), required=True)
    p.add_argument("--kernel", choices=KERNEL_KINDS, default="gaussian")
    p.add_argument("--gamma", type=float, default=1e-1)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--lambda", type=float, default=1e-2)
    p.add_argument("--alpha", type=float, default=1e-1)
    p.add_argument("--eta", default="auto")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--step", type=float, default=1e-5)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (dataio.KmxError, dataio.DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
