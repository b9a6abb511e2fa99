"""Dataset loaders, the KMX matrix container, and model serialization.

KMX byte layout (little-endian, bit-exact round trips):

    bytes 0..3    magic "KMX1"
    bytes 4..7    rows  (unsigned 32-bit)
    bytes 8..11   cols  (unsigned 32-bit)
    bytes 12..    rows*cols IEEE-754 float64 values, row-major

No trailing bytes are allowed.  Model bundles are directories holding a
human-readable ``manifest.json`` plus KMX blobs; every numeric field travels
through KMX so precision never passes through decimal printing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .kernels import KernelSpec
from .objective import (
    BasisModel,
    PoolingMatrix,
    default_pooling,
    grid3x3_pooling,
    identity_pooling,
    make_selectors,
)
from .whitening import KPCA, NONE, PCA, WhitenTransform

KMX_MAGIC = b"KMX1"
MANIFEST_VERSION = 1

# hard sanity cap: rows*cols beyond this cannot be a real in-memory matrix
_MAX_ELEMENTS = 1 << 48


class DataFormatError(ValueError):
    """A data file exists but its contents are malformed."""


class KmxError(Exception):
    """Base class for KMX container failures."""


class KmxBadMagic(KmxError):
    pass


class KmxTruncated(KmxError):
    pass


class KmxOverflow(KmxError):
    pass


class KmxTrailingBytes(KmxError):
    pass


def write_kmx(path, matrix) -> None:
    a = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"KMX stores 2-d matrices, got shape {a.shape}")
    rows, cols = a.shape
    if rows >= 1 << 32 or cols >= 1 << 32:
        raise KmxOverflow(f"matrix {rows}x{cols} exceeds 32-bit dimensions")
    with open(path, "wb") as fh:
        fh.write(KMX_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(a.tobytes(order="C"))


def read_kmx(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise KmxTruncated(f"{path}: file shorter than the 4-byte magic")
    if data[:4] != KMX_MAGIC:
        raise KmxBadMagic(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise KmxTruncated(f"{path}: header truncated")
    rows, cols = struct.unpack("<II", data[4:12])
    count = rows * cols
    if count > _MAX_ELEMENTS:
        raise KmxOverflow(f"{path}: {rows}x{cols} elements overflow the sane limit")
    expected = 12 + 8 * count
    if len(data) < expected:
        raise KmxTruncated(f"{path}: payload has {len(data) - 12} of {8 * count} bytes")
    if len(data) > expected:
        raise KmxTrailingBytes(f"{path}: {len(data) - expected} trailing bytes")
    return np.frombuffer(data[12:], dtype="<f8").reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# model bundles


def _whitener_blobs(t: WhitenTransform) -> tuple[dict, dict]:
    meta = {"kind": t.kind, "retained": int(t.retained), "dropped": int(t.dropped),
            "input_dim": int(t.input_dim)}
    blobs: dict[str, np.ndarray] = {}
    if t.kind == PCA:
        blobs["whiten_mean"] = t.mean[None, :]
        blobs["whiten_projection"] = t.projection
        blobs["whiten_eigenvalues"] = t.eigenvalues[None, :]
        blobs["whiten_scalars"] = np.array([[t.regularizer]])
    elif t.kind == KPCA:
        meta["kernel_kind"] = t.kernel.kind
        blobs["whiten_landmarks"] = t.landmarks
        blobs["whiten_dual_coef"] = t.dual_coef
        blobs["whiten_eigenvalues"] = t.eigenvalues[None, :]
        blobs["whiten_row_means"] = t.landmark_row_means[None, :]
        blobs["whiten_scalars"] = np.array(
            [[t.regularizer, t.landmark_mean, t.kernel.gamma, t.kernel.b]]
        )
    return meta, blobs


def _whitener_from_blobs(meta: dict, blobs: dict) -> WhitenTransform:
    kind = meta["kind"]
    if kind == NONE:
        return WhitenTransform(kind=NONE)
    if kind == PCA:
        return WhitenTransform(
            kind=PCA,
            mean=blobs["whiten_mean"][0],
            projection=blobs["whiten_projection"],
            eigenvalues=blobs["whiten_eigenvalues"][0],
            retained=meta["retained"],
            dropped=meta["dropped"],
            regularizer=float(blobs["whiten_scalars"][0, 0]),
            input_dim=meta["input_dim"],
        )
    scalars = blobs["whiten_scalars"][0]
    return WhitenTransform(
        kind=KPCA,
        dual_coef=blobs["whiten_dual_coef"],
        eigenvalues=blobs["whiten_eigenvalues"][0],
        retained=meta["retained"],
        dropped=meta["dropped"],
        landmarks=blobs["whiten_landmarks"],
        kernel=KernelSpec(meta["kernel_kind"], gamma=scalars[2], b=scalars[3]),
        landmark_row_means=blobs["whiten_row_means"][0],
        landmark_mean=float(scalars[1]),
        regularizer=float(scalars[0]),
        input_dim=meta["input_dim"],
    )


def save_model(dirpath, model: BasisModel) -> None:
    """Write a BasisModel bundle: manifest.json plus KMX blobs."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    wmeta, blobs = _whitener_blobs(model.whitener)
    blobs["W"] = model.W
    # order matters: the manifest echo is approximate, these are authoritative
    blobs["scalars"] = np.array(
        [[model.lam, model.alpha, model.eta, model.kernel.gamma, model.kernel.b,
          model.pooling.epsilon]]
    )
    if model.selectors is not None:
        blobs["selectors"] = model.selectors.D_plus
    manifest = {
        "version": MANIFEST_VERSION,
        "type": "basis_model",
        "mode": model.mode,
        "kernel_kind": model.kernel.kind,
        "basis_size": int(model.basis_size),
        "per_class_size": int(model.selectors.per_class_size) if model.selectors else 0,
        "class_count": int(model.selectors.class_count) if model.selectors else 0,
        "pooling_topology": model.pooling.topology,
        "seed": int(model.seed),
        "center_patches": bool(model.center_patches),
        "rank_one_selectors": bool(model.rank_one_selectors),
        "whitener": wmeta,
        "blobs": {name: f"{name}.kmx" for name in blobs},
        "scalar_order": ["lambda", "alpha", "eta", "gamma", "b", "pooling_epsilon"],
        "scalar_echo": {
            "lambda": model.lam, "alpha": model.alpha, "eta": model.eta,
            "gamma": model.kernel.gamma, "b": model.kernel.b,
            "pooling_epsilon": model.pooling.epsilon,
        },
    }
    for name, arr in blobs.items():
        write_kmx(d / f"{name}.kmx", arr)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")


def _read_manifest(dirpath, expected_type: str) -> tuple[dict, dict]:
    d = Path(dirpath)
    manifest_path = d / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"{d}: no manifest.json")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataFormatError(f"{d}: unsupported manifest version {manifest.get('version')}")
    if manifest.get("type") != expected_type:
        raise DataFormatError(f"{d}: expected a {expected_type} bundle, got {manifest.get('type')}")
    blobs = {}
    for name, fname in manifest["blobs"].items():
        blob_path = d / fname
        if not blob_path.is_file():
            raise FileNotFoundError(f"{d}: missing blob {fname}")
        blobs[name] = read_kmx(blob_path)
    return manifest, blobs


def load_model(dirpath) -> BasisModel:
    manifest, blobs = _read_manifest(dirpath, "basis_model")
    lam, alpha, eta, gamma, b, pool_eps = blobs["scalars"][0]
    kernel = KernelSpec(manifest["kernel_kind"], gamma=gamma, b=b)
    K = manifest["basis_size"]
    topology = manifest["pooling_topology"]
    if topology == "identity":
        pooling = identity_pooling(K, pool_eps)
    elif topology == "grid3x3":
        pooling = grid3x3_pooling(K, pool_eps)
    else:
        raise ValueError(f"unknown pooling topology {topology!r}")
    selectors = None
    if manifest["class_count"]:
        selectors = make_selectors(manifest["per_class_size"], manifest["class_count"])
        if "selectors" in blobs and not np.array_equal(blobs["selectors"], selectors.D_plus):
            raise ValueError("selector layout blob disagrees with manifest block structure")
    whitener = _whitener_from_blobs(manifest["whitener"], blobs)
    return BasisModel(
        W=blobs["W"], mode=manifest["mode"], kernel=kernel, pooling=pooling,
        selectors=selectors, lam=float(lam), alpha=float(alpha), eta=float(eta),
        whitener=whitener, center_patches=manifest["center_patches"],
        rank_one_selectors=manifest.get("rank_one_selectors", True),
        seed=manifest["seed"],
    )


def save_classifier(dirpath, clf) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {
        "weights": clf.weights,
        "biases": clf.biases[None, :],
        "feature_mean": clf.feature_mean[None, :],
        "feature_scale": clf.feature_scale[None, :],
        "scalars": np.array([[clf.reg, float(clf.epochs), float(clf.seed)]]),
    }
    manifest = {
        "version": MANIFEST_VERSION,
        "type": "classifier",
        "classes": [int(c) for c in clf.classes],
        "blobs": {name: f"{name}.kmx" for name in blobs},
        "scalar_order": ["reg", "epochs", "seed"],
    }
    for name, arr in blobs.items():
        write_kmx(d / f"{name}.kmx", arr)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")


def load_classifier(dirpath):
    from .pipeline import LinearClassifier

    manifest, blobs = _read_manifest(dirpath, "classifier")
    reg, epochs, seed = blobs["scalars"][0]
    return LinearClassifier(
        weights=blobs["weights"],
        biases=blobs["biases"][0],
        feature_mean=blobs["feature_mean"][0],
        feature_scale=blobs["feature_scale"][0],
        classes=np.asarray(manifest["classes"], dtype=np.intp),
        reg=float(reg),
        epochs=int(epochs),
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# datasets

_CIFAR_RECORD = 3073  # 1 label byte + 3*1024 channel-major pixel bytes


def load_cifar10_binary(paths, classes_filter=None, limit_per_class=None):
    """Read CIFAR-10 binary batch files into ([images], labels).

    Images come out as (32, 32, 3) float64 in [0, 1], in file order; the
    optional class filter and per-class limit preserve that order.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    keep = None if classes_filter is None else set(int(c) for c in classes_filter)
    images, labels = [], []
    counts: dict[int, int] = {}
    for path in paths:
        data = Path(path).read_bytes()
        if len(data) % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: length {len(data)} is not a multiple of {_CIFAR_RECORD}"
            )
        for off in range(0, len(data), _CIFAR_RECORD):
            label = data[off]
            if label > 9:
                raise DataFormatError(f"{path}: label byte {label} out of range at offset {off}")
            if keep is not None and label not in keep:
                continue
            if limit_per_class is not None and counts.get(label, 0) >= limit_per_class:
                continue
            counts[label] = counts.get(label, 0) + 1
            planes = np.frombuffer(data, dtype=np.uint8, count=3072, offset=off + 1)
            img = planes.reshape(3, 32, 32).transpose(1, 2, 0).astype(np.float64) / 255.0
            images.append(img)
            labels.append(label)
    return images, np.asarray(labels, dtype=np.intp)


def _parse_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()

    def fail(msg):
        raise DataFormatError(f"{path}: {msg}")

    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in b"56":
        fail("not a binary PNM (P5/P6) file")
    channels = 1 if data[1:2] == b"5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            fail("truncated header")
        token = data[start:pos]
        if not token.isdigit():
            fail(f"bad header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        fail("bad dimensions or maxval")
    count = width * height * channels
    if maxval < 256:
        raw = np.frombuffer(data, dtype=np.uint8, count=-1, offset=pos)
        if raw.size < count:
            fail(f"pixel payload has {raw.size} of {count} bytes")
        values = raw[:count].astype(np.float64)
    else:
        raw = data[pos:]
        if len(raw) < 2 * count:
            fail(f"pixel payload has {len(raw)} of {2 * count} bytes")
        values = np.frombuffer(raw, dtype=">u2", count=count).astype(np.float64)
    return (values / maxval).reshape(height, width, channels)


def load_image_dir(root):
    """Load a one-folder-per-class tree of binary PNM images.

    Labels index the sorted class-folder names; pixels are scaled to [0, 1].
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no classes found")
    images, labels = [], []
    for label, d in enumerate(class_dirs):
        for f in sorted(d.iterdir()):
            if f.suffix.lower() in (".pgm", ".ppm"):
                images.append(_parse_pnm(f))
                labels.append(label)
    if not images:
        raise ValueError(f"{root}: no PNM images found")
    return images, np.asarray(labels, dtype=np.intp)


def write_pgm(path, values: np.ndarray) -> None:
    """Render a 2-d array as 8-bit binary PGM, min-max scaled."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("PGM rendering needs a 2-d array")
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def write_pnm_image(path, image: np.ndarray) -> None:
    """Write an (h, w), (h, w, 1), or (h, w, 3) array of [0, 1] values as
    binary PGM/PPM with maxval 255."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError("PNM writing needs 1 or 3 channels")
    magic = b"P5" if a.shape[2] == 1 else b"P6"
    pixels = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
