"""Datasets, label corruption, class imbalance, and on-disk formats.

Images are kept as uint8 arrays of shape (N, H, W, 3). Bundles are immutable:
every corruption/subsetting operation returns a new bundle. Ground-truth
labels ride along for evaluation only; the training path receives a
``TrainView`` that does not carry them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IMAGE_SIZE = 32

# Standard CIFAR-10 confusion pairs: truck->automobile, bird->airplane,
# deer->horse, cat<->dog (class ids in the usual label order).
DEFAULT_ASYM_MAPPING = {9: 1, 2: 0, 4: 7, 3: 5, 5: 3}


@dataclass(frozen=True)
class TrainView:
    """The training-visible slice of a dataset: images and observed labels only."""

    images: np.ndarray
    noisy_labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class DatasetBundle:
    """Images with observed (possibly corrupted) labels and hidden true labels."""

    images: np.ndarray        # uint8 (N, H, W, 3)
    noisy_labels: np.ndarray  # int64 in [0, num_classes)
    true_labels: np.ndarray   # int64, for evaluation only
    num_classes: int
    split_tag: str = "train"

    def __post_init__(self):
        n = len(self.images)
        if not (len(self.noisy_labels) == len(self.true_labels) == n):
            raise ValueError("images and label arrays must have equal length")
        for name, arr in (("noisy_labels", self.noisy_labels), ("true_labels", self.true_labels)):
            if len(arr) and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise ValueError(f"{name} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    def train_view(self) -> TrainView:
        return TrainView(self.images, self.noisy_labels, self.num_classes)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.noisy_labels).tobytes())
        h.update(np.ascontiguousarray(self.true_labels).tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class NoiseSpec:
    """How to corrupt the observed labels."""

    kind: str = "none"  # none | sym | asym | file
    rate: float = 0.0
    asym_mapping: dict | None = None
    seed: int = 0
    label_file: str | None = None

    def __post_init__(self):
        if self.kind not in ("none", "sym", "asym", "file"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")


@dataclass(frozen=True)
class ImbalanceSpec:
    kappa: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kappa < 1.0:
            raise ValueError("imbalance factor must be >= 1")


def inject_symmetric_noise(bundle: DatasetBundle, rate: float, seed: int) -> DatasetBundle:
    """Redraw each label uniformly over all classes with probability ``rate``.

    The redraw may land on the original class, so the effective corruption
    rate is rate * (C - 1) / C.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("noise rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = len(bundle)
    flip = rng.random(n) < rate
    redraw = rng.integers(0, bundle.num_classes, size=n)
    noisy = np.where(flip, redraw, bundle.true_labels).astype(np.int64)
    return replace(bundle, noisy_labels=noisy)


def inject_asymmetric_noise(bundle: DatasetBundle, rate: float,
                            mapping: dict, seed: int) -> DatasetBundle:
    """With probability ``rate`` map each label through a class->class table."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("noise rate must lie in [0, 1]")
    missing = set(range(bundle.num_classes)) - set(mapping)
    if missing:
        raise ValueError(f"asymmetric mapping missing classes {sorted(missing)}")
    lut = np.array([mapping[c] for c in range(bundle.num_classes)], dtype=np.int64)
    if len(lut) and (lut.min() < 0 or lut.max() >= bundle.num_classes):
        raise ValueError("asymmetric mapping target outside class range")
    rng = np.random.default_rng(seed)
    flip = rng.random(len(bundle)) < rate
    noisy = np.where(flip, lut[bundle.true_labels], bundle.true_labels).astype(np.int64)
    return replace(bundle, noisy_labels=noisy)


def save_external_labels(labels: np.ndarray, num_classes: int, path: str | Path) -> None:
    """Write labels as a one-line ``N C`` header followed by little-endian int32s."""
    labels = np.asarray(labels, dtype="<i4")
    with open(path, "wb") as f:
        f.write(f"{len(labels)} {num_classes}\n".encode("ascii"))
        f.write(labels.tobytes())


def load_external_labels(bundle: DatasetBundle, path: str | Path) -> DatasetBundle:
    """Replace observed labels with the contents of an external label file."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 2:
            raise ValueError("label file header must be 'N C'")
        n, c = int(header[0]), int(header[1])
        labels = np.frombuffer(f.read(), dtype="<i4")
    if n != len(bundle) or len(labels) != n:
        raise ValueError(f"label file length {len(labels)} != dataset size {len(bundle)}")
    if c != bundle.num_classes:
        raise ValueError(f"label file class count {c} != dataset {bundle.num_classes}")
    if len(labels) and (labels.min() < 0 or labels.max() >= bundle.num_classes):
        raise ValueError("label file contains out-of-range class ids")
    return replace(bundle, noisy_labels=labels.astype(np.int64))


def apply_noise(bundle: DatasetBundle, spec: NoiseSpec) -> DatasetBundle:
    if spec.kind == "none":
        return replace(bundle, noisy_labels=bundle.true_labels.copy())
    if spec.kind == "sym":
        return inject_symmetric_noise(bundle, spec.rate, spec.seed)
    if spec.kind == "asym":
        mapping = spec.asym_mapping
        if mapping is None:
            mapping = {c: DEFAULT_ASYM_MAPPING.get(c, c) for c in range(bundle.num_classes)}
        return inject_asymmetric_noise(bundle, spec.rate, mapping, spec.seed)
    if spec.label_file is None:
        raise ValueError("noise kind 'file' requires label_file")
    return load_external_labels(bundle, spec.label_file)


def make_imbalanced(bundle: DatasetBundle, spec: ImbalanceSpec) -> DatasetBundle:
    """Keep round(N / kappa^((i-1)/(C-1))) samples of class i (1-indexed).

    Requires a class-balanced input. Retained samples per class are drawn
    without replacement by the spec seed. Label noise should be injected
    after imbalancing, never before.
    """
    c = bundle.num_classes
    counts = np.bincount(bundle.true_labels, minlength=c)
    if c > 1 and len(set(counts.tolist())) != 1:
        raise ValueError("imbalance generator requires a class-balanced bundle")
    n_per_class = int(counts[0])
    rng = np.random.default_rng(spec.seed)
    keep: list[np.ndarray] = []
    for i in range(c):
        exponent = i / (c - 1) if c > 1 else 0.0
        n_i = int(np.rint(n_per_class / spec.kappa ** exponent))
        ids = np.flatnonzero(bundle.true_labels == i)
        chosen = rng.choice(ids, size=n_i, replace=False) if n_i < len(ids) else ids
        keep.append(np.sort(chosen))
    order = np.sort(np.concatenate(keep))
    return DatasetBundle(
        images=bundle.images[order],
        noisy_labels=bundle.noisy_labels[order],
        true_labels=bundle.true_labels[order],
        num_classes=c,
        split_tag=bundle.split_tag,
    )


def imbalance_class_size(n_per_class: int, kappa: float, class_index: int, num_classes: int) -> int:
    """Retained count for a 1-indexed class under the exponential profile."""
    if num_classes > 1:
        exponent = (class_index - 1) / (num_classes - 1)
    else:
        exponent = 0.0
    return int(np.rint(n_per_class / kappa ** exponent))


def balanced_subset(bundle: DatasetBundle, n_total: int, seed: int) -> DatasetBundle:
    """Draw an equal per-class subset of ``n_total`` samples."""
    c = bundle.num_classes
    if n_total % c:
        raise ValueError("subset size must be divisible by the class count")
    per = n_total // c
    rng = np.random.default_rng(seed)
    keep = []
    for i in range(c):
        ids = np.flatnonzero(bundle.true_labels == i)
        if len(ids) < per:
            raise ValueError(f"class {i} has only {len(ids)} samples, need {per}")
        keep.append(np.sort(rng.choice(ids, size=per, replace=False)))
    order = np.sort(np.concatenate(keep))
    return DatasetBundle(bundle.images[order], bundle.noisy_labels[order],
                         bundle.true_labels[order], c, bundle.split_tag)


# ---------------------------------------------------------------------------
# Synthetic image data
# ---------------------------------------------------------------------------

def _upsample_bilinear(grid: np.ndarray, size: int) -> np.ndarray:
    """Bilinear upsample of (..., h, w, 3) to (..., size, size, 3)."""
    h = grid.shape[-3]
    coords = (np.arange(size) + 0.5) * h / size - 0.5
    lo = np.clip(np.floor(coords).astype(int), 0, h - 1)
    hi = np.clip(lo + 1, 0, h - 1)
    frac = np.clip(coords - lo, 0.0, 1.0)
    rows = grid[..., lo, :, :] * (1 - frac)[:, None, None] + grid[..., hi, :, :] * frac[:, None, None]
    out = (rows[..., :, lo, :] * (1 - frac)[None, :, None]
           + rows[..., :, hi, :] * frac[None, :, None])
    return out


def make_synthetic_dataset(num_classes: int = 10, n_train: int = 5000, n_test: int = 2000,
                           modes_per_class: int = 3, pixel_noise: float = 25.0,
                           max_shift: int = 4, seed: int = 0,
                           ) -> tuple[DatasetBundle, DatasetBundle]:
    """CIFAR-shaped synthetic classification data with controllable difficulty.

    Each class owns a few smooth prototype patterns; samples are randomly
    shifted, contrast/brightness jittered, and buried in pixel noise. Returns
    clean (noisy_labels == true_labels) train and test bundles.
    """
    rng = np.random.default_rng(seed)
    protos = rng.uniform(40.0, 215.0, size=(num_classes, modes_per_class, 8, 8, 3))
    protos = _upsample_bilinear(protos, IMAGE_SIZE)

    def draw(n: int, tag: str) -> DatasetBundle:
        labels = np.arange(n) % num_classes
        rng.shuffle(labels)
        modes = rng.integers(0, modes_per_class, size=n)
        shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
        contrast = rng.uniform(0.75, 1.25, size=n)
        brightness = rng.uniform(-20.0, 20.0, size=n)
        noise = rng.normal(0.0, pixel_noise, size=(n, IMAGE_SIZE, IMAGE_SIZE, 3))
        images = np.empty((n, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
        for i in range(n):
            base = np.roll(protos[labels[i], modes[i]], tuple(shifts[i]), axis=(0, 1))
            img = (base - 128.0) * contrast[i] + 128.0 + brightness[i] + noise[i]
            images[i] = np.clip(img, 0, 255).astype(np.uint8)
        labels = labels.astype(np.int64)
        return DatasetBundle(images, labels.copy(), labels, num_classes, tag)

    return draw(n_train, "train"), draw(n_test, "test")


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 1 + 3 * IMAGE_SIZE * IMAGE_SIZE


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size % _CIFAR_RECORD:
        raise ValueError(f"{path} is not a CIFAR-format batch file")
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, IMAGE_SIZE, IMAGE_SIZE).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def load_cifar10_dir(root: str | Path, split: str = "train", num_classes: int = 10) -> DatasetBundle:
    """Load CIFAR-10 binary batch files (data_batch_*.bin / test_batch.bin)."""
    root = Path(root)
    if split == "train":
        files = sorted(root.glob("data_batch_*.bin"))
    else:
        files = [root / "test_batch.bin"]
    if not files or not all(f.exists() for f in files):
        raise FileNotFoundError(f"no CIFAR batch files for split {split!r} under {root}")
    parts = [_read_cifar_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return DatasetBundle(images, labels.copy(), labels, num_classes, split)


def save_bundle(bundle: DatasetBundle, out_dir: str | Path) -> None:
    """Materialize a bundle as .npy arrays plus a json sidecar (no timestamps)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "images.npy", bundle.images)
    np.save(out / "noisy_labels.npy", bundle.noisy_labels)
    np.save(out / "true_labels.npy", bundle.true_labels)
    meta = {"num_classes": bundle.num_classes, "split_tag": bundle.split_tag,
            "n": len(bundle), "sha256": bundle.content_hash()}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_bundle(in_dir: str | Path) -> DatasetBundle:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    bundle = DatasetBundle(
        images=np.load(src / "images.npy"),
        noisy_labels=np.load(src / "noisy_labels.npy"),
        true_labels=np.load(src / "true_labels.npy"),
        num_classes=int(meta["num_classes"]),
        split_tag=str(meta["split_tag"]),
    )
    if bundle.content_hash() != meta["sha256"]:
        raise ValueError(f"bundle at {src} failed its content hash check")
    return bundle
