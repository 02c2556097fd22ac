"""Synthetic two-domain benchmark, PGM dataset IO, and group-aware splits.

The synthetic benchmark realizes an appearance-only shift: both domains draw
the same class-conditional shapes (structure), but domain A renders them as
bright shapes with additive Gaussian noise while domain B inverts contrast,
multiplies in speckle, and adds a smooth illumination bias.  Labels mean the
same thing in both domains, so only p(x) moves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

CLASS_NAMES = ("disk", "square", "cross", "stripes")


@dataclass
class DomainDataset:
    images: np.ndarray                  # (n, c, h, w) floats in [0, 1]
    labels: np.ndarray | None           # (n,) int class indices, or None
    domain_tag: str                     # "source" | "target"
    group_ids: np.ndarray = field(default=None)  # (n,) grouping key

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n,c,h,w), got {self.images.shape}")
        n = self.images.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one image")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixel values must lie in [0,1]")
        if self.group_ids is None:
            self.group_ids = np.arange(n)

    def __len__(self):
        return self.images.shape[0]


@dataclass
class SyntheticSpec:
    n_per_class: int = 100
    n_classes: int = 4
    size: int = 32
    noise_level: float = 0.08
    speckle_level: float = 0.25
    bias_amplitude: float = 0.25
    seed: int = 0


def _shape_mask(kind: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Binary structure mask for one sample; jittered per draw."""
    yy, xx = np.mgrid[0:size, 0:size]
    cy = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    cx = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    half = size * rng.uniform(0.22, 0.32)
    if kind == 0:  # disk
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= half**2).astype(np.float64)
    if kind == 1:  # square
        return ((np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)).astype(np.float64)
    if kind == 2:  # cross
        arm = max(1.0, half * 0.38)
        v = (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= half)
        h = (np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= half)
        return (v | h).astype(np.float64)
    if kind == 3:  # stripes
        period = rng.uniform(4.0, 7.0)
        phase = rng.uniform(0, period)
        band = ((yy + phase) % period) < period / 2
        within = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
        return (band & within).astype(np.float64)
    raise ConfigError(f"no shape defined for class {kind}")


def _smooth_bias(size: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency multiplicative-illumination-style field in [-amp, amp]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    fy, fx = rng.uniform(0.5, 1.5, size=2)
    py, px = rng.uniform(0, 2 * np.pi, size=2)
    f = np.sin(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px)
    return amplitude * f


def gen_synthetic(spec: SyntheticSpec) -> tuple[DomainDataset, DomainDataset]:
    """Draw both domains from one seeded stream: shared structure statistics,
    domain-specific appearance."""
    if spec.n_per_class < 1 or spec.n_classes < 1:
        raise ConfigError("n_per_class and n_classes must be positive")
    if spec.n_classes > len(CLASS_NAMES):
        raise ConfigError(
            f"at most {len(CLASS_NAMES)} structure classes available, got {spec.n_classes}"
        )
    rng = np.random.default_rng(spec.seed)
    domains = []
    for tag, shifted in (("source", False), ("target", True)):
        n = spec.n_per_class * spec.n_classes
        images = np.empty((n, 1, spec.size, spec.size))
        labels = np.repeat(np.arange(spec.n_classes), spec.n_per_class)
        for i, cls in enumerate(labels):
            mask = _shape_mask(int(cls), spec.size, rng)
            if shifted:
                # washed-out contrast, multiplicative speckle, illumination bias
                img = 0.30 + 0.40 * mask
                img = img * (1.0 + spec.speckle_level * rng.standard_normal(img.shape))
                img = img + _smooth_bias(spec.size, spec.bias_amplitude, rng)
            else:
                # crisp bright shapes on dark ground, additive noise
                img = 0.15 + 0.7 * mask
                img = img + spec.noise_level * rng.standard_normal(img.shape)
            images[i, 0] = np.clip(img, 0.0, 1.0)
        # groups of 4 consecutive same-class samples emulate per-patient bundles
        groups = np.arange(n) // 4
        domains.append(
            DomainDataset(images=images, labels=labels, domain_tag=tag, group_ids=groups)
        )
    return domains[0], domains[1]


# ---------------------------------------------------------------------------
# on-disk format: 8-bit binary PGM + labels.csv


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Write a single-channel [0,1] image as binary PGM, maxval 255."""
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise ValueError(f"PGM supports one channel, got {image.shape[0]}")
        image = image[0]
    h, w = image.shape
    pixels = np.round(image * 255.0).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    """Read a binary PGM into a [0,1] float array of shape (h, w)."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise ValueError(f"{path}: non-numeric header fields {fields[1:]}") from None
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_dataset(ds: DomainDataset, dir_path) -> None:
    """Write a dataset as numbered PGMs plus labels.csv."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label", "group"])
        for i in range(len(ds)):
            name = f"img_{i:05d}.pgm"
            write_pgm(out / name, ds.images[i])
            label = "" if ds.labels is None else int(ds.labels[i])
            writer.writerow([name, label, int(ds.group_ids[i])])


def load_dataset(dir_path, domain_tag: str = "source") -> DomainDataset:
    """Read back a PGM + labels.csv directory written by :func:`save_dataset`
    (or any conforming producer)."""
    root = Path(dir_path)
    csv_path = root / "labels.csv"
    if not csv_path.exists():
        raise ValueError(f"{root}: no labels.csv found")
    with open(csv_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "filename" not in reader.fieldnames:
            raise ValueError(f"{csv_path}: header must include 'filename'")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    has_labels = "label" in rows[0] and any((r.get("label") or "") != "" for r in rows)
    images, labels, groups = [], [], []
    shape = None
    for row in rows:
        name = row["filename"]
        path = root / name
        if not path.exists():
            raise ValueError(f"{csv_path}: row for {name!r} has no matching file")
        img = read_pgm(path)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(
                f"{name}: size {img.shape} differs from first image {shape}"
            )
        images.append(img[None, :, :])
        if has_labels:
            labels.append(int(row["label"]))
        groups.append(row.get("group", str(len(groups))))
    uniq = {g: i for i, g in enumerate(dict.fromkeys(groups))}
    return DomainDataset(
        images=np.stack(images),
        labels=np.asarray(labels) if has_labels else None,
        domain_tag=domain_tag,
        group_ids=np.asarray([uniq[g] for g in groups]),
    )


# ---------------------------------------------------------------------------
# splitting and batching


def split_dataset(
    ds: DomainDataset, ratios: tuple = (0.7, 0.1, 0.2), seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partition image indices into train/val/test by whole groups.

    Groups are shuffled by seed, then allocated to splits by cumulative group
    count; every image of a group lands in exactly one split.  When labels
    are present the shuffle is stratified: groups are bucketed by their
    majority label and each bucket is allocated 70/10/20 independently, so a
    split's class mix cannot drift far from the dataset's.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ConfigError(f"ratios must be three fractions summing to 1, got {ratios}")
    groups = np.unique(ds.group_ids)
    if groups.size < 3:
        raise ConfigError(f"need at least 3 groups to split, got {groups.size}")
    rng = np.random.default_rng(seed)
    if ds.labels is None:
        strata = [rng.permutation(groups)]
    else:
        majority = {}
        for g in groups.tolist():
            labs = ds.labels[ds.group_ids == g]
            majority[g] = int(np.bincount(labs).argmax())
        strata = [
            rng.permutation(np.array([g for g in groups.tolist() if majority[g] == m]))
            for m in sorted(set(majority.values()))
        ]
    parts: list[list] = [[], [], []]
    for order in strata:
        n_train = int(round(ratios[0] * order.size))
        n_val = int(round(ratios[1] * order.size))
        n_train = min(n_train, order.size)
        n_val = min(n_val, order.size - n_train)
        parts[0] += order[:n_train].tolist()
        parts[1] += order[n_train : n_train + n_val].tolist()
        parts[2] += order[n_train + n_val :].tolist()
    if min(len(p) for p in parts) == 0:
        order = rng.permutation(groups)
        n_train = max(1, min(int(round(ratios[0] * groups.size)), groups.size - 2))
        n_val = max(1, min(int(round(ratios[1] * groups.size)), groups.size - n_train - 1))
        parts = [
            order[:n_train].tolist(),
            order[n_train : n_train + n_val].tolist(),
            order[n_train + n_val :].tolist(),
        ]
    buckets = tuple(set(p) for p in parts)
    idx = np.arange(len(ds))
    return tuple(
        idx[np.isin(ds.group_ids, sorted(bucket))] for bucket in buckets
    )


def subset(ds: DomainDataset, idx: np.ndarray) -> DomainDataset:
    """A new dataset holding the rows selected by ``idx`` (in that order)."""
    return DomainDataset(
        images=ds.images[idx],
        labels=None if ds.labels is None else ds.labels[idx],
        domain_tag=ds.domain_tag,
        group_ids=ds.group_ids[idx],
    )


def batches(ds_size: int, w: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle chopped into fixed-size batches; the ragged
    remainder is dropped so every batch graph has exactly w nodes."""
    if w > ds_size:
        raise ConfigError(f"batch size {w} exceeds dataset size {ds_size}")
    if w < 1:
        raise ConfigError(f"batch size must be positive, got {w}")
    order = np.random.default_rng([seed, epoch]).permutation(ds_size)
    n_full = ds_size // w
    return [order[i * w : (i + 1) * w] for i in range(n_full)]
