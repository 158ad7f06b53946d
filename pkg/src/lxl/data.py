"""Procedural 8-class lesion-like image dataset plus augmentation and splits.

Images are H x W x 3 float32 in [0, 1].  Each class has its own blob color
palette, radius range, border irregularity and satellite-spot profile; classes
0 and 4 are generated from deliberately overlapping parameter ranges so that
they form the hardest pair to separate.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .checkpoint import load_container, save_container
from .errors import ConfigurationError

CLASS_NAMES = ["MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC"]
N_CLASSES = 8

# per-class generator profile: color range, lesion radius (fraction of extent),
# border irregularity amplitude, satellite count range, interior noise, accents
_PROFILES = [
    # 0 MEL: dark, irregular, satellites -- overlaps BKL on purpose
    dict(color=((0.26, 0.14, 0.08), (0.46, 0.28, 0.16)), radius=(0.24, 0.33),
         amp=(0.16, 0.32), sats=(0, 2), noise=0.06, ring=False, pale_center=False),
    # 1 NV: medium brown, round, clean border
    dict(color=((0.55, 0.33, 0.18), (0.70, 0.45, 0.28)), radius=(0.22, 0.30),
         amp=(0.02, 0.08), sats=(0, 0), noise=0.03, ring=False, pale_center=False),
    # 2 BCC: pearly-pink with bright rim
    dict(color=((0.88, 0.62, 0.58), (0.96, 0.74, 0.70)), radius=(0.20, 0.27),
         amp=(0.04, 0.12), sats=(0, 0), noise=0.03, ring=True, pale_center=False),
    # 3 AK: large diffuse red rough patch
    dict(color=((0.80, 0.33, 0.28), (0.90, 0.48, 0.40)), radius=(0.30, 0.40),
         amp=(0.30, 0.50), sats=(0, 0), noise=0.14, ring=False, pale_center=False),
    # 4 BKL: brown-grey waxy, slightly irregular -- overlaps MEL on purpose
    dict(color=((0.30, 0.18, 0.11), (0.50, 0.31, 0.19)), radius=(0.23, 0.32),
         amp=(0.14, 0.28), sats=(0, 1), noise=0.06, ring=False, pale_center=False),
    # 5 DF: small firm violet-brown dot
    dict(color=((0.38, 0.22, 0.34), (0.52, 0.34, 0.48)), radius=(0.11, 0.16),
         amp=(0.02, 0.06), sats=(0, 0), noise=0.02, ring=False, pale_center=False),
    # 6 VASC: vivid red-purple
    dict(color=((0.72, 0.08, 0.16), (0.88, 0.20, 0.32)), radius=(0.18, 0.27),
         amp=(0.05, 0.15), sats=(0, 0), noise=0.03, ring=False, pale_center=False),
    # 7 SCC: yellowish crusty with pale center
    dict(color=((0.72, 0.60, 0.38), (0.86, 0.74, 0.52)), radius=(0.20, 0.30),
         amp=(0.18, 0.34), sats=(0, 0), noise=0.08, ring=False, pale_center=True),
]

_SKIN = np.array([0.94, 0.78, 0.66], dtype=np.float32)


@dataclass
class LabeledImage:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    label: int
    instance_id: str


@dataclass
class Dataset:
    items: list[LabeledImage] = field(default_factory=list)
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def __len__(self):
        return len(self.items)

    def images(self):
        return np.stack([it.image for it in self.items])

    def labels(self):
        return np.array([it.label for it in self.items], dtype=np.int64)

    def by_id(self, instance_id):
        for it in self.items:
            if it.instance_id == instance_id:
                return it
        raise KeyError(instance_id)


def _render(extent, label, rng):
    prof = _PROFILES[label]
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float32)

    # skin background with smooth low-frequency variation
    img = np.empty((extent, extent, 3), dtype=np.float32)
    base = _SKIN + rng.uniform(-0.03, 0.03, size=3).astype(np.float32)
    lowfreq = ndimage.gaussian_filter(
        rng.normal(0.0, 1.0, size=(extent, extent)).astype(np.float32), extent / 8.0
    )
    lowfreq = 0.05 * lowfreq / (np.abs(lowfreq).max() + 1e-8)
    for ch in range(3):
        img[:, :, ch] = base[ch] + lowfreq

    lo, hi = np.array(prof["color"][0]), np.array(prof["color"][1])
    color = (lo + rng.uniform(0.0, 1.0) * (hi - lo)).astype(np.float32)

    cx = extent / 2.0 + rng.uniform(-0.06, 0.06) * extent
    cy = extent / 2.0 + rng.uniform(-0.06, 0.06) * extent
    r0 = rng.uniform(*prof["radius"]) * extent
    amp = rng.uniform(*prof["amp"])

    theta = np.arctan2(yy - cy, xx - cx)
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    wobble = np.zeros_like(theta)
    for k in range(2, 6):
        wobble += rng.uniform(-1.0, 1.0) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    wobble /= 4.0
    redge = r0 * (1.0 + amp * wobble)

    def paint(alpha, col):
        for ch in range(3):
            img[:, :, ch] = (1 - alpha) * img[:, :, ch] + alpha * col[ch]

    soft = 0.9
    alpha = 1.0 / (1.0 + np.exp(-(redge - dist) / soft))
    interior = rng.normal(0.0, prof["noise"], size=(extent, extent)).astype(np.float32)
    paint(alpha, color)
    img += (alpha * interior)[:, :, None]

    if prof["ring"]:
        rim = np.exp(-((dist - redge) ** 2) / (2.0 * 1.2 ** 2)).astype(np.float32)
        paint(0.7 * rim, np.minimum(color + 0.25, 1.0))
    if prof["pale_center"]:
        core = 1.0 / (1.0 + np.exp(-(0.45 * redge - dist) / soft))
        paint(0.6 * core, np.minimum(color + 0.30, 1.0))

    n_sats = int(rng.integers(prof["sats"][0], prof["sats"][1] + 1))
    for _ in range(n_sats):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(1.15, 1.45) * r0
        sx, sy = cx + rad * np.cos(ang), cy + rad * np.sin(ang)
        sr = rng.uniform(1.0, 2.2)
        sd = np.sqrt((xx - sx) ** 2 + (yy - sy) ** 2)
        paint(1.0 / (1.0 + np.exp(-(sr - sd) / 0.6)), color)

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic(n_per_class, extent, seed):
    """Generate a balanced 8-class synthetic dataset, deterministic per seed."""
    if extent not in (28, 56):
        raise ConfigurationError(f"unsupported extent {extent}; expected 28 or 56")
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    items = []
    for label in range(N_CLASSES):
        for i in range(n_per_class):
            items.append(LabeledImage(
                image=_render(extent, label, rng),
                label=label,
                instance_id=f"{CLASS_NAMES[label]}-{i:04d}",
            ))
    return Dataset(items=items)


def augment(image, rng):
    """Random rescale (0.9-1.1), rotate (+-25 deg, reflect pad), crop back.

    A similarity transform only, so lesion geometry is preserved.  Identity
    parameter draws reproduce the input exactly.
    """
    extent_h, extent_w = image.shape[0], image.shape[1]
    out = image
    scale = float(rng.uniform(0.9, 1.1))
    angle = float(rng.uniform(-25.0, 25.0))
    if scale != 1.0:
        out = np.stack(
            [ndimage.zoom(out[:, :, ch], scale, order=1, mode="reflect") for ch in range(3)],
            axis=2,
        )
    if angle != 0.0:
        out = ndimage.rotate(out, angle, axes=(0, 1), reshape=False, order=1, mode="reflect")
    # pad back up if the rescale shrank the canvas
    pad_h = max(0, extent_h - out.shape[0])
    pad_w = max(0, extent_w - out.shape[1])
    if pad_h or pad_w:
        out = np.pad(out, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    slack_h = out.shape[0] - extent_h
    slack_w = out.shape[1] - extent_w
    oy = int(rng.integers(0, slack_h + 1)) if slack_h > 0 else 0
    ox = int(rng.integers(0, slack_w + 1)) if slack_w > 0 else 0
    out = out[oy:oy + extent_h, ox:ox + extent_w]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def preprocess_eval(image, short_edge=32, crop=28):
    """Deterministic eval preprocessing: short edge to 32, center crop 28x28."""
    h, w = image.shape[0], image.shape[1]
    if h < 2 or w < 2:
        raise ConfigurationError(f"degenerate image extent {(h, w)}")
    short = min(h, w)
    out = image.astype(np.float32)
    if short != short_edge:
        f = short_edge / short
        out = np.stack(
            [ndimage.zoom(out[:, :, ch], f, order=1, mode="reflect") for ch in range(3)],
            axis=2,
        )
    h2, w2 = out.shape[0], out.shape[1]
    oy = (h2 - crop) // 2
    ox = (w2 - crop) // 2
    out = out[oy:oy + crop, ox:ox + crop]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def split(dataset, train_fraction, seed):
    """Stratified train/validation split, deterministic per seed."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigurationError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_items, val_items = [], []
    for label in range(N_CLASSES):
        cls = [it for it in dataset.items if it.label == label]
        if not cls:
            continue
        if len(cls) < 2:
            raise ConfigurationError(
                f"class {dataset.class_names[label]} has {len(cls)} item(s); "
                "need >= 2 to stratify"
            )
        order = rng.permutation(len(cls))
        n_train = int(round(len(cls) * train_fraction))
        n_train = min(max(n_train, 1), len(cls) - 1)
        for rank, idx in enumerate(order):
            (train_items if rank < n_train else val_items).append(cls[idx])
    return Dataset(items=train_items, class_names=dataset.class_names), \
        Dataset(items=val_items, class_names=dataset.class_names)


# ----------------------------------------------------------------------
# on-disk formats

def save_dataset(dataset, out_dir):
    """Write PNG files + labels.csv + classes.json."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for it in dataset.items:
        fname = f"{it.instance_id}.png"
        arr = np.round(it.image * 255.0).astype(np.uint8)
        PILImage.fromarray(arr).save(os.path.join(out_dir, fname))
        rows.append((it.instance_id, fname, it.label))
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "filename", "label"])
        writer.writerows(rows)
    with open(os.path.join(out_dir, "classes.json"), "w") as fh:
        json.dump({"class_names": dataset.class_names}, fh, indent=2)


def load_dataset(in_dir):
    with open(os.path.join(in_dir, "classes.json")) as fh:
        class_names = json.load(fh)["class_names"]
    items = []
    with open(os.path.join(in_dir, "labels.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            arr = np.asarray(PILImage.open(os.path.join(in_dir, row["filename"])))
            items.append(LabeledImage(
                image=(arr.astype(np.float32) / 255.0),
                label=int(row["label"]),
                instance_id=row["id"],
            ))
    return Dataset(items=items, class_names=class_names)


def save_packed(dataset, path):
    """Packed binary form reusing the checkpoint container (fast CI loading)."""
    meta = {
        "kind": "dataset",
        "ids": [it.instance_id for it in dataset.items],
        "labels": [it.label for it in dataset.items],
        "class_names": dataset.class_names,
    }
    save_container(path, meta, {"images": dataset.images()})


def load_packed(path):
    meta, arrays = load_container(path)
    if meta.get("kind") != "dataset":
        raise ConfigurationError(f"{path} is not a packed dataset")
    images = arrays["images"]
    items = [
        LabeledImage(image=images[i], label=int(lab), instance_id=iid)
        for i, (iid, lab) in enumerate(zip(meta["ids"], meta["labels"]))
    ]
    return Dataset(items=items, class_names=meta["class_names"])
