"""Latent-space atlas: pairwise distances, SMACOF MDS to 2D, scatter export
and random-forest pairwise class-separation reports.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES
from .models import encode
from .tree import RandomForest

# held-out accuracies reported for the full-scale reference experiment;
# recorded as metadata only, never asserted at desk scale
PAPER_REFERENCE_ACCURACY = {
    ("MEL", "BKL"): 0.8560,
    ("MEL", "NV"): 0.7853,
}

_SCATTER_COLORS = [
    "#d62728", "#1f77b4", "#ff7f0e", "#2ca02c",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
]


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # N x k
    labels: np.ndarray   # N
    ids: list
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))

    def __post_init__(self):
        if len(self.vectors) != len(self.labels) or len(self.vectors) != len(self.ids):
            raise ValueError("vectors, labels and ids must have equal length")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")


@dataclass
class Atlas2D:
    coordinates: np.ndarray  # N x 2
    labels: np.ndarray
    ids: list
    stress: float
    stress_log: list
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))


@dataclass
class SeparationReport:
    class_pair: tuple
    accuracy: float
    per_class_recall: dict
    forest_size: int
    split_seed: int
    paper_reference: float | None = None

    def to_json(self):
        return json.dumps({
            "class_pair": list(self.class_pair),
            "accuracy": self.accuracy,
            "per_class_recall": self.per_class_recall,
            "forest_size": self.forest_size,
            "split_seed": self.split_seed,
            "paper_reference": self.paper_reference,
        }, sort_keys=True, indent=2)


def embed_dataset(aae, dataset):
    """Encode every dataset item into the latent space."""
    vectors = encode(aae, dataset.images())
    return EmbeddingSet(vectors=vectors, labels=dataset.labels(),
                        ids=[it.instance_id for it in dataset.items],
                        class_names=dataset.class_names)


def pairwise_distances(embedding):
    """Symmetric N x N Euclidean distance matrix."""
    x = embedding.vectors if isinstance(embedding, EmbeddingSet) else np.asarray(embedding)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if len(x) < 2:
        raise ValueError("need at least two vectors")
    sq = (x ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    d = np.sqrt(np.maximum(d2, 0.0))
    return 0.5 * (d + d.T)  # exact symmetry


def _torgerson(d, dims):
    n = len(d)
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d ** 2) @ j
    evals, evecs = np.linalg.eigh(b)
    idx = np.argsort(evals)[::-1][:dims]
    lam = np.maximum(evals[idx], 0.0)
    return evecs[:, idx] * np.sqrt(lam)[None, :]


def _stress(d_target, x):
    d = pairwise_distances(x)
    iu = np.triu_indices(len(x), k=1)
    return float(((d_target[iu] - d[iu]) ** 2).sum())


def mds_project(d, dims=2, max_iter=300, rel_tol=1e-6):
    """SMACOF stress majorization from a classical-MDS (Torgerson) start.

    The stress sequence is non-increasing by the majorization guarantee; each
    iteration asserts it.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValueError("distance matrix must be symmetric")
    if not np.allclose(np.diag(d), 0.0, atol=1e-12):
        raise ValueError("distance matrix must have a zero diagonal")
    n = len(d)

    x = _torgerson(d, dims)
    stress = _stress(d, x)
    log = [stress]
    if stress > 0.0:
        for _ in range(max_iter):
            dist = pairwise_distances(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dist > 0, d / np.where(dist > 0, dist, 1.0), 0.0)
            b = -ratio
            np.fill_diagonal(b, 0.0)
            np.fill_diagonal(b, -b.sum(axis=1))
            x_new = (b @ x) / n
            new_stress = _stress(d, x_new)
            assert new_stress <= stress + 1e-9, "SMACOF stress increased"
            x = x_new
            improved = (stress - new_stress) / max(stress, 1e-300)
            stress = new_stress
            log.append(stress)
            if improved < rel_tol:
                break
    x = x - x.mean(axis=0, keepdims=True)
    return x, stress, log


def project_embedding(embedding, dims=2, max_iter=300, rel_tol=1e-6):
    d = pairwise_distances(embedding)
    coords, stress, log = mds_project(d, dims=dims, max_iter=max_iter, rel_tol=rel_tol)
    return Atlas2D(coordinates=coords, labels=embedding.labels, ids=list(embedding.ids),
                   stress=stress, stress_log=log, class_names=embedding.class_names)


def rf_train(coords, labels, n_trees=500, seed=0):
    """Bootstrap CART forest with sqrt-feature subsets and majority vote."""
    forest = RandomForest(n_trees=n_trees, seed=seed)
    forest.fit(coords, labels)
    return forest


def _stratified_indices(labels, train_fraction, rng):
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        order = rng.permutation(len(idx))
        n_train = min(max(int(round(len(idx) * train_fraction)), 1), len(idx) - 1)
        train_idx.extend(idx[order[:n_train]])
        test_idx.extend(idx[order[n_train:]])
    return np.array(sorted(train_idx)), np.array(sorted(test_idx))


def pairwise_separation(embedding, class_a, class_b, n_trees=500, seed=0,
                        train_fraction=0.8):
    """Two-class MDS + random-forest held-out separation accuracy."""
    names = embedding.class_names
    if class_a not in names or class_b not in names:
        raise ValueError(f"unknown class pair ({class_a}, {class_b})")
    la, lb = names.index(class_a), names.index(class_b)
    mask = (embedding.labels == la) | (embedding.labels == lb)
    for cls, lab in ((class_a, la), (class_b, lb)):
        if int((embedding.labels == lab).sum()) < 10:
            raise ValueError(f"class {cls} has fewer than 10 items")
    sub = EmbeddingSet(
        vectors=embedding.vectors[mask],
        labels=(embedding.labels[mask] == lb).astype(np.int64),  # 0 = class_a
        ids=[i for i, m in zip(embedding.ids, mask) if m],
        class_names=[class_a, class_b],
    )
    atlas = project_embedding(sub)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _stratified_indices(sub.labels, train_fraction, rng)
    forest = rf_train(atlas.coordinates[train_idx], sub.labels[train_idx],
                      n_trees=n_trees, seed=seed)
    preds = forest.predict(atlas.coordinates[test_idx])
    truth = sub.labels[test_idx]
    recalls = {
        class_a: float(np.mean(preds[truth == 0] == 0)),
        class_b: float(np.mean(preds[truth == 1] == 1)),
    }
    return SeparationReport(
        class_pair=(class_a, class_b),
        accuracy=float(np.mean(preds == truth)),
        per_class_recall=recalls,
        forest_size=n_trees,
        split_seed=seed,
        paper_reference=PAPER_REFERENCE_ACCURACY.get((class_a, class_b)),
    )


def radial_profile(atlas):
    """Mean distance from the global centroid, per class."""
    center = atlas.coordinates.mean(axis=0)
    out = {}
    for cls in np.unique(atlas.labels):
        pts = atlas.coordinates[atlas.labels == cls]
        out[atlas.class_names[cls]] = float(np.linalg.norm(pts - center, axis=1).mean())
    return out


def export_scatter(atlas, out_dir, stem="atlas"):
    """Write <stem>.csv (id, x, y, label) and a class-colored <stem>.svg."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "label"])
        for iid, (x, y), lab in zip(atlas.ids, atlas.coordinates, atlas.labels):
            writer.writerow([iid, repr(float(x)), repr(float(y)), int(lab)])

    pad = 0.05 * (np.ptp(atlas.coordinates, axis=0).max() or 1.0)
    lo = atlas.coordinates.min(axis=0) - pad
    hi = atlas.coordinates.max(axis=0) + pad
    size = 640

    def to_px(pt):
        span = np.maximum(hi - lo, 1e-12)
        u = (pt - lo) / span
        return u[0] * size, (1.0 - u[1]) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 140}" height="{size}" '
        f'viewBox="0 0 {size + 140} {size}">',
        f'<rect width="{size}" height="{size}" fill="#ffffff" stroke="#cccccc"/>',
    ]
    for iid, pt, lab in zip(atlas.ids, atlas.coordinates, atlas.labels):
        px, py = to_px(pt)
        color = _SCATTER_COLORS[int(lab) % len(_SCATTER_COLORS)]
        parts.append(
            f'<circle class="point" cx="{px:.2f}" cy="{py:.2f}" r="4" '
            f'fill="{color}" fill-opacity="0.8"><title>{iid}</title></circle>'
        )
    present = sorted(set(int(v) for v in atlas.labels))
    for row, lab in enumerate(present):
        y = 20 + row * 22
        color = _SCATTER_COLORS[lab % len(_SCATTER_COLORS)]
        parts.append(f'<circle cx="{size + 18}" cy="{y}" r="5" fill="{color}"/>')
        parts.append(
            f'<text x="{size + 32}" y="{y + 4}" font-family="sans-serif" '
            f'font-size="13">{atlas.class_names[lab]}</text>'
        )
    parts.append("</svg>")
    svg_path = os.path.join(out_dir, f"{stem}.svg")
    with open(svg_path, "w") as fh:
        fh.write("\n".join(parts))
    return csv_path, svg_path
