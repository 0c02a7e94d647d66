"""Dataset files, PCA reduction, synthetic data generation, and stats.

Two on-disk formats: a strict user<TAB>item interaction text file, and
the self-describing "PMMF" binary matrix container (magic, u32-LE rows
and cols, then row-major f32-LE payload).
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import InteractionGraph, build_graph
from .numerics import component_rng

PMMF_MAGIC = b"PMMF"


def load_interactions(path) -> list[tuple[int, int]]:
    """Parse one integer pair per line, tab-separated; '#' lines are comments."""
    pairs: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(
                    f"{path}: line {lineno}: expected 'user<TAB>item', got {line!r}")
            try:
                pairs.append((int(fields[0]), int(fields[1])))
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: non-integer field in {line!r}") from None
    return pairs


def save_interactions(path, pairs: Sequence[tuple[int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


def save_features(path, matrix: np.ndarray) -> None:
    """Write a matrix into the PMMF container (f32 payload)."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"PMMF stores 2-D matrices, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("refusing to write non-finite values")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(PMMF_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def load_features(path) -> np.ndarray:
    """Read a PMMF matrix; exact round-trip with save_features."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PMMF_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {PMMF_MAGIC!r}")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * rows * cols
    if len(blob) != expected:
        raise ValueError(
            f"{path}: payload size mismatch: header says {rows}x{cols} "
            f"({expected} bytes total), file has {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values in payload")
    return data.astype(np.float64)


@dataclass
class PcaReducer:
    """Linear reduce/lift pair around the top-d principal components."""

    name: str
    mean: np.ndarray               # (d_m,)
    components: np.ndarray         # (d_m, d), orthonormal columns
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def output_dim(self) -> int:
        return self.components.shape[1]

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def lift(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) @ self.components.T + self.mean


def fit_pca(features: np.ndarray, d: int, name: str = "pca") -> PcaReducer:
    """Top-d principal components of the sample covariance via SVD.

    Component signs are fixed (largest-magnitude entry positive). When
    the data has rank below d, trailing components are zero-padded with
    a warning.
    """
    x = np.asarray(features, dtype=np.float64)
    n, dm = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    if d > min(n, dm):
        raise ValueError(f"cannot extract {d} components from {n}x{dm} data")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    variance = s * s / (n - 1)
    rank = int(np.sum(s > s[0] * 1e-12)) if s[0] > 0 else 0
    comps = vt[:d].T.copy()
    var = variance[:d].copy()
    if rank < d:
        warnings.warn(
            f"PCA '{name}': data rank {rank} < {d} requested components; "
            "zero-padding the remainder")
        comps[:, rank:] = 0.0
        var[rank:] = 0.0
    for j in range(min(rank, d)):
        lead = np.argmax(np.abs(comps[:, j]))
        if comps[lead, j] < 0:
            comps[:, j] = -comps[:, j]
    return PcaReducer(name, mean, comps, var)


@dataclass
class ModalityFeatureSet:
    """Per-modality item feature matrices, all with n_items rows."""

    features: dict[str, np.ndarray]

    def __post_init__(self):
        rows = {m.shape[0] for m in self.features.values()}
        if len(rows) > 1:
            raise ValueError(f"modalities disagree on item count: {rows}")
        for name, m in self.features.items():
            if not np.all(np.isfinite(m)):
                raise ValueError(f"modality '{name}' contains non-finite values")

    @property
    def names(self) -> list[str]:
        return list(self.features)

    @property
    def n_items(self) -> int:
        return next(iter(self.features.values())).shape[0]

    def dims(self) -> dict[str, int]:
        return {name: m.shape[1] for name, m in self.features.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.features[name]


@dataclass
class DatasetBundle:
    """Train graph plus held-out edges and the modality features."""

    train: InteractionGraph
    val_edges: list[tuple[int, int]]
    test_edges: list[tuple[int, int]]
    features: ModalityFeatureSet
    item_latents: np.ndarray | None = None  # generator diagnostic, not used in training

    def __post_init__(self):
        train_set = self.train.edge_set
        val_set = set(self.val_edges)
        test_set = set(self.test_edges)
        if train_set & val_set or train_set & test_set or val_set & test_set:
            raise ValueError("train/val/test edge sets must be pairwise disjoint")
        if self.features.n_items != self.train.n_items:
            raise ValueError("feature rows must cover every item")

    @property
    def n_interactions(self) -> int:
        return self.train.n_edges + len(self.val_edges) + len(self.test_edges)


def interaction_sparsity(n_users: int, n_items: int, n_edges: int) -> float:
    return 1.0 - n_edges / (n_users * n_items)


@dataclass
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float
    modality_dims: dict[str, int] = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [
            f"users:        {self.n_users}",
            f"items:        {self.n_items}",
            f"interactions: {self.n_interactions}",
            f"sparsity:     {self.sparsity * 100:.3f}%",
        ]
        for name, dim in self.modality_dims.items():
            lines.append(f"modality {name}: dim {dim}")
        return "\n".join(lines)

    def as_json(self) -> str:
        return json.dumps({
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "sparsity": self.sparsity,
            "modality_dims": self.modality_dims,
        }, sort_keys=True)


def dataset_stats(bundle: DatasetBundle) -> DatasetStats:
    g = bundle.train
    total = bundle.n_interactions
    return DatasetStats(
        n_users=g.n_users,
        n_items=g.n_items,
        n_interactions=total,
        sparsity=interaction_sparsity(g.n_users, g.n_items, total),
        modality_dims=bundle.features.dims(),
    )


def _split_counts(n: int) -> tuple[int, int]:
    """(test, val) sizes per user: ~10%/5% rounded, >=1 test when n >= 3."""
    n_test = int(n * 0.10 + 0.5)
    n_val = int(n * 0.05 + 0.5)
    if n >= 3:
        n_test = max(1, n_test)
    while n - n_test - n_val < 1 and (n_test > 0 or n_val > 0):
        if n_val > 0:
            n_val -= 1
        else:
            n_test -= 1
    return n_test, n_val


def gen_synthetic(n_users: int, n_items: int, latent_dim: int,
                  modalities: Sequence[int] | Mapping[str, int],
                  interactions_per_user: int, noise_std: float,
                  seed: int = 0) -> DatasetBundle:
    """Plant a low-rank preference structure and matching modality features.

    User/item latents are standard normal; each user observes the top
    scoring items of z_u . z_i + noise. Item features are the latents
    pushed through a random column-orthonormal map per modality, plus
    noise, so a linear probe can recover the planted signal.
    """
    if n_users < 1 or n_items < 2 or latent_dim < 1:
        raise ValueError("degenerate dataset sizes")
    if not (0 < interactions_per_user < n_items):
        raise ValueError("interactions_per_user must be in (0, n_items)")
    if isinstance(modalities, Mapping):
        modality_dims = dict(modalities)
    else:
        modality_dims = {f"m{i}": int(d) for i, d in enumerate(modalities)}
    for name, dm in modality_dims.items():
        if dm < latent_dim:
            raise ValueError(f"modality '{name}' dim {dm} below latent dim {latent_dim}")

    lat_rng = component_rng(seed, "synthetic-latents")
    feat_rng = component_rng(seed, "synthetic-features")
    split_rng = component_rng(seed, "synthetic-split")

    zu = lat_rng.standard_normal((n_users, latent_dim))
    zi = lat_rng.standard_normal((n_items, latent_dim))
    scores = zu @ zi.T + noise_std * lat_rng.standard_normal((n_users, n_items))

    feats: dict[str, np.ndarray] = {}
    for name, dm in modality_dims.items():
        q, _ = np.linalg.qr(feat_rng.standard_normal((dm, latent_dim)))
        feats[name] = zi @ q.T + noise_std * feat_rng.standard_normal((n_items, dm))

    train_pairs: list[tuple[int, int]] = []
    val_pairs: list[tuple[int, int]] = []
    test_pairs: list[tuple[int, int]] = []
    k = interactions_per_user
    for u in range(n_users):
        top = np.argpartition(-scores[u], k - 1)[:k]
        top = top[np.argsort(-scores[u][top], kind="stable")]
        order = split_rng.permutation(k)
        items = top[order]
        n_test, n_val = _split_counts(k)
        test_pairs.extend((u, int(i)) for i in items[:n_test])
        val_pairs.extend((u, int(i)) for i in items[n_test:n_test + n_val])
        train_pairs.extend((u, int(i)) for i in items[n_test + n_val:])

    train = build_graph(train_pairs, n_users=n_users, n_items=n_items)
    return DatasetBundle(
        train=train,
        val_edges=sorted(val_pairs),
        test_edges=sorted(test_pairs),
        features=ModalityFeatureSet(feats),
        item_latents=zi,
    )


# ---------------------------------------------------------------------------
# dataset directory layout used by the CLI

def save_dataset(out_dir, bundle: DatasetBundle, seed: int | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_interactions(out / "train.tsv", [tuple(e) for e in bundle.train.edges])
    save_interactions(out / "val.tsv", bundle.val_edges)
    save_interactions(out / "test.tsv", bundle.test_edges)
    for name, m in bundle.features.features.items():
        save_features(out / f"features_{name}.pmmf", m)
    stats = dataset_stats(bundle)
    (out / "stats.json").write_text(stats.as_json() + "\n", encoding="utf-8")
    (out / "stats.txt").write_text(stats.as_text() + "\n", encoding="utf-8")
    manifest = {
        "n_users": bundle.train.n_users,
        "n_items": bundle.train.n_items,
        "modalities": stats.modality_dims,
        "seed": seed,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_dataset(data_dir) -> DatasetBundle:
    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    n_users, n_items = manifest["n_users"], manifest["n_items"]
    train = build_graph(load_interactions(root / "train.tsv"),
                        n_users=n_users, n_items=n_items)
    feats = {name: load_features(root / f"features_{name}.pmmf")
             for name in manifest["modalities"]}
    return DatasetBundle(
        train=train,
        val_edges=load_interactions(root / "val.tsv"),
        test_edges=load_interactions(root / "test.tsv"),
        features=ModalityFeatureSet(feats),
    )
