"""Datasets: synthetic skeleton motions, JSONL and binary files, modalities."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .graph import SkeletonGraph

MAGIC = b"SGN1"
_HEADER = struct.Struct("<4sIIII")
MODALITIES = ("joint", "bone", "joint_motion", "bone_motion")


@dataclass
class Dataset:
    """x: (N, T, 3, V) float32 coordinates; y: (N,) integer labels."""
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 4 or self.x.shape[2] != 3:
            raise DataError(f"expected (N, T, 3, V) coordinates, got {self.x.shape}")
        if len(self.x) != len(self.y):
            raise DataError(f"{len(self.x)} samples but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx])

    def split(self, test_fraction=0.2, seed=0):
        """Stratified split into (train, test)."""
        rng = np.random.default_rng(seed)
        train, test = [], []
        for c in np.unique(self.y):
            idx = rng.permutation(np.flatnonzero(self.y == c))
            n_test = int(round(len(idx) * test_fraction))
            test.extend(idx[:n_test])
            train.extend(idx[n_test:])
        return self.subset(np.sort(train)), self.subset(np.sort(test))


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """Accuracy of a nearest-class-mean classifier on flattened raw coordinates."""
    classes = np.unique(train.y)
    flat_tr = train.x.reshape(len(train), -1).astype(np.float64)
    flat_te = test.x.reshape(len(test), -1).astype(np.float64)
    centroids = np.stack([flat_tr[train.y == c].mean(axis=0) for c in classes])
    d = ((flat_te[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[d.argmin(axis=1)] == test.y))


def _draw_synthetic(n_classes, n_per_class, v, t, rng, noise):
    base = rng.normal(0.0, 0.5, (3, v))
    n_active = max(1, v // 5)
    subsets = [rng.choice(v, n_active, replace=False) for _ in range(n_classes)]
    freqs = 0.5 + rng.permutation(n_classes) * (1.5 / max(n_classes, 1))
    phases = rng.uniform(0, 2 * np.pi, n_classes)
    axes = rng.normal(0.0, 1.0, (n_classes, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    time = np.arange(t) / t * 2 * np.pi
    xs, ys = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            x = np.broadcast_to(base, (t, 3, v)).copy()
            jitter = rng.normal(0.0, 0.2)
            wave = np.sin(freqs[c] * time + phases[c] + jitter)
            x[:, :, subsets[c]] += 0.8 * wave[:, None, None] * axes[c][None, :, None]
            x += rng.normal(0.0, noise, x.shape)
            xs.append(x)
            ys.append(c)
    return np.stack(xs).astype(np.float32), np.array(ys)


def generate_synthetic(n_classes=5, n_per_class=100, V=25, T=16, seed=0, noise=0.05,
                       min_oracle=0.8, attempts=10) -> Dataset:
    """Class c moves its own subset of joints along a sinusoid with its own
    frequency, phase and direction; every coordinate gets N(0, noise) jitter.

    Draws failing the nearest-centroid separability floor are redrawn from
    the next seed stream.
    """
    if min(n_classes, n_per_class, V, T) < 1:
        raise ConfigError("class count, samples per class, V and T must be positive")
    ds = None
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        ds = Dataset(*_draw_synthetic(n_classes, n_per_class, V, T, rng, noise))
        if n_classes == 1 or n_per_class < 2:
            return ds
        tr, te = ds.split(0.5, seed)
        if nearest_centroid_accuracy(tr, te) >= min_oracle:
            return ds
    return ds


def resample_frames(x, t_target: int):
    """Uniformly sample t_target frames along axis -3 (repeats when too short)."""
    t = x.shape[-3]
    if t < 1:
        raise DataError("sequence has no frames")
    idx = np.floor((np.arange(t_target) + 0.5) * t / t_target).astype(int)
    return x[..., np.minimum(idx, t - 1), :, :]


def derive_modality(joints, kind: str, graph: SkeletonGraph | None = None):
    """joint, bone (child minus parent), and their frame differences."""
    if kind not in MODALITIES:
        raise ConfigError(f"unknown modality {kind!r}; choose from {', '.join(MODALITIES)}")
    x = np.asarray(joints)
    if kind.startswith("bone"):
        if graph is None or graph.parent is None:
            raise ConfigError(f"modality {kind!r} needs a graph with a parent table")
        x = x - x[..., list(graph.parent)]
    if kind.endswith("motion"):
        m = np.zeros_like(x)
        m[..., :-1, :, :] = x[..., 1:, :, :] - x[..., :-1, :, :]
        x = m
    return x


# file formats

def write_jsonl(ds: Dataset, path):
    path = Path(path)
    try:
        with path.open("w") as fh:
            for x, y in zip(ds.x, ds.y):
                joints = np.transpose(x, (0, 2, 1)).tolist()
                fh.write(json.dumps({"label": int(y), "joints": joints}, separators=(",", ":")) + "\n")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def read_jsonl(path) -> Dataset:
    path = Path(path)
    xs, ys = [], []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            label = rec["label"]
            joints = np.asarray(rec["joints"], dtype=np.float32)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed sample ({exc})") from exc
        if not isinstance(label, int) or label < 0:
            raise DataError(f"{path}:{lineno}: label must be a non-negative integer")
        if joints.ndim != 3 or joints.shape[2] != 3:
            raise DataError(f"{path}:{lineno}: joints must be T x V x 3, got {joints.shape}")
        if xs and joints.shape != _tvc(xs[0]):
            raise DataError(f"{path}:{lineno}: shape {joints.shape} differs from earlier samples")
        xs.append(np.transpose(joints, (0, 2, 1)))
        ys.append(label)
    if not xs:
        raise DataError(f"{path}: no samples")
    return Dataset(np.stack(xs), np.array(ys))


def _tvc(x_tcv):
    return (x_tcv.shape[0], x_tcv.shape[2], x_tcv.shape[1])


def write_bin(ds: Dataset, path):
    """Concatenated records: header (magic, T, V, C, label) then float32 (t, c, v)."""
    path = Path(path)
    n, t, c, v = ds.x.shape
    try:
        with path.open("wb") as fh:
            for x, y in zip(ds.x, ds.y):
                fh.write(_HEADER.pack(MAGIC, t, v, c, int(y)))
                fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def read_bin(path) -> Dataset:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    xs, ys = [], []
    off = 0
    while off < len(buf):
        if len(buf) - off < _HEADER.size:
            raise DataError(f"{path}: truncated header at offset {off}")
        magic, t, v, c, label = _HEADER.unpack_from(buf, off)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r} at offset {off}")
        if c != 3 or t == 0 or v == 0:
            raise DataError(f"{path}: bad dimensions T={t} V={v} C={c} at offset {off}")
        if xs and (t, c, v) != xs[0].shape:
            raise DataError(f"{path}: record at offset {off} has shape {(t, c, v)}, expected {xs[0].shape}")
        off += _HEADER.size
        nbytes = 4 * t * c * v
        if len(buf) - off < nbytes:
            raise DataError(f"{path}: truncated payload at offset {off}")
        xs.append(np.frombuffer(buf, dtype="<f4", count=t * c * v, offset=off).reshape(t, c, v))
        ys.append(label)
        off += nbytes
    if not xs:
        raise DataError(f"{path}: no samples")
    return Dataset(np.stack(xs).astype(np.float32), np.array(ys))


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_jsonl(path)
    if path.suffix == ".bin":
        return read_bin(path)
    raise DataError(f"{path}: unknown dataset extension (use .jsonl or .bin)")
