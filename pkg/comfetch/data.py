# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Datasets for comfetch: loading, splitting, and partitioning to clients."""

import csv
import gzip
import math
import os.path
import struct

import numpy as np

from comfetch.exceptions import DataError
from comfetch.numerics import rng_for


IID = "iid"
LABEL_SHARD = "label-shard"
SINGLE_POINT = "single-point"
STRATEGIES = (IID, LABEL_SHARD, SINGLE_POINT)

SYNTHETIC_PREFIX = "teacher-fc"

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
IDX_UBYTE = 0x08


class ClientDataset:
    """A collection of examples: a features array and a labels array.

    Features are (N, features).  Labels are (N,), real-valued targets or
    integer classes.  `tag` describes where the examples came from.

    """

    def __init__(self, features, labels, tag=""):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        if len(features) == 0:
            raise DataError(f"Dataset {tag!r} has no examples")
        if features.ndim != 2:
            raise DataError(f"Dataset features must be (examples, features), got {features.shape}")
        if len(labels) != len(features):
            raise DataError(
                f"Dataset {tag!r} has {len(features)} examples but {len(labels)} labels"
            )
        self.features = features
        self.labels = labels
        self.tag = tag

    def __repr__(self):
        return f"<ClientDataset {self.tag!r} n={len(self)} features={self.features.shape[1]}>"

    def __len__(self):
        return len(self.features)

    @property
    def is_classification(self):
        return np.issubdtype(self.labels.dtype, np.integer)

    @property
    def classes(self):
        """The number of classes, or None for real-valued targets."""
        if not self.is_classification:
            return None
        return int(self.labels.max()) + 1

    def label_groups(self):
        """The distinct labels present."""
        return np.unique(self.labels)

    @classmethod
    def combine(cls, datasets, tag="all"):
        """One dataset holding every example of `datasets`, in order."""
        datasets = list(datasets)
        if not datasets:
            raise DataError("No datasets to combine")
        return cls(
            np.concatenate([ds.features for ds in datasets]),
            np.concatenate([ds.labels for ds in datasets]),
            tag,
        )

    def subset(self, indices, tag=None):
        indices = np.asarray(indices, dtype=np.intp)
        return ClientDataset(
            self.features[indices], self.labels[indices], self.tag if tag is None else tag,
        )


def parse_synthetic(source):
    """Parse "teacher-fc,d=32,n=2000,seed=1" into a dict of integers and floats."""
    parts = [p.strip() for p in source.split(",")]
    if parts[0] != SYNTHETIC_PREFIX:
        raise DataError(f"Unknown synthetic source {parts[0]!r}")
    params = {"seed": 0, "classes": 1, "noise": 0.0}
    for part in parts[1:]:
        name, eq, value = part.partition("=")
        if not eq:
            raise DataError(f"Couldn't parse synthetic parameter {part!r} in {source!r}")
        try:
            params[name] = float(value) if name == "noise" else int(value)
        except ValueError:
            raise DataError(f"Synthetic parameter {name} must be a number, got {value!r}")
    for required in ("d", "n"):
        if required not in params:
            raise DataError(f"Synthetic source {source!r} needs {required}=")
    known = {"d", "n", "seed", "hidden", "classes", "noise"}
    unknown = set(params) - known
    if unknown:
        raise DataError(f"Unknown synthetic parameter(s) {sorted(unknown)} in {source!r}")
    if params["d"] < 1 or params["n"] < 1 or params["classes"] < 1:
        raise DataError(f"Synthetic sizes must be positive in {source!r}")
    params.setdefault("hidden", params["d"])
    return params


def synthetic_teacher_fc(d, n, seed=0, hidden=None, classes=1, noise=0.0):
    """Examples labeled by a hidden random one-layer ReLU network.

    Features are standard Gaussian.  With one class the labels are the
    network's real output plus Gaussian noise; with more, the label is the
    argmax output.

    """
    hidden = hidden or d
    rng = rng_for(seed, 0)
    features = rng.standard_normal((n, d))
    w = rng.standard_normal((hidden, d)) * math.sqrt(2.0 / d)
    a = rng.standard_normal((classes, hidden)) * math.sqrt(1.0 / hidden)
    out = np.maximum(features @ w.T, 0.0) @ a.T
    if noise:
        out = out + noise * rng.standard_normal(out.shape)
    if classes == 1:
        labels = out[:, 0]
    else:
        labels = np.argmax(out, axis=1).astype(np.int64)
    return ClientDataset(features, labels, f"{SYNTHETIC_PREFIX}(d={d},n={n},seed={seed})")


def _open(path, mode="rb"):
    if path.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_idx(path, expected_magic):
    with _open(path) as f:
        data = f.read()
    if len(data) < 4:
        raise DataError(f"{path} is too short to be an IDX file")
    (magic,) = struct.unpack_from(">I", data)
    if magic >> 16 or (magic >> 8) & 0xFF != IDX_UBYTE:
        raise DataError(f"{path} isn't an unsigned-byte IDX file (magic {magic:#010x})")
    if magic != expected_magic:
        raise DataError(f"{path} has magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    dims = struct.unpack_from(">" + "I" * ndim, data, 4)
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - offset < count:
        raise DataError(f"{path} is truncated: {len(data) - offset} bytes for {count} values")
    values = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    return values.reshape(dims)


def load_idx(images_path, labels_path, limit=None):
    """Read an IDX image/label pair.  Pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES)
    labels = _read_idx(labels_path, IDX_LABELS)
    if len(images) != len(labels):
        raise DataError(
            f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return ClientDataset(features, labels.astype(np.int64), os.path.basename(images_path))


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, limit=None, classes=None):
    """Read numeric features with the label in the last column.

    An optional first row of column names is skipped.  Features are
    standardized per column.

    `classes` says whether the labels are classes.  True requires
    non-negative integer labels, False keeps them as real targets, and None
    treats them as classes if they are all non-negative integers.

    """
    rows = []
    width = None
    with _open(path, "rt") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not all(_is_number(cell) for cell in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataError(f"{path}:{lineno}: need at least one feature and a label")
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in {row!r}")
            if limit is not None and len(rows) >= limit:
                break
    if not rows:
        raise DataError(f"{path} has no data rows")
    table = np.array(rows)
    features, labels = table[:, :-1], table[:, -1]
    if not np.all(np.isfinite(table)):
        raise DataError(f"{path} has non-finite values")
    std = features.std(axis=0)
    std[std == 0] = 1.0
    features = (features - features.mean(axis=0)) / std
    integral = bool(np.all(labels == np.round(labels)) and labels.min() >= 0)
    if classes is None:
        classes = integral
    if classes:
        if not integral:
            raise DataError(f"{path} has labels that aren't class numbers")
        labels = labels.astype(np.int64)
    return ClientDataset(features, labels, os.path.basename(path))


def load_dataset(source, labels=None, limit=None, classes=None):
    """Load a dataset from a synthetic description, a CSV file, or IDX files.

    `labels` names the IDX label file that goes with an IDX image file.
    `classes` is passed to `load_csv`.

    """
    if source.startswith(SYNTHETIC_PREFIX):
        params = parse_synthetic(source)
        if limit is not None:
            params["n"] = min(params["n"], limit)
        return synthetic_teacher_fc(**params)
    if not os.path.exists(source):
        raise DataError(f"Couldn't find data file {source!r}")
    if source.endswith((".csv", ".csv.gz")):
        return load_csv(source, limit=limit, classes=classes)
    if labels is None:
        raise DataError(f"IDX image file {source!r} needs a [data] labels= file")
    return load_idx(source, labels, limit=limit)


def train_test_split(data, fraction, seed):
    """Split off a seeded `fraction` of `data` for testing.

    Returns (train, test).  `test` is None when `fraction` is zero.

    """
    if not 0 <= fraction < 1:
        raise DataError(f"Test fraction must be in [0, 1), got {fraction}")
    n_test = int(round(fraction * len(data)))
    if n_test == 0:
        return data, None
    if n_test >= len(data):
        raise DataError(f"Test fraction {fraction} leaves no training examples")
    perm = rng_for(seed, 3).permutation(len(data))
    return (
        data.subset(np.sort(perm[n_test:]), f"{data.tag}[train]"),
        data.subset(np.sort(perm[:n_test]), f"{data.tag}[test]"),
    )


def _shard_allocation(counts, shards):
    """Share `shards` among label groups of the given sizes, at least one each."""
    groups = len(counts)
    extra = shards - groups
    total = counts.sum()
    alloc = np.ones(groups, dtype=np.int64)
    ideal = extra * counts / total
    alloc += np.floor(ideal).astype(np.int64)
    leftover = shards - alloc.sum()
    order = np.argsort(-(ideal - np.floor(ideal)), kind="stable")
    alloc[order[:leftover]] += 1
    return alloc


def partition(data, clients, strategy, seed):
    """Divide `data` among `clients` clients.  Returns a list of datasets.

    "iid" deals a random permutation evenly.  "label-shard" cuts each label
    group into pieces and gives every client two pieces, so each client
    sees at most two labels.  "single-point" gives each client exactly one
    example, and needs exactly as many examples as clients.

    """
    if clients < 1:
        raise DataError(f"Need at least one client, got {clients}")
    n = len(data)
    rng = rng_for(seed, 4)
    if strategy == IID:
        if n < clients:
            raise DataError(f"iid partition needs at least {clients} examples, have {n}")
        parts = np.array_split(rng.permutation(n), clients)
    elif strategy == SINGLE_POINT:
        if n != clients:
            short = "short by" if n < clients else "over by"
            raise DataError(
                f"single-point partition needs exactly {clients} examples, "
                f"have {n} ({short} {abs(clients - n)})"
            )
        parts = np.array_split(rng.permutation(n), clients)
    elif strategy == LABEL_SHARD:
        groups, inverse, counts = np.unique(data.labels, return_inverse=True, return_counts=True)
        shards = 2 * clients
        if shards < len(groups):
            raise DataError(
                f"label-shard partition of {len(groups)} labels needs at least "
                f"{(len(groups) + 1) // 2} clients, have {clients}"
            )
        alloc = _shard_allocation(counts, shards)
        short = [(g, a, c) for g, a, c in zip(groups, alloc, counts) if c < a]
        if short:
            g, a, c = short[0]
            raise DataError(
                f"label-shard partition needs {a} examples of label {g}, have {c} "
                f"(short by {a - c})"
            )
        pieces = []
        for gi, a in enumerate(alloc):
            members = rng.permutation(np.flatnonzero(inverse == gi))
            pieces.extend(np.array_split(members, a))
        order = rng.permutation(len(pieces))
        parts = [
            np.concatenate([pieces[order[2 * i]], pieces[order[2 * i + 1]]])
            for i in range(clients)
        ]
    else:
        raise DataError(f"Unknown partition strategy {strategy!r}, expected one of {STRATEGIES}")
    return [
        data.subset(np.sort(part), f"{data.tag}[{strategy} {i}/{clients}]")
        for i, part in enumerate(parts)
    ]
