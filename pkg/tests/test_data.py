# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Tests of comfetch/data.py"""

import numpy as np
import pytest

from comfetch.data import (
    ClientDataset, load_csv, load_dataset, load_idx, parse_synthetic, partition,
    synthetic_teacher_fc, train_test_split,
)
from comfetch.exceptions import DataError

from tests.comfetchtest import ComfetchTest
from tests.helpers import make_idx_pair


class SyntheticTest(ComfetchTest):
    """Tests of the synthetic teacher-network data."""

    run_in_temp_dir = False

    def test_parse(self):
        params = parse_synthetic("teacher-fc,d=32,n=2000,seed=1")
        assert params == {"d": 32, "n": 2000, "seed": 1, "classes": 1, "noise": 0.0, "hidden": 32}

    @pytest.mark.parametrize("source, msg", [
        ("teacher-conv,d=3,n=4", "Unknown synthetic source"),
        ("teacher-fc,d=3", "needs n="),
        ("teacher-fc,d=3,n=4,color=2", "Unknown synthetic parameter"),
        ("teacher-fc,d=x,n=4", "must be a number"),
        ("teacher-fc,d3,n=4", "Couldn't parse"),
        ("teacher-fc,d=0,n=4", "must be positive"),
    ])
    def test_parse_errors(self, source, msg):
        with pytest.raises(DataError, match=msg):
            parse_synthetic(source)

    def test_load_synthetic(self):
        data = load_dataset("teacher-fc,d=32,n=2000,seed=1")
        assert data.features.shape == (2000, 32)
        assert data.labels.shape == (2000,)
        assert not data.is_classification
        again = load_dataset("teacher-fc,d=32,n=2000,seed=1")
        assert np.array_equal(data.features, again.features)
        assert np.array_equal(data.labels, again.labels)

    def test_limit(self):
        assert len(load_dataset("teacher-fc,d=4,n=100", limit=30)) == 30

    def test_classes(self):
        data = synthetic_teacher_fc(8, 300, seed=2, classes=4)
        assert data.is_classification
        assert data.classes <= 4
        assert set(data.label_groups()) <= {0, 1, 2, 3}


class CsvTest(ComfetchTest):
    """Tests of reading CSV data."""

    def test_header_and_standardization(self):
        self.make_file("data.csv", """\
            a,b,label
            1,10,0
            2,10,1
            3,10,1
            """)
        data = load_csv("data.csv")
        assert data.features.shape == (3, 2)
        assert np.allclose(data.features[:, 0], [-1.224744871, 0.0, 1.224744871])
        # A constant column stays finite.
        assert np.array_equal(data.features[:, 1], [0.0, 0.0, 0.0])
        assert data.is_classification
        assert data.labels.tolist() == [0, 1, 1]

    def test_real_labels(self):
        self.make_file("data.csv", "1,0.5\n2,1.5\n")
        data = load_csv("data.csv")
        assert not data.is_classification

    def test_integer_targets_for_regression(self):
        # Whole-number targets stay real values when the loss is squared.
        self.make_file("data.csv", "1,3\n2,0\n3,7\n")
        data = load_csv("data.csv", classes=False)
        assert not data.is_classification
        assert data.labels.tolist() == [3.0, 0.0, 7.0]
        assert load_csv("data.csv").is_classification

    def test_classes_required(self):
        self.make_file("data.csv", "1,0.5\n2,1.5\n")
        with pytest.raises(DataError, match="labels that aren't class numbers"):
            load_csv("data.csv", classes=True)
        self.make_file("neg.csv", "1,-1\n2,1\n")
        with pytest.raises(DataError, match="labels that aren't class numbers"):
            load_dataset("neg.csv", classes=True)

    def test_empty(self):
        self.make_file("empty.csv", "")
        with pytest.raises(DataError, match="no data rows"):
            load_csv("empty.csv")

    def test_malformed_row_names_the_line(self):
        self.make_file("bad.csv", "1,2,0\n3,x,1\n")
        with pytest.raises(DataError, match=r"bad.csv:2: non-numeric"):
            load_csv("bad.csv")

    def test_ragged_row(self):
        self.make_file("bad.csv", "1,2,0\n3,1\n")
        with pytest.raises(DataError, match=r"bad.csv:2: expected 3 columns, got 2"):
            load_csv("bad.csv")

    def test_limit(self):
        self.make_file("data.csv", "".join(f"{i},{i % 2}\n" for i in range(10)))
        assert len(load_csv("data.csv", limit=4)) == 4

    def test_missing_file(self):
        with pytest.raises(DataError, match="Couldn't find"):
            load_dataset("nope.csv")


class IdxTest(ComfetchTest):
    """Tests of reading IDX image files."""

    def make_digits(self, n=100, gz=False):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(n, 28, 28))
        labels = rng.integers(0, 10, size=n)
        suffix = ".gz" if gz else ""
        make_idx_pair(f"images{suffix}", f"labels{suffix}", images, labels, gz=gz)
        return images, labels

    def test_shapes_and_scaling(self):
        images, labels = self.make_digits()
        data = load_dataset("images", labels="labels")
        assert data.features.shape == (100, 784)
        assert data.features.max() <= 1.0
        assert np.allclose(data.features[3], images[3].ravel() / 255.0)
        assert data.labels.tolist() == labels.tolist()
        assert data.is_classification

    def test_gzipped(self):
        self.make_digits(n=10, gz=True)
        assert len(load_idx("images.gz", "labels.gz")) == 10

    def test_limit(self):
        self.make_digits(n=50)
        assert len(load_idx("images", "labels", limit=20)) == 20

    def test_needs_labels(self):
        self.make_digits(n=5)
        with pytest.raises(DataError, match="needs a"):
            load_dataset("images")

    def test_swapped_files(self):
        self.make_digits(n=5)
        with pytest.raises(DataError, match="expected 0x00000803"):
            load_idx("labels", "images")

    def test_truncated(self):
        images, labels = self.make_digits(n=5)
        with open("images", "rb") as f:
            data = f.read()
        self.make_file("images", bytes=data[:-10])
        with pytest.raises(DataError, match="truncated"):
            load_idx("images", "labels")

    def test_count_mismatch(self):
        rng = np.random.default_rng(1)
        make_idx_pair("images", "labels", rng.integers(0, 256, (4, 2, 2)), [1, 2, 3])
        with pytest.raises(DataError, match="4 images but"):
            load_idx("images", "labels")


class SplitTest(ComfetchTest):
    """Tests of train/test splitting."""

    run_in_temp_dir = False

    def test_split(self):
        data = synthetic_teacher_fc(4, 100, seed=3)
        train, test = train_test_split(data, 0.2, seed=3)
        assert len(train) == 80 and len(test) == 20
        both = np.concatenate([train.features, test.features])
        assert sorted(map(tuple, both)) == sorted(map(tuple, data.features))

    def test_no_test_split(self):
        data = synthetic_teacher_fc(4, 10)
        train, test = train_test_split(data, 0.0, seed=0)
        assert train is data
        assert test is None

    def test_bad_fraction(self):
        with pytest.raises(DataError, match=r"\[0, 1\)"):
            train_test_split(synthetic_teacher_fc(4, 10), 1.0, seed=0)


def labeled(counts):
    """A dataset with `counts[i]` examples of label i."""
    labels = np.concatenate([np.full(n, i) for i, n in enumerate(counts)]).astype(np.int64)
    features = np.arange(len(labels), dtype=float)[:, None]
    return ClientDataset(features, labels, "labeled")


class PartitionTest(ComfetchTest):
    """Tests of dividing data among clients."""

    run_in_temp_dir = False

    def test_iid_covers_everything_once(self):
        data = synthetic_teacher_fc(3, 103, seed=4)
        parts = partition(data, 10, "iid", seed=4)
        assert len(parts) == 10
        assert sorted(len(p) for p in parts) == [10] * 7 + [11] * 3
        rows = sorted(tuple(r) for p in parts for r in p.features)
        assert rows == sorted(tuple(r) for r in data.features)

    def test_deterministic(self):
        data = synthetic_teacher_fc(3, 50, seed=5)
        a = partition(data, 5, "iid", seed=1)
        b = partition(data, 5, "iid", seed=1)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_label_shard_at_most_two_labels(self):
        data = labeled([30, 25, 40, 5, 20, 30, 10, 15, 25, 20])
        parts = partition(data, 10, "label-shard", seed=6)
        assert len(parts) == 10
        assert all(len(np.unique(p.labels)) <= 2 for p in parts)
        assert sum(len(p) for p in parts) == len(data)

    def test_label_shard_too_few_clients(self):
        with pytest.raises(DataError, match="needs at least 3 clients"):
            partition(labeled([5] * 5), 2, "label-shard", seed=0)

    def test_label_shard_short_label(self):
        # Four shards from two single examples.
        with pytest.raises(DataError, match=r"2 examples of label 0, have 1 \(short by 1\)"):
            partition(labeled([1, 1]), 2, "label-shard", seed=0)

    def test_single_point(self):
        data = synthetic_teacher_fc(3, 6, seed=7)
        parts = partition(data, 6, "single-point", seed=7)
        assert [len(p) for p in parts] == [1] * 6

    @pytest.mark.parametrize("n, msg", [(5, "short by 1"), (7, "over by 1")])
    def test_single_point_wrong_size(self, n, msg):
        with pytest.raises(DataError, match=msg):
            partition(synthetic_teacher_fc(3, n), 6, "single-point", seed=0)

    def test_unknown_strategy(self):
        with pytest.raises(DataError, match="Unknown partition"):
            partition(synthetic_teacher_fc(3, 10), 2, "dirichlet", seed=0)

    def test_too_few_examples(self):
        with pytest.raises(DataError, match="at least 10 examples"):
            partition(synthetic_teacher_fc(3, 5), 10, "iid", seed=0)
