import math
import warnings

import numpy as np
import pytest

from trunccox.core import (
    Schema,
    SubjectRecord,
    TruncatedDataset,
    distinct_failure_times,
    load_dataset,
    write_dataset,
)
from trunccox.errors import EmptyDataset, MissingColumn, NonNumericCell, TruncationViolation


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadDataset:
    def test_three_rows(self, tmp_path):
        ds = load_dataset(write(tmp_path, "time,left,right,z1\n1,0,5,0.1\n2,1,5,0.2\n3,2,5,0.3\n"))
        assert ds.n == 3
        assert ds.d == 3
        assert ds.tau == 3.0
        assert ds.mode == "double"

    def test_violation_reports_row(self, tmp_path):
        with pytest.raises(TruncationViolation) as exc:
            load_dataset(write(tmp_path, "time,left,right,z1\n1,0,5,0\n4,0,3,0\n"))
        assert exc.value.row == 2

    def test_right_all_inf_is_left_only(self, tmp_path):
        ds = load_dataset(write(tmp_path, "time,left,right,z1\n1,0,inf,0\n2,1,inf,1\n"))
        assert ds.mode == "left-only"

    def test_modes(self):
        t = [1.0, 2.0]
        z = [0.0, 1.0]
        assert TruncatedDataset(t, [-np.inf] * 2, [np.inf] * 2, z).mode == "none"
        assert TruncatedDataset(t, [-np.inf] * 2, [3.0, np.inf], z).mode == "right-only"
        assert TruncatedDataset(t, [0.5, -np.inf], [3.0, np.inf], z).mode == "double"

    def test_missing_column(self, tmp_path):
        with pytest.raises(MissingColumn) as exc:
            load_dataset(write(tmp_path, "time,left,z1\n1,0,0\n"))
        assert exc.value.column == "right"

    def test_non_numeric(self, tmp_path):
        with pytest.raises(NonNumericCell) as exc:
            load_dataset(write(tmp_path, "time,left,right,z1\n1,0,5,abc\n"))
        assert (exc.value.row, exc.value.column) == (1, "z1")

    def test_only_sentinels_mean_infinity(self, tmp_path):
        # "Infinity" parses as a float but is not the configured token
        with pytest.raises(NonNumericCell):
            load_dataset(write(tmp_path, "time,left,right,z1\n1,0,Infinity,0\n"))
        ds = load_dataset(write(tmp_path, "time,left,right,z1\n1,none,open,0\n"), sentinels=("none", "open"))
        assert ds.left[0] == -np.inf and ds.right[0] == np.inf

    def test_custom_schema(self, tmp_path):
        p = write(tmp_path, "age,entry,cut,x,y\n1,0,5,1,2\n2,0,5,3,4\n")
        ds = load_dataset(p, Schema("age", "entry", "cut", ["y", "x"]))
        np.testing.assert_array_equal(ds.z, [[2, 1], [4, 3]])
        assert ds.covariate_names == ("y", "x")

    def test_covariate_order_is_numeric(self, tmp_path):
        ds = load_dataset(write(tmp_path, "z10,time,left,right,z2\n5,1,0,2,7\n"))
        assert ds.covariate_names == ("z2", "z10")

    def test_skip_invalid(self, tmp_path):
        p = write(tmp_path, "time,left,right,z1\n1,0,5,0\n4,0,3,0\n2,0,5,1\n")
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            ds = load_dataset(p, skip_invalid=True)
        assert ds.n == 2
        assert [r for r, _ in ds.skipped] == [2]
        assert any("skipped" in str(w.message) for w in rec)

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_dataset(write(tmp_path, "time,left,right,z1\n"))

    def test_round_trip(self, tmp_path, rng=np.random.default_rng(3)):
        t = rng.exponential(size=20)
        left = np.where(rng.random(20) < 0.5, t - rng.random(20), -np.inf)
        right = np.where(rng.random(20) < 0.5, t + rng.random(20), np.inf)
        ds = TruncatedDataset(t, left, right, rng.normal(size=(20, 2)))
        write_dataset(ds, tmp_path / "o.csv")
        back = load_dataset(tmp_path / "o.csv")
        assert back.digest() == ds.digest()


class TestDistinctTimes:
    def test_sorted_unique(self):
        times, tau = distinct_failure_times(np.array([2.0, 1.0, 2.0]))
        np.testing.assert_array_equal(times, [1.0, 2.0])
        assert tau == 2.0

    def test_singleton(self):
        times, tau = distinct_failure_times([SubjectRecord(5.0, -math.inf, math.inf, (0.0,))])
        assert times.tolist() == [5.0] and tau == 5.0

    def test_full_tie(self):
        times, _ = distinct_failure_times(np.array([1.5, 1.5, 1.5]))
        assert times.size == 1

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            distinct_failure_times(np.array([]))


class TestTruncatedDataset:
    def test_read_only(self):
        ds = TruncatedDataset([1.0, 2.0], [0.0, 0.0], [3.0, 3.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            ds.time[0] = 5.0

    def test_index_helpers(self):
        ds = TruncatedDataset([1.0, 2.0, 3.0], [1.0, 1.5, -np.inf], [2.0, 3.0, np.inf], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(ds.event_index, [0, 1, 2])
        # left index counts t_j < L; right index counts t_j <= R
        np.testing.assert_array_equal(ds.left_index, [0, 1, 0])
        np.testing.assert_array_equal(ds.right_index, [2, 3, 3])

    def test_nonpositive_time_rejected(self):
        with pytest.raises(TruncationViolation):
            TruncatedDataset([0.0], [-np.inf], [np.inf], [0.0])

    def test_take_and_records(self):
        ds = TruncatedDataset([1.0, 2.0], [0.5, -np.inf], [np.inf, 4.0], [[0.0, 1.0], [2.0, 3.0]])
        sub = ds.take([1, 1])
        assert sub.n == 2 and sub.d == 1
        rec = ds.records[0]
        assert rec.is_observable() and rec.left_finite and not rec.right_finite
        assert TruncatedDataset.from_records(ds.records).digest() == ds.digest()
