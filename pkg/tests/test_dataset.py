"""Tests for datasets: CSV loading, scaling, filtering, one-hot encoding and splits."""

import logging
import math
from pathlib import Path

import numpy as np
import pytest

from classes import CsvOptions, SplitSpec
from dataset import (
    ColumnKind,
    DataError,
    Dataset,
    ScalingRecord,
    UnseenLevelError,
    apply_scaling,
    filter_rows,
    generate_synthetic,
    load_csv,
    load_csv_with_schema,
    one_hot,
    save_csv,
    scale_unit,
    split,
    top_levels,
    unscale,
)


def _write(tmp_path: Path, text: str, name: str = "data.csv") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# =============================================================================
# Loading
# =============================================================================


class TestLoadCsv:
    """Tests for load_csv() and load_csv_with_schema()."""

    def test_detects_kinds(self, tmp_path: Path) -> None:
        """Numeric-looking columns are numeric, the rest nominal with first-appearance levels."""
        path = _write(tmp_path, "x,c,y\n1,B,2\n2,A,3\n3.5,B,4\n")
        data = load_csv(path)
        assert data.schema.column("x").kind == ColumnKind.numeric
        assert data.schema.column("c").kind == ColumnKind.nominal
        assert data.schema.column("c").levels == ("B", "A")
        assert data.schema.target == "y"
        np.testing.assert_array_equal(data.values("x"), [1.0, 2.0, 3.5])
        np.testing.assert_array_equal(data.values("c"), [0, 1, 0])

    def test_na_cell_makes_column_nominal(self, tmp_path: Path) -> None:
        """'NA' is an ordinary level, not a missing number."""
        data = load_csv(_write(tmp_path, "k,y\n1,2\nNA,3\n"))
        assert data.schema.column("k").kind == ColumnKind.nominal
        assert data.schema.column("k").levels == ("1", "NA")

    def test_kind_override(self, tmp_path: Path) -> None:
        """A numeric column can be read as nominal."""
        path = _write(tmp_path, "x,y\n1,2\n2,3\n1,4\n")
        data = load_csv(path, CsvOptions(kinds={"x": "nominal"}))
        assert data.schema.column("x").levels == ("1", "2")

    def test_impossible_override(self, tmp_path: Path) -> None:
        """Forcing text to numeric names the column and row."""
        path = _write(tmp_path, "c,y\nA,2\nB,3\n")
        with pytest.raises(DataError, match="'c'.*row 1"):
            load_csv(path, CsvOptions(kinds={"c": "numeric"}))

    def test_override_for_unknown_column(self, tmp_path: Path) -> None:
        path = _write(tmp_path, "x,y\n1,2\n")
        with pytest.raises(DataError):
            load_csv(path, CsvOptions(kinds={"z": "nominal"}))

    def test_explicit_target(self, tmp_path: Path) -> None:
        """The target may be any numeric column."""
        data = load_csv(_write(tmp_path, "y,x\n1,2\n3,4\n"), CsvOptions(target="y"))
        assert data.schema.target == "y"
        assert [c.name for c in data.schema.inputs] == ["x"]

    def test_non_numeric_target(self, tmp_path: Path) -> None:
        with pytest.raises(DataError, match="not numeric"):
            load_csv(_write(tmp_path, "x,c\n1,A\n2,B\n"))

    def test_empty_file(self, tmp_path: Path) -> None:
        with pytest.raises(DataError):
            load_csv(_write(tmp_path, ""))

    def test_header_only(self, tmp_path: Path) -> None:
        with pytest.raises(DataError, match="no data rows"):
            load_csv(_write(tmp_path, "x,y\n"))

    def test_short_row(self, tmp_path: Path) -> None:
        with pytest.raises(DataError, match="ragged"):
            load_csv(_write(tmp_path, "x,c,y\n1,A,2\n2,B\n"))

    def test_short_row_in_trailing_numeric_column(self, tmp_path: Path) -> None:
        """A missing last field is reported with its row instead of becoming an empty level."""
        with pytest.raises(DataError, match="ragged row 2, column 'x'"):
            load_csv(_write(tmp_path, "c,y,x\nA,2,1\nB,3\n"), CsvOptions(target="y"))

    def test_empty_cell(self, tmp_path: Path) -> None:
        with pytest.raises(DataError, match="column 'c'"):
            load_csv(_write(tmp_path, "x,c,y\n1,A,2\n2,,3\n"))

    def test_long_row(self, tmp_path: Path) -> None:
        with pytest.raises(DataError):
            load_csv(_write(tmp_path, "x,y\n1,2\n2,3,4,5\n"))

    def test_semicolon_delimiter(self, tmp_path: Path) -> None:
        data = load_csv(_write(tmp_path, "x;c;y\n1;A;2\n"), CsvOptions(delimiter=";"))
        assert data.schema.names == ["x", "c", "y"]

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(DataError):
            load_csv(tmp_path / "missing.csv")

    def test_new_file_mapped_by_level_name(self, tmp_path: Path) -> None:
        """Level order of the new file doesn't matter, only the names."""
        train = load_csv(_write(tmp_path, "x,c,y\n1,A,2\n2,B,3\n", "train.csv"))
        other = load_csv_with_schema(_write(tmp_path, "x,c\n5,B\n6,A\n", "new.csv"), train.schema)
        np.testing.assert_array_equal(other.values("c"), [1, 0])
        assert other.schema.target is None

    def test_unseen_level(self, tmp_path: Path) -> None:
        """A level missing from the table is reported with its rows."""
        train = load_csv(_write(tmp_path, "x,c,y\n1,A,2\n2,B,3\n", "train.csv"))
        path = _write(tmp_path, "x,c\n5,B\n6,E\n7,E\n", "new.csv")
        with pytest.raises(UnseenLevelError) as raised:
            load_csv_with_schema(path, train.schema)
        assert raised.value.column == "c"
        assert raised.value.levels == ["E"]
        assert raised.value.rows == [1, 2]

    def test_required_target(self, tmp_path: Path) -> None:
        train = load_csv(_write(tmp_path, "x,y\n1,2\n", "train.csv"))
        with pytest.raises(DataError, match="'y'"):
            load_csv_with_schema(_write(tmp_path, "x\n5\n", "new.csv"), train.schema, require_target=True)

    def test_save_and_reload(self, tmp_path: Path) -> None:
        """Saved files read back with the same values and levels."""
        data = generate_synthetic(levels=("C", "A"))
        path = tmp_path / "synthetic.csv"
        save_csv(data, path, extra={"prediction": data.target_values * 2})
        loaded = load_csv(path, CsvOptions(target="y"))
        assert loaded.schema.column("c").levels == ("C", "A")
        np.testing.assert_array_equal(loaded.values("x"), data.values("x"))
        np.testing.assert_array_equal(loaded.values("y"), data.values("y"))
        np.testing.assert_array_equal(loaded.values("prediction"), data.target_values * 2)

    def test_noisy_values_read_back_exactly(self, tmp_path: Path) -> None:
        """Every float written by save_csv parses back to the same bits."""
        data = generate_synthetic(noise=0.01, seed=3)
        path = tmp_path / "noisy.csv"
        save_csv(data, path)
        loaded = load_csv(path)
        assert np.count_nonzero(loaded.values("y") != data.values("y")) == 0
        np.testing.assert_array_equal(loaded.values("x"), data.values("x"))


# =============================================================================
# Scaling
# =============================================================================


class TestScaling:
    """Tests for scale_unit(), unscale() and apply_scaling()."""

    @pytest.fixture
    def numbers(self, example_schema) -> Dataset:
        return Dataset(example_schema, {"x": [2.0, 4.0, 6.0], "c": [0, 1, 2], "f": [1.0, 2.0, 3.0]})

    def test_unit_interval(self, numbers: Dataset) -> None:
        """(2, 4, 6) becomes (0, 0.5, 1) with record min 2, max 6."""
        scaled = scale_unit(numbers)
        np.testing.assert_array_equal(scaled.values("x"), [0.0, 0.5, 1.0])
        assert scaled.scaling["x"] == ScalingRecord(2.0, 6.0)
        np.testing.assert_array_equal(scaled.values("f"), [1.0, 2.0, 3.0])

    def test_target_only_on_request(self, numbers: Dataset) -> None:
        scaled = scale_unit(numbers, ["f"])
        np.testing.assert_array_equal(scaled.values("f"), [0.0, 0.5, 1.0])
        assert "x" not in scaled.scaling

    def test_twice_is_idempotent(self, numbers: Dataset) -> None:
        """Scaling again changes nothing and keeps the original record."""
        once = scale_unit(numbers)
        twice = scale_unit(once)
        np.testing.assert_array_equal(twice.values("x"), once.values("x"))
        assert twice.scaling["x"] == ScalingRecord(2.0, 6.0)

    def test_unscale(self, numbers: Dataset) -> None:
        restored = unscale(scale_unit(numbers))
        np.testing.assert_allclose(restored.values("x"), [2.0, 4.0, 6.0])
        assert restored.scaling == {}

    def test_composition(self) -> None:
        """Applying two records equals applying their composition."""
        first, second = ScalingRecord(2.0, 6.0), ScalingRecord(0.25, 0.75)
        values = np.array([2.0, 3.0, 5.5, 6.0])
        np.testing.assert_allclose(second.apply(first.apply(values)), first.then(second).apply(values))

    def test_constant_column(self, example_schema) -> None:
        data = Dataset(example_schema, {"x": [1.0, 1.0], "c": [0, 1], "f": [1.0, 2.0]})
        with pytest.raises(DataError, match="constant"):
            scale_unit(data)

    def test_nominal_column(self, numbers: Dataset) -> None:
        with pytest.raises(DataError):
            scale_unit(numbers, ["c"])

    def test_apply_stored_records(self, numbers: Dataset) -> None:
        """New data uses the stored min/max and isn't clipped."""
        records = scale_unit(numbers).scaling
        data = Dataset(numbers.schema, {"x": [10.0], "c": [0], "f": [0.0]})
        np.testing.assert_array_equal(apply_scaling(data, records).values("x"), [2.0])

    def test_summary_in_original_units(self, numbers: Dataset) -> None:
        assert scale_unit(numbers).summary("x") == {"min": 2.0, "max": 6.0, "median": 4.0}


# =============================================================================
# Filtering and encoding
# =============================================================================


class TestFilterAndEncode:
    """Tests for filter_rows(), top_levels() and one_hot()."""

    def test_filter_levels(self, synthetic: Dataset) -> None:
        """Keeping A and B leaves 122 rows; unused levels can be dropped."""
        kept = filter_rows(synthetic, {"c": ["A", "B"]})
        assert kept.n_rows == 122
        assert kept.schema.column("c").levels == ("A", "B", "C", "D")
        dropped = filter_rows(synthetic, {"c": ["B", "D"]}, drop_unused_levels=True)
        assert dropped.schema.column("c").levels == ("B", "D")
        assert list(dropped.level_names("c")[[0, -1]]) == ["B", "D"]

    def test_filter_conjunction(self, synthetic: Dataset) -> None:
        kept = filter_rows(synthetic, {"c": "C", "x": [0.0, 1.0]})
        assert kept.n_rows == 2

    def test_filter_everything_warns(self, synthetic: Dataset, caplog) -> None:
        with caplog.at_level(logging.WARNING):
            kept = filter_rows(synthetic, {"x": 1000.0})
        assert kept.n_rows == 0
        assert "left 0" in caplog.text

    def test_filter_unknown_level(self, synthetic: Dataset) -> None:
        with pytest.raises(DataError):
            filter_rows(synthetic, {"c": "E"})

    def test_top_levels(self, synthetic: Dataset) -> None:
        """Ties go to first appearance."""
        data = synthetic.take(list(range(0, 61)) + list(range(61, 183)))
        assert top_levels(data, "c", 2) == ["A", "B"]
        assert top_levels(filter_rows(synthetic, {"c": "D"}), "c", 3) == ["D"]

    def test_one_hot(self, example_dataset: Dataset) -> None:
        encoded = one_hot(example_dataset)
        assert encoded.schema.names == ["x", "c=A", "c=B", "c=C", "f"]
        assert encoded.schema.column("c=B").indicator_of == "c"
        np.testing.assert_array_equal(encoded.values("c=B"), [0.0, 1.0, 0.0])
        total = sum(encoded.values(f"c={level}") for level in "ABC")
        np.testing.assert_array_equal(total, [1.0, 1.0, 1.0])


# =============================================================================
# Splits
# =============================================================================


class TestSplit:
    """Tests for split()."""

    def test_fractions(self, synthetic: Dataset) -> None:
        """100 rows split 75/25."""
        data = synthetic.take(range(100))
        train, test = split(data, SplitSpec(train_fraction=0.75, seed=1))
        assert (train.n_rows, test.n_rows) == (75, 25)

    def test_stratified(self, synthetic: Dataset) -> None:
        """Every level keeps its share of training rows."""
        train, test = split(synthetic, SplitSpec(train_fraction=0.5, seed=3))
        counts = np.bincount(train.values("c"), minlength=4)
        assert all(30 <= count <= 31 for count in counts)
        assert train.n_rows + test.n_rows == synthetic.n_rows

    def test_deterministic(self, synthetic: Dataset) -> None:
        a, _ = split(synthetic, SplitSpec(seed=5))
        b, _ = split(synthetic, SplitSpec(seed=5))
        c, _ = split(synthetic, SplitSpec(seed=6))
        np.testing.assert_array_equal(a.values("x"), b.values("x"))
        assert not np.array_equal(a.values("x"), c.values("x"))

    def test_leading(self, synthetic: Dataset) -> None:
        train, test = split(synthetic.take(range(10)), SplitSpec(train_fraction=0.7, strategy="leading"))
        np.testing.assert_array_equal(test.values("x"), [3.5, 4.0, 4.5])

    def test_interleaved(self, synthetic: Dataset) -> None:
        """Every fourth point of each level is held out."""
        _, test = split(synthetic, SplitSpec(train_fraction=0.75, strategy="interleaved"))
        assert test.n_rows == 4 * 15
        a = filter_rows(test, {"c": "A"})
        np.testing.assert_array_equal(a.values("x")[:3], [1.5, 3.5, 5.5])

    def test_empty_side(self, example_dataset: Dataset) -> None:
        """0.99 of two rows leaves no test rows."""
        with pytest.raises(DataError):
            split(example_dataset.take([0, 1]), SplitSpec(train_fraction=0.99))


# =============================================================================
# Synthetic benchmark
# =============================================================================


class TestSynthetic:
    """Tests for generate_synthetic()."""

    def test_shape(self, synthetic: Dataset) -> None:
        """61 grid points for each of the four levels."""
        assert synthetic.n_rows == 244
        assert synthetic.schema.names == ["x", "c", "y"]
        assert synthetic.schema.column("c").levels == ("A", "B", "C", "D")

    def test_values_at_zero(self, synthetic: Dataset) -> None:
        at_zero = synthetic.take(np.flatnonzero(synthetic.values("x") == 0.0))
        np.testing.assert_allclose(at_zero.target_values, [-0.1, -0.1, 0.4, 0.9], atol=1e-15)

    def test_value_at_ten(self, synthetic: Dataset) -> None:
        row = filter_rows(synthetic, {"c": "B", "x": 10.0})
        expected = math.exp(-0.8) - math.exp(-3.2) - 0.1
        assert row.target_values[0] == pytest.approx(expected, rel=1e-12)

    def test_noise_is_seeded(self) -> None:
        a = generate_synthetic(noise=0.01, seed=1)
        b = generate_synthetic(noise=0.01, seed=1)
        np.testing.assert_array_equal(a.target_values, b.target_values)
        assert not np.array_equal(a.target_values, generate_synthetic().target_values)

    def test_bad_levels(self) -> None:
        with pytest.raises(DataError):
            generate_synthetic(levels=("A", "E"))
