"""Tests for CSV ingestion and report serialization."""

import io
import json
import math

import numpy as np
import pandas as pd
import pytest

from quasilinear_welfare.estimation.kernel import CrossSection
from quasilinear_welfare.load.csv_files import (
    InputFormatError,
    json_safe,
    read_cross_section,
    read_dataset,
    write_cross_section,
    write_dataset,
    write_frame,
    write_json,
)


@pytest.fixture
def write_text(tmp_path):
    """Write CSV text to a temporary file and return its path."""

    def factory(text: str, name: str = "input.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return factory


class TestReadDataset:
    """Tests for read_dataset."""

    def test_round_trip(self, tmp_path, make_dataset):
        dataset = make_dataset(5, 2)
        path = tmp_path / "data.csv"
        write_dataset(dataset, path)

        restored = read_dataset(path)

        np.testing.assert_array_equal(restored.prices, dataset.prices)
        np.testing.assert_array_equal(restored.quantities, dataset.quantities)

    def test_header(self, tmp_path, two_goods):
        path = tmp_path / "data.csv"
        write_dataset(two_goods, path)
        assert path.read_text().splitlines()[0] == "t,p_1,p_2,x_1,x_2"

    def test_reads_simple_file(self, write_text):
        dataset = read_dataset(write_text("t,p_1,x_1\n1,1,2\n2,2,1\n"))
        assert (dataset.T, dataset.K) == (2, 1)
        np.testing.assert_array_equal(dataset.quantities[:, 0], [2.0, 1.0])

    def test_unparsable_cell(self, write_text):
        with pytest.raises(InputFormatError, match="cannot parse 'abc'") as excinfo:
            read_dataset(write_text("t,p_1,x_1\n1,1,2\n2,abc,1\n"))
        assert excinfo.value.line == 3

    def test_empty_cell(self, write_text):
        with pytest.raises(InputFormatError, match="empty value in column p_1") as excinfo:
            read_dataset(write_text("t,p_1,x_1\n1,,2\n"))
        assert excinfo.value.line == 2

    def test_negative_quantity(self, write_text):
        with pytest.raises(InputFormatError, match="negative quantity") as excinfo:
            read_dataset(write_text("t,p_1,x_1\n1,1,2\n2,2,-1\n"))
        assert excinfo.value.line == 3

    def test_nan_is_a_validation_error(self, write_text):
        with pytest.raises(InputFormatError, match="non-finite price") as excinfo:
            read_dataset(write_text("t,p_1,x_1\n1,nan,2\n"))
        assert excinfo.value.line == 2

    def test_empty_file(self, write_text):
        with pytest.raises(InputFormatError, match="empty file") as excinfo:
            read_dataset(write_text(""))
        assert excinfo.value.line == 1

    def test_header_only(self, write_text):
        with pytest.raises(InputFormatError, match="no data rows"):
            read_dataset(write_text("t,p_1,x_1\n"))

    def test_t_must_count_up(self, write_text):
        with pytest.raises(InputFormatError, match="t must count") as excinfo:
            read_dataset(write_text("t,p_1,x_1\n1,1,2\n3,2,1\n"))
        assert excinfo.value.line == 3

    def test_mismatched_columns(self, write_text):
        with pytest.raises(InputFormatError):
            read_dataset(write_text("t,p_1,p_2,x_1\n1,1,1,2\n"))

    def test_first_column_must_be_t(self, write_text):
        with pytest.raises(InputFormatError, match="first column"):
            read_dataset(write_text("p_1,x_1\n1,2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputFormatError, match="file not found"):
            read_dataset(tmp_path / "absent.csv")


class TestCrossSectionFiles:
    """Tests for cross-section CSV files."""

    def test_round_trip(self, tmp_path):
        cs = CrossSection(X=[1.5, 2.25], P=[1.0, 2.0], Y=[3.0, 4.0], W=[[0.1, 0.2], [0.3, 0.4]])
        path = tmp_path / "cs.csv"
        write_cross_section(cs, path)

        restored = read_cross_section(path)

        assert path.read_text().splitlines()[0] == "X,P,Y,W_1,W_2"
        np.testing.assert_array_equal(restored.W, cs.W)
        np.testing.assert_array_equal(restored.X, cs.X)

    def test_no_covariates(self, write_text):
        cs = read_cross_section(write_text("X,P,Y\n1,1,1\n2,2,2\n"))
        assert cs.d_w == 0

    def test_nonpositive_price(self, write_text):
        with pytest.raises(InputFormatError, match="nonpositive price") as excinfo:
            read_cross_section(write_text("X,P,Y\n1,1,1\n2,0,2\n"))
        assert excinfo.value.line == 3

    def test_bad_header(self, write_text):
        with pytest.raises(InputFormatError, match="X,P,Y"):
            read_cross_section(write_text("P,X,Y\n1,1,1\n2,2,2\n"))


class TestSerialization:
    """Tests for frame and JSON output."""

    def test_json_safe_tokens(self):
        value = {"a": math.inf, "b": [-math.inf, math.nan], "c": np.float64(1.5), 1: (np.int64(2),)}
        assert json_safe(value) == {"a": "inf", "b": ["-inf", "nan"], "c": 1.5, "1": [2]}

    def test_write_json_to_stream(self):
        buffer = io.StringIO()
        write_json({"eps_star": 0.5, "upper": math.inf}, buffer)
        assert json.loads(buffer.getvalue()) == {"eps_star": 0.5, "upper": "inf"}

    def test_write_json_to_path(self, tmp_path):
        path = tmp_path / "report.json"
        write_json({"cycle": [1, 2]}, path)
        assert json.loads(path.read_text()) == {"cycle": [1, 2]}

    def test_write_frame_to_stdout(self, capsys, single_obs):
        write_dataset(single_obs)
        assert capsys.readouterr().out == "t,p_1,x_1\n1,1,2\n"

    def test_infinite_cells(self, capsys):
        write_frame(pd.DataFrame({"upper": [math.inf, 1.0]}))
        assert capsys.readouterr().out.splitlines() == ["upper", "inf", "1"]
