import csv
import json

import numpy as np
import pytest

from app.services.export_service import ExportService


@pytest.fixture
def export(tmp_path):
    return ExportService(str(tmp_path / "out"))


class TestCsv:
    def test_metadata_header_and_cells(self, export):
        path = export.write_csv(
            "table.csv",
            {"x": [0.5, 0.25], "flag": [True, False], "n": [3, 4], "q": [float("nan"), -np.inf]},
            {"label": "uniform", "N": 3},
        )
        assert path.read_text().splitlines() == [
            "# label=uniform",
            "# N=3",
            "x,flag,n,q",
            "0.5,1,3,",
            "0.25,0,4,-inf",
        ]
        assert export.written == ["table.csv"]

    def test_full_precision(self, export):
        value = 0.1 + 0.2
        path = export.write_csv("p.csv", {"v": [value]})
        assert float(path.read_text().splitlines()[1]) == value

    def test_cells_read_back_with_csv_reader(self, export):
        path = export.write_csv("names.csv", {"x, scaled": [1.5], "y": [2]}, {"note": "a,b"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# note=a,b"
        assert next(csv.reader(lines[1:])) == ["x, scaled", "y"]
        assert next(csv.reader(lines[2:])) == ["1.5", "2"]

    def test_rejects_ragged_columns(self, export):
        with pytest.raises(ValueError):
            export.write_csv("bad.csv", {"a": [1, 2], "b": [1]})


class TestJson:
    def test_numpy_values_and_sorted_keys(self, export, tmp_path):
        path = export.write_json("doc.json", {
            "b": np.arange(3), "a": np.float64(1.5), "c": np.int64(7), "p": tmp_path,
        })
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        data = json.loads(text)
        assert data["b"] == [0, 1, 2] and data["a"] == 1.5 and data["c"] == 7
        assert data["p"] == str(tmp_path)

    def test_unknown_type(self, export):
        with pytest.raises(TypeError):
            export.write_json("doc.json", {"x": object()})


class TestMatrix:
    def test_binary_and_sidecar(self, export):
        matrix = np.arange(6, dtype=float).reshape(2, 3)
        path = export.write_matrix("carpet.bin", matrix, {"label": "test"})
        restored = np.fromfile(path, dtype="<f8").reshape(2, 3)
        np.testing.assert_array_equal(restored, matrix)

        sidecar = json.loads(export.path("carpet.json").read_text())
        assert sidecar["shape"] == [2, 3]
        assert sidecar["dtype"] == "float64" and sidecar["byteorder"] == "little"
        assert sidecar["label"] == "test"
        assert export.written == ["carpet.bin", "carpet.json"]
