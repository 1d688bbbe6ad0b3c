import json

import numpy as np
import pytest

from stopgame.regions import Grid
from stopgame.reports import (atomic_bundle, config_digest, read_mask_pgm,
                              write_heatmap_pgm, write_mask_pgm, write_manifest,
                              write_table_csv, write_value_field_csv)
from stopgame.valuation import ValueField


@pytest.fixture
def grid():
    return Grid(lower=(-1.0, -1.0), upper=(1.0, 1.0), counts=(6, 6))


class TestPgm:
    def test_mask_roundtrip(self, grid, tmp_path):
        rng = np.random.default_rng(4)
        mask = rng.random((6, 6)) < 0.4
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, mask, grid)
        loaded, lgrid = read_mask_pgm(path)
        assert np.array_equal(loaded, mask)
        assert lgrid == grid

    def test_header_is_binary_p5(self, grid, tmp_path):
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, np.zeros((6, 6), bool), grid)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n6 6\n255\n")
        assert len(raw) == len(b"P5\n6 6\n255\n") + 36

    def test_sidecar_carries_bounding_box(self, grid, tmp_path):
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, np.zeros((6, 6), bool), grid)
        meta = json.loads((tmp_path / "m.pgm.json").read_text())
        assert meta["lower"] == [-1.0, -1.0]
        assert meta["counts"] == [6, 6]

    def test_heatmap_scales_to_byte_range(self, grid, tmp_path):
        vals = np.linspace(0.0, 2.0, 36).reshape(6, 6)
        path = tmp_path / "h.pgm"
        write_heatmap_pgm(path, vals, grid)
        raw = path.read_bytes()
        pixels = np.frombuffer(raw.split(b"255\n", 1)[1], np.uint8)
        assert pixels.min() == 0 and pixels.max() == 255
        meta = json.loads((tmp_path / "h.pgm.json").read_text())
        assert meta["value_max"] == 2.0


class TestCsv:
    def test_value_field_csv_layout(self, grid, tmp_path):
        field = ValueField(grid=grid, values=np.ones((6, 6)) / 3.0,
                           std_errs=np.zeros((6, 6)),
                           truncation_bound=np.zeros((6, 6)), n_paths=10)
        path = tmp_path / "f.csv"
        write_value_field_csv(path, field)
        lines = path.read_text().splitlines()
        assert lines[0] == "x1,x2,value,std_err,trunc_bound"
        assert len(lines) == 37
        first = lines[1].split(",")
        assert float(first[0]) == pytest.approx(-1.0 + 1 / 6)
        assert float(first[2]) == pytest.approx(1 / 3)

    def test_byte_identical_rewrites(self, grid, tmp_path):
        rng = np.random.default_rng(1)
        field = ValueField(grid=grid, values=rng.random((6, 6)),
                           std_errs=rng.random((6, 6)) * 0.01,
                           truncation_bound=np.full((6, 6), 1e-4), n_paths=10)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_value_field_csv(a, field)
        write_value_field_csv(b, field)
        assert a.read_bytes() == b.read_bytes()

    def test_generic_table(self, tmp_path):
        path = tmp_path / "t.csv"
        write_table_csv(path, ["name", "x"], [["alpha", 0.5], ["beta", 2]])
        assert path.read_text() == "name,x\nalpha,0.5\nbeta,2\n"


class TestBundles:
    def test_atomic_bundle_appears_complete(self, tmp_path):
        target = tmp_path / "out" / "run1"
        with atomic_bundle(target) as stage:
            (stage / "a.txt").write_text("hello")
            assert not target.exists()
        assert (target / "a.txt").read_text() == "hello"

    def test_failed_bundle_leaves_nothing(self, tmp_path):
        target = tmp_path / "out" / "run2"
        with pytest.raises(RuntimeError):
            with atomic_bundle(target) as stage:
                (stage / "a.txt").write_text("partial")
                raise RuntimeError("boom")
        assert not target.exists()
        assert list((tmp_path / "out").iterdir()) == []

    def test_manifest_and_digest_stable(self, tmp_path):
        payload = {"b": 1, "a": {"y": 2, "x": 3}}
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        write_manifest(p1, payload)
        write_manifest(p2, {"a": {"x": 3, "y": 2}, "b": 1})
        assert p1.read_bytes() == p2.read_bytes()
        assert config_digest(payload) == config_digest({"a": {"x": 3, "y": 2}, "b": 1})
