import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lidarhsi.errors import DataError, NumericError
from lidarhsi.raster import (
    AffineTransform,
    ClassMap,
    GcpPair,
    RasterGrid,
    fit_affine_gcps,
    quantize_band,
    quantize_values,
    read_class_map,
    read_ppm,
    read_raster,
    render_class_map,
    resample_nearest,
    write_class_map,
    write_raster,
)

from oracles import affine_normal_equations


def _write_by_hand(path, data, nodata=-9999.0):
    """Independent writer following the documented layout."""
    bands, rows, cols = data.shape
    header = (
        f"rows = {rows}\ncols = {cols}\nbands = {bands}\nnodata = {nodata}\n"
        "origin_x = 10.0\norigin_y = 20.0\npixel_size = 0.5\ninterleave = bsq\ndtype = f32le\n"
    )
    (path.parent / f"{path.name}.hdr").write_text(header)
    flat = data.reshape(-1)
    (path.parent / f"{path.name}.bin").write_bytes(struct.pack(f"<{flat.size}f", *flat.tolist()))


class TestIO:
    def test_small_roundtrip(self, tmp_path):
        grid = RasterGrid(np.array([[1, 2], [3, 4]], dtype=np.float32))
        write_raster(grid, tmp_path / "g")
        assert read_raster(tmp_path / "g").equals(grid)

    def test_single_pixel(self, tmp_path):
        grid = RasterGrid(np.zeros((1, 1, 1)))
        write_raster(grid, tmp_path / "one")
        assert (tmp_path / "one.bin").stat().st_size == 4
        assert read_raster(tmp_path / "one").equals(grid)

    def test_nodata_preserved(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(1, 3, 4)
        data[0, 1, 2] = -9999.0
        grid = RasterGrid(data, nodata=-9999.0)
        write_raster(grid, tmp_path / "nd")
        back = read_raster(tmp_path / "nd")
        assert back.data[0, 1, 2] == -9999.0
        assert not back.valid_mask()[1, 2]

    def test_size_mismatch(self, tmp_path):
        base = tmp_path / "bad"
        (tmp_path / "bad.hdr").write_text(
            "rows = 4\ncols = 4\nbands = 3\nnodata = 0\norigin_x = 0\norigin_y = 0\npixel_size = 1\n"
        )
        (tmp_path / "bad.bin").write_bytes(np.zeros(40, "<f4").tobytes())
        with pytest.raises(DataError, match="size mismatch"):
            read_raster(base)

    def test_malformed_header(self, tmp_path):
        (tmp_path / "m.hdr").write_text("rows 4\n")
        (tmp_path / "m.bin").write_bytes(b"")
        with pytest.raises(DataError, match="malformed"):
            read_raster(tmp_path / "m")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_raster(tmp_path / "absent")

    def test_cross_implementation(self, tmp_path):
        data = np.random.default_rng(3).normal(size=(8, 16, 16)).astype(np.float32)
        _write_by_hand(tmp_path / "x", data)
        grid = read_raster(tmp_path / "x")
        assert grid.data.tobytes() == data.tobytes()
        assert (grid.origin_x, grid.origin_y, grid.pixel_size) == (10.0, 20.0, 0.5)

    def test_file_size_arithmetic(self, tmp_path):
        grid = RasterGrid(np.ones((215, 100, 100), dtype=np.float32))
        write_raster(grid, tmp_path / "cube")
        assert (tmp_path / "cube.bin").stat().st_size == 100 * 100 * 215 * 4

    def test_metadata_roundtrip(self, tmp_path):
        grid = RasterGrid(np.ones((2, 2, 2)), metadata={"band_names": "a,b"})
        write_raster(grid, tmp_path / "meta")
        assert read_raster(tmp_path / "meta").metadata == {"band_names": "a,b"}

    def test_class_map_roundtrip(self, tmp_path):
        labels = ClassMap(np.array([[0, 1, 2], [3, 0, 6]]))
        write_class_map(labels, tmp_path / "cm")
        assert np.array_equal(read_class_map(tmp_path / "cm").labels, labels.labels)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip_property(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("rt") / "g"
        grid = RasterGrid(data)
        write_raster(grid, path)
        assert read_raster(path).equals(grid)


class TestInvariants:
    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            RasterGrid(np.array([[np.inf]]))

    def test_rejects_bad_pixel_size(self):
        with pytest.raises(DataError):
            RasterGrid(np.ones((2, 2)), pixel_size=0)

    def test_class_map_rejects_negative(self):
        with pytest.raises(DataError):
            ClassMap(np.array([[-1, 0]]))


class TestQuantize:
    def test_constant_band(self):
        q = quantize_band(RasterGrid(np.full((3, 3), 7.3)))
        assert np.all(q.data == 0)

    def test_endpoints(self):
        assert quantize_values(np.array([0.0, 1.0]), 256).tolist() == [0, 255]

    def test_rank_order(self):
        v = np.random.default_rng(0).uniform(size=1000)
        q = quantize_values(v, 256)
        order = np.argsort(v)
        assert np.all(np.diff(q[order]) >= 0)

    def test_all_nodata(self):
        with pytest.raises(DataError):
            quantize_band(RasterGrid(np.full((2, 2), -9999.0)))

    def test_levels_range(self):
        with pytest.raises(DataError):
            quantize_values(np.arange(3.0), levels=1)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e3, 1e3)), st.integers(2, 1000))
    def test_monotone_property(self, values, levels):
        q = quantize_values(values, levels)
        order = np.argsort(values, kind="stable")
        assert np.all(np.diff(q[order]) >= 0)
        assert q.min() >= 0 and q.max() <= levels - 1


class TestAffine:
    def test_identity_three_pairs(self):
        pairs = [GcpPair(0, 0, 0, 0), GcpPair(1, 0, 1, 0), GcpPair(0, 1, 0, 1)]
        t = fit_affine_gcps(pairs)
        assert np.allclose([t.a, t.b, t.c, t.d, t.e, t.f], [1, 0, 0, 0, 1, 0], atol=1e-12)
        assert t.rmse <= 1e-9

    def test_known_affine(self):
        src = np.random.default_rng(1).uniform(0, 100, size=(6, 2))
        pairs = [GcpPair(x, y, 2 * x + 5, 2 * y - 3) for x, y in src]
        t = fit_affine_gcps(pairs)
        assert np.allclose([t.a, t.b, t.c, t.d, t.e, t.f], [2, 0, 5, 0, 2, -3], atol=1e-9)

    def test_jitter_matches_normal_equations(self):
        gen = np.random.default_rng(2)
        src = gen.uniform(0, 200, size=(6, 2))
        dst = src @ np.array([[1.01, 0.02], [-0.03, 0.98]]) + [4.0, -7.0] + gen.normal(0, 0.5, size=(6, 2))
        t = fit_affine_gcps([GcpPair(*s, *d) for s, d in zip(src, dst)])
        ref = affine_normal_equations(src, dst)
        assert np.allclose([t.a, t.b, t.c], ref[:, 0], atol=1e-8)
        assert np.allclose([t.d, t.e, t.f], ref[:, 1], atol=1e-8)
        assert 0 <= t.rmse <= 1.5

    def test_too_few(self):
        with pytest.raises(DataError):
            fit_affine_gcps([GcpPair(0, 0, 0, 0), GcpPair(1, 1, 1, 1)])

    def test_collinear(self):
        with pytest.raises(NumericError):
            fit_affine_gcps([GcpPair(i, i, i, i) for i in range(4)])

    def test_inverse(self):
        t = AffineTransform(2, 1, 3, -1, 4, 5)
        x, y = t.inverse().apply(*t.apply(1.5, -2.0))
        assert np.allclose([x, y], [1.5, -2.0])


class TestResample:
    def test_identity(self):
        grid = RasterGrid(np.random.default_rng(0).normal(size=(2, 5, 6)))
        assert resample_nearest(grid, AffineTransform.identity(), 5, 6).equals(grid)

    def test_translation(self):
        data = np.arange(20, dtype=np.float32).reshape(4, 5)
        out = resample_nearest(RasterGrid(data), AffineTransform(1, 0, 2, 0, 1, 1), 4, 5).data[0]
        assert np.array_equal(out[1:, 2:], data[:3, :3])
        assert np.all(out[0] == -9999.0) and np.all(out[:, :2] == -9999.0)

    def test_rotation_matches_per_pixel(self):
        data = np.arange(25, dtype=np.float32).reshape(5, 5)
        # (x, y) -> (4 - y, x): a quarter turn about the centre
        t = AffineTransform(0, -1, 4, 1, 0, 0)
        out = resample_nearest(RasterGrid(data), t, 5, 5).data[0]
        expected = np.empty_like(data)
        for r in range(5):
            for c in range(5):
                expected[r, c] = data[4 - c, r]
        assert np.array_equal(out, expected)

    def test_singular(self):
        with pytest.raises(NumericError):
            resample_nearest(RasterGrid(np.ones((2, 2))), AffineTransform(1, 1, 0, 1, 1, 0), 2, 2)


class TestRender:
    def test_all_zero_black(self, tmp_path):
        render_class_map(np.zeros((3, 4), dtype=int), tmp_path / "z.ppm")
        assert np.all(read_ppm(tmp_path / "z.ppm") == 0)

    def test_six_colours(self, tmp_path):
        render_class_map(np.arange(1, 7).reshape(2, 3), tmp_path / "c.ppm")
        rgb = read_ppm(tmp_path / "c.ppm").reshape(-1, 3)
        assert len({tuple(p) for p in rgb}) == 6

    def test_checkerboard_histogram(self, tmp_path):
        board = (np.indices((64, 64)).sum(axis=0) % 2) + 1
        render_class_map(board, tmp_path / "b.ppm")
        _, counts = np.unique(read_ppm(tmp_path / "b.ppm").reshape(-1, 3), axis=0, return_counts=True)
        assert sorted(counts.tolist()) == [2048, 2048]

    def test_missing_palette_entry(self, tmp_path):
        with pytest.raises(DataError):
            render_class_map(np.array([[7]]), tmp_path / "x.ppm")
