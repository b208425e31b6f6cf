import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panolayout import metrics as M
from panolayout.layout import ManhattanLayout, shoelace_area

from oracles import raster_iou2d, voxel_iou3d


def rect(x0, z0, x1, z1):
    return ((x0, z0), (x1, z0), (x1, z1), (x0, z1))


def room(x0, z0, x1, z1, h=3.0):
    return ManhattanLayout(rect(x0, z0, x1, z1), h)


class SimpleNS:
    def __init__(self, corners, height_m):
        self.corners = corners
        self.height_m = height_m


def l_corners():
    return ((-3.0, -2.0), (3.0, -2.0), (3.0, 0.5), (1.0, 0.5), (1.0, 2.0), (-3.0, 2.0))


class TestIou2d:
    def test_identity(self):
        a = room(-2, -2, 2, 2)
        assert M.iou2d(a, a) == 1.0

    def test_disjoint(self):
        assert M.iou2d(rect(0, 0, 1, 1), rect(5, 5, 6, 6)) == 0.0

    def test_offset_unit_squares(self):
        got = M.iou2d(rect(0, 0, 1, 1), rect(0.5, 0, 1.5, 1))
        assert got == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert got == pytest.approx(raster_iou2d(rect(0, 0, 1, 1), rect(0.5, 0, 1.5, 1)), abs=1e-3)

    def test_symmetry_and_translation(self):
        a = l_corners()
        b = rect(-1.5, -1.5, 2.5, 1.8)
        assert M.iou2d(a, b) == pytest.approx(M.iou2d(b, a), abs=1e-15)
        shift = lambda cs, dx, dz: tuple((x + dx, z + dz) for x, z in cs)
        assert M.iou2d(shift(a, 3.7, -1.2), shift(b, 3.7, -1.2)) == pytest.approx(
            M.iou2d(a, b), rel=1e-12
        )

    def test_grid_area_matches_shoelace(self):
        a = l_corners()
        assert M.intersection_area(a, a) == pytest.approx(
            abs(shoelace_area(a)), rel=1e-12
        )

    def test_against_rasterization(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rect(*np.sort(rng.uniform(-3, 3, 2)), *np.sort(rng.uniform(-3, 3, 2)))
            a = ((a[0][0], a[2][0]), (a[0][1], a[2][0]), (a[0][1], a[2][1]), (a[0][0], a[2][1]))
            # build two random axis-aligned rectangles properly
            x = np.sort(rng.uniform(-3, 3, 2))
            z = np.sort(rng.uniform(-3, 3, 2))
            a = rect(x[0], z[0], x[1], z[1])
            x = np.sort(rng.uniform(-3, 3, 2))
            z = np.sort(rng.uniform(-3, 3, 2))
            b = rect(x[0], z[0], x[1], z[1])
            assert M.iou2d(a, b) == pytest.approx(raster_iou2d(a, b, n=1024), abs=2e-3)


class TestIou3d:
    def test_equal_footprints_heights_2_and_3(self):
        a = SimpleNS(rect(-1, -1, 1, 1), 2.0)
        b = SimpleNS(rect(-1, -1, 1, 1), 3.0)
        assert M.iou3d(a, b) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_identity(self):
        a = room(-2, -1, 1.5, 2, h=2.7)
        assert M.iou3d(a, a) == 1.0

    def test_equal_heights_reduces_to_2d(self):
        a = SimpleNS(l_corners(), 2.9)
        b = SimpleNS(rect(-1.5, -1.5, 2.5, 1.8), 2.9)
        assert M.iou3d(a, b) == pytest.approx(M.iou2d(a.corners, b.corners), rel=1e-12)

    def test_le_iou2d(self):
        a = SimpleNS(l_corners(), 2.2)
        b = SimpleNS(rect(-1.5, -1.5, 2.5, 1.8), 3.9)
        assert M.iou3d(a, b) <= M.iou2d(a.corners, b.corners) + 1e-12

    def test_against_voxelization(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = np.sort(rng.uniform(-3, 3, 2))
            z = np.sort(rng.uniform(-3, 3, 2))
            a = SimpleNS(rect(x[0], z[0], x[1] + 0.5, z[1] + 0.5), float(rng.uniform(2.2, 4)))
            x = np.sort(rng.uniform(-3, 3, 2))
            z = np.sort(rng.uniform(-3, 3, 2))
            b = SimpleNS(rect(x[0], z[0], x[1] + 0.5, z[1] + 0.5), float(rng.uniform(2.2, 4)))
            assert M.iou3d(a, b) == pytest.approx(
                voxel_iou3d(a.corners, a.height_m, b.corners, b.height_m, n=128), abs=2e-2
            )


@settings(max_examples=50, deadline=None)
@given(
    x0=st.floats(-4, -0.5), z0=st.floats(-4, -0.5),
    x1=st.floats(0.5, 4), z1=st.floats(0.5, 4),
    dx=st.floats(-2, 2), dz=st.floats(-2, 2),
)
def test_iou_properties_random_rects(x0, z0, x1, z1, dx, dz):
    a = rect(x0, z0, x1, z1)
    b = rect(x0 + dx, z0 + dz, x1 + dx, z1 + dz)
    v = M.iou2d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(M.iou2d(b, a), abs=1e-12)
    if dx == 0 and dz == 0:
        assert v == 1.0


class TestCornerClass:
    def test_classes(self):
        assert M.corner_class(4) == "4"
        assert M.corner_class(6) == "6"
        assert M.corner_class(8) == "8"
        assert M.corner_class(10) == "10+"
        assert M.corner_class(12) == "10+"


class TestEvaluate:
    def make_items(self):
        items = []
        rooms = [
            room(-2, -2, 2, 2, h=3.0),
            ManhattanLayout(l_corners(), 2.8),
            room(-1.5, -1, 2, 2.5, h=3.4),
        ]
        for i, r in enumerate(rooms):
            items.append((f"item{i}", r, r))
        return items

    def test_identity_predictor(self):
        report = M.evaluate(self.make_items(), predictor=lambda gt: gt)
        assert all(r.iou2d == 1.0 and r.iou3d == 1.0 for r in report.records)
        assert report.corner_accuracy() == 1.0

    def test_scaled_predictor(self):
        def scale_11(gt):
            return ManhattanLayout(
                tuple((1.1 * x, 1.1 * z) for x, z in gt.corners), gt.height_m
            )

        report = M.evaluate(self.make_items(), predictor=scale_11)
        for r in report.records:
            assert r.iou2d == pytest.approx(1.0 / 1.21, abs=1e-9)

    def test_failures_recorded_not_fatal(self):
        def boom(gt):
            raise ValueError("nope")

        report = M.evaluate(self.make_items(), predictor=boom)
        assert report.failures == 3
        assert all(r.iou2d == 0.0 for r in report.records)

    def test_csv_and_table(self, tmp_path):
        report = M.evaluate(self.make_items(), predictor=lambda gt: gt)
        path = tmp_path / "report.csv"
        report.to_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "id,corner_class,iou2d,iou3d,corner_match,fit_time_ms"
        assert len(text) == 4
        table = report.format_table()
        assert "2D IoU" in table and "all" in table

    def test_parallel_matches_serial(self):
        items = self.make_items()
        serial = M.evaluate(items, predictor=lambda gt: gt, workers=1)
        par = M.evaluate(items, predictor=lambda gt: gt, workers=4)
        assert [r.id for r in serial.records] == [r.id for r in par.records]
        assert [r.iou2d for r in serial.records] == [r.iou2d for r in par.records]


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("PANOLAYOUT_THREADS", "3")
    assert M.thread_count() == 3
    monkeypatch.setenv("PANOLAYOUT_THREADS", "junk")
    assert M.thread_count(default=2) == 2
    monkeypatch.delenv("PANOLAYOUT_THREADS")
    assert M.thread_count(default=5) == 5
