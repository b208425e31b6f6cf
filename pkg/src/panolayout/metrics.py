"""Layout accuracy metrics: exact 2-D/3-D IoU and the evaluation harness.

The 2-D intersection of two rectilinear polygons is computed exactly by
cutting the plane on the grid induced by all corner coordinates of both
polygons and classifying each induced cell by its center; within a cell,
membership is constant because every edge lies on a grid line.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from .layout import ManhattanLayout, points_in_polygon


def corner_class(n_corners: int) -> str:
    """Difficulty class by corner count: '4', '6', '8' or '10+'."""
    return str(n_corners) if n_corners < 10 else "10+"


CORNER_CLASSES = ("4", "6", "8", "10+")


def _grid_cells(corners_a, corners_b):
    pts = np.asarray(list(corners_a) + list(corners_b), dtype=np.float64)
    xs = np.unique(pts[:, 0])
    zs = np.unique(pts[:, 1])
    cx = (xs[:-1] + xs[1:]) / 2.0
    cz = (zs[:-1] + zs[1:]) / 2.0
    wx = np.diff(xs)
    wz = np.diff(zs)
    gx, gz = np.meshgrid(cx, cz)
    areas = np.outer(wz, wx)
    return gx, gz, areas


def _corners_of(x):
    return tuple(x.corners) if hasattr(x, "corners") else tuple(x)


def polygon_area(corners) -> float:
    from .layout import shoelace_area

    return abs(shoelace_area(corners))


def _decompose(a, b):
    """Areas of a, b and a&b from one shared grid decomposition, so that
    identical inputs give bitwise-identical area sums (iou(A, A) == 1.0)."""
    ca, cb = _corners_of(a), _corners_of(b)
    gx, gz, areas = _grid_cells(ca, cb)
    in_a = points_in_polygon(gx, gz, ca)
    in_b = points_in_polygon(gx, gz, cb)
    mask_sum = lambda m: float(areas[m].sum())
    return mask_sum(in_a), mask_sum(in_b), mask_sum(in_a & in_b)


def intersection_area(a, b) -> float:
    return _decompose(a, b)[2]


def iou2d(a, b) -> float:
    """Exact footprint intersection-over-union.

    Accepts ManhattanLayout objects or raw corner sequences.
    """
    area_a, area_b, inter = _decompose(a, b)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def iou3d(a: ManhattanLayout, b: ManhattanLayout) -> float:
    """Prism intersection-over-union with both ceilings at +1.6 m.

    Vertical overlap of [1.6 - H_A, 1.6] and [1.6 - H_B, 1.6] is min(H_A, H_B),
    so the volume formula is exact.
    """
    area_a, area_b, inter2 = _decompose(a, b)
    h_a, h_b = a.height_m, b.height_m
    inter3 = inter2 * min(h_a, h_b)
    union3 = area_a * h_a + area_b * h_b - inter3
    return inter3 / union3 if union3 > 0 else 0.0


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass
class EvalRecord:
    id: str
    corner_class: str
    iou2d: float
    iou3d: float
    corner_match: bool
    fit_time_s: float
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    records: list

    def per_class_mean(self, attr: str) -> dict:
        out = {}
        for cls in CORNER_CLASSES:
            vals = [getattr(r, attr) for r in self.records if r.corner_class == cls]
            if vals:
                out[cls] = float(np.mean(vals))
        return out

    def overall_mean(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.records]
        return float(np.mean(vals)) if vals else float("nan")

    def corner_accuracy(self) -> float:
        vals = [r.corner_match for r in self.records]
        return float(np.mean(vals)) if vals else float("nan")

    def timing_percentiles(self, qs=(50, 90, 99)) -> dict:
        times = [r.fit_time_s for r in self.records if not r.failed]
        if not times:
            return {q: float("nan") for q in qs}
        return {q: float(np.percentile(times, q)) for q in qs}

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if r.failed)

    def to_csv(self, path):
        from .io import atomic_write_bytes
        import io as _io

        buf = _io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "corner_class", "iou2d", "iou3d", "corner_match", "fit_time_ms"])
        for r in self.records:
            writer.writerow(
                [r.id, r.corner_class, f"{r.iou2d:.6f}", f"{r.iou3d:.6f}",
                 int(r.corner_match), f"{r.fit_time_s * 1e3:.3f}"]
            )
        atomic_write_bytes(path, buf.getvalue().encode())

    def format_table(self) -> str:
        lines = []
        header = f"{'class':>6} {'count':>6} {'2D IoU':>8} {'3D IoU':>8} {'corners':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for cls in CORNER_CLASSES:
            recs = [r for r in self.records if r.corner_class == cls]
            if not recs:
                continue
            lines.append(
                f"{cls:>6} {len(recs):>6} "
                f"{np.mean([r.iou2d for r in recs]):>8.4f} "
                f"{np.mean([r.iou3d for r in recs]):>8.4f} "
                f"{np.mean([r.corner_match for r in recs]):>8.2%}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'all':>6} {len(self.records):>6} "
            f"{self.overall_mean('iou2d'):>8.4f} "
            f"{self.overall_mean('iou3d'):>8.4f} "
            f"{self.corner_accuracy():>8.2%}"
        )
        pct = self.timing_percentiles()
        lines.append(
            "fit time ms: "
            + "  ".join(f"p{q}={v * 1e3:.2f}" for q, v in pct.items())
            + (f"  failures={self.failures}" if self.failures else "")
        )
        return "\n".join(lines)


def evaluate(items, predictor, workers: int = 1) -> EvalReport:
    """Run ``predictor`` over dataset items and aggregate per-class metrics.

    ``items`` yields (item_id, gt_layout, payload); the predictor receives the
    payload and returns a ManhattanLayout.  Per-item failures are recorded,
    not fatal.
    """
    items = list(items)

    def run_one(entry):
        item_id, gt, payload = entry
        cls = corner_class(gt.n_corners)
        t0 = time.perf_counter()
        try:
            pred = predictor(payload)
            dt = time.perf_counter() - t0
            return EvalRecord(
                id=item_id,
                corner_class=cls,
                iou2d=iou2d(pred, gt),
                iou3d=iou3d(pred, gt),
                corner_match=pred.n_corners == gt.n_corners,
                fit_time_s=dt,
            )
        except Exception as exc:  # per-item failure: score zero, keep going
            dt = time.perf_counter() - t0
            return EvalRecord(
                id=item_id,
                corner_class=cls,
                iou2d=0.0,
                iou3d=0.0,
                corner_match=False,
                fit_time_s=dt,
                failed=True,
                error=f"{type(exc).__name__}: {exc}",
            )

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, items))
    else:
        records = [run_one(e) for e in items]
    return EvalReport(records=records)


def thread_count(default: int = 1) -> int:
    """Worker cap from the PANOLAYOUT_THREADS environment variable."""
    val = os.environ.get("PANOLAYOUT_THREADS", "")
    try:
        n = int(val)
        return max(1, n)
    except ValueError:
        return default
