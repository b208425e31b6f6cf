"""Synthetic Manhattan rooms with textured panoramas and ground-truth maps.

Rooms are built by carving axis-aligned rectangular notches from the corners
of a base rectangle; each notch adds exactly two corners, so corner counts
4/6/8/10/12 map to 0..4 notches.  The camera sits at the footprint centroid
(nudged if necessary) with a clearance and visibility margin from every wall,
and every wall of the room is fully visible from it, which keeps the
floor-ceiling and floor-plan maps mutually consistent.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidLayoutError, PanoLayoutError
from .layout import (
    CeilingViewFrame,
    ManhattanLayout,
    default_frame,
    distance_to_boundary,
    point_in_polygon,
    render_fc_map,
    render_fp_map,
    synth_texture,
)

CORNER_CLASSES = (4, 6, 8, 10, 12)


class GenerationError(PanoLayoutError, RuntimeError):
    """Could not generate a layout satisfying the constraints."""


@dataclass(frozen=True)
class RoomSpec:
    corner_count: int = 4
    min_extent_m: float = 3.0
    max_extent_m: float = 7.5
    min_height_m: float = 2.2
    max_height_m: float = 4.0
    clearance_m: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.corner_count not in CORNER_CLASSES:
            raise ValueError(f"corner_count must be one of {CORNER_CLASSES}")


def _notched_rectangle(width, depth, notches):
    """CCW corner list for [0,w]x[0,d] with per-corner notches.

    ``notches``: dict corner_id -> (a, b) with corner ids 0:(0,0), 1:(w,0),
    2:(w,d), 3:(0,d); a is the notch x-extent, b the z-extent.
    """
    pts = []
    # corner 0 at (0, 0), traversed from edge z=0 side
    if 0 in notches:
        a, b = notches[0]
        pts += [(0.0, b), (a, b), (a, 0.0)]
    else:
        pts += [(0.0, 0.0)]
    if 1 in notches:
        a, b = notches[1]
        pts += [(width - a, 0.0), (width - a, b), (width, b)]
    else:
        pts += [(width, 0.0)]
    if 2 in notches:
        a, b = notches[2]
        pts += [(width, depth - b), (width - a, depth - b), (width - a, depth)]
    else:
        pts += [(width, depth)]
    if 3 in notches:
        a, b = notches[3]
        pts += [(a, depth), (a, depth - b), (0.0, depth - b)]
    else:
        pts += [(0.0, depth)]
    return pts


def _camera_ok(corners, cam, clearance):
    """Camera validity: strictly inside, clear of walls, with every wall fully
    visible (the camera lies in the polygon's kernel)."""
    x, z = cam
    if not point_in_polygon(x, z, corners):
        return False
    if distance_to_boundary(x, z, corners) < clearance:
        return False
    return _star_visible(corners, cam)


def _star_visible(corners, cam, margin: float = 0.15):
    """True iff the camera sees every boundary point: it must lie inside the
    polygon's kernel, i.e. left of every directed (CCW) edge line, with a
    small margin for numerical robustness downstream."""
    x, z = cam
    n = len(corners)
    for i in range(n):
        px, pz = corners[i]
        qx, qz = corners[(i + 1) % n]
        dx, dz = qx - px, qz - pz
        cross = dx * (z - pz) - dz * (x - px)
        if cross < margin * (abs(dx) + abs(dz)):
            return False
    return True


def random_layout(spec: RoomSpec, max_tries: int = 64) -> ManhattanLayout:
    """Random rectilinear layout with exactly ``spec.corner_count`` corners."""
    rng = np.random.default_rng(spec.seed)
    n_notches = (spec.corner_count - 4) // 2
    for _ in range(max_tries):
        width = rng.uniform(spec.min_extent_m, spec.max_extent_m)
        depth = rng.uniform(spec.min_extent_m, spec.max_extent_m)
        min_notch = max(0.7, 2.5 * spec.clearance_m)
        if n_notches:
            corner_ids = rng.permutation(4)[:n_notches]
            notches = {
                int(c): (
                    rng.uniform(min_notch, 0.38 * width),
                    rng.uniform(min_notch, 0.38 * depth),
                )
                for c in corner_ids
            }
        else:
            notches = {}
        pts = _notched_rectangle(width, depth, notches)
        arr = np.asarray(pts)
        # centroid of the polygon (area-weighted)
        x, z = arr[:, 0], arr[:, 1]
        xn, zn = np.roll(x, -1), np.roll(z, -1)
        cross = x * zn - xn * z
        area = cross.sum() / 2.0
        cx = ((x + xn) * cross).sum() / (6.0 * area)
        cz = ((z + zn) * cross).sum() / (6.0 * area)
        cam = (cx, cz)
        if not _camera_ok(pts, cam, spec.clearance_m):
            cam = _pole_of_inaccessibility(pts, spec.clearance_m)
            if cam is None or not _star_visible(pts, cam):
                continue
        corners = tuple((px - cam[0], pz - cam[1]) for px, pz in pts)
        height = float(rng.uniform(spec.min_height_m, spec.max_height_m))
        try:
            layout = ManhattanLayout(corners, height)
        except InvalidLayoutError:
            continue
        if layout.n_corners != spec.corner_count:
            continue
        return layout
    raise GenerationError(
        f"could not generate a {spec.corner_count}-corner room after {max_tries} tries"
    )


def _pole_of_inaccessibility(corners, clearance, grid=24):
    """Interior point with maximal wall distance, by coarse grid search."""
    arr = np.asarray(corners)
    best, best_d = None, clearance
    for gx in np.linspace(arr[:, 0].min(), arr[:, 0].max(), grid)[1:-1]:
        for gz in np.linspace(arr[:, 1].min(), arr[:, 1].max(), grid)[1:-1]:
            if not point_in_polygon(gx, gz, corners):
                continue
            if not _star_visible(corners, (gx, gz)):
                continue
            d = distance_to_boundary(gx, gz, corners)
            if d > best_d:
                best, best_d = (float(gx), float(gz)), d
    return best


def make_sample(
    spec: RoomSpec,
    pano_w: int = 128,
    pano_h: int = 64,
    frame: CeilingViewFrame = None,
) -> dict:
    """Full training sample: textured panorama, ground-truth maps, layout."""
    layout = random_layout(spec)
    frame = frame or default_frame(pano_h)
    pano = synth_texture(layout, pano_w, pano_h, seed=spec.seed)
    mfc = render_fc_map(layout, pano_w, pano_h)
    mfp = render_fp_map(layout, frame)
    return {
        "pano": pano.astype(np.float32) / 255.0,
        "pano_u8": pano,
        "mfc": mfc,
        "mfp": mfp,
        "height": layout.height_m,
        "layout": layout,
    }


def class_schedule(count: int, classes=CORNER_CLASSES):
    """Deterministic round-robin class assignment with exact proportions."""
    return [classes[i % len(classes)] for i in range(count)]


def generate_dataset(
    out_dir,
    count: int,
    seed: int = 0,
    pano_w: int = 128,
    pano_h: int = 64,
    classes=CORNER_CLASSES,
    workers: int = 1,
) -> list:
    """Write a dataset directory: manifest.json plus per-sample files.

    Per-sample determinism comes from per-sample seeds derived from ``seed``.
    """
    from . import io as pio

    os.makedirs(out_dir, exist_ok=True)
    schedule = class_schedule(count, classes)
    frame = default_frame(pano_h)

    def build(i):
        sample_seed = seed * 1_000_003 + i
        spec = RoomSpec(corner_count=schedule[i], seed=sample_seed)
        sample = make_sample(spec, pano_w, pano_h, frame)
        sdir = os.path.join(out_dir, f"{i:05d}")
        os.makedirs(sdir, exist_ok=True)
        pio.write_rgb_png(os.path.join(sdir, "pano.png"), sample["pano_u8"])
        pio.write_plpm(os.path.join(sdir, "fc.plpm"), sample["mfc"])
        pio.write_plpm(os.path.join(sdir, "fp.plpm"), sample["mfp"])
        pio.save_layout(os.path.join(sdir, "layout.json"), sample["layout"])
        return {
            "id": f"{i:05d}",
            "corner_count": sample["layout"].n_corners,
            "panorama_path": f"{i:05d}/pano.png",
            "fc_map_path": f"{i:05d}/fc.plpm",
            "fp_map_path": f"{i:05d}/fp.plpm",
            "layout_path": f"{i:05d}/layout.json",
            "seed": sample_seed,
        }

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(build, range(count)))
    else:
        records = [build(i) for i in range(count)]
    pio.save_json(os.path.join(out_dir, "manifest.json"), records)
    return records


def load_dataset(root) -> list:
    """Load a generated dataset back into in-memory samples."""
    from . import io as pio

    records = pio.load_json(os.path.join(root, "manifest.json"))
    samples = []
    for rec in records:
        pano = pio.read_png(os.path.join(root, rec["panorama_path"]))
        layout = pio.load_layout(os.path.join(root, rec["layout_path"]))
        samples.append(
            {
                "id": rec["id"],
                "pano": pano.astype(np.float32) / 255.0,
                "mfc": pio.read_plpm(os.path.join(root, rec["fc_map_path"])),
                "mfp": pio.read_plpm(os.path.join(root, rec["fp_map_path"])),
                "height": layout.height_m,
                "layout": layout,
            }
        )
    return samples
