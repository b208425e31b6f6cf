"""Floor-plan fitting: fuse probability maps, binarize, trace, cluster axis
lines, vote grid cells and emit a Manhattan layout.

All pixel-space geometry uses "crack" coordinates: pixel (r, c) occupies the
unit square centered at (c, r), so region boundaries run along half-integer
coordinates.  Columns map to the +x axis and rows to the +z axis of the
ceiling-view frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import projection as proj
from .errors import (
    CameraOutsideError,
    DegenerateGeometryError,
    DimensionError,
    DisconnectedCellsError,
    DomainError,
    EmptyMaskError,
)
from .layout import (
    CAMERA_TO_CEILING_M,
    CeilingViewFrame,
    ManhattanLayout,
    default_frame,
    floor_registration_scale,
)

FUSE_W_FP = 0.5
FUSE_W_CEILING = 0.25
FUSE_W_FLOOR = 0.25


@dataclass(frozen=True)
class FitParams:
    """Tunables of the fitting post-process (fractions of the bounding-rect
    diagonal unless stated otherwise)."""

    dp_epsilon_frac: float = 0.01
    cluster_delta_frac: float = 0.05
    min_line_sep_px: float = 1.0
    binarize_threshold: float = 0.5
    cell_include_threshold: float = 0.5


@dataclass
class FitDebug:
    """Intermediate stages captured for inspection dumps."""

    mfc_ceiling: np.ndarray = None
    mfc_floor: np.ndarray = None
    fused: np.ndarray = None
    mask: np.ndarray = None
    rect: tuple = None
    polyline: np.ndarray = None
    lines: "AxisLineSet" = None
    cells: "CellGrid" = None


# ---------------------------------------------------------------------------
# map preparation


def _frame_fov_deg(frame: CeilingViewFrame) -> float:
    """Field of view whose perspective warp is pixel-aligned with the frame."""
    return 2.0 * math.degrees(math.atan(frame.half_extent_m / CAMERA_TO_CEILING_M))


def _zoom_about_center(img: np.ndarray, scale: float) -> np.ndarray:
    """Resample so output pixel p takes the value at center + scale*(p - center).

    Bilinear; samples outside the source raster produce 0.
    """
    n = img.shape[0]
    c = (n - 1) / 2.0
    coords = c + scale * (np.arange(n, dtype=np.float64) - c)
    valid1d = (coords >= -0.5) & (coords <= n - 0.5)
    i0 = np.floor(coords).astype(np.int64)
    f = coords - i0
    i0c = np.clip(i0, 0, n - 1)
    i1c = np.clip(i0 + 1, 0, n - 1)
    rows = img[i0c] * (1 - f)[:, None] + img[i1c] * f[:, None]
    out = rows[:, i0c] * (1 - f)[None, :] + rows[:, i1c] * f[None, :]
    out = np.where(valid1d[:, None] & valid1d[None, :], out, 0.0)
    return out


def split_fc(m_fc: np.ndarray, height_m: float, frame: CeilingViewFrame):
    """Project the ceiling and floor halves of a floor-ceiling map into the
    ceiling-view frame.

    The floor half is mirrored into the ceiling view's orientation (a row flip
    under this package's axis conventions) and rescaled about the frame center
    by 1.6/(H - 1.6) so both footprints register.
    """
    scale = floor_registration_scale(height_m)  # validates height
    m_fc = np.asarray(m_fc, dtype=np.float64)
    if m_fc.ndim != 2 or m_fc.shape[1] != 2 * m_fc.shape[0]:
        raise DimensionError(f"floor-ceiling map must be 2:1, got {m_fc.shape}")
    h = m_fc.shape[0]
    fov = _frame_fov_deg(frame)
    up_cfg = proj.E2PConfig(fov, frame.size, proj.UP)
    down_cfg = proj.E2PConfig(fov, frame.size, proj.DOWN)

    ceiling_half = m_fc.copy()
    ceiling_half[h // 2 :] = 0.0
    mfc_c = proj.e2p(ceiling_half, up_cfg)

    floor_half = m_fc.copy()
    floor_half[: h // 2] = 0.0
    floor_view = proj.e2p(floor_half, down_cfg)
    mfc_f = _zoom_about_center(floor_view[::-1], scale)
    return mfc_c, mfc_f


def fuse(m_fp: np.ndarray, mfc_c: np.ndarray, mfc_f: np.ndarray) -> np.ndarray:
    """Convex combination 0.5*M_FP + 0.25*ceiling + 0.25*floor."""
    m_fp = np.asarray(m_fp, dtype=np.float64)
    if m_fp.shape != np.shape(mfc_c) or m_fp.shape != np.shape(mfc_f):
        raise DimensionError(
            f"map shapes differ: {m_fp.shape} vs {np.shape(mfc_c)} vs {np.shape(mfc_f)}"
        )
    return FUSE_W_FP * m_fp + FUSE_W_CEILING * np.asarray(mfc_c) + FUSE_W_FLOOR * np.asarray(mfc_f)


# ---------------------------------------------------------------------------
# mask processing


def binarize_and_select(fused: np.ndarray, threshold: float = 0.5):
    """Threshold (strict) and keep the largest 8-connected component.

    Returns (mask, rect) with rect = (x0, x1, z0, z1) in crack coordinates.
    """
    fg = np.asarray(fused) > threshold
    if not fg.any():
        raise EmptyMaskError("empty mask: no pixel exceeds the threshold")
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        keep = int(sizes.argmax())
        mask = labels == keep
    else:
        mask = fg
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    rect = (cols[0] - 0.5, cols[-1] + 0.5, rows[0] - 0.5, rows[-1] + 0.5)
    return mask, rect


_LEFT_OF = {(0, 1): (-1, 0), (1, 0): (0, 1), (0, -1): (1, 0), (-1, 0): (0, -1)}
_RIGHT_OF = {v: k for k, v in _LEFT_OF.items()}


def _flank_pixels(pos, cand):
    """Pixels left/right of the crack segment starting at corner ``pos``
    heading ``cand`` (image coords: x right, z down)."""
    i, j = pos
    if cand == (0, 1):     # east
        return (i - 1, j), (i, j)
    if cand == (0, -1):    # west
        return (i, j - 1), (i - 1, j - 1)
    if cand == (1, 0):     # south
        return (i, j), (i, j - 1)
    return (i - 1, j - 1), (i - 1, j)  # north


def _trace_crack_loop(mask: np.ndarray):
    """Outer boundary of a connected region as lattice corner indices.

    Corner (i, j) corresponds to crack coordinate (j - 0.5, i - 0.5).  The
    walk keeps the region on its left; at diagonal pinch corners the
    right-most turn is taken, which keeps 8-connected foreground in one loop.
    Collinear corners are compressed away.
    """
    h, w = mask.shape

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and bool(mask[r, c])

    rs, cs = np.nonzero(mask)
    start_r = int(rs.min())
    start_c = int(cs[rs == start_r].min())
    start = (start_r, start_c)  # top-left corner of the topmost-leftmost pixel
    heading = (1, 0)            # its left crack edge, downward (region on left)
    pos = start
    corners = [start]
    for _ in range(4 * (h + 1) * (w + 1) + 4):
        pos = (pos[0] + heading[0], pos[1] + heading[1])
        if pos == start:
            break
        corners.append(pos)
        for cand in (_RIGHT_OF[heading], heading, _LEFT_OF[heading],
                     (-heading[0], -heading[1])):
            lp, rp = _flank_pixels(pos, cand)
            if fg(*lp) and not fg(*rp):
                heading = cand
                break
        else:
            raise DegenerateGeometryError("boundary walk got stuck")
    else:
        raise DegenerateGeometryError("boundary walk did not close")

    out = []
    n = len(corners)
    for t in range(n):
        p_prev, p, p_next = corners[t - 1], corners[t], corners[(t + 1) % n]
        if (p_prev[0] == p[0] == p_next[0]) or (p_prev[1] == p[1] == p_next[1]):
            continue
        out.append(p)
    return out


def _douglas_peucker(points, eps):
    """Iterative endpoint-keeping simplification of an open polyline."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n <= 2:
        return [tuple(p) for p in pts]
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        seg = pts[a + 1 : b]
        pa, pb = pts[a], pts[b]
        d = pb - pa
        norm = math.hypot(d[0], d[1])
        if norm == 0:
            dists = np.hypot(seg[:, 0] - pa[0], seg[:, 1] - pa[1])
        else:
            dists = np.abs(d[0] * (pa[1] - seg[:, 1]) - (pa[0] - seg[:, 0]) * d[1]) / norm
        imax = int(np.argmax(dists))
        if dists[imax] > eps:
            m = a + 1 + imax
            keep[m] = True
            stack.append((a, m))
            stack.append((m, b))
    return [tuple(p) for p in pts[keep]]


def trace_and_simplify(mask: np.ndarray, epsilon: float = None) -> np.ndarray:
    """Closed outer-boundary loop of the mask, simplified, counter-clockwise.

    ``epsilon`` defaults to 1% of the component's bounding-box diagonal.
    Returns an (N, 2) array of (x, z) crack coordinates, implicitly closed.
    """
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    if rows.size == 0:
        raise EmptyMaskError("mask is empty")
    if rows[-1] - rows[0] < 1 or cols[-1] - cols[0] < 1:
        raise DegenerateGeometryError("component thinner than 2 px")
    if epsilon is None:
        epsilon = 0.01 * math.hypot(cols[-1] - cols[0] + 1, rows[-1] - rows[0] + 1)

    loop = _trace_crack_loop(mask)
    pts = [(j - 0.5, i - 0.5) for i, j in loop]  # (x, z)

    # split the closed loop at two far-apart anchors, simplify both halves
    arr = np.asarray(pts)
    centroid = arr.mean(axis=0)
    a_idx = int(np.argmax(((arr - centroid) ** 2).sum(axis=1)))
    d_from_a = ((arr - arr[a_idx]) ** 2).sum(axis=1)
    b_idx = int(np.argmax(d_from_a))
    lo, hi = sorted((a_idx, b_idx))
    first = pts[lo : hi + 1]
    second = pts[hi:] + pts[: lo + 1]
    simp = _douglas_peucker(first, epsilon)[:-1] + _douglas_peucker(second, epsilon)[:-1]
    out = np.asarray(simp, dtype=np.float64)

    # counter-clockwise by shoelace in (x, z)
    x, z = out[:, 0], out[:, 1]
    area = 0.5 * (np.dot(x, np.roll(z, -1)) - np.dot(np.roll(x, -1), z))
    if area < 0:
        out = out[::-1]
    return out


# ---------------------------------------------------------------------------
# line clustering and cell voting


@dataclass(frozen=True)
class AxisLineSet:
    """Clustered axis-aligned wall lines plus the bounding rectangle.

    ``xs`` are x-coordinates of vertical lines, ``zs`` z-coordinates of
    horizontal lines (crack space); both strictly increasing and both include
    the bounding-rectangle edges.
    """

    xs: np.ndarray
    zs: np.ndarray
    rect: tuple


def _cluster_1d(coords, weights, delta):
    """Greedy nearest-pair agglomeration below ``delta``; weighted means."""
    items = sorted(zip(coords, weights))
    coords = [c for c, _ in items]
    weights = [w for _, w in items]
    while len(coords) > 1:
        gaps = [coords[i + 1] - coords[i] for i in range(len(coords) - 1)]
        i = int(np.argmin(gaps))
        if gaps[i] >= delta:
            break
        w = weights[i] + weights[i + 1]
        c = (coords[i] * weights[i] + coords[i + 1] * weights[i + 1]) / w
        coords[i : i + 2] = [c]
        weights[i : i + 2] = [w]
    return coords


def regress_and_cluster(polyline: np.ndarray, rect, delta: float = None,
                        min_sep: float = 1.0) -> AxisLineSet:
    """Classify simplified edges by axis, reduce each to its length-weighted
    perpendicular coordinate, cluster within ``delta`` and append the
    bounding-rectangle edges."""
    pts = np.asarray(polyline, dtype=np.float64)
    if len(pts) < 4:
        raise DegenerateGeometryError(f"need at least 4 vertices, got {len(pts)}")
    x0r, x1r, z0r, z1r = rect
    if not (x1r > x0r and z1r > z0r):
        raise DegenerateGeometryError("bounding rectangle is degenerate")
    if delta is None:
        delta = 0.05 * math.hypot(x1r - x0r, z1r - z0r)

    nxt = np.roll(pts, -1, axis=0)
    dx = nxt[:, 0] - pts[:, 0]
    dz = nxt[:, 1] - pts[:, 1]
    length = np.hypot(dx, dz)
    horizontal = np.abs(dz) <= np.abs(dx)  # within 45 degrees of the x-axis

    z_coords = ((pts[:, 1] + nxt[:, 1]) / 2.0)[horizontal]
    z_weights = length[horizontal]
    x_coords = ((pts[:, 0] + nxt[:, 0]) / 2.0)[~horizontal]
    x_weights = length[~horizontal]

    def finish(coords, weights, lo, hi):
        clustered = _cluster_1d(list(coords), list(weights), delta) if len(coords) else []
        margin = max(delta, min_sep)
        interior = [c for c in clustered if lo + margin < c < hi - margin]
        return np.asarray([lo] + interior + [hi], dtype=np.float64)

    xs = finish(x_coords, x_weights, x0r, x1r)
    zs = finish(z_coords, z_weights, z0r, z1r)
    if len(xs) < 2 or len(zs) < 2:
        raise DegenerateGeometryError("fewer than two lines on an axis")
    return AxisLineSet(xs=xs, zs=zs, rect=tuple(rect))


@dataclass(frozen=True)
class CellGrid:
    """Occupancy vote of the disjoint cells induced by an AxisLineSet."""

    lines: AxisLineSet
    ratio: np.ndarray    # (nz, nx)
    include: np.ndarray  # bool (nz, nx)


def vote_cells(mask: np.ndarray, lines: AxisLineSet, threshold: float = 0.5) -> CellGrid:
    """Per-cell foreground ratio; a cell is included iff ratio > threshold.

    Cells that contain no pixel centers are dropped (never included).
    """
    h, w = mask.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)

    def pix_range(vals, n):
        idx = np.clip(np.ceil(vals).astype(np.int64), 0, n)
        return idx

    cx = pix_range(lines.xs, w)
    cz = pix_range(lines.zs, h)
    nx, nz = len(cx) - 1, len(cz) - 1
    ratio = np.zeros((nz, nx))
    include = np.zeros((nz, nx), dtype=bool)
    for iz in range(nz):
        r0, r1 = cz[iz], cz[iz + 1]
        for ix in range(nx):
            c0, c1 = cx[ix], cx[ix + 1]
            total = (r1 - r0) * (c1 - c0)
            if total <= 0:
                continue
            fgc = int(
                integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
            )
            ratio[iz, ix] = fgc / total
            include[iz, ix] = ratio[iz, ix] > threshold
    return CellGrid(lines=lines, ratio=ratio, include=include)


def _trace_cell_union(include: np.ndarray):
    """Boundary of the included-cell union as corner lattice indices."""
    return _trace_crack_loop(include)


def cells_to_layout(grid: CellGrid, frame: CeilingViewFrame, height_m: float) -> ManhattanLayout:
    """Outer boundary of the included-cell union, in meters, with collinear
    corners removed."""
    include = grid.include
    if not include.any():
        raise EmptyMaskError("no cell included")
    labels, n = ndimage.label(include)  # 4-connectivity
    if n != 1:
        raise DisconnectedCellsError(f"included cells form {n} regions")
    center = (frame.size - 1) / 2.0
    xs, zs = grid.lines.xs, grid.lines.zs
    cix = int(np.searchsorted(xs, center, side="right")) - 1
    ciz = int(np.searchsorted(zs, center, side="right")) - 1
    if not (0 <= cix < include.shape[1] and 0 <= ciz < include.shape[0]) or not include[ciz, cix]:
        raise CameraOutsideError("camera cell is not part of the footprint")

    loop = _trace_crack_loop(include)
    # corner lattice index (i, j) corresponds to line coordinates (zs[i], xs[j])
    pts_px = [(xs[j], zs[i]) for i, j in loop]
    arr = np.asarray(pts_px, dtype=np.float64)
    x, z = arr[:, 0], arr[:, 1]
    area = 0.5 * (np.dot(x, np.roll(z, -1)) - np.dot(np.roll(x, -1), z))
    if area < 0:
        arr = arr[::-1]
    corners_m = tuple(
        (float(frame.pixel_to_meters(px)), float(frame.pixel_to_meters(pz)))
        for px, pz in arr
    )
    return ManhattanLayout(corners=corners_m, height_m=float(height_m))


# ---------------------------------------------------------------------------
# full pipeline


def fit(
    m_fp: np.ndarray,
    m_fc: np.ndarray,
    height_m: float,
    frame: CeilingViewFrame = None,
    params: FitParams = FitParams(),
    debug: FitDebug = None,
) -> ManhattanLayout:
    """Full post-process: fused map -> largest component -> simplified
    boundary -> clustered axis lines -> voted cells -> Manhattan layout."""
    if height_m <= CAMERA_TO_CEILING_M:
        raise DomainError(f"height must exceed {CAMERA_TO_CEILING_M} m, got {height_m}")
    m_fp = np.asarray(m_fp)
    if m_fp.ndim != 2 or m_fp.shape[0] != m_fp.shape[1]:
        raise DimensionError(f"floor-plan map must be square, got {m_fp.shape}")
    if frame is None:
        frame = default_frame(m_fp.shape[0])
    if frame.size != m_fp.shape[0]:
        raise DimensionError(
            f"frame size {frame.size} != floor-plan map size {m_fp.shape[0]}"
        )

    mfc_c, mfc_f = split_fc(m_fc, height_m, frame)
    fused = fuse(m_fp, mfc_c, mfc_f)
    mask, rect = binarize_and_select(fused, params.binarize_threshold)
    diag = math.hypot(rect[1] - rect[0], rect[3] - rect[2])
    polyline = trace_and_simplify(mask, epsilon=params.dp_epsilon_frac * diag)
    lines = regress_and_cluster(
        polyline, rect, delta=params.cluster_delta_frac * diag, min_sep=params.min_line_sep_px
    )
    cells = vote_cells(mask, lines, params.cell_include_threshold)
    layout = cells_to_layout(cells, frame, height_m)
    if debug is not None:
        debug.mfc_ceiling = mfc_c
        debug.mfc_floor = mfc_f
        debug.fused = fused
        debug.mask = mask
        debug.rect = rect
        debug.polyline = polyline
        debug.lines = lines
        debug.cells = cells
    return layout
