"""Manhattan floor-plan layouts, their 3-D extrusion and ground-truth rendering.

A layout is an axis-aligned rectilinear polygon on the ceiling plane, in
meters, counter-clockwise (positive shoelace area in the (x, z) plane), with
the camera at the origin strictly inside.  The camera sits a fixed 1.6 m below
the ceiling; the layout height H is the floor-to-ceiling distance, so the
floor lies H - 1.6 m below the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, FrameTooSmallError, InvalidLayoutError

CAMERA_TO_CEILING_M = 1.6


# ---------------------------------------------------------------------------
# polygon helpers (shared by fitting, metrics and the annotation service)


def shoelace_area(corners) -> float:
    pts = np.asarray(corners, dtype=np.float64)
    x, z = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(np.roll(x, -1), z))


def points_in_polygon(xs, zs, corners) -> np.ndarray:
    """Vectorized even-odd inside test; boundary handling is half-open and
    deterministic (a point exactly on an edge counts for the side whose
    crossing interval contains it)."""
    xs = np.asarray(xs, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    inside = np.zeros(np.broadcast(xs, zs).shape, dtype=bool)
    pts = list(corners)
    n = len(pts)
    for i in range(n):
        x0, z0 = pts[i]
        x1, z1 = pts[(i + 1) % n]
        if z0 == z1:
            continue
        cross = (z0 > zs) != (z1 > zs)
        t = (zs - z0) / (z1 - z0)
        xi = x0 + t * (x1 - x0)
        inside ^= cross & (xs < xi)
    return inside


def point_in_polygon(x: float, z: float, corners) -> bool:
    return bool(points_in_polygon(np.float64(x), np.float64(z), corners))


def distance_to_boundary(x: float, z: float, corners) -> float:
    """Distance from a point to the closest polygon edge."""
    best = math.inf
    pts = list(corners)
    n = len(pts)
    for i in range(n):
        x0, z0 = pts[i]
        x1, z1 = pts[(i + 1) % n]
        dx, dz = x1 - x0, z1 - z0
        denom = dx * dx + dz * dz
        if denom == 0:
            d = math.hypot(x - x0, z - z0)
        else:
            t = max(0.0, min(1.0, ((x - x0) * dx + (z - z0) * dz) / denom))
            d = math.hypot(x - (x0 + t * dx), z - (z0 + t * dz))
        best = min(best, d)
    return best


def _edges(corners):
    """List of (axis, const, lo, hi) per edge; axis 'x' means x is constant."""
    out = []
    pts = list(corners)
    n = len(pts)
    for i in range(n):
        x0, z0 = pts[i]
        x1, z1 = pts[(i + 1) % n]
        if x0 == x1 and z0 != z1:
            out.append(("x", x0, min(z0, z1), max(z0, z1)))
        elif z0 == z1 and x0 != x1:
            out.append(("z", z0, min(x0, x1), max(x0, x1)))
        else:
            out.append((None, 0.0, 0.0, 0.0))
    return out


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManhattanLayout:
    """Rectilinear ceiling footprint plus layout height."""

    corners: tuple
    height_m: float
    camera_to_ceiling_m: float = CAMERA_TO_CEILING_M

    def __post_init__(self):
        object.__setattr__(
            self, "corners", tuple((float(x), float(z)) for x, z in self.corners)
        )
        validate_layout(self)

    @property
    def n_corners(self) -> int:
        return len(self.corners)

    @property
    def area(self) -> float:
        return shoelace_area(self.corners)

    @property
    def floor_below_camera_m(self) -> float:
        return self.height_m - self.camera_to_ceiling_m

    def bounds(self):
        pts = np.asarray(self.corners)
        return (
            float(pts[:, 0].min()),
            float(pts[:, 0].max()),
            float(pts[:, 1].min()),
            float(pts[:, 1].max()),
        )

    def to_json_dict(self) -> dict:
        return {
            "height_m": self.height_m,
            "camera_to_ceiling_m": self.camera_to_ceiling_m,
            "corners": [[x, z] for x, z in self.corners],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ManhattanLayout":
        return ManhattanLayout(
            corners=tuple((float(x), float(z)) for x, z in d["corners"]),
            height_m=float(d["height_m"]),
            camera_to_ceiling_m=float(d.get("camera_to_ceiling_m", CAMERA_TO_CEILING_M)),
        )


def validate_layout(layout: ManhattanLayout):
    """Raise InvalidLayoutError unless all Manhattan-layout invariants hold."""
    pts = layout.corners
    n = len(pts)
    if n < 4:
        raise InvalidLayoutError(f"need at least 4 corners, got {n}")
    if n % 2 != 0:
        raise InvalidLayoutError(f"corner count must be even, got {n}")
    if layout.height_m <= layout.camera_to_ceiling_m:
        raise InvalidLayoutError(
            f"height {layout.height_m} must exceed camera-to-ceiling "
            f"{layout.camera_to_ceiling_m}"
        )
    if layout.camera_to_ceiling_m != CAMERA_TO_CEILING_M:
        raise InvalidLayoutError("camera-to-ceiling distance is fixed at 1.6 m")

    edges = _edges(pts)
    for i, e in enumerate(edges):
        if e[0] is None:
            raise InvalidLayoutError(f"edge {i} is zero-length or diagonal")
    for i in range(n):
        if edges[i][0] == edges[(i + 1) % n][0]:
            raise InvalidLayoutError(
                f"edges {i} and {(i + 1) % n} share axis {edges[i][0]!r} "
                "(collinear corner)"
            )

    # simplicity: no two non-adjacent edges may touch
    for i in range(n):
        ai, ci, lo_i, hi_i = edges[i]
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            aj, cj, lo_j, hi_j = edges[j]
            if ai == aj:
                if ci == cj and hi_i >= lo_j and hi_j >= lo_i:
                    raise InvalidLayoutError(f"collinear edges {i} and {j} overlap")
            else:
                # perpendicular: intersect iff each constant falls in the
                # other's span
                if lo_j <= ci <= hi_j and lo_i <= cj <= hi_i:
                    raise InvalidLayoutError(f"edges {i} and {j} intersect")

    if shoelace_area(pts) <= 0:
        raise InvalidLayoutError("corners must be counter-clockwise (positive area)")
    if not point_in_polygon(0.0, 0.0, pts) or distance_to_boundary(0.0, 0.0, pts) <= 0:
        raise InvalidLayoutError("camera origin must lie strictly inside the footprint")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prism3D:
    """Vertical extrusion of a footprint; elevations are up-positive and
    camera-referenced (ceiling at +1.6 m, floor at -(H - 1.6) m)."""

    footprint: tuple
    bottom_m: float
    top_m: float

    @property
    def height_m(self) -> float:
        return self.top_m - self.bottom_m

    @property
    def volume(self) -> float:
        return shoelace_area(self.footprint) * self.height_m


def extrude(layout: ManhattanLayout) -> Prism3D:
    """Extrude the footprint along the vertical by the layout height."""
    return Prism3D(
        footprint=layout.corners,
        bottom_m=-(layout.height_m - layout.camera_to_ceiling_m),
        top_m=layout.camera_to_ceiling_m,
    )


def floor_registration_scale(height_m: float) -> float:
    """Scale that registers the floor view with the ceiling view: 1.6/(H-1.6)."""
    if height_m <= CAMERA_TO_CEILING_M:
        raise DomainError(f"height must exceed {CAMERA_TO_CEILING_M} m, got {height_m}")
    return CAMERA_TO_CEILING_M / (height_m - CAMERA_TO_CEILING_M)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CeilingViewFrame:
    """Pixel embedding of the ceiling view: square raster, camera axis at the
    center, meters_per_pixel scale."""

    size: int
    meters_per_pixel: float

    def __post_init__(self):
        if self.size <= 0 or self.meters_per_pixel <= 0:
            raise DomainError("frame size and scale must be positive")

    @property
    def half_extent_m(self) -> float:
        return self.size / 2.0 * self.meters_per_pixel

    def pixel_to_meters(self, px):
        """Continuous pixel coordinate (center of pixel j at j) to meters."""
        return (np.asarray(px, dtype=np.float64) - (self.size - 1) / 2.0) * self.meters_per_pixel

    def meters_to_pixel(self, m):
        return np.asarray(m, dtype=np.float64) / self.meters_per_pixel + (self.size - 1) / 2.0

    def contains(self, layout: ManhattanLayout) -> bool:
        x0, x1, z0, z1 = layout.bounds()
        h = self.half_extent_m
        return max(abs(x0), abs(x1), abs(z0), abs(z1)) < h


def default_frame(size: int = 512, fov_deg: float = 160.0) -> CeilingViewFrame:
    """Frame that is pixel-aligned with the perspective ceiling view of the
    given fov at ceiling distance 1.6 m."""
    half_extent = CAMERA_TO_CEILING_M * math.tan(math.radians(fov_deg) / 2.0)
    return CeilingViewFrame(size=size, meters_per_pixel=2.0 * half_extent / size)


# ---------------------------------------------------------------------------
# panorama-side geometry


def _longitude_tables(pano_w: int):
    """(sin, cos) of every column's longitude.

    For widths divisible by 4 the table is assembled from the first quarter
    turn so that a quarter-width column shift corresponds to an exact
    (sin, cos) -> (cos, -sin) rotation, making joint 90-degree room rotations
    bit-exact.
    """
    lam = ((np.arange(pano_w, dtype=np.float64) + 0.5) / pano_w * 2.0 - 1.0) * math.pi
    if pano_w % 4 == 0:
        q = pano_w // 4
        s0 = np.sin(lam[:q])
        c0 = np.cos(lam[:q])
        sin_lam = np.concatenate([s0, c0, -s0, -c0])
        cos_lam = np.concatenate([c0, -s0, -c0, s0])
    else:
        sin_lam = np.sin(lam)
        cos_lam = np.cos(lam)
    return sin_lam, cos_lam


def wall_distances(layout: ManhattanLayout, pano_w: int):
    """First-hit wall distance and edge index per panorama column.

    Casts the horizontal ray of each column from the camera and intersects it
    with every footprint edge; returns (distances, edge_indices).
    """
    sin_lam, cos_lam = _longitude_tables(pano_w)
    dist = np.full(pano_w, np.inf)
    hit = np.full(pano_w, -1, dtype=np.int64)
    for i, (axis, c, lo, hi) in enumerate(_edges(layout.corners)):
        denom = sin_lam if axis == "x" else cos_lam
        other = cos_lam if axis == "x" else sin_lam
        with np.errstate(divide="ignore", invalid="ignore"):
            t = c / denom
            coord = t * other
        ok = (denom != 0) & (t > 0) & (coord >= lo) & (coord <= hi)
        better = ok & (t < dist)
        dist[better] = t[better]
        hit[better] = i
    assert (hit >= 0).all(), "camera inside a closed polygon must hit a wall"
    return dist, hit


def _latitudes(pano_h: int):
    return ((np.arange(pano_h, dtype=np.float64) + 0.5) / pano_h * 2.0 - 1.0) * (math.pi / 2)


def render_fc_map(layout: ManhattanLayout, pano_w: int, pano_h: int) -> np.ndarray:
    """Binary floor-ceiling map: 1 where the pixel ray first hits the ceiling
    or floor plane inside the footprint, 0 where it first hits a wall."""
    if pano_w != 2 * pano_h:
        raise DimensionError(f"panorama must be 2:1, got {pano_w}x{pano_h}")
    d1, _ = wall_distances(layout, pano_w)
    lat = _latitudes(pano_h)
    tan_lat = np.tan(lat)
    up = tan_lat < 0
    down = tan_lat > 0
    out = np.zeros((pano_h, pano_w), dtype=np.float32)
    # ceiling: reach range 1.6/|tan(lat)| at or before the wall
    reach_c = CAMERA_TO_CEILING_M / np.abs(tan_lat[up])
    out[up] = (reach_c[:, None] <= d1[None, :]).astype(np.float32)
    reach_f = layout.floor_below_camera_m / tan_lat[down]
    out[down] = (reach_f[:, None] <= d1[None, :]).astype(np.float32)
    return out


def render_fp_map(layout: ManhattanLayout, frame: CeilingViewFrame) -> np.ndarray:
    """Binary floor-plan map in the ceiling-view frame: 1 inside the footprint."""
    if not frame.contains(layout):
        raise FrameTooSmallError(
            f"frame half-extent {frame.half_extent_m:.3f} m does not contain layout"
        )
    coords = frame.pixel_to_meters(np.arange(frame.size))
    gx = np.broadcast_to(coords[None, :], (frame.size, frame.size))
    gz = np.broadcast_to(coords[:, None], (frame.size, frame.size))
    return points_in_polygon(gx, gz, layout.corners).astype(np.float32)


def rotate_layout_90(layout: ManhattanLayout, k: int = 1) -> ManhattanLayout:
    """Rotate the footprint about the vertical axis by k * 90 degrees, matching
    a panorama column shift of +k * W/4 columns."""
    corners = layout.corners
    for _ in range(k % 4):
        corners = tuple((z, -x) for x, z in corners)
    return ManhattanLayout(corners, layout.height_m)


def mirror_layout_x(layout: ManhattanLayout) -> ManhattanLayout:
    """Mirror the footprint in x (corner order reversed to stay CCW)."""
    corners = tuple((-x, z) for x, z in reversed(layout.corners))
    return ManhattanLayout(corners, layout.height_m)


# ---------------------------------------------------------------------------
# synthetic texture


def _smooth_noise(rng, h, w, cells, amp):
    """Low-frequency value noise: coarse grid, bilinear upsample."""
    coarse = rng.normal(0.0, amp, size=(cells, cells * 2))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells * 2 - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, cells - 1)
    x1 = np.minimum(x0 + 1, cells * 2 - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (
        coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + coarse[np.ix_(y0, x1)] * (1 - fy) * fx
        + coarse[np.ix_(y1, x0)] * fy * (1 - fx)
        + coarse[np.ix_(y1, x1)] * fy * fx
    )


def synth_texture(layout: ManhattanLayout, pano_w: int, pano_h: int, seed: int) -> np.ndarray:
    """Shaded RGB panorama of the room, deterministic in seed.

    Surfaces get distinct albedos plus low-frequency noise; brightness falls
    off with hit distance; wall-wall and wall-ceiling/floor junctions are
    darkened so boundaries carry strong image gradients.
    """
    if pano_w != 2 * pano_h:
        raise DimensionError(f"panorama must be 2:1, got {pano_w}x{pano_h}")
    rng = np.random.default_rng(seed)
    d1, hit_edge = wall_distances(layout, pano_w)
    lat = _latitudes(pano_h)
    tan_lat = np.tan(lat)[:, None]
    cos_lat = np.cos(lat)[:, None]
    sin_lam, cos_lam = _longitude_tables(pano_w)

    h_ceil = layout.camera_to_ceiling_m
    h_floor = layout.floor_below_camera_m
    fc = render_fc_map(layout, pano_w, pano_h)
    is_plane = fc > 0.5
    is_ceiling = is_plane & (tan_lat < 0)
    is_floor = is_plane & (tan_lat > 0)
    is_wall = ~is_plane

    # geometry per pixel
    with np.errstate(divide="ignore", invalid="ignore"):
        plane_range = np.where(
            tan_lat < 0, h_ceil / np.maximum(-tan_lat, 1e-12), h_floor / np.maximum(tan_lat, 1e-12)
        )
    wall_range = np.broadcast_to(d1[None, :], (pano_h, pano_w))
    hrange = np.where(is_plane, plane_range, wall_range)
    px = hrange * sin_lam[None, :]
    pz = hrange * cos_lam[None, :]
    wall_y = tan_lat * wall_range  # down-positive height on the wall
    dist3d = np.where(
        is_plane,
        np.hypot(hrange, np.where(tan_lat < 0, h_ceil, h_floor)),
        np.abs(wall_range) / np.maximum(cos_lat, 1e-9),
    )

    # albedo per class, slight tint per wall edge
    n_edges = len(layout.corners)
    wall_tones = 0.52 + 0.16 * rng.random(n_edges)
    base = np.empty((pano_h, pano_w, 3))
    base[..., 0] = np.where(is_ceiling, 0.93, np.where(is_floor, 0.48, wall_tones[hit_edge][None, :]))
    base[..., 1] = np.where(is_ceiling, 0.91, np.where(is_floor, 0.40, wall_tones[hit_edge][None, :] * 0.96))
    base[..., 2] = np.where(is_ceiling, 0.86, np.where(is_floor, 0.33, wall_tones[hit_edge][None, :] * 0.90))

    noise = np.stack(
        [_smooth_noise(rng, pano_h, pano_w, 12, 0.05) for _ in range(3)], axis=-1
    )
    shade = 1.0 / (1.0 + 0.06 * dist3d**2)

    # junction darkening
    seam = np.zeros((pano_h, pano_w), dtype=bool)
    seam_w = 0.05
    seam |= is_wall & (np.abs(wall_y + h_ceil) < seam_w)
    seam |= is_wall & (np.abs(wall_y - h_floor) < seam_w)
    # wall-wall junction: hit point close to a corner
    pts = np.asarray(layout.corners)
    corner_d = np.min(
        np.hypot(px[..., None] - pts[None, None, :, 0], pz[..., None] - pts[None, None, :, 1]),
        axis=-1,
    )
    seam |= is_wall & (corner_d < seam_w)
    # plane boundary: hit point close to a footprint edge
    bd = np.full((pano_h, pano_w), np.inf)
    for axis, c, lo, hi in _edges(layout.corners):
        if axis == "x":
            dseg = np.hypot(px - c, np.clip(pz, lo, hi) - pz)
        else:
            dseg = np.hypot(np.clip(px, lo, hi) - px, pz - c)
        bd = np.minimum(bd, dseg)
    seam |= is_plane & (bd < seam_w)

    img = base * (shade * (1.0 - 0.65 * seam))[..., None] + noise
    img = np.clip(img, 0.0, 1.0)
    return (img * 255.0 + 0.5).astype(np.uint8)
