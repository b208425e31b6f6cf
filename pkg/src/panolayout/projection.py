"""Equirectangular <-> perspective conversions as samplable, differentiable warps.

Coordinate conventions (one consistent, documented choice):
  * camera frame is right-handed with +z the optical axis, +x pointing right
    and +y pointing down in the image plane;
  * world +y points down, so a growing arcsin(s_y) maps to a growing panorama
    row: normalized latitude -1 is the zenith row, +1 the nadir row;
  * pixel centers sit at half-integer offsets, i.e. pixel (px, py) of a w-by-w
    view corresponds to the camera-plane point (px + 0.5 - w/2, py + 0.5 - w/2);
  * the up (ceiling) view rotates camera points by +90 degrees about the
    x-axis, the down (floor) view by -90 degrees;
  * normalized longitude is arctan2(s_x, s_z) / pi so the full 360 degrees is
    covered (a single-ratio arctangent could not reach the back hemisphere
    that wide views need near their corners).

Sampling is bilinear with horizontal wrap and vertical clamp.

The sampling grids are built so that the four 90-degree rotations of a square
view share bit-identical interpolation weights.  As a consequence, circularly
shifting a panorama by a quarter of its width and warping equals warping first
and rotating the square view by 90 degrees, exactly, which the augmentation
pipeline relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError

UP = "up"
DOWN = "down"


def focal_length(fov_deg: float, size: int) -> float:
    """Pinhole focal length in pixels for a square view of side ``size``.

    f = 0.5 * size * cot(0.5 * fov)
    """
    if not 0.0 < fov_deg < 180.0:
        raise DomainError(f"fov must be in (0, 180) degrees, got {fov_deg}")
    if size <= 0:
        raise DomainError(f"view size must be positive, got {size}")
    half = math.radians(0.5 * fov_deg)
    return 0.5 * size / math.tan(half)


@dataclass(frozen=True)
class E2PConfig:
    """Perspective view looking straight up (ceiling) or down (floor)."""

    fov_deg: float
    size: int
    direction: str = UP

    def __post_init__(self):
        if self.direction not in (UP, DOWN):
            raise DomainError(f"direction must be 'up' or 'down', got {self.direction!r}")
        # validates fov/size as a side effect
        focal_length(self.fov_deg, self.size)

    @property
    def focal(self) -> float:
        return focal_length(self.fov_deg, self.size)


def _canonical_planar(a, b):
    """Rotate planar components (a, b) into the canonical quadrant.

    Returns (a_c, b_c, k) with a_c > 0, b_c >= 0 (or the origin) and k the
    number of 90-degree steps removed, so that the longitude of (a, b) is the
    canonical longitude plus k * pi/2.  Negations are exact in floating point,
    which makes every quantity derived from the canonical pair bit-identical
    across the four rotations of a square view.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k0 = (a > 0) & (b >= 0)
    k1 = (a >= 0) & (b < 0)
    k2 = (a < 0) & (b <= 0)
    # remaining non-origin points: (a <= 0) & (b > 0) -> k = 3
    origin = (a == 0) & (b == 0)
    k = np.where(k0, 0, np.where(k1, 1, np.where(k2, 2, 3)))
    k = np.where(origin, 0, k)
    a_c = np.where(k == 0, a, np.where(k == 1, -b, np.where(k == 2, -a, b)))
    b_c = np.where(k == 0, b, np.where(k == 1, a, np.where(k == 2, -b, -a)))
    # the degenerate center maps to longitude 0 (arctan2(+0, +0) convention)
    a_c = np.where(origin, 0.0, a_c)
    b_c = np.where(origin, 0.0, b_c)
    return a_c, b_c, k


def _plane_coords(cfg: E2PConfig):
    """Half-integer centered camera-plane coordinates for every view pixel."""
    w = cfg.size
    c = (np.arange(w, dtype=np.float64) + 0.5) - w / 2.0
    xc = np.broadcast_to(c[None, :], (w, w))
    yc = np.broadcast_to(c[:, None], (w, w))
    return xc, yc


def _project_arrays(xc, yc, cfg: E2PConfig):
    """Normalized equirect coordinates plus canonical pieces for plane points.

    Returns (pxn, pyn, lam_c, k) where pxn/pyn are the normalized coordinates
    in (-1, 1] x [-1, 1] and (lam_c, k) the canonical longitude decomposition.
    """
    f = cfg.focal
    if cfg.direction == UP:
        # (xc, yc, f) rotated +90 about x -> (xc, -f, yc)
        a, b, sy_num = xc, yc, -f
    else:
        # -90 about x -> (xc, f, -yc)
        a, b, sy_num = xc, np.negative(yc), f
    a_c, b_c, k = _canonical_planar(a, b)
    lam_c = np.arctan2(a_c, b_c)  # in [0, pi/2]
    norm = np.sqrt(a_c * a_c + b_c * b_c + f * f)
    pyn = np.arcsin(sy_num / norm) / (0.5 * math.pi)
    pxn = lam_c / math.pi + 0.5 * k
    pxn = np.where(pxn > 1.0, pxn - 2.0, pxn)
    return pxn, pyn, lam_c, k


def project_pixel(px: float, py: float, cfg: E2PConfig):
    """Map one view pixel to normalized equirect coordinates (pxn, pyn).

    Pixel (px, py) is taken at its center; the result satisfies
    pxn = arctan2(s_x, s_z)/pi and pyn = arcsin(s_y)/(pi/2) for the rotated,
    normalized view direction.
    """
    w = cfg.size
    if not (0 <= px < w and 0 <= py < w):
        raise DomainError(f"pixel ({px}, {py}) outside view of size {w}")
    xc = np.float64(px) + 0.5 - w / 2.0
    yc = np.float64(py) + 0.5 - w / 2.0
    pxn, pyn, _, _ = _project_arrays(np.float64(xc), np.float64(yc), cfg)
    return float(pxn), float(pyn)


@dataclass(frozen=True)
class SamplingGrid:
    """Precomputed bilinear lookup of a perspective view into a panorama.

    Stores, per output pixel, the normalized source coordinate, the four
    neighbor pixel indices (horizontal neighbors wrap, vertical ones clamp)
    and the bilinear weights, which sum to 1.
    """

    cfg: E2PConfig
    pano_w: int
    pano_h: int
    coords: np.ndarray   # (w, w, 2) normalized (pxn, pyn)
    ix0: np.ndarray
    ix1: np.ndarray
    iy0: np.ndarray
    iy1: np.ndarray
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray

    @property
    def flat_indices(self):
        wp = self.pano_w
        return (
            self.iy0 * wp + self.ix0,
            self.iy0 * wp + self.ix1,
            self.iy1 * wp + self.ix0,
            self.iy1 * wp + self.ix1,
        )


def _check_pano_dims(pano_w: int, pano_h: int):
    if pano_w != 2 * pano_h:
        raise DimensionError(f"panorama must be 2:1, got {pano_w}x{pano_h}")


@lru_cache(maxsize=64)
def build_grid(cfg: E2PConfig, pano_w: int, pano_h: int) -> SamplingGrid:
    """Precompute the sampling grid of ``cfg`` against a panorama raster.

    The column coordinate is assembled as (canonical part) + (exact multiples
    of pano_w/4), so pixels related by a 90-degree view rotation get
    bit-identical fractional parts.
    """
    _check_pano_dims(pano_w, pano_h)
    xc, yc = _plane_coords(cfg)
    pxn, pyn, lam_c, k = _project_arrays(xc, yc, cfg)

    # column coordinate: the canonical part is the same float for all four
    # rotations of a view pixel; the quarter-turn enters purely as an integer
    # column shift, so fractional parts (and hence weights) match bit-exactly
    u_base = lam_c * (pano_w / (2.0 * math.pi)) + (pano_w - 1) / 2.0
    ix0b = np.floor(u_base).astype(np.int64)
    if pano_w % 4 == 0:
        fx = u_base - ix0b
        shift = k.astype(np.int64) * (pano_w // 4)
        ix0 = ix0b + shift
    else:
        u = u_base + k * (pano_w / 4.0)
        ix0 = np.floor(u).astype(np.int64)
        fx = u - ix0
    v = (pyn + 1.0) * (pano_h / 2.0) - 0.5

    iy0f = np.floor(v)
    fy = v - iy0f
    ix0w = np.mod(ix0, pano_w)
    ix1w = np.mod(ix0 + 1, pano_w)
    iy0c = np.clip(iy0f.astype(np.int64), 0, pano_h - 1)
    iy1c = np.clip(iy0f.astype(np.int64) + 1, 0, pano_h - 1)

    one_m_fx = 1.0 - fx
    one_m_fy = 1.0 - fy
    return SamplingGrid(
        cfg=cfg,
        pano_w=pano_w,
        pano_h=pano_h,
        coords=np.stack([pxn, pyn], axis=-1),
        ix0=ix0w,
        ix1=ix1w,
        iy0=iy0c,
        iy1=iy1c,
        w00=one_m_fx * one_m_fy,
        w01=fx * one_m_fy,
        w10=one_m_fx * fy,
        w11=fx * fy,
    )


def _as_hwc(arr: np.ndarray):
    """View a (H, W) or (H, W, C) array as (H, W, C); returns (view, had_channels)."""
    if arr.ndim == 2:
        return arr[:, :, None], False
    if arr.ndim == 3:
        return arr, True
    raise DimensionError(f"expected 2-D or 3-D raster, got shape {arr.shape}")


def e2p(src: np.ndarray, cfg: E2PConfig) -> np.ndarray:
    """Warp an equirectangular raster into the perspective view of ``cfg``.

    Bilinear per channel; linear in the source pixel values.
    """
    src3, had_c = _as_hwc(np.asarray(src))
    h, w = src3.shape[:2]
    grid = build_grid(cfg, w, h)
    i00, i01, i10, i11 = grid.flat_indices
    flat = src3.reshape(h * w, src3.shape[2])
    dt = src3.dtype if src3.dtype in (np.float32, np.float64) else np.float64
    out = (
        grid.w00.astype(dt)[..., None] * flat[i00]
        + grid.w01.astype(dt)[..., None] * flat[i01]
        + grid.w10.astype(dt)[..., None] * flat[i10]
        + grid.w11.astype(dt)[..., None] * flat[i11]
    )
    return out if had_c else out[:, :, 0]


def e2p_backward(grad_out: np.ndarray, cfg: E2PConfig, pano_shape) -> np.ndarray:
    """Transpose of :func:`e2p`: scatter-add each output gradient into its
    four source pixels with the bilinear weights."""
    pano_h, pano_w = int(pano_shape[0]), int(pano_shape[1])
    g3, had_c = _as_hwc(np.asarray(grad_out))
    if g3.shape[0] != cfg.size or g3.shape[1] != cfg.size:
        raise DimensionError(
            f"grad shape {g3.shape[:2]} does not match view size {cfg.size}"
        )
    grid = build_grid(cfg, pano_w, pano_h)
    c = g3.shape[2]
    dt = g3.dtype if g3.dtype in (np.float32, np.float64) else np.float64
    acc = np.zeros((pano_h * pano_w, c), dtype=dt)
    gflat = g3.reshape(-1, c)
    for idx, wgt in zip(grid.flat_indices, (grid.w00, grid.w01, grid.w10, grid.w11)):
        np.add.at(acc, idx.ravel(), wgt.astype(dt).ravel()[:, None] * gflat)
    out = acc.reshape(pano_h, pano_w, c)
    return out if had_c else out[:, :, 0]


def _pano_directions(pano_w: int, pano_h: int):
    """Unit view directions of every panorama pixel center, shape (H, W, 3)."""
    lam = ((np.arange(pano_w, dtype=np.float64) + 0.5) / pano_w * 2.0 - 1.0) * math.pi
    lat = ((np.arange(pano_h, dtype=np.float64) + 0.5) / pano_h * 2.0 - 1.0) * (math.pi / 2)
    sin_lam, cos_lam = np.sin(lam)[None, :], np.cos(lam)[None, :]
    sin_lat, cos_lat = np.sin(lat)[:, None], np.cos(lat)[:, None]
    sx = cos_lat * sin_lam
    sy = np.broadcast_to(sin_lat, (pano_h, pano_w))
    sz = cos_lat * cos_lam
    return sx, sy, sz


def p2e_mask(src: np.ndarray, cfg: E2PConfig, pano_shape, fill: float = 0.0) -> np.ndarray:
    """Inverse warp: resample a perspective view back onto the panorama.

    Panorama pixels whose direction falls outside the view frustum receive
    ``fill``.
    """
    pano_h, pano_w = int(pano_shape[0]), int(pano_shape[1])
    _check_pano_dims(pano_w, pano_h)
    src3, had_c = _as_hwc(np.asarray(src))
    w = cfg.size
    if src3.shape[0] != w or src3.shape[1] != w:
        raise DimensionError(f"source shape {src3.shape[:2]} != view size {w}")
    f = cfg.focal
    sx, sy, sz = _pano_directions(pano_w, pano_h)
    if cfg.direction == UP:
        dx, dy, dz = sx, sz, -sy
    else:
        dx, dy, dz = sx, -sz, sy
    front = dz > 0
    safe_dz = np.where(front, dz, 1.0)
    px_plane = f * dx / safe_dz
    py_plane = f * dy / safe_dz
    half = w / 2.0
    inside = front & (np.abs(px_plane) <= half) & (np.abs(py_plane) <= half)

    uu = np.clip(px_plane + half - 0.5, -0.5, w - 0.5)
    vv = np.clip(py_plane + half - 0.5, -0.5, w - 0.5)
    ix0 = np.floor(uu)
    iy0 = np.floor(vv)
    fx = uu - ix0
    fy = vv - iy0
    ix0 = np.clip(ix0.astype(np.int64), 0, w - 1)
    ix1 = np.clip(ix0 + 1, 0, w - 1)
    iy0 = np.clip(iy0.astype(np.int64), 0, w - 1)
    iy1 = np.clip(iy0 + 1, 0, w - 1)

    flat = src3.reshape(w * w, src3.shape[2])
    dt = src3.dtype if src3.dtype in (np.float32, np.float64) else np.float64
    fx = fx.astype(dt)
    fy = fy.astype(dt)
    out = (
        ((1 - fx) * (1 - fy))[..., None] * flat[iy0 * w + ix0]
        + (fx * (1 - fy))[..., None] * flat[iy0 * w + ix1]
        + ((1 - fx) * fy)[..., None] * flat[iy1 * w + ix0]
        + (fx * fy)[..., None] * flat[iy1 * w + ix1]
    )
    out = np.where(inside[..., None], out, np.asarray(fill, dtype=dt))
    return out if had_c else out[:, :, 0]


def frustum_mask(cfg: E2PConfig, pano_w: int, pano_h: int) -> np.ndarray:
    """Boolean panorama mask of pixels whose direction the view can see."""
    ones = np.ones((cfg.size, cfg.size), dtype=np.float64)
    return p2e_mask(ones, cfg, (pano_h, pano_w), fill=0.0) > 0.5
