"""Independent reference implementations used only by tests.

Everything here is deliberately written from scratch (mpmath scalar math,
brute-force rasterization, voxel counting, finite differences) so the tests
check the package against a second, unrelated path.
"""

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def oracle_focal(fov_deg, size):
    half = mp.radians(mp.mpf(fov_deg)) / 2
    return mp.mpf("0.5") * size / mp.tan(half)


def oracle_project_pixel(px, py, size, fov_deg, direction):
    """High-precision scalar chain: center, rotate +-90 about x, normalize,
    then longitude/latitude of the unit direction, in normalized units."""
    f = oracle_focal(fov_deg, size)
    xc = mp.mpf(px) + mp.mpf("0.5") - mp.mpf(size) / 2
    yc = mp.mpf(py) + mp.mpf("0.5") - mp.mpf(size) / 2
    # camera point (xc, yc, f); +90 about x: (x, y, z) -> (x, -z, y)
    if direction == "up":
        sx, sy, sz = xc, -f, yc
    else:
        sx, sy, sz = xc, f, -yc
    n = mp.sqrt(sx * sx + sy * sy + sz * sz)
    sx, sy, sz = sx / n, sy / n, sz / n
    if sx == 0 and sz == 0:
        lam = mp.mpf(0)
    else:
        lam = mp.atan2(sx, sz)
    pxn = lam / mp.pi
    pyn = mp.asin(sy) / (mp.pi / 2)
    return float(pxn), float(pyn)


def oracle_inside_frustum(lam, lat, size, fov_deg, direction):
    """Pyramid test for a panorama direction, plain scalar math."""
    import math

    f = 0.5 * size / math.tan(math.radians(fov_deg) / 2)
    sx = math.cos(lat) * math.sin(lam)
    sy = math.sin(lat)
    sz = math.cos(lat) * math.cos(lam)
    if direction == "up":
        dx, dy, dz = sx, sz, -sy
    else:
        dx, dy, dz = sx, -sz, sy
    if dz <= 0:
        return False
    half = size / 2.0
    return abs(f * dx / dz) <= half and abs(f * dy / dz) <= half


def shoelace_area(corners):
    a = 0.0
    n = len(corners)
    for i in range(n):
        x0, z0 = corners[i]
        x1, z1 = corners[(i + 1) % n]
        a += x0 * z1 - x1 * z0
    return 0.5 * a


def point_in_polygon(x, z, corners):
    """Even-odd rule, scalar."""
    inside = False
    n = len(corners)
    for i in range(n):
        x0, z0 = corners[i]
        x1, z1 = corners[(i + 1) % n]
        if (z0 > z) != (z1 > z):
            t = (z - z0) / (z1 - z0)
            xi = x0 + t * (x1 - x0)
            if x < xi:
                inside = not inside
    return inside


def raster_iou2d(corners_a, corners_b, n=2048):
    """Brute-force rasterized 2-D IoU over the joint bounding box."""
    pts = np.array(list(corners_a) + list(corners_b), dtype=np.float64)
    lo = pts.min(axis=0) - 0.05
    hi = pts.max(axis=0) + 0.05
    xs = np.linspace(lo[0], hi[0], n, endpoint=False) + (hi[0] - lo[0]) / (2 * n)
    zs = np.linspace(lo[1], hi[1], n, endpoint=False) + (hi[1] - lo[1]) / (2 * n)
    gx, gz = np.meshgrid(xs, zs)
    in_a = _vec_in_poly(gx, gz, corners_a)
    in_b = _vec_in_poly(gx, gz, corners_b)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union if union else 0.0


def _vec_in_poly(gx, gz, corners):
    inside = np.zeros(gx.shape, dtype=bool)
    n = len(corners)
    for i in range(n):
        x0, z0 = corners[i]
        x1, z1 = corners[(i + 1) % n]
        if z0 == z1:
            continue
        cross = (z0 > gz) != (z1 > gz)
        t = (gz - z0) / (z1 - z0)
        xi = x0 + t * (x1 - x0)
        inside ^= cross & (gx < xi)
    return inside


def voxel_iou3d(corners_a, h_a, corners_b, h_b, n=256):
    """Literal voxelization of both camera-referenced prisms.

    Both ceilings sit at +1.6 m; the floors at 1.6 - H.
    """
    pts = np.array(list(corners_a) + list(corners_b), dtype=np.float64)
    lo = pts.min(axis=0) - 0.05
    hi = pts.max(axis=0) + 0.05
    y_lo = 1.6 - max(h_a, h_b) - 0.05
    y_hi = 1.6 + 0.05
    xs = np.linspace(lo[0], hi[0], n, endpoint=False) + (hi[0] - lo[0]) / (2 * n)
    zs = np.linspace(lo[1], hi[1], n, endpoint=False) + (hi[1] - lo[1]) / (2 * n)
    ys = np.linspace(y_lo, y_hi, n, endpoint=False) + (y_hi - y_lo) / (2 * n)
    gx, gz = np.meshgrid(xs, zs)
    fa = _vec_in_poly(gx, gz, corners_a)
    fb = _vec_in_poly(gx, gz, corners_b)
    za = (ys >= 1.6 - h_a) & (ys <= 1.6)
    zb = (ys >= 1.6 - h_b) & (ys <= 1.6)
    vol_a = np.count_nonzero(fa) * np.count_nonzero(za)
    vol_b = np.count_nonzero(fb) * np.count_nonzero(zb)
    inter = np.count_nonzero(fa & fb) * np.count_nonzero(za & zb)
    union = vol_a + vol_b - inter
    return inter / union if union else 0.0


def finite_difference_grad(fun, x, h=1e-4):
    """Central-difference gradient of scalar fun at x (flattened loop)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g
