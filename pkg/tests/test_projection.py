import math

import numpy as np
import pytest

from panolayout import projection as P
from panolayout.errors import DimensionError, DomainError

from oracles import oracle_inside_frustum, oracle_project_pixel


def test_focal_length_values():
    assert P.focal_length(90.0, 2) == pytest.approx(1.0, abs=1e-12)
    # high-precision references: 256*tan(10 deg), 256*cot(30 deg)
    assert P.focal_length(160.0, 512) == pytest.approx(45.13970706136705, abs=1e-10)
    assert P.focal_length(60.0, 512) == pytest.approx(443.40500673763256, abs=1e-9)


def test_focal_length_domain():
    with pytest.raises(DomainError):
        P.focal_length(0.0, 64)
    with pytest.raises(DomainError):
        P.focal_length(180.0, 64)
    with pytest.raises(DomainError):
        P.focal_length(-10.0, 64)


def test_project_center_pixels():
    up = P.E2PConfig(160.0, 5, P.UP)
    assert P.project_pixel(2, 2, up) == (0.0, -1.0)
    down = P.E2PConfig(160.0, 5, P.DOWN)
    assert P.project_pixel(2, 2, down) == (0.0, 1.0)


@pytest.mark.parametrize("direction", [P.UP, P.DOWN])
def test_project_pixel_matches_scalar_oracle(direction):
    cfg = P.E2PConfig(160.0, 512, direction)
    for px, py in [(511, 255), (511, 256), (0, 0), (300, 17), (128, 384)]:
        got = P.project_pixel(px, py, cfg)
        want = oracle_project_pixel(px, py, 512, 160.0, direction)
        assert got[0] == pytest.approx(want[0], abs=1e-12)
        assert got[1] == pytest.approx(want[1], abs=1e-12)


def test_directions_are_unit_length():
    cfg = P.E2PConfig(160.0, 64, P.UP)
    for px, py in [(0, 0), (31, 31), (63, 5), (10, 60)]:
        pxn, pyn = P.project_pixel(px, py, cfg)
        lam = pxn * math.pi
        lat = pyn * math.pi / 2
        sx = math.cos(lat) * math.sin(lam)
        sy = math.sin(lat)
        sz = math.cos(lat) * math.cos(lam)
        assert abs(sx * sx + sy * sy + sz * sz - 1.0) < 1e-9


def test_build_grid_requires_2_to_1():
    cfg = P.E2PConfig(160.0, 16, P.UP)
    with pytest.raises(DimensionError):
        P.build_grid(cfg, 100, 60)


def test_grid_weights_and_wrap():
    cfg = P.E2PConfig(160.0, 64, P.UP)
    g = P.build_grid(cfg, 128, 64)
    for w in (g.w00, g.w01, g.w10, g.w11):
        assert (w >= 0).all() and (w <= 1).all()
    total = g.w00 + g.w01 + g.w10 + g.w11
    assert np.abs(total - 1.0).max() < 1e-12
    for ix in (g.ix0, g.ix1):
        assert ix.min() >= 0 and ix.max() < 128
    for iy in (g.iy0, g.iy1):
        assert iy.min() >= 0 and iy.max() < 64


def test_grid_single_pixel_view():
    cfg = P.E2PConfig(90.0, 1, P.UP)
    g = P.build_grid(cfg, 8, 4)
    assert tuple(g.coords[0, 0]) == P.project_pixel(0, 0, cfg)


def test_grid_matches_project_pixel_exhaustively():
    cfg = P.E2PConfig(160.0, 64, P.UP)
    g = P.build_grid(cfg, 128, 64)
    for i in range(64):
        for j in range(64):
            pxn, pyn = P.project_pixel(j, i, cfg)
            assert g.coords[i, j, 0] == pxn
            assert g.coords[i, j, 1] == pyn


def test_grid_determinism():
    cfg = P.E2PConfig(160.0, 32, P.DOWN)
    g1 = P.build_grid(cfg, 64, 32)
    P.build_grid.cache_clear()
    g2 = P.build_grid(cfg, 64, 32)
    assert np.array_equal(g1.coords, g2.coords)
    assert np.array_equal(g1.w00, g2.w00)
    assert np.array_equal(g1.ix0, g2.ix0)


def test_e2p_constant_map():
    cfg = P.E2PConfig(160.0, 32, P.UP)
    pano = np.full((32, 64), 3.25)
    out = P.e2p(pano, cfg)
    assert out.shape == (32, 32)
    assert np.abs(out - 3.25).max() < 1e-12


def test_e2p_linearity():
    cfg = P.E2PConfig(160.0, 32, P.UP)
    rng = np.random.default_rng(7)
    a_img = rng.random((32, 64))
    b_img = rng.random((32, 64))
    a, b = 1.7, -0.6
    lhs = P.e2p(a * a_img + b * b_img, cfg)
    rhs = a * P.e2p(a_img, cfg) + b * P.e2p(b_img, cfg)
    assert np.abs(lhs - rhs).max() < 1e-6


def test_e2p_one_hot_matches_grid_weights():
    cfg = P.E2PConfig(160.0, 16, P.UP)
    W, H = 64, 32
    g = P.build_grid(cfg, W, H)
    r, c = 3, 30
    pano = np.zeros((H, W))
    pano[r, c] = 1.0
    out = P.e2p(pano, cfg)
    flat = r * W + c
    expected = np.zeros((16, 16))
    for idx, wgt in zip(g.flat_indices, (g.w00, g.w01, g.w10, g.w11)):
        expected += np.where(idx == flat, wgt, 0.0)
    assert np.array_equal(out, expected) or np.abs(out - expected).max() < 1e-15


def test_e2p_dimension_error():
    cfg = P.E2PConfig(160.0, 16, P.UP)
    with pytest.raises(DimensionError):
        P.e2p(np.zeros((32, 65)), cfg)


def test_backward_zeros():
    cfg = P.E2PConfig(160.0, 16, P.UP)
    out = P.e2p_backward(np.zeros((16, 16)), cfg, (32, 64))
    assert out.shape == (32, 64)
    assert not out.any()


def test_adjointness():
    cfg = P.E2PConfig(160.0, 32, P.DOWN)
    rng = np.random.default_rng(3)
    x = rng.random((32, 64))
    y = rng.random((32, 32))
    lhs = float((P.e2p(x, cfg) * y).sum())
    rhs = float((x * P.e2p_backward(y, cfg, (32, 64))).sum())
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))


def test_backward_matches_finite_differences():
    # d/dx of sum(e2p(x) * y) is e2p_backward(y); central differences h=1e-4
    cfg = P.E2PConfig(140.0, 8, P.UP)
    rng = np.random.default_rng(11)
    x = rng.random((8, 16))
    y = rng.random((8, 8))
    analytic = P.e2p_backward(y, cfg, (8, 16))
    h = 1e-4
    worst = 0.0
    for r in range(8):
        for c in range(16):
            xp = x.copy()
            xp[r, c] += h
            xm = x.copy()
            xm[r, c] -= h
            fd = ((P.e2p(xp, cfg) * y).sum() - (P.e2p(xm, cfg) * y).sum()) / (2 * h)
            scale = max(abs(fd), abs(analytic[r, c]), 1e-8)
            worst = max(worst, abs(fd - analytic[r, c]) / scale)
    assert worst < 1e-5


def test_full_turn_shift_exact():
    cfg = P.E2PConfig(160.0, 64, P.UP)
    rng = np.random.default_rng(5)
    pano = rng.random((64, 128))
    assert np.array_equal(P.e2p(np.roll(pano, 128, axis=1), cfg), P.e2p(pano, cfg))


@pytest.mark.parametrize(
    "direction,shift,k",
    [(P.UP, 32, 1), (P.UP, -32, 3), (P.UP, 64, 2), (P.DOWN, 32, 3), (P.DOWN, -32, 1)],
)
def test_quarter_shift_equals_rotated_view_exactly(direction, shift, k):
    cfg = P.E2PConfig(160.0, 64, direction)
    rng = np.random.default_rng(9)
    pano = rng.random((64, 128))
    shifted = P.e2p(np.roll(pano, shift, axis=1), cfg)
    rotated = np.rot90(P.e2p(pano, cfg), k)
    assert np.array_equal(shifted, rotated)


def test_p2e_constant_inside_fill_outside():
    cfg = P.E2PConfig(160.0, 32, P.UP)
    src = np.full((32, 32), 2.0)
    out = P.p2e_mask(src, cfg, (32, 64), fill=-1.0)
    mask = P.frustum_mask(cfg, 64, 32)
    assert np.abs(out[mask] - 2.0).max() < 1e-12
    assert np.abs(out[~mask] + 1.0).max() < 1e-12


def test_p2e_roundtrip_psnr():
    # smooth radial gradient on the square view; e2p(p2e(I)) vs I centrally
    cfg = P.E2PConfig(160.0, 64, P.UP)
    yy, xx = np.mgrid[0:64, 0:64]
    r = np.hypot(xx - 31.5, yy - 31.5) / 45.0
    img = 0.5 + 0.4 * np.cos(r * math.pi)
    pano = P.p2e_mask(img, cfg, (128, 256))
    back = P.e2p(pano, cfg)
    lo, hi = 6, 58  # central ~80%
    diff = (back - img)[lo:hi, lo:hi]
    mse = float((diff**2).mean())
    psnr = 10 * math.log10(1.0 / mse)
    assert psnr >= 40.0


@pytest.mark.parametrize("direction", [P.UP, P.DOWN])
def test_frustum_footprint_matches_analytic_oracle(direction):
    cfg = P.E2PConfig(160.0, 64, direction)
    W, H = 128, 64
    got = P.frustum_mask(cfg, W, H)
    lam = ((np.arange(W) + 0.5) / W * 2 - 1) * math.pi
    lat = ((np.arange(H) + 0.5) / H * 2 - 1) * (math.pi / 2)
    want = np.zeros((H, W), dtype=bool)
    for i in range(H):
        for j in range(W):
            want[i, j] = oracle_inside_frustum(lam[j], lat[i], 64, 160.0, direction)
    assert np.array_equal(got, want)


def test_frustum_cone_rows():
    # everything above the inscribed 160-degree cone is seen by the up view
    cfg = P.E2PConfig(160.0, 64, P.UP)
    W, H = 256, 128
    m = P.frustum_mask(cfg, W, H)
    elev_deg = -(((np.arange(H) + 0.5) / H * 2 - 1) * 90.0)
    inner = elev_deg > (90.0 - 160.0 / 2) + 0.5
    assert m[inner].all()
    corner_limit = 90.0 - math.degrees(math.atan(math.sqrt(2) * math.tan(math.radians(80.0))))
    outer = elev_deg < corner_limit - 0.5
    assert not m[outer].any()
