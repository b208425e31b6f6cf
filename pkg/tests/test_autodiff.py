import numpy as np
import pytest

from panolayout import autodiff as ad
from panolayout import projection as P
from panolayout.errors import DimensionError


def check_grad(build, shapes, h=1e-4, tol=1e-4, seed=0):
    """Finite-difference check: ``build(tensors) -> scalar Tensor``.

    Compares the analytic gradient of every input against 64-bit central
    differences; asserts max relative error below ``tol``.
    """
    rng = np.random.default_rng(seed)
    datas = [rng.standard_normal(s) for s in shapes]

    def run(datas_in):
        ts = [ad.Tensor(np.asarray(d, dtype=np.float64), requires_grad=True) for d in datas_in]
        loss = build(ts)
        return ts, loss

    ts, loss = run(datas)
    loss.backward()
    for k, t in enumerate(ts):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = datas[k].reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fd_p = run(datas)[1].item()
            flat[i] = old - h
            fd_m = run(datas)[1].item()
            flat[i] = old
            fd[i] = (fd_p - fd_m) / (2 * h)
        fd = fd.reshape(datas[k].shape)
        scale = np.maximum(np.abs(fd), np.maximum(np.abs(analytic), 1e-6))
        rel = np.abs(fd - analytic) / scale
        assert rel.max() < tol, f"input {k}: max rel err {rel.max():.2e}"


def weighted_sum(x, seed=99):
    # fixed random projection to a scalar so gradients are non-trivial
    w = np.random.default_rng(seed).standard_normal(x.shape)
    out = ad.Tensor((x.data * w).sum(), parents=(x,))
    out._backward = lambda g: x.accumulate(g * w)
    return out


class TestPrimitiveGradients:
    def test_add(self):
        check_grad(lambda ts: weighted_sum(ad.add(ts[0], ts[1])), [(3, 4), (3, 4)])

    def test_scale(self):
        check_grad(lambda ts: weighted_sum(ad.scale(ts[0], -2.7)), [(5,)])

    def test_add_scaled(self):
        check_grad(lambda ts: weighted_sum(ad.add_scaled(ts[0], ts[1], 0.31)), [(2, 3), (2, 3)])

    def test_relu(self):
        check_grad(lambda ts: weighted_sum(ad.relu(ts[0])), [(4, 5)], seed=3)

    def test_relu_identity_on_positive(self):
        x = ad.Tensor(np.array([0.5, 2.0, 1e-3]), requires_grad=True)
        y = ad.relu(x)
        out = ad.Tensor(y.data.sum(), parents=(y,))
        out._backward = lambda g: y.accumulate(np.full_like(y.data, g))
        out.backward()
        assert np.array_equal(x.grad, np.ones(3))

    def test_sigmoid(self):
        check_grad(lambda ts: weighted_sum(ad.sigmoid(ts[0])), [(6,)])

    def test_softplus(self):
        check_grad(lambda ts: weighted_sum(ad.softplus(ts[0])), [(6,)])

    def test_conv3x3_stride1(self):
        check_grad(
            lambda ts: weighted_sum(ad.conv3x3(ts[0], ts[1], ts[2], stride=1)),
            [(4, 5, 2), (3, 3, 2, 3), (3,)],
        )

    def test_conv3x3_stride2(self):
        check_grad(
            lambda ts: weighted_sum(ad.conv3x3(ts[0], ts[1], ts[2], stride=2)),
            [(4, 6, 2), (3, 3, 2, 2), (2,)],
        )

    def test_upsample2(self):
        check_grad(lambda ts: weighted_sum(ad.upsample2(ts[0])), [(3, 4, 2)])

    def test_upsample_then_pool_is_identity(self):
        rng = np.random.default_rng(0)
        x = ad.Tensor(rng.standard_normal((3, 5, 2)))
        up = ad.upsample2(x)
        pooled = up.data.reshape(3, 2, 5, 2, 2).mean(axis=(1, 3))
        assert np.allclose(pooled, x.data)

    def test_global_avg_pool(self):
        check_grad(lambda ts: weighted_sum(ad.global_avg_pool(ts[0])), [(4, 6, 3)])

    def test_linear(self):
        check_grad(
            lambda ts: weighted_sum(ad.linear(ts[0], ts[1], ts[2])), [(4,), (4, 3), (3,)]
        )

    def test_dropout_fixed_mask(self):
        mask = np.array([[True, False, True], [True, True, False]])
        check_grad(
            lambda ts: weighted_sum(ad.dropout(ts[0], 0.5, mask=mask)), [(2, 3)]
        )

    def test_dropout_eval_identity(self):
        x = ad.Tensor(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(ad.dropout(x, 0.5).data, x.data)

    def test_e2p_warp(self):
        cfg = P.E2PConfig(150.0, 4, P.UP)
        check_grad(lambda ts: weighted_sum(ad.e2p_warp(ts[0], cfg)), [(4, 8, 2)], tol=1e-5)

    def test_bce(self):
        def build(ts):
            p = ad.sigmoid(ts[0])
            return ad.bce_sum(p, target=np.array([0.0, 1.0, 1.0, 0.0, 0.3]))

        check_grad(build, [(5,)])

    def test_bce_uniform_half_value(self):
        p = ad.Tensor(np.full((8, 16), 0.5))
        loss = ad.bce_sum(p, np.ones((8, 16)))
        assert loss.item() == pytest.approx(8 * 16 * np.log(2), rel=1e-6)

    def test_l1(self):
        check_grad(lambda ts: ad.l1_loss(ts[0], 0.7), [(1,)], seed=5)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            ad.add(ad.Tensor(np.zeros((2, 2))), ad.Tensor(np.zeros((3, 2))))
        with pytest.raises(DimensionError):
            ad.conv3x3(
                ad.Tensor(np.zeros((4, 4, 2))),
                ad.Tensor(np.zeros((3, 3, 3, 2))),
                ad.Tensor(np.zeros(2)),
            )
        with pytest.raises(DimensionError):
            ad.bce_sum(ad.Tensor(np.zeros((2, 2))), np.zeros((3, 3)))


class TestGraph:
    def test_shared_node_accumulates(self):
        x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = ad.add(x, x)
        loss = ad.Tensor(y.data.sum(), parents=(y,))
        loss._backward = lambda g: y.accumulate(np.full_like(y.data, g))
        loss.backward()
        assert np.array_equal(x.grad, np.array([2.0, 2.0]))

    def test_constant_branch_untouched(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        c = ad.Tensor(np.ones(3))
        y = ad.add(x, c)
        loss = ad.Tensor(y.data.sum(), parents=(y,))
        loss._backward = lambda g: y.accumulate(np.full_like(y.data, g))
        loss.backward()
        assert c.grad is None
        assert np.array_equal(x.grad, np.ones(3))
