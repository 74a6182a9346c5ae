import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revode import blocks as B
from revode.blocks import BlockParams
from revode.tensor import ShapeError


def scalar(v):
    return np.full((1, 1, 1, 1), float(v))


def scalar_params(h=0.1, k=1.0, b=0.0, act="relu", two=True):
    kk = np.full((1, 1, 1, 1), k)
    bb = np.full(1, b)
    return BlockParams(k1=kk, b1=bb, k2=kk if two else None, b2=bb if two else None, h=h, activation=act)


def random_params(rng, kind, c, ks, act="tanh", h=0.3, dtype=np.float64):
    m = c // 2 if kind in (B.HAMILTONIAN, B.HAMILTONIAN_ONE_LAYER) else c
    u = lambda *s: rng.uniform(-1, 1, s).astype(dtype)
    if kind == B.HAMILTONIAN:
        return BlockParams(u(m, m, ks, ks), u(m), u(m, m, ks, ks), u(m), h=h, activation=act)
    if kind == B.RESIDUAL:
        return BlockParams(u(c, c, ks, ks), u(c), u(c, c, ks, ks), None, h=h, activation=act)
    return BlockParams(u(m, m, ks, ks), u(m), h=h, activation=act)


def random_state(rng, kind, c, side=4, dtype=np.float64):
    ham = kind in (B.HAMILTONIAN, B.HAMILTONIAN_ONE_LAYER)
    m = c // 2 if ham else c
    if kind in (B.MIDPOINT_INIT, B.LEAPFROG_INIT, B.LEAPFROG_INIT_ZERO_VELOCITY, B.RESIDUAL):
        return (rng.standard_normal((2, m, side, side)).astype(dtype),)
    return tuple(rng.standard_normal((2, m, side, side)).astype(dtype) for _ in range(2))


class TestHamiltonian:
    def test_scalar_hand_values(self):
        p = scalar_params()
        y1, z1 = B.hamiltonian_forward((scalar(1), scalar(1)), p)
        assert y1.item() == pytest.approx(1.1, abs=1e-15)
        assert z1.item() == pytest.approx(0.89, abs=1e-15)
        y0, z0 = B.hamiltonian_inverse((y1, z1), p)
        assert (y0.item(), z0.item()) == pytest.approx((1.0, 1.0), abs=1e-15)

    def test_zero_step_and_zero_kernels(self, rng):
        s = random_state(rng, B.HAMILTONIAN, 4)
        p = random_params(rng, B.HAMILTONIAN, 4, 3, h=0.0)
        for a, b in zip(B.hamiltonian_forward(s, p), s):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(B.hamiltonian_inverse(s, p), s):
            np.testing.assert_array_equal(a, b)
        zp = BlockParams(np.zeros((2, 2, 3, 3)), rng.standard_normal(2), np.zeros((2, 2, 3, 3)),
                         rng.standard_normal(2), h=0.5)
        for a, b in zip(B.hamiltonian_forward(s, zp), s):
            np.testing.assert_array_equal(a, b)

    def test_z_update_uses_new_y(self):
        # with linear activation Z1 = Z - h k^2 (Y + h k^2 Z); a Y_j-based update would drop the h^2 term
        p = scalar_params(h=0.5, k=1.0, act="identity")
        _, z1 = B.hamiltonian_forward((scalar(1), scalar(2)), p)
        assert z1.item() == pytest.approx(2 - 0.5 * (1 + 0.5 * 2))

    def test_shape_mismatch(self, rng):
        p = random_params(rng, B.HAMILTONIAN, 4, 3)
        with pytest.raises(ShapeError):
            B.hamiltonian_forward((np.zeros((1, 3, 4, 4)), np.zeros((1, 2, 4, 4))), p)
        with pytest.raises(ShapeError):
            B.hamiltonian_forward((np.zeros((1, 2, 4, 4)),), p)

    def test_identity_scalar_vjp_by_hand(self):
        # Y1 = Y + h k^2 Z, Z1 = Z - h k^2 Y1 (identity activation, zero bias)
        h, k = 0.3, 0.7
        a = h * k * k
        p = scalar_params(h=h, k=k, act="identity")
        s = (scalar(0.4), scalar(-1.2))
        gy1, gz1 = 0.5, -2.0
        (gy, gz), pg = B.block_vjp(B.HAMILTONIAN, s, p, (scalar(gy1), scalar(gz1)))
        # dZ1/dY = -a, dZ1/dZ = 1 - a^2, dY1/dY = 1, dY1/dZ = a
        assert gy.item() == pytest.approx(gy1 - a * gz1)
        assert gz.item() == pytest.approx(a * gy1 + (1 - a * a) * gz1)
        y, z = 0.4, -1.2
        y1 = y + a * z
        # dY1/dk1 = 2 h k1 Z; dZ1/dk2 = -2 h k2 Y1
        assert pg["k1"].item() == pytest.approx(gy1 * 2 * h * k * z + gz1 * (-a) * 2 * h * k * z)
        assert pg["k2"].item() == pytest.approx(gz1 * (-2 * h * k * y1))


class TestOneLayerHamiltonian:
    def test_scalar(self):
        p = scalar_params(two=False)
        y1, z1 = B.one_layer_hamiltonian_forward((scalar(1), scalar(1)), p)
        assert (y1.item(), z1.item()) == pytest.approx((1.1, 0.89), abs=1e-15)

    def test_zero_step_and_zero_kernel(self, rng):
        s = random_state(rng, B.HAMILTONIAN_ONE_LAYER, 4)
        for p in (random_params(rng, B.HAMILTONIAN_ONE_LAYER, 4, 3, h=0.0),
                  BlockParams(np.zeros((2, 2, 3, 3)), np.zeros(2), h=0.4, activation="relu")):
            for a, b in zip(B.one_layer_hamiltonian_forward(s, p), s):
                np.testing.assert_array_equal(a, b)


class TestMidpoint:
    def test_scalar_annihilation(self, rng):
        p = scalar_params(b=0.5, two=False, k=rng.standard_normal())
        y1, y0 = B.midpoint_forward((scalar(7.0), scalar(1.0)), p)
        assert y1.item() == pytest.approx(1.1, abs=1e-15) and y0.item() == 7.0
        back = B.midpoint_inverse((y1, y0), p)
        assert back[0].item() == 7.0 and back[1].item() == pytest.approx(1.0, abs=1e-15)
        assert not B._antisym(rng.standard_normal((2, 1, 3, 3)), np.full((1, 1, 1, 1), 3.0)).any()

    def test_zero_kernel_bias_and_zero_step(self, rng):
        s = random_state(rng, B.MIDPOINT, 3)
        zp = BlockParams(np.zeros((3, 3, 3, 3)), np.zeros(3), h=0.2)
        np.testing.assert_array_equal(B.midpoint_forward(s, zp)[0], s[1])
        hp = random_params(rng, B.MIDPOINT, 3, 3, h=0.0)
        out = B.midpoint_forward(s, hp)
        np.testing.assert_array_equal(out[0], s[1])
        np.testing.assert_array_equal(B.midpoint_inverse(out, hp)[1], s[1])

    def test_init(self, rng):
        p = scalar_params(b=0.5, two=False)
        y1, y0 = B.midpoint_init(scalar(1.0), p)
        assert y1.item() == pytest.approx(1.05, abs=1e-15) and y0.item() == 1.0
        y = rng.standard_normal((1, 2, 3, 3))
        for p in (random_params(rng, B.MIDPOINT, 2, 3, h=0.0), BlockParams(np.zeros((2, 2, 3, 3)), np.zeros(2))):
            a, b = B.midpoint_init(y, p)
            np.testing.assert_array_equal(a, y)
            np.testing.assert_array_equal(b, y)


class TestLeapfrog:
    def test_scalar_chain(self):
        p = scalar_params(two=False)
        s1 = B.leapfrog_init(scalar(1.0), p)
        assert s1[0].item() == pytest.approx(1.99, abs=1e-15)
        s2 = B.leapfrog_forward(s1, p)
        assert s2[0].item() == pytest.approx(2.9601, abs=1e-14)
        back = B.leapfrog_inverse(s2, p)
        assert back[0].item() == pytest.approx(1.99, abs=1e-15)
        assert back[1].item() == pytest.approx(1.0, abs=1e-14)

    def test_zero_velocity_init(self):
        s1 = B.leapfrog_init(scalar(1.0), scalar_params(two=False), zero_velocity=True)
        assert s1[0].item() == pytest.approx(0.99, abs=1e-15)

    def test_free_drift(self, rng):
        s = random_state(rng, B.LEAPFROG, 2)
        p = random_params(rng, B.LEAPFROG, 2, 3, h=0.0)
        np.testing.assert_allclose(B.leapfrog_forward(s, p)[0], 2 * s[0] - s[1])
        np.testing.assert_allclose(B.leapfrog_inverse(s, p)[1], 2 * s[1] - s[0])


class TestResidual:
    def test_hand_and_trivial(self, rng):
        p = scalar_params(h=1.0)
        assert B.residual_forward(scalar(2.0), p).item() == 4.0
        y = rng.standard_normal((2, 3, 4, 4))
        zp = BlockParams(np.zeros((3, 3, 3, 3)), np.zeros(3), np.zeros((3, 3, 3, 3)), h=1.0)
        np.testing.assert_array_equal(B.residual_forward(y, zp), y)
        hp = random_params(rng, B.RESIDUAL, 3, 3, h=0.0)
        np.testing.assert_array_equal(B.residual_forward(y, hp), y)

    def test_not_reversible(self, rng):
        with pytest.raises(ValueError, match="not reversible"):
            B.block_inverse(B.RESIDUAL, (np.zeros((1, 2, 2, 2)),), random_params(rng, B.RESIDUAL, 2, 1))


def test_negative_step_rejected():
    with pytest.raises(ValueError):
        BlockParams(np.zeros((1, 1, 1, 1)), np.zeros(1), h=-0.1)


@pytest.mark.parametrize("kind", [B.HAMILTONIAN, B.HAMILTONIAN_ONE_LAYER, B.MIDPOINT, B.LEAPFROG])
@pytest.mark.parametrize("ks", [1, 3])
@pytest.mark.parametrize("c", [2, 4, 8])
def test_round_trip(kind, ks, c):
    rng = np.random.default_rng(c * 10 + ks)
    for dtype, tol in ((np.float64, 1e-12), (np.float32, 1e-4)):
        p = random_params(rng, kind, c, ks, act="relu", h=0.2, dtype=dtype)
        s = random_state(rng, kind, c, dtype=dtype)
        back = B.block_inverse(kind, B.block_forward(kind, s, p), p)
        assert max(np.abs(a - b).max() for a, b in zip(back, s)) <= tol


@pytest.mark.parametrize("kind", [B.MIDPOINT_INIT, B.LEAPFROG_INIT, B.LEAPFROG_INIT_ZERO_VELOCITY])
def test_init_kinds_invert_by_history(kind, rng):
    p = random_params(rng, kind, 3, 3)
    s = random_state(rng, kind, 3)
    np.testing.assert_array_equal(B.block_inverse(kind, B.block_forward(kind, s, p), p)[0], s[0])


def _loss(kind, s, p, w):
    return sum(np.vdot(a, b) for a, b in zip(B.block_forward(kind, s, p), w))


@pytest.mark.parametrize("kind", B.KINDS)
def test_vjp_matches_finite_differences(kind):
    rng = np.random.default_rng(7)
    p = random_params(rng, kind, 4, 3)
    s = random_state(rng, kind, 4, side=3)
    w = tuple(rng.standard_normal(a.shape) for a in B.block_forward(kind, s, p))
    gs, gp = B.block_vjp(kind, s, p, w)
    eps = 1e-5
    for i, member in enumerate(s):
        v = rng.standard_normal(member.shape)
        sp = tuple(m + eps * v if j == i else m for j, m in enumerate(s))
        sm = tuple(m - eps * v if j == i else m for j, m in enumerate(s))
        fd = (_loss(kind, sp, p, w) - _loss(kind, sm, p, w)) / (2 * eps)
        assert np.vdot(gs[i], v) == pytest.approx(fd, rel=1e-6)
    arrays = p.arrays()
    assert set(gp) == set(arrays)
    for name, arr in arrays.items():
        v = rng.standard_normal(arr.shape)
        plus = BlockParams(**{**arrays, name: arr + eps * v}, h=p.h, activation=p.activation)
        minus = BlockParams(**{**arrays, name: arr - eps * v}, h=p.h, activation=p.activation)
        fd = (_loss(kind, s, plus, w) - _loss(kind, s, minus, w)) / (2 * eps)
        assert np.vdot(gp[name], v) == pytest.approx(fd, rel=1e-6), name


@pytest.mark.parametrize("kind", B.KINDS)
def test_zero_upstream_gives_zero_gradients(kind, rng):
    p = random_params(rng, kind, 4, 3)
    s = random_state(rng, kind, 4)
    out = B.block_forward(kind, s, p)
    gs, gp = B.block_vjp(kind, s, p, tuple(np.zeros_like(a) for a in out))
    assert not any(g.any() for g in gs) and not any(g.any() for g in gp.values())


@pytest.mark.parametrize("kind", [B.HAMILTONIAN, B.MIDPOINT, B.LEAPFROG])
def test_fused_inverse_vjp_matches_unfused(kind, rng):
    p = random_params(rng, kind, 4, 3)
    s = random_state(rng, kind, 4)
    out = B.block_forward(kind, s, p)
    up = tuple(rng.standard_normal(a.shape) for a in out)
    s_rec, g, grads = B.block_inverse_vjp(kind, out, p, up)
    g_ref, grads_ref = B.block_vjp(kind, s, p, up)
    for a, b in zip(s_rec, s):
        np.testing.assert_allclose(a, b, atol=1e-12)
    for a, b in zip(g, g_ref):
        np.testing.assert_allclose(a, b, atol=1e-12)
    for k in grads_ref:
        np.testing.assert_allclose(grads[k], grads_ref[k], atol=1e-12)


@given(st.floats(0.01, 2.0), st.floats(0.0, 1.0), st.integers(0, 2**31),
       st.sampled_from([B.HAMILTONIAN, B.HAMILTONIAN_ONE_LAYER, B.MIDPOINT, B.LEAPFROG]),
       st.sampled_from(["relu", "tanh", "identity"]))
def test_round_trip_property(scale, h, seed, kind, act):
    r = np.random.default_rng(seed)
    p = random_params(r, kind, 4, 3, act=act, h=h)
    p = BlockParams(**{k: v * scale for k, v in p.arrays().items()}, h=h, activation=act)
    s = random_state(r, kind, 4, side=3)
    back = B.block_inverse(kind, B.block_forward(kind, s, p), p)
    ref = max(1.0, max(np.abs(m).max() for m in B.block_forward(kind, s, p)))
    assert max(np.abs(a - b).max() for a, b in zip(back, s)) <= 1e-12 * ref
