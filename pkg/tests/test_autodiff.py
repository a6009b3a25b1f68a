import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobaxai import autodiff as ad


def fd_grad(f, arrays, h=1e-5):
    """Central finite differences of a scalar function of several arrays."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(*arrays)
            flat[i] = orig - h
            dn = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def assert_close_rel(a, b, rtol=1e-4, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    assert np.max(np.abs(a - b) / denom) <= rtol


class TestForward:
    def test_tanh_at_origin(self):
        tape = ad.Tape()
        x = tape.leaf(np.zeros(3))
        assert np.all(ad.tanh(x).data == 0.0)

    def test_softmax_symmetry(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([2.5, 2.5, 2.5]))
        np.testing.assert_allclose(ad.softmax(x).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_matmul_against_loop_oracle(self):
        a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        b = np.array([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]])
        expect = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(3):
                    expect[i, j] += a[i, k] * b[k, j]
        tape = ad.Tape()
        out = ad.matmul(tape.leaf(a), tape.leaf(b))
        np.testing.assert_array_equal(out.data, expect)

    def test_shape_mismatch_names_shapes(self):
        tape = ad.Tape()
        a = tape.leaf(np.zeros((2, 3)))
        b = tape.leaf(np.zeros((2, 3)))
        with pytest.raises(ad.ShapeError) as err:
            ad.matmul(a, b)
        assert "(2, 3)" in str(err.value)

    def test_add_bias_over_rows_only(self):
        tape = ad.Tape()
        a = tape.leaf(np.ones((4, 3)))
        bias = tape.leaf(np.array([1.0, 2.0, 3.0]))
        out = ad.add(a, bias)
        np.testing.assert_array_equal(out.data, np.ones((4, 3)) + np.array([1, 2, 3.0]))
        with pytest.raises(ad.ShapeError):
            ad.add(a, tape.leaf(np.ones((1, 3))))

    def test_primitive_registry_dispatch(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([0.0, 1.0]))
        out = ad.primitive_forward("tanh", x)
        np.testing.assert_allclose(out.data, np.tanh([0.0, 1.0]))
        with pytest.raises(KeyError):
            ad.primitive_forward("conv2d", x)

    def test_gather_forward(self):
        tape = ad.Tape()
        x = tape.leaf(np.arange(12.0).reshape(4, 3))
        out = ad.gather(x, [2, 0, 2], axis=0)
        np.testing.assert_array_equal(out.data, x.data[[2, 0, 2]])


class TestBackward:
    def test_dtanh_at_origin(self):
        tape = ad.Tape()
        x = tape.leaf(np.zeros(1))
        y = ad.sum(ad.tanh(x))
        g = tape.backward(y, [x])[x.tid]
        np.testing.assert_allclose(g, [1.0])

    def test_sigmoid_chain_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(4, 3))
        x0 = rng.normal(size=(3, 2))

        def f(w, x):
            tape = ad.Tape()
            return ad.sum(ad.sigmoid(ad.matmul(tape.leaf(w), tape.leaf(x)))).data

        tape = ad.Tape()
        wt, xt = tape.leaf(W), tape.leaf(x0)
        out = ad.sum(ad.sigmoid(ad.matmul(wt, xt)))
        grads = tape.backward(out, [wt, xt])
        fd = fd_grad(f, [W.copy(), x0.copy()])
        assert_close_rel(grads[wt.tid], fd[0])
        assert_close_rel(grads[xt.tid], fd[1])

    def test_disconnected_leaf_gets_zeros(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        z = tape.leaf(np.ones(2))
        y = ad.sum(ad.mul(x, x))
        g = tape.backward(y, [z])[z.tid]
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_constant_has_zero_gradient_path(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        c = tape.constant(np.full(3, 5.0))
        y = ad.sum(c)
        g = tape.backward(y, [x])[x.tid]
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_non_leaf_target_rejected(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        y = ad.tanh(x)
        with pytest.raises(ValueError):
            tape.backward(ad.sum(y), [y])

    def test_targets_accepted_by_leaf_id(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([2.0]))
        out = ad.sum(ad.mul(x, x))
        g = tape.backward(out, [x.tid])[x.tid]
        np.testing.assert_allclose(g, [4.0])
        with pytest.raises(ValueError):
            tape.backward(out, [out.tid])

    def test_non_scalar_output_rejected(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        with pytest.raises(ad.ShapeError):
            tape.backward(ad.tanh(x), [x])

    def test_reused_node_accumulates(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([3.0]))
        y = ad.sum(ad.mul(x, x))  # x**2 -> dy/dx = 2x
        g = tape.backward(y, [x])[x.tid]
        np.testing.assert_allclose(g, [6.0])

    def test_dropout_gradient_equals_mask(self):
        rng = np.random.default_rng(1)
        mask = (rng.random((5, 4)) > 0.4).astype(float) / 0.6
        tape = ad.Tape()
        x = tape.leaf(rng.normal(size=(5, 4)))
        y = ad.sum(ad.dropout_with_mask(x, mask))
        g = tape.backward(y, [x])[x.tid]
        np.testing.assert_array_equal(g, mask)

    def test_backward_twice_bit_identical(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(6, 6))
        x0 = rng.normal(size=(6, 3))

        def run():
            tape = ad.Tape()
            wt, xt = tape.leaf(W), tape.leaf(x0)
            h = ad.tanh(ad.matmul(wt, xt))
            out = ad.mean(ad.softmax(ad.matmul(wt, h)))
            g = tape.backward(out, [wt, xt])
            return g[wt.tid], g[xt.tid]

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def _fd_check_unary(build, x0, rtol=1e-4):
    def f(x):
        tape = ad.Tape()
        return ad.sum(build(tape.leaf(x))).data

    tape = ad.Tape()
    xt = tape.leaf(x0)
    out = ad.sum(build(xt))
    g = tape.backward(out, [xt])[xt.tid]
    fd = fd_grad(f, [x0.copy()])[0]
    assert_close_rel(g, fd, rtol=rtol)


PRIMITIVE_CASES = {
    "sigmoid": lambda x: ad.sigmoid(x),
    "tanh": lambda x: ad.tanh(x),
    "relu": lambda x: ad.relu(x),
    "log": lambda x: ad.log(x),
    "softmax": lambda x: ad.softmax(x),
    "mean_axis": lambda x: ad.mul(ad.mean(x, axis=0), ad.mean(x, axis=0)),
    "sum_axis": lambda x: ad.mul(ad.sum(x, axis=1), ad.sum(x, axis=1)),
    "slice": lambda x: ad.mul(ad.slice_axis(x, 1, 1, 3), ad.slice_axis(x, 1, 0, 2)),
    "reshape": lambda x: ad.tanh(ad.reshape(x, (8,))),
    "gather": lambda x: ad.sigmoid(ad.gather(x, [1, 1, 0], axis=0)),
    "scale": lambda x: ad.scale(x, -2.5),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x0 = rng.uniform(0.3, 1.7, size=(2, 4))  # positive and away from relu/log kinks
    _fd_check_unary(PRIMITIVE_CASES[name], x0)


@pytest.mark.parametrize(
    "shape_a,shape_b,kw",
    [
        ((3, 4), (4, 2), {}),
        ((3, 4), (2, 4), {"transpose_b": True}),
        ((4, 3), (4, 2), {"transpose_a": True}),
        ((2, 3, 4), (2, 4, 2), {}),
        ((2, 3, 4), (4, 2), {}),
        ((2, 3, 4), (2, 2, 4), {"transpose_b": True}),
    ],
)
def test_matmul_gradients_match_finite_differences(shape_a, shape_b, kw):
    rng = np.random.default_rng(7)
    A = rng.normal(size=shape_a)
    B = rng.normal(size=shape_b)

    def f(a, b):
        tape = ad.Tape()
        return ad.sum(ad.tanh(ad.matmul(tape.leaf(a), tape.leaf(b), **kw))).data

    tape = ad.Tape()
    at, bt = tape.leaf(A), tape.leaf(B)
    out = ad.sum(ad.tanh(ad.matmul(at, bt, **kw)))
    grads = tape.backward(out, [at, bt])
    fd = fd_grad(f, [A.copy(), B.copy()])
    assert_close_rel(grads[at.tid], fd[0])
    assert_close_rel(grads[bt.tid], fd[1])


def test_layer_norm_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(3, 5))
    G = rng.uniform(0.5, 1.5, size=5)
    B = rng.normal(size=5)

    def f(x, g, b):
        tape = ad.Tape()
        return ad.sum(ad.tanh(ad.layer_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b)))).data

    tape = ad.Tape()
    xt, gt, bt = tape.leaf(X), tape.leaf(G), tape.leaf(B)
    out = ad.sum(ad.tanh(ad.layer_norm(xt, gt, bt)))
    grads = tape.backward(out, [xt, gt, bt])
    fd = fd_grad(f, [X.copy(), G.copy(), B.copy()])
    assert_close_rel(grads[xt.tid], fd[0])
    assert_close_rel(grads[gt.tid], fd[1])
    assert_close_rel(grads[bt.tid], fd[2])


def test_concat_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(2, 3))
    B = rng.normal(size=(2, 2))

    def f(a, b):
        tape = ad.Tape()
        return ad.sum(ad.sigmoid(ad.concat([tape.leaf(a), tape.leaf(b)], axis=1))).data

    tape = ad.Tape()
    at, bt = tape.leaf(A), tape.leaf(B)
    out = ad.sum(ad.sigmoid(ad.concat([at, bt], axis=1)))
    grads = tape.backward(out, [at, bt])
    fd = fd_grad(f, [A.copy(), B.copy()])
    assert_close_rel(grads[at.tid], fd[0])
    assert_close_rel(grads[bt.tid], fd[1])


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_composed_network_gradient_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.5, 1.5, size=(rows, cols))
    W = rng.uniform(-1.0, 1.0, size=(cols, 3))

    def f(x, w):
        tape = ad.Tape()
        h = ad.tanh(ad.matmul(tape.leaf(x), tape.leaf(w)))
        return ad.mean(ad.softmax(h)).data

    tape = ad.Tape()
    xt, wt = tape.leaf(X), tape.leaf(W)
    out = ad.mean(ad.softmax(ad.tanh(ad.matmul(xt, wt))))
    grads = tape.backward(out, [xt, wt])
    fd = fd_grad(f, [X.copy(), W.copy()])
    assert_close_rel(grads[xt.tid], fd[0], rtol=1e-4, floor=1e-5)
    assert_close_rel(grads[wt.tid], fd[1], rtol=1e-4, floor=1e-5)
