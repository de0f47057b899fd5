import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenecrnn import tensor as tn
from scenecrnn.tensor import Tensor

SEEDS = range(20)


def _weighted(out: Tensor, seed: int) -> Tensor:
    """Scalar loss with random weights so every output entry carries a distinct gradient."""
    r = np.random.default_rng(seed + 1000).standard_normal(out.shape)
    return tn.sum_(out * Tensor(r))


def _t(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return Tensor(np.abs(x) + 0.5 if positive else x)


# op name -> (builder of double-precision inputs, function of those inputs)
OPS = {
    "add": (lambda r: [_t(r, 3, 4), _t(r, 4)], lambda a, b: a + b),
    "sub": (lambda r: [_t(r, 3, 4), _t(r, 3, 1)], lambda a, b: a - b),
    "mul": (lambda r: [_t(r, 3, 4), _t(r, 3, 4)], lambda a, b: a * b),
    "div": (lambda r: [_t(r, 3, 4), _t(r, 3, 4, positive=True)], lambda a, b: a / b),
    "matmul": (lambda r: [_t(r, 3, 5), _t(r, 5, 2)], tn.matmul),
    "matmul_batched": (lambda r: [_t(r, 2, 3, 5), _t(r, 5, 4)], tn.matmul),
    "matmul_vec": (lambda r: [_t(r, 5), _t(r, 5, 3)], tn.matmul),
    "concat": (lambda r: [_t(r, 2, 3), _t(r, 2, 4)], lambda a, b: tn.concat([a, b], axis=1)),
    "stack": (lambda r: [_t(r, 2, 3), _t(r, 2, 3)], lambda a, b: tn.stack([a, b], axis=0)),
    "reshape": (lambda r: [_t(r, 2, 6)], lambda a: tn.reshape(a, (3, 4))),
    "transpose": (lambda r: [_t(r, 2, 3, 4)], lambda a: tn.transpose(a, (2, 0, 1))),
    "slice": (lambda r: [_t(r, 4, 5)], lambda a: tn.slice_(a, (slice(1, 3), slice(None, None, 2)))),
    "slice_fancy": (lambda r: [_t(r, 4, 5)], lambda a: tn.slice_(a, (np.array([0, 2, 2]),))),
    "sum_axis": (lambda r: [_t(r, 3, 4)], lambda a: tn.sum_(a, axis=1)),
    "mean": (lambda r: [_t(r, 3, 4)], lambda a: tn.mean(a, axis=0)),
    "max": (lambda r: [_t(r, 3, 6)], lambda a: tn.max_(a, axis=1)),
    "outer": (lambda r: [_t(r, 4), _t(r, 3)], tn.outer_product),
    "outer_batched": (lambda r: [_t(r, 2, 4), _t(r, 2, 3)], tn.outer_product),
    "tanh": (lambda r: [_t(r, 3, 4)], tn.tanh),
    "sigmoid": (lambda r: [_t(r, 3, 4)], tn.sigmoid),
    "relu": (lambda r: [_t(r, 3, 4)], tn.relu),
    "exp": (lambda r: [_t(r, 3, 4)], tn.exp),
    "log": (lambda r: [_t(r, 3, 4, positive=True)], tn.log),
    "power": (lambda r: [_t(r, 3, 4, positive=True)], lambda a: tn.power(a, 1.5)),
    "softmax": (lambda r: [_t(r, 3, 5)], lambda a: tn.softmax(a, axis=-1)),
    "softmax_axis0": (lambda r: [_t(r, 3, 5)], lambda a: tn.softmax(a, axis=0)),
    "log_softmax": (lambda r: [_t(r, 3, 5)], tn.log_softmax),
    "dropout_mask": (lambda r: [_t(r, 3, 4)],
                     lambda a: tn.dropout_mask_apply(a, (np.arange(12).reshape(3, 4) % 3 != 0) / (2 / 3))),
    "conv_3x3": (lambda r: [_t(r, 2, 3, 6, 5), _t(r, 4, 3, 3, 3), _t(r, 4)], tn.conv_2d_same),
    "conv_2x2": (lambda r: [_t(r, 2, 2, 4, 4), _t(r, 3, 2, 2, 2), _t(r, 3)], tn.conv_2d_same),
    "conv_5x5_cnhw": (lambda r: [_t(r, 2, 2, 6, 5), _t(r, 3, 2, 5, 5), _t(r, 3)],
                      lambda x, w, b: tn.conv_2d_same(x, w, b, layout="CNHW")),
    "max_pool": (lambda r: [_t(r, 2, 3, 8, 3)], lambda a: tn.max_pool_2d(a, (4, 1))),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(OPS))
def test_core_op_gradients(name, seed):
    build, fn = OPS[name]
    inputs = build(np.random.default_rng(seed))
    report = tn.grad_check(lambda *xs: _weighted(fn(*xs), seed), inputs, step=1e-4, tol=1e-3)
    assert report.passed, report


def test_softmax_uniform():
    np.testing.assert_allclose(tn.softmax(Tensor(np.ones(3))).data, np.full(3, 1 / 3))


def test_outer_product_definition():
    a, b = np.arange(1.0, 5.0), np.array([2.0, -1.0, 0.5])
    out = tn.outer_product(Tensor(a), Tensor(b)).data
    assert out.shape == (4, 3)
    np.testing.assert_array_equal(out, a[:, None] * b[None, :])


def test_matmul_hand_example():
    a = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    b = Tensor(np.array([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]]))
    np.testing.assert_array_equal(tn.matmul(a, b).data, [[58.0, 64.0], [139.0, 154.0]])


def test_shape_errors_name_the_op():
    with pytest.raises(ValueError, match="matmul"):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match="conv_2d_same"):
        tn.conv_2d_same(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 5, 3, 3))))
    with pytest.raises(ValueError, match="add"):
        tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    tn.backward(tn.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_tanh_at_zero():
    x = Tensor(np.zeros(5), requires_grad=True)
    tn.backward(tn.sum_(tn.tanh(x)))
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        tn.backward(x * 2.0)


def test_grad_accumulates_over_shared_use():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    tn.backward(tn.sum_(x * x + x))
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_tape_is_topological():
    x = Tensor(np.ones(3), requires_grad=True)
    y = tn.tanh(x) * 2.0
    z = tn.sum_(y + tn.exp(y))
    tape = tn.build_tape(z)
    position = {id(t): i for i, t in enumerate(tape)}
    for node in tape:
        for p in node._parents:
            if id(p) in position:
                assert position[id(p)] < position[id(node)]


def test_composite_graph_gradient():
    # conv -> relu -> pool -> matmul -> softmax -> KL against a soft target
    r = np.random.default_rng(7)
    x = Tensor(r.standard_normal((2, 2, 8, 3)))
    w = Tensor(r.standard_normal((3, 2, 3, 3)))
    m = Tensor(r.standard_normal((3 * 2 * 3, 4)))
    y = np.array([[0.2, 0.8, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]])

    def f(x, w, m):
        h = tn.max_pool_2d(tn.relu(tn.conv_2d_same(x, w)), (4, 1))
        p = tn.softmax(tn.matmul(tn.reshape(h, (2, -1)), m), axis=-1)
        return -tn.sum_(Tensor(y) * tn.log(p))

    assert tn.grad_check(f, [x, w, m]).passed


def test_grad_check_quadratic_is_tight():
    x = Tensor(np.random.default_rng(1).standard_normal(10))
    report = tn.grad_check(lambda a: tn.sum_(a * a), x)
    assert report.max_rel_error < 1e-6


def test_grad_check_detects_wrong_gradient():
    def bad(a):
        return Tensor.from_op(np.sum(a.data ** 2), (a,), lambda g: (g * a.data,), "bad")
    assert not tn.grad_check(bad, Tensor(np.random.default_rng(2).standard_normal(4) + 3)).passed


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with tn.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_conv_identity_kernel():
    x = np.random.default_rng(3).standard_normal((2, 1, 6, 5))
    for k in (1, 3):
        w = np.zeros((1, 1, k, k))
        w[0, 0, k // 2, k // 2] = 1.0
        np.testing.assert_array_equal(tn.conv_2d_same(Tensor(x), Tensor(w)).data, x)


@pytest.mark.parametrize("kh,kw", [(5, 5), (3, 3), (2, 2), (2, 3)])
def test_conv_matches_direct_loop(kh, kw):
    r = np.random.default_rng(kh * 10 + kw)
    x, w, b = r.standard_normal((2, 3, 6, 5)), r.standard_normal((4, 3, kh, kw)), r.standard_normal(4)
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl)))
    ref = np.zeros((2, 4, 6, 5))
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(5):
                    ref[n, o, i, j] = np.sum(xp[n, :, i:i + kh, j:j + kw] * w[o]) + b[o]
    np.testing.assert_allclose(tn.conv_2d_same(Tensor(x), Tensor(w), Tensor(b)).data, ref, atol=1e-12)
    cnhw = tn.conv_2d_same(Tensor(x.transpose(1, 0, 2, 3)), Tensor(w), Tensor(b), layout="CNHW").data
    np.testing.assert_allclose(cnhw.transpose(1, 0, 2, 3), ref, atol=1e-12)


def test_max_pool_values_and_tie_rule():
    x = np.arange(16.0).reshape(1, 1, 8, 2)
    np.testing.assert_array_equal(tn.max_pool_2d(Tensor(x)).data[0, 0], [[6.0, 7.0], [14.0, 15.0]])
    t = Tensor(np.ones((1, 1, 4, 1)), requires_grad=True)
    tn.backward(tn.sum_(tn.max_pool_2d(t)))
    np.testing.assert_array_equal(t.grad[0, 0, :, 0], [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="stride"):
        tn.max_pool_2d(Tensor(np.ones((1, 1, 4, 4))), (2, 2), stride=(1, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_reshape_transpose_roundtrip(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((2, 3, 4)))
    perm = tuple(r.permutation(3))
    back = tn.transpose(tn.transpose(x, perm), tuple(np.argsort(perm)))
    np.testing.assert_array_equal(back.data, x.data)
    np.testing.assert_array_equal(tn.reshape(tn.reshape(x, (6, 4)), (2, 3, 4)).data, x.data)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 50.0))
def test_softmax_is_distribution(seed, scale):
    x = np.random.default_rng(seed).standard_normal((4, 7)) * scale
    p = tn.softmax(Tensor(x), axis=-1).data
    assert np.all(p > 0) or scale > 30
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_param_container_roundtrip(tmp_path):
    r = np.random.default_rng(0)
    params = {"conv1.w": r.standard_normal((4, 2, 5, 5)).astype(np.float32),
              "out.b": r.standard_normal(3).astype(np.float32), "scalar": np.array(2.5, np.float32)}
    tn.save_params(tmp_path / "p.bin", params)
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:8] == b"CRNNPARM" and int.from_bytes(raw[8:12], "little") == 1
    back = tn.load_params(tmp_path / "p.bin")
    assert list(back) == list(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])


def test_param_container_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTPARAMS")
    with pytest.raises(ValueError):
        tn.load_params(tmp_path / "x.bin")


def test_kink_refinement_does_not_hide_wrong_gradient():
    def bad_relu(a):
        return Tensor.from_op(np.maximum(a.data, 0), (a,), lambda g: (2.0 * g * (a.data > 0),), "bad_relu")
    x = Tensor(np.array([1e-5, -2e-5, 0.7, -0.3]))
    report = tn.grad_check(lambda a: tn.sum_(bad_relu(a)), x)
    assert not report.passed


def test_kink_refinement_counts_straddled_kinks():
    x = Tensor(np.array([3e-5, 0.5, -0.5]))
    report = tn.grad_check(lambda a: tn.sum_(tn.relu(a)), x)
    assert report.passed and report.n_kinks == 1
    assert not tn.grad_check(lambda a: tn.sum_(tn.relu(a)), Tensor(np.array([3e-5])), kink_refine=0).passed
