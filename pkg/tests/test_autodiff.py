"""Gradient and semantics checks for the autodiff engine."""

import numpy as np
import pytest

from gatecraft import autodiff as ad
from gatecraft.autodiff import Tensor

from oracles import assert_close_grads, conv1d_reference, numerical_gradient

N_INSTANCES = 20


def _scalarize(out, rng):
    """Project an op output to a scalar with a fixed random weighting."""
    r = ad.constant(rng.standard_normal(out.shape))
    return ad.tensor_sum(ad.mul(out, r))


def _run_gradcheck(kind, make_inputs, attrs=None, seed0=0):
    for i in range(N_INSTANCES):
        rng = np.random.default_rng(1000 * hash(kind) % 100000 + seed0 + i)
        raw = make_inputs(rng)
        proj_rng = np.random.default_rng(seed0 + i + 777)

        tensors = [Tensor(a.copy(), requires_grad=True) for a in raw]
        out = ad.forward_op(kind, tensors, attrs)
        loss = _scalarize(out, proj_rng)
        ad.backward(loss)
        analytic = [t.grad for t in tensors]

        def f(arrays):
            ts = [Tensor(a) for a in arrays]
            o = ad.forward_op(kind, ts, attrs)
            r = np.random.default_rng(seed0 + i + 777).standard_normal(o.shape)
            return float((o.data * r).sum())

        numeric = numerical_gradient(f, [a.copy() for a in raw])
        assert_close_grads(analytic, numeric, tol=1e-4, context=f"{kind}[{i}]")


def _pair(rng, shape=(3, 4)):
    return [rng.standard_normal(shape), rng.standard_normal(shape)]


def _pair_separated(rng, shape=(3, 4), gap=1e-3):
    a, b = _pair(rng, shape)
    close = np.abs(a - b) < gap
    b = b + np.where(close, 2 * gap, 0.0)
    return [a, b]


def _positive(rng, shape=(3, 4)):
    return [rng.uniform(0.2, 3.0, shape)]


GRADCHECK_CASES = [
    ("add", _pair, None),
    ("sub", _pair, None),
    ("mul", _pair, None),
    ("div", lambda rng: [rng.standard_normal((3, 4)), rng.uniform(0.5, 2.0, (3, 4))], None),
    ("matmul", lambda rng: [rng.standard_normal((3, 5)), rng.standard_normal((5, 2))], None),
    (
        "matmul",
        lambda rng: [rng.standard_normal((2, 3, 5)), rng.standard_normal((5, 4))],
        None,
    ),
    (
        "conv1d",
        lambda rng: [rng.standard_normal((2, 3, 14)), rng.standard_normal((4, 3, 3))],
        {"stride": 2},
    ),
    ("sigmoid", lambda rng: [rng.standard_normal((4, 3))], None),
    ("gelu", lambda rng: [rng.standard_normal((4, 3))], None),
    ("softmax", lambda rng: [rng.standard_normal((3, 5))], {"axis": -1}),
    ("log", _positive, None),
    ("exp", lambda rng: [rng.uniform(-2, 2, (3, 4))], None),
    (
        "clamp",
        # keep samples away from the 0/1 kinks so finite differences are valid
        lambda rng: [
            np.where(rng.uniform(size=(4, 5)) < 0.5, rng.uniform(-0.9, -0.01, (4, 5)), rng.uniform(0.3, 0.7, (4, 5)))
        ],
        {"lo": 0.0, "hi": 1.0},
    ),
    ("min", _pair_separated, None),
    ("max", _pair_separated, None),
    ("sum", lambda rng: [rng.standard_normal((3, 4, 2))], {"axis": 1}),
    ("sum", lambda rng: [rng.standard_normal((3, 4))], None),
    ("mean", lambda rng: [rng.standard_normal((3, 4, 2))], {"axis": -1, "keepdims": True}),
    ("scale", lambda rng: [rng.standard_normal((3, 4))], {"factor": -2.5}),
    ("slice", lambda rng: [rng.standard_normal((4, 6))], {"index": (slice(1, 3), slice(None, None, 2))}),
    ("transpose", lambda rng: [rng.standard_normal((2, 3, 4))], {"axes": (2, 0, 1)}),
    ("reshape", lambda rng: [rng.standard_normal((3, 4))], {"newshape": (2, 6)}),
    (
        "layernorm",
        lambda rng: [rng.standard_normal((2, 5)), rng.uniform(0.5, 1.5, 5), rng.standard_normal(5)],
        None,
    ),
    (
        "layernorm",
        lambda rng: [rng.standard_normal((2, 5)), rng.uniform(0.5, 1.5, 5), rng.standard_normal(5)],
        {"weights": None},  # placeholder, replaced below
    ),
]


@pytest.mark.parametrize(
    "kind,make_inputs,attrs",
    [c for c in GRADCHECK_CASES if not (c[0] == "layernorm" and c[2])],
    ids=lambda v: v if isinstance(v, str) else "",
)
def test_gradcheck_op(kind, make_inputs, attrs):
    _run_gradcheck(kind, make_inputs, attrs)


def test_gradcheck_concat():
    for i in range(N_INSTANCES):
        rng = np.random.default_rng(31 + i)
        raw = [rng.standard_normal((2, 3)), rng.standard_normal((4, 3))]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in raw]
        out = ad.concat(tensors, axis=0)
        proj = np.random.default_rng(500 + i).standard_normal(out.shape)
        loss = ad.tensor_sum(ad.mul(out, ad.constant(proj)))
        ad.backward(loss)
        analytic = [t.grad for t in tensors]

        def f(arrays):
            o = np.concatenate(arrays, axis=0)
            return float((o * proj).sum())

        numeric = numerical_gradient(f, [a.copy() for a in raw])
        assert_close_grads(analytic, numeric, context=f"concat[{i}]")


def test_gradcheck_weighted_layernorm():
    """Weighted statistics: gradients also flow into the weight vector."""
    for i in range(N_INSTANCES):
        rng = np.random.default_rng(92 + i)
        x = rng.standard_normal((2, 6))
        gamma = rng.uniform(0.5, 1.5, 6)
        beta = rng.standard_normal(6)
        w = rng.uniform(0.2, 1.0, 6)
        raw = [x, gamma, beta, w]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in raw]
        out = ad.layernorm(tensors[0], tensors[1], tensors[2], weights=tensors[3])
        proj = np.random.default_rng(7000 + i).standard_normal(out.shape)
        loss = ad.tensor_sum(ad.mul(out, ad.constant(proj)))
        ad.backward(loss)
        analytic = [t.grad for t in tensors]

        def f(arrays):
            ts = [Tensor(a) for a in arrays]
            o = ad.layernorm(ts[0], ts[1], ts[2], weights=ts[3])
            return float((o.data * proj).sum())

        numeric = numerical_gradient(f, [a.copy() for a in raw])
        assert_close_grads(analytic, numeric, context=f"wlayernorm[{i}]")


def test_matmul_shape():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((3, 4)))
    assert ad.matmul(a, b).shape == (2, 4)


def test_matmul_shape_mismatch():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_broadcast_mismatch_names_op():
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5, abs=0)


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    ad.backward(ad.sigmoid(x))
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    ad.backward(ad.mul(x, x))
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_conv1d_output_length():
    # floor((999 - 2) / 2) + 1 = 499
    x = Tensor(np.zeros((1, 1, 999)))
    w = Tensor(np.zeros((1, 1, 2)))
    assert ad.conv1d(x, w, stride=2).shape == (1, 1, 499)


def test_conv1d_matches_sliding_window_enumeration():
    rng = np.random.default_rng(3)
    for stride in (1, 2, 3):
        x = rng.standard_normal((2, 3, 20))
        w = rng.standard_normal((4, 3, 5))
        out = ad.conv1d(Tensor(x), Tensor(w), stride=stride)
        ref = conv1d_reference(x, w, stride)
        np.testing.assert_allclose(out.data, ref, rtol=1e-12)


def test_conv1d_channel_mismatch():
    with pytest.raises(ad.ShapeError, match="conv1d"):
        ad.conv1d(Tensor(np.zeros((1, 2, 10))), Tensor(np.zeros((3, 4, 2))))


def test_gelu_exact_values():
    # x * Phi(x) at a few analytically known points
    x = Tensor(np.array([0.0, 1.0, -1.0]))
    out = ad.gelu(x).data
    from scipy.stats import norm

    expected = np.array([0.0, norm.cdf(1.0), -norm.cdf(-1.0)])
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_clamp_output_in_unit_interval():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = Tensor(rng.standard_normal(100) * 10)
        out = ad.clamp(x, 0.0, 1.0).data
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_clamp_boundary_subgradient_is_interior_side():
    x = Tensor(np.array([0.0, 1.0, -0.5, 1.5, 0.5]), requires_grad=True)
    out = ad.tensor_sum(ad.clamp(x, 0.0, 1.0))
    ad.backward(out)
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 0.0, 0.0, 1.0])


def test_backward_requires_scalar_root():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ad.ShapeError, match="backward"):
        ad.backward(ad.scale(x, 2.0))


def test_repeated_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    out = ad.tensor_sum(ad.gelu(ad.matmul(x, ad.sigmoid(y))))
    ad.backward(out)
    gx1, gy1 = x.grad.copy(), y.grad.copy()
    ad.zero_grads([x, y])
    ad.backward(out)
    assert np.array_equal(gx1, x.grad) and np.array_equal(gy1, y.grad)


def test_backward_accumulates_without_reset():
    x = Tensor(2.0, requires_grad=True)
    out = ad.mul(x, x)
    ad.backward(out)
    ad.backward(out)
    assert x.grad == pytest.approx(8.0)


def test_random_five_op_graph_against_finite_differences():
    for i in range(10):
        rng = np.random.default_rng(60 + i)
        raw = [rng.standard_normal((3, 3)), rng.standard_normal((3, 3))]

        def graph(a, b):
            h = ad.matmul(a, b)
            h = ad.gelu(h)
            h = ad.add(h, a)
            h = ad.sigmoid(h)
            return ad.mean(h)

        ta, tb = (Tensor(a.copy(), requires_grad=True) for a in raw)
        loss = graph(ta, tb)
        ad.backward(loss)
        analytic = [ta.grad, tb.grad]

        def f(arrays):
            return graph(Tensor(arrays[0]), Tensor(arrays[1])).item()

        numeric = numerical_gradient(f, [a.copy() for a in raw])
        assert_close_grads(analytic, numeric, context=f"five-op[{i}]")


def test_forward_op_rejects_unknown_kind():
    with pytest.raises(ad.ShapeError):
        ad.forward_op("fft", [Tensor(np.zeros(3))])


def test_operator_sugar_matches_functions():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    out = (a * b + a - b / 2.0) @ b
    ref = (a.data * b.data + a.data - b.data / 2.0) @ b.data
    np.testing.assert_allclose(out.data, ref, rtol=1e-15)
