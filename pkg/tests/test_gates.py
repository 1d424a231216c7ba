"""Sampling, closed-form keep probability and thresholding of gate groups."""

import numpy as np
import pytest
from scipy.special import expit

from gatecraft import autodiff as ad
from gatecraft.autodiff import Tensor
from gatecraft.gates import (
    GateGroup,
    HardConcreteParams,
    deterministic_gates,
    keep_probability,
    sample_gates,
)

from oracles import assert_close_grads, mc_keep_probability, numerical_gradient


def _group(n=8, init=0.0, **kw):
    return GateGroup("g", n, "ffn_intermediate", init_log_alpha=init, **kw)


def test_params_validation():
    with pytest.raises(ValueError):
        HardConcreteParams(beta=-1.0)
    with pytest.raises(ValueError):
        HardConcreteParams(stretch_lo=0.1)
    with pytest.raises(ValueError):
        HardConcreteParams(stretch_hi=0.9)


def test_saturated_open_gate_samples_exactly_one():
    g = _group(init=40.0)
    for seed in range(5):
        z = sample_gates(g, np.random.default_rng(seed)).data
        np.testing.assert_array_equal(z, 1.0)


def test_saturated_closed_gate_samples_exactly_zero():
    g = _group(init=-40.0)
    for seed in range(5):
        z = sample_gates(g, np.random.default_rng(seed)).data
        np.testing.assert_array_equal(z, 0.0)


def test_median_noise_gives_half_open_gate():
    # log_alpha = 0 with u = 0.5 hits clamp(1.2 * 0.5 - 0.1) = 0.5 exactly

    class FixedRng:
        def uniform(self, lo, hi, n):
            return np.full(n, 0.5)

    g = _group(n=3)
    z = sample_gates(g, FixedRng()).data
    np.testing.assert_allclose(z, 0.5, atol=1e-12)


def test_samples_always_in_unit_interval():
    rng = np.random.default_rng(0)
    for init in (-3.0, 0.0, 3.0):
        g = _group(n=64, init=init)
        for _ in range(20):
            z = sample_gates(g, rng).data
            assert z.min() >= 0.0 and z.max() <= 1.0


def test_interior_mass_positive_for_finite_log_alpha():
    g = _group(n=512, init=0.0)
    z = sample_gates(g, np.random.default_rng(1)).data
    assert ((z > 0) & (z < 1)).any()


def test_keep_probability_closed_form_value():
    g = _group(n=1)
    p = keep_probability(g).data[0]
    beta, lo, hi = 2 / 3, -0.1, 1.1
    assert p == pytest.approx(expit(0.0 - beta * np.log(-lo / hi)), abs=1e-15)
    assert p == pytest.approx(0.8318, abs=5e-5)


def test_keep_probability_half_at_shift_point():
    params = HardConcreteParams()
    g = _group(n=2, init=params.logit_shift)
    np.testing.assert_allclose(keep_probability(g).data, 0.5, atol=1e-15)


def test_keep_probability_saturates_to_zero():
    g = _group(init=-40.0)
    assert keep_probability(g).data.max() < 1e-15


def test_keep_probability_monotone_in_log_alpha():
    grid = np.linspace(-6, 6, 41)
    g = _group(n=41)
    g.log_alpha.data[:] = grid
    p = keep_probability(g).data
    assert (np.diff(p) > 0).all()


def test_closed_form_matches_monte_carlo():
    """For 10 random settings the closed form sits within 3 standard errors."""
    rng = np.random.default_rng(42)
    n = 10**6
    for _ in range(10):
        la = rng.uniform(-2.0, 2.0)
        beta = rng.uniform(0.4, 1.2)
        lo = rng.uniform(-0.4, -0.05)
        hi = rng.uniform(1.05, 1.5)
        g = GateGroup(
            "mc", 1, "attn_head",
            params=HardConcreteParams(beta=beta, stretch_lo=lo, stretch_hi=hi),
            init_log_alpha=la,
        )
        p = keep_probability(g).data[0]
        p_hat, _ = mc_keep_probability(la, beta, lo, hi, n, rng)
        se = np.sqrt(p * (1 - p) / n)
        assert abs(p_hat - p) <= 3 * se, f"closed {p} vs mc {p_hat} (se {se})"


def test_sample_gradient_matches_finite_differences():
    """d mean(z) / d log_alpha with the noise stream held fixed."""
    for i in range(10):
        rng = np.random.default_rng(100 + i)
        u = rng.uniform(0.05, 0.95, 6)

        class Replay:
            def uniform(self, lo, hi, n):
                return u.copy()

        g = _group(n=6, init=0.0)
        g.log_alpha.data[:] = rng.uniform(-1.5, 1.5, 6)
        loss = ad.mean(sample_gates(g, Replay()))
        ad.backward(loss)
        analytic = [g.log_alpha.grad]

        base = g.log_alpha.data.copy()

        def f(arrays):
            g.log_alpha.data[:] = arrays[0]
            val = ad.mean(sample_gates(g, Replay())).item()
            g.log_alpha.data[:] = base
            return val

        numeric = numerical_gradient(f, [base.copy()])
        assert_close_grads(analytic, numeric, context=f"gate-sample[{i}]")


def test_keep_probability_gradient_matches_finite_differences():
    for i in range(5):
        rng = np.random.default_rng(200 + i)
        g = _group(n=5)
        g.log_alpha.data[:] = rng.uniform(-2, 2, 5)
        ad.backward(ad.tensor_sum(keep_probability(g)))
        analytic = [g.log_alpha.grad]

        base = g.log_alpha.data.copy()

        def f(arrays):
            g.log_alpha.data[:] = arrays[0]
            val = ad.tensor_sum(keep_probability(g)).item()
            g.log_alpha.data[:] = base
            return val

        numeric = numerical_gradient(f, [base.copy()])
        assert_close_grads(analytic, numeric, context=f"keep-prob[{i}]")


def test_deterministic_gates_threshold():
    g = _group(n=2)
    g.log_alpha.data[:] = [5.0, -5.0]
    np.testing.assert_array_equal(deterministic_gates(g, 0.5), [1.0, 0.0])


def test_deterministic_gates_tie_keeps():
    params = HardConcreteParams()
    g = _group(n=3, init=params.logit_shift)  # keep probability exactly 0.5
    np.testing.assert_array_equal(deterministic_gates(g, 0.5), 1.0)


def test_deterministic_gates_threshold_validation():
    g = _group()
    with pytest.raises(ValueError):
        deterministic_gates(g, 0.0)


def test_group_validation():
    with pytest.raises(ValueError):
        GateGroup("bad", 0, "attn_head")
    with pytest.raises(ValueError):
        GateGroup("bad", 4, "spatial")
