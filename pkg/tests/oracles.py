"""Independent numerical oracles used across the test suite.

These deliberately avoid the library's backward pass (finite differences),
its closed forms (Monte Carlo), and its vectorized kernels (sliding-window
enumeration), so each check is a genuine cross-validation.
"""

import numpy as np


def numerical_gradient(f, arrays, h=1e-6):
    """Central finite differences of a scalar function of several arrays.

    ``f`` takes the list of arrays and returns a float; each array is
    perturbed in place one element at a time.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_close_grads(analytic, numeric, tol=1e-4, context=""):
    """Elementwise |a - n| <= tol * max(1, |a|, |n|)."""
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        err = np.abs(a - n) / denom
        worst = float(err.max()) if err.size else 0.0
        assert worst < tol, f"{context}: input {k} gradient mismatch, rel err {worst:.3e}"


def conv1d_reference(x, w, stride):
    """Sliding-window enumeration of the valid 1-D convolution."""
    b, c_in, t = x.shape
    c_out, _, k = w.shape
    t_out = (t - k) // stride + 1
    out = np.zeros((b, c_out, t_out))
    for bi in range(b):
        for oc in range(c_out):
            for to in range(t_out):
                lo = to * stride
                out[bi, oc, to] = np.sum(x[bi, :, lo : lo + k] * w[oc])
    return out


def mc_keep_probability(log_alpha, beta, lo, hi, n_samples, rng):
    """Monte-Carlo estimate of P(gate != 0) by raw resampling of the gate rule."""
    u = rng.uniform(1e-12, 1.0 - 1e-12, n_samples)
    s = 1.0 / (1.0 + np.exp(-((np.log(u) - np.log1p(-u) + log_alpha) / beta)))
    z = np.clip((hi - lo) * s + lo, 0.0, 1.0)
    return float((z != 0).mean()), float(z.std(ddof=1))


def pareto_flags_bruteforce(points):
    """points: list of (cost, metric); maximize metric, minimize cost."""
    flags = []
    for i, (ci, mi) in enumerate(points):
        dominated = any(
            (cj <= ci and mj >= mi and (cj < ci or mj > mi))
            for j, (cj, mj) in enumerate(points)
            if j != i
        )
        flags.append(not dominated)
    return flags
