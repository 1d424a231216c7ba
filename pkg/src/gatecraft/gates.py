"""Stochastic binary gates with a stretched-sigmoid relaxation.

Each gate is a random variable in [0, 1] obtained by passing logistic noise
through a sigmoid, stretching the result to [stretch_lo, stretch_hi] and
rectifying to the unit interval.  The probability that a gate is nonzero has
a closed form, so the expected number of kept units is differentiable in the
gate parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# uniform noise is drawn on (U_EPS, 1 - U_EPS) to keep the logit finite
U_EPS = 1e-8

UNIT_KINDS = ("conv_channel", "attn_head", "ffn_intermediate", "hidden_dim")


@dataclass(frozen=True)
class HardConcreteParams:
    """Temperature and stretch constants of the gate distribution."""

    beta: float = 2.0 / 3.0
    stretch_lo: float = -0.1
    stretch_hi: float = 1.1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"temperature must be positive, got {self.beta}")
        if not (self.stretch_lo < 0 < 1 < self.stretch_hi):
            raise ValueError(
                f"stretch interval must satisfy lo < 0 < 1 < hi, got "
                f"({self.stretch_lo}, {self.stretch_hi})"
            )

    @property
    def logit_shift(self):
        """The constant beta * log(-lo/hi) appearing in the keep probability."""
        return self.beta * math.log(-self.stretch_lo / self.stretch_hi)


class GateGroup:
    """A vector of gates attached to one family of pruning units.

    ``log_alpha`` holds the trainable location parameters, one per unit.
    ``params_per_gate`` records how many model parameters one unit governs;
    the sparsity accounting uses its own exact per-tensor bookkeeping, this
    field is informational.
    """

    def __init__(
        self,
        name,
        n,
        unit_kind,
        params=None,
        params_per_gate=0,
        init_log_alpha=0.0,
    ):
        if n < 1:
            raise ValueError(f"gate group {name!r} needs at least one unit")
        if unit_kind not in UNIT_KINDS:
            raise ValueError(f"unknown unit kind {unit_kind!r}; expected one of {UNIT_KINDS}")
        self.name = name
        self.n = int(n)
        self.unit_kind = unit_kind
        self.params = params or HardConcreteParams()
        self.params_per_gate = int(params_per_gate)
        self.log_alpha = Tensor(np.full(self.n, float(init_log_alpha)), requires_grad=True)

    def __repr__(self):
        return f"GateGroup({self.name!r}, n={self.n}, kind={self.unit_kind})"


def sample_gates(group, rng):
    """Draw one stochastic gate vector, differentiable w.r.t. log_alpha.

    z = clamp((hi - lo) * sigmoid((logit(u) + log_alpha) / beta) + lo, 0, 1)
    with u uniform on the open unit interval.
    """
    p = group.params
    u = rng.uniform(U_EPS, 1.0 - U_EPS, group.n)
    noise = ad.constant(np.log(u) - np.log1p(-u))
    pre = ad.scale(ad.add(noise, group.log_alpha), 1.0 / p.beta)
    stretched = ad.add(
        ad.scale(ad.sigmoid(pre), p.stretch_hi - p.stretch_lo),
        ad.constant(p.stretch_lo),
    )
    return ad.clamp(stretched, 0.0, 1.0)


def keep_probability(group):
    """Closed-form P(gate != 0) per unit: sigmoid(log_alpha - beta*log(-lo/hi))."""
    return ad.sigmoid(ad.add(group.log_alpha, ad.constant(-group.params.logit_shift)))


def deterministic_gates(group, threshold=0.5):
    """Hard 0/1 gates for evaluation: keep iff keep probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    p = keep_probability(group).data
    return (p >= threshold).astype(np.float64)


def expected_kept(group):
    """Differentiable expected number of kept units in the group."""
    return ad.tensor_sum(keep_probability(group))
