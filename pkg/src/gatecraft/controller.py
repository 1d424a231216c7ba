"""Constrained-sparsity controller.

The equality constraint s(alpha) = t is enforced through an adversarial
game: the model descends on  task_loss + g  while the multipliers ascend on
the same objective, with

    g = lambda_1 * (s - t) + lambda_2 * (s - t)^2

(one such pair per component in the separate-sizes regime).  At equilibrium
the constraint holds, which is what lets a single run land on a prescribed
sparsity instead of sweeping a penalty weight.  The target ramps linearly
from zero over a warmup prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetSchedule:
    """Linear ramp of the target sparsity over the first ``warmup_steps``."""

    final_target: object  # float, or (cnn, transformer) pair for separate sizes
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        targets = self.final_target if isinstance(self.final_target, (tuple, list)) else (self.final_target,)
        for t in targets:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"target sparsity {t} outside [0, 1]")
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 < warmup_steps <= total_steps")

    @property
    def is_pair(self):
        return isinstance(self.final_target, (tuple, list))


def current_target(schedule, step):
    """t(step) = final * min(1, step / warmup)."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    frac = min(1.0, step / schedule.warmup_steps)
    if schedule.is_pair:
        return tuple(t * frac for t in schedule.final_target)
    return schedule.final_target * frac


class LagrangeState:
    """Trainable multipliers: one (l1, l2) pair, or one pair per component.

    The linear multiplier starts at zero; the quadratic one starts positive.
    Both are still trained by ascent, but the quadratic term is the loop's
    damping, and waiting for it to grow from zero out of accumulated
    violations leaves the sparsity ringing around the target for far longer
    than a desk-scale run lasts.
    """

    def __init__(self, regime_kind, l2_init=5.0):
        self.regime_kind = regime_kind
        if regime_kind == "size_separate":
            self.components = ("cnn", "transformer")
        else:
            self.components = ("overall",)
        self._pairs = {
            c: (Tensor(0.0, requires_grad=True), Tensor(float(l2_init), requires_grad=True))
            for c in self.components
        }

    def pair(self, component="overall"):
        return self._pairs[component]

    def multipliers(self):
        return [lam for pair in self._pairs.values() for lam in pair]

    def values(self):
        """(lambda1, lambda2) summed over components, for logging."""
        l1 = sum(float(p[0].data) for p in self._pairs.values())
        l2 = sum(float(p[1].data) for p in self._pairs.values())
        return l1, l2

    def state_dict(self):
        return {
            f"{c}/{i}": float(lam.data)
            for c, pair in self._pairs.items()
            for i, lam in enumerate(pair)
        }

    def load_state_dict(self, d):
        for c, pair in self._pairs.items():
            for i, lam in enumerate(pair):
                lam.data = np.asarray(d[f"{c}/{i}"], dtype=np.float64)


def _pair_penalty(l1, l2, gap):
    return ad.add(ad.mul(l1, gap), ad.mul(l2, ad.mul(gap, gap)))


def penalty(state, report, target, regime):
    """The constraint term g as a graph scalar, differentiable in alpha and lambda."""
    if regime.kind == "size_separate":
        if not isinstance(target, (tuple, list)) or len(target) != 2:
            raise ControllerError(
                f"separate-sizes regime needs a (cnn, transformer) target pair, got {target!r}"
            )
        t_cnn, t_trans = target
        l1c, l2c = state.pair("cnn")
        l1t, l2t = state.pair("transformer")
        gap_cnn = ad.sub(report.cnn, ad.constant(float(t_cnn)))
        gap_trans = ad.sub(report.transformer, ad.constant(float(t_trans)))
        return ad.add(_pair_penalty(l1c, l2c, gap_cnn), _pair_penalty(l1t, l2t, gap_trans))
    if isinstance(target, (tuple, list)):
        raise ControllerError(f"regime {regime.kind} takes a scalar target, got {target!r}")
    l1, l2 = state.pair("overall")
    gap = ad.sub(report.overall, ad.constant(float(target)))
    return _pair_penalty(l1, l2, gap)


def adversarial_step(objective, optimizer, state, lambda_lr):
    """One minimax update: backward once, descend parameters, ascend multipliers.

    ``objective`` is task loss plus penalty; gradients are checked for
    finiteness before anything is mutated, so a poisoned step leaves both
    the parameters and the multipliers untouched.
    """
    optimizer.zero_grad()
    multipliers = state.multipliers()
    ad.zero_grads(multipliers)
    ad.backward(objective)

    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise ControllerError("non-finite parameter gradient; aborting step")
    for lam in multipliers:
        if lam.grad is not None and not np.isfinite(lam.grad).all():
            raise ControllerError("non-finite multiplier gradient; aborting step")

    optimizer.step()
    for lam in multipliers:
        if lam.grad is not None:
            lam.data = lam.data + lambda_lr * lam.grad  # ascent
