"""AdamW with decoupled weight decay, and the linear warmup/decay schedule."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    ``param_groups`` follows the usual convention: a flat list of tensors,
    or a list of dicts {"params": [...], "lr": float, "weight_decay": float}
    so that model weights and gate parameters can run at different rates.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if params and isinstance(params[0], dict):
            groups = params
        else:
            groups = [{"params": list(params)}]
        self.param_groups = []
        for g in groups:
            self.param_groups.append(
                {
                    "params": list(g["params"]),
                    "lr": float(g.get("lr", lr)),
                    "base_lr": float(g.get("lr", lr)),
                    "weight_decay": float(g.get("weight_decay", weight_decay)),
                    "scheduled": bool(g.get("scheduled", True)),
                }
            )
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}
        for group in self.param_groups:
            for p in group["params"]:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    def zero_grad(self):
        for group in self.param_groups:
            for p in group["params"]:
                p.grad = None

    def set_lr_factor(self, factor):
        for group in self.param_groups:
            if group["scheduled"]:
                group["lr"] = group["base_lr"] * factor

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for group in self.param_groups:
            lr, wd = group["lr"], group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * p.grad * p.grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if wd:
                    p.data = p.data - lr * wd * p.data
                p.data = p.data - lr * update

    # -- checkpointing --------------------------------------------------------

    def state_arrays(self):
        """Moment arrays in deterministic parameter order, plus step count."""
        out = {"t": np.array(self.t)}
        i = 0
        for group in self.param_groups:
            for p in group["params"]:
                out[f"m{i}"] = self._m[id(p)]
                out[f"v{i}"] = self._v[id(p)]
                i += 1
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"])
        i = 0
        for group in self.param_groups:
            for p in group["params"]:
                self._m[id(p)] = np.array(arrays[f"m{i}"], dtype=np.float64)
                self._v[id(p)] = np.array(arrays[f"v{i}"], dtype=np.float64)
                i += 1


class LinearSchedule:
    """Linear warmup to the base rate, then linear decay to zero."""

    def __init__(self, warmup_steps, total_steps):
        if total_steps < 1:
            raise ValueError("total_steps must be positive")
        self.warmup = max(0, int(warmup_steps))
        self.total = int(total_steps)
        if self.warmup > self.total:
            raise ValueError("warmup cannot exceed total steps")

    def factor(self, step):
        if self.warmup and step < self.warmup:
            return step / self.warmup
        if self.total == self.warmup:
            return 1.0
        return max(0.0, (self.total - step) / (self.total - self.warmup))
