"""Sparsity accounting in three regimes, plus an exact architecture profiler.

Cost formulas per block for sequence length T, hidden size d:

    attention:  4*T*h*d*d_head + 2*T^2*h*d_head   multiply-accumulates
    FFN:        2*T*d*d_int
    1-D conv:   T_out * C_out * C_in * K

The same block enumeration is evaluated twice: once on plain integers
(:func:`exact_profile`) and once on expected kept counts derived from gate
keep probabilities (:func:`expected_sparsity`), which makes the differentiable
accounting degenerate to the exact count when gates are pinned to 0/1.

Parameter counting includes biases and layer-norm scales/shifts; the task
head sits outside the architecture description and is excluded on both
sides of the accounting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gates import keep_probability

REGIME_KINDS = ("size_overall", "size_separate", "mac_overall")

# block kinds belonging to the convolutional frontend for the two-component
# split; the conv->hidden projection and the positional conv are charged to
# the transformer side
_CNN_KINDS = ("conv",)


@dataclass(frozen=True)
class SparsityRegime:
    kind: str = "size_overall"
    virtual_seconds: float = 10.0

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ValueError(f"unknown sparsity regime {self.kind!r}; expected one of {REGIME_KINDS}")
        if not self.virtual_seconds > 0:
            raise ValueError("virtual_seconds must be positive")


@dataclass(frozen=True)
class BlockProfile:
    block_id: str
    kind: str
    params: int
    macs: int


@dataclass(frozen=True)
class ProfileResult:
    macs: int
    params: int
    blocks: tuple

    def _sum(self, attr, cnn):
        return sum(
            getattr(b, attr) for b in self.blocks if (b.kind in _CNN_KINDS) == cnn
        )

    @property
    def cnn_macs(self):
        return self._sum("macs", True)

    @property
    def transformer_macs(self):
        return self._sum("macs", False)

    @property
    def cnn_params(self):
        return self._sum("params", True)

    @property
    def transformer_params(self):
        return self._sum("params", False)

    @property
    def cnn_mac_share(self):
        return self.cnn_macs / self.macs if self.macs else 0.0

    @property
    def cnn_param_share(self):
        return self.cnn_params / self.params if self.params else 0.0


@dataclass
class SparsityReport:
    """Differentiable sparsity scalars plus a per-block breakdown.

    ``overall``/``cnn``/``transformer`` are scalar tensors in [0, 1] wired to
    the gate parameters; ``per_block`` holds (block_id, expected kept units,
    expected cost) floats for logging.
    """

    regime: SparsityRegime
    overall: Tensor
    cnn: Tensor
    transformer: Tensor
    per_block: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# the symbolic block enumeration


def _mha_cost(T, h, d, dh):
    return 4 * T * h * d * dh + 2 * T * T * h * dh


def _ffn_cost(T, d, dint):
    return 2 * T * d * dint


def _conv_cost(t_out, c_out, c_in, k):
    return t_out * c_out * c_in * k


def _enumerate_blocks(descriptor, frames, T, counts):
    """Yield (block_id, kind, params, macs) with the algebra of ``counts``.

    ``counts`` maps the prunable dimensions to either python ints (exact
    profile) or scalar tensors (expected accounting); fixed dimensions stay
    integers either way.
    """
    blocks = []
    c_prev = 1
    for i, (spec, t_out) in enumerate(zip(descriptor.conv_layers, frames)):
        c_out = counts["conv"][i]
        params = c_out * c_prev * spec.kernel + c_out
        blocks.append((f"conv{i}", "conv", params, _conv_cost(t_out, c_out, c_prev, spec.kernel)))
        c_prev = c_out

    d = counts["hidden"]
    if descriptor.conv_layers:
        blocks.append(("proj", "proj", c_prev * d + d, T * c_prev * d))

    if descriptor.pos_conv is not None:
        k, g = descriptor.pos_conv.kernel, descriptor.pos_conv.groups
        dg = d // g
        blocks.append(("pos_conv", "pos_conv", d * dg * k + d, T * d * dg * k))

    for j, spec in enumerate(descriptor.transformer_layers):
        h, dint, dh = counts["heads"][j], counts["ffn"][j], spec.head_dim
        qkv = 3 * (d * dh * h + dh * h)
        out = h * dh * d
        blocks.append((f"mha{j}", "mha", qkv + out + 2 * d, _mha_cost(T, h, d, dh)))
        ffn_params = d * dint + dint + dint * d + d + 2 * d
        blocks.append((f"ffn{j}", "ffn", ffn_params, _ffn_cost(T, d, dint)))
    return blocks


def _dense_counts(descriptor):
    return {
        "conv": [c.out_channels for c in descriptor.conv_layers],
        "heads": [t.heads for t in descriptor.transformer_layers],
        "ffn": [t.ffn_intermediate for t in descriptor.transformer_layers],
        "hidden": descriptor.hidden,
    }


# ---------------------------------------------------------------------------
# exact profiling


def exact_profile(descriptor, seconds):
    """Integer MAC and parameter counts for a concrete architecture."""
    if not seconds > 0:
        raise ValueError("seconds must be positive")
    n_samples = round(seconds * descriptor.sample_rate)
    frames = descriptor.frame_lengths(n_samples)
    T = frames[-1] if frames else n_samples
    raw = _enumerate_blocks(descriptor, frames, T, _dense_counts(descriptor))
    blocks = tuple(BlockProfile(bid, kind, int(p), int(m)) for bid, kind, p, m in raw)
    return ProfileResult(
        macs=sum(b.macs for b in blocks),
        params=sum(b.params for b in blocks),
        blocks=blocks,
    )


def mac_budget_from_sparsity(descriptor, target_sparsity, seconds):
    """MAC budget implied by a target sparsity: (1 - t) * dense MACs."""
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValueError(f"target sparsity must lie in [0, 1], got {target_sparsity}")
    return round((1.0 - target_sparsity) * exact_profile(descriptor, seconds).macs)


# ---------------------------------------------------------------------------
# differentiable expected accounting


def _expected_counts(model, pinned_mask=None):
    """Expected kept units per group, as scalar tensors in the graph.

    With ``pinned_mask`` the keep probabilities are replaced by exact 0/1
    constants, so every downstream quantity is integer-valued.
    """
    if pinned_mask is None:
        kept = lambda g: ad.tensor_sum(keep_probability(g))
        return {
            "conv": [kept(g) for g in model.conv_gates],
            "heads": [kept(g) for g in model.head_gates],
            "ffn": [kept(g) for g in model.ffn_gates],
            "hidden": kept(model.hidden_gate),
        }
    pin = lambda m: ad.constant(float(np.asarray(m, dtype=np.float64).sum()))
    return {
        "conv": [pin(m) for m in pinned_mask.conv],
        "heads": [pin(m) for m in pinned_mask.heads],
        "ffn": [pin(m) for m in pinned_mask.ffn],
        "hidden": pin(pinned_mask.hidden),
    }


def _ratio_complement(kept_tensors, totals):
    """1 - sum(kept) / sum(totals) as a graph scalar."""
    total = float(sum(totals))
    if total == 0.0:
        return ad.constant(0.0)
    acc = None
    for t in kept_tensors:
        acc = t if acc is None else ad.add(acc, t)
    return ad.sub(ad.constant(1.0), ad.div(acc, ad.constant(total)))


def expected_sparsity(model, regime, pinned_mask=None):
    """Differentiable sparsity of a gated model under the chosen regime.

    Size regimes weigh each tensor by the product of its governing groups'
    expected kept counts; the MAC regime substitutes expected counts into the
    block cost formulas at the virtual sequence length.  The result is a
    :class:`SparsityReport` whose scalars backpropagate into every log_alpha.
    """
    descriptor = model.descriptor
    if descriptor.pos_conv is not None:
        raise ValueError("gated models do not carry a positional conv block")
    n_samples = round(regime.virtual_seconds * descriptor.sample_rate)
    frames = descriptor.frame_lengths(n_samples)
    T = frames[-1] if frames else n_samples

    counts = _expected_counts(model, pinned_mask)
    expected = _enumerate_blocks(descriptor, frames, T, counts)
    dense = _enumerate_blocks(descriptor, frames, T, _dense_counts(descriptor))

    col = 1 if regime.kind == "mac_overall" else 0  # account macs or params
    kept_all, tot_all = [], []
    kept_cnn, tot_cnn = [], []
    kept_trans, tot_trans = [], []
    per_block = []
    unit_by_block = {}
    for i in range(len(descriptor.conv_layers)):
        unit_by_block[f"conv{i}"] = counts["conv"][i]
    unit_by_block["proj"] = counts["hidden"]
    for j in range(len(descriptor.transformer_layers)):
        unit_by_block[f"mha{j}"] = counts["heads"][j]
        unit_by_block[f"ffn{j}"] = counts["ffn"][j]

    for (bid, kind, *exp_cols), (_, _, *dense_cols) in zip(expected, dense):
        kept, total = exp_cols[col], dense_cols[col]
        kept_all.append(kept)
        tot_all.append(total)
        if kind in _CNN_KINDS:
            kept_cnn.append(kept)
            tot_cnn.append(total)
        else:
            kept_trans.append(kept)
            tot_trans.append(total)
        per_block.append((bid, float(unit_by_block[bid].data), float(kept.data)))

    return SparsityReport(
        regime=regime,
        overall=_ratio_complement(kept_all, tot_all),
        cnn=_ratio_complement(kept_cnn, tot_cnn),
        transformer=_ratio_complement(kept_trans, tot_trans),
        per_block=per_block,
    )


def expected_macs(model, regime, pinned_mask=None):
    """Expected total MACs at the virtual length (scalar tensor)."""
    descriptor = model.descriptor
    n_samples = round(regime.virtual_seconds * descriptor.sample_rate)
    frames = descriptor.frame_lengths(n_samples)
    T = frames[-1] if frames else n_samples
    blocks = _enumerate_blocks(descriptor, frames, T, _expected_counts(model, pinned_mask))
    acc = None
    for _, _, _, macs in blocks:
        acc = macs if acc is None else ad.add(acc, macs)
    return acc
