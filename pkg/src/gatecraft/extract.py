"""Materialize a pruned network: binarize gates, delete units, verify, report.

Extraction re-indexes every weight tensor along its pruned axes, producing a
plain (gate-free) network.  Because the gated forward multiplies activations
by hard zeros at exactly the places a removed unit would have contributed,
the extracted forward agrees with the pinned-gate forward to rounding error;
that equivalence is the module's core test.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .arch import ArchDescriptor, ConvLayerSpec, TransformerLayerSpec
from .autodiff import Tensor
from .gates import keep_probability
from .model import ConvLayerWeights, EncoderWeights, TransformerLayerWeights, encoder_forward
from .sparsity import exact_profile


class ExtractionError(ValueError):
    pass


@dataclass
class PruneMask:
    """Per-group 0/1 keep vectors covering every gate group of a model."""

    conv: list
    heads: list
    ffn: list
    hidden: np.ndarray

    def __post_init__(self):
        as01 = lambda a: np.asarray(a, dtype=np.float64)
        self.conv = [as01(m) for m in self.conv]
        self.heads = [as01(m) for m in self.heads]
        self.ffn = [as01(m) for m in self.ffn]
        self.hidden = as01(self.hidden)

    @classmethod
    def all_ones(cls, descriptor):
        return cls(
            conv=[np.ones(c.out_channels) for c in descriptor.conv_layers],
            heads=[np.ones(t.heads) for t in descriptor.transformer_layers],
            ffn=[np.ones(t.ffn_intermediate) for t in descriptor.transformer_layers],
            hidden=np.ones(descriptor.hidden),
        )

    def validate_against(self, descriptor):
        def check(mask, n, name):
            if mask.shape != (n,):
                raise ExtractionError(f"mask for {name} has arity {mask.shape}, expected ({n},)")
            if not np.isin(mask, (0.0, 1.0)).all():
                raise ExtractionError(f"mask for {name} is not 0/1-valued")
            if mask.sum() < 1:
                raise ExtractionError(f"mask for {name} keeps no units")

        if len(self.conv) != len(descriptor.conv_layers):
            raise ExtractionError("conv mask count does not match conv layer count")
        if len(self.heads) != len(descriptor.transformer_layers) or len(self.ffn) != len(
            descriptor.transformer_layers
        ):
            raise ExtractionError("per-layer mask count does not match transformer depth")
        for i, (m, spec) in enumerate(zip(self.conv, descriptor.conv_layers)):
            check(m, spec.out_channels, f"conv{i}.w")
        for j, spec in enumerate(descriptor.transformer_layers):
            check(self.heads[j], spec.heads, f"layer{j}.attention")
            check(self.ffn[j], spec.ffn_intermediate, f"layer{j}.ffn.w1")
        check(self.hidden, descriptor.hidden, "hidden")


def binarize(model, threshold=0.5):
    """Threshold keep probabilities into a mask.

    A group whose every unit falls below the threshold keeps its single most
    probable unit (zero-width tensors are not representable); this is
    reported as a warning.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")

    def one_group(group):
        p = keep_probability(group).data
        mask = (p >= threshold).astype(np.float64)
        if mask.sum() == 0:
            mask[int(p.argmax())] = 1.0
            warnings.warn(
                f"gate group {group.name!r} fell entirely below threshold; "
                "keeping its most probable unit",
                stacklevel=2,
            )
        return mask

    return PruneMask(
        conv=[one_group(g) for g in model.conv_gates],
        heads=[one_group(g) for g in model.head_gates],
        ffn=[one_group(g) for g in model.ffn_gates],
        hidden=one_group(model.hidden_gate),
    )


class ExtractedModel:
    """A gate-free network with physically removed units."""

    def __init__(self, descriptor, weights, num_classes, provenance, original_descriptor):
        self.descriptor = descriptor
        self.weights = weights
        self.num_classes = num_classes
        self.provenance = provenance
        self.original_descriptor = original_descriptor

    def parameters(self):
        return self.weights.tensors()

    def encode(self, x):
        from . import autodiff as ad
        from .model import encoder_features

        x = x if isinstance(x, Tensor) else ad.constant(x)
        return encoder_features(self.weights, self.descriptor, x, None)

    def forward(self, x):
        from . import autodiff as ad

        x = x if isinstance(x, Tensor) else ad.constant(x)
        return encoder_forward(self.weights, self.descriptor, x, None)

    dense_forward = forward


def _idx(mask):
    return np.flatnonzero(mask)


def _leaf(a):
    return Tensor(np.ascontiguousarray(a), requires_grad=True)


def extract(model, mask):
    """Delete masked units from ``model`` (gated or already extracted)."""
    desc = model.descriptor
    mask.validate_against(desc)
    w = model.weights
    hid = _idx(mask.hidden)

    conv_specs, conv_weights = [], []
    prev_idx = np.array([0])  # raw waveform channel
    c_in = 1
    for i, (spec, cw) in enumerate(zip(desc.conv_layers, w.conv)):
        keep = _idx(mask.conv[i])
        conv_specs.append(ConvLayerSpec(c_in, len(keep), spec.kernel, spec.stride))
        conv_weights.append(
            ConvLayerWeights(
                _leaf(cw.w.data[keep][:, prev_idx, :]),
                _leaf(cw.b.data[keep]),
            )
        )
        prev_idx, c_in = keep, len(keep)

    proj_w = _leaf(w.proj_w.data[prev_idx][:, hid])
    proj_b = _leaf(w.proj_b.data[hid])

    layer_specs, layer_weights = [], []
    for j, (spec, lw) in enumerate(zip(desc.transformer_layers, w.layers)):
        heads = _idx(mask.heads[j])
        ffn = _idx(mask.ffn[j])
        layer_specs.append(TransformerLayerSpec(len(heads), spec.head_dim, len(ffn)))
        layer_weights.append(
            TransformerLayerWeights(
                wq=[_leaf(lw.wq[k].data[hid]) for k in heads],
                bq=[_leaf(lw.bq[k].data) for k in heads],
                wk=[_leaf(lw.wk[k].data[hid]) for k in heads],
                bk=[_leaf(lw.bk[k].data) for k in heads],
                wv=[_leaf(lw.wv[k].data[hid]) for k in heads],
                bv=[_leaf(lw.bv[k].data) for k in heads],
                wo=[_leaf(lw.wo[k].data[:, hid]) for k in heads],
                w1=_leaf(lw.w1.data[hid][:, ffn]),
                b1=_leaf(lw.b1.data[ffn]),
                w2=_leaf(lw.w2.data[ffn][:, hid]),
                b2=_leaf(lw.b2.data[hid]),
                ln1_g=_leaf(lw.ln1_g.data[hid]),
                ln1_b=_leaf(lw.ln1_b.data[hid]),
                ln2_g=_leaf(lw.ln2_g.data[hid]),
                ln2_b=_leaf(lw.ln2_b.data[hid]),
            )
        )

    shrunk = ArchDescriptor(
        conv_layers=tuple(conv_specs),
        hidden=len(hid),
        transformer_layers=tuple(layer_specs),
        sample_rate=desc.sample_rate,
    )
    weights = EncoderWeights(
        conv_weights,
        proj_w,
        proj_b,
        layer_weights,
        _leaf(w.cls_w.data[hid, :]),
        _leaf(w.cls_b.data),
    )
    original = getattr(model, "original_descriptor", desc)
    return ExtractedModel(shrunk, weights, model.num_classes, mask, original)


# ---------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class ReportRow:
    layer_kind: str
    index: int
    kept: int
    original: int
    kept_mac_share: float


def architecture_report(extracted, seconds=10.0):
    """Per-layer kept/original units and the surviving share of each block's
    compute, the tabular analogue of a remaining-architecture bar chart."""
    orig_desc = extracted.original_descriptor
    new_desc = extracted.descriptor
    orig = {b.block_id: b for b in exact_profile(orig_desc, seconds).blocks}
    new = {b.block_id: b for b in exact_profile(new_desc, seconds).blocks}

    share = lambda bid: new[bid].macs / orig[bid].macs if orig[bid].macs else 1.0
    rows = []
    for i, (o, n) in enumerate(zip(orig_desc.conv_layers, new_desc.conv_layers)):
        rows.append(ReportRow("conv_channel", i, n.out_channels, o.out_channels, share(f"conv{i}")))
    for j, (o, n) in enumerate(zip(orig_desc.transformer_layers, new_desc.transformer_layers)):
        rows.append(ReportRow("attn_head", j, n.heads, o.heads, share(f"mha{j}")))
    for j, (o, n) in enumerate(zip(orig_desc.transformer_layers, new_desc.transformer_layers)):
        rows.append(
            ReportRow("ffn_intermediate", j, n.ffn_intermediate, o.ffn_intermediate, share(f"ffn{j}"))
        )
    total_share = exact_profile(new_desc, seconds).macs / exact_profile(orig_desc, seconds).macs
    rows.append(ReportRow("hidden_dim", 0, new_desc.hidden, orig_desc.hidden, total_share))
    return rows


def write_architecture_report(extracted, path, seconds=10.0):
    rows = architecture_report(extracted, seconds)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_kind", "index", "kept", "original", "kept_mac_share"])
        for r in rows:
            writer.writerow([r.layer_kind, r.index, r.kept, r.original, f"{r.kept_mac_share:.6f}"])
    return rows
