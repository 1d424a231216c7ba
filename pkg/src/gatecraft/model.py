"""Trainable conv+transformer classifier with gates at four granularities.

The network is a waveform frontend (valid 1-D convolutions with GeLU),
a linear projection into the shared hidden size, a stack of pre-layer-norm
transformer blocks, mean pooling over time and a linear classifier.

Gates multiply activations at: conv output channels, attention heads
(one scalar per head), FFN intermediate units, and the shared hidden
dimension.  The hidden gate is applied to the representation entering each
block and additionally weights the layer-norm statistics and the sub-block
inputs/outputs; that placement keeps a 0/1-pinned gated forward exactly
equivalent to physically removing the dimensions (see ``extract``), because
normalization statistics must not see pruned entries.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .arch import ArchDescriptor, toy_descriptor
from .gates import GateGroup, deterministic_gates, sample_gates


class NonFiniteError(RuntimeError):
    """Raised when a forward pass produces NaN or infinity."""

    def __init__(self, stage, index):
        self.stage = stage
        self.index = index
        super().__init__(f"non-finite activations in {stage} {index}")


# ---------------------------------------------------------------------------
# weights


class ConvLayerWeights:
    def __init__(self, w, b):
        self.w = w  # [C_out, C_in, K]
        self.b = b  # [C_out, 1], broadcast over time

    def tensors(self):
        return [self.w, self.b]


class TransformerLayerWeights:
    """Per-head attention parameters plus the FFN and norm parameters.

    Attention weights are stored per head (lists of [d, d_head] matrices and
    one [d_head, d] output map per head) so that removing a head is just
    dropping a list entry.  The output projection carries no bias: a layer
    with every head gated off contributes exactly zero to the residual.
    """

    def __init__(self, wq, bq, wk, bk, wv, bv, wo, w1, b1, w2, b2, ln1_g, ln1_b, ln2_g, ln2_b):
        self.wq, self.bq = wq, bq
        self.wk, self.bk = wk, bk
        self.wv, self.bv = wv, bv
        self.wo = wo
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2
        self.ln1_g, self.ln1_b = ln1_g, ln1_b
        self.ln2_g, self.ln2_b = ln2_g, ln2_b

    @property
    def n_heads(self):
        return len(self.wq)

    def tensors(self):
        out = []
        for k in range(self.n_heads):
            out += [self.wq[k], self.bq[k], self.wk[k], self.bk[k], self.wv[k], self.bv[k], self.wo[k]]
        out += [self.w1, self.b1, self.w2, self.b2, self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]
        return out


class EncoderWeights:
    def __init__(self, conv, proj_w, proj_b, layers, cls_w, cls_b):
        self.conv = conv
        self.proj_w, self.proj_b = proj_w, proj_b
        self.layers = layers
        self.cls_w, self.cls_b = cls_w, cls_b

    def tensors(self):
        out = []
        for c in self.conv:
            out += c.tensors()
        out += [self.proj_w, self.proj_b]
        for l in self.layers:
            out += l.tensors()
        out += [self.cls_w, self.cls_b]
        return out


def _param(rng, shape, fan_in):
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_weights(descriptor, num_classes, rng):
    """Fan-in scaled normal init; biases zero, norm scales one."""
    conv = []
    for spec in descriptor.conv_layers:
        fan = spec.in_channels * spec.kernel
        conv.append(
            ConvLayerWeights(
                _param(rng, (spec.out_channels, spec.in_channels, spec.kernel), fan),
                _zeros((spec.out_channels, 1)),
            )
        )
    d = descriptor.hidden
    proj_w = _param(rng, (descriptor.last_conv_channels, d), descriptor.last_conv_channels)
    proj_b = _zeros(d)
    layers = []
    for spec in descriptor.transformer_layers:
        h, dh, dint = spec.heads, spec.head_dim, spec.ffn_intermediate
        wq, bq, wk, bk, wv, bv, wo = [], [], [], [], [], [], []
        for _ in range(h):
            wq.append(_param(rng, (d, dh), d))
            bq.append(_zeros(dh))
            wk.append(_param(rng, (d, dh), d))
            bk.append(_zeros(dh))
            wv.append(_param(rng, (d, dh), d))
            bv.append(_zeros(dh))
            wo.append(_param(rng, (dh, d), dh))
        layers.append(
            TransformerLayerWeights(
                wq, bq, wk, bk, wv, bv, wo,
                w1=_param(rng, (d, dint), d),
                b1=_zeros(dint),
                w2=_param(rng, (dint, d), dint),
                b2=_zeros(d),
                ln1_g=Tensor(np.ones(d), requires_grad=True),
                ln1_b=_zeros(d),
                ln2_g=Tensor(np.ones(d), requires_grad=True),
                ln2_b=_zeros(d),
            )
        )
    cls_w = _param(rng, (d, num_classes), d)
    cls_b = _zeros(num_classes)
    return EncoderWeights(conv, proj_w, proj_b, layers, cls_w, cls_b)


# ---------------------------------------------------------------------------
# gate values for one forward pass


class GateValues:
    """Concrete gate tensors used by a single forward pass."""

    def __init__(self, conv, heads, ffn, hidden):
        self.conv = conv
        self.heads = heads
        self.ffn = ffn
        self.hidden = hidden

    @classmethod
    def from_arrays(cls, conv, heads, ffn, hidden):
        wrap = lambda a: ad.constant(np.asarray(a, dtype=np.float64))
        return cls([wrap(a) for a in conv], [wrap(a) for a in heads], [wrap(a) for a in ffn], wrap(hidden))

    @classmethod
    def all_ones(cls, descriptor):
        return cls.from_arrays(
            [np.ones(c.out_channels) for c in descriptor.conv_layers],
            [np.ones(t.heads) for t in descriptor.transformer_layers],
            [np.ones(t.ffn_intermediate) for t in descriptor.transformer_layers],
            np.ones(descriptor.hidden),
        )


# ---------------------------------------------------------------------------
# forward pass (shared by gated, pinned and extracted evaluation)


def _check_finite(t, stage, index):
    if not np.isfinite(t.data).all():
        raise NonFiniteError(stage, index)


def encoder_features(weights, descriptor, x, gate_values=None, check_finite=True):
    """Run the encoder; ``gate_values=None`` is the plain ungated forward.

    ``x`` is [batch, samples]; returns features [batch, frames, hidden].
    """
    if x.ndim != 2:
        raise ad.ShapeError("forward", f"expected [batch, samples] input, got {x.shape}")
    gv = gate_values
    b, t_in = x.shape
    h = ad.reshape(x, (b, 1, t_in))
    for i, (spec, cw) in enumerate(zip(descriptor.conv_layers, weights.conv)):
        h = ad.conv1d(h, cw.w, stride=spec.stride)
        h = ad.add(h, cw.b)
        h = ad.gelu(h)
        if gv is not None:
            h = ad.mul(h, ad.reshape(gv.conv[i], (spec.out_channels, 1)))
        if check_finite:
            _check_finite(h, "conv layer", i)

    h = ad.transpose(h, (0, 2, 1))  # [B, T, C_last]
    h = ad.add(ad.matmul(h, weights.proj_w), weights.proj_b)
    z_hid = gv.hidden if gv is not None else None
    if z_hid is not None:
        h = ad.mul(h, z_hid)

    for j, (spec, lw) in enumerate(zip(descriptor.transformer_layers, weights.layers)):
        h = _transformer_block(h, spec, lw, gv, j, z_hid)
        if check_finite:
            _check_finite(h, "transformer layer", j)
    return h


def encoder_forward(weights, descriptor, x, gate_values=None, check_finite=True):
    """Features, mean-pooled over time, through the linear task head."""
    h = encoder_features(weights, descriptor, x, gate_values, check_finite)
    pooled = ad.mean(h, axis=1)  # [B, d]
    return ad.add(ad.matmul(pooled, weights.cls_w), weights.cls_b)


def _transformer_block(x, spec, lw, gv, j, z_hid):
    inv_sqrt_dh = 1.0 / math.sqrt(spec.head_dim)

    h1 = ad.layernorm(x, lw.ln1_g, lw.ln1_b, weights=z_hid)
    if z_hid is not None:
        h1 = ad.mul(h1, z_hid)
    att = None
    for k in range(lw.n_heads):
        q = ad.add(ad.matmul(h1, lw.wq[k]), lw.bq[k])
        key = ad.add(ad.matmul(h1, lw.wk[k]), lw.bk[k])
        v = ad.add(ad.matmul(h1, lw.wv[k]), lw.bv[k])
        scores = ad.scale(ad.matmul(q, ad.transpose(key)), inv_sqrt_dh)
        weights_k = ad.softmax(scores, axis=-1)
        head_out = ad.matmul(ad.matmul(weights_k, v), lw.wo[k])
        if gv is not None:
            head_out = ad.mul(head_out, gv.heads[j][k : k + 1])
        att = head_out if att is None else ad.add(att, head_out)
    if z_hid is not None:
        att = ad.mul(att, z_hid)
    x = ad.add(x, att)

    h2 = ad.layernorm(x, lw.ln2_g, lw.ln2_b, weights=z_hid)
    if z_hid is not None:
        h2 = ad.mul(h2, z_hid)
    f = ad.gelu(ad.add(ad.matmul(h2, lw.w1), lw.b1))
    if gv is not None:
        f = ad.mul(f, gv.ffn[j])
    f = ad.add(ad.matmul(f, lw.w2), lw.b2)
    if z_hid is not None:
        f = ad.mul(f, z_hid)
    return ad.add(x, f)


# ---------------------------------------------------------------------------
# the gated model


def _governed_params(descriptor, kind, layer_index):
    """Parameters directly owned by one unit of a gate group (siblings dense)."""
    d = descriptor.hidden
    if kind == "conv_channel":
        spec = descriptor.conv_layers[layer_index]
        return spec.in_channels * spec.kernel + 1
    if kind == "attn_head":
        spec = descriptor.transformer_layers[layer_index]
        dh = spec.head_dim
        return 3 * (d * dh + dh) + dh * d
    if kind == "ffn_intermediate":
        return 2 * d + 1
    # hidden_dim: projection column + per-layer rows/cols/norms + biases
    per_layer = 0
    for spec in descriptor.transformer_layers:
        per_layer += 3 * spec.heads * spec.head_dim  # qkv rows
        per_layer += spec.heads * spec.head_dim  # output cols
        per_layer += 2 * spec.ffn_intermediate  # w1 rows, w2 cols
        per_layer += 1 + 4  # b2 entry + ln scales/shifts
    return descriptor.last_conv_channels + 1 + per_layer


class GatedModel:
    """Trainable network plus one gate group per pruning-unit family."""

    def __init__(self, descriptor=None, num_classes=4, seed=0, gate_params=None, gate_init=0.0):
        self.descriptor = descriptor or toy_descriptor()
        if self.descriptor.pos_conv is not None:
            raise ValueError("positional conv blocks exist for cost accounting only, "
                             "not in trainable models")
        self.num_classes = int(num_classes)
        rng = np.random.default_rng(seed) if isinstance(seed, (int, np.integer)) else seed
        self.weights = init_weights(self.descriptor, self.num_classes, rng)

        mk = lambda name, n, kind, idx: GateGroup(
            name, n, kind,
            params=gate_params,
            params_per_gate=_governed_params(self.descriptor, kind, idx),
            init_log_alpha=gate_init,
        )
        self.conv_gates = [
            mk(f"conv{i}", c.out_channels, "conv_channel", i)
            for i, c in enumerate(self.descriptor.conv_layers)
        ]
        self.head_gates = [
            mk(f"heads{j}", t.heads, "attn_head", j)
            for j, t in enumerate(self.descriptor.transformer_layers)
        ]
        self.ffn_gates = [
            mk(f"ffn{j}", t.ffn_intermediate, "ffn_intermediate", j)
            for j, t in enumerate(self.descriptor.transformer_layers)
        ]
        self.hidden_gate = mk("hidden", self.descriptor.hidden, "hidden_dim", 0)

    def gate_groups(self):
        return [*self.conv_gates, *self.head_gates, *self.ffn_gates, self.hidden_gate]

    def parameters(self):
        return self.weights.tensors()

    def gate_parameters(self):
        return [g.log_alpha for g in self.gate_groups()]

    # -- gate realizations ---------------------------------------------------

    def sampled_gate_values(self, rng):
        return GateValues(
            [sample_gates(g, rng) for g in self.conv_gates],
            [sample_gates(g, rng) for g in self.head_gates],
            [sample_gates(g, rng) for g in self.ffn_gates],
            sample_gates(self.hidden_gate, rng),
        )

    def thresholded_gate_values(self, threshold=0.5):
        return GateValues.from_arrays(
            [deterministic_gates(g, threshold) for g in self.conv_gates],
            [deterministic_gates(g, threshold) for g in self.head_gates],
            [deterministic_gates(g, threshold) for g in self.ffn_gates],
            deterministic_gates(self.hidden_gate, threshold),
        )

    # -- forward -------------------------------------------------------------

    def _resolve_gates(self, mode, rng, threshold, gate_values):
        if gate_values is not None:
            return gate_values
        if mode == "train":
            if rng is None:
                raise ValueError("train-mode forward needs a seeded rng")
            return self.sampled_gate_values(rng)
        if mode == "eval":
            return self.thresholded_gate_values(threshold)
        if mode == "dense":
            return None
        raise ValueError(f"unknown forward mode {mode!r}")

    def encode(self, x, mode="train", rng=None, threshold=0.5, gate_values=None):
        """Encoder features [batch, frames, hidden] for a [batch, samples] input.

        ``train`` samples one gate realization from ``rng``; ``eval`` uses
        thresholded deterministic gates; ``dense`` bypasses gating entirely.
        Explicit ``gate_values`` (e.g. a pinned 0/1 mask) override the mode.
        """
        x = x if isinstance(x, Tensor) else ad.constant(x)
        gv = self._resolve_gates(mode, rng, threshold, gate_values)
        return encoder_features(self.weights, self.descriptor, x, gv)

    def forward(self, x, mode="train", rng=None, threshold=0.5, gate_values=None):
        """Task-head logits: encoder features, mean-pooled, linear classifier."""
        x = x if isinstance(x, Tensor) else ad.constant(x)
        gv = self._resolve_gates(mode, rng, threshold, gate_values)
        return encoder_forward(self.weights, self.descriptor, x, gv)

    def dense_forward(self, x):
        return self.forward(x, mode="dense")


# ---------------------------------------------------------------------------
# classification loss


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax logits."""
    b, k = logits.shape
    shift = ad.constant(logits.data.max(axis=1, keepdims=True))
    shifted = ad.sub(logits, shift)
    lse = ad.log(ad.tensor_sum(ad.exp(shifted), axis=1, keepdims=True))
    logp = ad.sub(shifted, lse)
    onehot = np.zeros((b, k))
    onehot[np.arange(b), np.asarray(labels)] = 1.0
    picked = ad.tensor_sum(ad.mul(logp, ad.constant(onehot)), axis=1)
    return ad.scale(ad.mean(picked), -1.0)


def accuracy(logits, labels):
    data = logits.data if isinstance(logits, Tensor) else logits
    return float((data.argmax(axis=1) == np.asarray(labels)).mean())
