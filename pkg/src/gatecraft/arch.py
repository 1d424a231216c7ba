"""Weight-free structural descriptions of conv-frontend + transformer encoders.

An :class:`ArchDescriptor` carries exactly the dimensions the cost model
needs: the temporal conv stack, the shared hidden size and the per-layer
attention/FFN sizes.  It is the input of the profiler and the blueprint from
which trainable toy models are materialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"conv layer field {name} must be positive")

    def output_length(self, t_in):
        """Valid convolution: floor((T_in - K) / stride) + 1."""
        if t_in < self.kernel:
            raise ValueError(f"input length {t_in} shorter than kernel {self.kernel}")
        return (t_in - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class TransformerLayerSpec:
    heads: int
    head_dim: int
    ffn_intermediate: int

    def __post_init__(self):
        for name in ("heads", "head_dim", "ffn_intermediate"):
            if getattr(self, name) < 1:
                raise ValueError(f"transformer layer field {name} must be positive")


@dataclass(frozen=True)
class PosConvSpec:
    """Grouped same-length convolution inside the encoder (cost model only;
    it is not a pruning unit)."""

    kernel: int
    groups: int

    def __post_init__(self):
        if self.kernel < 1 or self.groups < 1:
            raise ValueError("positional conv kernel and groups must be positive")


@dataclass(frozen=True)
class ArchDescriptor:
    conv_layers: tuple
    hidden: int
    transformer_layers: tuple
    sample_rate: int
    pos_conv: PosConvSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(self.conv_layers))
        object.__setattr__(self, "transformer_layers", tuple(self.transformer_layers))
        if self.hidden < 1 or self.sample_rate < 1:
            raise ValueError("hidden size and sample rate must be positive")
        if self.conv_layers and self.conv_layers[0].in_channels != 1:
            raise ValueError("first conv layer must take the 1-channel raw waveform")
        for prev, cur in zip(self.conv_layers, self.conv_layers[1:]):
            if prev.out_channels != cur.in_channels:
                raise ValueError(
                    f"conv stack mismatch: {prev.out_channels} out vs {cur.in_channels} in"
                )
        if self.pos_conv is not None and self.hidden % self.pos_conv.groups != 0:
            raise ValueError("positional conv groups must divide the hidden size")

    # -- geometry -----------------------------------------------------------

    def frame_lengths(self, n_samples):
        """Sequence length after each conv layer, starting from raw samples."""
        lengths = []
        t = int(n_samples)
        for layer in self.conv_layers:
            t = layer.output_length(t)
            lengths.append(t)
        return lengths

    def frame_count(self, n_samples):
        """Encoder sequence length for a waveform of ``n_samples`` samples."""
        return self.frame_lengths(n_samples)[-1] if self.conv_layers else int(n_samples)

    @property
    def last_conv_channels(self):
        return self.conv_layers[-1].out_channels if self.conv_layers else 1

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        doc = {
            "sample_rate": self.sample_rate,
            "conv_layers": [
                {"in": c.in_channels, "out": c.out_channels, "kernel": c.kernel, "stride": c.stride}
                for c in self.conv_layers
            ],
            "hidden": self.hidden,
            "transformer_layers": [
                {"heads": t.heads, "head_dim": t.head_dim, "ffn_intermediate": t.ffn_intermediate}
                for t in self.transformer_layers
            ],
        }
        if self.pos_conv is not None:
            doc["pos_conv"] = {"kernel": self.pos_conv.kernel, "groups": self.pos_conv.groups}
        return doc

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc):
        try:
            conv = tuple(
                ConvLayerSpec(c["in"], c["out"], c["kernel"], c["stride"])
                for c in doc["conv_layers"]
            )
            trans = tuple(
                TransformerLayerSpec(t["heads"], t["head_dim"], t["ffn_intermediate"])
                for t in doc["transformer_layers"]
            )
            pos = None
            if doc.get("pos_conv") is not None:
                pos = PosConvSpec(doc["pos_conv"]["kernel"], doc["pos_conv"]["groups"])
            return cls(
                conv_layers=conv,
                hidden=doc["hidden"],
                transformer_layers=trans,
                sample_rate=doc["sample_rate"],
                pos_conv=pos,
            )
        except KeyError as e:
            raise ValueError(f"architecture document missing field {e.args[0]!r}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# canonical descriptors


def toy_descriptor():
    """Desk-scale network: 3 conv layers into a 2-layer, 32-dim encoder."""
    return ArchDescriptor(
        conv_layers=(
            ConvLayerSpec(1, 16, 5, 3),
            ConvLayerSpec(16, 16, 3, 2),
            ConvLayerSpec(16, 16, 3, 2),
        ),
        hidden=32,
        transformer_layers=(
            TransformerLayerSpec(4, 8, 64),
            TransformerLayerSpec(4, 8, 64),
        ),
        sample_rate=1000,
    )


def heavy_frontend_toy_descriptor():
    """Toy variant with a deliberately compute-heavy conv frontend: the conv
    stack works on long feature maps (MACs scale with length) while the
    encoder sees a strongly downsampled sequence, so the frontend's share of
    compute far exceeds its share of parameters."""
    return ArchDescriptor(
        conv_layers=(
            ConvLayerSpec(1, 32, 10, 5),
            ConvLayerSpec(32, 32, 5, 3),
            ConvLayerSpec(32, 32, 3, 5),
        ),
        hidden=48,
        transformer_layers=(
            TransformerLayerSpec(4, 8, 96),
            TransformerLayerSpec(4, 8, 96),
        ),
        sample_rate=1000,
    )


def wav2vec2_base_descriptor():
    """The reference speech encoder shape: seven 512-channel temporal convs
    feeding a 12-layer, 768-dim, 12-head transformer with 3072-wide FFNs.
    The kernel/stride tuple is the standard frontend achieving 20 ms hop /
    25 ms receptive field at 16 kHz; the 128-wide 16-group positional conv
    is carried for cost accounting."""
    kernels = (10, 3, 3, 3, 3, 2, 2)
    strides = (5, 2, 2, 2, 2, 2, 2)
    chans = (512,) * 7
    conv = []
    c_in = 1
    for c_out, k, s in zip(chans, kernels, strides):
        conv.append(ConvLayerSpec(c_in, c_out, k, s))
        c_in = c_out
    return ArchDescriptor(
        conv_layers=tuple(conv),
        hidden=768,
        transformer_layers=tuple(TransformerLayerSpec(12, 64, 3072) for _ in range(12)),
        sample_rate=16000,
        pos_conv=PosConvSpec(kernel=128, groups=16),
    )
