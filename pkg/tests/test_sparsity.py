"""Exact profiler and differentiable sparsity accounting."""

from types import SimpleNamespace

import numpy as np
import pytest

from gatecraft import autodiff as ad
from gatecraft.arch import (
    ArchDescriptor,
    ConvLayerSpec,
    TransformerLayerSpec,
    toy_descriptor,
    wav2vec2_base_descriptor,
)
from gatecraft.model import GatedModel
from gatecraft.sparsity import (
    SparsityRegime,
    exact_profile,
    expected_macs,
    expected_sparsity,
    mac_budget_from_sparsity,
)

from oracles import assert_close_grads, numerical_gradient

# frozen golden values, computed by per-layer spreadsheet enumeration of the
# published block formulas before the profiler existed
WAV2VEC2_MACS_10S = 74_061_804_544
WAV2VEC2_CNN_MACS_10S = 24_539_032_576
WAV2VEC2_PARAMS = 94_361_600


def _unit_descriptor():
    return ArchDescriptor(
        conv_layers=(),
        hidden=1,
        transformer_layers=(TransformerLayerSpec(1, 1, 1),),
        sample_rate=1,
    )


def test_ffn_cost_at_unit_dims():
    prof = exact_profile(_unit_descriptor(), 1.0)
    assert {b.block_id: b.macs for b in prof.blocks}["ffn0"] == 2


def test_mha_cost_at_unit_dims():
    prof = exact_profile(_unit_descriptor(), 1.0)
    assert {b.block_id: b.macs for b in prof.blocks}["mha0"] == 6


def test_wav2vec2_profile_golden():
    prof = exact_profile(wav2vec2_base_descriptor(), 10.0)
    assert prof.macs == WAV2VEC2_MACS_10S
    assert prof.cnn_macs == WAV2VEC2_CNN_MACS_10S
    assert prof.params == WAV2VEC2_PARAMS


def test_wav2vec2_profile_matches_reported_scale():
    prof = exact_profile(wav2vec2_base_descriptor(), 10.0)
    assert abs(prof.macs / 74.4e9 - 1.0) < 0.015
    assert abs(prof.cnn_mac_share - 0.33) < 0.02
    assert prof.cnn_param_share < 0.05


def test_profile_rejects_nonpositive_seconds():
    with pytest.raises(ValueError):
        exact_profile(toy_descriptor(), 0.0)


def test_mac_budget_endpoints():
    desc = wav2vec2_base_descriptor()
    full = exact_profile(desc, 10.0).macs
    assert mac_budget_from_sparsity(desc, 0.0, 10.0) == full
    assert mac_budget_from_sparsity(desc, 1.0, 10.0) == 0
    assert mac_budget_from_sparsity(desc, 0.5, 10.0) == round(0.5 * full)
    with pytest.raises(ValueError):
        mac_budget_from_sparsity(desc, 1.5, 10.0)


def test_toy_conv_param_share_is_small():
    prof = exact_profile(toy_descriptor(), 10.0)
    assert prof.params > 0
    assert prof.cnn_param_share < 0.20


@pytest.mark.parametrize("kind", ["size_overall", "size_separate", "mac_overall"])
def test_sparsity_zero_when_everything_kept(kind):
    m = GatedModel(seed=0, gate_init=40.0)
    rep = expected_sparsity(m, SparsityRegime(kind))
    for s in (rep.overall, rep.cnn, rep.transformer):
        assert abs(float(s.data)) < 1e-6


@pytest.mark.parametrize("kind", ["size_overall", "size_separate", "mac_overall"])
def test_sparsity_one_when_everything_pruned(kind):
    m = GatedModel(seed=0, gate_init=-40.0)
    rep = expected_sparsity(m, SparsityRegime(kind))
    for s in (rep.overall, rep.cnn, rep.transformer):
        assert abs(float(s.data) - 1.0) < 1e-6


def test_expected_macs_degenerate_to_exact_profile():
    m = GatedModel(seed=0, gate_init=40.0)
    em = float(expected_macs(m, SparsityRegime("mac_overall")).data)
    assert abs(em - exact_profile(m.descriptor, 10.0).macs) <= 1.0


@pytest.mark.parametrize("kind", ["size_overall", "size_separate", "mac_overall"])
def test_sparsity_gradients_match_finite_differences(kind):
    for i in range(5):
        rng = np.random.default_rng(10 * i + 1)
        m = GatedModel(seed=i)
        gates = m.gate_parameters()
        for g in gates:
            g.data[:] = rng.uniform(-1.5, 1.5, g.shape)
        regime = SparsityRegime(kind)
        ad.zero_grads(gates)
        ad.backward(expected_sparsity(m, regime).overall)
        analytic = [g.grad.copy() for g in gates]
        base = [g.data.copy() for g in gates]

        def f(arrays):
            for g, a in zip(gates, arrays):
                g.data[:] = a
            val = float(expected_sparsity(m, regime).overall.data)
            for g, b in zip(gates, base):
                g.data[:] = b
            return val

        numeric = numerical_gradient(f, [b.copy() for b in base])
        assert_close_grads(analytic, numeric, context=f"{kind}[{i}]")
        ad.zero_grads(gates)


@pytest.mark.parametrize("kind", ["size_overall", "mac_overall"])
def test_sparsity_monotone_nonincreasing_in_log_alpha(kind):
    rng = np.random.default_rng(3)
    m = GatedModel(seed=3)
    for g in m.gate_parameters():
        g.data[:] = rng.uniform(-1, 1, g.shape)
    regime = SparsityRegime(kind)
    s0 = float(expected_sparsity(m, regime).overall.data)
    for g in m.gate_parameters():
        for j in range(0, g.size, max(1, g.size // 3)):
            old = g.data[j]
            g.data[j] = old + 0.7
            s1 = float(expected_sparsity(m, regime).overall.data)
            assert s1 <= s0 + 1e-12
            g.data[j] = old


def _pinned_mask(descriptor, rng):
    return SimpleNamespace(
        conv=[(rng.uniform(size=c.out_channels) < 0.7).astype(float) for c in descriptor.conv_layers],
        heads=[(rng.uniform(size=t.heads) < 0.7).astype(float) for t in descriptor.transformer_layers],
        ffn=[(rng.uniform(size=t.ffn_intermediate) < 0.7).astype(float) for t in descriptor.transformer_layers],
        hidden=(rng.uniform(size=descriptor.hidden) < 0.7).astype(float),
    )


def _shrunk_descriptor(descriptor, mask):
    conv = []
    c_in = 1
    for spec, m in zip(descriptor.conv_layers, mask.conv):
        c_out = int(m.sum())
        conv.append(ConvLayerSpec(c_in, c_out, spec.kernel, spec.stride))
        c_in = c_out
    return ArchDescriptor(
        conv_layers=tuple(conv),
        hidden=int(mask.hidden.sum()),
        transformer_layers=tuple(
            TransformerLayerSpec(int(mh.sum()), t.head_dim, int(mf.sum()))
            for t, mh, mf in zip(descriptor.transformer_layers, mask.heads, mask.ffn)
        ),
        sample_rate=descriptor.sample_rate,
    )


def test_pinned_accounting_equals_shrunk_profile_exactly():
    """Expected accounting with 0/1 pinned gates must coincide with the
    integer profile of the correspondingly shrunk architecture."""
    m = GatedModel(seed=0)
    for i in range(10):
        rng = np.random.default_rng(400 + i)
        mask = _pinned_mask(m.descriptor, rng)
        if min(int(v.sum()) for v in (*mask.conv, *mask.heads, *mask.ffn, mask.hidden)) == 0:
            continue
        shrunk = _shrunk_descriptor(m.descriptor, mask)
        prof = exact_profile(shrunk, 10.0)
        regime = SparsityRegime("mac_overall")
        em = float(expected_macs(m, regime, pinned_mask=mask).data)
        assert em == prof.macs
        rep = expected_sparsity(m, SparsityRegime("size_overall"), pinned_mask=mask)
        dense_params = exact_profile(m.descriptor, 10.0).params
        assert float(rep.overall.data) == pytest.approx(
            1.0 - prof.params / dense_params, abs=1e-15
        )


def test_mac_sparsity_depends_on_virtual_length():
    """The quadratic attention term makes MAC sparsity length-dependent when
    head pruning differs across layers."""
    m = GatedModel(seed=0)
    mask = SimpleNamespace(
        conv=[np.ones(c.out_channels) for c in m.descriptor.conv_layers],
        heads=[np.array([1.0, 1.0, 0.0, 0.0]), np.ones(4)],
        ffn=[np.ones(t.ffn_intermediate) for t in m.descriptor.transformer_layers],
        hidden=np.ones(m.descriptor.hidden),
    )
    s10 = float(expected_sparsity(m, SparsityRegime("mac_overall", 10.0), pinned_mask=mask).overall.data)
    s20 = float(expected_sparsity(m, SparsityRegime("mac_overall", 20.0), pinned_mask=mask).overall.data)
    assert s10 != pytest.approx(s20, abs=1e-9)


def test_per_block_breakdown_schema():
    m = GatedModel(seed=0)
    rep = expected_sparsity(m, SparsityRegime("mac_overall"))
    ids = [bid for bid, _, _ in rep.per_block]
    assert ids == ["conv0", "conv1", "conv2", "proj", "mha0", "ffn0", "mha1", "ffn1"]
    for _, units, cost in rep.per_block:
        assert units >= 0 and cost >= 0


def test_regime_validation():
    with pytest.raises(ValueError):
        SparsityRegime("flops_overall")
    with pytest.raises(ValueError):
        SparsityRegime("mac_overall", virtual_seconds=0.0)
