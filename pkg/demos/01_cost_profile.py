# Cost profiling: where do the multiply-accumulates and parameters live?
#
# The profiler walks an architecture description (no weights needed) and
# applies one cost formula per block:
#
#   attention:  4*T*h*d*d_head + 2*T^2*h*d_head
#   FFN:        2*T*d*d_int
#   1-D conv:   T_out * C_out * C_in * K
#
# The punchline for the reference speech encoder: its conv frontend owns
# less than 5% of the parameters but roughly a third of the compute, which
# is exactly why pruning by parameter count alone leaves latency on the
# table.

from gatecraft import (
    exact_profile,
    mac_budget_from_sparsity,
    toy_descriptor,
    wav2vec2_base_descriptor,
)

desc = wav2vec2_base_descriptor()
prof = exact_profile(desc, seconds=10.0)

print("reference encoder, 10 s of 16 kHz audio")
print(f"  frames entering the transformer: {desc.frame_count(160000)}")
print(f"  total: {prof.macs / 1e9:8.2f} GMAC   {prof.params / 1e6:6.2f} M params")
print(f"  cnn:   {prof.cnn_macs / 1e9:8.2f} GMAC   {prof.cnn_params / 1e6:6.2f} M params")
print(f"  cnn shares: {prof.cnn_mac_share:.1%} of MACs, {prof.cnn_param_share:.1%} of params")
print()

print("per-block breakdown (top 8 by compute):")
top = sorted(prof.blocks, key=lambda b: -b.macs)[:8]
for b in top:
    print(f"  {b.block_id:10s} {b.kind:9s} {b.macs / 1e9:7.2f} GMAC  {b.params / 1e6:6.3f} M")
print()

# A MAC target translates directly into a budget for the pruned model.
for t in (0.1, 0.3, 0.5):
    budget = mac_budget_from_sparsity(desc, t, 10.0)
    print(f"  target sparsity {t:.0%} -> budget {budget / 1e9:6.2f} GMAC")
print()

# The toy model used throughout the test suite is the same shape in miniature.
toy = exact_profile(toy_descriptor(), seconds=10.0)
print("toy model at 10 s of 1 kHz input")
print(f"  total: {toy.macs / 1e6:.1f} MMAC, {toy.params} params, "
      f"cnn mac share {toy.cnn_mac_share:.1%}")
