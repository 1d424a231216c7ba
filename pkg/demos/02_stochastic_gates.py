# Stochastic gates: a differentiable stand-in for keep/prune decisions.
#
# Each pruning unit gets a gate z in [0, 1] sampled by squashing logistic
# noise through a sigmoid, stretching past the unit interval and clamping.
# The clamp piles probability mass onto exactly 0 and exactly 1, so a
# trained gate can genuinely switch a unit off, yet the sample stays
# differentiable in the gate parameter (log_alpha).

import numpy as np

from gatecraft import GateGroup, HardConcreteParams, deterministic_gates, keep_probability, sample_gates
from gatecraft import autodiff as ad

rng = np.random.default_rng(0)

group = GateGroup("demo", n=8, unit_kind="ffn_intermediate")
print("fresh group (log_alpha = 0 everywhere):")
print("  keep probabilities:", np.round(keep_probability(group).data, 4))
z = sample_gates(group, rng)
print("  one sample:        ", np.round(z.data, 4))
print(f"  mass at exactly 0/1: {np.mean(z.data == 0):.2f} / {np.mean(z.data == 1):.2f}")
print()

# The closed form P(z != 0) matches brute-force sampling.
big = GateGroup("mc", n=1, unit_kind="attn_head", init_log_alpha=0.4)
p_closed = keep_probability(big).data[0]
draws = np.stack([sample_gates(big, rng).data for _ in range(200_000)])
print(f"closed-form keep probability: {p_closed:.4f}")
print(f"monte-carlo  keep probability: {(draws != 0).mean():.4f}  (200k samples)")
print()

# Gradients flow through the sample: nudging log_alpha up opens the gate.
group.log_alpha.data[:] = rng.uniform(-1, 1, group.n)
loss = ad.mean(sample_gates(group, np.random.default_rng(7)))
ad.backward(loss)
print("d mean(z) / d log_alpha:", np.round(group.log_alpha.grad, 4))
print("  (non-negative: opening a gate can only raise the mean gate value)")
print()

# Training drives log_alpha to saturation; evaluation then thresholds the
# keep probability into hard 0/1 decisions.
trained = GateGroup("trained", n=6, unit_kind="conv_channel")
trained.log_alpha.data[:] = [4.0, 3.0, 0.5, -0.5, -3.0, -4.0]
print("trained-looking group:")
print("  keep probabilities:", np.round(keep_probability(trained).data, 3))
print("  hard gates @0.5:   ", deterministic_gates(trained, 0.5))
print()

# Temperature controls how binary the samples look before the clamp.
for beta in (1.0, 2.0 / 3.0, 0.25):
    params = HardConcreteParams(beta=beta)
    g = GateGroup("t", n=4000, unit_kind="hidden_dim", params=params)
    z = sample_gates(g, np.random.default_rng(1)).data
    interior = ((z > 0) & (z < 1)).mean()
    print(f"  beta={beta:.2f}: interior sample mass {interior:.2f} "
          f"(lower temperature -> closer to a coin flip)")
