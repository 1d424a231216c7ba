# The constraint game: landing on an exact sparsity instead of tuning a
# penalty weight.
#
# A plain L0 penalty  lambda * E[#kept]  needs its weight swept until the
# model happens to end up at the right size.  The constrained formulation
# instead plays a minimax game
#
#     max_{l1,l2} min_alpha   task(alpha) + l1*(s - t) + l2*(s - t)^2
#
# where s is the differentiable expected sparsity.  The multipliers climb
# whenever the constraint is violated, so at equilibrium s = t.  Here the
# "model" is just a bag of 24 gates and the task loss is a preference for
# keeping the first 8 units open; watch s track the ramping target.

import numpy as np

from gatecraft import GateGroup, LagrangeState, SparsityRegime, TargetSchedule, current_target, keep_probability, penalty
from gatecraft import autodiff as ad
from gatecraft.controller import adversarial_step
from gatecraft.optim import AdamW
from gatecraft.sparsity import SparsityReport

group = GateGroup("units", n=24, unit_kind="ffn_intermediate")
favored = np.zeros(24)
favored[:8] = 0.15  # the task mildly wants the first eight units kept

state = LagrangeState("size_overall")
optimizer = AdamW([{"params": [group.log_alpha], "lr": 0.05}])
schedule = TargetSchedule(final_target=0.5, warmup_steps=400, total_steps=1600)
regime = SparsityRegime("size_overall")

print("step   target   sparsity   l1       l2")
for step in range(1600):
    p = keep_probability(group)
    s = ad.sub(ad.constant(1.0), ad.scale(ad.tensor_sum(p), 1.0 / group.n))
    task = ad.scale(ad.tensor_sum(ad.mul(p, ad.constant(-favored))), 1.0)
    report = SparsityReport(regime=regime, overall=s, cnn=s, transformer=s)
    t = current_target(schedule, step)
    g = penalty(state, report, t, regime)
    adversarial_step(ad.add(task, g), optimizer, state, lambda_lr=0.05)
    if step % 200 == 0 or step == 1599:
        l1, l2 = state.values()
        print(f"{step:5d}   {t:.3f}    {float(s.data):.4f}     {l1:+.3f}   {l2:.3f}")

p = keep_probability(group).data
print()
print("final keep probabilities (favored units first):")
print("  favored :", np.round(p[:8], 3))
print("  others  :", np.round(p[8:], 3))
print(f"final sparsity {1 - p.mean():.4f} vs target 0.5 -- and the task kept "
      "what it cared about.")
