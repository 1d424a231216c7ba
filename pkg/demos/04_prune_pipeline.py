# End to end: train dense -> prune under a MAC budget -> extract -> finetune.
#
# The run below is sized to finish in a couple of minutes; double the prune
# epochs for tighter landings.  Artifacts (metric CSVs, checkpoints, the
# architecture report) land in demos/output/.

import csv
import os

from gatecraft import mac_budget_from_sparsity
from gatecraft.pipeline import PruneRunConfig, StageConfig, run_pipeline
from gatecraft.sparsity import SparsityRegime

out_dir = os.path.join(os.path.dirname(__file__), "output", "prune_pipeline")

config = PruneRunConfig(
    regime=SparsityRegime("mac_overall"),
    final_target=0.5,
    target_warmup_steps=120,
    train=StageConfig(epochs=10, lr=1.5e-3, lr_warmup_steps=60),
    prune=StageConfig(epochs=30, lr=1.5e-3, lr_warmup_steps=100),
    finetune=StageConfig(epochs=6, lr=5e-4, lr_warmup_steps=30),
    steps_per_epoch=24,
    seed=0,
    gate_lr=0.05,
)

print("running train -> prune -> extract -> finetune ...")
result = run_pipeline(config, out_dir)

budget = mac_budget_from_sparsity(config.arch, 0.5, config.regime.virtual_seconds)
print()
print(f"dense accuracy:      {result.dense_accuracy:.4f}")
print(f"achieved sparsity:   {result.achieved_sparsity:.4f} (target 0.5, "
      f"gap {result.sparsity_gap:.4f})")
print(f"extracted MACs:      {result.extracted_macs} (budget {budget}, "
      f"{result.extracted_macs / budget:.3f}x)")
print(f"final accuracy:      {result.final_accuracy:.4f}")
print()

print("surviving architecture (from the extraction report):")
with open(os.path.join(out_dir, "architecture.csv")) as fh:
    for row in csv.DictReader(fh):
        bar = "#" * round(20 * int(row["kept"]) / int(row["original"]))
        print(f"  {row['layer_kind']:18s} {row['index']:>2s}  "
              f"{row['kept']:>4s}/{row['original']:<4s} {bar}")
print()
print(f"all artifacts in {out_dir}")
