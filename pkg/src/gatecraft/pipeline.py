"""Three-stage experiment driver: dense training, constrained pruning with
physical extraction, and a final fine-tune of the extracted network, on a
synthetic waveform-classification task.

Every source of randomness flows from the single config seed through named
substreams, so a run is reproducible bit for bit; checkpoints capture
weights, gates, multipliers, optimizer moments and the rng states mid-run.
"""

from __future__ import annotations

import csv
import json
import os
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .arch import ArchDescriptor, toy_descriptor
from .controller import (
    LagrangeState,
    TargetSchedule,
    adversarial_step,
    current_target,
    penalty,
)
from .extract import ExtractedModel, PruneMask, binarize, extract, write_architecture_report
from .gates import HardConcreteParams
from .model import GatedModel, accuracy, cross_entropy
from .optim import AdamW, LinearSchedule
from .sparsity import (
    SparsityRegime,
    exact_profile,
    expected_macs,
    expected_sparsity,
    mac_budget_from_sparsity,
)

STAGES = ("train", "prune", "finetune")
METRICS_FIELDS = (
    "step",
    "stage",
    "loss",
    "accuracy",
    "sparsity_overall",
    "sparsity_cnn",
    "sparsity_trans",
    "macs_expected",
    "lambda1",
    "lambda2",
    "lr",
)
CONTROLLER_FIELDS = (
    "step",
    "target",
    "target_cnn",
    "target_trans",
    "sparsity",
    "sparsity_cnn",
    "sparsity_trans",
    "lambda1",
    "lambda2",
    "task_loss",
    "penalty",
)

CHECKPOINT_FORMAT = "gatecraft-checkpoint-v1"


class PipelineError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# synthetic task


@dataclass(frozen=True)
class SyntheticTask:
    """Waveform classification: class c plants a sinusoid of period
    ``base_period * 2**c`` on a fixed index window; everything else is noise.

    The label is recoverable from the planted indices alone (matched filters
    are linear), so a linear probe separates the noiseless classes perfectly
    while the conv frontend has realistic band-selective work to do.
    """

    num_classes: int = 4
    seq_len: int = 400
    planted_channels: tuple = ()
    noise_std: float = 0.1
    base_period: float = 4.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        planted = self.planted_channels or tuple(range(self.seq_len // 4, 3 * self.seq_len // 4))
        planted = tuple(int(i) for i in planted)
        if not planted:
            raise ValueError("planted_channels must be nonempty")
        if min(planted) < 0 or max(planted) >= self.seq_len:
            raise ValueError("planted_channels outside the sequence")
        object.__setattr__(self, "planted_channels", planted)
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    def class_template(self, c):
        idx = np.asarray(self.planted_channels)
        period = self.base_period * 2.0**c
        return self.amplitude * np.sin(2.0 * np.pi * idx / period)

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "seq_len": self.seq_len,
            "planted_channels": list(self.planted_channels),
            "noise_std": self.noise_std,
            "base_period": self.base_period,
            "amplitude": self.amplitude,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["planted_channels"] = tuple(doc.get("planted_channels") or ())
        return cls(**doc)


def generate_batch(task, batch_size, rng):
    """One (inputs, labels) batch; balanced labels by round-robin construction."""
    labels = np.arange(batch_size) % task.num_classes
    labels = rng.permutation(labels)
    x = task.noise_std * rng.standard_normal((batch_size, task.seq_len))
    idx = np.asarray(task.planted_channels)
    for c in range(task.num_classes):
        rows = labels == c
        if rows.any():
            x[np.ix_(rows, idx)] += task.class_template(c)
    return x, labels


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    lr: float
    lr_warmup_steps: int

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.lr_warmup_steps < 0:
            raise ValueError("stage config fields out of range")


@dataclass(frozen=True)
class PruneRunConfig:
    regime: SparsityRegime = field(default_factory=SparsityRegime)
    final_target: object = 0.5  # scalar, or (cnn, transformer) pair
    target_warmup_steps: int = 120
    arch: ArchDescriptor = field(default_factory=toy_descriptor)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    train: StageConfig = StageConfig(epochs=25, lr=1.5e-3, lr_warmup_steps=100)
    prune: StageConfig = StageConfig(epochs=30, lr=1.5e-3, lr_warmup_steps=100)
    finetune: StageConfig = StageConfig(epochs=10, lr=5e-4, lr_warmup_steps=40)
    steps_per_epoch: int = 24
    batch_size: int = 32
    seed: int = 0
    gate_lr: float = 0.02
    weight_decay: float = 0.01
    threshold: float = 0.5
    eval_batches: int = 8
    num_classes: int = None
    lambda2_init: float = 5.0
    gate_beta: float = HardConcreteParams.beta
    gate_stretch_lo: float = HardConcreteParams.stretch_lo
    gate_stretch_hi: float = HardConcreteParams.stretch_hi

    def __post_init__(self):
        if self.gate_lr not in (0.02, 0.05):
            raise ValueError(f"gate_lr selected from {{0.02, 0.05}}, got {self.gate_lr}")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size and steps_per_epoch must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        pair = isinstance(self.final_target, (tuple, list))
        if pair != (self.regime.kind == "size_separate"):
            raise ValueError(
                f"regime {self.regime.kind} and target {self.final_target!r} disagree on arity"
            )
        if self.num_classes is None:
            object.__setattr__(self, "num_classes", self.task.num_classes)

    def stage(self, name):
        return getattr(self, name)

    def stage_steps(self, name):
        return self.stage(name).epochs * self.steps_per_epoch

    def schedule(self):
        total = max(1, self.stage_steps("prune"))
        target = tuple(self.final_target) if isinstance(self.final_target, list) else self.final_target
        return TargetSchedule(target, min(self.target_warmup_steps, total), total)

    def gate_params(self):
        return HardConcreteParams(self.gate_beta, self.gate_stretch_lo, self.gate_stretch_hi)

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        stages = {
            name: {
                "epochs": self.stage(name).epochs,
                "lr": self.stage(name).lr,
                "lr_warmup_steps": self.stage(name).lr_warmup_steps,
            }
            for name in STAGES
        }
        return {
            "regime": {"kind": self.regime.kind, "virtual_seconds": self.regime.virtual_seconds},
            "schedule": {
                "final_target": list(self.final_target)
                if isinstance(self.final_target, (tuple, list))
                else self.final_target,
                "warmup_steps": self.target_warmup_steps,
            },
            "arch": self.arch.to_dict(),
            "task": self.task.to_dict(),
            "stages": stages,
            "steps_per_epoch": self.steps_per_epoch,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "gate_lr": self.gate_lr,
            "weight_decay": self.weight_decay,
            "threshold": self.threshold,
            "eval_batches": self.eval_batches,
            "lambda2_init": self.lambda2_init,
            "gate": {
                "beta": self.gate_beta,
                "stretch_lo": self.gate_stretch_lo,
                "stretch_hi": self.gate_stretch_hi,
            },
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc):
        try:
            regime = SparsityRegime(
                doc["regime"]["kind"], doc["regime"].get("virtual_seconds", 10.0)
            )
            sched = doc["schedule"]
            target = sched["final_target"]
            if isinstance(target, list):
                target = tuple(target)
            stages = {
                name: StageConfig(
                    epochs=doc["stages"][name]["epochs"],
                    lr=doc["stages"][name]["lr"],
                    lr_warmup_steps=doc["stages"][name]["lr_warmup_steps"],
                )
                for name in STAGES
            }
            gate = doc.get("gate", {})
            return cls(
                regime=regime,
                final_target=target,
                target_warmup_steps=sched.get("warmup_steps", 120),
                arch=ArchDescriptor.from_dict(doc["arch"]) if "arch" in doc else toy_descriptor(),
                task=SyntheticTask.from_dict(doc["task"]) if "task" in doc else SyntheticTask(),
                train=stages["train"],
                prune=stages["prune"],
                finetune=stages["finetune"],
                steps_per_epoch=doc.get("steps_per_epoch", 24),
                batch_size=doc.get("batch_size", 32),
                seed=doc.get("seed", 0),
                gate_lr=doc.get("gate_lr", 0.02),
                weight_decay=doc.get("weight_decay", 0.01),
                threshold=doc.get("threshold", 0.5),
                eval_batches=doc.get("eval_batches", 8),
                lambda2_init=doc.get("lambda2_init", 5.0),
                gate_beta=gate.get("beta", HardConcreteParams.beta),
                gate_stretch_lo=gate.get("stretch_lo", HardConcreteParams.stretch_lo),
                gate_stretch_hi=gate.get("stretch_hi", HardConcreteParams.stretch_hi),
            )
        except KeyError as e:
            raise ValueError(f"run config missing field {e.args[0]!r}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# rng plumbing

_STREAM_IDS = {"init": 0, "train": 1, "prune": 2, "gates": 3, "finetune": 4, "eval": 100}


def make_stream(seed, name):
    return np.random.default_rng([seed, _STREAM_IDS[name]])


def rng_state(rng):
    return rng.bit_generator.state


def set_rng_state(rng, state):
    rng.bit_generator.state = state


# ---------------------------------------------------------------------------
# metrics


class MetricsLog:
    def __init__(self, path, fields):
        self.path = path
        self.fields = fields
        self._fh = open(path, "w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=list(fields))
        self._writer.writeheader()

    def write(self, **row):
        out = {k: "" for k in self.fields}
        for k, v in row.items():
            if v is None:
                continue
            out[k] = repr(v) if isinstance(v, float) else v
        self._writer.writerow(out)

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model, config, mode="dense"):
    """Accuracy on a fixed held-out stream of ``eval_batches`` batches."""
    rng = make_stream(config.seed, "eval")
    correct, total = 0, 0
    for _ in range(config.eval_batches):
        x, y = generate_batch(config.task, config.batch_size, rng)
        if mode == "eval":
            logits = model.forward(x, mode="eval", threshold=config.threshold)
        else:
            logits = model.dense_forward(x)
        correct += int((logits.data.argmax(axis=1) == y).sum())
        total += len(y)
    return correct / total


# ---------------------------------------------------------------------------
# stage runners


@dataclass
class StageResult:
    stage: str
    steps: int
    final_loss: float
    eval_accuracy: float
    sparsity: float = None
    sparsity_gap: float = None
    checkpoint: str = None


def _finite_or_abort(loss, stage, ckpt_path):
    if not np.isfinite(loss):
        raise PipelineError(
            f"{stage} stage produced a non-finite loss; last good checkpoint: {ckpt_path}"
        )


def run_stage(stage, config, model, lagrange=None, out_dir=None, metrics=None, controller_log=None):
    """Run one stage; returns a :class:`StageResult`.

    ``train``/``finetune`` do plain supervised training (dense forward).
    ``prune`` optimizes task loss plus the constraint penalty with one gate
    sample per step and requires ``lagrange``.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if stage == "prune" and lagrange is None:
        raise PipelineError("prune stage requires a controller state")
    if stage == "finetune" and not isinstance(model, ExtractedModel):
        raise PipelineError("finetune stage requires a previously extracted model")

    sc = config.stage(stage)
    total_steps = config.stage_steps(stage)
    data_rng = make_stream(config.seed, stage)
    gate_rng = make_stream(config.seed, "gates") if stage == "prune" else None
    ckpt_path = None if out_dir is None else f"{out_dir}/{stage}.npz"

    if stage == "prune":
        # gate parameters are exempt from the lr schedule: the constraint
        # game must keep equilibrating until the end of the stage, otherwise
        # the decay freezes the sparsity mid-oscillation
        optimizer = AdamW(
            [
                {"params": model.parameters(), "lr": sc.lr, "weight_decay": config.weight_decay},
                {
                    "params": model.gate_parameters(),
                    "lr": config.gate_lr,
                    "weight_decay": 0.0,
                    "scheduled": False,
                },
            ]
        )
        schedule = config.schedule()
    else:
        optimizer = AdamW(model.parameters(), lr=sc.lr, weight_decay=config.weight_decay)
        schedule = None
    lr_schedule = LinearSchedule(min(sc.lr_warmup_steps, total_steps), max(total_steps, 1))

    state = RunState(config, model, optimizer, lagrange, data_rng, gate_rng)
    last_loss = 0.0
    for step in range(total_steps):
        last_loss = _one_step(stage, step, state, schedule, lr_schedule, metrics, controller_log)
        _finite_or_abort(last_loss, stage, ckpt_path)
        if ckpt_path and (step + 1) % config.steps_per_epoch == 0:
            save_checkpoint(ckpt_path, state, stage=stage, step=step + 1)

    if stage == "prune":
        rep = expected_sparsity(model, config.regime)
        sparsity = float(rep.overall.data)
        target = current_target(config.schedule(), total_steps)
        if isinstance(target, tuple):
            gap = max(
                abs(float(rep.cnn.data) - target[0]),
                abs(float(rep.transformer.data) - target[1]),
            )
        else:
            gap = abs(sparsity - target)
        acc = evaluate(model, config, mode="eval")
    else:
        sparsity, gap = None, None
        acc = evaluate(model, config, mode="dense")

    if ckpt_path:
        save_checkpoint(ckpt_path, state, stage=stage, step=total_steps)
    return StageResult(stage, total_steps, float(last_loss), acc, sparsity, gap, ckpt_path)


class RunState:
    """Everything a checkpoint must capture to resume bit-exactly."""

    def __init__(self, config, model, optimizer, lagrange, data_rng, gate_rng):
        self.config = config
        self.model = model
        self.optimizer = optimizer
        self.lagrange = lagrange
        self.data_rng = data_rng
        self.gate_rng = gate_rng


def _one_step(stage, step, state, schedule, lr_schedule, metrics, controller_log):
    config, model = state.config, state.model
    optimizer = state.optimizer
    optimizer.set_lr_factor(lr_schedule.factor(step))
    x, y = generate_batch(config.task, config.batch_size, state.data_rng)

    if stage != "prune":
        logits = model.dense_forward(x)
        loss = cross_entropy(logits, y)
        optimizer.zero_grad()
        ad.backward(loss)
        optimizer.step()
        if metrics:
            metrics.write(
                step=step,
                stage=stage,
                loss=loss.item(),
                accuracy=accuracy(logits, y),
                lr=optimizer.param_groups[0]["lr"],
            )
        return loss.item()

    logits = model.forward(x, mode="train", rng=state.gate_rng)
    task_loss = cross_entropy(logits, y)
    report = expected_sparsity(model, config.regime)
    target = current_target(schedule, step)
    g = penalty(state.lagrange, report, target, config.regime)
    objective = ad.add(task_loss, g)
    adversarial_step(objective, optimizer, state.lagrange, config.gate_lr)

    l1, l2 = state.lagrange.values()
    macs = float(expected_macs(model, config.regime).data)
    if metrics:
        metrics.write(
            step=step,
            stage=stage,
            loss=task_loss.item(),
            accuracy=accuracy(logits, y),
            sparsity_overall=float(report.overall.data),
            sparsity_cnn=float(report.cnn.data),
            sparsity_trans=float(report.transformer.data),
            macs_expected=macs,
            lambda1=l1,
            lambda2=l2,
            lr=optimizer.param_groups[0]["lr"],
        )
    if controller_log:
        pair = isinstance(target, tuple)
        controller_log.write(
            step=step,
            target=None if pair else target,
            target_cnn=target[0] if pair else None,
            target_trans=target[1] if pair else None,
            sparsity=float(report.overall.data),
            sparsity_cnn=float(report.cnn.data),
            sparsity_trans=float(report.transformer.data),
            lambda1=l1,
            lambda2=l2,
            task_loss=task_loss.item(),
            penalty=g.item(),
        )
    return task_loss.item()


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path, state, stage, step):
    model = state.model
    pruned = isinstance(model, ExtractedModel)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "stage": stage,
        "step": int(step),
        "pruned": pruned,
        "descriptor": model.descriptor.to_dict(),
        "num_classes": model.num_classes,
        "config": state.config.to_dict(),
        "lagrange": state.lagrange.state_dict() if state.lagrange else None,
        "lagrange_kind": state.lagrange.regime_kind if state.lagrange else None,
        "rng": {
            "data": rng_state(state.data_rng) if state.data_rng is not None else None,
            "gates": rng_state(state.gate_rng) if state.gate_rng is not None else None,
        },
        "has_optimizer": state.optimizer is not None,
    }
    arrays = {}
    for i, p in enumerate(model.parameters()):
        arrays[f"w{i}"] = p.data
    if not pruned:
        for i, g in enumerate(model.gate_groups()):
            arrays[f"g{i}"] = g.log_alpha.data
    else:
        mask = model.provenance
        manifest["original_descriptor"] = model.original_descriptor.to_dict()
        for i, m in enumerate(mask.conv):
            arrays[f"mask_conv{i}"] = m
        for i, m in enumerate(mask.heads):
            arrays[f"mask_heads{i}"] = m
        for i, m in enumerate(mask.ffn):
            arrays[f"mask_ffn{i}"] = m
        arrays["mask_hidden"] = mask.hidden
    if state.optimizer is not None:
        for k, v in state.optimizer.state_arrays().items():
            arrays[f"opt_{k}"] = v
    np.savez(path, manifest=np.frombuffer(json.dumps(manifest, default=_json_np).encode(), dtype=np.uint8), **arrays)


def _json_np(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


@dataclass
class LoadedCheckpoint:
    manifest: dict
    model: object
    config: PruneRunConfig
    lagrange: LagrangeState
    optimizer_arrays: dict
    rng: dict


def load_checkpoint(path):
    """Rebuild models and training state; never returns partial state."""
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from None
    if "manifest" not in arrays:
        raise CheckpointError(f"checkpoint {path} carries no manifest")
    manifest = json.loads(bytes(arrays.pop("manifest")).decode())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")

    config = PruneRunConfig.from_dict(manifest["config"])
    descriptor = ArchDescriptor.from_dict(manifest["descriptor"])
    if manifest["pruned"]:
        original = ArchDescriptor.from_dict(manifest["original_descriptor"])
        mask = PruneMask(
            conv=[arrays[f"mask_conv{i}"] for i in range(len(original.conv_layers))],
            heads=[arrays[f"mask_heads{i}"] for i in range(len(original.transformer_layers))],
            ffn=[arrays[f"mask_ffn{i}"] for i in range(len(original.transformer_layers))],
            hidden=arrays["mask_hidden"],
        )
        seed_model = GatedModel(original, manifest["num_classes"], seed=0)
        model = extract(seed_model, mask)
        model.original_descriptor = original
    else:
        model = GatedModel(
            descriptor,
            manifest["num_classes"],
            seed=config.seed,
            gate_params=config.gate_params(),
        )
        for i, g in enumerate(model.gate_groups()):
            key = f"g{i}"
            if key not in arrays or arrays[key].shape != g.log_alpha.shape:
                raise CheckpointError(f"gate group {g.name} missing or mis-shaped in {path}")
            g.log_alpha.data = np.array(arrays[key], dtype=np.float64)

    params = model.parameters()
    for i, p in enumerate(params):
        key = f"w{i}"
        if key not in arrays:
            raise CheckpointError(f"weight {key} missing from {path}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(
                f"weight {key} shape {arrays[key].shape} != expected {p.data.shape}"
            )
        p.data = np.array(arrays[key], dtype=np.float64)

    lagrange = None
    if manifest.get("lagrange") is not None:
        lagrange = LagrangeState(manifest["lagrange_kind"])
        lagrange.load_state_dict(manifest["lagrange"])

    optimizer_arrays = {
        k[len("opt_") :]: v for k, v in arrays.items() if k.startswith("opt_")
    }
    return LoadedCheckpoint(manifest, model, config, lagrange, optimizer_arrays, manifest["rng"])


# ---------------------------------------------------------------------------
# whole-pipeline driver


@dataclass
class PipelineResult:
    stages: dict
    achieved_sparsity: float = None
    sparsity_gap: float = None
    extracted_macs: int = None
    mac_budget: int = None
    dense_accuracy: float = None
    final_accuracy: float = None
    out_dir: str = None
    model: object = None


def run_pipeline(config, out_dir, stages=STAGES, model=None):
    """Run the requested stages in order, producing metrics, checkpoints,
    the extracted model and its architecture report under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    metrics = MetricsLog(f"{out_dir}/metrics.csv", METRICS_FIELDS)
    controller_log = None
    results = {}
    result = PipelineResult(stages=results, out_dir=out_dir)
    try:
        if model is None:
            if "train" in stages:
                model = GatedModel(
                    config.arch, config.num_classes, seed=config.seed,
                    gate_params=config.gate_params(),
                )
            elif "prune" in stages:
                train_ckpt = f"{out_dir}/train.npz"
                if os.path.exists(train_ckpt):
                    model = load_checkpoint(train_ckpt).model
                else:
                    model = GatedModel(
                        config.arch, config.num_classes, seed=config.seed,
                        gate_params=config.gate_params(),
                    )

        if "train" in stages:
            results["train"] = run_stage("train", config, model, out_dir=out_dir, metrics=metrics)
            result.dense_accuracy = results["train"].eval_accuracy

        if "prune" in stages:
            lagrange = LagrangeState(config.regime.kind, l2_init=config.lambda2_init)
            controller_log = MetricsLog(f"{out_dir}/controller.csv", CONTROLLER_FIELDS)
            results["prune"] = run_stage(
                "prune", config, model,
                lagrange=lagrange, out_dir=out_dir, metrics=metrics,
                controller_log=controller_log,
            )
            result.achieved_sparsity = results["prune"].sparsity
            result.sparsity_gap = results["prune"].sparsity_gap

            mask = binarize(model, config.threshold)
            extracted = extract(model, mask)
            ex_state = RunState(config, extracted, None, None, None, None)
            save_checkpoint(f"{out_dir}/extracted.npz", ex_state, stage="extract", step=0)
            write_architecture_report(
                extracted, f"{out_dir}/architecture.csv", seconds=config.regime.virtual_seconds
            )
            result.extracted_macs = exact_profile(
                extracted.descriptor, config.regime.virtual_seconds
            ).macs
            if not isinstance(config.final_target, (tuple, list)):
                result.mac_budget = mac_budget_from_sparsity(
                    config.arch, config.final_target, config.regime.virtual_seconds
                )
            model = extracted

        if "finetune" in stages:
            if not isinstance(model, ExtractedModel):
                loaded = load_checkpoint(f"{out_dir}/extracted.npz")
                model = loaded.model
            results["finetune"] = run_stage(
                "finetune", config, model, out_dir=out_dir, metrics=metrics
            )
            result.final_accuracy = results["finetune"].eval_accuracy
    finally:
        metrics.close()
        if controller_log:
            controller_log.close()
    result.model = model
    return result
