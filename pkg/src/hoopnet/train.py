"""Multi-stage training: branch-wise pre-training on weak labels, then
fine-tuning the whole network on the combined micro objective.

Each stage freezes all parameter groups but its own, gets a fresh
optimizer, and derives its RNG from (run seed, stage name), so a run can
resume at any stage boundary and replay identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .court import CourtSpec
from .data import TrainingSequence, channelize
from .engine import RMSProp, Tensor, backward, clip_gradients, softmax, softmax_nll
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError
from .labels import WeakLabels, attention_targets
from .model import HPNModel, Variant, pyramid_pool_np
from .util import rng_for


class Stage(str, Enum):
    PRETRAIN_MICRO = "pretrain_micro"
    PRETRAIN_MACRO = "pretrain_macro"
    PRETRAIN_ATTENTION = "pretrain_attention"
    FINETUNE = "finetune"


@dataclass(frozen=True)
class TrainConfig:
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-5
    decay: float = 1e-6
    momentum: float = 0.9
    rho: float = 0.9
    batch_size: int = 16
    epochs_pretrain: int = 2
    epochs_finetune: int = 2
    grad_clip_norm: float = 10.0
    l2_activation_weight: float = 1e-4
    noise_sigma: float = 1e-3
    translate_max_cells: int = 8
    attention_label_fraction: float = 1.0
    microbatch_size: int = 16
    holdout_eval_max: int = 128
    early_stop_patience: int = 5
    checkpoint_every_epochs: int = 0  # 0: stage boundaries only

    def validate(self) -> None:
        if self.lr_pretrain <= 0 or self.lr_finetune <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch normalization)")
        if self.microbatch_size < 2:
            raise ConfigError("microbatch_size must be >= 2")
        if not 0.0 <= self.attention_label_fraction <= 1.0:
            raise ConfigError("attention_label_fraction must be in [0, 1]")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive")
        if self.translate_max_cells < 0:
            raise ConfigError("translate_max_cells must be >= 0")


@dataclass(frozen=True)
class LabeledSequence:
    sequence: TrainingSequence
    labels: WeakLabels

    @property
    def possession_id(self) -> str:
        return self.sequence.possession_id


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    loss: float
    acc_delta: tuple[float, float, float, float]
    macro_acc: float | None
    attention_acc: float | None
    tv_monitor: float | None
    grad_norm_mean: float
    seconds: float
    clamped_sequences: int


@dataclass
class TrainReport:
    records: list[EpochRecord]

    CSV_HEADER = (
        "stage,epoch,loss,acc_delta0,acc_delta1,acc_delta2,acc_delta3,"
        "macro_acc,attention_acc,tv_monitor,grad_norm_mean,seconds,clamped_sequences"
    )

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(
                ",".join(
                    [
                        r.stage,
                        str(r.epoch),
                        f"{r.loss:.6f}",
                        *[f"{a:.6f}" for a in r.acc_delta],
                        fmt(r.macro_acc),
                        fmt(r.attention_acc),
                        fmt(r.tv_monitor),
                        f"{r.grad_norm_mean:.6f}",
                        f"{r.seconds:.3f}",
                        str(r.clamped_sequences),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def stage_schedule(variant: Variant) -> list[Stage]:
    """Default stage order per variant; baselines train micro only."""
    if variant in (Variant.CNN, Variant.GRU_CNN):
        return [Stage.PRETRAIN_MICRO]
    if variant is Variant.H_AUX:
        return [Stage.PRETRAIN_MICRO, Stage.PRETRAIN_MACRO, Stage.PRETRAIN_ATTENTION, Stage.FINETUNE]
    return [Stage.PRETRAIN_MICRO, Stage.PRETRAIN_MACRO, Stage.FINETUNE]


def _check_stage(model: HPNModel, stage: Stage) -> None:
    if model.variant in (Variant.CNN, Variant.GRU_CNN) and stage is not Stage.PRETRAIN_MICRO:
        raise ConfigError(f"variant {model.variant.value} supports only pretrain_micro")
    if stage in (Stage.PRETRAIN_MACRO,) and not model.hierarchical:
        raise ConfigError(f"variant {model.variant.value} has no macro branch")
    if stage is Stage.PRETRAIN_ATTENTION and not model.has_attention:
        raise ConfigError(f"variant {model.variant.value} has no attention transfer net")


def _stage_groups(model: HPNModel, stage: Stage) -> set[str]:
    if stage is Stage.PRETRAIN_MICRO:
        return {"micro"}
    if stage is Stage.PRETRAIN_MACRO:
        return {"macro"}
    if stage is Stage.PRETRAIN_ATTENTION:
        return {"transfer"}
    return {"micro", "macro", "transfer", "combine"}


def _stage_branches(model: HPNModel, stage: Stage) -> frozenset[str]:
    if stage is Stage.PRETRAIN_MICRO:
        return frozenset({"micro"})
    if stage is Stage.PRETRAIN_MACRO:
        return frozenset({"macro"})
    if stage is Stage.PRETRAIN_ATTENTION:
        return frozenset({"macro", "attention"})
    return model.branch_set()


# batch assembly and augmentation


def assemble(batch: list[LabeledSequence], spec: CourtSpec) -> dict:
    n = len(batch)
    t_steps = batch[0].sequence.steps
    inputs = np.empty((n, t_steps, 4, spec.micro_rows, spec.micro_cols))
    for i, item in enumerate(batch):
        inputs[i] = channelize(item.sequence, spec)
    return {
        "inputs": inputs,
        "micro": np.stack([it.labels.micro for it in batch]),
        "micro_padded": np.stack([it.labels.micro_padded for it in batch]),
        "macro": np.stack([it.labels.macro for it in batch]),
        "attention": np.stack([it.labels.attention for it in batch]),
    }


def augment_translate(
    batch: list[LabeledSequence],
    max_cells: int,
    rng: np.random.Generator,
    spec: CourtSpec,
) -> tuple[list[LabeledSequence], int]:
    """Shift each sequence by a uniform integer cell offset in (-max, max).

    All agent positions and the goal-target positions move together; goal
    and straight-line labels are recomputed from the shifted positions,
    while velocity labels are translation invariant and kept as-is.
    """
    if max_cells < 0:
        raise ConfigError("max_cells must be >= 0")
    if max_cells == 0:
        return list(batch), 0
    out = []
    clamped = 0
    lo, hi = -(max_cells - 1), max_cells  # integers in (-max, max)
    for item in batch:
        dx, dy = (int(v) for v in rng.integers(lo, hi, size=2))
        if dx == 0 and dy == 0:
            out.append(item)
            continue
        shift = np.array([dx * spec.micro_cell_ft, dy * spec.micro_cell_ft])
        hit = False

        def shifted(a: np.ndarray) -> np.ndarray:
            nonlocal hit
            s = a + shift
            c = s.copy()
            np.clip(c[..., 0], 0.0, spec.width_ft - 1e-9, out=c[..., 0])
            np.clip(c[..., 1], 0.0, spec.height_ft - 1e-9, out=c[..., 1])
            if not np.array_equal(c, s):
                hit = True
            return c

        seq = item.sequence
        new_seq = TrainingSequence(
            possession_id=seq.possession_id,
            focal_agent=seq.focal_agent,
            t0=seq.t0,
            raw_positions=shifted(seq.raw_positions),
            raw_frame_positions=shifted(seq.raw_frame_positions),
            ball_positions=shifted(seq.ball_positions),
            teammate_positions=shifted(seq.teammate_positions),
            opponent_positions=shifted(seq.opponent_positions),
        )
        target_xy = shifted(item.labels.macro_target_xy)
        macro = spec.boxes_from_positions(target_xy)
        attention = attention_targets(
            new_seq.raw_positions, macro, item.labels.attention_magnitudes, spec
        )
        new_labels = WeakLabels(
            micro=item.labels.micro,
            micro_padded=item.labels.micro_padded,
            macro=macro,
            macro_target_xy=target_xy,
            attention=attention,
            attention_magnitudes=item.labels.attention_magnitudes,
        )
        if hit:
            clamped += 1
        out.append(LabeledSequence(new_seq, new_labels))
    return out, clamped


# loss


def compute_loss(
    model: HPNModel,
    batch,
    stage: Stage,
    cfg: TrainConfig,
    spec: CourtSpec | None = None,
    rng: np.random.Generator | None = None,
    denom: int | None = None,
    capture: list | None = None,
) -> Tensor:
    """Stage loss over a (micro-)batch as a graph scalar, ready for backward().

    Pre-training stages are plain cross-entropies against their weak-label
    stream.  Fine-tuning scores each look-ahead head's target under the
    product of the raw action distribution and the attention mask (for the
    concatenation variant, under its combined head), plus an L2 penalty on
    the attention and raw-action output distributions.  The scalar is the
    per-(sequence, step) mean; pass ``denom`` to normalize by a full batch
    when accumulating gradients over micro-batches.
    """
    _check_stage(model, stage)
    arrays = assemble(batch, spec) if isinstance(batch, list) else batch
    inputs = arrays["inputs"]
    n, t_steps = inputs.shape[:2]
    scale = 1.0 / (denom if denom is not None else n * t_steps)
    branches = _stage_branches(model, stage)
    terms: list[Tensor] = []

    def record(outs):
        if capture is None:
            return
        snap = {}
        if "raw_logits" in outs:
            snap["p_raw"] = np.stack([_np_softmax(t.data) for t in outs["raw_logits"]], axis=1)
        if "attention_logits" in outs:
            snap["attention"] = _np_softmax(outs["attention_logits"].data)
        if "cc_logits" in outs:
            snap["p_cc"] = np.stack([_np_softmax(t.data) for t in outs["cc_logits"]], axis=1)
        capture.append(snap)

    def step_terms(outs, micro_t, macro_t, attention_t):
        if stage is Stage.PRETRAIN_MICRO:
            for k, logits in enumerate(outs["raw_logits"]):
                terms.append(softmax_nll(logits, micro_t[:, k]).sum())
        elif stage is Stage.PRETRAIN_MACRO:
            terms.append(softmax_nll(outs["macro_logits"], macro_t).sum())
        elif stage is Stage.PRETRAIN_ATTENTION:
            terms.append(softmax_nll(outs["attention_logits"], attention_t).sum())
        else:  # fine-tune
            if model.variant is Variant.H_CC:
                for k, logits in enumerate(outs["cc_logits"]):
                    terms.append(softmax_nll(logits, micro_t[:, k]).sum())
            else:
                for k, logits in enumerate(outs["raw_logits"]):
                    terms.append(softmax_nll(logits, micro_t[:, k]).sum())
                    terms.append(softmax_nll(outs["attention_logits"], micro_t[:, k]).sum())
            if cfg.l2_activation_weight > 0:
                reg: list[Tensor] = []
                for logits in outs["raw_logits"]:
                    p = softmax(logits)
                    reg.append((p * p).sum())
                if "attention_logits" in outs:
                    p = softmax(outs["attention_logits"])
                    reg.append((p * p).sum())
                for r in reg:
                    terms.append(r * cfg.l2_activation_weight)

    if model.variant is Variant.CNN:
        # memoryless: fold time into the batch for one big pass
        flat = inputs.reshape(n * t_steps, *inputs.shape[2:])
        pooled = pyramid_pool_np(flat, model.arch.pyramid)
        outs, _ = model.step_tensors(
            Tensor(pooled), model.reset_memory(n * t_steps), training=True,
            rng=rng, noise_sigma=cfg.noise_sigma, branches=branches, pre_pooled=True,
        )
        record(outs)
        step_terms(
            outs,
            arrays["micro"].reshape(n * t_steps, -1),
            arrays["macro"].reshape(-1),
            arrays["attention"].reshape(-1),
        )
    else:
        steps = model.sequence_tensors(
            inputs, training=True, rng=rng, noise_sigma=cfg.noise_sigma, branches=branches
        )
        for t, outs in enumerate(steps):
            record(outs)
            step_terms(outs, arrays["micro"][:, t], arrays["macro"][:, t], arrays["attention"][:, t])

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * scale


def _np_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# stage loop


def run_stage(
    model: HPNModel,
    train_data: list[LabeledSequence],
    holdout_data: list[LabeledSequence],
    stage: Stage,
    cfg: TrainConfig,
    spec: CourtSpec,
    seed: int,
) -> list[EpochRecord]:
    from .bench import evaluate  # local import; bench also imports model

    cfg.validate()
    _check_stage(model, stage)
    model.set_trainable(_stage_groups(model, stage))
    # every stage starts from clean optimizer state so a run can resume at
    # stage boundaries from a parameters-only checkpoint
    for p in model.parameters():
        p.cache[...] = 0.0
        p.momentum[...] = 0.0
        p.grad = None
    lr = cfg.lr_finetune if stage is Stage.FINETUNE else cfg.lr_pretrain
    optimizer = RMSProp(model.parameters(), lr, cfg.decay, cfg.momentum, cfg.rho)
    rng = rng_for(seed, "stage", stage.value)
    epochs = cfg.epochs_finetune if stage is Stage.FINETUNE else cfg.epochs_pretrain

    data = list(train_data)
    if stage is Stage.PRETRAIN_ATTENTION and cfg.attention_label_fraction < 1.0:
        keep = max(cfg.batch_size, int(round(len(data) * cfg.attention_label_fraction)))
        order = rng_for(seed, "attention_subset").permutation(len(data))
        data = [data[i] for i in order[:keep]]

    records: list[EpochRecord] = []
    best_acc = -1.0
    since_best = 0
    for epoch in range(epochs):
        tic = time.perf_counter()
        order = rng.permutation(len(data))
        loss_sum = 0.0
        norm_sum = 0.0
        n_batches = 0
        clamped = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = [data[i] for i in idx]
            batch, hits = augment_translate(batch, cfg.translate_max_cells, rng, spec)
            clamped += hits
            denom = len(batch) * batch[0].sequence.steps
            batch_loss = 0.0
            for mstart in range(0, len(batch), cfg.microbatch_size):
                part = batch[mstart:mstart + cfg.microbatch_size]
                loss = compute_loss(model, part, stage, cfg, spec, rng=rng, denom=denom)
                if not np.isfinite(loss.data):
                    raise DivergenceError(f"non-finite loss in stage {stage.value}")
                backward(loss)
                batch_loss += float(loss.data)
            norm_sum += clip_gradients(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            loss_sum += batch_loss
            n_batches += 1
        seconds = time.perf_counter() - tic
        metrics = evaluate(
            model, holdout_data, spec, max_sequences=cfg.holdout_eval_max
        ) if holdout_data else None
        records.append(
            EpochRecord(
                stage=stage.value,
                epoch=epoch,
                loss=loss_sum / max(n_batches, 1),
                acc_delta=tuple(metrics.acc_delta) if metrics else (0.0,) * 4,
                macro_acc=metrics.macro_acc if metrics else None,
                attention_acc=metrics.attention_acc if metrics else None,
                tv_monitor=metrics.tv_monitor if metrics else None,
                grad_norm_mean=norm_sum / max(n_batches, 1),
                seconds=seconds,
                clamped_sequences=clamped,
            )
        )
        if metrics is not None and cfg.early_stop_patience > 0:
            if metrics.acc_delta[0] > best_acc + 1e-12:
                best_acc = metrics.acc_delta[0]
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    break
    return records


def train_full(
    model: HPNModel,
    train_data: list[LabeledSequence],
    holdout_data: list[LabeledSequence],
    cfg: TrainConfig,
    spec: CourtSpec,
    seed: int,
    schedule: list[Stage] | None = None,
    checkpoint_path: str | Path | None = None,
    resume: bool = False,
) -> TrainReport:
    """Run the stage schedule in order, checkpointing at stage boundaries.

    With ``resume=True`` and an existing checkpoint, completed stages are
    skipped and training continues identically to an uninterrupted run
    (stage RNGs derive from the run seed, and each stage starts with a
    fresh optimizer).
    """
    schedule = stage_schedule(model.variant) if schedule is None else schedule
    if not schedule:
        raise ConfigError("no stages in training schedule")
    for stage in schedule:
        _check_stage(model, stage)
    done: list[str] = []
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        meta = load_checkpoint(
            checkpoint_path, model.state_for_checkpoint(), model.config_hash()
        )
        done = [s for s in meta.get("completed_stages", "").split(",") if s]
    records: list[EpochRecord] = []
    completed = list(done)
    for stage in schedule:
        if stage.value in done:
            continue
        records.extend(
            run_stage(model, train_data, holdout_data, stage, cfg, spec, seed)
        )
        completed.append(stage.value)
        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path,
                model.state_for_checkpoint(),
                model.config_hash(),
                meta={
                    "variant": model.variant.value,
                    "completed_stages": ",".join(completed),
                },
            )
    return TrainReport(records)
