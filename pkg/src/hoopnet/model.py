"""Hierarchical policy networks and their non-hierarchical baselines.

Every variant shares one per-timestep interface: occupancy channels in,
distributions over look-ahead velocity actions out.  Hierarchical variants
add a goal-box head; attention variants turn the goal distribution into a
multiplicative mask over the action space; the concatenation variant
learns the combined output with a fully-connected head instead.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from .court import CourtSpec, MacroGoalBox, VelocityAction
from .engine import (
    GRUCell,
    Linear,
    Module,
    Tensor,
    concat,
    gaussian_noise,
    maxpool2d,
    no_grad,
    relu,
    softmax,
)
from .engine.nn import BatchNorm, Conv2d
from .engine.tensor import row_block
from .util import rng_for


class Variant(str, Enum):
    CNN = "cnn"
    GRU_CNN = "gru_cnn"
    H_CC = "h_cc"
    H_STACK = "h_stack"
    H_ATT = "h_att"
    H_AUX = "h_aux"


HIERARCHICAL_VARIANTS = frozenset({Variant.H_CC, Variant.H_STACK, Variant.H_ATT, Variant.H_AUX})
ATTENTION_VARIANTS = frozenset({Variant.H_STACK, Variant.H_ATT, Variant.H_AUX})


@dataclass(frozen=True)
class ArchitectureConfig:
    """Network sizes; output dims always derive from the CourtSpec.

    conv_kernels and conv_strides are per layer and must match
    conv_filters in length.
    """

    pyramid: tuple[int, ...] = (2, 2)
    conv_filters: tuple[int, ...] = (8, 16)
    conv_kernels: tuple[int, ...] = (3, 3)
    conv_strides: tuple[int, ...] = (1, 1)
    gru_cells: int = 128
    transfer_hidden: int = 64
    shared_encoder: bool = False

    def validate(self) -> None:
        if not self.pyramid or any(k < 1 for k in self.pyramid):
            raise ValueError("pyramid must list pool kernels >= 1")
        if not self.conv_filters or any(f < 1 for f in self.conv_filters):
            raise ValueError("conv_filters must list positive filter counts")
        if len(self.conv_kernels) != len(self.conv_filters) or \
           len(self.conv_strides) != len(self.conv_filters):
            raise ValueError("conv_kernels and conv_strides must match conv_filters in length")
        if any(k % 2 == 0 or k < 1 for k in self.conv_kernels):
            raise ValueError("conv kernels must be odd and positive")
        if any(s < 1 for s in self.conv_strides):
            raise ValueError("conv strides must be >= 1")
        if self.gru_cells < 1 or self.transfer_hidden < 1:
            raise ValueError("gru_cells and transfer_hidden must be >= 1")


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _pool_out(dim: int, kernel: int) -> int:
    return -(-(dim - kernel) // kernel) + 1


def pyramid_pool_np(x: np.ndarray, kernels: tuple[int, ...]) -> np.ndarray:
    """Max-pool pyramid on plain arrays (inputs are constants, so the
    pyramid never needs a tape; this is the fast path shared by both
    branches and reused across the whole batch)."""
    for k in kernels:
        if k == 1:
            continue
        *lead, h, w = x.shape
        oh, ow = _pool_out(h, k), _pool_out(w, k)
        ph, pw = oh * k - h, ow * k - w
        if ph or pw:
            pad = [(0, 0)] * len(lead) + [(0, ph), (0, pw)]
            x = np.pad(x, pad, constant_values=-np.inf)
        x = x.reshape(*lead, oh, k, ow, k).max(axis=(-3, -1))
    return x


def _conv_out(dim: int, kernel: int, stride: int) -> int:
    pad = (kernel - 1) // 2
    return (dim + 2 * pad - kernel) // stride + 1


class SpatialEncoder(Module):
    """Max-pool pyramid, then conv/bn/relu stack, then noise and flatten."""

    def __init__(self, spec: CourtSpec, arch: ArchitectureConfig, rng: np.random.Generator):
        super().__init__()
        rows, cols = spec.micro_rows, spec.micro_cols
        for k in arch.pyramid:
            if k > rows or k > cols:
                raise ValueError(f"pyramid kernel {k} exceeds grid {rows}x{cols}")
            rows, cols = _pool_out(rows, k), _pool_out(cols, k)
        convs, bns = [], []
        channels = 4
        for i, (f, kernel, stride) in enumerate(
            zip(arch.conv_filters, arch.conv_kernels, arch.conv_strides)
        ):
            conv = Conv2d(channels, f, kernel, stride, rng)
            bn = BatchNorm(f)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", bn)
            convs.append(conv)
            bns.append(bn)
            rows = _conv_out(rows, kernel, stride)
            cols = _conv_out(cols, kernel, stride)
            channels = f
        self.pyramid = arch.pyramid
        self.convs = convs
        self.bns = bns
        self.out_dim = channels * rows * cols

    def __call__(
        self, x: Tensor, training: bool, rng, noise_sigma: float, pre_pooled: bool = False
    ) -> Tensor:
        if not pre_pooled:
            if x.requires_grad:
                for k in self.pyramid:
                    x = maxpool2d(x, k)
            else:
                x = Tensor(pyramid_pool_np(x.data, self.pyramid))
        for conv, bn in zip(self.convs, self.bns):
            x = relu(bn(conv(x), training))
        x = gaussian_noise(x, noise_sigma, rng, training)
        return x.reshape((x.shape[0], -1))


@dataclass(frozen=True)
class StepOutput:
    """Per-step head values for a single sequence.

    ``p_combined`` rows are the (possibly unnormalized) scores that
    predictions are taken from; for attention variants they are the raw
    action distribution times the attention mask, elementwise.
    """

    p_raw: np.ndarray                 # (lookahead, n_actions)
    p_macro: np.ndarray | None        # (n_macro_boxes,)
    attention: np.ndarray | None      # (n_actions,)
    p_combined: np.ndarray            # (lookahead, n_actions)


class HPNModel(Module):
    """One policy network: micro branch, optional macro branch, combiner."""

    def __init__(
        self,
        spec: CourtSpec,
        arch: ArchitectureConfig,
        variant: Variant | str,
        init_seed: int,
    ):
        super().__init__()
        arch.validate()
        self.spec = spec
        self.arch = arch
        self.variant = Variant(variant)
        n_actions = spec.n_actions
        n_boxes = spec.n_macro_boxes
        lookahead = spec.lookahead_steps
        rng = rng_for(init_seed, "init")

        # micro branch first so its initial weights are identical across
        # variants built from the same seed
        self.micro_encoder = SpatialEncoder(spec, arch, rng)
        feat = self.micro_encoder.out_dim
        if self.variant is Variant.CNN:
            self.micro_core = Linear(feat, arch.gru_cells, rng)
        else:
            self.micro_core = GRUCell(feat, arch.gru_cells, rng)
        heads = []
        for k in range(lookahead):
            extra = n_actions if (self.variant is Variant.H_STACK and k > 0) else 0
            head = Linear(arch.gru_cells + extra, n_actions, rng)
            setattr(self, f"micro_head{k}", head)
            heads.append(head)
        self.micro_heads = heads

        if self.hierarchical:
            if arch.shared_encoder:
                # reuse without re-registering so checkpoints stay flat
                object.__setattr__(self, "macro_encoder", self.micro_encoder)
            else:
                self.macro_encoder = SpatialEncoder(spec, arch, rng)
            self.macro_core = GRUCell(self.macro_encoder.out_dim, arch.gru_cells, rng)
            self.macro_head = Linear(arch.gru_cells, n_boxes, rng)
        if self.has_attention:
            self.transfer_hidden_layer = Linear(n_boxes, arch.transfer_hidden, rng)
            self.transfer_out_layer = Linear(arch.transfer_hidden, n_actions, rng)
        if self.variant is Variant.H_CC:
            cc = []
            for k in range(lookahead):
                head = Linear(n_actions + n_boxes, n_actions, rng)
                setattr(self, f"combine_head{k}", head)
                cc.append(head)
            self.combine_heads = cc

    # variant structure

    @property
    def hierarchical(self) -> bool:
        return self.variant in HIERARCHICAL_VARIANTS

    @property
    def has_attention(self) -> bool:
        return self.variant in ATTENTION_VARIANTS

    def branch_set(self) -> frozenset[str]:
        if not self.hierarchical:
            return frozenset({"micro"})
        if self.variant is Variant.H_CC:
            return frozenset({"micro", "macro", "combine"})
        return frozenset({"micro", "macro", "attention"})

    def parameter_groups(self) -> dict[str, list]:
        groups: dict[str, list] = {"micro": [], "macro": [], "transfer": [], "combine": []}
        for name, p in self.named_parameters():
            if name.startswith("transfer"):
                groups["transfer"].append(p)
            elif name.startswith("combine"):
                groups["combine"].append(p)
            elif name.startswith("macro"):
                groups["macro"].append(p)
            else:
                groups["micro"].append(p)
        return groups

    def set_trainable(self, group_names: set[str]) -> None:
        """Freeze every parameter group not listed."""
        for gname, params in self.parameter_groups().items():
            frozen = gname not in group_names
            for p in params:
                p.frozen = frozen

    def config_hash(self) -> str:
        parts = [self.variant.value]
        for f in fields(self.arch):
            parts.append(f"{f.name}={getattr(self.arch, f.name)}")
        for f in fields(self.spec):
            parts.append(f"{f.name}={getattr(self.spec, f.name)}")
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()

    def state_for_checkpoint(self) -> list[tuple[str, np.ndarray]]:
        return [(name, arr) for name, arr, _ in self.named_state()]

    # forward

    def reset_memory(self, batch: int = 1) -> dict:
        """Fresh all-zero recurrent state (empty for the memoryless CNN)."""
        mem: dict = {"_owner": id(self), "_batch": batch}
        if self.variant is not Variant.CNN:
            mem["micro"] = Tensor(np.zeros((batch, self.arch.gru_cells)))
        if self.hierarchical:
            mem["macro"] = Tensor(np.zeros((batch, self.arch.gru_cells)))
        return mem

    def _check_memory(self, mem: dict, batch: int) -> None:
        if mem.get("_owner") != id(self):
            raise ValueError("memory object belongs to a different model instance")
        if mem.get("_batch") != batch:
            raise ValueError(f"memory batch {mem.get('_batch')} != input batch {batch}")

    def step_tensors(
        self,
        x: Tensor,
        mem: dict,
        *,
        training: bool,
        rng=None,
        noise_sigma: float = 0.0,
        branches: frozenset[str] | None = None,
        pre_pooled: bool = False,
    ) -> tuple[dict, dict]:
        """Advance one step; returns graph tensors for the requested branches."""
        n, c = x.shape[0], x.shape[1]
        if c != 4:
            raise ValueError(f"input {x.shape} must have 4 channels")
        if not pre_pooled:
            if x.shape[2] != self.spec.micro_rows or x.shape[3] != self.spec.micro_cols:
                raise ValueError(
                    f"input {x.shape} does not match 4x{self.spec.micro_rows}x{self.spec.micro_cols}"
                )
            if not x.requires_grad:
                # constant input: pool once outside the tape, shared by both branches
                x = Tensor(pyramid_pool_np(x.data, self.arch.pyramid))
                pre_pooled = True
        self._check_memory(mem, n)
        branches = branches if branches is not None else self.branch_set()
        branches = branches & self.branch_set()
        new_mem = dict(mem)
        outs: dict = {}

        if "micro" in branches or "combine" in branches:
            f = self.micro_encoder(x, training, rng, noise_sigma, pre_pooled)
            if self.variant is Variant.CNN:
                h = relu(self.micro_core(f))
            else:
                h = self.micro_core.step(f, mem["micro"])
                new_mem["micro"] = h
            outs["raw_logits"] = self._raw_logits(h)

        if self.hierarchical and branches & {"macro", "attention", "combine"}:
            fm = self.macro_encoder(x, training, rng, noise_sigma, pre_pooled)
            hm = self.macro_core.step(fm, mem["macro"])
            new_mem["macro"] = hm
            macro_logits = self.macro_head(hm)
            outs["macro_logits"] = macro_logits
            if self.has_attention and "attention" in branches:
                outs["attention_logits"] = self._attention_logits(macro_logits)
            if self.variant is Variant.H_CC and "combine" in branches:
                outs["cc_logits"] = self._cc_logits(outs["raw_logits"], macro_logits)
        return outs, new_mem

    def _raw_logits(self, h: Tensor) -> list[Tensor]:
        logits = []
        prev = None
        for head in self.micro_heads:
            inp = h if prev is None else concat([h, prev], axis=-1)
            out = head(inp)
            logits.append(out)
            if self.variant is Variant.H_STACK:
                prev = softmax(out)
        return logits

    def _attention_logits(self, macro_logits: Tensor) -> Tensor:
        p_macro = softmax(macro_logits)
        return self.transfer_out_layer(relu(self.transfer_hidden_layer(p_macro)))

    def _cc_logits(self, raw_logits: list[Tensor], macro_logits: Tensor) -> list[Tensor]:
        p_macro = softmax(macro_logits)
        return [
            head(concat([softmax(raw_logits[k]), p_macro], axis=-1))
            for k, head in enumerate(self.combine_heads)
        ]

    def sequence_tensors(
        self,
        inputs: np.ndarray,
        *,
        training: bool,
        rng=None,
        noise_sigma: float = 0.0,
        branches: frozenset[str] | None = None,
    ) -> list[dict]:
        """Whole-sequence forward over an (N, T, 4, rows, cols) batch.

        The spatial encoders have no temporal state, so they run once over
        all N*T steps; only the recurrent cells advance step by step.
        Returns one tensor dict per step, aligned with step_tensors output.
        """
        branches = branches if branches is not None else self.branch_set()
        branches = branches & self.branch_set()
        n, t_steps = inputs.shape[:2]
        flat = np.ascontiguousarray(inputs.transpose(1, 0, 2, 3, 4)).reshape(
            n * t_steps, *inputs.shape[2:]
        )
        pooled = Tensor(pyramid_pool_np(flat, self.arch.pyramid))
        steps: list[dict] = [dict() for _ in range(t_steps)]
        f_micro = None

        if "micro" in branches or "combine" in branches:
            f_micro = self.micro_encoder(pooled, training, rng, noise_sigma, pre_pooled=True)
            if self.variant is Variant.CNN:
                h_all = relu(self.micro_core(f_micro))
                hs = [row_block(h_all, t * n, (t + 1) * n) for t in range(t_steps)]
            else:
                proj = self.micro_core.project_inputs(f_micro)
                h = Tensor(np.zeros((n, self.arch.gru_cells)))
                hs = []
                for t in range(t_steps):
                    block = {k: row_block(v, t * n, (t + 1) * n) for k, v in proj.items()}
                    h = self.micro_core.step_projected(block, h)
                    hs.append(h)
            for t in range(t_steps):
                steps[t]["raw_logits"] = self._raw_logits(hs[t])

        if self.hierarchical and branches & {"macro", "attention", "combine"}:
            if self.arch.shared_encoder and f_micro is not None:
                f_macro = f_micro
            else:
                f_macro = self.macro_encoder(pooled, training, rng, noise_sigma, pre_pooled=True)
            proj = self.macro_core.project_inputs(f_macro)
            hm = Tensor(np.zeros((n, self.arch.gru_cells)))
            for t in range(t_steps):
                block = {k: row_block(v, t * n, (t + 1) * n) for k, v in proj.items()}
                hm = self.macro_core.step_projected(block, hm)
                macro_logits = self.macro_head(hm)
                steps[t]["macro_logits"] = macro_logits
                if self.has_attention and "attention" in branches:
                    steps[t]["attention_logits"] = self._attention_logits(macro_logits)
                if self.variant is Variant.H_CC and "combine" in branches:
                    steps[t]["cc_logits"] = self._cc_logits(steps[t]["raw_logits"], macro_logits)
        return steps

    def eval_sequence(self, inputs: np.ndarray) -> dict:
        """Teacher-forced inference over (N, T, ...); plain (N, T, ...) arrays."""
        with no_grad():
            steps = self.sequence_tensors(
                np.asarray(inputs, dtype=np.float64), training=False
            )
        p_raw = np.stack(
            [np.stack([_softmax_np(t.data) for t in s["raw_logits"]], axis=1) for s in steps],
            axis=1,
        )
        result = {"p_raw": p_raw, "p_macro": None, "attention": None}
        if "macro_logits" in steps[0]:
            result["p_macro"] = np.stack(
                [_softmax_np(s["macro_logits"].data) for s in steps], axis=1
            )
        if "attention_logits" in steps[0]:
            result["attention"] = np.stack(
                [_softmax_np(s["attention_logits"].data) for s in steps], axis=1
            )
        if self.variant is Variant.H_CC:
            result["p_combined"] = np.stack(
                [np.stack([_softmax_np(t.data) for t in s["cc_logits"]], axis=1) for s in steps],
                axis=1,
            )
        elif self.has_attention:
            result["p_combined"] = p_raw * result["attention"][:, :, None, :]
        else:
            result["p_combined"] = p_raw
        for key in ("p_raw", "p_macro", "attention", "p_combined"):
            v = result[key]
            if v is not None and not np.isfinite(v).all():
                raise FloatingPointError(f"non-finite values in {key}")
        return result

    def eval_step(self, x: np.ndarray, mem: dict) -> tuple[dict, dict]:
        """Inference step on a batch; returns plain probability arrays."""
        with no_grad():
            outs, new_mem = self.step_tensors(
                Tensor(np.asarray(x, dtype=np.float64)), mem, training=False
            )
        p_raw = np.stack([_softmax_np(t.data) for t in outs["raw_logits"]], axis=1)
        result = {"p_raw": p_raw, "p_macro": None, "attention": None}
        if "macro_logits" in outs:
            result["p_macro"] = _softmax_np(outs["macro_logits"].data)
        if "attention_logits" in outs:
            result["attention"] = _softmax_np(outs["attention_logits"].data)
        if self.variant is Variant.H_CC:
            result["p_combined"] = np.stack(
                [_softmax_np(t.data) for t in outs["cc_logits"]], axis=1
            )
        elif self.has_attention:
            result["p_combined"] = p_raw * result["attention"][:, None, :]
        else:
            result["p_combined"] = p_raw
        for key in ("p_raw", "p_macro", "attention", "p_combined"):
            v = result[key]
            if v is not None and not np.isfinite(v).all():
                raise FloatingPointError(f"non-finite values in {key}")
        return result, new_mem

    def begin_sequence_batch(self, n: int) -> dict:
        return self.reset_memory(n)


def forward_step(model: HPNModel, state_channels: np.ndarray, memory: dict) -> tuple[StepOutput, dict]:
    """Single-sequence inference step returning a StepOutput."""
    x = np.asarray(state_channels, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("forward_step drives one sequence; use eval_step for batches")
    outs, mem = model.eval_step(x, memory)
    return (
        StepOutput(
            p_raw=outs["p_raw"][0],
            p_macro=None if outs["p_macro"] is None else outs["p_macro"][0],
            attention=None if outs["attention"] is None else outs["attention"][0],
            p_combined=outs["p_combined"][0],
        ),
        mem,
    )


def predict_action(
    spec: CourtSpec,
    out: StepOutput,
    k: int,
    mode: str = "argmax",
    rng: np.random.Generator | None = None,
    fallback_counter=None,
) -> VelocityAction:
    """Pick look-ahead head k's action; ties break to the lowest index."""
    if not 0 <= k < out.p_combined.shape[0]:
        raise ValueError(f"look-ahead index {k} out of range")
    scores = out.p_combined[k]
    total = scores.sum()
    if total <= 0.0:
        if fallback_counter is not None:
            fallback_counter.bump()
        scores = out.p_raw[k]
        total = scores.sum()
    if mode == "argmax":
        return spec.action_from_index(int(np.argmax(scores)))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an RNG")
        p = scores / total
        return spec.action_from_index(int(rng.choice(len(p), p=p)))
    raise ValueError(f"unknown mode {mode!r}")


def predict_macro(out: StepOutput) -> MacroGoalBox:
    if out.p_macro is None:
        raise ValueError("this variant has no macro-goal head")
    return MacroGoalBox(int(np.argmax(out.p_macro)))
