"""Teacher-forced benchmark metrics and the comparison table.

All metrics feed ground-truth states at every step; they measure
prediction, never simulation.  Look-ahead accuracy compares each head's
argmax to the velocity label that many raw frames ahead; steps whose
label was end-padded are excluded from the look-ahead denominators.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .court import CourtSpec
from .errors import ConfigError, DataError
from .model import Variant
from .train import LabeledSequence, assemble

VARIANT_ORDER = [
    Variant.CNN, Variant.GRU_CNN, Variant.H_CC, Variant.H_STACK, Variant.H_ATT, Variant.H_AUX,
]


@dataclass(frozen=True)
class EvalMetrics:
    acc_delta: tuple[float, ...]
    n_delta: tuple[int, ...]
    macro_acc: float | None
    macro_acc_excl_burnin: float | None
    attention_acc: float | None
    tv_monitor: float | None
    n_sequences: int


@dataclass(frozen=True)
class BenchmarkRow:
    variant: str
    acc_delta: tuple[float, ...]
    macro_acc: float | None
    macro_acc_excl_burnin: float | None
    attention_acc: float | None
    n_eval: int


def evaluate(
    policy,
    data: list[LabeledSequence],
    spec: CourtSpec,
    batch_size: int = 32,
    max_sequences: int | None = None,
    burn_in: int = 20,
) -> EvalMetrics:
    """Teacher-forced pass over labeled sequences.

    ``policy`` needs one method, ``eval_sequence(inputs)``, taking an
    (N, T, 4, rows, cols) batch and returning probability arrays shaped
    (N, T, ...); HPNModel satisfies this, and oracle or stub policies can too.
    """
    if not data:
        raise DataError("cannot evaluate on an empty holdout")
    subset = data[:max_sequences] if max_sequences else data
    lookahead = spec.lookahead_steps
    correct = np.zeros(lookahead, dtype=np.int64)
    counted = np.zeros(lookahead, dtype=np.int64)
    macro_correct = macro_counted = 0
    late_correct = late_counted = 0
    att_correct = att_counted = 0
    tv_sum = 0.0
    tv_n = 0
    saw_macro = saw_attention = False

    for start in range(0, len(subset), batch_size):
        chunk = subset[start:start + batch_size]
        arrays = assemble(chunk, spec)
        n, t_steps = arrays["inputs"].shape[:2]
        outs = policy.eval_sequence(arrays["inputs"])
        pred = outs["p_combined"].argmax(axis=-1)       # (n, t, lookahead)
        valid = ~arrays["micro_padded"]
        hits = (pred == arrays["micro"]) & valid
        correct += hits.sum(axis=(0, 1))
        counted += valid.sum(axis=(0, 1))
        if outs.get("p_macro") is not None:
            saw_macro = True
            mp = outs["p_macro"].argmax(axis=-1)        # (n, t)
            eq = mp == arrays["macro"]
            macro_correct += int(eq.sum())
            macro_counted += n * t_steps
            late_correct += int(eq[:, burn_in:].sum())
            late_counted += n * max(t_steps - burn_in, 0)
        if outs.get("attention") is not None:
            saw_attention = True
            ap = outs["attention"].argmax(axis=-1)
            att_correct += int((ap == arrays["attention"]).sum())
            att_counted += n * t_steps
            tv_sum += float(
                0.5 * np.abs(outs["p_raw"][:, :, 0, :] - outs["attention"]).sum(axis=-1).sum()
            )
            tv_n += n * t_steps
    return EvalMetrics(
        acc_delta=tuple(correct / np.maximum(counted, 1)),
        n_delta=tuple(int(c) for c in counted),
        macro_acc=(macro_correct / macro_counted) if saw_macro and macro_counted else None,
        macro_acc_excl_burnin=(late_correct / late_counted) if saw_macro and late_counted else None,
        attention_acc=(att_correct / att_counted) if saw_attention and att_counted else None,
        tv_monitor=(tv_sum / tv_n) if tv_n else None,
        n_sequences=len(subset),
    )


def lookahead_accuracy(model, holdout: list[LabeledSequence], spec: CourtSpec) -> tuple[float, ...]:
    return evaluate(model, holdout, spec).acc_delta


def macro_accuracy(
    model, holdout: list[LabeledSequence], spec: CourtSpec, exclude_burn_in: bool = False
) -> float:
    if not getattr(model, "hierarchical", False):
        raise ConfigError(f"variant {model.variant.value} has no macro-goal head")
    m = evaluate(model, holdout, spec)
    return m.macro_acc_excl_burnin if exclude_burn_in else m.macro_acc


def attention_accuracy(model, holdout: list[LabeledSequence], spec: CourtSpec) -> float:
    if not getattr(model, "has_attention", False):
        raise ConfigError(f"variant {model.variant.value} has no attention mask")
    return evaluate(model, holdout, spec).attention_acc


BENCH_CSV_HEADER = (
    "variant,acc_delta0,acc_delta1,acc_delta2,acc_delta3,"
    "macro_acc,macro_acc_excl_burnin,attention_acc,n_eval"
)


def benchmark(
    models: dict,
    holdout: list[LabeledSequence],
    spec: CourtSpec,
) -> list[BenchmarkRow]:
    """One row per model, in canonical variant order."""
    rows = []
    for variant in VARIANT_ORDER:
        model = models.get(variant) or models.get(variant.value)
        if model is None:
            continue
        if model.spec != spec:
            raise ConfigError(f"model {variant.value} was built for a different court spec")
        m = evaluate(model, holdout, spec)
        rows.append(
            BenchmarkRow(
                variant=variant.value,
                acc_delta=m.acc_delta,
                macro_acc=m.macro_acc,
                macro_acc_excl_burnin=m.macro_acc_excl_burnin,
                attention_acc=m.attention_acc,
                n_eval=sum(m.n_delta),
            )
        )
    return rows


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    lines = [BENCH_CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [r.variant]
                + [f"{a:.6f}" for a in r.acc_delta]
                + [fmt(r.macro_acc), fmt(r.macro_acc_excl_burnin), fmt(r.attention_acc)]
                + [str(r.n_eval)]
            )
        )
    return "\n".join(lines) + "\n"


def write_benchmark_csv(rows: list[BenchmarkRow], path: str | Path) -> None:
    Path(path).write_text(benchmark_csv(rows), encoding="utf-8")
