import numpy as np
import pytest

from hoopnet.bench import (
    BENCH_CSV_HEADER,
    benchmark,
    benchmark_csv,
    evaluate,
    lookahead_accuracy,
    macro_accuracy,
    attention_accuracy,
)
from hoopnet.court import CourtSpec
from hoopnet.data import SynthConfig, synthesize, window
from hoopnet.errors import ConfigError, DataError
from hoopnet.labels import SegmentationConfig, label_sequence
from hoopnet.model import ArchitectureConfig, HPNModel, Variant
from hoopnet.render import RenderSpec, render_rollout_svg, render_rollouts
from hoopnet.rollout import RolloutConfig, batch_rollout
from hoopnet.train import LabeledSequence
from hoopnet.util import rng_for

SPEC = CourtSpec()
ARCH = ArchitectureConfig(conv_filters=(4, 6), conv_kernels=(3, 3), conv_strides=(2, 1),
                          gru_cells=16, transfer_hidden=12)
SEG = SegmentationConfig(seed=77)


def labeled_data(n_possessions=3, seed=71):
    cfg = SynthConfig(n_possessions=n_possessions, seed=seed)
    out = []
    for p in synthesize(cfg, SPEC):
        for s in window(p, SPEC, rng_for(seed, "w", p.id), 1):
            out.append(LabeledSequence(s, label_sequence(s, SPEC, SEG)))
    return out


DATA = labeled_data()


class _OraclePolicy:
    """Replays the weak labels as one-hot predictions."""

    def __init__(self, data, spec, with_macro=True, with_attention=True):
        self.data = data
        self.spec = spec
        self.cursor = 0
        self.with_macro = with_macro
        self.with_attention = with_attention

    def eval_sequence(self, inputs):
        n, t_steps = inputs.shape[:2]
        chunk = self.data[self.cursor:self.cursor + n]
        self.cursor += n
        k, a, g = self.spec.lookahead_steps, self.spec.n_actions, self.spec.n_macro_boxes
        p_raw = np.zeros((n, t_steps, k, a))
        p_macro = np.zeros((n, t_steps, g))
        attention = np.zeros((n, t_steps, a))
        for i, item in enumerate(chunk):
            for t in range(t_steps):
                for kk in range(k):
                    p_raw[i, t, kk, item.labels.micro[t, kk]] = 1.0
                p_macro[i, t, item.labels.macro[t]] = 1.0
                attention[i, t, item.labels.attention[t]] = 1.0
        return {
            "p_raw": p_raw,
            "p_macro": p_macro if self.with_macro else None,
            "attention": attention if self.with_attention else None,
            "p_combined": p_raw,
        }


class _ConstantClassPolicy:
    """Always predicts one fixed action class for every head."""

    def __init__(self, spec, index):
        self.spec = spec
        self.index = index

    def eval_sequence(self, inputs):
        n, t_steps = inputs.shape[:2]
        p = np.zeros((n, t_steps, self.spec.lookahead_steps, self.spec.n_actions))
        p[..., self.index] = 1.0
        return {"p_raw": p, "p_macro": None, "attention": None, "p_combined": p}


class _RandomMacroPolicy:
    """Uniform-random goal-box argmax; everything else is a fixed class."""

    def __init__(self, spec, seed):
        self.spec = spec
        self.rng = np.random.default_rng(seed)

    def eval_sequence(self, inputs):
        n, t_steps = inputs.shape[:2]
        p = np.zeros((n, t_steps, self.spec.lookahead_steps, self.spec.n_actions))
        p[..., 0] = 1.0
        p_macro = self.rng.random((n, t_steps, self.spec.n_macro_boxes))
        return {"p_raw": p, "p_macro": p_macro, "attention": None, "p_combined": p}


def test_oracle_policy_scores_one():
    m = evaluate(_OraclePolicy(DATA, SPEC), DATA, SPEC)
    assert m.acc_delta == (1.0, 1.0, 1.0, 1.0)
    assert m.macro_acc == 1.0
    assert m.macro_acc_excl_burnin == 1.0
    assert m.attention_acc == 1.0


def test_constant_class_matches_empirical_frequency():
    idx = SPEC.stationary_action_index
    m = evaluate(_ConstantClassPolicy(SPEC, idx), DATA, SPEC)
    for d in range(4):
        valid = 0
        hits = 0
        for item in DATA:
            mask = ~item.labels.micro_padded[:, d]
            valid += int(mask.sum())
            hits += int(((item.labels.micro[:, d] == idx) & mask).sum())
        np.testing.assert_allclose(m.acc_delta[d], hits / valid, atol=1e-12)
        assert m.n_delta[d] == valid


def test_padded_lookahead_steps_excluded():
    m = evaluate(_OraclePolicy(DATA, SPEC), DATA, SPEC)
    t_steps = DATA[0].sequence.steps
    total = len(DATA) * t_steps
    assert m.n_delta[0] == total
    assert m.n_delta[3] == total - len(DATA)  # one padded label per sequence


def test_random_macro_head_near_chance():
    m = evaluate(_RandomMacroPolicy(SPEC, 4), DATA * 7, SPEC)
    n = m.n_delta[0] // 1  # steps evaluated
    p = 1.0 / SPEC.n_macro_boxes
    sigma = (p * (1 - p) / (len(DATA) * 7 * 50)) ** 0.5
    assert abs(m.macro_acc - p) < 3 * sigma + 1e-9


def test_empty_holdout_rejected():
    with pytest.raises(DataError):
        evaluate(_OraclePolicy([], SPEC), [], SPEC)


def test_metric_wrappers_and_variant_guards():
    model = HPNModel(SPEC, ARCH, Variant.GRU_CNN, 2)
    acc = lookahead_accuracy(model, DATA[:4], SPEC)
    assert len(acc) == 4 and all(0.0 <= a <= 1.0 for a in acc)
    with pytest.raises(ConfigError):
        macro_accuracy(model, DATA[:4], SPEC)
    with pytest.raises(ConfigError):
        attention_accuracy(model, DATA[:4], SPEC)
    h = HPNModel(SPEC, ARCH, Variant.H_ATT, 2)
    assert 0.0 <= macro_accuracy(h, DATA[:4], SPEC) <= 1.0
    assert 0.0 <= attention_accuracy(h, DATA[:4], SPEC) <= 1.0


def test_benchmark_rows_and_csv():
    models = {
        Variant.CNN: HPNModel(SPEC, ARCH, Variant.CNN, 1),
        Variant.H_ATT: HPNModel(SPEC, ARCH, Variant.H_ATT, 1),
        Variant.H_CC: HPNModel(SPEC, ARCH, Variant.H_CC, 1),
    }
    rows = benchmark(models, DATA[:6], SPEC)
    assert [r.variant for r in rows] == ["cnn", "h_cc", "h_att"]  # canonical order
    cnn_row = rows[0]
    assert cnn_row.macro_acc is None and cnn_row.attention_acc is None
    cc_row = rows[1]
    assert cc_row.macro_acc is not None and cc_row.attention_acc is None
    att_row = rows[2]
    assert att_row.macro_acc is not None and att_row.attention_acc is not None
    csv = benchmark_csv(rows)
    lines = csv.splitlines()
    assert lines[0] == BENCH_CSV_HEADER
    assert len(lines) == 4
    assert lines[1].startswith("cnn,")
    assert ",,," not in lines[3]  # attention row fully populated


def test_benchmark_deterministic_and_matches_per_op_calls():
    model = HPNModel(SPEC, ARCH, Variant.H_ATT, 6)
    rows1 = benchmark({Variant.H_ATT: model}, DATA[:6], SPEC)
    rows2 = benchmark({Variant.H_ATT: model}, DATA[:6], SPEC)
    assert rows1 == rows2
    direct = evaluate(model, DATA[:6], SPEC)
    assert rows1[0].acc_delta == direct.acc_delta
    assert rows1[0].macro_acc == direct.macro_acc


def test_benchmark_spec_mismatch():
    other_spec = CourtSpec(micro_cell_ft=0.5)
    model = HPNModel(other_spec, ARCH, Variant.CNN, 1)
    with pytest.raises(ConfigError, match="different court"):
        benchmark({Variant.CNN: model}, DATA[:2], SPEC)


# rendering


def _rollouts(horizon=10, seed=17):
    model = HPNModel(SPEC, ARCH, Variant.H_ATT, seed)
    seqs = [item.sequence for item in DATA[:2]]
    cfg = RolloutConfig(burn_in_steps=20, horizon_steps=horizon)
    return batch_rollout(model, seqs, cfg, SPEC), seqs


def test_render_basic_svg():
    results, seqs = _rollouts()
    svg = render_rollout_svg(results[0], seqs[0], SPEC, RenderSpec())
    assert svg.startswith("<svg ") or svg.startswith("<svg\n") or svg.startswith("<svg")
    assert svg.count("<polyline") >= 12  # ball + 9 agents + two focal trails
    assert "</svg>" in svg


def test_render_horizon_zero_draws_single_trail():
    results, seqs = _rollouts(horizon=0)
    svg = render_rollout_svg(results[0], seqs[0], SPEC, RenderSpec(trail_policy="markers"))
    assert svg.count("<polyline") == 1  # burn-in only, no extrapolation trail


def test_render_single_constant_macro_box_full_opacity():
    results, seqs = _rollouts()
    const = results[0]
    object.__setattr__(const, "macro_goals", np.full_like(const.macro_goals, 42))
    rspec = RenderSpec()
    svg = render_rollout_svg(const, seqs[0], SPEC, rspec)
    assert svg.count(f'fill-opacity="{rspec.box_max_opacity:.2f}"') == 1


def test_render_deterministic_bytes(tmp_path):
    results, seqs = _rollouts()
    a = render_rollouts(results, seqs, SPEC, RenderSpec(), tmp_path / "a")
    b = render_rollouts(results, seqs, SPEC, RenderSpec(), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_render_rejects_empty():
    with pytest.raises(DataError):
        render_rollouts([], [], SPEC, RenderSpec(), "/tmp/nowhere")
