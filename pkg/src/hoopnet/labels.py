"""Weak supervision extracted from focal tracks.

Three streams per training sequence: per-step look-ahead velocity actions,
goal boxes from stationary-point segmentation, and straight-line velocity
targets pointing at the current goal box.  Everything here is pure given
the derived per-sequence RNG, so label extraction parallelizes freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .court import CourtSpec
from .data import TrainingSequence
from .util import rng_for


@dataclass(frozen=True)
class SegmentationConfig:
    stationary_speed_ft_per_raw_frame: float = 0.25
    min_segment_steps: int = 15
    magnitude_min: int = 1
    magnitude_max: int = 7
    seed: int = 0

    def validate(self, spec: CourtSpec) -> None:
        if self.stationary_speed_ft_per_raw_frame <= 0:
            raise ValueError("stationary speed threshold must be positive")
        if self.min_segment_steps < 1:
            raise ValueError("min_segment_steps must be >= 1")
        if not 1 <= self.magnitude_min <= self.magnitude_max <= spec.velocity_radius_cells:
            raise ValueError("magnitude range must satisfy 1 <= min <= max <= velocity radius")


@dataclass(frozen=True)
class WeakLabels:
    """Aligned label streams for one training sequence (all length T).

    ``macro_target_xy`` keeps the stationary-point position behind each
    macro label and ``attention_magnitudes`` the drawn step sizes, so the
    streams can be recomputed consistently after input translation.
    """

    micro: np.ndarray                 # (T, lookahead) flattened action indices
    micro_padded: np.ndarray          # (T, lookahead) bool, True where end-padded
    macro: np.ndarray                 # (T,) macro box ids
    macro_target_xy: np.ndarray       # (T, 2) stationary-point position per step
    attention: np.ndarray             # (T,) flattened action indices
    attention_magnitudes: np.ndarray  # (T,) drawn magnitudes in velocity cells


def micro_labels(
    raw_frame_positions: np.ndarray, spec: CourtSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Look-ahead velocity labels per subsampled step.

    Step k labels the displacements at raw frames stride*k .. stride*k+L-1;
    frames past the window repeat the last available displacement and are
    marked in the padded mask.
    """
    pts = np.asarray(raw_frame_positions, dtype=np.float64)
    n_raw = pts.shape[0]
    t_steps = n_raw // spec.subsample_stride
    disp = np.diff(pts, axis=0)  # displacement r is pts[r+1] - pts[r]
    frame = spec.subsample_stride * np.arange(t_steps)[:, None] + np.arange(spec.lookahead_steps)[None, :]
    padded = frame > n_raw - 2
    clipped = np.minimum(frame, n_raw - 2)
    labels = spec.actions_from_displacements(disp[clipped, 0], disp[clipped, 1])
    return labels, padded


def find_stationary(raw_frame_positions: np.ndarray, cfg: SegmentationConfig) -> np.ndarray:
    """Frames of near-zero speed: one midpoint per maximal slow run, plus the final frame."""
    pts = np.asarray(raw_frame_positions, dtype=np.float64)
    speeds = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    slow = speeds < cfg.stationary_speed_ft_per_raw_frame
    points = []
    edges = np.flatnonzero(np.diff(np.concatenate(([False], slow, [False])).astype(np.int8)))
    for start, stop in edges.reshape(-1, 2):  # slow run over speed indices [start, stop)
        points.append((start + stop - 1) // 2)
    final = pts.shape[0] - 1
    if not points or points[-1] != final:
        points.append(final)
    return np.asarray(points, dtype=np.int64)


def _segments(ids: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of equal values as (start, stop) half-open index pairs."""
    bounds = np.flatnonzero(np.diff(ids)) + 1
    edges = np.concatenate(([0], bounds, [len(ids)]))
    return [(int(edges[i]), int(edges[i + 1])) for i in range(len(edges) - 1)]


def macro_labels(
    raw_frame_positions: np.ndarray,
    stationary_frames: np.ndarray,
    spec: CourtSpec,
    cfg: SegmentationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Goal box per subsampled step: the next stationary point's box.

    "Next" is strict on the raw frame index, so a mid-track dwell starts
    pointing at the following goal once its midpoint passes.  Runs shorter
    than min_segment_steps merge into the following segment; a too-short
    final run is absorbed into the previous one.
    """
    pts = np.asarray(raw_frame_positions, dtype=np.float64)
    sps = np.sort(np.asarray(stationary_frames, dtype=np.int64))
    t_steps = pts.shape[0] // spec.subsample_stride
    frames = spec.subsample_stride * np.arange(t_steps)
    nxt = np.minimum(np.searchsorted(sps, frames, side="right"), len(sps) - 1)
    target_xy = pts[sps[nxt]]
    ids = spec.boxes_from_positions(target_xy)
    ids, target_xy = _merge_short_segments(ids, target_xy, cfg.min_segment_steps)
    return ids, target_xy


def _merge_short_segments(
    ids: np.ndarray, target_xy: np.ndarray, min_steps: int
) -> tuple[np.ndarray, np.ndarray]:
    ids = ids.copy()
    target_xy = target_xy.copy()
    while True:
        segs = _segments(ids)
        merged = False
        for i, (start, stop) in enumerate(segs[:-1]):
            if stop - start < min_steps:
                nstart = segs[i + 1][0]
                ids[start:stop] = ids[nstart]
                target_xy[start:stop] = target_xy[nstart]
                merged = True
                break
        if not merged:
            break
    segs = _segments(ids)
    if len(segs) > 1:
        start, stop = segs[-1]
        if stop - start < min_steps:
            pstart = segs[-2][0]
            ids[start:stop] = ids[pstart]
            target_xy[start:stop] = target_xy[pstart]
    return ids, target_xy


def attention_targets(
    raw_positions: np.ndarray,
    macro_ids: np.ndarray,
    magnitudes: np.ndarray,
    spec: CourtSpec,
) -> np.ndarray:
    """Straight-line action labels given already-drawn magnitudes.

    Direction is the unit vector from the instantaneous position to the
    current goal box center; steps already inside the goal box label the
    stationary action.
    """
    pos = np.asarray(raw_positions, dtype=np.float64)
    centers = spec.macro_box_centers(np.asarray(macro_ids, dtype=np.int64))
    delta = centers - pos
    inside = spec.boxes_from_positions(pos) == macro_ids
    norm = np.linalg.norm(delta, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    unit = delta / safe[:, None]
    v = magnitudes[:, None] * unit * spec.micro_cell_ft  # magnitudes are in cells
    labels = spec.actions_from_displacements(v[:, 0], v[:, 1])
    labels[inside | (norm == 0)] = spec.stationary_action_index
    return labels


def attention_labels(
    raw_positions: np.ndarray,
    macro_ids: np.ndarray,
    spec: CourtSpec,
    cfg: SegmentationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw per-step magnitudes and build straight-line labels."""
    t_steps = np.asarray(raw_positions).shape[0]
    magnitudes = rng.integers(cfg.magnitude_min, cfg.magnitude_max + 1, size=t_steps)
    return attention_targets(raw_positions, macro_ids, magnitudes, spec), magnitudes


def label_sequence(seq: TrainingSequence, spec: CourtSpec, cfg: SegmentationConfig) -> WeakLabels:
    """All three weak-label streams for one sequence; RNG derives from
    (config seed, possession id, focal agent, window start)."""
    micro, padded = micro_labels(seq.raw_frame_positions, spec)
    sps = find_stationary(seq.raw_frame_positions, cfg)
    macro, target_xy = macro_labels(seq.raw_frame_positions, sps, spec, cfg)
    rng = rng_for(cfg.seed, "labels", seq.possession_id, seq.focal_agent, seq.t0)
    attention, magnitudes = attention_labels(seq.raw_positions, macro, spec, cfg, rng)
    for a in (micro, padded, macro, target_xy, attention, magnitudes):
        a.flags.writeable = False
    return WeakLabels(micro, padded, macro, target_xy, attention, magnitudes)


def labels_to_json(seq: TrainingSequence, lab: WeakLabels) -> str:
    obj = {
        "possession_id": seq.possession_id,
        "focal_agent": seq.focal_agent,
        "t0": seq.t0,
        "micro": lab.micro.tolist(),
        "micro_padded": lab.micro_padded.astype(int).tolist(),
        "macro": lab.macro.tolist(),
        "macro_target_xy": [[float(x), float(y)] for x, y in lab.macro_target_xy],
        "attention": lab.attention.tolist(),
        "attention_magnitudes": lab.attention_magnitudes.tolist(),
    }
    return json.dumps(obj, separators=(",", ":"))


def export_labels(
    sequences: list[TrainingSequence], labels: list[WeakLabels], path: str | Path
) -> None:
    """Write the sidecar JSONL keyed by (possession_id, focal_agent, t0)."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq, lab in zip(sequences, labels):
            fh.write(labels_to_json(seq, lab))
            fh.write("\n")
