"""Possession ingest, windowing into training sequences, and synthetic data.

The ingest format is JSONL: one possession per line,
``{"id": str, "tracks": [{"agent_id": str, "role": ..., "points": [[x, y], ...]}]}``
with coordinates in feet at an implied 25 Hz.  The synthetic generator
emits the identical format so both paths share one pipeline.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .court import ClampCounter, CourtSpec
from .errors import DataError
from .util import rng_for

log = logging.getLogger(__name__)

ROLE_BALL = "ball"
ROLE_FOCAL = "focal"
ROLE_TEAMMATE = "teammate"
ROLE_OPPONENT = "opponent"
ROLES = (ROLE_BALL, ROLE_FOCAL, ROLE_TEAMMATE, ROLE_OPPONENT)
OFFENSE_ROLES = (ROLE_FOCAL, ROLE_TEAMMATE)

#: Model input length in subsampled steps; a window spans
#: SEQUENCE_STEPS * subsample_stride raw frames (8 s at the defaults).
SEQUENCE_STEPS = 50

LENGTH_BAND = (50, 300)  # typical possession length in raw frames; warn outside


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RawTrack:
    agent_id: str
    role: str
    points: np.ndarray  # (length_frames, 2), read-only

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}")
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] == 0:
            raise DataError(f"track {self.agent_id!r} must have a nonempty (n, 2) point array")
        if not np.isfinite(self.points).all():
            raise DataError(f"track {self.agent_id!r} contains non-finite coordinates")


@dataclass(frozen=True)
class Possession:
    id: str
    tracks: tuple[RawTrack, ...]

    @property
    def length_frames(self) -> int:
        return self.tracks[0].points.shape[0]

    def track_by_role(self, role: str) -> list[RawTrack]:
        return [t for t in self.tracks if t.role == role]

    @property
    def offense(self) -> list[RawTrack]:
        return sorted(
            (t for t in self.tracks if t.role in OFFENSE_ROLES), key=lambda t: t.agent_id
        )

    @property
    def defense(self) -> list[RawTrack]:
        return sorted((t for t in self.tracks if t.role == ROLE_OPPONENT), key=lambda t: t.agent_id)

    @property
    def ball(self) -> RawTrack:
        return self.track_by_role(ROLE_BALL)[0]


@dataclass(frozen=True)
class SynthConfig:
    """Waypoint-process generator settings (stand-in for real tracking data)."""

    n_possessions: int = 220
    seed: int = 0
    dwell_frames_min: int = 40
    dwell_frames_max: int = 90
    curvature: float = 0.15
    speed_min_ft_per_frame: float = 0.8
    speed_max_ft_per_frame: float = 1.3
    noise_std_ft: float = 0.04

    def validate(self, spec: CourtSpec) -> None:
        if self.n_possessions < 0:
            raise DataError("n_possessions must be >= 0")
        if not (0 < self.dwell_frames_min <= self.dwell_frames_max):
            raise DataError("dwell frame range must be a nonempty positive range")
        if not (0 < self.speed_min_ft_per_frame <= self.speed_max_ft_per_frame):
            raise DataError("speed range must be a nonempty positive range")
        if self.curvature <= 0:
            raise DataError("curvature must be positive")
        if self.noise_std_ft < 0:
            raise DataError("noise_std_ft must be >= 0")
        max_cells = spec.velocity_radius_cells * spec.micro_cell_ft
        if self.speed_max_ft_per_frame > max_cells:
            raise DataError(
                f"speed_max {self.speed_max_ft_per_frame} ft/frame exceeds the velocity "
                f"grid radius ({max_cells} ft/frame); labels would always clip"
            )


@dataclass(frozen=True)
class DataConfig:
    windows_per_player: int = 2
    holdout_fraction: float = 1.0 / 11.0
    bounds_tolerance_ft: float = 3.0


@dataclass(frozen=True)
class TrainingSequence:
    """One focal player's windowed view of a possession.

    Positions are stored per agent so occupancy channels can be rebuilt
    after augmentation; ``raw_frame_positions`` keeps the focal track at
    the raw 25 Hz rate for look-ahead velocity labels.
    """

    possession_id: str
    focal_agent: str
    t0: int
    raw_positions: np.ndarray        # (T, 2) focal, subsampled
    raw_frame_positions: np.ndarray  # (T * stride, 2) focal, raw rate
    ball_positions: np.ndarray       # (T, 2)
    teammate_positions: np.ndarray   # (T, 4, 2)
    opponent_positions: np.ndarray   # (T, 5, 2)

    @property
    def steps(self) -> int:
        return self.raw_positions.shape[0]


# ingest / save


def possession_to_json(p: Possession) -> str:
    obj = {
        "id": p.id,
        "tracks": [
            {
                "agent_id": t.agent_id,
                "role": t.role,
                "points": [[float(x), float(y)] for x, y in t.points],
            }
            for t in p.tracks
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def save_possessions(possessions: list[Possession], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in possessions:
            fh.write(possession_to_json(p))
            fh.write("\n")


def _validate_possession(p: Possession, spec: CourtSpec, tolerance_ft: float, where: str) -> None:
    n_ball = len(p.track_by_role(ROLE_BALL))
    if n_ball != 1:
        raise DataError(f"{where}: missing ball track" if n_ball == 0 else f"{where}: {n_ball} ball tracks")
    n_off = len(p.offense)
    n_def = len(p.defense)
    if n_off != 5 or n_def != 5:
        raise DataError(f"{where}: need 5 offensive and 5 opponent tracks, got {n_off}/{n_def}")
    lengths = {t.points.shape[0] for t in p.tracks}
    if len(lengths) != 1:
        raise DataError(f"{where}: tracks have unequal lengths {sorted(lengths)}")
    length = lengths.pop()
    if not LENGTH_BAND[0] <= length <= LENGTH_BAND[1]:
        log.warning("%s: possession length %d frames outside typical band %s", where, length, LENGTH_BAND)
    lo = -tolerance_ft
    for t in p.tracks:
        x, y = t.points[:, 0], t.points[:, 1]
        if (x < lo).any() or (x > spec.width_ft + tolerance_ft).any() or \
           (y < lo).any() or (y > spec.height_ft + tolerance_ft).any():
            raise DataError(f"{where}: track {t.agent_id!r} leaves the court by more than {tolerance_ft} ft")
        if length > 1:
            step = np.linalg.norm(np.diff(t.points, axis=0), axis=1)
            diag = math.hypot(spec.width_ft, spec.height_ft)
            if (step >= diag).any():
                raise DataError(f"{where}: track {t.agent_id!r} jumps farther than the court diagonal")


def ingest(path: str | Path, spec: CourtSpec, bounds_tolerance_ft: float = 3.0) -> list[Possession]:
    """Parse a JSONL possession file, failing fast on the first bad line."""
    possessions: list[Possession] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
            try:
                pid = obj["id"]
                raw_tracks = obj["tracks"]
            except (TypeError, KeyError) as exc:
                raise DataError(f"{where}: missing 'id' or 'tracks'") from exc
            tracks = []
            for tr in raw_tracks:
                try:
                    points = _freeze(np.asarray(tr["points"], dtype=np.float64))
                    tracks.append(RawTrack(str(tr["agent_id"]), str(tr["role"]), points))
                except (TypeError, KeyError, ValueError) as exc:
                    raise DataError(f"{where}: bad track entry ({exc})") from exc
                except DataError as exc:
                    raise DataError(f"{where}: {exc}") from exc
            p = Possession(str(pid), tuple(tracks))
            _validate_possession(p, spec, bounds_tolerance_ft, where)
            possessions.append(p)
    return possessions


# windowing


def window(
    possession: Possession,
    spec: CourtSpec,
    rng: np.random.Generator,
    windows_per_player: int = 1,
) -> list[TrainingSequence]:
    """Cut random fixed-length windows, one family per offensive player.

    Possessions shorter than a full window yield nothing.  Draws are made
    player-by-player in agent-id order so the result is reproducible for
    a given generator state.
    """
    raw_len = SEQUENCE_STEPS * spec.subsample_stride
    length = possession.length_frames
    if length < raw_len:
        return []
    offense = possession.offense
    ball = possession.ball
    defense = possession.defense
    sequences = []
    for focal in offense:
        teammates = [t for t in offense if t.agent_id != focal.agent_id]
        for _ in range(windows_per_player):
            t0 = int(rng.integers(0, length - raw_len + 1))
            sub = t0 + spec.subsample_stride * np.arange(SEQUENCE_STEPS)
            sequences.append(
                TrainingSequence(
                    possession_id=possession.id,
                    focal_agent=focal.agent_id,
                    t0=t0,
                    raw_positions=_freeze(focal.points[sub]),
                    raw_frame_positions=_freeze(focal.points[t0:t0 + raw_len]),
                    ball_positions=_freeze(ball.points[sub]),
                    teammate_positions=_freeze(np.stack([t.points[sub] for t in teammates], axis=1)),
                    opponent_positions=_freeze(np.stack([t.points[sub] for t in defense], axis=1)),
                )
            )
    return sequences


def channelize(
    seq: TrainingSequence, spec: CourtSpec, counter: ClampCounter | None = None
) -> np.ndarray:
    """Per-step occupancy counts, shape (T, 4, rows, cols).

    Channel order: ball, focal player, teammates, opponents.  Occupancy is
    a count per cell, so coinciding agents keep their total mass.
    """
    t_steps = seq.steps
    out = np.zeros((t_steps, 4, spec.micro_rows, spec.micro_cols), dtype=np.float64)
    steps = np.arange(t_steps)
    for channel, xy in (
        (0, seq.ball_positions[:, None, :]),
        (1, seq.raw_positions[:, None, :]),
        (2, seq.teammate_positions),
        (3, seq.opponent_positions),
    ):
        cols, rows = spec.cells_from_positions(xy, counter)
        n_agents = xy.shape[1]
        tt = np.repeat(steps, n_agents)
        np.add.at(out, (tt, channel, rows.ravel(), cols.ravel()), 1.0)
    return out


def split(sequences: list, holdout_fraction: float, seed: int):
    """Partition sequences into (train, holdout) keyed on possession id."""
    if not 0.0 < holdout_fraction < 1.0:
        raise DataError("holdout_fraction must be in (0, 1)")
    ids = sorted({s.possession_id for s in sequences})
    n_holdout = round(len(ids) * holdout_fraction)
    if n_holdout < 1 or n_holdout >= len(ids):
        raise DataError(
            f"degenerate split: {n_holdout} of {len(ids)} possessions would be held out"
        )
    perm = rng_for(seed, "split").permutation(len(ids))
    holdout_ids = {ids[i] for i in perm[:n_holdout]}
    train = [s for s in sequences if s.possession_id not in holdout_ids]
    holdout = [s for s in sequences if s.possession_id in holdout_ids]
    return train, holdout


# synthetic generation


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _walk(
    rng: np.random.Generator, spec: CourtSpec, cfg: SynthConfig, length: int
) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """One agent's waypoint walk; returns positions and (dwell_start, dwell_end, box) log."""
    margin = min(2.0, spec.width_ft / 10, spec.height_ft / 10)
    pos = np.array(
        [rng.uniform(margin, spec.width_ft - margin), rng.uniform(margin, spec.height_ft - margin)]
    )
    heading = rng.uniform(-math.pi, math.pi)
    # relaxation of heading toward the goal bearing; curvature -> inf turns instantly
    alpha = 1.0 - math.exp(-cfg.curvature)
    traj = np.empty((length, 2))
    dwells: list[tuple[int, int, int]] = []
    t = 0
    while t < length:
        while True:
            box = int(rng.integers(spec.n_macro_boxes))
            center = np.array(spec.macro_box_center(box))
            # aim anywhere inside the box, not its center: a single frame
            # must not reveal whether the agent is dwelling there
            jitter = rng.uniform(-0.5, 0.5, 2) * (spec.macro_box_ft - 1.0)
            target = center + jitter
            if np.linalg.norm(target - pos) > spec.macro_box_ft:
                break
        speed = rng.uniform(cfg.speed_min_ft_per_frame, cfg.speed_max_ft_per_frame)
        while t < length and np.linalg.norm(target - pos) > speed:
            bearing = math.atan2(target[1] - pos[1], target[0] - pos[0])
            heading = _wrap_angle(heading + alpha * _wrap_angle(bearing - heading))
            pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
            pos[0] = min(max(pos[0], 0.0), spec.width_ft - 1e-9)
            pos[1] = min(max(pos[1], 0.0), spec.height_ft - 1e-9)
            traj[t] = pos
            t += 1
        if t >= length:
            break
        pos = target.copy()
        heading = rng.uniform(-math.pi, math.pi)
        dwell = int(rng.integers(cfg.dwell_frames_min, cfg.dwell_frames_max + 1))
        start = t
        while t < length and dwell > 0:
            traj[t] = pos
            t += 1
            dwell -= 1
        dwells.append((start, t - 1, box))
    if cfg.noise_std_ft > 0:
        traj = traj + rng.normal(0.0, cfg.noise_std_ft, traj.shape)
        np.clip(traj[:, 0], 0.0, spec.width_ft - 1e-9, out=traj[:, 0])
        np.clip(traj[:, 1], 0.0, spec.height_ft - 1e-9, out=traj[:, 1])
    return traj, dwells


GoalLog = dict[tuple[str, str], list[tuple[int, int, int]]]


def synthesize_with_goals(cfg: SynthConfig, spec: CourtSpec) -> tuple[list[Possession], GoalLog]:
    """Like synthesize() but also returns each agent's ground-truth dwell boxes."""
    cfg.validate(spec)
    possessions = []
    goals: GoalLog = {}
    ball_lag = 3
    for i in range(cfg.n_possessions):
        pid = f"synth-{i:05d}"
        rng = rng_for(cfg.seed, "possession", i)
        raw_len = SEQUENCE_STEPS * spec.subsample_stride
        length = int(rng.integers(raw_len, max(raw_len + 1, LENGTH_BAND[1] + 1)))
        tracks = []
        offense_traj = []
        followed = int(rng.integers(5))
        for j in range(5):
            traj, dwells = _walk(rng, spec, cfg, length)
            offense_traj.append(traj)
            role = ROLE_FOCAL if j == followed else ROLE_TEAMMATE
            tracks.append(RawTrack(f"off{j}", role, _freeze(traj)))
            goals[(pid, f"off{j}")] = dwells
        for j in range(5):
            traj, dwells = _walk(rng, spec, cfg, length)
            tracks.append(RawTrack(f"def{j}", ROLE_OPPONENT, _freeze(traj)))
            goals[(pid, f"def{j}")] = dwells
        carrier = offense_traj[followed]
        idx = np.maximum(np.arange(length) - ball_lag, 0)
        ball = carrier[idx] + np.array([0.8, 0.0])
        np.clip(ball[:, 0], 0.0, spec.width_ft - 1e-9, out=ball[:, 0])
        np.clip(ball[:, 1], 0.0, spec.height_ft - 1e-9, out=ball[:, 1])
        tracks.insert(0, RawTrack("ball", ROLE_BALL, _freeze(ball)))
        possessions.append(Possession(pid, tuple(tracks)))
    return possessions, goals


def synthesize(cfg: SynthConfig, spec: CourtSpec) -> list[Possession]:
    """Generate waypoint-process possessions; deterministic in cfg.seed."""
    possessions, _ = synthesize_with_goals(cfg, spec)
    return possessions
