"""Hierarchical macro-goal / micro-action policy networks for court
trajectory imitation, with a self-contained training and evaluation
pipeline over ingested or synthetic tracking data."""

from .court import CourtSpec, MacroGoalBox, MicroCell, VelocityAction
from .data import Possession, RawTrack, SynthConfig, TrainingSequence
from .labels import SegmentationConfig, WeakLabels
from .model import ArchitectureConfig, HPNModel, StepOutput, Variant
from .rollout import RolloutConfig, RolloutResult
from .train import LabeledSequence, Stage, TrainConfig, TrainReport

__all__ = [
    "CourtSpec", "MicroCell", "MacroGoalBox", "VelocityAction",
    "RawTrack", "Possession", "TrainingSequence", "SynthConfig",
    "WeakLabels", "SegmentationConfig",
    "ArchitectureConfig", "HPNModel", "StepOutput", "Variant",
    "TrainConfig", "TrainReport", "LabeledSequence", "Stage",
    "RolloutConfig", "RolloutResult",
]

__version__ = "0.1.0"
