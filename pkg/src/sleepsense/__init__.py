"""Sleep-behaviour monitoring from a simulated six-channel strain-sensor collar."""

__version__ = "0.1.0"

from .synthgen import BehaviourClass, DatasetSpec, SubjectProfile, synth_dataset, synth_epoch  # noqa: E402
from .data import Dataset, simulate_dataset  # noqa: E402
from .sleepnet import SleepNet, SleepNetConfig  # noqa: E402
from .checkpoint import Checkpoint  # noqa: E402

__all__ = [
    "BehaviourClass",
    "Checkpoint",
    "Dataset",
    "DatasetSpec",
    "SleepNet",
    "SleepNetConfig",
    "SubjectProfile",
    "simulate_dataset",
    "synth_dataset",
    "synth_epoch",
]
