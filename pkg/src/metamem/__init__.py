"""Self-evolving meta-memory for memory-augmented question answering."""
from .core import (
    ActionKind,
    ActionSet,
    Checkpoint,
    EvalInstance,
    MemorySet,
    MemoryUnit,
    MetaMemoryState,
    MetaUnit,
    UpdateAction,
    load_checkpoint,
    save_checkpoint,
)
from .evolve import Pipeline, TrainConfig, exec_actions, replay, run_batch, run_training, sanitize, verify_replay
from .infer import InferenceOptions, answer

__version__ = "0.1.0"

__all__ = [
    "ActionKind",
    "ActionSet",
    "Checkpoint",
    "EvalInstance",
    "InferenceOptions",
    "MemorySet",
    "MemoryUnit",
    "MetaMemoryState",
    "MetaUnit",
    "Pipeline",
    "TrainConfig",
    "UpdateAction",
    "answer",
    "exec_actions",
    "load_checkpoint",
    "replay",
    "run_batch",
    "run_training",
    "sanitize",
    "save_checkpoint",
    "verify_replay",
]
