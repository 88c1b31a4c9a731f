"""Multi-frame optical flow estimation over non-overlapping frame groups."""

from .config import ModelConfig, TrainConfig, load_configs
from .metrics import EvalReport, build_report, epe, fl_all, region_epe
from .model import MultiFrameFlowNet
from .pipeline import (ComputeLedger, MemoryBank, benchmark,
                       recursive_baseline, run_video, schedule)
from .training import (grad_check, load_checkpoint, save_checkpoint,
                       sequence_loss, train)

__all__ = [
    "ModelConfig", "TrainConfig", "load_configs",
    "MultiFrameFlowNet",
    "schedule", "run_video", "recursive_baseline", "benchmark",
    "MemoryBank", "ComputeLedger",
    "sequence_loss", "train", "grad_check", "save_checkpoint", "load_checkpoint",
    "epe", "fl_all", "region_epe", "build_report", "EvalReport",
]
__version__ = "0.1.0"
