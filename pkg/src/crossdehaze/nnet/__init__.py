from .autograd import Tape, TapeError, Tensor
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, desk_gradcheck, grad_check
from .model import DehazeBlock, DehazeUNet, Fusion, NetConfig, WindowAttention, dehaze, forward

__all__ = [
    "CheckpointError",
    "DehazeBlock",
    "DehazeUNet",
    "Fusion",
    "GradCheckReport",
    "NetConfig",
    "Tape",
    "TapeError",
    "Tensor",
    "WindowAttention",
    "dehaze",
    "desk_gradcheck",
    "forward",
    "grad_check",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
]
