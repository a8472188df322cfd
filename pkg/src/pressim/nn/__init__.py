"""A small numpy network library and the pressure-synthesis models built on it."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_report
from .losses import LossMode
from .model import GRID, WINDOW, Network, NetworkKind, build_model
from .train import Hyperparams, TrainHistory, TrainingSet, evaluate, train

__all__ = [
    "GRID", "WINDOW", "Hyperparams", "LossMode", "Network", "NetworkKind", "TrainHistory",
    "TrainingSet", "build_model", "evaluate", "grad_check", "grad_check_report",
    "load_checkpoint", "save_checkpoint", "train",
]
