"""NumPy micro-framework and forecasting toolchain for NAC/NALU-based
close-price prediction (ANN, CNN, NALU and CNN-NALU models)."""

from .autodiff import Tape, Variable, grad_check
from .data import fit_scaler, generate_synthetic, load_csv, make_windows, split_and_batch
from .models import ModelSpec, build
from .training import evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Variable",
    "grad_check",
    "fit_scaler",
    "generate_synthetic",
    "load_csv",
    "make_windows",
    "split_and_batch",
    "ModelSpec",
    "build",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
