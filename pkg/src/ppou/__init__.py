"""Probabilistic partition-of-unity networks trained by expectation-maximization."""

from .basis import PolyBasis, basis_size, design_matrix, eval_basis
from .data import Dataset, generate, load_csv, save_csv, split
from .estimator import PPOURegressor
from .io import load_model, save_model
from .mixture import PPOUModel, e_step, e_step_noise
from .nn import Adam, DenseNet, box_init
from .trainer import TrainConfig, cross_validate, fit_global_poly, train

__all__ = [
    "Adam", "Dataset", "DenseNet", "PPOUModel", "PPOURegressor", "PolyBasis", "TrainConfig",
    "basis_size", "box_init", "cross_validate", "design_matrix", "e_step", "e_step_noise",
    "eval_basis", "fit_global_poly", "generate", "load_csv", "load_model", "save_csv",
    "save_model", "split", "train",
]
__version__ = "0.1.0"
