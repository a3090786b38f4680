"""Vehicle trajectory prediction: LSTM encoding, social pooling, graph convolution, LSTM decoding.

Everything runs on a small reverse-mode autodiff engine over numpy.
"""
from .config import RunConfig, toy_config
from .data import Sample, generate_synthetic, parse_trajectory_csv, split_dataset
from .model import ModelParams, forward, init_params, predict
from .train import evaluate_baseline, evaluate_rmse, train_loop

__all__ = [
    "RunConfig",
    "toy_config",
    "Sample",
    "generate_synthetic",
    "parse_trajectory_csv",
    "split_dataset",
    "ModelParams",
    "forward",
    "init_params",
    "predict",
    "evaluate_baseline",
    "evaluate_rmse",
    "train_loop",
]
