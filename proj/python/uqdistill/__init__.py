"""Ensemble uncertainty for binary segmentation.

Deep ensembles, MC-dropout, ensemble distillation (KL and contrastive) and
the calibration metric suite, over numpy arrays.
"""

from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IoError,
    Model,
    NumericError,
    binarize,
    brier,
    crd_loss,
    dice,
    distill,
    ece,
    ensemble_predict,
    entropy,
    evaluate,
    gen_data,
    kl_divergence,
    load_dataset,
    mcc,
    mutual_information,
    nll,
    read_pfm,
    read_pgm,
    train,
    variance,
    write_pfm,
    write_pgm,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "IoError",
    "Model",
    "NumericError",
    "binarize",
    "brier",
    "crd_loss",
    "dice",
    "distill",
    "ece",
    "ensemble_predict",
    "entropy",
    "evaluate",
    "gen_data",
    "kl_divergence",
    "load_dataset",
    "mcc",
    "mutual_information",
    "nll",
    "read_pfm",
    "read_pgm",
    "train",
    "variance",
    "write_pfm",
    "write_pgm",
]
