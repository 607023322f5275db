"""Federated training of multiclass classifiers from clients that hold only
unlabeled sample sets with known class priors, plus the comparison methods
and verification oracles."""

__version__ = "0.1.0"

from . import (config, datagen, diagnostics, federation, idx, kernels, nn,
               objectives, priors, report, runner, transition)

__all__ = ["config", "datagen", "diagnostics", "federation", "idx", "kernels",
           "nn", "objectives", "priors", "report", "runner", "transition",
           "__version__"]
