"""tcmtl: joint landmark regression with auxiliary attribute tasks.

A shared convolutional representation feeds M landmark regressors and T
attribute classifiers. Training alternates plain SGD on the network with
closed-form updates of a task covariance matrix and of per-task dynamic
coefficients derived from training/validation error trends.
"""
from .backend import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
