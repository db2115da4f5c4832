"""Loss-based importance sampling for mini-batch SGD.

Submodules: ``nn`` (models, losses, gradients, optimizers), ``sampling``
(distributions and weights), ``history`` (loss history and approximator),
``trainer`` (training loop and diagnostics), ``analysis`` (offline
diagnostics), ``data``, ``config``, ``experiment`` and ``cli``.
"""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
