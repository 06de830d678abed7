"""Autoregressive latent video prediction on a self-contained numpy stack."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, no_grad, backward  # noqa: F401
