"""Lifelong reinforcement learning with an evolving PAC-Bayes world-policy distribution."""
from .errors import (ConfigError, DimensionError, DomainError, EpicError, InsufficientDataError,
                     NumericError, ProtocolError, UnsupportedError)
from .kernels import BACKEND

__version__ = "0.1.0"
