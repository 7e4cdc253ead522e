"""Gauss-Hermite expectations over diagonal Gaussians."""
from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import DomainError, UnsupportedError

MAX_DIM = 3


def standard_normal_grid(dim: int, n_points: int):
    """Tensor-product nodes z (n^dim, dim) and weights w with E[f(Z)] ~ sum w f(z), Z ~ N(0, I)."""
    if dim < 1:
        raise DomainError("dimension must be positive")
    if dim > MAX_DIM:
        raise UnsupportedError(f"tensor quadrature is limited to {MAX_DIM} dimensions, got {dim}")
    if n_points < 1:
        raise DomainError("need at least one quadrature point")
    x, w = hermgauss(n_points)
    z1 = math.sqrt(2.0) * x
    w1 = w / math.sqrt(math.pi)
    nodes = np.array(list(itertools.product(z1, repeat=dim)), dtype=np.float64)
    weights = np.prod(np.array(list(itertools.product(w1, repeat=dim))), axis=1)
    return nodes, weights


def gaussian_expectation(f, mu, sigma, n_points: int = 32):
    """E[f(theta)] for theta ~ N(mu, diag(sigma^2)); ``f`` maps (B, d) to (B, ...)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    z, w = standard_normal_grid(mu.size, n_points)
    values = np.asarray(f(mu + sigma * z), dtype=np.float64)
    return np.tensordot(w, values, axes=(0, 0))
