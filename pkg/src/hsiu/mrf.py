"""Potts Markov random field on the pixel grid.

The label prior rewards same-label neighbor pairs with strength beta; the
single-site conditional is proportional to exp(beta * #{neighbors with the
candidate label}). Neighborhoods are truncated at image borders (free
boundary, no wrap).
"""

import enum

import numpy as np

from . import kernels
from .errors import InvalidInputError


class NeighborhoodOrder(enum.Enum):
    FOUR_PIXEL = 4
    EIGHT_PIXEL = 8


class LabelField:
    """Class labels on a W x H grid, stored row-major as a length-N int vector."""

    def __init__(self, width, height, labels, n_classes):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != width * height:
            raise InvalidInputError("label vector length must equal width * height")
        if n_classes < 1:
            raise InvalidInputError("n_classes must be at least 1")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise InvalidInputError("labels out of range")
        self.width = int(width)
        self.height = int(height)
        self.labels = labels
        self.n_classes = int(n_classes)

    @property
    def n_pixels(self):
        return self.labels.shape[0]

    def as_grid(self):
        return self.labels.reshape(self.height, self.width)


def neighbors(n, width, height, order=NeighborhoodOrder.EIGHT_PIXEL):
    """In-bounds neighbor indices of pixel n (no self, no duplicates)."""
    n_sites = width * height
    if not 0 <= n < n_sites:
        raise InvalidInputError(f"pixel index {n} out of range for {width}x{height} grid")
    row, col = divmod(n, width)
    eight = order == NeighborhoodOrder.EIGHT_PIXEL
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            if not eight and dr != 0 and dc != 0:
                continue
            rr, cc = row + dr, col + dc
            if 0 <= rr < height and 0 <= cc < width:
                out.append(rr * width + cc)
    return out


def potts_local_logweight(field, n, k, beta, order=NeighborhoodOrder.EIGHT_PIXEL):
    """beta times the number of neighbors of pixel n currently labeled k."""
    if beta <= 0:
        raise InvalidInputError("beta must be positive")
    count = sum(1 for j in neighbors(n, field.width, field.height, order) if field.labels[j] == k)
    return beta * count


def potts_log_unnorm(labels_grid, beta, order=NeighborhoodOrder.EIGHT_PIXEL):
    """Unnormalized log-probability of a full label grid (each edge counted once)."""
    g = np.asarray(labels_grid)
    same = np.sum(g[:, 1:] == g[:, :-1]) + np.sum(g[1:, :] == g[:-1, :])
    if order == NeighborhoodOrder.EIGHT_PIXEL:
        same += np.sum(g[1:, 1:] == g[:-1, :-1]) + np.sum(g[1:, :-1] == g[:-1, 1:])
    return beta * float(same)


def sample_potts_field(width, height, n_classes, beta, sweeps, rng,
                       order=NeighborhoodOrder.EIGHT_PIXEL):
    """Simulate a Potts label field by raster-scan Gibbs sweeps from a uniform init."""
    if n_classes < 2:
        raise InvalidInputError("n_classes must be at least 2")
    if sweeps < 1:
        raise InvalidInputError("sweeps must be at least 1")
    if beta < 0:
        raise InvalidInputError("beta must be nonnegative")
    n_sites = width * height
    z = rng.integers(0, n_classes, size=n_sites).astype(np.int64)
    loglik = np.zeros((n_classes, n_sites))
    u = rng.random((sweeps, n_sites))
    eight = order == NeighborhoodOrder.EIGHT_PIXEL
    kernels.gibbs_label_sweeps(z, width, height, float(beta), eight, loglik, u,
                               np.empty((0, 0), dtype=np.int64))
    return LabelField(width, height, z, n_classes)
