"""Sampling from a multivariate Gaussian restricted to the open unit simplex.

The draw is produced by a fixed number of coordinate-wise Gibbs sweeps, each
conditional being a univariate Gaussian truncated to the interval the other
coordinates leave available. Warm-started inside an outer Gibbs loop this
kernel leaves the exact conditional invariant; cold starts begin at the
simplex barycenter.
"""

import numpy as np

from . import kernels
from .errors import InvalidInputError, SamplingError

DEFAULT_SWEEPS = 5


class SimplexGaussian:
    """Hidden mean/covariance of a Gaussian truncated to {c_r > 0, sum c < 1}."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidInputError("covariance shape does not match mean length")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise InvalidInputError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidInputError("covariance must be positive definite")
        self.mean = mean
        self.cov = cov
        self.precision = np.linalg.inv(cov)

    @property
    def dim(self):
        return self.mean.shape[0]


def sample_simplex_gaussian(dist, rng, size=None, sweeps=DEFAULT_SWEEPS, start=None):
    """Draw from a simplex-truncated Gaussian; returns a vector, or (size, dim) array.

    Each univariate conditional consumes exactly one uniform from `rng`, so
    draws are reproducible across the compiled and fallback kernel paths.
    """
    d = dist.dim
    n = 1 if size is None else int(size)
    if n < 1:
        raise InvalidInputError("size must be positive")
    if start is None:
        C = np.full((d, n), 1.0 / (d + 1.0))
    else:
        start = np.asarray(start, dtype=np.float64).reshape(d, -1)
        if start.shape[1] not in (1, n):
            raise InvalidInputError("start shape does not match requested size")
        if np.any(start <= 0.0) or np.any(start.sum(axis=0) >= 1.0):
            C = np.full((d, n), 1.0 / (d + 1.0))
        else:
            C = np.broadcast_to(start, (d, n)).copy()
    cbar = np.broadcast_to(dist.mean[:, None], (d, n)).copy()
    lam = dist.precision[None, :, :]
    z = np.zeros(n, dtype=np.int64)
    u = rng.random((n, sweeps, d))
    kernels.simplex_gibbs_block(C, cbar, np.ascontiguousarray(lam), z, u)
    sums = C.sum(axis=0)
    if np.any(C <= 0.0) or np.any(sums >= 1.0):
        bad = int(np.argmax((C <= 0.0).any(axis=0) | (sums >= 1.0)))
        raise SamplingError(
            f"simplex draw left the feasible region (column {bad}: "
            f"values {C[:, bad]}, sum {sums[bad]})"
        )
    return C[:, 0] if size is None else C.T
