"""Core domain types and the marginal Gaussian algebra.

The observation model for pixel spectrum y is y = M a + phi + e, where the
additive nonlinear term phi of a class-k pixel is zero-mean Gaussian with
covariance s_k^2 * K_M. Marginalizing phi leaves per-class covariances
Sigma_k = s_k^2 * K_M + diag(sigma^2). Because K_M = Q Q^T with Q of width
m = R(R+1)/2, all solves and determinants are done in the small m x m space
(Woodbury identity / matrix determinant lemma); the dense path is kept as a
test oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

LOG_2PI = float(np.log(2.0 * np.pi))

_CHOL_JITTER = 1e-10


def _as_float_matrix(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EndmemberMatrix:
    """L x R matrix of known pure spectra; endmembers are the columns."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float_matrix(self.values, "endmember matrix")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("endmember matrix must be at least 1 x 1")
        object.__setattr__(self, "values", arr)

    @property
    def n_bands(self):
        return self.values.shape[0]

    @property
    def n_endmembers(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class HyperspectralImage:
    """W x H grid of L-band pixel spectra, stored as an L x N matrix (row-major pixels)."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_matrix(self.data, "image data")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be positive")
        if arr.shape[1] != self.width * self.height:
            raise InvalidInputError(
                f"image data has {arr.shape[1]} pixels, expected {self.width * self.height}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def n_bands(self):
        return self.data.shape[0]

    @property
    def n_pixels(self):
        return self.data.shape[1]


class AbundanceMatrix:
    """R x N abundances on the unit simplex, with the (R-1) x N free parameterization.

    The last endmember's abundance is 1 - sum of the free coordinates. With
    ``strict=True`` columns must lie in the open simplex; the closed simplex
    (boundary zeros, as produced by constrained least squares) is accepted
    otherwise.
    """

    def __init__(self, values, strict=False):
        arr = _as_float_matrix(values, "abundances")
        colsums = arr.sum(axis=0)
        if np.max(np.abs(colsums - 1.0)) > 1e-12:
            raise InvalidInputError("abundance columns must sum to 1 within 1e-12")
        if strict:
            if np.min(arr) <= 0.0:
                raise InvalidInputError("abundance columns must be strictly positive")
        elif np.min(arr) < -1e-12:
            raise InvalidInputError("abundances must be nonnegative")
        self.values = arr

    @classmethod
    def from_free(cls, free, strict=True):
        """Build from the (R-1) x N free coordinates C, completing the last row."""
        free = np.asarray(free, dtype=np.float64)
        last = 1.0 - free.sum(axis=0)
        return cls(np.vstack([free, last]), strict=strict)

    @property
    def free(self):
        return self.values[:-1, :]

    @property
    def n_endmembers(self):
        return self.values.shape[0]

    @property
    def n_pixels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class KernelMatrix:
    """Second-order polynomial similarity of band signatures: K[i,j] = (row_i . row_j)^2.

    Carries the L x m factor Q with K = Q Q^T, m = R(R+1)/2, whose columns are
    the squared and (sqrt(2)-scaled) pairwise Hadamard products of endmembers.
    """

    values: np.ndarray
    factor: np.ndarray = field(repr=False)

    @property
    def n_bands(self):
        return self.values.shape[0]

    @property
    def rank_bound(self):
        return self.factor.shape[1]


def build_polynomial_kernel(endmembers):
    """Assemble the polynomial kernel matrix and its low-rank factor from M."""
    if not isinstance(endmembers, EndmemberMatrix):
        endmembers = EndmemberMatrix(endmembers)
    M = endmembers.values
    L, R = M.shape
    K = (M @ M.T) ** 2
    cols = [M[:, r] * M[:, r] for r in range(R)]
    for i in range(R):
        for j in range(i + 1, R):
            cols.append(np.sqrt(2.0) * M[:, i] * M[:, j])
    Q = np.stack(cols, axis=1)
    return KernelMatrix(values=K, factor=Q)


def _chol_with_jitter(H):
    """Cholesky of a small SPD matrix, retrying once with a fixed jitter."""
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(H + _CHOL_JITTER * np.eye(H.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError(f"covariance inner matrix is not positive definite: {exc}")


class ClassCovariance:
    """Per-class marginal covariance Sigma = s2 * K + diag(sigma2) with cached solves.

    The Woodbury path factors the m x m matrix H = I/s2 + Q^T D^-1 Q once, so a
    pixel-level quadratic form costs O(L m). ``method="dense"`` assembles Sigma
    explicitly and Cholesky-factors it; it exists as the oracle for tests.
    """

    def __init__(self, kernel, s2, sigma2, method="woodbury"):
        sigma2 = np.asarray(sigma2, dtype=np.float64)
        if sigma2.ndim != 1 or sigma2.shape[0] != kernel.n_bands:
            raise InvalidInputError("sigma2 must be a length-L vector")
        if np.any(sigma2 <= 0.0) or not np.all(np.isfinite(sigma2)):
            raise InvalidInputError("all noise variances must be positive and finite")
        if s2 < 0.0 or not np.isfinite(s2):
            raise InvalidInputError("s2 must be nonnegative and finite")
        self.kernel = kernel
        self.s2 = float(s2)
        self.sigma2 = sigma2
        self.method = method
        self._dinv = 1.0 / sigma2
        self._sum_log_d = float(np.sum(np.log(sigma2)))
        L = kernel.n_bands

        if method == "dense":
            sigma = s2 * kernel.values + np.diag(sigma2)
            self._chol = _chol_with_jitter(sigma)
            self._log_det = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        elif method == "woodbury":
            if self.s2 == 0.0:
                self._log_det = self._sum_log_d
                self._cholH = None
                self._dinvQ = None
            else:
                Q = kernel.factor
                m = Q.shape[1]
                dinvQ = Q * self._dinv[:, None]
                H = np.eye(m) / self.s2 + Q.T @ dinvQ
                self._cholH = _chol_with_jitter(H)
                self._dinvQ = dinvQ
                self._log_det = (
                    self._sum_log_d
                    + m * np.log(self.s2)
                    + 2.0 * float(np.sum(np.log(np.diag(self._cholH))))
                )
        else:
            raise InvalidInputError(f"unknown covariance method: {method!r}")
        self.n_bands = L

    @property
    def log_det(self):
        return self._log_det

    def solve(self, v):
        """Sigma^-1 v for a vector or L x n matrix."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.n_bands:
            raise InvalidInputError("vector length does not match band count")
        if self.method == "dense":
            w = np.linalg.solve(self._chol, v)
            return np.linalg.solve(self._chol.T, w)
        out = self._dinv[:, None] * v if v.ndim == 2 else self._dinv * v
        if self.s2 == 0.0:
            return out
        t = self._dinvQ.T @ v
        w = np.linalg.solve(self._cholH, t)
        w = np.linalg.solve(self._cholH.T, w)
        return out - self._dinvQ @ w

    def quadratic_form(self, v):
        """v^T Sigma^-1 v, columnwise for matrix input."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.n_bands:
            raise InvalidInputError("vector length does not match band count")
        if self.method == "dense":
            w = np.linalg.solve(self._chol, v)
            return np.sum(w * w, axis=0) if v.ndim == 2 else float(np.dot(w, w))
        base = np.sum((v * v) * self._dinv[:, None], axis=0) if v.ndim == 2 \
            else float(np.dot(v * v, self._dinv))
        if self.s2 == 0.0:
            return base
        t = self._dinvQ.T @ v
        w = np.linalg.solve(self._cholH, t)
        corr = np.sum(w * w, axis=0) if v.ndim == 2 else float(np.dot(w, w))
        return base - corr


def class_covariance(kernel, s2, sigma2, method="woodbury"):
    """Covariance of a class with nonlinearity energy s2 and band noise sigma2."""
    return ClassCovariance(kernel, s2, sigma2, method=method)


def marginal_pixel_loglik(y_bar, cov):
    """Log-density of a zero-mean Gaussian residual under a class covariance.

    Includes the -(L/2) log 2pi constant so values are comparable across
    classes and against external oracles.
    """
    y_bar = np.asarray(y_bar, dtype=np.float64)
    if y_bar.ndim != 1 or y_bar.shape[0] != cov.n_bands:
        raise InvalidInputError("residual length does not match band count")
    return -0.5 * (cov.log_det + cov.quadratic_form(y_bar) + cov.n_bands * LOG_2PI)
