"""Fully constrained least squares: the linear unmixing baseline.

Per pixel, minimizes ||y - M a||^2 subject to a >= 0 and sum(a) = 1 by
appending a heavily weighted constant row to M and y and solving the
augmented nonnegative least-squares problem with an active-set routine.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidInputError
from .model import AbundanceMatrix, EndmemberMatrix, HyperspectralImage


@dataclass
class FclsOptions:
    sum_weight: float = 1e5
    max_iter_per_endmember: int = 30
    tol: float = 1e-10

    def __post_init__(self):
        if self.sum_weight <= 0:
            raise InvalidInputError("sum-to-one weight must be positive")


def fcls(Y, M, opts=None):
    """Simplex-constrained least-squares abundances for every pixel of Y.

    Pixels whose active-set solve fails to converge are filled with the
    simplex barycenter and counted in a warning.
    """
    opts = opts or FclsOptions()
    if isinstance(Y, HyperspectralImage):
        Y = Y.data
    if isinstance(M, EndmemberMatrix):
        M = M.values
    Y = np.asarray(Y, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != M.shape[0]:
        raise InvalidInputError("image and endmember band counts differ")
    L, R = M.shape
    n_pix = Y.shape[1]
    w = opts.sum_weight
    A_aug = np.vstack([M, w * np.ones((1, R))])
    maxiter = opts.max_iter_per_endmember * R
    out = np.empty((R, n_pix))
    n_failed = 0
    for n in range(n_pix):
        b_aug = np.concatenate([Y[:, n], [w]])
        try:
            x, _ = nnls(A_aug, b_aug, maxiter=maxiter, atol=opts.tol)
        except RuntimeError:
            n_failed += 1
            out[:, n] = 1.0 / R
            continue
        total = x.sum()
        if total <= 0.0:
            n_failed += 1
            out[:, n] = 1.0 / R
            continue
        if abs(total - 1.0) > 1e-6:
            n_failed += 1
            out[:, n] = 1.0 / R
            continue
        out[:, n] = x / total
    if n_failed:
        warnings.warn(f"fcls: {n_failed} of {n_pix} pixels did not converge; "
                      "filled with the barycenter")
    return AbundanceMatrix(out, strict=False)


def clamp_to_open_simplex(A, margin=1e-6):
    """Shrink abundance columns toward the barycenter until every entry >= margin.

    Used when a closed-simplex solution seeds a sampler that requires the
    open simplex. Columns already satisfying the margin are left untouched.
    """
    A = np.asarray(A, dtype=np.float64).copy()
    R = A.shape[0]
    if margin >= 1.0 / R:
        raise InvalidInputError("margin too large for the simplex dimension")
    mins = A.min(axis=0)
    need = mins < margin
    if np.any(need):
        lam = (margin - mins[need]) / (1.0 / R - mins[need])
        A[:, need] = (1.0 - lam) * A[:, need] + lam / R
    return A


def simplex_qp_oracle(y, M, max_iter=200000, tol=1e-12):
    """Projected-gradient minimizer of ||y - M a||^2 over the closed simplex.

    Independent of the active-set route; run to tight tolerance as a test
    oracle. Uses Euclidean projection onto the simplex and Nesterov momentum.
    """
    M = np.asarray(M, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    R = M.shape[1]
    G = M.T @ M
    h = M.T @ y
    step = 1.0 / max(np.linalg.eigvalsh(G).max(), 1e-30)
    a = np.full(R, 1.0 / R)
    v = a.copy()
    t_prev = 1.0
    for _ in range(max_iter):
        grad = G @ v - h
        a_new = _project_simplex(v - step * grad)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
        v = a_new + ((t_prev - 1.0) / t_new) * (a_new - a)
        if np.max(np.abs(a_new - a)) < tol:
            a = a_new
            break
        a, t_prev = a_new, t_new
    return a


def _project_simplex(v):
    """Euclidean projection onto {a >= 0, sum(a) = 1} (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)
