"""Metropolis-within-Gibbs sampler for joint unmixing and nonlinearity detection.

One iteration updates, in order: the label field (single-site Gibbs under the
Potts prior and the marginal likelihood), the abundances (simplex-truncated
Gaussians, pixels independent), the per-band noise variances (log-space random
walks against the full marginal likelihood), and the per-class nonlinearity
energies (log-space random walks; empty classes fall back to the prior).
Proposal scales adapt toward a 0.5 acceptance rate during burn-in only.

All randomness is drawn from one seeded Generator in a fixed order, so chains
are reproducible byte for byte; the per-pixel blocks consume pre-drawn arrays
and may run on multiple threads without changing the result.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from ._accel import set_worker_threads
from .errors import ChainDivergenceError, InvalidInputError
from .fcls import FclsOptions, clamp_to_open_simplex, fcls
from .mrf import LabelField, NeighborhoodOrder, potts_log_unnorm
from .model import (
    AbundanceMatrix,
    EndmemberMatrix,
    HyperspectralImage,
    _chol_with_jitter,
    build_polynomial_kernel,
)


@dataclass
class SamplerConfig:
    n_mc: int
    n_bi: int
    n_classes: int
    beta: float
    gamma: float = 1.0
    nu: float = 0.25
    neighborhood: NeighborhoodOrder = NeighborhoodOrder.EIGHT_PIXEL
    seed: int = 0
    adapt_interval: int = 50
    adapt_factor: float = 1.1
    accept_low: float = 0.4
    accept_high: float = 0.6
    thinning: int = 1
    inner_sweeps: int = 5
    init_sigma_step: float = 0.1
    init_s2_step: float = 0.1
    sigma2_parallel: bool = False
    fix_sigma2: bool = False
    fix_s2: bool = False
    validate: bool = False
    sigma2_init: np.ndarray = None
    s2_init: np.ndarray = None

    def __post_init__(self):
        if self.n_bi >= self.n_mc:
            raise InvalidInputError("burn-in must be smaller than the iteration count")
        if self.n_classes < 2:
            raise InvalidInputError("need at least 2 classes")
        if self.beta <= 0:
            raise InvalidInputError("beta must be positive")
        if self.thinning < 1:
            raise InvalidInputError("thinning must be at least 1")

    def to_dict(self):
        return {
            "n_mc": self.n_mc, "n_bi": self.n_bi, "n_classes": self.n_classes,
            "beta": self.beta, "gamma": self.gamma, "nu": self.nu,
            "neighborhood": self.neighborhood.name, "seed": self.seed,
            "adapt_interval": self.adapt_interval, "adapt_factor": self.adapt_factor,
            "accept_low": self.accept_low, "accept_high": self.accept_high,
            "thinning": self.thinning, "inner_sweeps": self.inner_sweeps,
            "sigma2_parallel": self.sigma2_parallel,
            "fix_sigma2": self.fix_sigma2, "fix_s2": self.fix_s2,
            "sigma2_init": None if self.sigma2_init is None
            else np.asarray(self.sigma2_init).tolist(),
            "s2_init": None if self.s2_init is None
            else np.asarray(self.s2_init).tolist(),
        }


@dataclass
class SamplerState:
    width: int
    height: int
    C: np.ndarray
    z: np.ndarray
    sigma2: np.ndarray
    s2: np.ndarray
    sigma_steps: np.ndarray
    s2_steps: np.ndarray
    rng: np.random.Generator
    band_accepts: np.ndarray = None
    band_window: int = 0
    s2_accepts: np.ndarray = None
    s2_proposals: np.ndarray = None

    def __post_init__(self):
        if self.band_accepts is None:
            self.band_accepts = np.zeros(self.sigma2.shape[0])
        if self.s2_accepts is None:
            self.s2_accepts = np.zeros(self.s2.shape[0])
        if self.s2_proposals is None:
            self.s2_proposals = np.zeros(self.s2.shape[0])

    def abundances(self):
        return np.vstack([self.C, 1.0 - self.C.sum(axis=0)])


@dataclass
class Chain:
    config: SamplerConfig
    C_samples: np.ndarray
    z_samples: np.ndarray
    sigma2_samples: np.ndarray
    s2_samples: np.ndarray
    width: int
    height: int
    accept_sigma2: np.ndarray
    accept_s2: np.ndarray
    runtime_seconds: float = 0.0

    @property
    def n_samples(self):
        return self.z_samples.shape[0]


@dataclass
class Estimates:
    z_map: LabelField
    A_mmse: AbundanceMatrix
    sigma2_mmse: np.ndarray
    s2_mmse: np.ndarray
    label_posterior: np.ndarray = field(repr=False)


class CovSuite:
    """Woodbury factorizations of every class covariance for fixed (sigma2, s2).

    Class k has covariance s2[k-1] * Q Q^T + diag(sigma2); class 0 is diagonal.
    Everything downstream works through the m x m matrices H_k = I/s2 + U with
    U = Q^T D^-1 Q, so per-pixel costs stay O(L m).
    """

    def __init__(self, Q, sigma2, s2):
        self.Q = Q
        self.sigma2 = sigma2
        self.s2 = s2
        self.dinv = 1.0 / sigma2
        self.sum_log_d = float(np.sum(np.log(sigma2)))
        self.dinvQ = Q * self.dinv[:, None]
        self.U = Q.T @ self.dinvQ
        m = Q.shape[1]
        self.m = m
        self.cholH = []
        self.log_dets = [self.sum_log_d]
        for s2_k in s2:
            H = np.eye(m) / s2_k + self.U
            cH = _chol_with_jitter(H)
            self.cholH.append(cH)
            self.log_dets.append(
                self.sum_log_d + m * np.log(s2_k) + 2.0 * float(np.sum(np.log(np.diag(cH))))
            )

    def pixel_logliks(self, Ybar):
        """(K, N) marginal log-likelihoods up to the shared -(L/2)log 2pi constant."""
        K = len(self.s2) + 1
        N = Ybar.shape[1]
        d = self.dinv @ (Ybar * Ybar)
        Z = self.dinvQ.T @ Ybar
        ll = np.empty((K, N))
        ll[0] = -0.5 * (self.log_dets[0] + d)
        for k in range(1, K):
            T = solve_triangular(self.cholH[k - 1], Z, lower=True, check_finite=False)
            corr = np.sum(T * T, axis=0)
            ll[k] = -0.5 * (self.log_dets[k] + d - corr)
        return ll

    def solve(self, V, k):
        """Sigma_k^-1 V for an L x n matrix (or vector)."""
        out = self.dinv[:, None] * V if V.ndim == 2 else self.dinv * V
        if k == 0:
            return out
        t = self.dinvQ.T @ V
        cH = self.cholH[k - 1]
        w = solve_triangular(cH, t, lower=True, check_finite=False)
        w = solve_triangular(cH.T, w, lower=False, check_finite=False)
        return out - self.dinvQ @ w


def _complete(C):
    return np.vstack([C, 1.0 - C.sum(axis=0)])


def initialize_state(Y, M, cfg, rng):
    """Start from the constrained least-squares fit: C clamped into the open
    simplex, labels all linear, per-band residual variances, spread s2.

    Explicit sigma2_init / s2_init config values take precedence (used to pin
    hyperparameters in calibration runs).
    """
    L, N = Y.shape
    A0 = fcls(Y, M, FclsOptions()).values
    A0 = clamp_to_open_simplex(A0, margin=1e-6)
    C0 = A0[:-1, :].copy()
    if cfg.sigma2_init is not None:
        sigma2 = np.asarray(cfg.sigma2_init, dtype=np.float64).copy()
    else:
        resid = Y - M @ A0
        sigma2 = np.maximum(np.mean(resid * resid, axis=1), 1e-12)
    if cfg.s2_init is not None:
        s2 = np.asarray(cfg.s2_init, dtype=np.float64).copy()
    else:
        s2 = np.array([k * 1e-2 for k in range(1, cfg.n_classes)])
    return C0, np.zeros(N, dtype=np.int64), sigma2, s2


def sample_labels_sweep(state, Y, M, kernel, cfg, suite=None):
    """One raster-scan Gibbs sweep over all labels; updates state.z in place."""
    if suite is None:
        suite = CovSuite(kernel.factor, state.sigma2, state.s2)
    Ybar = Y - M @ _complete(state.C)
    loglik = suite.pixel_logliks(Ybar)
    u = state.rng.random((1, Y.shape[1]))
    eight = cfg.neighborhood == NeighborhoodOrder.EIGHT_PIXEL
    kernels.gibbs_label_sweeps(state.z, state.width, state.height, float(cfg.beta),
                               eight, loglik, u, np.empty((0, 0), dtype=np.int64))
    return state.z


def abundance_conditionals(suite, Y, M, z, n_classes):
    """Per-class precision matrices and per-pixel conditional means for C.

    The free coordinates of a class-k pixel are Gaussian with precision
    Mt^T Sigma_k^-1 Mt and mean solving that system against Mt^T Sigma_k^-1
    (y - m_R), where Mt subtracts the last endmember from the others.
    """
    L, R = M.shape
    Mt = M[:, :-1] - M[:, -1:]
    Yt = Y - M[:, -1:]
    lam = np.empty((n_classes, R - 1, R - 1))
    cbar = np.empty((R - 1, Y.shape[1]))
    for k in range(n_classes):
        SinvMt = suite.solve(Mt, k)
        lam[k] = Mt.T @ SinvMt
        idx = np.flatnonzero(z == k)
        if idx.size:
            rhs = SinvMt.T @ Yt[:, idx]
            cbar[:, idx] = np.linalg.solve(lam[k], rhs)
    return np.ascontiguousarray(lam), cbar


def sample_abundances(state, Y, M, kernel, cfg, suite=None):
    """Draw every abundance column from its simplex-truncated Gaussian conditional."""
    if suite is None:
        suite = CovSuite(kernel.factor, state.sigma2, state.s2)
    lam, cbar = abundance_conditionals(suite, Y, M, state.z, cfg.n_classes)
    N = Y.shape[1]
    Rm1 = state.C.shape[0]
    u = state.rng.random((N, cfg.inner_sweeps, Rm1))
    kernels.simplex_gibbs_block(state.C, cbar, lam, state.z, u)
    return state.C


class _NoiseCaches:
    """Sufficient statistics for band-wise noise-variance proposals.

    Holds, per nonlinear class, the residual Gram matrix R_k = Ybar_k Ybar_k^T,
    the projected scatter S_k = Z_k Z_k^T and cross term W_k = Z_k Ybar_k^T
    (Z = Q^T D^-1 Ybar), which admit O(m^2) rank-one updates when one band's
    variance changes.
    """

    def __init__(self, Q, Ybar, z, sigma2, s2, n_classes):
        self.Q = Q
        self.m = Q.shape[1]
        self.s2 = s2
        self.n_classes = n_classes
        self.dinv = 1.0 / sigma2
        self.sum_log_d = float(np.sum(np.log(sigma2)))
        dinvQ = Q * self.dinv[:, None]
        self.U = Q.T @ dinvQ
        self.counts = np.array([(z == k).sum() for k in range(n_classes)])
        L = Q.shape[0]
        self.SQ = np.zeros((n_classes, L))
        self.R = [None] * n_classes
        self.S = [None] * n_classes
        self.W = [None] * n_classes
        self.dqf = np.zeros(n_classes)
        for k in range(n_classes):
            idx = np.flatnonzero(z == k)
            Yk = Ybar[:, idx]
            if k == 0:
                self.SQ[0] = np.sum(Yk * Yk, axis=1)
            else:
                Rk = Yk @ Yk.T
                Zk = dinvQ.T @ Yk
                self.R[k] = Rk
                self.S[k] = Zk @ Zk.T
                self.W[k] = Zk @ Yk.T
                self.SQ[k] = np.diag(Rk).copy()
            self.dqf[k] = float(self.SQ[k] @ self.dinv)

    def total_loglik(self, sum_log_d=None, U=None, dqf=None, S=None):
        """Marginal log-likelihood over all pixels, up to the 2pi constant."""
        sum_log_d = self.sum_log_d if sum_log_d is None else sum_log_d
        U = self.U if U is None else U
        dqf = self.dqf if dqf is None else dqf
        S = self.S if S is None else S
        total = -0.5 * self.counts[0] * sum_log_d - 0.5 * dqf[0]
        for k in range(1, self.n_classes):
            s2_k = self.s2[k - 1]
            H = np.eye(self.m) / s2_k + U
            cH = _chol_with_jitter(H)
            log_det = sum_log_d + self.m * np.log(s2_k) \
                + 2.0 * float(np.sum(np.log(np.diag(cH))))
            if self.counts[k]:
                X = solve_triangular(cH, S[k], lower=True, check_finite=False)
                X = solve_triangular(cH.T, X, lower=False, check_finite=False)
                tr = float(np.trace(X))
                total += -0.5 * self.counts[k] * log_det - 0.5 * (dqf[k] - tr)
        return total

    def band_candidate(self, ell, new_var):
        """Candidate caches after changing band ell's variance (nothing committed)."""
        delta = 1.0 / new_var - self.dinv[ell]
        q = self.Q[ell]
        sum_log_d = self.sum_log_d + np.log(new_var) + np.log(self.dinv[ell])
        U = self.U + delta * np.outer(q, q)
        dqf = self.dqf + delta * self.SQ[:, ell]
        S = [None] * self.n_classes
        for k in range(1, self.n_classes):
            w = self.W[k][:, ell]
            S[k] = (self.S[k] + delta * (np.outer(q, w) + np.outer(w, q))
                    + delta * delta * self.SQ[k, ell] * np.outer(q, q))
        return sum_log_d, U, dqf, S, delta

    def commit_band(self, ell, new_var, sum_log_d, U, dqf, S, delta):
        q = self.Q[ell]
        self.sum_log_d = sum_log_d
        self.U = U
        self.dqf = dqf
        self.dinv = self.dinv.copy()
        self.dinv[ell] = 1.0 / new_var
        for k in range(1, self.n_classes):
            self.S[k] = S[k]
            if self.counts[k]:
                self.W[k] = self.W[k] + delta * np.outer(q, self.R[k][ell, :])


def sample_noise_variances(state, Y, M, kernel, cfg):
    """Per-band Metropolis step for the noise variances (log-space random walk).

    The acceptance ratio uses the marginal likelihood of all pixels: every
    class covariance depends on every band variance. Bands are updated
    sequentially against the always-current state unless cfg.sigma2_parallel
    approximates the sweep by ratios computed from the sweep-start state.
    Returns the noise caches so the s2 block can reuse them.
    """
    L = state.sigma2.shape[0]
    Ybar = Y - M @ _complete(state.C)
    caches = _NoiseCaches(kernel.factor, Ybar, state.z, state.sigma2, state.s2,
                          cfg.n_classes)
    if cfg.fix_sigma2:
        return caches, np.zeros(L, dtype=bool)
    eps = state.rng.standard_normal(L) * state.sigma_steps
    u_acc = state.rng.random(L)
    accepted = np.zeros(L, dtype=bool)
    cur_total = caches.total_loglik()
    if cfg.sigma2_parallel:
        new_vars = state.sigma2 * np.exp(eps)
        for ell in range(L):
            cand = caches.band_candidate(ell, new_vars[ell])
            cand_total = caches.total_loglik(*cand[:4])
            if np.log(u_acc[ell]) < cand_total - cur_total:
                accepted[ell] = True
        for ell in np.flatnonzero(accepted):
            cand = caches.band_candidate(ell, new_vars[ell])
            caches.commit_band(ell, new_vars[ell], *cand)
            state.sigma2[ell] = new_vars[ell]
        return caches, accepted
    for ell in range(L):
        new_var = state.sigma2[ell] * np.exp(eps[ell])
        if not np.isfinite(new_var) or not 1e-290 < new_var < 1e290:
            continue
        cand = caches.band_candidate(ell, new_var)
        cand_total = caches.total_loglik(*cand[:4])
        if np.log(u_acc[ell]) < cand_total - cur_total:
            caches.commit_band(ell, new_var, *cand)
            state.sigma2[ell] = new_var
            cur_total = cand_total
            accepted[ell] = True
    return caches, accepted


def _class_part(caches, k, s2_k):
    """Class-k log-likelihood term as a function of its nonlinearity energy."""
    H = np.eye(caches.m) / s2_k + caches.U
    cH = _chol_with_jitter(H)
    log_det = caches.sum_log_d + caches.m * np.log(s2_k) \
        + 2.0 * float(np.sum(np.log(np.diag(cH))))
    X = solve_triangular(cH, caches.S[k], lower=True, check_finite=False)
    X = solve_triangular(cH.T, X, lower=False, check_finite=False)
    return -0.5 * caches.counts[k] * log_det - 0.5 * (caches.dqf[k] - float(np.trace(X)))


def sample_nonlinearity_scales(state, Y, M, kernel, cfg, caches=None):
    """Metropolis step for each class nonlinearity energy; prior draw when empty.

    The log-space random-walk ratio combines the class likelihood, the
    inverse-gamma prior and the Jacobian of the log transform. Returns per-class
    (accepted, proposed) flags; prior draws of empty classes are exact
    conditional draws and are excluded from the proposal statistics so they do
    not feed the step-size adaptation.
    """
    if caches is None:
        Ybar = Y - M @ _complete(state.C)
        caches = _NoiseCaches(kernel.factor, Ybar, state.z, state.sigma2, state.s2,
                              cfg.n_classes)
    accepted = np.zeros(state.s2.shape[0], dtype=bool)
    proposed = np.zeros(state.s2.shape[0], dtype=bool)
    if cfg.fix_s2:
        return accepted, proposed
    for k in range(1, cfg.n_classes):
        if caches.counts[k] == 0:
            state.s2[k - 1] = 1.0 / state.rng.gamma(cfg.gamma, 1.0 / cfg.nu)
            continue
        eps = state.rng.standard_normal() * state.s2_steps[k - 1]
        u = state.rng.random()
        proposed[k - 1] = True
        old = state.s2[k - 1]
        new = old * np.exp(eps)
        if not np.isfinite(new) or not 1e-290 < new < 1e290:
            continue
        log_ratio = _class_part(caches, k, new) - _class_part(caches, k, old)
        log_ratio += -(cfg.gamma + 1.0) * (np.log(new) - np.log(old)) \
            - cfg.nu * (1.0 / new - 1.0 / old)
        log_ratio += np.log(new) - np.log(old)
        if np.log(u) < log_ratio:
            state.s2[k - 1] = new
            accepted[k - 1] = True
    return accepted, proposed


def log_posterior(state, Y, M, kernel, cfg):
    """Unnormalized log-posterior of the current state (for checks and tests)."""
    suite = CovSuite(kernel.factor, state.sigma2, state.s2)
    Ybar = Y - M @ _complete(state.C)
    ll = suite.pixel_logliks(Ybar)
    total = float(ll[state.z, np.arange(Y.shape[1])].sum())
    total += potts_log_unnorm(state.z.reshape(state.height, state.width),
                              cfg.beta, cfg.neighborhood)
    total += float(-np.sum(np.log(state.sigma2)))
    total += float(np.sum(-(cfg.gamma + 1.0) * np.log(state.s2) - cfg.nu / state.s2))
    return total


def run_chain(Y, M, cfg):
    """Run the full sampler and return the stored post-burn-in chain."""
    if isinstance(Y, HyperspectralImage):
        width, height, Ydata = Y.width, Y.height, Y.data
    else:
        raise InvalidInputError("Y must be a HyperspectralImage")
    M = M.values if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
    if M.shape[0] != Ydata.shape[0]:
        raise InvalidInputError("image and endmember band counts differ")
    set_worker_threads(int(os.environ.get("HSIU_THREADS", "0") or 0))
    t_start = time.perf_counter()
    kernel = build_polynomial_kernel(M)
    rng = np.random.default_rng(cfg.seed)
    L, N = Ydata.shape
    R = M.shape[1]
    C0, z0, sigma2, s2 = initialize_state(Ydata, M, cfg, rng)
    state = SamplerState(
        width=width, height=height, C=C0, z=z0, sigma2=sigma2, s2=s2,
        sigma_steps=np.full(L, cfg.init_sigma_step),
        s2_steps=np.full(cfg.n_classes - 1, cfg.init_s2_step),
        rng=rng,
    )
    n_keep = (cfg.n_mc - cfg.n_bi) // cfg.thinning
    C_samples = np.empty((n_keep, R - 1, N))
    z_samples = np.empty((n_keep, N), dtype=np.int64)
    sigma2_samples = np.empty((n_keep, L))
    s2_samples = np.empty((n_keep, cfg.n_classes - 1))
    acc_sigma_hist = np.empty(cfg.n_mc)
    acc_s2_hist = np.empty(cfg.n_mc)
    kept = 0
    for t in range(1, cfg.n_mc + 1):
        suite = CovSuite(kernel.factor, state.sigma2, state.s2)
        sample_labels_sweep(state, Ydata, M, kernel, cfg, suite=suite)
        sample_abundances(state, Ydata, M, kernel, cfg, suite=suite)
        caches, acc_bands = sample_noise_variances(state, Ydata, M, kernel, cfg)
        acc_s2, prop_s2 = sample_nonlinearity_scales(state, Ydata, M, kernel, cfg,
                                                     caches=caches)
        acc_sigma_hist[t - 1] = float(np.mean(acc_bands))
        acc_s2_hist[t - 1] = float(np.mean(acc_s2[prop_s2])) if prop_s2.any() else 1.0
        state.band_accepts += acc_bands
        state.s2_accepts += acc_s2
        state.s2_proposals += prop_s2
        state.band_window += 1
        if t <= cfg.n_bi and t % cfg.adapt_interval == 0:
            _adapt(state.sigma_steps, state.band_accepts,
                   np.full_like(state.band_accepts, state.band_window), cfg)
            _adapt(state.s2_steps, state.s2_accepts, state.s2_proposals, cfg)
            state.band_accepts[:] = 0.0
            state.band_window = 0
            state.s2_accepts[:] = 0.0
            state.s2_proposals[:] = 0.0
        _check_state(state, t, cfg)
        if cfg.validate and not np.isfinite(log_posterior(state, Ydata, M, kernel, cfg)):
            raise ChainDivergenceError(f"non-finite log-posterior at iteration {t}",
                                       iteration=t)
        if t > cfg.n_bi and (t - cfg.n_bi) % cfg.thinning == 0 and kept < n_keep:
            C_samples[kept] = state.C
            z_samples[kept] = state.z
            sigma2_samples[kept] = state.sigma2
            s2_samples[kept] = state.s2
            kept += 1
    runtime = time.perf_counter() - t_start
    return Chain(config=cfg, C_samples=C_samples, z_samples=z_samples,
                 sigma2_samples=sigma2_samples, s2_samples=s2_samples,
                 width=width, height=height,
                 accept_sigma2=acc_sigma_hist, accept_s2=acc_s2_hist,
                 runtime_seconds=runtime)


def _adapt(steps, accepts, proposals, cfg):
    """Scale proposal steps toward the target acceptance band, per parameter."""
    proposals = np.asarray(proposals, dtype=np.float64)
    active = proposals > 0
    if not np.any(active):
        return
    rates = np.full(steps.shape, np.nan)
    rates[active] = np.asarray(accepts, dtype=np.float64)[active] / proposals[active]
    steps[rates > cfg.accept_high] *= cfg.adapt_factor
    steps[rates < cfg.accept_low] /= cfg.adapt_factor


def _check_state(state, t, cfg):
    ok = (np.all(np.isfinite(state.C)) and np.all(state.C > 0.0)
          and np.all(state.C.sum(axis=0) < 1.0)
          and np.all(np.isfinite(state.sigma2)) and np.all(state.sigma2 > 0.0)
          and np.all(np.isfinite(state.s2)) and np.all(state.s2 > 0.0))
    if not ok:
        raise ChainDivergenceError(f"non-finite or infeasible state at iteration {t}",
                                   iteration=t)


def estimate(chain):
    """Marginal MAP labels, conditional-mean abundances, mean hyperparameters."""
    if chain.n_samples < 1:
        raise InvalidInputError("chain holds no samples")
    T, N = chain.z_samples.shape
    K = chain.config.n_classes
    counts = np.stack([(chain.z_samples == k).sum(axis=0) for k in range(K)])
    z_map = np.argmax(counts, axis=0).astype(np.int64)
    match = chain.z_samples == z_map[None, :]
    weights = match / match.sum(axis=0)[None, :]
    C_mean = np.einsum("trn,tn->rn", chain.C_samples, weights)
    A = AbundanceMatrix.from_free(C_mean, strict=False)
    label_posterior = counts / T
    return Estimates(
        z_map=LabelField(chain.width, chain.height, z_map, K),
        A_mmse=A,
        sigma2_mmse=chain.sigma2_samples.mean(axis=0),
        s2_mmse=chain.s2_samples.mean(axis=0),
        label_posterior=label_posterior,
    )


def conditional_nonlinearity_mean(Y, M, estimates, kernel=None):
    """Posterior-mean nonlinear term per pixel given the MAP labels.

    For a class-k pixel the marginalized perturbation has conditional mean
    s_k^2 K Sigma_k^-1 (y - M a); zero for the linear class. Used to build
    reconstructed spectra.
    """
    M = M.values if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
    if kernel is None:
        kernel = build_polynomial_kernel(M)
    suite = CovSuite(kernel.factor, estimates.sigma2_mmse, estimates.s2_mmse)
    Ybar = Y - M @ estimates.A_mmse.values
    phi = np.zeros_like(Ybar)
    z = estimates.z_map.labels
    for k in range(1, estimates.label_posterior.shape[0]):
        idx = np.flatnonzero(z == k)
        if idx.size:
            phi[:, idx] = estimates.s2_mmse[k - 1] * (
                kernel.values @ suite.solve(Ybar[:, idx], k)
            )
    return phi
