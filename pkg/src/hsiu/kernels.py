"""Hot inner loops, JIT-compiled when numba is enabled (see `hsiu._accel`).

Every kernel is a deterministic function of its inputs: all randomness is
pre-drawn at the caller and passed in as arrays, one uniform per univariate
draw. This keeps the compiled and fallback paths on identical random streams
and makes per-pixel parallelism reproducible.
"""

import math

import numpy as np

from ._accel import njit, prange

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Acklam rational approximation coefficients for the inverse normal CDF.
_IA1 = -3.969683028665376e+01
_IA2 = 2.209460984245205e+02
_IA3 = -2.759285104469687e+02
_IA4 = 1.383577518672690e+02
_IA5 = -3.066479806614716e+01
_IA6 = 2.506628277459239e+00
_IB1 = -5.447609879822406e+01
_IB2 = 1.615858368580409e+02
_IB3 = -1.556989798598866e+02
_IB4 = 6.680131188771972e+01
_IB5 = -1.328068155288572e+01
_IC1 = -7.784894002430293e-03
_IC2 = -3.223964580411365e-01
_IC3 = -2.400758277161838e+00
_IC4 = -2.549732539343734e+00
_IC5 = 4.374664141464968e+00
_IC6 = 2.938163982698783e+00
_ID1 = 7.784695709041462e-03
_ID2 = 3.224671290700398e-01
_ID3 = 2.445134137142996e+00
_ID4 = 3.754408661907416e+00


@njit(cache=True)
def ndtr(x):
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True)
def ndtr_sf(x):
    """Standard normal survival function; underflows to 0 beyond ~37.5."""
    return 0.5 * math.erfc(x / _SQRT2)


@njit(cache=True)
def ndtri(p):
    """Inverse standard normal CDF (Acklam's method plus one Halley step)."""
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_IC1 * q + _IC2) * q + _IC3) * q + _IC4) * q + _IC5) * q + _IC6)
             / ((((_ID1 * q + _ID2) * q + _ID3) * q + _ID4) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((_IA1 * r + _IA2) * r + _IA3) * r + _IA4) * r + _IA5) * r + _IA6) * q
             / (((((_IB1 * r + _IB2) * r + _IB3) * r + _IB4) * r + _IB5) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_IC1 * q + _IC2) * q + _IC3) * q + _IC4) * q + _IC5) * q + _IC6)
              / ((((_ID1 * q + _ID2) * q + _ID3) * q + _ID4) * q + 1.0))
    # One Halley step where exp(x^2/2) cannot overflow.
    if -37.0 < x < 37.0:
        e = ndtr(x) - p
        w = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - w / (1.0 + 0.5 * x * w)
    return x


@njit(cache=True)
def log_ndtr_sf(x):
    """Log of the normal survival function, valid arbitrarily deep in the tail."""
    if x < -8.0:
        return math.log1p(-ndtr_sf(-x))
    if x <= 30.0:
        return math.log(0.5 * math.erfc(x / _SQRT2))
    # Asymptotic expansion of the Mills ratio; relative error < 1e-12 for x > 30.
    x2 = x * x
    series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
    return -0.5 * x2 - _LOG_SQRT_2PI - math.log(x) + math.log(series)


@njit(cache=True)
def _tail_hazard(x):
    x2 = x * x
    series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
    return x / series


@njit(cache=True)
def _tail_isf_log(t):
    """Solve log_ndtr_sf(x) = t for t far below log-underflow (t << -700)."""
    x = math.sqrt(max(2.0 * (-t - _LOG_SQRT_2PI), 1.0))
    for _ in range(60):
        g = log_ndtr_sf(x) - t
        if abs(g) < 1e-13:
            break
        x = x + g / _tail_hazard(x)
    return x


@njit(cache=True)
def _tn_right(u, a, b):
    # b > 0 guaranteed by the caller.
    if a <= 0.0:
        pa = ndtr(a)
        pb = ndtr(b)
        p = pa + u * (pb - pa)
        if p <= 0.5:
            return ndtri(p)
        sa = ndtr_sf(a)
        sb = ndtr_sf(b)
        return -ndtri(sa * (1.0 - u) + sb * u)
    sa = ndtr_sf(a)
    if sa > 1e-280:
        sb = ndtr_sf(b)
        return -ndtri(sa * (1.0 - u) + sb * u)
    # Both bounds beyond double underflow of the survival function.
    lsa = log_ndtr_sf(a)
    lsb = log_ndtr_sf(b) if b < math.inf else -math.inf
    ratio = math.exp(lsb - lsa) if lsb > -math.inf else 0.0
    t = lsa + math.log1p(-u * (1.0 - ratio))
    return _tail_isf_log(t)


@njit(cache=True)
def trunc_norm_std(u, a, b):
    """Inverse-CDF draw from N(0,1) truncated to [a, b], consuming one uniform.

    Stable for bounds arbitrarily deep in either tail; returns a value
    clamped into [a, b].
    """
    if a >= b:
        return 0.5 * (a + b)
    if u <= 0.0:
        x = a
    elif u >= 1.0:
        x = b
    elif b <= 0.0:
        x = -_tn_right(1.0 - u, -b, -a)
    else:
        x = _tn_right(u, a, b)
    if x < a:
        x = a
    if x > b:
        x = b
    return x


@njit(cache=True)
def gibbs_label_sweeps(z, width, height, beta, eight, loglik, u, record):
    """Raster-scan single-site Gibbs sweeps over a Potts-coupled label field.

    Site conditional: P(z_n = k) propto exp(loglik[k, n] + beta * #{same-label
    neighbors}). `u` is (n_sweeps, N) uniforms; `z` (int64, length N) is
    updated in place. If `record` has n_sweeps rows, the post-sweep fields are
    stored there.
    """
    n_sweeps = u.shape[0]
    n_classes = loglik.shape[0]
    n_sites = width * height
    logp = np.empty(n_classes)
    do_record = record.shape[0] == n_sweeps
    for s in range(n_sweeps):
        for n in range(n_sites):
            row = n // width
            col = n - row * width
            for k in range(n_classes):
                logp[k] = loglik[k, n]
            for dr in range(-1, 2):
                rr = row + dr
                if rr < 0 or rr >= height:
                    continue
                for dc in range(-1, 2):
                    if dr == 0 and dc == 0:
                        continue
                    if (not eight) and dr != 0 and dc != 0:
                        continue
                    cc = col + dc
                    if cc < 0 or cc >= width:
                        continue
                    logp[z[rr * width + cc]] += beta
            m = logp[0]
            for k in range(1, n_classes):
                if logp[k] > m:
                    m = logp[k]
            tot = 0.0
            for k in range(n_classes):
                logp[k] = math.exp(logp[k] - m)
                tot += logp[k]
            x = u[s, n] * tot
            zn = n_classes - 1
            acc = 0.0
            for k in range(n_classes):
                acc += logp[k]
                if x < acc:
                    zn = k
                    break
            z[n] = zn
        if do_record:
            for n in range(n_sites):
                record[s, n] = z[n]
    return z


@njit(parallel=True, cache=True)
def simplex_gibbs_block(C, cbar, lam, z, u):
    """Coordinate-Gibbs sweeps of Gaussians truncated to the unit simplex.

    C ((R-1) x N) holds the current points and is updated in place; column n
    targets N(cbar[:, n], lam[z[n]]^-1) restricted to {c_r > 0, sum c < 1}.
    `u` is (N, n_sweeps, R-1) uniforms, one per coordinate draw. Pixels are
    independent, so the loop parallelizes without changing results.
    """
    n_free, n_pix = C.shape
    n_sweeps = u.shape[1]
    for n in prange(n_pix):
        k = z[n]
        for s in range(n_sweeps):
            for r in range(n_free):
                prec = lam[k, r, r]
                sd = 1.0 / math.sqrt(prec)
                dev = 0.0
                rest = 0.0
                for j in range(n_free):
                    if j != r:
                        dev += lam[k, r, j] * (C[j, n] - cbar[j, n])
                        rest += C[j, n]
                mu = cbar[r, n] - dev / prec
                hi = 1.0 - rest
                a = -mu / sd
                b = (hi - mu) / sd
                x = mu + sd * trunc_norm_std(u[n, s, r], a, b)
                lo_lim = 1e-12
                hi_lim = hi - 1e-12
                if hi_lim <= lo_lim:
                    x = 0.5 * hi
                else:
                    if x < lo_lim:
                        x = lo_lim
                    if x > hi_lim:
                        x = hi_lim
                C[r, n] = x
    return C
