"""Synthetic hyperspectral scenes with known ground truth.

Two scenarios: ``rca-levels`` (one linear class plus nonlinear classes whose
Gaussian-process perturbations have increasing energies) and ``mixed-models``
(linear, bilinear, post-nonlinear and GP classes side by side). Label maps
come from a Potts simulation; abundances are uniform on the simplex.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidInputError
from .mrf import NeighborhoodOrder, sample_potts_field
from .model import EndmemberMatrix, build_polynomial_kernel

SCENARIO_RCA_LEVELS = "rca-levels"
SCENARIO_MIXED_MODELS = "mixed-models"


@dataclass
class ScenarioSpec:
    scenario: str
    width: int = 30
    height: int = 30
    n_bands: int = 64
    n_endmembers: int = 3
    n_classes: int = 4
    beta: float = 1.2
    seed: int = 0
    s2_levels: tuple = (0.01, 0.1, 1.0)
    gbm_gamma_range: tuple = (0.5, 1.0)
    ppnmm_b: float = 0.5
    rca_s2: float = 0.1
    noise_mode: str = "colored"
    noise_iid_variance: float = 1e-4
    potts_sweeps: int = 200
    neighborhood: NeighborhoodOrder = NeighborhoodOrder.EIGHT_PIXEL
    endmember_file: str = ""

    def __post_init__(self):
        if self.scenario not in (SCENARIO_RCA_LEVELS, SCENARIO_MIXED_MODELS):
            raise InvalidInputError(f"unknown scenario {self.scenario!r}")
        if self.scenario == SCENARIO_RCA_LEVELS and len(self.s2_levels) != self.n_classes - 1:
            raise InvalidInputError("s2_levels must list one energy per nonlinear class")
        if self.scenario == SCENARIO_MIXED_MODELS and self.n_classes != 4:
            raise InvalidInputError("mixed-models scenario uses exactly 4 classes")
        if self.noise_mode not in ("colored", "iid"):
            raise InvalidInputError("noise mode must be 'colored' or 'iid'")
        if self.n_endmembers < 2:
            raise InvalidInputError("need at least 2 endmembers")

    def to_dict(self):
        d = asdict(self)
        d["neighborhood"] = self.neighborhood.name
        d["s2_levels"] = list(self.s2_levels)
        d["gbm_gamma_range"] = list(self.gbm_gamma_range)
        return d


@dataclass
class SyntheticDataset:
    Y: np.ndarray
    endmembers: np.ndarray
    abundances: np.ndarray
    labels: np.ndarray
    phi: np.ndarray
    noise: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)
    spec: ScenarioSpec = None

    @property
    def width(self):
        return self.spec.width

    @property
    def height(self):
        return self.spec.height


def sample_uniform_simplex(R, rng, size=None):
    """Uniform (flat Dirichlet) abundance vectors; strictly positive, sum to 1."""
    if R < 2:
        raise InvalidInputError("need at least 2 endmembers")
    n = 1 if size is None else int(size)
    a = rng.dirichlet(np.ones(R), size=n).T
    # exact-zero coordinates have probability zero but guard against underflow
    bad = (a <= 0.0).any(axis=0)
    while np.any(bad):
        a[:, bad] = rng.dirichlet(np.ones(R), size=int(bad.sum())).T
        bad = (a <= 0.0).any(axis=0)
    return a[:, 0] if size is None else a


def gen_rca_pixel(M, a, s2, kernel, rng):
    """Pixel with a Gaussian-process perturbation of energy s2 (covariance s2*K)."""
    M = np.asarray(M, dtype=np.float64)
    if s2 < 0:
        raise InvalidInputError("s2 must be nonnegative")
    if s2 == 0.0:
        phi = np.zeros(M.shape[0])
    else:
        g = rng.standard_normal(kernel.factor.shape[1])
        phi = np.sqrt(s2) * (kernel.factor @ g)
    return M @ a + phi, phi


def gen_gbm_pixel(M, a, gamma, rng=None):
    """Generalized bilinear pixel: pairwise endmember products weighted by gamma[i, j]."""
    M = np.asarray(M, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    R = M.shape[1]
    phi = np.zeros(M.shape[0])
    for i in range(R - 1):
        for j in range(i + 1, R):
            phi += gamma[i, j] * a[i] * a[j] * (M[:, i] * M[:, j])
    return M @ a + phi, phi


def gen_ppnmm_pixel(M, a, b, rng=None):
    """Post-nonlinear pixel: u = M a perturbed by b * (u elementwise-squared)."""
    M = np.asarray(M, dtype=np.float64)
    u = M @ a
    phi = b * u * u
    return u + phi, phi


def colored_noise_variances(L):
    """Band-dependent noise variances 1e-4 * (2 - sin(pi * l / (L - 1))), l = 1..L."""
    if L < 2:
        raise InvalidInputError("need at least 2 bands")
    ell = np.arange(1, L + 1, dtype=np.float64)
    return 1e-4 * (2.0 - np.sin(np.pi * ell / (L - 1)))


def synthetic_endmembers(L, R, rng):
    """Smooth positive spectra built from a few random Gaussian bumps, clipped to [0, 1]."""
    x = np.linspace(0.0, 1.0, L)
    M = np.empty((L, R))
    for r in range(R):
        n_bumps = int(rng.integers(3, 6))
        s = np.zeros(L)
        for _ in range(n_bumps):
            center = rng.uniform(0.0, 1.0)
            width = rng.uniform(0.08, 0.35)
            height = rng.uniform(0.2, 0.9)
            s += height * np.exp(-0.5 * ((x - center) / width) ** 2)
        M[:, r] = np.clip(s, 0.0, 1.0)
    return M


def generate(spec, M=None, rng=None):
    """Build a full synthetic dataset (observations plus every ground-truth piece)."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    L, R, K = spec.n_bands, spec.n_endmembers, spec.n_classes
    if M is None:
        M = synthetic_endmembers(L, R, rng)
    else:
        M = M.values if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
        if M.shape != (L, R):
            raise InvalidInputError(
                f"endmember matrix shape {M.shape} does not match spec ({L}, {R})"
            )
    kernel = build_polynomial_kernel(M)
    N = spec.width * spec.height

    field_ = sample_potts_field(spec.width, spec.height, K, spec.beta,
                                spec.potts_sweeps, rng, spec.neighborhood)
    z = field_.labels
    A = sample_uniform_simplex(R, rng, size=N)

    phi = np.zeros((L, N))
    if spec.scenario == SCENARIO_RCA_LEVELS:
        s2_true = np.asarray(spec.s2_levels, dtype=np.float64)
        for n in range(N):
            if z[n] > 0:
                _, phi[:, n] = gen_rca_pixel(M, A[:, n], s2_true[z[n] - 1], kernel, rng)
    else:
        s2_true = np.array([np.nan, np.nan, spec.rca_s2])
        lo, hi = spec.gbm_gamma_range
        for n in range(N):
            if z[n] == 1:
                gamma = np.triu(rng.uniform(lo, hi, size=(R, R)), k=1)
                _, phi[:, n] = gen_gbm_pixel(M, A[:, n], gamma)
            elif z[n] == 2:
                _, phi[:, n] = gen_ppnmm_pixel(M, A[:, n], spec.ppnmm_b)
            elif z[n] == 3:
                _, phi[:, n] = gen_rca_pixel(M, A[:, n], spec.rca_s2, kernel, rng)

    if spec.noise_mode == "colored":
        sigma2 = colored_noise_variances(L)
    else:
        sigma2 = np.full(L, float(spec.noise_iid_variance))
    noise = rng.standard_normal((L, N)) * np.sqrt(sigma2)[:, None]

    Y = M @ A + phi + noise
    return SyntheticDataset(Y=Y, endmembers=M, abundances=A, labels=z, phi=phi,
                            noise=noise, sigma2=sigma2, s2=s2_true, spec=spec)


def spec_to_json(spec):
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True)
