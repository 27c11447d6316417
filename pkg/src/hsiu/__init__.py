"""Joint nonlinear spectral unmixing and nonlinearity detection.

Observed pixel spectra are modeled as linear mixtures of known endmembers
plus an additive, class-dependent Gaussian-process perturbation and non-i.i.d.
Gaussian noise. A Metropolis-within-Gibbs sampler infers abundances, a Potts
label field marking nonlinearity levels, band noise variances and per-class
nonlinearity energies; a constrained least-squares baseline and a synthetic
scene generator support evaluation.
"""

from .errors import ChainDivergenceError, InvalidInputError, SamplingError
from .model import (
    AbundanceMatrix,
    ClassCovariance,
    EndmemberMatrix,
    HyperspectralImage,
    KernelMatrix,
    build_polynomial_kernel,
    class_covariance,
    marginal_pixel_loglik,
)
from .mrf import LabelField, NeighborhoodOrder, neighbors, potts_local_logweight, \
    sample_potts_field
from .simplexnorm import SimplexGaussian, sample_simplex_gaussian
from .fcls import FclsOptions, fcls
from .datagen import (
    ScenarioSpec,
    SyntheticDataset,
    colored_noise_variances,
    gen_gbm_pixel,
    gen_ppnmm_pixel,
    gen_rca_pixel,
    generate,
    sample_uniform_simplex,
    synthetic_endmembers,
)
from .sampler import (
    Chain,
    Estimates,
    SamplerConfig,
    SamplerState,
    conditional_nonlinearity_mean,
    estimate,
    run_chain,
)
from .metrics import (
    EvalReport,
    align_by_energy,
    confusion_and_accuracy,
    hyperparam_errors,
    re_per_class,
    rnmse_per_class,
)

__version__ = "0.1.0"

__all__ = [
    "AbundanceMatrix", "Chain", "ChainDivergenceError", "ClassCovariance",
    "EndmemberMatrix", "Estimates", "EvalReport", "FclsOptions",
    "HyperspectralImage", "InvalidInputError", "KernelMatrix", "LabelField",
    "NeighborhoodOrder", "SamplerConfig", "SamplerState", "SamplingError",
    "ScenarioSpec", "SimplexGaussian", "SyntheticDataset", "align_by_energy",
    "build_polynomial_kernel", "class_covariance", "colored_noise_variances",
    "conditional_nonlinearity_mean", "confusion_and_accuracy", "estimate",
    "fcls", "gen_gbm_pixel", "gen_ppnmm_pixel", "gen_rca_pixel", "generate",
    "hyperparam_errors", "marginal_pixel_loglik", "neighbors",
    "potts_local_logweight", "re_per_class", "rnmse_per_class", "run_chain",
    "sample_potts_field", "sample_simplex_gaussian", "sample_uniform_simplex",
    "synthetic_endmembers",
]
