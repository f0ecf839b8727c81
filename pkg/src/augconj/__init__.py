"""Automated conditionally conjugate inference for GP models.

Given a likelihood in the super-Gaussian family (a completely monotone
radial function applied to a squared affine residual, times an
exponential tilt), this package constructs the auxiliary-variable
augmentation that makes the model conditionally conjugate and runs
closed-form coordinate-ascent variational inference, sparse stochastic
variational inference with inducing points, and an exact Gibbs sampler
whose auxiliary conditionals are drawn by numerical inverse-CDF.
"""

from .augmentation import (
    BromwichConfig,
    TiltedFamily,
    cumulant,
    kl_omega,
    mean_omega,
    sample_tilted,
    tilted_cdf,
    tilted_pdf,
)
from .cavi import (
    AugmentedState,
    FitTrace,
    FullGPModel,
    GaussianPosterior,
    augmentation_gap,
    elbo,
    fit_cavi,
    global_update,
    local_update,
)
from .dataio import Dataset, load_csv, split, synth
from .diagnostics import autocorr, ess, gelman_rubin, geweke_joint_test
from .errors import (
    AugconjError,
    ConstraintError,
    DomainError,
    NumericalError,
    SamplingError,
)
from .gibbs import ChainStore, run_gibbs, sample_f_conditional, sample_omega_conditional
from .kernels import CholeskyFactor, KernelConfig, chol_jitter, gram
from .likelihoods import LikelihoodSpec, log_likelihood, make_likelihood
from .predict import PredictiveSummary, evaluate, gh_expectation
from .svgp import (
    SparseModel,
    SviOptions,
    fit_svi,
    kmeanspp_inducing,
    predict_latent,
    sparse_elbo,
    svi_step,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
