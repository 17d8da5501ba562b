"""Probabilistic non-rigid point-set registration with GP shape priors."""

from .core import (
    AllMissingError,
    AnchorMismatchError,
    AnnotatedDeformations,
    ConfigError,
    CorrespondenceState,
    DegenerateInstanceError,
    NumericalError,
    PointSet,
    PosteriorDeformation,
    RegistrationConfig,
    RegistrationResult,
    SFGPError,
    default_sigma2_init,
    validate_config,
)
from .kernels import (
    GramMatrix,
    KernelSpec,
    PCAKernel,
    ScaledKernel,
    SquaredExponential,
    SumKernel,
    assemble_gram,
    build_pca_kernel,
    eval_scalar_kernel,
    load_pca_kernel,
    save_pca_kernel,
)
from .gpr import Annotation, aggregate_annotations, gpr_posterior
from .correspondence import (
    ResponsibilityInputs,
    annotator_variance,
    closest_point_correspondence,
    get_correspondences,
    responsibilities,
    threshold,
)
from .registration import VARIANTS, register, update_sigma2, variant_config
from .synthdata import (
    PerturbationSpec,
    SyntheticInstance,
    add_noise,
    add_outliers,
    apply_structured_missing,
    fish_reference,
    generate,
    warp_rbf,
)
from .metrics import mean_sq_distance, missing_detection, success_ratio

__version__ = "0.1.0"
