"""Joint hierarchical Bayesian recovery of temporal image sequences.

The library recovers a sequence of images from per-frame noisy, incomplete
linear measurements (undersampled Fourier data, Gaussian blur) by learning
three groups of precision parameters alongside the images: per-frame noise
precisions, sparsity-promoting precisions on a difference transform of each
image, and pixelwise precisions coupling consecutive frames.  The coupling
lets every frame borrow the information its own data are missing from its
neighbors; dropping it recovers the classic separate sparse-Bayesian
reconstruction as a special case.

Main entry points:

* :func:`seqbayes.solver.solve` -- the coordinate-descent solver,
* :mod:`seqbayes.simulate` -- phantoms and calibrated measurement synthesis,
* :mod:`seqbayes.uq` -- pixelwise variances, edge maps, change masks,
* :mod:`seqbayes.cli` -- the ``seqbayes`` command-line pipeline.
"""

from .model import (
    GaussianPosterior,
    HyperParams,
    ImageSequence,
    MeasurementSet,
    PrecisionState,
    gamma_mode,
    log_joint_density,
    update_alpha,
    update_beta,
    update_gamma,
)
from .operators import (
    FourierSamplingOp,
    GaussianBlurOp,
    LinearOperator,
    RegularizationOp,
    apply_precision,
    apply_rhs,
    make_blur_op,
    make_fourier_op,
    make_tv_op,
    operator_from_descriptor,
)
from .simulate import (
    Ellipse,
    NoiseSpec,
    PhantomSpec,
    Rect,
    alpha_from_snr,
    moving_ellipses_phantom,
    refine_spec,
    remove_bands,
    render_phantom,
    synthesize_measurements,
)
from .solver import (
    JOINT,
    SEPARATE,
    NotPositiveDefiniteError,
    SolveResult,
    SolverConfig,
    SolverDivergedError,
    solve,
    solve_spd,
    stopping_check,
    x_update,
)
from .uq import EdgeMap, VarianceMap, change_mask, edge_map, posterior_variance

__version__ = "0.1.0"
