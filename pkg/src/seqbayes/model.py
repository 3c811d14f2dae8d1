"""Domain types, gamma-distribution arithmetic, and conditional update formulas.

The probabilistic model ties J vectorized images x^(1..J) to per-frame
measurements y^(j) = F^(j) x^(j) + e^(j) through three groups of learned
precisions:

* ``alpha[j]``   -- noise precision of frame j's measurements,
* ``beta[j][k]`` -- precision on component k of the transformed image R x^(j),
* ``gamma[j][n]``-- pixelwise precision coupling frames j and j+1.

Every precision carries a gamma hyper-prior, so each conditional update is
the mode of a gamma density and available in closed form.  The update
functions below are pure and accept scalars or arrays; arrays are updated
elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ImageSequence",
    "MeasurementSet",
    "HyperParams",
    "PrecisionState",
    "GaussianPosterior",
    "gamma_mode",
    "update_alpha",
    "update_beta",
    "update_gamma",
    "log_joint_density",
    "log_joint_from_parts",
]


def _frozen_array(a, dtype=float) -> np.ndarray:
    """Copy ``a`` into a read-only float array."""
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageSequence:
    """A temporal stack of J vectorized n1-by-n1 images.

    Frames are stored one per row in a (J, N) array with N = n1*n1.  Pixel
    vectors use column-major order: entry a + b*n1 holds grid position
    (row a, column b).  ``grid(j)`` returns the 2-D view of frame j.
    """

    frames: np.ndarray
    n1: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a (J, N) array with J >= 1")
        if self.n1 < 1 or frames.shape[1] != self.n1 * self.n1:
            raise ValueError(
                f"frame length {frames.shape[1]} does not match n1*n1 = {self.n1 ** 2}"
            )
        if not np.isfinite(frames).all():
            raise ValueError("image frames contain non-finite values")
        object.__setattr__(self, "frames", _frozen_array(frames))

    @property
    def count(self) -> int:
        """Number of frames J."""
        return self.frames.shape[0]

    @property
    def pixel_count(self) -> int:
        """Pixels per frame, N = n1*n1."""
        return self.frames.shape[1]

    def grid(self, j: int) -> np.ndarray:
        """Frame j as an (n1, n1) grid."""
        return self.frames[j].reshape(self.n1, self.n1, order="F")


@dataclass(frozen=True)
class MeasurementSet:
    """Per-frame data vectors plus serializable forward-operator descriptors.

    ``data[j]`` holds frame j's measurements as a real vector (complex
    samples are stacked real-then-imaginary, so its length counts real
    components).  ``operator_ids[j]`` is the descriptor dict understood by
    :func:`seqbayes.operators.operator_from_descriptor`.
    """

    data: tuple
    operator_ids: tuple

    def __post_init__(self):
        data = tuple(_frozen_array(np.atleast_1d(d)) for d in self.data)
        ids = tuple(dict(d) for d in self.operator_ids)
        if len(data) < 1:
            raise ValueError("need at least one measurement vector")
        if len(data) != len(ids):
            raise ValueError("data and operator_ids must have equal length")
        for d in data:
            if d.ndim != 1:
                raise ValueError("measurement vectors must be 1-D")
            if not np.isfinite(d).all():
                raise ValueError("measurements contain non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "operator_ids", ids)

    @property
    def count(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class HyperParams:
    """Shape/rate pairs of the three gamma hyper-priors.

    All six values must be strictly positive.  The defaults are the usual
    weakly-informative choice for Fourier-type problems.  Values with
    ``eta_beta < 1/2``, ``eta_gamma < 1/2``, or ``eta_alpha + M/2 <= 1``
    are permitted: the corresponding conditional-mode updates then clamp
    to zero instead of raising.
    """

    eta_alpha: float = 1.0
    theta_alpha: float = 1e-3
    eta_beta: float = 1.0
    theta_beta: float = 1e-3
    eta_gamma: float = 2.0
    theta_gamma: float = 1e-3

    def __post_init__(self):
        for name in (
            "eta_alpha",
            "theta_alpha",
            "eta_beta",
            "theta_beta",
            "eta_gamma",
            "theta_gamma",
        ):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be a positive finite number, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class PrecisionState:
    """Current precision estimates: alpha (J,), beta J*(K,), gamma (J-1)*(N,).

    ``gamma`` is empty when there is no inter-frame coupling (J = 1, or the
    separate-recovery mode).  All entries are nonnegative; exact zeros arise
    from the clamped mode formula.
    """

    alpha: np.ndarray
    beta: tuple
    gamma: tuple = ()

    def __post_init__(self):
        alpha = _frozen_array(np.atleast_1d(self.alpha))
        beta = tuple(_frozen_array(np.atleast_1d(b)) for b in self.beta)
        gamma = tuple(_frozen_array(np.atleast_1d(g)) for g in self.gamma)
        j = alpha.shape[0]
        if len(beta) != j:
            raise ValueError("need one beta vector per frame")
        if len(gamma) not in (0, j - 1):
            raise ValueError("need one gamma vector per consecutive frame pair")
        for arr in (alpha, *beta, *gamma):
            if not np.isfinite(arr).all() or (arr < 0.0).any():
                raise ValueError("precisions must be finite and nonnegative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)


@dataclass(frozen=True)
class GaussianPosterior:
    """Per-frame Gaussian posterior: mean vector and matrix-free precision.

    ``precision_apply(v)`` evaluates G v where G is the inverse posterior
    covariance.  G is symmetric, and positive definite whenever the frame's
    noise precision is positive.  ``precond_apply``, when present, holds
    one SPD approximation of G^{-1} (or a sequence of candidates) that
    iterative solves against G may use.
    """

    mean: np.ndarray
    precision_apply: Callable[[np.ndarray], np.ndarray]
    precond_apply: object = None

    def __post_init__(self):
        mean = _frozen_array(np.atleast_1d(self.mean))
        if mean.ndim != 1 or not np.isfinite(mean).all():
            raise ValueError("posterior mean must be a finite 1-D vector")
        object.__setattr__(self, "mean", mean)


# ---------------------------------------------------------------------------
# Gamma arithmetic and conditional-mode updates
# ---------------------------------------------------------------------------


def gamma_mode(eta: float, theta: float) -> float:
    """Mode of a gamma density with shape ``eta`` and rate ``theta``.

    Returns max{0, (eta - 1)/theta}.  Both parameters must be positive.
    """
    if not (eta > 0.0) or not (theta > 0.0):
        raise ValueError(f"gamma parameters must be positive, got eta={eta}, theta={theta}")
    return max(0.0, (eta - 1.0) / theta)


def update_alpha(residual_sq: float, m: int, hp: HyperParams) -> float:
    """Conditional-mode update of a noise precision.

    ``residual_sq`` is the squared data misfit of the frame and ``m`` the
    number of (real) measurement components.  Equals ``gamma_mode`` applied
    to the conditional shape/rate pair; negative numerators clamp to zero.
    """
    num = hp.eta_alpha + 0.5 * m - 1.0
    if num <= 0.0:
        return 0.0
    return num / (hp.theta_alpha + 0.5 * residual_sq)


def update_beta(rx_k, hp: HyperParams):
    """Conditional-mode update of intra-image precisions.

    ``rx_k`` is a component (or array of components) of the transformed
    image R x.  Even in its argument; clamps to zero when eta_beta <= 1/2.
    """
    rx_k = np.asarray(rx_k, dtype=float)
    num = hp.eta_beta - 0.5
    out = np.zeros_like(rx_k) if num <= 0.0 else num / (hp.theta_beta + 0.5 * np.square(rx_k))
    return float(out) if out.ndim == 0 else out


def update_gamma(diff_n, hp: HyperParams):
    """Conditional-mode update of inter-image coupling precisions.

    ``diff_n`` is a pixel difference (or array of differences) between two
    consecutive frames.  Clamps to zero when eta_gamma <= 1/2, which
    reduces the joint method to separate recovery.
    """
    diff_n = np.asarray(diff_n, dtype=float)
    num = hp.eta_gamma - 0.5
    out = np.zeros_like(diff_n) if num <= 0.0 else num / (hp.theta_gamma + 0.5 * np.square(diff_n))
    return float(out) if out.ndim == 0 else out


def _gamma_log_kernel(t: np.ndarray, shape: float, rate: np.ndarray) -> float:
    """Sum of (shape-1)*log(t) - rate*t with the 0*log(0) = 0 convention."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    rate = np.broadcast_to(np.asarray(rate, dtype=float), t.shape)
    c = shape - 1.0
    positive = t > 0.0
    safe = np.where(positive, t, 1.0)
    terms = c * np.log(safe) - rate * t
    if c != 0.0:
        boundary = -np.inf if c > 0.0 else np.inf
        terms = np.where(positive, terms, boundary)
    return float(np.sum(terms))


def log_joint_from_parts(
    residual_sqs: Sequence[float],
    m_sizes: Sequence[int],
    rx_list: Sequence[np.ndarray],
    diff_list: Sequence[np.ndarray],
    p: PrecisionState,
    hp: HyperParams,
) -> float:
    """Log joint posterior density from precomputed data/prior residuals.

    ``residual_sqs[j]`` is ||F x^(j) - y^(j)||^2, ``rx_list[j]`` is R x^(j),
    and ``diff_list[j]`` is x^(j) - x^(j+1).  Additive constants independent
    of the images and precisions are dropped; only differences between
    states are meaningful.
    """
    total = 0.0
    for j, (rsq, m) in enumerate(zip(residual_sqs, m_sizes)):
        total += _gamma_log_kernel(
            p.alpha[j], hp.eta_alpha + 0.5 * m, hp.theta_alpha + 0.5 * rsq
        )
    for j, rx in enumerate(rx_list):
        total += _gamma_log_kernel(
            p.beta[j], hp.eta_beta + 0.5, hp.theta_beta + 0.5 * np.square(rx)
        )
    for j, d in enumerate(diff_list):
        total += _gamma_log_kernel(
            p.gamma[j], hp.eta_gamma + 0.5, hp.theta_gamma + 0.5 * np.square(d)
        )
    return total


def log_joint_density(
    x: ImageSequence,
    p: PrecisionState,
    y: MeasurementSet,
    hp: HyperParams,
    ops: Sequence,
    R,
) -> float:
    """Log joint posterior density of images and precisions given the data.

    ``ops`` are the per-frame forward operators and ``R`` the shared
    regularization operator; both are needed to evaluate the residual and
    prior terms.  Returns the log density up to an additive constant.
    Raises ``ValueError`` on negative precision entries (the determinant
    factors are undefined there).
    """
    if len(ops) != x.count or y.count != x.count:
        raise ValueError("operator/data count must match the frame count")
    for arr in (p.alpha, *p.beta, *p.gamma):
        if (np.asarray(arr) < 0.0).any():
            raise ValueError("negative precision entries are outside the model domain")
    residual_sqs = []
    m_sizes = []
    rx_list = []
    for j in range(x.count):
        res = ops[j].apply(x.frames[j]) - y.data[j]
        residual_sqs.append(float(res @ res))
        m_sizes.append(len(y.data[j]))
        rx_list.append(R.apply(x.frames[j]))
    diff_list = [
        x.frames[j] - x.frames[j + 1] for j in range(len(p.gamma))
    ]
    return log_joint_from_parts(residual_sqs, m_sizes, rx_list, diff_list, p, hp)
