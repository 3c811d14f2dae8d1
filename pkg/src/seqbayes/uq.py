"""Uncertainty quantification and diagnostic maps.

Pixelwise posterior variances are the diagonal of the inverse precision,
computed either exactly (dense factorization, small grids) or by a
Monte-Carlo diagonal estimator driven by random sign probes.  Edge and
change maps turn the learned precisions into bounded indicator images via
the monotone transform 1/(1 + value): small precisions (weak smoothing,
i.e. an edge or a change) map near one, large precisions map near zero.
The raw precisions remain available on the solver result for fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import GaussianPosterior
from .operators import RegularizationOp
from .solver import NotPositiveDefiniteError, solve_spd

__all__ = [
    "VarianceMap",
    "EdgeMap",
    "posterior_variance",
    "edge_map",
    "change_mask",
]

EXACT = "exact"
STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class VarianceMap:
    """Pixelwise posterior variances of one frame (length-N, nonnegative)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or not np.isfinite(values).all() or (values < 0.0).any():
            raise ValueError("variances must be a finite nonnegative vector")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class EdgeMap:
    """Directional edge indicators and their pixelwise average."""

    vertical: np.ndarray
    horizontal: np.ndarray
    combined: np.ndarray

    def __post_init__(self):
        for name in ("vertical", "horizontal", "combined"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def posterior_variance(
    post: GaussianPosterior,
    method: str = EXACT,
    probes: int = 256,
    seed: int = 0,
    exact_cap: int = 4096,
    solve_rtol: float = 1e-8,
) -> VarianceMap:
    """Pixelwise variances, i.e. the diagonal of the inverse precision.

    ``exact`` assembles the precision densely (one operator apply per unit
    vector), factorizes it, and reads off the inverse diagonal; it refuses
    grids above ``exact_cap`` pixels.  ``stochastic`` averages v * G^{-1} v
    over ``probes`` independent random +-1 vectors, each requiring one
    linear solve run to relative residual ``solve_rtol``; the estimator is
    unbiased in expectation and reproducible for a fixed ``seed``.
    """
    n = post.mean.shape[0]
    if method == EXACT:
        if n > exact_cap:
            raise ValueError(
                f"N = {n} exceeds the dense cap {exact_cap}; use method='stochastic'"
            )
        G = np.empty((n, n))
        eye = np.eye(n)
        for i in range(n):
            G[:, i] = post.precision_apply(eye[i])
        try:
            chol = scipy.linalg.cho_factor(G, lower=True)
        except scipy.linalg.LinAlgError as err:
            raise NotPositiveDefiniteError(
                "precision operator is not positive definite"
            ) from err
        cov = scipy.linalg.cho_solve(chol, eye)
        return VarianceMap(np.diag(cov).copy())
    if method == STOCHASTIC:
        if probes < 1:
            raise ValueError("probes must be positive")
        rng = np.random.default_rng(seed)
        acc = np.zeros(n)
        for _ in range(probes):
            v = rng.integers(0, 2, size=n) * 2.0 - 1.0
            z = solve_spd(post.precision_apply, v, rtol=solve_rtol, precond=post.precond_apply)
            acc += v * z
        # Monte-Carlo estimates of a positive diagonal can dip below zero
        # at low probe counts; clamp to keep the variance contract.
        return VarianceMap(np.maximum(acc / probes, 0.0))
    raise ValueError(f"method must be '{EXACT}' or '{STOCHASTIC}', got {method!r}")


def _place_block(values: np.ndarray, n1: int, order: int, axis: int) -> np.ndarray:
    """Map one directional block of stencil values back to the pixel grid.

    First-order stencils are assigned to their top (axis 0) or left
    (axis 1) pixel.  Second-order stencils cover three pixels; each stencil
    value is assigned to all of them and overlaps are averaged.
    """
    if axis == 1:
        return _place_block(values.T, n1, order, 0).T
    out = np.zeros((n1, n1))
    if order == 1:
        out[:-1, :] = values
        return out
    counts = np.zeros((n1, 1))
    for shift in range(order + 1):
        out[shift:shift + n1 - order, :] += values
        counts[shift:shift + n1 - order] += 1.0
    return out / counts


def edge_map(beta_j: np.ndarray, R: RegularizationOp) -> EdgeMap:
    """Directional edge indicators from one frame's intra-image precisions.

    Splits ``beta_j`` into the two directional blocks of ``R``, transforms
    each value to 1/(1 + beta) so that weak smoothing (an edge) maps near
    one, and places the values back on the pixel grid.  The combined map is
    the pixelwise average of the two directions.
    """
    beta_j = np.asarray(beta_j, dtype=float)
    if beta_j.shape != (R.out_dim,):
        raise ValueError(f"beta must have length {R.out_dim}, got {beta_j.shape}")
    if (beta_j < 0.0).any():
        raise ValueError("precisions must be nonnegative")
    top, bottom = R.split(1.0 / (1.0 + beta_j))
    vertical = _place_block(top, R.n1, R.order, axis=0)
    horizontal = _place_block(bottom, R.n1, R.order, axis=1)
    combined = 0.5 * (vertical + horizontal)
    return EdgeMap(
        vertical=vertical.ravel(order="F"),
        horizontal=horizontal.ravel(order="F"),
        combined=combined.ravel(order="F"),
    )


def change_mask(gamma_pair: np.ndarray) -> np.ndarray:
    """Change indicator 1/(1 + gamma) for one pair of consecutive frames.

    Change regions (small coupling precision) map near one, no-change
    regions (large precision) near zero.
    """
    gamma_pair = np.asarray(gamma_pair, dtype=float)
    if (gamma_pair < 0.0).any():
        raise ValueError("coupling precisions must be nonnegative")
    return 1.0 / (1.0 + gamma_pair)
