"""Matrix-free linear operators: measurement models, regularization, precisions.

All operators act on vectorized n1-by-n1 images in column-major order
(entry a + b*n1 holds grid position (row a, column b)).  They are immutable
after construction and safe to use concurrently across frames.

Conventions
-----------
* Fourier sampling computes the plain transform sums, so the (0, 0)
  sample of an image is its pixel sum (n1^2 times the average).  This
  keeps the likelihood weight of the data commensurate with the adaptive
  prior; a unit-average normalization would suppress it by n1^2 and let
  the learned couplings overwhelm the data.
* Complex samples are stacked as independent real measurements: the output
  is [real parts; imaginary parts], so ``out_dim`` counts real components.
* Blurring extends images by zero outside the unit square; the operator is
  the midpoint-quadrature discretization of the continuous convolution.
"""

from __future__ import annotations

import abc
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "LinearOperator",
    "FourierSamplingOp",
    "GaussianBlurOp",
    "RegularizationOp",
    "make_fourier_op",
    "make_blur_op",
    "make_tv_op",
    "apply_precision",
    "apply_rhs",
    "full_frequency_square",
    "operator_from_descriptor",
]


class LinearOperator(abc.ABC):
    """A real linear map with a matrix-free apply and adjoint."""

    in_dim: int
    out_dim: int

    @abc.abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray:
        """Evaluate A x."""

    @abc.abstractmethod
    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        """Evaluate A^T y."""

    def normal_apply(self, x: np.ndarray) -> np.ndarray:
        """Evaluate A^T A x.  Subclasses may fuse the two passes."""
        return self.adjoint_apply(self.apply(x))

    def _check_in(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise ValueError(f"expected input of shape ({self.in_dim},), got {x.shape}")
        return x

    def _check_out(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.out_dim,):
            raise ValueError(f"expected input of shape ({self.out_dim},), got {y.shape}")
        return y


def full_frequency_square(n1: int) -> list:
    """All (k, l) pairs of the sampled frequency square for an n1 grid.

    Frequencies run over the n1 distinct transform bins per axis,
    k in {-floor(n1/2), ..., ceil(n1/2) - 1}.
    """
    lo, hi = -(n1 // 2), (n1 - 1) // 2
    return [(k, l) for k in range(lo, hi + 1) for l in range(lo, hi + 1)]


class FourierSamplingOp(LinearOperator):
    """2-D discrete Fourier sampling with an excluded frequency band.

    The forward map computes the transform of the image at every retained
    (k, l) pair and stacks real parts before imaginary parts.  Removed
    frequencies produce no output components.
    """

    def __init__(self, n1: int, removed_band: Iterable = ()):
        if n1 < 1:
            raise ValueError("n1 must be positive")
        self.n1 = int(n1)
        lo, hi = -(n1 // 2), (n1 - 1) // 2
        removed = {(int(k), int(l)) for k, l in removed_band}
        for k, l in removed:
            if not (lo <= k <= hi and lo <= l <= hi):
                raise ValueError(f"removed frequency {(k, l)} outside the sampled square")
        retained = sorted(set(full_frequency_square(n1)) - removed)
        if not retained:
            raise ValueError("removed band covers all frequencies: empty measurement")
        self.removed_band = frozenset(removed)
        self.retained = tuple(retained)
        self.retained_count = len(retained)
        self.in_dim = n1 * n1
        self.out_dim = 2 * self.retained_count
        ks = np.array([k for k, _ in retained])
        ls = np.array([l for _, l in retained])
        self._rows = np.mod(ks, n1)
        self._cols = np.mod(ls, n1)
        mask = np.zeros((n1, n1), dtype=bool)
        mask[self._rows, self._cols] = True
        self._mask = mask

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_in(x)
        grid = x.reshape(self.n1, self.n1, order="F")
        spec = np.fft.fft2(grid)
        z = spec[self._rows, self._cols]
        return np.concatenate([z.real, z.imag])

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = self._check_out(y)
        mc = self.retained_count
        z = y[:mc] + 1j * y[mc:]
        spec = np.zeros((self.n1, self.n1), dtype=complex)
        spec[self._rows, self._cols] = z
        n2 = self.n1 * self.n1
        return n2 * np.fft.ifft2(spec).real.ravel(order="F")

    def normal_apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_in(x)
        grid = x.reshape(self.n1, self.n1, order="F")
        spec = np.fft.fft2(grid)
        spec[~self._mask] = 0.0
        n2 = self.n1 * self.n1
        out = n2 * np.fft.ifft2(spec).real
        return out.ravel(order="F")

    def normal_symbol(self) -> np.ndarray:
        """Per-mode transform symbol of A^T A (exact: the operator is
        diagonal in the transform basis)."""
        return self._mask * float(self.n1 * self.n1)

    def normal_diagonal(self) -> np.ndarray:
        """Pixel-space diagonal of A^T A (uniform for a scaled projector)."""
        return np.full(self.in_dim, float(self.retained_count))

    @property
    def descriptor(self) -> dict:
        return {
            "kind": "fourier",
            "n1": self.n1,
            "removed": [list(kl) for kl in sorted(self.removed_band)],
        }


class GaussianBlurOp(LinearOperator):
    """Gaussian convolution on the unit square, midpoint quadrature.

    Output pixel (a, b) is (1/n1^2) * sum over (a', b') of
    k(s_a - s_a', t_b - t_b') x(a', b') with midpoints s_a = (a + 1/2)/n1
    and kernel k(s, t) = exp(-(s^2 + t^2)/(2 g^2)) / (2 pi g^2).  The image
    is extended by zero, and the even kernel makes the operator symmetric.
    """

    def __init__(self, n1: int, blur_gamma: float):
        if n1 < 1:
            raise ValueError("n1 must be positive")
        if not (blur_gamma > 0.0):
            raise ValueError("blur_gamma must be positive")
        self.n1 = int(n1)
        self.blur_gamma = float(blur_gamma)
        self.in_dim = self.out_dim = n1 * n1
        offsets = np.arange(-(n1 - 1), n1) / n1
        g1 = np.exp(-(offsets**2) / (2.0 * blur_gamma**2))
        g1 /= np.sqrt(2.0 * np.pi) * blur_gamma
        # 1/n1 per axis gives the 1/n1^2 quadrature weight of the 2-D sum
        self._kernel = np.outer(g1 / n1, g1 / n1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_in(x)
        grid = x.reshape(self.n1, self.n1, order="F")
        out = fftconvolve(grid, self._kernel, mode="same")
        return out.ravel(order="F")

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        # symmetric kernel: the operator is self-adjoint
        return self.apply(y)

    def normal_symbol(self) -> np.ndarray:
        """Per-mode symbol of the circulant (periodic-wrap) approximation
        of A^T A; used for preconditioning, not for applying the operator."""
        n1 = self.n1
        # re-separate the outer-product kernel into its 1-D factor
        center = self._kernel[n1 - 1, n1 - 1] ** 0.5
        g = self._kernel[:, n1 - 1] / center
        wrapped = np.zeros(n1)
        for idx, off in enumerate(range(-(n1 - 1), n1)):
            wrapped[off % n1] += g[idx]
        s1 = np.fft.fft(wrapped).real
        return np.outer(s1, s1) ** 2

    def normal_diagonal(self) -> np.ndarray:
        """Pixel-space diagonal of A^T A (column norms of the kernel sum)."""
        ones = np.ones((self.n1, self.n1))
        diag = fftconvolve(ones, self._kernel**2, mode="same")
        return diag.ravel(order="F")

    @property
    def descriptor(self) -> dict:
        return {"kind": "blur", "n1": self.n1, "blur_gamma": self.blur_gamma}


class RegularizationOp(LinearOperator):
    """Anisotropic finite-difference operator of order 1 or 2.

    Stacks two directional blocks: the first differentiates down columns
    (vertical direction), the second along rows (horizontal direction).
    Order 1 uses rows (-1, 1) and annihilates constants; order 2 uses rows
    (-1, 2, -1) and annihilates images affine in each coordinate.
    """

    def __init__(self, order: int, n1: int):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if n1 <= order:
            raise ValueError(f"grid width {n1} too small for order {order}")
        self.order = int(order)
        self.n1 = int(n1)
        self.in_dim = n1 * n1
        self.block_dim = n1 * (n1 - order)
        self.out_dim = self.K = 2 * self.block_dim

    def _diff_rows(self, grid: np.ndarray) -> np.ndarray:
        if self.order == 1:
            return grid[1:, :] - grid[:-1, :]
        return -grid[:-2, :] + 2.0 * grid[1:-1, :] - grid[2:, :]

    def _diff_cols(self, grid: np.ndarray) -> np.ndarray:
        if self.order == 1:
            return grid[:, 1:] - grid[:, :-1]
        return -grid[:, :-2] + 2.0 * grid[:, 1:-1] - grid[:, 2:]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_in(x)
        grid = x.reshape(self.n1, self.n1, order="F")
        top = self._diff_rows(grid)
        bottom = self._diff_cols(grid)
        return np.concatenate([top.ravel(order="F"), bottom.ravel(order="F")])

    def split(self, values: np.ndarray):
        """Split a K-vector into the (vertical, horizontal) block grids."""
        values = np.asarray(values)
        if values.shape != (self.out_dim,):
            raise ValueError(f"expected length-{self.out_dim} vector, got {values.shape}")
        m = self.block_dim
        top = values[:m].reshape(self.n1 - self.order, self.n1, order="F")
        bottom = values[m:].reshape(self.n1, self.n1 - self.order, order="F")
        return top, bottom

    def normal_symbol(self) -> np.ndarray:
        """Per-mode symbol of the circulant approximation of R^T R."""
        n1 = self.n1
        freq = np.pi * np.fft.fftfreq(n1)
        if self.order == 1:
            one_d = 4.0 * np.sin(freq) ** 2
        else:
            one_d = 16.0 * np.sin(freq) ** 4
        return one_d[:, None] + one_d[None, :]

    def as_sparse(self):
        """The operator as a scipy CSR matrix (built lazily, then cached)."""
        cached = getattr(self, "_sparse", None)
        if cached is None:
            import scipy.sparse as sp

            n1 = self.n1
            if self.order == 1:
                ones = np.ones(n1 - 1)
                D = sp.diags([-ones, ones], [0, 1], shape=(n1 - 1, n1))
            else:
                ones = np.ones(n1 - 2)
                D = sp.diags([-ones, 2.0 * ones, -ones], [0, 1, 2], shape=(n1 - 2, n1))
            eye = sp.identity(n1)
            cached = sp.vstack([sp.kron(eye, D), sp.kron(D, eye)]).tocsr()
            self._sparse = cached
        return cached

    def weighted_normal_diagonal(self, beta: np.ndarray) -> np.ndarray:
        """Pixel-space diagonal of R^T diag(beta) R."""
        top, bottom = self.split(np.asarray(beta, dtype=float))
        diag = np.zeros((self.n1, self.n1))
        if self.order == 1:
            diag[:-1, :] += top
            diag[1:, :] += top
            diag[:, :-1] += bottom
            diag[:, 1:] += bottom
        else:
            diag[:-2, :] += top
            diag[1:-1, :] += 4.0 * top
            diag[2:, :] += top
            diag[:, :-2] += bottom
            diag[:, 1:-1] += 4.0 * bottom
            diag[:, 2:] += bottom
        return diag.ravel(order="F")

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = self._check_out(y)
        top, bottom = self.split(y)
        out = np.zeros((self.n1, self.n1))
        if self.order == 1:
            out[:-1, :] -= top
            out[1:, :] += top
            out[:, :-1] -= bottom
            out[:, 1:] += bottom
        else:
            out[:-2, :] -= top
            out[1:-1, :] += 2.0 * top
            out[2:, :] -= top
            out[:, :-2] -= bottom
            out[:, 1:-1] += 2.0 * bottom
            out[:, 2:] -= bottom
        return out.ravel(order="F")

    @property
    def descriptor(self) -> dict:
        return {"kind": "tv", "n1": self.n1, "order": self.order}


def make_fourier_op(n1: int, removed_band: Iterable = ()) -> FourierSamplingOp:
    """Fourier sampling operator on an n1 grid with ``removed_band`` excluded."""
    return FourierSamplingOp(n1, removed_band)


def make_blur_op(n1: int, blur_gamma: float) -> GaussianBlurOp:
    """Gaussian blur operator on an n1 grid with kernel width ``blur_gamma``."""
    return GaussianBlurOp(n1, blur_gamma)


def make_tv_op(order: int, n1: int) -> RegularizationOp:
    """Anisotropic difference operator of the given order on an n1 grid."""
    return RegularizationOp(order, n1)


def operator_from_descriptor(desc: dict) -> LinearOperator:
    """Rebuild an operator from its serialized descriptor."""
    kind = desc.get("kind")
    if kind == "fourier":
        return FourierSamplingOp(desc["n1"], [tuple(kl) for kl in desc.get("removed", [])])
    if kind == "blur":
        return GaussianBlurOp(desc["n1"], desc["blur_gamma"])
    if kind == "tv":
        return RegularizationOp(desc["order"], desc["n1"])
    raise ValueError(f"unknown operator descriptor kind: {kind!r}")


def apply_precision(
    x: np.ndarray,
    alpha: float,
    beta: np.ndarray,
    F: LinearOperator,
    R: RegularizationOp,
    gamma_left: Optional[np.ndarray] = None,
    gamma_right: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Apply a frame's posterior precision G = alpha F^T F + R^T diag(beta) R
    + diag(gamma_left) + diag(gamma_right), matrix-free.

    ``gamma_left`` couples to the previous frame (absent for the first
    frame), ``gamma_right`` to the next (absent for the last).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (F.in_dim,) or R.in_dim != F.in_dim:
        raise ValueError("image/operator dimensions do not match")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (R.out_dim,):
        raise ValueError(f"beta must have length {R.out_dim}, got {beta.shape}")
    out = alpha * F.normal_apply(x)
    out += R.adjoint_apply(beta * R.apply(x))
    for g in (gamma_left, gamma_right):
        if g is not None:
            g = np.asarray(g, dtype=float)
            if g.shape != x.shape:
                raise ValueError("coupling vector length must match the image")
            out += g * x
    return out


def apply_rhs(
    y: np.ndarray,
    alpha: float,
    F: LinearOperator,
    x_left: Optional[np.ndarray] = None,
    x_right: Optional[np.ndarray] = None,
    gamma_left: Optional[np.ndarray] = None,
    gamma_right: Optional[np.ndarray] = None,
    fty: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Right-hand side b = alpha F^T y + diag(gamma_left) x_left
    + diag(gamma_right) x_right of a frame's linear system.

    Neighbor images are the previous outer-iteration values.  ``fty`` may
    pass a precomputed F^T y to avoid repeating the adjoint.
    """
    if (gamma_left is None) != (x_left is None) or (gamma_right is None) != (x_right is None):
        raise ValueError("each coupling vector needs its neighbor image and vice versa")
    if fty is None:
        fty = F.adjoint_apply(y)
    fty = np.asarray(fty, dtype=float)
    if fty.shape != (F.in_dim,):
        raise ValueError("F^T y has the wrong length")
    out = alpha * fty
    for g, xn in ((gamma_left, x_left), (gamma_right, x_right)):
        if g is not None:
            g = np.asarray(g, dtype=float)
            xn = np.asarray(xn, dtype=float)
            if g.shape != out.shape or xn.shape != out.shape:
                raise ValueError("coupling/neighbor vector length must match the image")
            out += g * xn
    return out
