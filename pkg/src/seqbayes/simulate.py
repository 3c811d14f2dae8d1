"""Synthetic ground-truth sequences, measurement synthesis, and noise injection.

Phantoms are sums of piecewise-constant shapes rasterized by a midpoint
containment test (no anti-aliasing), so motion regions are crisp and
testable.  Moving ellipses may rotate about their center and translate by a
fixed number of pixels per frame; axis-aligned, pixel-quantized motion
shifts the rasterization exactly.

Noise levels are specified as per-frame signal-to-noise values
snr = 10 log10(alpha * dc) where dc is the image average (which equals the
(0, 0) Fourier sample under this package's transform scaling); the implied
precision alpha sets the variance of i.i.d. normal noise added to every
real measurement component.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .model import ImageSequence, MeasurementSet
from .operators import FourierSamplingOp, GaussianBlurOp, LinearOperator

__all__ = [
    "Ellipse",
    "Rect",
    "PhantomSpec",
    "NoiseSpec",
    "render_phantom",
    "refine_spec",
    "moving_ellipses_phantom",
    "alpha_from_snr",
    "synthesize_measurements",
    "remove_bands",
]


@dataclass(frozen=True)
class Ellipse:
    """An ellipse on the unit square, optionally moving frame to frame.

    ``center`` and ``semi_axes`` are (row, column) pairs in domain units;
    ``angle`` is in radians.  ``translation_px_per_frame`` moves the center
    by whole-or-fractional pixels per frame in (row, column) direction, and
    ``rotation_per_frame`` spins the ellipse about its own center.
    """

    center: tuple
    semi_axes: tuple
    angle: float = 0.0
    intensity: float = 1.0
    rotation_per_frame: float = 0.0
    translation_px_per_frame: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "kind": "ellipse",
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
            "angle": self.angle,
            "intensity": self.intensity,
            "rotation_per_frame": self.rotation_per_frame,
            "translation_px_per_frame": list(self.translation_px_per_frame),
        }

    @staticmethod
    def from_dict(d: dict) -> "Ellipse":
        return Ellipse(
            center=tuple(d["center"]),
            semi_axes=tuple(d["semi_axes"]),
            angle=float(d.get("angle", 0.0)),
            intensity=float(d.get("intensity", 1.0)),
            rotation_per_frame=float(d.get("rotation_per_frame", 0.0)),
            translation_px_per_frame=tuple(d.get("translation_px_per_frame", (0.0, 0.0))),
        )


@dataclass(frozen=True)
class Rect:
    """A static axis-aligned rectangle [s0, s1) x [t0, t1) in domain units."""

    s0: float
    s1: float
    t0: float
    t1: float
    intensity: float = 1.0

    def to_dict(self) -> dict:
        return {
            "kind": "rect",
            "s0": self.s0,
            "s1": self.s1,
            "t0": self.t0,
            "t1": self.t1,
            "intensity": self.intensity,
        }

    @staticmethod
    def from_dict(d: dict) -> "Rect":
        return Rect(
            s0=float(d["s0"]), s1=float(d["s1"]),
            t0=float(d["t0"]), t1=float(d["t1"]),
            intensity=float(d.get("intensity", 1.0)),
        )


@dataclass(frozen=True)
class PhantomSpec:
    """Grid size, frame count, moving ellipses, and static background shapes."""

    n1: int
    frames: int
    ellipses: tuple = ()
    background: tuple = ()

    def __post_init__(self):
        if self.n1 < 1 or self.frames < 1:
            raise ValueError("n1 and frames must be positive")
        object.__setattr__(self, "ellipses", tuple(self.ellipses))
        object.__setattr__(self, "background", tuple(self.background))

    def to_dict(self) -> dict:
        return {
            "n1": self.n1,
            "frames": self.frames,
            "ellipses": [e.to_dict() for e in self.ellipses],
            "background": [s.to_dict() for s in self.background],
        }

    @staticmethod
    def from_dict(d: dict) -> "PhantomSpec":
        return PhantomSpec(
            n1=int(d["n1"]),
            frames=int(d["frames"]),
            ellipses=tuple(Ellipse.from_dict(e) for e in d.get("ellipses", [])),
            background=tuple(_shape_from_dict(s) for s in d.get("background", [])),
        )


def _shape_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "rect":
        return Rect.from_dict(d)
    if kind == "ellipse":
        return Ellipse.from_dict(d)
    raise ValueError(f"unknown background shape kind: {kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-frame target SNR values and the noise seed."""

    snr: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "snr", tuple(float(s) for s in self.snr))
        if len(self.snr) < 1:
            raise ValueError("need at least one SNR value")

    def to_dict(self) -> dict:
        return {"snr": list(self.snr), "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSpec":
        return NoiseSpec(snr=tuple(d["snr"]), seed=int(d["seed"]))


def _ellipse_mask(S, T, e: Ellipse, frame: int, n1: int) -> np.ndarray:
    ds, dt = e.translation_px_per_frame
    cs = e.center[0] + frame * ds / n1
    ct = e.center[1] + frame * dt / n1
    a, b = e.semi_axes
    r = max(a, b)
    if not (cs - r >= 0.0 and cs + r <= 1.0 and ct - r >= 0.0 and ct + r <= 1.0):
        raise ValueError(
            f"ellipse at ({cs:.4f}, {ct:.4f}) leaves the unit square at frame {frame + 1}"
        )
    ang = e.angle + frame * e.rotation_per_frame
    u = (S - cs) * np.cos(ang) + (T - ct) * np.sin(ang)
    v = -(S - cs) * np.sin(ang) + (T - ct) * np.cos(ang)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_phantom(spec: PhantomSpec) -> ImageSequence:
    """Rasterize the phantom: each pixel sums the intensities of the shapes
    covering its midpoint.  Deterministic; raises if any moving shape
    leaves the unit square in any frame.
    """
    n1 = spec.n1
    mid = (np.arange(n1) + 0.5) / n1
    S, T = np.meshgrid(mid, mid, indexing="ij")
    background = np.zeros((n1, n1))
    for shape in spec.background:
        if isinstance(shape, Rect):
            inside = (S >= shape.s0) & (S < shape.s1) & (T >= shape.t0) & (T < shape.t1)
            background += shape.intensity * inside
        else:
            background += shape.intensity * _ellipse_mask(S, T, shape, 0, n1)
    frames = np.empty((spec.frames, n1 * n1))
    for j in range(spec.frames):
        grid = background.copy()
        for e in spec.ellipses:
            grid += e.intensity * _ellipse_mask(S, T, e, j, n1)
        frames[j] = grid.ravel(order="F")
    return ImageSequence(frames, n1)


def refine_spec(spec: PhantomSpec) -> PhantomSpec:
    """The same scene on a 2x-finer grid.

    Domain-unit geometry is unchanged; per-frame pixel translations double
    so the physical motion stays identical.
    """
    ellipses = tuple(
        Ellipse(
            center=e.center,
            semi_axes=e.semi_axes,
            angle=e.angle,
            intensity=e.intensity,
            rotation_per_frame=e.rotation_per_frame,
            translation_px_per_frame=(
                2.0 * e.translation_px_per_frame[0],
                2.0 * e.translation_px_per_frame[1],
            ),
        )
        for e in spec.ellipses
    )
    return PhantomSpec(
        n1=2 * spec.n1, frames=spec.frames, ellipses=ellipses, background=spec.background
    )


def moving_ellipses_phantom(
    n1: int,
    frames: int,
    intensity_scale: float = 1.0,
    down_px_per_frame: float = 2.0,
) -> PhantomSpec:
    """The standard test scene: static panel and shapes, one rotating and
    one down-moving ellipse."""
    a = intensity_scale

    def px(v: float) -> float:
        return round(v * n1) / n1

    # resolution-target rows: periodic bars whose spectral combs sit near
    # 8, 13, 16, and 21 cycles across the image, inside the mid-frequency
    # bands the undersampling schedules remove, so each frame's data
    # genuinely miss visible detail that its neighbors still carry.  All
    # edges snap to the pixel grid, so the fine rendering restricts to the
    # coarse one exactly and the bars carry no rasterization discrepancy.
    detail = []
    for cycles, s0, t0 in ((8, 0.13, 0.14), (13, 0.80, 0.42),
                           (18, 0.47, 0.14), (23, 0.13, 0.56)):
        period_px = max(2, round(n1 / cycles))
        bar_px = max(1, period_px // 2)
        for i in range(5):
            t = px(t0) + i * period_px / n1
            detail.append(
                Rect(px(s0), px(s0 + 0.07), t, t + bar_px / n1, intensity=1.2 * a)
            )
    return PhantomSpec(
        n1=n1,
        frames=frames,
        ellipses=(
            Ellipse(
                center=(0.34, 0.68),
                semi_axes=(0.16, 0.06),
                angle=0.0,
                intensity=1.6 * a,
                rotation_per_frame=0.4,
            ),
            Ellipse(
                center=(0.60, 0.56),
                semi_axes=(0.08, 0.08),
                intensity=2.0 * a,
                translation_px_per_frame=(down_px_per_frame, 0.0),
            ),
        ),
        background=(
            Rect(0.08, 0.92, 0.08, 0.92, intensity=0.3 * a),
            Ellipse(center=(0.30, 0.28), semi_axes=(0.14, 0.10), intensity=0.5 * a),
            Rect(0.70, 0.88, 0.14, 0.34, intensity=0.4 * a),
            *detail,
        ),
    )


def alpha_from_snr(snr: float, dc_value: float) -> float:
    """Noise precision implied by a target SNR and the image average."""
    if not (dc_value > 0.0):
        raise ValueError(f"image average must be positive, got {dc_value}")
    return 10.0 ** (snr / 10.0) / dc_value


def _block_mean(grid: np.ndarray) -> np.ndarray:
    """Average 2x2 pixel blocks; the fine-to-coarse restriction."""
    return 0.25 * (
        grid[0::2, 0::2] + grid[1::2, 0::2] + grid[0::2, 1::2] + grid[1::2, 1::2]
    )


def _fine_clean(op: LinearOperator, fine_frame: np.ndarray, fine_n1: int) -> np.ndarray:
    """Clean data from a 2x-finer rendering, restricted to the coarse
    measurement set.

    The fine rendering is first area-averaged onto the coarse grid (each
    coarse pixel is the mean of its 2x2 fine block), then pushed through
    the coarse operator.  The restriction leaves a controlled discrepancy
    between the data and the midpoint-rasterized reference images (half a
    pixel of boundary antialiasing) without the full aliasing error a
    direct fine-grid transform restriction would carry.
    """
    grid = _block_mean(fine_frame.reshape(fine_n1, fine_n1, order="F"))
    if isinstance(op, FourierSamplingOp):
        return op.apply(grid.ravel(order="F"))
    if isinstance(op, GaussianBlurOp):
        fine_op = GaussianBlurOp(fine_n1, op.blur_gamma)
        blurred = fine_op.apply(fine_frame).reshape(fine_n1, fine_n1, order="F")
        return _block_mean(blurred).ravel(order="F")
    raise ValueError(f"no fine-grid synthesis rule for operator {type(op).__name__}")


def synthesize_measurements(
    x: ImageSequence,
    ops: Sequence[LinearOperator],
    noise: NoiseSpec,
    anti_inverse_crime: bool = False,
    fine_x: Optional[ImageSequence] = None,
) -> MeasurementSet:
    """Produce y^(j) = F^(j) x^(j) + e^(j) with calibrated noise.

    Noise components are i.i.d. zero-mean normal with the precision
    implied by the frame's target SNR and the DC level of its clean data
    (the (0, 0) transform sample for Fourier operators, i.e. the pixel
    sum; the data average for blurring).  Each frame draws from an
    independent substream of the seed, so synthesis is reproducible and
    order-independent.  With ``anti_inverse_crime`` the clean data come
    from a 2x-finer rendering of the same scene (``fine_x``) pushed through
    the correspondingly finer operator and restricted to the coarse
    measurement set, introducing deliberate model discrepancy.
    """
    J = x.count
    if len(ops) != J or len(noise.snr) != J:
        raise ValueError("need one operator and one SNR value per frame")
    if anti_inverse_crime:
        if fine_x is None:
            raise ValueError("anti_inverse_crime=True requires the 2x-finer rendering fine_x")
        if fine_x.n1 != 2 * x.n1 or fine_x.count != J:
            raise ValueError("fine_x must render the same sequence at twice the grid width")
    data = []
    descriptors = []
    for j in range(J):
        if anti_inverse_crime:
            clean = _fine_clean(ops[j], fine_x.frames[j], fine_x.n1)
        else:
            clean = ops[j].apply(x.frames[j])
        alpha = alpha_from_snr(noise.snr[j], _dc_level(ops[j], x.frames[j]))
        sigma = 0.0 if np.isinf(alpha) else 1.0 / np.sqrt(alpha)
        rng = np.random.default_rng([noise.seed, j])
        e = rng.normal(0.0, 1.0, size=clean.shape) * sigma
        data.append(clean + e)
        descriptors.append(ops[j].descriptor)
    return MeasurementSet(data=tuple(data), operator_ids=tuple(descriptors))


def _dc_level(op: LinearOperator, frame: np.ndarray) -> float:
    """DC level of a frame's clean data, the reference for SNR calibration."""
    if isinstance(op, FourierSamplingOp):
        return float(np.sum(frame))
    return float(np.mean(op.apply(frame)))


def remove_bands(j: int, width: int = 10, n1: Optional[int] = None) -> frozenset:
    """Symmetric square band of excluded frequencies for frame j.

    Returns {(k, l) : w*j+1 <= |k| <= w*j+w and likewise for |l|} with
    w = ``width``.  When ``n1`` is given, pairs whose mirror (-k, -l) would
    fall outside the sampled square are clipped away with a warning, so the
    result stays conjugate-symmetric.
    """
    if j < 1:
        raise ValueError("frame index must be >= 1")
    if width < 1:
        raise ValueError("band width must be >= 1")
    mags = range(width * j + 1, width * j + width + 1)
    band = {
        (sk * k, sl * l)
        for k, l in product(mags, mags)
        for sk, sl in product((-1, 1), (-1, 1))
    }
    if n1 is not None:
        limit = (n1 - 1) // 2
        clipped = {(k, l) for k, l in band if abs(k) <= limit and abs(l) <= limit}
        if len(clipped) < len(band):
            warnings.warn(
                f"band for frame {j} exceeds the sampled square of an n1={n1} grid; "
                f"clipped {len(band) - len(clipped)} of {len(band)} frequencies",
                stacklevel=2,
            )
        band = clipped
    return frozenset(band)
