"""Complex image arithmetic, centered orthonormal FFTs and rigid resampling.

Images are plain 2-D ``complex128`` numpy arrays (row-major, ``(height, width)``).
Multi-coil stacks carry a leading coil axis.  Zero frequency sits at index
``(H // 2, W // 2)`` of a centered k-space plane.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class RigidTransform:
    """In-plane rigid motion: rotation about the image center, then a shift.

    ``angle`` is in radians, counter-clockwise with the row axis pointing up.
    ``shift_x`` moves along columns (width), ``shift_y`` along rows (height),
    both in pixels.
    """

    angle: float = 0.0
    shift_x: float = 0.0
    shift_y: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.angle == 0.0 and self.shift_x == 0.0 and self.shift_y == 0.0

    def validate(self, shape: tuple[int, int]) -> None:
        h, w = shape
        if not (-math.pi <= self.angle < math.pi):
            raise ValueError(f"angle {self.angle} outside [-pi, pi)")
        if abs(self.shift_x) > w / 2 or abs(self.shift_y) > h / 2:
            raise ValueError(
                f"shift ({self.shift_x}, {self.shift_y}) exceeds half the image size {shape}"
            )


IDENTITY = RigidTransform()


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate and return ``x`` as a finite 2-D complex array."""
    a = np.asarray(x)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} has a zero dimension: {a.shape}")
    a = a.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_nonempty(x: np.ndarray) -> None:
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"expected non-empty trailing 2-D planes, got shape {x.shape}")


def fft2_centered(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D DFT over the last two axes."""
    x = np.asarray(x, dtype=np.complex128)
    _check_nonempty(x)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def ifft2_centered(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`."""
    k = np.asarray(k, dtype=np.complex128)
    _check_nonempty(k)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=axes), norm="ortho"), axes=axes)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def frequency_indices(n: int) -> np.ndarray:
    """Signed frequency index of each position on a centered axis of length ``n``."""
    return np.arange(n) - n // 2


def shift_phase_ramp(shape: tuple[int, int], dx: float, dy: float) -> np.ndarray:
    """Centered k-space phase ramp produced by shifting an image by ``(dx, dy)``.

    ``dx`` shifts along columns and ``dy`` along rows, so that
    ``fft2_centered(roll(x, (dy, dx)))`` equals ``fft2_centered(x) * ramp``.
    """
    h, w = shape
    ky = frequency_indices(h)[:, None]
    kx = frequency_indices(w)[None, :]
    return np.exp(-2j * np.pi * (ky * dy / h + kx * dx / w))


def resample_rigid(x: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Move the image content by the rigid transform ``t``.

    Output pixel ``p`` samples the input at ``R^-1 (p - c - shift) + c`` where
    ``c`` is the geometric center.  Bilinear interpolation on real and
    imaginary parts separately; samples from outside the input are zero.
    """
    x = as_image(x)
    t.validate(x.shape)
    if t.is_identity:
        return x.copy()
    h, w = x.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
    # work in (x right, y up) coordinates relative to the center
    u = cols - cx - t.shift_x
    v = -(rows - cy - t.shift_y)
    c, s = math.cos(t.angle), math.sin(t.angle)
    src_u = c * u + s * v
    src_v = -s * u + c * v
    coords = np.stack([cy - src_v, cx + src_u])
    re = ndimage.map_coordinates(x.real, coords, order=1, mode="constant", cval=0.0)
    im = ndimage.map_coordinates(x.imag, coords, order=1, mode="constant", cval=0.0)
    return re + 1j * im
