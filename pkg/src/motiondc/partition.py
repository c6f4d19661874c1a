"""Dominant-pose selection, DP/RP k-space split and the data-consistency operator.

A sample mask is a length-``width`` 0/1 float vector over k-space columns; it
is broadcast down every row of every coil plane.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import ScanOrder, coil_combine, column_ranks
from .motion import MotionTrace, pose_intervals
from .numerics import fft2_centered, ifft2_centered

DEFAULT_BAND = 32


@dataclass(frozen=True)
class DpSelection:
    pose_index: int
    mask: np.ndarray
    center_coverage: int


def select_dp(order: ScanOrder, trace: MotionTrace, band: int = DEFAULT_BAND) -> DpSelection:
    """Pick the pose holding most of the ``band`` most central columns.

    Ties go to the pose with more columns overall, then to the earlier pose.
    Only timings are used, never the transforms.
    """
    ranks = column_ranks(order.n_columns)
    best = None
    for pose, cols in pose_intervals(order, trace):
        score = (int(np.count_nonzero(ranks[cols] < band)), cols.size, -pose)
        if best is None or score > best[0]:
            best = (score, pose, cols)
    (coverage, _, _), pose, cols = best
    mask = np.zeros(order.n_columns, dtype=np.float64)
    mask[cols] = 1.0
    return DpSelection(pose_index=pose, mask=mask, center_coverage=coverage)


def _check_mask(m: np.ndarray, width: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (width,):
        raise ValueError(f"mask width {m.shape} does not match k-space width {width}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    return m


def split(k_cor: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(m * k_cor, (1 - m) * k_cor)``; the two parts sum back to ``k_cor`` exactly."""
    k_cor = np.asarray(k_cor, dtype=np.complex128)
    m = _check_mask(m, k_cor.shape[-1])
    # select rather than multiply so that -0.0/NaN never leak into the complement
    keep = m.astype(bool)
    k_dp = np.where(keep, k_cor, 0.0)
    k_rp = np.where(keep, 0.0, k_cor)
    return k_dp, k_rp


def zero_filled_recon(k: np.ndarray, maps: np.ndarray) -> np.ndarray:
    return coil_combine(k, maps)


def dc_linear(u: np.ndarray, m: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Linear part of the DC layer: ``sum_i conj(s_i) F^-1{(1 - m) F{u s_i}}``.

    Self-adjoint, so it is also its own backward pass.
    """
    maps = np.asarray(maps, dtype=np.complex128)
    m = _check_mask(m, maps.shape[-1])
    k = fft2_centered(maps * u) * (1.0 - m)
    return np.sum(np.conj(maps) * ifft2_centered(k), axis=0)


def data_consistency(x_tilde: np.ndarray, m: np.ndarray, k_dp: np.ndarray,
                     maps: np.ndarray) -> np.ndarray:
    """Replace the DP columns of every coil's k-space estimate with the measured ones."""
    x_tilde = np.asarray(x_tilde, dtype=np.complex128)
    maps = np.asarray(maps, dtype=np.complex128)
    k_dp = np.asarray(k_dp, dtype=np.complex128)
    if maps.shape[1:] != x_tilde.shape or k_dp.shape != maps.shape:
        raise ValueError(
            f"shape mismatch: image {x_tilde.shape}, maps {maps.shape}, k-space {k_dp.shape}")
    m = _check_mask(m, x_tilde.shape[-1])
    if np.any(k_dp[..., m == 0.0] != 0):
        raise ValueError("k_dp has data outside the mask")
    k = k_dp + (1.0 - m) * fft2_centered(maps * x_tilde)
    return np.sum(np.conj(maps) * ifft2_centered(k), axis=0)
