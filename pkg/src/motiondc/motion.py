"""Synthetic phantoms, motion-trace sampling and pose-wise k-space merging."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .acquisition import ScanOrder, coil_project
from .numerics import IDENTITY, RigidTransform, resample_rigid


@dataclass(frozen=True)
class Phantom:
    image: np.ndarray
    seed: int


def _support_axes(n: int) -> float:
    # keeps a zero ring of 4 pixels on every side
    return min(0.42 * n, (n - 1) / 2.0 - 4.0)


def synth_phantom(seed: int, height: int = 64, width: int = 64) -> Phantom:
    """Random Shepp-Logan-like head phantom with a smooth polynomial phase.

    Magnitude is piecewise constant in [0, 1] with maximum exactly 1, zero
    outside a centered elliptical support.
    """
    if height < 16 or width < 16:
        raise ValueError(f"phantom needs at least 16x16 pixels, got {height}x{width}")
    rng = np.random.default_rng(seed)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(height, dtype=np.float64),
                             np.arange(width, dtype=np.float64), indexing="ij")
    ay, ax = _support_axes(height), _support_axes(width)
    support = ((rows - cy) / ay) ** 2 + ((cols - cx) / ax) ** 2 <= 1.0

    mag = np.where(support, rng.uniform(0.5, 0.8), 0.0)
    for _ in range(rng.integers(6, 13)):
        ey = cy + rng.uniform(-0.6, 0.6) * ay
        ex = cx + rng.uniform(-0.6, 0.6) * ax
        ry = rng.uniform(0.08, 0.4) * ay
        rx = rng.uniform(0.08, 0.4) * ax
        th = rng.uniform(0, np.pi)
        dy, dx = rows - ey, cols - ex
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        mag = mag + np.where(inside, rng.uniform(-0.4, 0.5), 0.0)
    mag = np.clip(mag, 0.0, 1.0) * support

    yn = (rows - cy) / height
    xn = (cols - cx) / width
    c = rng.uniform(-1.0, 1.0, size=6) * np.array([np.pi, 2.0, 2.0, 2.0, 2.0, 2.0])
    phase = c[0] + c[1] * xn + c[2] * yn + c[3] * xn**2 + c[4] * xn * yn + c[5] * yn**2

    img = mag * np.exp(1j * phase)
    peak = np.abs(img).max()
    if peak == 0:
        raise RuntimeError(f"seed {seed} produced an empty phantom")
    return Phantom(image=img / peak, seed=seed)


@dataclass(frozen=True)
class MotionConfig:
    max_angle_deg: float = 8.0
    max_shift: float = 5.0
    max_motions: int = 3
    min_gap: int = 64
    t_min: int = 8


@dataclass(frozen=True)
class MotionTrace:
    """Motion times and the pose reached after each motion (pose 0 is the identity)."""

    timings: tuple[int, ...] = ()
    transforms: tuple[RigidTransform, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "timings", tuple(int(t) for t in self.timings))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if len(self.timings) != len(self.transforms):
            raise ValueError("need exactly one transform per motion timing")
        if self.timings and self.timings[0] <= 0:
            raise ValueError("first motion must happen after t=0")
        if any(b <= a for a, b in zip(self.timings, self.timings[1:])):
            raise ValueError(f"timings must be strictly increasing: {self.timings}")

    @property
    def n_poses(self) -> int:
        return len(self.timings) + 1

    def pose_transform(self, pose: int) -> RigidTransform:
        return IDENTITY if pose == 0 else self.transforms[pose - 1]


def sample_motion_trace(rng: np.random.Generator, order: ScanOrder,
                        cfg: MotionConfig = MotionConfig(),
                        variant: str | None = None) -> MotionTrace:
    """Draw one motion trace.

    Variant ``"A"`` puts the first motion before the center column is acquired
    (and forces ``t2 >= t1 + min_gap``); variant ``"B"`` puts it between the
    center and half the scan.  ``None`` picks uniformly among the feasible ones.
    """
    n_t = len(order)
    tc = order.t_center or 0
    b_lo, b_hi = max(tc, cfg.t_min, 1), (n_t + 1) // 2  # t1 < |T| / 2
    feasible = []
    if tc > 1:
        feasible.append("A")
    if b_lo < b_hi:
        feasible.append("B")
    if variant is None:
        if not feasible:
            raise ValueError(f"no feasible first-motion window for |T|={n_t}, t_center={tc}")
        variant = feasible[rng.integers(len(feasible))]
    elif variant not in feasible:
        raise ValueError(f"variant {variant!r} infeasible for |T|={n_t}, t_center={tc}")

    n_motions = int(rng.integers(1, cfg.max_motions + 1))
    if variant == "A":
        t1 = int(rng.integers(1, tc))
        later_lo = t1 + cfg.min_gap
    else:
        t1 = int(rng.integers(b_lo, b_hi))
        later_lo = t1 + 1
    n_later = n_motions - 1
    if n_later and n_t - later_lo < n_later:
        raise ValueError(
            f"infeasible constraints: {n_later} motions after t={later_lo} with |T|={n_t}")
    later = sorted(rng.choice(np.arange(later_lo, n_t), size=n_later, replace=False).tolist()) \
        if n_later else []

    max_angle = math.radians(cfg.max_angle_deg)
    transforms = tuple(
        RigidTransform(angle=float(rng.uniform(-max_angle, max_angle)),
                       shift_x=float(rng.uniform(-cfg.max_shift, cfg.max_shift)),
                       shift_y=float(rng.uniform(-cfg.max_shift, cfg.max_shift)))
        for _ in range(n_motions)
    )
    return MotionTrace(timings=(t1, *later), transforms=transforms)


def pose_of_time(order: ScanOrder, trace: MotionTrace) -> np.ndarray:
    """Pose index of every acquisition ``t`` of the order."""
    return np.searchsorted(np.asarray(trace.timings, dtype=np.int64),
                           np.arange(len(order)), side="right")


def pose_intervals(order: ScanOrder, trace: MotionTrace) -> list[tuple[int, np.ndarray]]:
    """Columns acquired in each pose; motions at or after ``|T|`` leave their pose empty."""
    poses = pose_of_time(order, trace)
    return [(p, order.columns[poses == p]) for p in range(trace.n_poses)]


def simulate_corrupted(x: np.ndarray, maps: np.ndarray, order: ScanOrder,
                       trace: MotionTrace) -> np.ndarray:
    """Multi-coil k-space of ``x`` moving through the poses of ``trace``.

    Coils stay fixed: each pose image is resampled first, then projected, and
    every column is copied from the pose that was held when it was acquired.
    """
    out = np.zeros((maps.shape[0], *np.shape(x)), dtype=np.complex128)
    for pose, cols in pose_intervals(order, trace):
        if cols.size == 0:
            continue
        xp = resample_rigid(x, trace.pose_transform(pose))
        k = coil_project(xp, maps, order)
        out[:, :, cols] = k[:, :, cols]
    return out


def format_trace(trace: MotionTrace) -> str:
    lines = ["trace v1"]
    for t, tr in zip(trace.timings, trace.transforms):
        lines.append(f"{t},{math.degrees(tr.angle)!r},{tr.shift_x!r},{tr.shift_y!r}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> MotionTrace:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "trace v1":
        raise ValueError("trace file must start with 'trace v1'")
    timings, transforms = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"bad trace line {ln!r}")
        timings.append(int(parts[0]))
        transforms.append(RigidTransform(angle=math.radians(float(parts[1])),
                                         shift_x=float(parts[2]), shift_y=float(parts[3])))
    return MotionTrace(tuple(timings), tuple(transforms))
