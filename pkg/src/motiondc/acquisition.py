"""Scan orders, coil sensitivity synthesis and multi-coil projection/combination."""
from __future__ import annotations

from dataclasses import dataclass
import math
import os

import numpy as np

from .numerics import as_image, fft2_centered, ifft2_centered

KINDS = ("FS256", "FS260", "US260", "Custom")
NATIVE_WIDTH = {"FS256": 256, "FS260": 260, "US260": 260}

US260_DENSE = 64
US260_OUTER = 69


def center_rank_columns(width: int) -> np.ndarray:
    """Columns sorted center-out: by distance from ``width // 2``, positive side first on ties."""
    center = width // 2
    cols = np.arange(width)
    dist = np.abs(cols - center)
    # lexsort: last key is primary; negative side (cols < center) loses ties
    return cols[np.lexsort((cols < center, dist))]


def column_ranks(width: int) -> np.ndarray:
    """Inverse of :func:`center_rank_columns`: rank of every column."""
    ranks = np.empty(width, dtype=np.int64)
    ranks[center_rank_columns(width)] = np.arange(width)
    return ranks


@dataclass(frozen=True, eq=False)
class ScanOrder:
    """Acquisition order: ``columns[t]`` is the k-space column acquired at time ``t``."""

    kind: str
    n_columns: int
    columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.int64)
        object.__setattr__(self, "columns", cols)
        cols.setflags(write=False)
        if self.kind not in KINDS:
            raise ValueError(f"unknown scan-order kind {self.kind!r}")
        if self.n_columns < 1:
            raise ValueError("n_columns must be positive")
        if cols.ndim != 1 or cols.size == 0:
            raise ValueError("scan order needs at least one acquisition")
        if cols.min() < 0 or cols.max() >= self.n_columns:
            raise ValueError(f"column index out of range [0, {self.n_columns})")
        uniq, counts = np.unique(cols, return_counts=True)
        if np.any(counts > 1):
            raise ValueError(f"column {int(uniq[counts > 1][0])} acquired more than once")
        if self.kind.startswith("FS") and cols.size != self.n_columns:
            raise ValueError(f"{self.kind} must cover all {self.n_columns} columns")
        if self.kind.startswith("FS") and self.t_center is None:
            raise ValueError(f"{self.kind} order is missing the zero-frequency column")

    def __eq__(self, other):
        if not isinstance(other, ScanOrder):
            return NotImplemented
        return (self.kind == other.kind and self.n_columns == other.n_columns
                and np.array_equal(self.columns, other.columns))

    def __len__(self) -> int:
        return int(self.columns.size)

    @property
    def center_column(self) -> int:
        return self.n_columns // 2

    @property
    def t_center(self) -> int | None:
        hit = np.flatnonzero(self.columns == self.center_column)
        return int(hit[0]) if hit.size else None

    @property
    def timings(self) -> list[tuple[int, int]]:
        return [(t, int(c)) for t, c in enumerate(self.columns)]

    def sampled(self) -> np.ndarray:
        """Per-column 0/1 mask of the columns this order acquires."""
        m = np.zeros(self.n_columns, dtype=np.float64)
        m[self.columns] = 1.0
        return m


def center_out_order(width: int, kind: str = "Custom") -> ScanOrder:
    """Fully-sampled center-out order on any width (``t_center == 0``)."""
    return ScanOrder(kind, width, center_rank_columns(width))


def variable_density_order(width: int, n_dense: int, n_outer: int,
                           kind: str = "Custom") -> ScanOrder:
    """Dense center band of ``n_dense`` ranks plus ``n_outer`` evenly spaced outer ranks."""
    if n_dense < 1 or n_outer < 0 or n_dense + n_outer > width:
        raise ValueError(f"cannot pick {n_dense}+{n_outer} columns out of {width}")
    span = width - n_dense
    outer = [n_dense + round(j * span / n_outer) for j in range(n_outer)] if n_outer else []
    ranks = np.array(sorted(set(range(n_dense)) | set(outer)), dtype=np.int64)
    if ranks.size != n_dense + n_outer:
        raise ValueError("outer ranks collide; choose fewer outer columns")
    return ScanOrder(kind, width, center_rank_columns(width)[ranks])


def build_scan_order(kind: str, width: int | None = None) -> ScanOrder:
    """Built-in orders: ``FS256``, ``FS260`` (center-out) and ``US260`` (133 of 260)."""
    if kind not in NATIVE_WIDTH:
        raise ValueError(f"no built-in order for kind {kind!r}")
    native = NATIVE_WIDTH[kind]
    if width is not None and width != native:
        raise ValueError(f"{kind} requires width {native}, got {width}")
    if kind == "US260":
        return variable_density_order(native, US260_DENSE, US260_OUTER, kind="US260")
    return center_out_order(native, kind=kind)


def analog_scan_order(kind: str, width: int) -> ScanOrder:
    """Scaled-down analog of a built-in kind on an arbitrary width.

    ``FS*`` maps to a center-out order; ``US*`` keeps the 64/260 dense and
    69/260 outer fractions of the under-sampled pattern.
    """
    if kind in NATIVE_WIDTH and width == NATIVE_WIDTH[kind]:
        return build_scan_order(kind)
    if kind.upper().startswith("FS"):
        return center_out_order(width)
    if kind.upper().startswith("US"):
        n_dense = max(1, round(width * US260_DENSE / 260))
        n_outer = round(width * US260_OUTER / 260)
        return variable_density_order(width, n_dense, n_outer)
    raise ValueError(f"unknown scan-order kind {kind!r}")


def format_scan_order(order: ScanOrder) -> str:
    lines = [f"scanorder v1 kind={order.kind} width={order.n_columns}"]
    lines += [f"{t},{c}" for t, c in order.timings]
    return "\n".join(lines) + "\n"


def parse_scan_order(text: str) -> ScanOrder:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty scan-order file")
    head = lines[0].split()
    if head[:2] != ["scanorder", "v1"]:
        raise ValueError(f"bad scan-order header: {lines[0]!r}")
    fields = dict(tok.split("=", 1) for tok in head[2:] if "=" in tok)
    try:
        kind, width = fields["kind"], int(fields["width"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"scan-order header needs kind= and width=: {lines[0]!r}") from exc
    ts, cols = [], []
    for ln in lines[1:]:
        try:
            t, c = (int(v) for v in ln.split(","))
        except ValueError as exc:
            raise ValueError(f"bad scan-order line {ln!r}") from exc
        ts.append(t)
        cols.append(c)
    if len(set(ts)) != len(ts):
        raise ValueError("duplicate timing in scan-order file")
    if ts != list(range(len(ts))):
        raise ValueError("timings must be 0..n-1 in ascending order")
    return ScanOrder(kind, width, np.array(cols, dtype=np.int64))


def save_scan_order(order: ScanOrder, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_scan_order(order))


def load_scan_order(path: str | os.PathLike) -> ScanOrder:
    with open(path, encoding="ascii") as fh:
        return parse_scan_order(fh.read())


def _loop_field(points: np.ndarray, center: np.ndarray, normal: np.ndarray,
                radius: float, n_segments: int = 96) -> np.ndarray:
    """Biot-Savart field (arbitrary units) of a circular current loop at ``points``.

    ``points`` has shape (N, 3); returns (N, 3).
    """
    e2 = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(e2, normal)
    phi = 2 * np.pi * (np.arange(n_segments) + 0.5) / n_segments
    wire = center + radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    dl = (2 * np.pi * radius / n_segments) * (-np.sin(phi)[:, None] * e1 + np.cos(phi)[:, None] * e2)
    field = np.zeros_like(points)
    for seg, d in zip(wire, dl):
        r = points - seg
        dist3 = np.einsum("ij,ij->i", r, r) ** 1.5
        field += np.cross(d, r) / dist3[:, None]
    return field


def biot_savart_maps(height: int, width: int, n_coils: int = 8,
                     coil_radius: float | None = None, loop_radius: float | None = None,
                     phase_per_pixel: float | None = None) -> np.ndarray:
    """Synthetic loop-coil sensitivities, shape ``(n_coils, height, width)``.

    Coils sit at equal angles on a circle of ``coil_radius`` around the image
    center with their axes pointing at it.  Magnitude is the in-plane field
    strength, phase grows linearly with distance from the coil.  Maps are
    normalized so that the per-pixel sum of squared magnitudes is 1.
    """
    if height < 1 or width < 1:
        raise ValueError(f"non-positive map dimensions ({height}, {width})")
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    if coil_radius is None:
        coil_radius = 0.6 * max(height, width)
    if coil_radius <= 0:
        raise ValueError("coil_radius must be positive")
    if loop_radius is None:
        loop_radius = coil_radius / 3.0
    if phase_per_pixel is None:
        phase_per_pixel = math.pi / max(height, width)

    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(height, dtype=np.float64),
                             np.arange(width, dtype=np.float64), indexing="ij")
    pts = np.stack([(cols - cx).ravel(), (cy - rows).ravel(), np.zeros(rows.size)], axis=1)

    raw = np.empty((n_coils, height, width), dtype=np.complex128)
    for i in range(n_coils):
        theta = 2 * np.pi * i / n_coils
        normal = np.array([math.cos(theta), math.sin(theta), 0.0])
        center = coil_radius * normal
        b = _loop_field(pts, center, normal, loop_radius)
        mag = np.hypot(b[:, 0], b[:, 1])
        dist = np.linalg.norm(pts - center, axis=1)
        raw[i] = (mag * np.exp(1j * phase_per_pixel * dist)).reshape(height, width)

    rss = np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))
    return raw / rss


def check_maps(maps: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.complex128)
    if maps.ndim != 3 or maps.shape[0] < 1:
        raise ValueError(f"sensitivity maps must have shape (coils, H, W), got {maps.shape}")
    ss = np.sum(np.abs(maps) ** 2, axis=0)
    if not np.allclose(ss, 1.0, rtol=0.0, atol=atol):
        raise ValueError("sensitivity maps are not normalized per pixel")
    return maps


def coil_project(x: np.ndarray, maps: np.ndarray, order: ScanOrder | None = None) -> np.ndarray:
    """Per-coil k-space ``F{x * s_i}``, with columns the order never acquires zeroed."""
    x = as_image(x)
    maps = np.asarray(maps, dtype=np.complex128)
    if maps.shape[1:] != x.shape:
        raise ValueError(f"image shape {x.shape} does not match maps {maps.shape[1:]}")
    k = fft2_centered(maps * x)
    if order is not None:
        if order.n_columns != x.shape[1]:
            raise ValueError(f"order width {order.n_columns} != image width {x.shape[1]}")
        k = k * order.sampled()
    return k


def coil_combine(k: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """``sum_i conj(s_i) * F^-1{k_i}``."""
    k = np.asarray(k, dtype=np.complex128)
    maps = np.asarray(maps, dtype=np.complex128)
    if k.shape[0] != maps.shape[0]:
        raise ValueError(f"coil count mismatch: k-space {k.shape[0]} vs maps {maps.shape[0]}")
    if k.shape != maps.shape:
        raise ValueError(f"shape mismatch: k-space {k.shape} vs maps {maps.shape}")
    return np.sum(np.conj(maps) * ifft2_centered(k), axis=0)
