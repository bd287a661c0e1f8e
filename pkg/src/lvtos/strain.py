"""Jacobians of displacement fields, Green-Lagrange strain and its circumferential component.

Array conventions: a displacement field is (T, H, W, 2) with component 0 along
rows and component 1 along columns, in pixel units. Tensors are stored with
two trailing axes ``(..., 2, 2)`` indexed the same way.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container

DEFORMATION_GRADIENT = "deformation-gradient"
LITERAL = "literal"


@dataclass
class DisplacementField:
    u: np.ndarray
    pixel_size_mm: float = 2.65
    frame_interval_ms: float = 17.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 4 or self.u.shape[-1] != 2:
            raise ValueError(f"displacement must be (T, H, W, 2), got {self.u.shape}")
        if min(self.u.shape[1:3]) < 3:
            raise ValueError("grid must be at least 3x3 for central differences")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("displacement contains non-finite values")
        if self.frame_interval_ms <= 0:
            raise ValueError("frame interval must be positive")

    @property
    def frames(self) -> int:
        return self.u.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.u.shape[1], self.u.shape[2]

    def save(self, path: str | Path) -> None:
        container.save(path, {
            "displacement": self.u,
            "pixel_size_mm": np.array([self.pixel_size_mm]),
            "frame_interval_ms": np.array([self.frame_interval_ms]),
        })

    @classmethod
    def load(cls, path: str | Path) -> "DisplacementField":
        a = container.load(path)
        return cls(a["displacement"], float(a.get("pixel_size_mm", [2.65])[0]),
                   float(a.get("frame_interval_ms", [17.0])[0]))


def periodic_gradient(f: np.ndarray, axis: int, spacing: float = 1.0) -> np.ndarray:
    """Second-order central difference with wraparound along ``axis``."""
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * spacing)


def jacobian(field: DisplacementField | np.ndarray, frame: int | None = None,
             spacing: float = 1.0) -> np.ndarray:
    """Per-pixel ``D[i, j] = du_i/dx_j`` on the periodic grid.

    ``field`` may be a DisplacementField (then ``frame`` selects one frame, or
    all frames when None) or a raw (H, W, 2) array.
    """
    if isinstance(field, DisplacementField):
        u = field.u
        if frame is not None:
            if not 0 <= frame < field.frames:
                raise IndexError(f"frame {frame} out of range [0, {field.frames})")
            u = u[frame]
    else:
        u = np.asarray(field, dtype=np.float64)
    row_ax, col_ax = u.ndim - 3, u.ndim - 2
    d = np.empty(u.shape[:-1] + (2, 2))
    for i in range(2):
        d[..., i, 0] = periodic_gradient(u[..., i], row_ax, spacing)
        d[..., i, 1] = periodic_gradient(u[..., i], col_ax, spacing)
    return d


def strain_tensor(d: np.ndarray, mode: str = DEFORMATION_GRADIENT) -> np.ndarray:
    """Green-Lagrange strain from a displacement gradient field.

    The default uses ``F = I + D`` so rest gives zero strain. ``mode="literal"``
    evaluates ``(D^T D - I) / 2`` on the displacement gradient itself.
    """
    d = np.asarray(d, dtype=np.float64)
    eye = np.eye(d.shape[-1])
    if mode == DEFORMATION_GRADIENT:
        f = d + eye
    elif mode == LITERAL:
        f = d
    else:
        raise ValueError(f"unknown strain mode {mode!r}")
    ftf = np.einsum("...ki,...kj->...ij", f, f)
    e = 0.5 * (ftf - eye)
    return 0.5 * (e + np.swapaxes(e, -1, -2))


def tangent_field(shape: tuple[int, int], center) -> tuple[np.ndarray, np.ndarray]:
    """Unit counterclockwise tangents about ``center`` (row, col) and a validity mask.

    The pixel exactly at the center has no defined direction; its tangent is 0
    and it is flagged False.
    """
    h, w = shape
    cr, cc = center
    if not (0 <= cr <= h - 1 and 0 <= cc <= w - 1):
        raise ValueError(f"center {center} outside grid {shape}")
    rr, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                           indexing="ij")
    dr, dc = rr - cr, cols - cc
    rho = np.hypot(dr, dc)
    valid = rho > 0
    safe = np.where(valid, rho, 1.0)
    # image "up" is -row, so CCW in the displayed image is (-dc, dr) in (row, col)
    t = np.stack([-dc / safe, dr / safe], axis=-1)
    t[~valid] = 0.0
    return t, valid


def circumferential_component(e: np.ndarray, center, return_valid: bool = False):
    """``Ecc = c^T E c`` with ``c`` the unit tangent about ``center``; 0 at the center pixel."""
    e = np.asarray(e, dtype=np.float64)
    t, valid = tangent_field(e.shape[-4:-2], center)
    ecc = np.einsum("...i,...ij,...j->...", t, e, t)
    if return_valid:
        return ecc, valid
    return ecc


def ecc_from_field(field: DisplacementField, center, mode: str = DEFORMATION_GRADIENT) -> np.ndarray:
    """(T, H, W) circumferential strain for every frame."""
    return circumferential_component(strain_tensor(jacobian(field), mode), center)


def write_ecc_csv(path: str | Path, ecc: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Rows ``frame,row,col,value``; restricted to ``mask`` pixels when given."""
    ecc = np.asarray(ecc)
    if ecc.ndim == 2:
        ecc = ecc[None]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "row", "col", "value"])
        for t in range(ecc.shape[0]):
            rows, cols = np.nonzero(mask) if mask is not None else np.indices(ecc.shape[1:]).reshape(2, -1)
            for r, c in zip(rows, cols):
                wr.writerow([t, int(r), int(c), repr(float(ecc[t, r, c]))])
