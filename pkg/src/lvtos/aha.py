"""17-segment AHA aggregation, bulls-eye SVG and interpolated 3D activation surfaces.

Sector conventions. Sector 1 (basal anterior) starts at the RV insertion
reference, the same landmark as segment 0 of the 18-segment slices, and
sectors proceed counterclockwise like the segments: basal 1-6 and mid 7-12
take three consecutive segments each, apical 13-16 take 4.5 segments each
(fractional overlap weights), and the apex 17 is the mean of the apical slice.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .segmat import N_SEGMENTS, TosCurve
from .svg import SvgDoc, fmt

LEVELS = ("basal", "mid", "apical")


@dataclass
class Slice:
    level: str                    # "basal", "mid" or "apical"
    tos_ms: np.ndarray            # 18 values
    z_mm: float
    radius_mm: float = 25.0
    centroid_mm: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown slice level {self.level!r}")
        if isinstance(self.tos_ms, TosCurve):
            self.tos_ms = self.tos_ms.tos_ms
        self.tos_ms = np.asarray(self.tos_ms, dtype=np.float64)
        if self.tos_ms.shape != (N_SEGMENTS,):
            raise ValueError(f"slice needs {N_SEGMENTS} TOS values, got {self.tos_ms.shape}")


@dataclass
class SliceStack:
    slices: list[Slice]

    def __post_init__(self):
        if len(self.slices) < 2:
            raise ValueError("a slice stack needs at least 2 slices")
        z = np.array([s.z_mm for s in self.slices])
        if np.any(np.diff(z) <= 0):
            raise ValueError("slice z positions must strictly increase from base to apex")

    def level(self, name: str) -> list[Slice]:
        return [s for s in self.slices if s.level == name]


@dataclass
class AhaMap:
    values: np.ndarray            # 17 TOS values (ms), index 0 is sector 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (17,):
            raise ValueError(f"AHA map needs 17 values, got {self.values.shape}")

    def sector(self, sector_id: int) -> float:
        return float(self.values[sector_id - 1])


def overlap_weights(n_sectors: int) -> np.ndarray:
    """(n_sectors, 18) angular-overlap weights; every row sums to 1."""
    width = N_SEGMENTS / n_sectors
    w = np.zeros((n_sectors, N_SEGMENTS))
    for k in range(n_sectors):
        lo, hi = k * width, (k + 1) * width
        for s in range(N_SEGMENTS):
            w[k, s] = max(0.0, min(s + 1, hi) - max(s, lo))
    return w / width


def to_aha(stack: SliceStack) -> AhaMap:
    missing = [lv for lv in LEVELS if not stack.level(lv)]
    if missing:
        raise ValueError(f"slice stack lacks levels: {missing}")
    w6, w4 = overlap_weights(6), overlap_weights(4)
    return AhaMap(np.concatenate([_sector_means(stack, "basal", w6), _sector_means(stack, "mid", w6),
                                  _sector_means(stack, "apical", w4),
                                  _sector_means(stack, "apical", np.full((1, N_SEGMENTS), 1 / N_SEGMENTS))]))


def _sector_means(stack: SliceStack, level: str, w: np.ndarray) -> np.ndarray:
    """Weighted sector means of the level's slice average.

    Each value is clipped to the range of the entries it draws on, which only
    removes rounding overshoot: constants come back exactly and bounds hold exactly.
    """
    tos = np.stack([s.tos_ms for s in stack.level(level)])
    vals = w @ tos.mean(axis=0)
    used = w > 0
    lo = np.array([tos[:, u].min() for u in used])
    hi = np.array([tos[:, u].max() for u in used])
    return np.clip(vals, lo, hi)


def write_aha_csv(path: str | Path, m: AhaMap) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sector", "tos_ms"])
        for i, v in enumerate(m.values, start=1):
            wr.writerow([i, repr(float(v))])


# --- bulls-eye ------------------------------------------------------------------

# blue -> white -> dark red; the top of the range (latest activation) is dark red
COLOR_STOPS = ((0.0, (33, 102, 172)), (0.5, (247, 247, 247)), (1.0, (103, 0, 13)))


def colormap(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(COLOR_STOPS, COLOR_STOPS[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            rgb = [round(a + f * (b - a)) for a, b in zip(c0, c1)]
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*COLOR_STOPS[-1][1])


def _polar(cx, cy, r, deg):
    a = np.deg2rad(deg)
    return cx + r * np.cos(a), cy - r * np.sin(a)


def _annular_path(cx, cy, r0, r1, a0, a1) -> str:
    x0, y0 = _polar(cx, cy, r1, a0)
    x1, y1 = _polar(cx, cy, r1, a1)
    x2, y2 = _polar(cx, cy, r0, a1)
    x3, y3 = _polar(cx, cy, r0, a0)
    large = 1 if (a1 - a0) > 180 else 0
    # increasing display angle is counterclockwise on screen, i.e. sweep-flag 0
    return (f"M {fmt(x0)} {fmt(y0)} A {fmt(r1)} {fmt(r1)} 0 {large} 0 {fmt(x1)} {fmt(y1)} "
            f"L {fmt(x2)} {fmt(y2)} A {fmt(r0)} {fmt(r0)} 0 {large} 1 {fmt(x3)} {fmt(y3)} Z")


def _disk_path(cx, cy, r) -> str:
    return (f"M {fmt(cx - r)} {fmt(cy)} A {fmt(r)} {fmt(r)} 0 1 0 {fmt(cx + r)} {fmt(cy)} "
            f"A {fmt(r)} {fmt(r)} 0 1 0 {fmt(cx - r)} {fmt(cy)} Z")


def sector_geometry(size: float = 360.0):
    """(sector id, r_inner, r_outer, start deg, end deg) in display coordinates.

    Sector 1 is centered at the top of the plot.
    """
    R = size / 2 - 10
    rings = {"basal": (0.75 * R, R), "mid": (0.5 * R, 0.75 * R), "apical": (0.25 * R, 0.5 * R)}
    geo = []
    for k in range(6):
        geo.append((1 + k, *rings["basal"], 60.0 + 60 * k, 120.0 + 60 * k))
    for k in range(6):
        geo.append((7 + k, *rings["mid"], 60.0 + 60 * k, 120.0 + 60 * k))
    for k in range(4):
        geo.append((13 + k, *rings["apical"], 45.0 + 90 * k, 135.0 + 90 * k))
    geo.append((17, 0.0, 0.25 * R, 0.0, 360.0))
    return geo


def render_bullseye(m: AhaMap, vmin: float | None = None, vmax: float | None = None,
                    title: str = "TOS (ms)", size: float = 360.0) -> str:
    vals = m.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("AHA map has non-finite values")
    lo = float(vals.min()) if vmin is None else vmin
    hi = float(vals.max()) if vmax is None else vmax
    span = hi - lo
    doc = SvgDoc(size + 90, size + 30)
    cx = cy = size / 2
    doc.text(cx, size + 22, title, anchor="middle", size=13)
    for sid, r0, r1, a0, a1 in sector_geometry(size):
        v = vals[sid - 1]
        t = 0.5 if span <= 0 else (v - lo) / span
        d = _disk_path(cx, cy, r1) if sid == 17 else _annular_path(cx, cy, r0, r1, a0, a1)
        doc.path(d, fill=colormap(t), stroke="#000000", cls="sector", id=f"sector-{sid}")
        if sid == 17:
            lx, ly = cx, cy
        else:
            lx, ly = _polar(cx, cy, (r0 + r1) / 2, (a0 + a1) / 2)
        doc.text(lx, ly - 2, str(sid), anchor="middle", size=10)
        doc.text(lx, ly + 10, f"{v:.0f}", anchor="middle", size=9)
    # color bar
    bx, by, bw, bh, n = size + 25, 20.0, 16.0, size - 40, 32
    for i in range(n):
        t = 1 - (i + 0.5) / n
        doc.rect(bx, by + i * bh / n, bw, bh / n + 0.01, fill=colormap(t))
    doc.rect(bx, by, bw, bh, fill="none", stroke="#000000")
    doc.text(bx + bw + 4, by + 8, f"{hi:.0f}", size=10)
    doc.text(bx + bw + 4, by + bh, f"{lo:.0f}", size=10)
    return doc.render()


# --- 3D surface ---------------------------------------------------------------------

@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3) mm
    scalars: np.ndarray    # (V,) TOS ms
    faces: np.ndarray      # (F, 3) zero-based vertex indices


def angular_interp(tos: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Periodic linear interpolation between segment centers at (s + 0.5) * 20 degrees."""
    u = np.asarray(theta) / (2 * np.pi) * N_SEGMENTS - 0.5
    base = np.floor(u)
    w = u - base
    s0 = base.astype(int) % N_SEGMENTS
    s1 = (s0 + 1) % N_SEGMENTS
    return _lerp(tos[s0], tos[s1], w)


def _lerp(a, b, f):
    """``a + f (b - a)`` clipped to [min(a, b), max(a, b)]; exact when a == b."""
    return np.clip(a + f * (b - a), np.minimum(a, b), np.maximum(a, b))


def reconstruct_surface(stack: SliceStack, radial_resolution: int = 4,
                        angular_resolution: int = 72) -> Mesh:
    """Lofted LV surface through the slice rings with interpolated TOS per vertex.

    ``radial_resolution`` rings are placed per gap between consecutive slices
    (1 keeps only the slice rings); ``angular_resolution`` vertices per ring,
    starting at the RV insertion reference and running counterclockwise.
    """
    if radial_resolution < 1 or angular_resolution < 3:
        raise ValueError("need radial_resolution >= 1 and angular_resolution >= 3")
    for s in stack.slices:
        if s.radius_mm <= 0:
            raise ValueError(f"slice at z={s.z_mm} has non-positive radius {s.radius_mm}")
    theta = 2 * np.pi * np.arange(angular_resolution) / angular_resolution
    ring_vals = [angular_interp(s.tos_ms, theta) for s in stack.slices]
    rings = []  # (centroid x, centroid y, radius, z, values)
    sl = stack.slices
    for i in range(len(sl) - 1):
        a, b = sl[i], sl[i + 1]
        for k in range(radial_resolution):
            f = k / radial_resolution
            rings.append(((1 - f) * np.asarray(a.centroid_mm) + f * np.asarray(b.centroid_mm),
                          (1 - f) * a.radius_mm + f * b.radius_mm,
                          (1 - f) * a.z_mm + f * b.z_mm,
                          _lerp(ring_vals[i], ring_vals[i + 1], f)))
    rings.append((np.asarray(sl[-1].centroid_mm, dtype=float), sl[-1].radius_mm, sl[-1].z_mm,
                  ring_vals[-1]))
    verts, scal = [], []
    for c, r, z, vals in rings:
        verts.append(np.stack([c[0] + r * np.cos(theta), c[1] + r * np.sin(theta),
                               np.full_like(theta, z)], axis=1))
        scal.append(vals)
    n = angular_resolution
    faces = []
    for a in range(len(rings) - 1):
        for j in range(n):
            p, q = a * n + j, a * n + (j + 1) % n
            p2, q2 = p + n, q + n
            faces += [(p, q, q2), (p, q2, p2)]
    return Mesh(np.concatenate(verts), np.concatenate(scal), np.array(faces, dtype=np.int64))


def mesh_text(mesh: Mesh) -> str:
    lines = ["# lvtos activation mesh v1",
             "# v x_mm y_mm z_mm tos_ms ; f i j k (1-based)",
             f"# vertices {len(mesh.vertices)} faces {len(mesh.faces)}"]
    for (x, y, z), s in zip(mesh.vertices, mesh.scalars):
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f} {s:.6f}")
    for i, j, k in mesh.faces:
        lines.append(f"f {i + 1} {j + 1} {k + 1}")
    return "\n".join(lines) + "\n"


def write_mesh(path: str | Path, mesh: Mesh) -> None:
    Path(path).write_text(mesh_text(mesh))


def read_mesh(path: str | Path) -> Mesh:
    verts, scal, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            x, y, z, s = map(float, parts[1:5])
            verts.append((x, y, z))
            scal.append(s)
        elif parts[0] == "f":
            faces.append(tuple(int(p) - 1 for p in parts[1:4]))
    return Mesh(np.array(verts), np.array(scal), np.array(faces, dtype=np.int64))


def stack_from_curves(curves: Sequence[np.ndarray], levels=("basal", "mid", "mid", "apical"),
                      thickness_mm: float = 8.0, radii_mm=None, centroids_mm=None) -> SliceStack:
    """Slice stack at z = 0, 8, 16, ... mm from per-slice TOS (ms)."""
    radii_mm = radii_mm or [25.0] * len(curves)
    centroids_mm = centroids_mm or [(0.0, 0.0)] * len(curves)
    return SliceStack([Slice(lv, np.asarray(c), i * thickness_mm, r, tuple(cm))
                       for i, (lv, c, r, cm) in enumerate(zip(levels, curves, radii_mm, centroids_mm))])
