"""Angular segmentation of the myocardium, strain matrices and onset-time curves.

Angles are measured counterclockwise in the displayed image (row axis points
down) about the mask centroid. Segment 0 starts at the RV insertion angle.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_SEGMENTS = 18
SEGMENT_WIDTH = 2 * np.pi / N_SEGMENTS
CENTER_HALF_WIDTH = np.pi / 36


def pixel_angles(shape, center) -> tuple[np.ndarray, np.ndarray]:
    """Angle (radians, CCW, in [-pi, pi]) and radius of every pixel about ``center``."""
    h, w = shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dr, dc = rr - center[0], cc - center[1]
    return np.arctan2(-dr, dc), np.hypot(dr, dc)


def wrap_angle(a):
    """Wrap to [0, 2*pi)."""
    a = np.mod(a, 2 * np.pi)
    return np.where(a >= 2 * np.pi, 0.0, a)


@dataclass
class MyoMask:
    mask: np.ndarray
    rv_angle: float
    centroid: tuple[float, float] = field(init=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2 or not self.mask.any():
            raise ValueError("myocardial mask must be a nonempty 2D array")
        rows, cols = np.nonzero(self.mask)
        self.centroid = (float(rows.mean()), float(cols.mean()))

    def relative_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel angle past the insertion point in [0, 2*pi), and radius."""
        theta, rho = pixel_angles(self.mask.shape, self.centroid)
        return wrap_angle(theta - self.rv_angle), rho


def _segment_of(phi):
    s = np.floor(N_SEGMENTS * phi / (2 * np.pi)).astype(int)
    return np.clip(s, 0, N_SEGMENTS - 1)


def segment_index(pixel: tuple[int, int], mask: MyoMask) -> int:
    r, c = pixel
    if not (0 <= r < mask.mask.shape[0] and 0 <= c < mask.mask.shape[1]) or not mask.mask[r, c]:
        raise ValueError(f"pixel {pixel} is not in the myocardial mask")
    theta = np.arctan2(-(r - mask.centroid[0]), c - mask.centroid[1])
    return int(_segment_of(wrap_angle(theta - mask.rv_angle)))


def segment_map(mask: MyoMask) -> np.ndarray:
    """Segment id per pixel, -1 outside the mask."""
    phi, _ = mask.relative_angles()
    seg = _segment_of(phi)
    return np.where(mask.mask, seg, -1)


def center_samples(mask: MyoMask) -> list[np.ndarray]:
    """Flat pixel indices of each segment's representative sample.

    Pixels within +-pi/36 of the segment's central angle whose radius lies in
    the middle half (25%-75%) of the local wall, measured from the mask pixels
    in that angular window.
    """
    phi, rho = mask.relative_angles()
    m = mask.mask.ravel()
    phi, rho = phi.ravel(), rho.ravel()
    out = []
    for s in range(N_SEGMENTS):
        mid = (s + 0.5) * SEGMENT_WIDTH
        dist = np.abs(np.angle(np.exp(1j * (phi - mid))))
        win = m & (dist <= CENTER_HALF_WIDTH + 1e-12)
        if not win.any():
            raise ValueError(f"segment {s} has no myocardial pixels near its center")
        r_in, r_out = rho[win].min(), rho[win].max()
        lo = r_in + 0.25 * (r_out - r_in)
        hi = r_in + 0.75 * (r_out - r_in)
        sel = win & (rho >= lo - 1e-9) & (rho <= hi + 1e-9)
        if not sel.any():
            raise ValueError(f"segment {s} has no pixels in the mid-wall band")
        out.append(np.flatnonzero(sel))
    return out


@dataclass
class StrainMatrix:
    values: np.ndarray
    frame_interval_ms: float = 17.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != N_SEGMENTS:
            raise ValueError(f"strain matrix must be ({N_SEGMENTS}, T), got {self.values.shape}")
        if np.isnan(self.values).any():
            raise ValueError("strain matrix contains NaN")

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class TosCurve:
    tos_frames: np.ndarray
    frame_interval_ms: float = 17.0
    no_onset: np.ndarray | None = None

    def __post_init__(self):
        self.tos_frames = np.asarray(self.tos_frames, dtype=np.float64)
        if self.tos_frames.shape != (N_SEGMENTS,):
            raise ValueError(f"TOS curve needs {N_SEGMENTS} values, got {self.tos_frames.shape}")
        if self.no_onset is None:
            self.no_onset = np.zeros(N_SEGMENTS, dtype=bool)

    @property
    def tos_ms(self) -> np.ndarray:
        return frames_to_ms(self.tos_frames, self.frame_interval_ms)


def build_strain_matrix(ecc: np.ndarray, mask: MyoMask, frame_interval_ms: float = 17.0,
                        samples: list[np.ndarray] | None = None) -> StrainMatrix:
    ecc = np.asarray(ecc, dtype=np.float64)
    if ecc.ndim == 2:
        ecc = ecc[None]
    if ecc.shape[1:] != mask.mask.shape:
        raise ValueError(f"Ecc grid {ecc.shape[1:]} does not match mask {mask.mask.shape}")
    samples = center_samples(mask) if samples is None else samples
    flat = ecc.reshape(ecc.shape[0], -1)
    values = np.stack([flat[:, idx].mean(axis=1) for idx in samples])
    return StrainMatrix(values, frame_interval_ms)


def pad_time(sm: StrainMatrix, t_max: int) -> StrainMatrix:
    t = sm.frames
    if t > t_max:
        raise ValueError(f"strain matrix has {t} frames, more than T_max={t_max}")
    values = np.zeros((N_SEGMENTS, t_max))
    values[:, :t] = sm.values
    return StrainMatrix(values, sm.frame_interval_ms)


def truncate_time(sm: StrainMatrix, t: int) -> StrainMatrix:
    return StrainMatrix(sm.values[:, :t].copy(), sm.frame_interval_ms)


def frames_to_ms(tos_frames, interval_ms: float):
    if interval_ms <= 0:
        raise ValueError("frame interval must be positive")
    return np.asarray(tos_frames, dtype=np.float64) * interval_ms


def baseline_tos(sm: StrainMatrix, threshold: float = -0.02) -> TosCurve:
    """Onset as the first sustained crossing below ``threshold``.

    A crossing at frame t counts when frame t+1 (if any) is also at or below
    the threshold. The crossing time is linearly interpolated between t-1 and
    t. Rows that never cross get T-1 and are flagged.
    """
    if threshold >= 0:
        raise ValueError("threshold must be negative (shortening)")
    v = sm.values
    n_t = v.shape[1]
    tos = np.full(N_SEGMENTS, float(n_t - 1))
    flag = np.ones(N_SEGMENTS, dtype=bool)
    below = v <= threshold
    sustained = below.copy()
    sustained[:, :-1] &= below[:, 1:]
    for s in range(N_SEGMENTS):
        hits = np.flatnonzero(sustained[s])
        if hits.size == 0:
            continue
        t = int(hits[0])
        flag[s] = False
        if t == 0:
            tos[s] = 0.0
            continue
        v0, v1 = v[s, t - 1], v[s, t]
        tos[s] = t - 1 + (v0 - threshold) / (v0 - v1)
    return TosCurve(tos, sm.frame_interval_ms, flag)


# --- CSV ------------------------------------------------------------------

def write_strain_matrix_csv(path: str | Path, sm: StrainMatrix) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["segment"] + [f"frame{t}" for t in range(sm.frames)])
        for s in range(N_SEGMENTS):
            wr.writerow([s] + [repr(float(x)) for x in sm.values[s]])


def read_strain_matrix_csv(path: str | Path, frame_interval_ms: float = 17.0) -> StrainMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "segment":
        raise ValueError(f"{path}: expected header 'segment,frame0,...'")
    body = sorted(body, key=lambda r: int(r[0]))
    return StrainMatrix(np.array([[float(x) for x in r[1:]] for r in body]), frame_interval_ms)


def write_tos_csv(path: str | Path, tos: TosCurve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["segment", "tos_frames", "tos_ms", "flag"])
        for s in range(N_SEGMENTS):
            wr.writerow([s, repr(float(tos.tos_frames[s])), repr(float(tos.tos_ms[s])),
                         "no_onset" if tos.no_onset[s] else ""])


def read_tos_csv(path: str | Path, frame_interval_ms: float = 17.0) -> TosCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["segment"]))
    return TosCurve(np.array([float(r["tos_frames"]) for r in rows]), frame_interval_ms,
                    np.array([r.get("flag") == "no_onset" for r in rows]))
