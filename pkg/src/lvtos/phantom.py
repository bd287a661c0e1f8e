"""Synthetic left-ventricle short-axis cases with known activation delays.

Motion model: each pixel moves radially inward toward the LV center by
``eps(theta, t) * r``. Every one of the 18 segments has its own onset delay
``d_s``; its contraction ``eps_s(t)`` ramps from 0 at ``d_s`` to ``eps_max``
over ``onset_frames`` frames with a smoothstep. Adjacent segments are blended
over a narrow angular band with a C1 smoothstep so finite differences stay
well behaved. Away from those bands the field is exactly ``-eps_s(t) (x - c)``,
whose circumferential Green-Lagrange strain is ``((1 - eps)^2 - 1) / 2``.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import container
from .segmat import N_SEGMENTS, MyoMask, TosCurve, pixel_angles, wrap_angle
from .strain import DisplacementField


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int] = (64, 64)
    center: tuple[float, float] | None = None
    endo_radius: float = 11.0
    epi_radius: float = 19.0
    frames: int = 25
    delays: tuple[float, ...] = (0.0,) * N_SEGMENTS
    eps_max: float = 0.15
    noise_sigma: float = 0.05
    rv_angle: float = float(np.deg2rad(110.0))
    seed: int = 0
    onset_frames: float = 3.0
    blend_deg: float = 10.0
    displacement_noise: float = 0.0
    frame_interval_ms: float = 17.0
    pixel_size_mm: float = 2.65

    @property
    def lv_center(self) -> tuple[float, float]:
        if self.center is not None:
            return tuple(self.center)
        return ((self.shape[0] - 1) / 2.0, (self.shape[1] - 1) / 2.0)

    def validate(self) -> None:
        errs = []
        h, w = self.shape
        if h < 3 or w < 3:
            errs.append(f"shape: grid {self.shape} too small")
        if not 0 < self.endo_radius < self.epi_radius < min(h, w) / 2:
            errs.append(f"endo_radius/epi_radius: need 0 < endo < epi < {min(h, w) / 2}, "
                        f"got {self.endo_radius}, {self.epi_radius}")
        if self.frames < 2:
            errs.append("frames: need at least 2")
        if len(self.delays) != N_SEGMENTS:
            errs.append(f"delays: need {N_SEGMENTS} values, got {len(self.delays)}")
        elif any(not 0 <= d < self.frames for d in self.delays):
            errs.append(f"delays: every delay must lie in [0, {self.frames})")
        if not 0 <= self.eps_max < 0.5:
            errs.append("eps_max: must lie in [0, 0.5)")
        if self.noise_sigma < 0 or self.displacement_noise < 0:
            errs.append("noise_sigma/displacement_noise: must be >= 0")
        if self.onset_frames <= 0:
            errs.append("onset_frames: must be positive")
        if not 0 <= self.blend_deg < 360.0 / N_SEGMENTS:
            errs.append(f"blend_deg: must lie in [0, {360.0 / N_SEGMENTS})")
        if self.center is not None:
            cr, cc = self.center
            if not (self.epi_radius <= cr <= h - 1 - self.epi_radius
                    and self.epi_radius <= cc <= w - 1 - self.epi_radius):
                errs.append(f"center: {self.center} puts the epicardium off the grid")
        if errs:
            raise ValueError("invalid PhantomSpec: " + "; ".join(errs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["delays"] = [float(x) for x in self.delays]
        if self.center is not None:
            d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown PhantomSpec keys: {sorted(unknown)}")
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        if "delays" in d:
            d["delays"] = tuple(float(x) for x in d["delays"])
        return cls(**d)


@dataclass
class PhantomCase:
    images: np.ndarray          # (T, H, W) magnitude
    masks: np.ndarray           # (T, H, W) bool, myocardium at each frame
    field: DisplacementField    # reference-frame (Lagrangian) displacement
    tos: TosCurve
    spec: PhantomSpec
    contraction: np.ndarray = field(repr=False)  # (T, H, W) eps(theta, t)

    @property
    def mask(self) -> np.ndarray:
        return self.masks[0]

    @property
    def myo(self) -> MyoMask:
        return MyoMask(self.mask, self.spec.rv_angle)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def segment_weights(phi: np.ndarray, blend_deg: float) -> np.ndarray:
    """(18, ...) partition-of-unity weights over segments for angles ``phi`` past the insertion."""
    u = phi / (2 * np.pi) * N_SEGMENTS
    s = np.clip(np.floor(u).astype(int), 0, N_SEGMENTS - 1)
    f = u - s
    b = blend_deg / (360.0 / N_SEGMENTS) / 2.0
    wts = np.zeros((N_SEGMENTS,) + phi.shape)
    own = np.ones_like(phi)
    if b > 0:
        lo = f < b
        hi = f > 1 - b
        a_prev = np.where(lo, 1.0 - smoothstep((f + b) / (2 * b)), 0.0)
        a_next = np.where(hi, smoothstep((f - (1 - b)) / (2 * b)), 0.0)
        own = 1.0 - a_prev - a_next
        np.add.at(wts, ((s - 1) % N_SEGMENTS, *np.indices(phi.shape)), a_prev)
        np.add.at(wts, ((s + 1) % N_SEGMENTS, *np.indices(phi.shape)), a_next)
    np.add.at(wts, (s, *np.indices(phi.shape)), own)
    return wts


def contraction_profile(spec: PhantomSpec) -> np.ndarray:
    """(18, T) per-segment contraction fraction."""
    t = np.arange(spec.frames, dtype=np.float64)
    d = np.asarray(spec.delays, dtype=np.float64)[:, None]
    return spec.eps_max * smoothstep((t[None, :] - d) / spec.onset_frames)


def _annulus(r, endo, epi, edge=0.6):
    def sig(z):
        return 0.5 * (1.0 + np.tanh(z / (2 * edge)))
    myo = sig(r - endo) * sig(epi - r)
    blood = 0.3 * sig(endo - r)
    return myo + blood


def generate(spec: PhantomSpec) -> PhantomCase:
    spec.validate()
    h, w = spec.shape
    c = spec.lv_center
    theta, rho = pixel_angles(spec.shape, c)
    phi = wrap_angle(theta - spec.rv_angle)
    wts = segment_weights(phi, spec.blend_deg)                  # (18, H, W)
    prof = contraction_profile(spec)                              # (18, T)
    eps = np.einsum("st,shw->thw", prof, wts)                     # (T, H, W)

    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    rel = np.stack([rr - c[0], cc - c[1]], axis=-1)               # (H, W, 2)
    u = -eps[..., None] * rel[None]
    rng = np.random.default_rng(spec.seed)
    if spec.displacement_noise > 0:
        u = u + spec.displacement_noise * rng.normal(size=u.shape)

    # radial motion keeps the angle; a pixel at radius rho at frame t came from rho / (1 - eps)
    # (angle-wise eps from the reference position equals eps at the same angle)
    r_ref = rho[None] / (1.0 - eps)
    masks = (r_ref >= spec.endo_radius) & (r_ref <= spec.epi_radius)
    images = _annulus(r_ref, spec.endo_radius, spec.epi_radius)
    if spec.noise_sigma > 0:
        images = images + spec.noise_sigma * rng.normal(size=images.shape)

    tos = TosCurve(np.asarray(spec.delays, dtype=np.float64), spec.frame_interval_ms)
    fld = DisplacementField(u, spec.pixel_size_mm, spec.frame_interval_ms)
    return PhantomCase(images, masks, fld, tos, spec, eps)


# --- datasets ----------------------------------------------------------------

def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def randomized_spec(base: PhantomSpec, seed: int, index: int, radius_jitter: float = 0.1,
                    max_delay: float | None = None) -> PhantomSpec:
    """Per-case spec: delays uniform in [0, T/2], radii jittered by +-``radius_jitter``."""
    cs = case_seed(seed, index)
    rng = np.random.default_rng(cs)
    max_delay = base.frames / 2 if max_delay is None else max_delay
    delays = tuple(float(x) for x in rng.uniform(0.0, max_delay, size=N_SEGMENTS))
    endo = base.endo_radius * rng.uniform(1 - radius_jitter, 1 + radius_jitter)
    epi = base.epi_radius * rng.uniform(1 - radius_jitter, 1 + radius_jitter)
    if epi <= endo + 2:
        epi = endo + 2
    return replace(base, delays=delays, endo_radius=float(endo), epi_radius=float(epi), seed=cs)


def make_specs(n_cases: int, base: PhantomSpec, seed: int, train_fraction: float = 0.8,
               radius_jitter: float = 0.1) -> tuple[list[PhantomSpec], dict]:
    if n_cases < 1:
        raise ValueError("need at least one case")
    specs = [randomized_spec(base, seed, i, radius_jitter) for i in range(n_cases)]
    n_train = int(round(train_fraction * n_cases))
    manifest = {
        "seed": seed,
        "n_cases": n_cases,
        "train_fraction": train_fraction,
        "radius_jitter": radius_jitter,
        "base_spec": base.to_dict(),
        "cases": [
            {"index": i, "seed": s.seed, "split": "train" if i < n_train else "test",
             "file": f"case_{i:04d}.tosm", "delays": list(s.delays),
             "endo_radius": s.endo_radius, "epi_radius": s.epi_radius}
            for i, s in enumerate(specs)
        ],
    }
    return specs, manifest


def make_dataset(n_cases: int, base: PhantomSpec | None = None, seed: int = 0,
                 train_fraction: float = 0.8, radius_jitter: float = 0.1,
                 workers: int = 1) -> tuple[list[PhantomCase], dict]:
    """Generate ``n_cases`` randomized cases and their manifest.

    Per-case RNG streams depend only on ``(seed, index)``, so any ``workers``
    count gives identical cases.
    """
    specs, manifest = make_specs(n_cases, base or PhantomSpec(), seed, train_fraction,
                                 radius_jitter)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            cases = list(ex.map(generate, specs))
    else:
        cases = [generate(s) for s in specs]
    return cases, manifest


def split(items, manifest: dict) -> tuple[list, list]:
    tr = [x for x, c in zip(items, manifest["cases"]) if c["split"] == "train"]
    te = [x for x, c in zip(items, manifest["cases"]) if c["split"] == "test"]
    return tr, te


def _json_bytes(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_case(path: str | Path, case: PhantomCase) -> None:
    container.save(path, {
        "spec_json": _json_bytes(case.spec.to_dict()),
        "images": case.images,
        "masks": case.masks,
        "displacement": case.field.u,
        "tos_frames": case.tos.tos_frames,
    })


def load_case(path: str | Path) -> PhantomCase:
    a = container.load(path)
    spec = PhantomSpec.from_dict(json.loads(a["spec_json"].tobytes().decode("utf-8")))
    fld = DisplacementField(a["displacement"], spec.pixel_size_mm, spec.frame_interval_ms)
    prof = contraction_profile(spec)
    theta, _ = pixel_angles(spec.shape, spec.lv_center)
    wts = segment_weights(wrap_angle(theta - spec.rv_angle), spec.blend_deg)
    eps = np.einsum("st,shw->thw", prof, wts)
    return PhantomCase(a["images"], a["masks"].astype(bool), fld,
                       TosCurve(a["tos_frames"], spec.frame_interval_ms), spec, eps)


def save_dataset(directory: str | Path, cases: list[PhantomCase], manifest: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for case, meta in zip(cases, manifest["cases"]):
        save_case(d / meta["file"], case)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: str | Path) -> tuple[list[PhantomCase], dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    return [load_case(d / c["file"]) for c in manifest["cases"]], manifest
