"""File-based pipeline stages shared by the CLI subcommands and ``run-all``.

Each stage reads its inputs from disk and writes its outputs to disk, so
``run-all`` is exactly the sequence of the individual subcommands. Wall-clock
timings are written to ``timings.csv`` only, never to the summary.

Layout under ``paths.output_dir``::

    strain/case_XXXX_gt.csv       strain matrix from the reference mask
    strain/case_XXXX_cascade.csv  strain matrix from the segmented mask
    tos/case_XXXX.csv             network TOS for the cascade matrix
    compare.csv, compare_cascade.csv, timings.csv, plots/*.svg
    bullseye.svg/.csv, bullseye_truth.svg/.csv, activation_mesh.txt
    summary.json
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import aha, metrics, segnet, tosnet
from .config import PipelineConfig
from .phantom import PhantomCase, PhantomSpec, load_case, make_dataset, save_dataset
from .pipeline import case_strain_matrix
from .segmat import (MyoMask, pad_time, read_strain_matrix_csv, read_tos_csv,
                     write_strain_matrix_csv, write_tos_csv)
from .svg import tos_curve_plot

log = logging.getLogger(__name__)

SLICE_LEVELS = ("basal", "mid", "mid", "apical")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage, self.cause = stage, cause


def base_spec(cfg: PipelineConfig) -> PhantomSpec:
    p = cfg.phantom
    return PhantomSpec(shape=tuple(p.shape), endo_radius=p.endo_radius, epi_radius=p.epi_radius,
                       frames=p.frames, eps_max=p.eps_max, noise_sigma=p.noise_sigma,
                       rv_angle=float(np.deg2rad(p.rv_angle_deg)), onset_frames=p.onset_frames,
                       blend_deg=p.blend_deg, displacement_noise=p.displacement_noise,
                       frame_interval_ms=p.frame_interval_ms, pixel_size_mm=p.pixel_size_mm)


def _dirs(cfg, data_dir=None, ck_dir=None, out_dir=None):
    return (Path(data_dir or cfg.paths.data_dir), Path(ck_dir or cfg.paths.checkpoint_dir),
            Path(out_dir or cfg.paths.output_dir))


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}; run phantom-gen first")
    return json.loads(path.read_text())


def split_entries(manifest: dict, which: str) -> list[dict]:
    return [c for c in manifest["cases"] if c["split"] == which]


def case_id(meta: dict) -> str:
    return f"case_{meta['index']:04d}"


# --- phantom-gen ----------------------------------------------------------------

def phantom_gen(cfg: PipelineConfig, data_dir=None) -> dict:
    d = Path(data_dir or cfg.paths.data_dir)
    cases, manifest = make_dataset(cfg.phantom.n_cases, base_spec(cfg), cfg.seed,
                                   cfg.phantom.train_fraction, cfg.phantom.radius_jitter)
    save_dataset(d, cases, manifest)
    log.info("wrote %d cases to %s", len(cases), d)
    return manifest


# --- train-seg ------------------------------------------------------------------

def _pick_frames(data_dir: Path, metas, n_images: int, rng: np.random.Generator):
    """Up to ``n_images`` (image, mask) pairs spread evenly over the given cases."""
    xs, ys = [], []
    if not metas or n_images <= 0:
        return xs, ys
    per = int(np.ceil(n_images / len(metas)))
    for meta in metas:
        case = load_case(data_dir / meta["file"])
        for t in rng.choice(case.spec.frames, size=min(per, case.spec.frames), replace=False):
            if len(xs) == n_images:
                return xs, ys
            xs.append(case.images[t])
            ys.append(case.masks[t])
    return xs, ys


def seg_configs(cfg: PipelineConfig):
    s = cfg.segnet
    ucfg = segnet.UNetConfig(input_size=cfg.phantom.shape[0], base_width=s.base_width,
                             levels=s.levels, dilation=s.dilation)
    hyper = segnet.SegTrainConfig(lr=s.lr, batch_size=s.batch_size, steps=s.steps, seed=cfg.seed,
                                  augment=s.augment, log_every=s.log_every)
    return ucfg, hyper


def seg_validation_set(cfg: PipelineConfig, data_dir) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 2])
    xs, ys = _pick_frames(Path(data_dir), split_entries(read_manifest(data_dir), "test"),
                          cfg.segnet.n_val_images, rng)
    return np.array(xs), np.array(ys, dtype=bool)


def train_seg(cfg: PipelineConfig, data_dir=None, out_path=None, log_path=None) -> dict:
    data_dir, ck_dir, _ = _dirs(cfg, data_dir)
    ck_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(out_path or ck_dir / "segnet.tosm")
    log_path = Path(log_path or ck_dir / "segnet_log.csv")
    rng = np.random.default_rng([cfg.seed, 1])
    xs, ys = _pick_frames(data_dir, split_entries(read_manifest(data_dir), "train"),
                          cfg.segnet.n_train_images, rng)
    if not xs:
        raise ValueError("no training images: the train split is empty")
    x_va, y_va = seg_validation_set(cfg, data_dir)
    ucfg, hyper = seg_configs(cfg)
    ck, rows = segnet.train_segnet(np.array(xs), np.array(ys), ucfg, hyper,
                                   x_va if len(x_va) else None, y_va if len(y_va) else None,
                                   log_path=log_path)
    ck.save(out_path)
    out = {"seg_initial_loss": rows[0]["loss"], "seg_final_loss": rows[-1]["loss"]}
    if len(x_va):
        out.update(evaluate_seg(ck, x_va, y_va))
    return out


def evaluate_seg(ck, images, labels) -> dict:
    """Mean dice / Hausdorff / MSD (pixels) of plain and rotation-TTA predictions."""
    out = {}
    for name, tta in (("plain", False), ("tta", True)):
        pred = segnet.predict(images, ck, tta=tta)
        rows = []
        for p, t in zip(pred, labels):
            if p.any():
                rows.append(metrics.seg_metrics(p, t))
            else:  # surface distances are undefined for an empty prediction
                rows.append({"dice": metrics.dice(p, t), "hausdorff_px": np.nan, "msd_px": np.nan})
        for k in ("dice", "hausdorff_px", "msd_px"):
            out[f"seg_{name}_{k}"] = float(np.mean([r[k] for r in rows]))
    return out


# --- train-tos ------------------------------------------------------------------

def tos_configs(cfg: PipelineConfig):
    t = cfg.tosnet
    net = tosnet.TosNetConfig(t_max=cfg.phantom.frames, conv_channels=tuple(t.conv_channels),
                              dense_units=tuple(t.dense_units), t0=cfg.t0, alpha=cfg.alpha,
                              input_scale=t.input_scale, dense_batchnorm=t.dense_batchnorm)
    hyper = tosnet.TosTrainConfig(lr=t.lr, batch_size=t.batch_size, steps=t.steps, seed=cfg.seed,
                                  shifts=t.shifts)
    return net, hyper


def train_tos(cfg: PipelineConfig, data_dir=None, out_path=None) -> dict:
    """Train on strain matrices of the training split, computed from the reference masks."""
    data_dir, ck_dir, _ = _dirs(cfg, data_dir)
    ck_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(out_path or ck_dir / "tosnet.tosm")
    metas = split_entries(read_manifest(data_dir), "train")
    if not metas:
        raise ValueError("no training cases in manifest")
    net_cfg, hyper = tos_configs(cfg)
    sms, curves = [], []
    for meta in metas:
        case = load_case(data_dir / meta["file"])
        sms.append(pad_time(case_strain_matrix(case), net_cfg.t_max))
        curves.append(case.tos)
    ck, rows = tosnet.train_tosnet(sms, curves, net_cfg, hyper)
    ck.save(out_path)
    tail = rows[-min(20, len(rows)):]
    out = {"tos_initial_mse": rows[0]["loss"], "tos_final_mse": float(np.mean([r["loss"] for r in tail]))}
    out.update(output_floor_check(ck, seed=cfg.seed))
    return out


def output_floor_check(ck: tosnet.TosCheckpoint, n: int = 1000, seed: int = 0) -> dict:
    """Push ``n`` random strain matrices through the network and record the smallest output."""
    rng = np.random.default_rng([seed, 5])
    x = rng.normal(0.0, 0.2, size=(n, 18, ck.config.t_max))
    out = tosnet.predict_tos_batch(list(x), ck)
    return {"tos_fuzz_min_output": float(out.min()),
            "tos_output_floor_ok": bool(out.min() >= ck.config.t0)}


# --- predict (segmentation cascade + TOS) -----------------------------------------

def largest_component(mask: np.ndarray) -> np.ndarray:
    lab, n = ndimage.label(mask)
    if n <= 1:
        return np.asarray(mask, dtype=bool)
    sizes = ndimage.sum(mask, lab, index=np.arange(1, n + 1))
    return lab == (1 + int(np.argmax(sizes)))


def segment_case(case: PhantomCase, seg: segnet.SegCheckpoint, tta: bool = True) -> np.ndarray:
    return largest_component(segnet.predict(case.images[0], seg, tta=tta))


def build_case_matrices(case: PhantomCase, seg: segnet.SegCheckpoint | None):
    """(reference-mask matrix, cascade matrix or None, reason the cascade failed or None)."""
    gt = case_strain_matrix(case)
    if seg is None:
        return gt, None, "no segmentation model"
    try:
        return gt, case_strain_matrix(case, MyoMask(segment_case(case, seg), case.spec.rv_angle)), None
    except ValueError as exc:  # e.g. a segment without samples in the predicted mask
        return gt, None, str(exc)


def predict(cfg: PipelineConfig, data_dir=None, seg_ckpt=None, tos_ckpt=None, out_dir=None) -> dict:
    """Strain matrices and network TOS for every test case."""
    data_dir, ck_dir, out_dir = _dirs(cfg, data_dir, None, out_dir)
    seg = segnet.SegCheckpoint.load(seg_ckpt or ck_dir / "segnet.tosm")
    tck = tosnet.TosCheckpoint.load(tos_ckpt or ck_dir / "tosnet.tosm")
    (out_dir / "strain").mkdir(parents=True, exist_ok=True)
    (out_dir / "tos").mkdir(parents=True, exist_ok=True)
    failures = []
    for meta in split_entries(read_manifest(data_dir), "test"):
        cid = case_id(meta)
        case = load_case(data_dir / meta["file"])
        gt, casc, err = build_case_matrices(case, seg)
        write_strain_matrix_csv(out_dir / "strain" / f"{cid}_gt.csv", gt)
        if casc is not None:
            write_strain_matrix_csv(out_dir / "strain" / f"{cid}_cascade.csv", casc)
        else:
            log.warning("%s: cascade mask unusable (%s); using the reference mask", cid, err)
            failures.append(cid)
        use = casc if casc is not None else gt
        write_tos_csv(out_dir / "tos" / f"{cid}.csv", tosnet.predict_tos(pad_time(use, tck.config.t_max), tck))
    return {"cascade_failures": len(failures)}


# --- compare --------------------------------------------------------------------

def compare(cfg: PipelineConfig, data_dir=None, tos_ckpt=None, out_dir=None) -> dict:
    """Network vs. threshold baseline RMSE against ground truth, per mask source."""
    data_dir, ck_dir, out_dir = _dirs(cfg, data_dir, None, out_dir)
    tck = tosnet.TosCheckpoint.load(tos_ckpt or ck_dir / "tosnet.tosm")
    dt = cfg.phantom.frame_interval_ms
    gt_cases, casc_cases = [], []
    for meta in split_entries(read_manifest(data_dir), "test"):
        cid = case_id(meta)
        truth = load_case(data_dir / meta["file"]).tos
        gt_cases.append((cid, read_strain_matrix_csv(out_dir / "strain" / f"{cid}_gt.csv", dt), truth))
        p = out_dir / "strain" / f"{cid}_cascade.csv"
        if p.exists():
            casc_cases.append((cid, read_strain_matrix_csv(p, dt), truth))
    if not gt_cases:
        raise ValueError("no test cases to compare")
    gt = tosnet.compare_methods(gt_cases, tck, cfg.baseline_threshold)
    casc = tosnet.compare_methods(casc_cases, tck, cfg.baseline_threshold)
    tosnet.write_compare_csv(out_dir / "compare.csv", gt)
    tosnet.write_compare_csv(out_dir / "compare_cascade.csv", casc)
    tosnet.write_timings_csv(out_dir / "timings.csv", gt)
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for cid, truth, base, net in gt["curves"]:
        (plots / f"{cid}.svg").write_text(tos_curve_plot(truth, base, net, title=cid))
    summary = {f"gt_mask_{k}": v for k, v in gt["summary"].items()}
    summary.update({f"cascade_{k}": v for k, v in casc["summary"].items()})
    return summary


# --- bullseye / recon3d -----------------------------------------------------------

def slice_geometry(case: PhantomCase) -> tuple[float, tuple[float, float]]:
    """Mean wall radius and centroid of the reference mask, in mm (y up)."""
    rows, cols = np.nonzero(case.mask)
    cr, cc = rows.mean(), cols.mean()
    px = case.spec.pixel_size_mm
    return float(np.mean(np.hypot(rows - cr, cols - cc)) * px), (float(cc * px), float(-cr * px))


def build_stack(tos_curves, cases, thickness_mm: float, levels=SLICE_LEVELS) -> aha.SliceStack:
    if len(tos_curves) != len(levels) or len(cases) != len(levels):
        raise ValueError(f"need {len(levels)} slices ({', '.join(levels)}), got {len(tos_curves)}")
    slices = []
    for i, (lv, tos, case) in enumerate(zip(levels, tos_curves, cases)):
        r, c = slice_geometry(case)
        slices.append(aha.Slice(lv, tos, i * thickness_mm, r, c))
    return aha.SliceStack(slices)


def volume_metas(data_dir) -> list[dict]:
    metas = split_entries(read_manifest(data_dir), "test")[:len(SLICE_LEVELS)]
    if len(metas) < len(SLICE_LEVELS):
        raise ValueError(f"need {len(SLICE_LEVELS)} test cases for a slice stack, have {len(metas)}")
    return metas


def stack_from_outputs(cfg: PipelineConfig, data_dir=None, out_dir=None, truth: bool = False):
    """The first four test cases stacked as basal, mid, mid, apical slices of one subject."""
    data_dir, _, out_dir = _dirs(cfg, data_dir, None, out_dir)
    dt = cfg.phantom.frame_interval_ms
    cases, curves = [], []
    for meta in volume_metas(data_dir):
        case = load_case(data_dir / meta["file"])
        cases.append(case)
        curves.append(case.tos if truth else read_tos_csv(out_dir / "tos" / f"{case_id(meta)}.csv", dt))
    return build_stack(curves, cases, cfg.volume.slice_thickness_mm)


def write_bullseye(stack: aha.SliceStack, out_stem, title: str = "TOS (ms)") -> aha.AhaMap:
    out_stem = Path(out_stem)
    out_stem.parent.mkdir(parents=True, exist_ok=True)
    m = aha.to_aha(stack)
    out_stem.with_suffix(".svg").write_text(aha.render_bullseye(m, title=title))
    aha.write_aha_csv(out_stem.with_suffix(".csv"), m)
    return m


def bullseye(cfg: PipelineConfig, data_dir=None, out_dir=None) -> dict:
    _, _, out = _dirs(cfg, data_dir, None, out_dir)
    m = write_bullseye(stack_from_outputs(cfg, data_dir, out_dir), out / "bullseye", "network TOS (ms)")
    t = write_bullseye(stack_from_outputs(cfg, data_dir, out_dir, truth=True), out / "bullseye_truth",
                       "ground-truth TOS (ms)")
    return {"aha_sector_tos_ms": [float(v) for v in m.values],
            "aha_sector_rmse_ms": float(np.sqrt(np.mean((m.values - t.values) ** 2)))}


def recon3d(cfg: PipelineConfig, data_dir=None, out_dir=None) -> dict:
    _, _, out = _dirs(cfg, data_dir, None, out_dir)
    mesh = aha.reconstruct_surface(stack_from_outputs(cfg, data_dir, out_dir),
                                   cfg.volume.radial_resolution, cfg.volume.angular_resolution)
    out.mkdir(parents=True, exist_ok=True)
    aha.write_mesh(out / "activation_mesh.txt", mesh)
    return {"mesh_vertices": int(len(mesh.vertices)), "mesh_faces": int(len(mesh.faces))}


# --- run-all --------------------------------------------------------------------

SUMMARY_KEYS = (
    "n_cases", "n_test_cases",
    "seg_initial_loss", "seg_final_loss", "seg_plain_dice", "seg_plain_hausdorff_px",
    "seg_plain_msd_px", "seg_tta_dice", "seg_tta_hausdorff_px", "seg_tta_msd_px",
    "tos_initial_mse", "tos_final_mse", "tos_fuzz_min_output", "tos_output_floor_ok",
    "cascade_failures",
    "gt_mask_tosnet_rmse_frames", "gt_mask_tosnet_rmse_ms", "gt_mask_baseline_rmse_frames",
    "gt_mask_baseline_rmse_ms", "gt_mask_baseline_max_err_frames", "gt_mask_n_cases",
    "cascade_tosnet_rmse_frames", "cascade_tosnet_rmse_ms", "cascade_baseline_rmse_frames",
    "cascade_baseline_rmse_ms", "cascade_baseline_max_err_frames", "cascade_n_cases",
    "aha_sector_tos_ms", "aha_sector_rmse_ms", "mesh_vertices", "mesh_faces", "checks_failed",
)


def check_summary(cfg: PipelineConfig, s: dict) -> list[str]:
    """Names of the run-all checks that failed (missing or NaN metrics fail)."""
    c = cfg.checks
    tests = {
        "seg_plain_dice": lambda: s["seg_plain_dice"] >= c.min_dice,
        "seg_tta_dice": lambda: s["seg_tta_dice"] >= s["seg_plain_dice"] - c.max_tta_dice_drop,
        "gt_mask_tosnet_rmse_frames": lambda: s["gt_mask_tosnet_rmse_frames"] <= c.max_tos_rmse_frames,
        "gt_mask_baseline_max_err_frames":
            lambda: s["gt_mask_baseline_max_err_frames"] <= c.max_baseline_err_frames,
        "tos_output_floor_ok": lambda: s["tos_output_floor_ok"] is True,
    }
    failed = []
    for name, ok in tests.items():
        try:
            if not ok():
                failed.append(name)
        except (KeyError, TypeError):
            failed.append(name)
    return failed


def run_all(cfg: PipelineConfig) -> tuple[dict, list[str]]:
    """phantom-gen, train-seg, train-tos, predict, compare, bullseye, recon3d; then summary.json."""
    summary: dict = {}

    def stage(name, fn):
        log.info("stage %s", name)
        try:
            return fn(cfg)
        except Exception as exc:  # re-raised with the stage name attached
            raise StageError(name, exc) from exc

    manifest = stage("phantom-gen", phantom_gen)
    summary["n_cases"] = manifest["n_cases"]
    summary["n_test_cases"] = len(split_entries(manifest, "test"))
    for name, fn in (("train-seg", train_seg), ("train-tos", train_tos), ("predict", predict),
                     ("compare", compare), ("bullseye", bullseye), ("recon3d", recon3d)):
        summary.update(stage(name, fn))
    failed = check_summary(cfg, summary)
    summary["checks_failed"] = failed
    out = Path(cfg.paths.output_dir)
    write_summary(out / "summary.json", summary)
    (out / "config.json").write_text(cfg.dumps())
    return summary, failed


def write_summary(path, summary: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj
