"""Command line entry point: ``lvtos <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 a run-all
check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import aha, container, segnet, tosnet, workflow
from .config import load_config
from .phantom import load_case
from .pipeline import strain_matrix
from .segmat import (MyoMask, baseline_tos, build_strain_matrix, pad_time, read_strain_matrix_csv,
                     read_tos_csv, write_strain_matrix_csv, write_tos_csv)
from .strain import DEFORMATION_GRADIENT, LITERAL, DisplacementField, ecc_from_field, write_ecc_csv

log = logging.getLogger("lvtos")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKS = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _print_json(d: dict) -> None:
    print(json.dumps(workflow._json_safe(d), indent=2, sort_keys=True))


# --- handlers -------------------------------------------------------------------

def cmd_phantom_gen(args, cfg):
    manifest = workflow.phantom_gen(cfg, args.data_dir)
    n_train = len(workflow.split_entries(manifest, "train"))
    print(f"wrote {manifest['n_cases']} cases ({n_train} train) to {args.data_dir or cfg.paths.data_dir}")


def _read_input(path):
    """A phantom case container, or a bare displacement container."""
    arrays = container.load(path)
    if "images" in arrays:
        return load_case(path), None
    return None, DisplacementField.load(path)


def cmd_strain_compute(args, cfg):
    case, field = _read_input(args.input)
    mask = None
    if case is not None:
        field, mask = case.field, case.mask
        center = case.myo.centroid
    elif args.center is not None:
        center = tuple(args.center)
    else:
        h, w = field.grid
        center = ((h - 1) / 2, (w - 1) / 2)
    ecc = ecc_from_field(field, center, args.mode)
    container.save(args.out, {"ecc": ecc, "center": np.asarray(center, dtype=np.float64),
                              "frame_interval_ms": np.array([field.frame_interval_ms])})
    if args.csv:
        write_ecc_csv(args.csv, ecc, mask if args.mask_only else None)
    print(f"Ecc {ecc.shape} written to {args.out}")


def cmd_segmat_build(args, cfg):
    case = load_case(args.case)
    if args.seg_model:
        gt, sm, err = workflow.build_case_matrices(case, segnet.SegCheckpoint.load(args.seg_model))
        if sm is None:
            raise ValueError(f"segmented mask unusable: {err}")
    else:
        myo = case.myo
        if args.ecc:
            a = container.load(args.ecc)
            sm = build_strain_matrix(a["ecc"], myo, case.spec.frame_interval_ms)
        else:
            sm = strain_matrix(case.field, myo, args.mode)
    write_strain_matrix_csv(args.out, sm)
    if args.baseline_out:
        write_tos_csv(args.baseline_out, baseline_tos(sm, args.threshold if args.threshold is not None
                                                      else cfg.baseline_threshold))
    print(f"strain matrix {sm.values.shape} written to {args.out}")


def cmd_train_seg(args, cfg):
    _print_json(workflow.train_seg(cfg, args.data_dir, args.out, args.log))


def cmd_train_tos(args, cfg):
    _print_json(workflow.train_tos(cfg, args.data_dir, args.out))


def cmd_predict_tos(args, cfg):
    if not args.matrices:
        _print_json(workflow.predict(cfg, args.data_dir, args.seg_model, args.model, args.out_dir))
        return
    ck = tosnet.TosCheckpoint.load(args.model or Path(cfg.paths.checkpoint_dir) / "tosnet.tosm")
    if args.out and len(args.matrices) > 1:
        raise UsageError("--out takes a single matrix; use --out-dir for several")
    for p in args.matrices:
        sm = read_strain_matrix_csv(p, cfg.phantom.frame_interval_ms)
        tos = tosnet.predict_tos(pad_time(sm, ck.config.t_max), ck)
        dest = Path(args.out) if args.out else Path(args.out_dir or ".") / (Path(p).stem + "_tos.csv")
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_tos_csv(dest, tos)
        print(f"{p} -> {dest}")


def cmd_compare(args, cfg):
    _print_json(workflow.compare(cfg, args.data_dir, args.model, args.out_dir))


def _explicit_stack(args, cfg):
    curves = [read_tos_csv(path, cfg.phantom.frame_interval_ms) for _, path in args.slice]
    levels = [lv for lv, _ in args.slice]
    return aha.stack_from_curves([c.tos_ms for c in curves], levels, cfg.volume.slice_thickness_mm)


def cmd_bullseye(args, cfg):
    if args.slice:
        out = Path(args.out or Path(cfg.paths.output_dir) / "bullseye")
        m = workflow.write_bullseye(_explicit_stack(args, cfg), out)
        _print_json({"aha_sector_tos_ms": [float(v) for v in m.values]})
    else:
        _print_json(workflow.bullseye(cfg, args.data_dir, args.out_dir))


def cmd_recon3d(args, cfg):
    if args.slice:
        mesh = aha.reconstruct_surface(_explicit_stack(args, cfg), cfg.volume.radial_resolution,
                                       cfg.volume.angular_resolution)
        out = Path(args.out or Path(cfg.paths.output_dir) / "activation_mesh.txt")
        out.parent.mkdir(parents=True, exist_ok=True)
        aha.write_mesh(out, mesh)
        print(f"{len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {out}")
    else:
        _print_json(workflow.recon3d(cfg, args.data_dir, args.out_dir))


def cmd_run_all(args, cfg):
    summary, failed = workflow.run_all(cfg)
    print(f"summary written to {Path(cfg.paths.output_dir) / 'summary.json'}")
    if failed:
        print("checks failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECKS
    print("all checks passed")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (defaults built in)")
    common.add_argument("--threads", type=int, help="BLAS thread limit (overrides config)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="lvtos", description="Late-activation mapping pipeline on synthetic LV phantoms.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("phantom-gen", cmd_phantom_gen, "generate phantom cases and a manifest")
    sp.add_argument("--data-dir")

    sp = add("strain-compute", cmd_strain_compute, "Ecc field of a case or displacement container")
    sp.add_argument("input", help="phantom case or displacement container (.tosm)")
    sp.add_argument("--out", required=True, help="output container with entry 'ecc'")
    sp.add_argument("--csv", help="also write frame,row,col,value CSV")
    sp.add_argument("--mask-only", action="store_true", help="CSV restricted to the myocardium")
    sp.add_argument("--center", type=float, nargs=2, metavar=("ROW", "COL"))
    sp.add_argument("--mode", choices=(DEFORMATION_GRADIENT, LITERAL), default=DEFORMATION_GRADIENT)

    sp = add("segmat-build", cmd_segmat_build, "18 x T strain matrix of a phantom case")
    sp.add_argument("case")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ecc", help="precomputed Ecc container from strain-compute")
    sp.add_argument("--seg-model", help="use the segmented frame-0 mask instead of the reference")
    sp.add_argument("--mode", choices=(DEFORMATION_GRADIENT, LITERAL), default=DEFORMATION_GRADIENT)
    sp.add_argument("--baseline-out", help="also write threshold-baseline TOS CSV")
    sp.add_argument("--threshold", type=float)

    sp = add("train-seg", cmd_train_seg, "train the segmentation network")
    sp.add_argument("--data-dir")
    sp.add_argument("--out")
    sp.add_argument("--log")

    sp = add("train-tos", cmd_train_tos, "train the TOS regression network")
    sp.add_argument("--data-dir")
    sp.add_argument("--out")

    sp = add("predict-tos", cmd_predict_tos,
             "TOS for strain-matrix CSVs, or for every test case when none are given")
    sp.add_argument("matrices", nargs="*")
    sp.add_argument("--model", help="TOS checkpoint")
    sp.add_argument("--seg-model", help="segmentation checkpoint (test-split mode)")
    sp.add_argument("--data-dir")
    sp.add_argument("--out")
    sp.add_argument("--out-dir")

    sp = add("compare", cmd_compare, "network vs. threshold baseline on the test split")
    sp.add_argument("--data-dir")
    sp.add_argument("--model")
    sp.add_argument("--out-dir")

    for name, fn, help_ in (("bullseye", cmd_bullseye, "AHA 17-sector bulls-eye SVG and CSV"),
                            ("recon3d", cmd_recon3d, "interpolated 3D activation mesh")):
        sp = add(name, fn, help_)
        sp.add_argument("--slice", nargs=2, action="append", metavar=("LEVEL", "TOS_CSV"),
                        help="explicit slice, base to apex (repeat); default: test-split predictions")
        sp.add_argument("--data-dir")
        sp.add_argument("--out-dir")
        sp.add_argument("--out", help="output path (with --slice)")

    add("run-all", cmd_run_all, "every stage in order, then summary.json and the checks")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            cfg.threads = args.threads
        with threadpool_limits(limits=cfg.threads):
            code = args.func(args, cfg)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"lvtos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except workflow.StageError as exc:
        print(f"lvtos: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"lvtos: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
