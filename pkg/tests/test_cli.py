import json

import numpy as np
import pytest

from lvtos import container
from lvtos.cli import main
from lvtos.config import PipelineConfig
from lvtos.phantom import load_case
from lvtos.segmat import read_strain_matrix_csv, read_tos_csv
from lvtos.workflow import SUMMARY_KEYS


def tiny_config(root, n_cases=20):
    cfg = PipelineConfig()
    cfg.paths.data_dir = str(root / "data")
    cfg.paths.checkpoint_dir = str(root / "ck")
    cfg.paths.output_dir = str(root / "report")
    cfg.phantom.n_cases = n_cases
    cfg.segnet.base_width, cfg.segnet.levels, cfg.segnet.steps = 4, 2, 3
    cfg.segnet.n_train_images, cfg.segnet.n_val_images = 8, 4
    cfg.tosnet.steps = 20
    path = root / "config.json"
    root.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.dumps())
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = tiny_config(root)
    code = main(["run-all", "--config", str(cfg)])
    return root, cfg, code


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["strain-compute"]) == 1
    assert main(["phantom-gen", "--threads", "0"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_or_bad_input_exit_2(tmp_path, capsys):
    assert main(["strain-compute", str(tmp_path / "nope.tosm"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.tosm"
    bad.write_bytes(b"not a container")
    assert main(["segmat-build", str(bad), "--out", str(tmp_path / "o.csv")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"sed": 1}')
    assert main(["phantom-gen", "--config", str(cfg)]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "run-all" in capsys.readouterr().out


def test_stage_error_names_stage(tmp_path, capsys):
    # five cases leave one test case, too few for a four-slice stack
    assert main(["run-all", "--config", str(tiny_config(tmp_path, n_cases=5))]) == 2
    assert "bullseye" in capsys.readouterr().err


def test_phantom_gen_deterministic(tmp_path):
    cfg = tiny_config(tmp_path, n_cases=1)
    assert main(["phantom-gen", "--config", str(cfg)]) == 0
    first = (tmp_path / "data" / "case_0000.tosm").read_bytes()
    manifest = (tmp_path / "data" / "manifest.json").read_bytes()
    assert main(["phantom-gen", "--config", str(cfg), "--data-dir", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "case_0000.tosm").read_bytes() == first
    assert (tmp_path / "again" / "manifest.json").read_bytes() == manifest


def test_run_all_summary(run_dir):
    root, _, code = run_dir
    # the tiny training budget cannot reach the accuracy checks
    assert code == 3
    summary = json.loads((root / "report" / "summary.json").read_text())
    assert set(summary) == set(SUMMARY_KEYS)
    assert "seg_plain_dice" in summary["checks_failed"]
    assert summary["tos_output_floor_ok"] is True
    assert summary["n_cases"] == 20 and summary["n_test_cases"] == 4
    for name in ("compare.csv", "compare_cascade.csv", "timings.csv", "bullseye.svg",
                 "bullseye.csv", "bullseye_truth.svg", "activation_mesh.txt", "config.json"):
        assert (root / "report" / name).exists(), name
    assert len(list((root / "report" / "tos").glob("*.csv"))) == 4


def test_run_all_equals_manual_composition(run_dir, tmp_path):
    root, _, _ = run_dir
    cfg = str(tiny_config(tmp_path))
    for cmd in (["phantom-gen"], ["train-seg"], ["train-tos"], ["predict-tos"], ["compare"],
                ["bullseye"], ["recon3d"]):
        assert main(cmd + ["--config", cfg]) == 0, cmd
    for name in ("compare.csv", "compare_cascade.csv", "bullseye.svg", "bullseye.csv",
                 "activation_mesh.txt", "tos/case_0016.csv", "strain/case_0019_cascade.csv"):
        assert (tmp_path / "report" / name).read_bytes() == (root / "report" / name).read_bytes(), name
    assert (tmp_path / "ck" / "tosnet.tosm").read_bytes() == (root / "ck" / "tosnet.tosm").read_bytes()


def test_strain_compute_and_segmat_build(run_dir, tmp_path):
    root, cfg, _ = run_dir
    case_path = root / "data" / "case_0000.tosm"
    out = tmp_path / "ecc.tosm"
    assert main(["strain-compute", str(case_path), "--out", str(out), "--csv", str(tmp_path / "e.csv"),
                 "--mask-only", "--config", str(cfg)]) == 0
    a = container.load(out)
    case = load_case(case_path)
    assert a["ecc"].shape == case.images.shape
    n_rows = len((tmp_path / "e.csv").read_text().splitlines()) - 1
    assert n_rows == case.images.shape[0] * int(case.mask.sum())

    direct, via_ecc = tmp_path / "sm.csv", tmp_path / "sm2.csv"
    assert main(["segmat-build", str(case_path), "--out", str(direct),
                 "--baseline-out", str(tmp_path / "base.csv"), "--config", str(cfg)]) == 0
    assert main(["segmat-build", str(case_path), "--out", str(via_ecc), "--ecc", str(out),
                 "--config", str(cfg)]) == 0
    sm = read_strain_matrix_csv(direct)
    assert sm.values.shape == (18, case.images.shape[0])
    assert np.allclose(sm.values, read_strain_matrix_csv(via_ecc).values)
    base = read_tos_csv(tmp_path / "base.csv")
    assert np.abs(base.tos_frames - case.tos.tos_frames).max() <= 1.0

    pred = tmp_path / "pred.csv"
    assert main(["predict-tos", str(direct), "--out", str(pred), "--model", str(root / "ck" / "tosnet.tosm"),
                 "--config", str(cfg)]) == 0
    assert read_tos_csv(pred).tos_frames.shape == (18,)
    assert main(["predict-tos", str(direct), str(via_ecc), "--out", str(pred), "--config", str(cfg)]) == 1


def test_strain_compute_displacement_container(run_dir, tmp_path):
    _, cfg, _ = run_dir
    u = np.zeros((2, 8, 8, 2))
    container.save(tmp_path / "u.tosm", {"displacement": u, "frame_interval_ms": np.array([17.0])})
    assert main(["strain-compute", str(tmp_path / "u.tosm"), "--out", str(tmp_path / "e.tosm"),
                 "--config", str(cfg)]) == 0
    assert np.array_equal(container.load(tmp_path / "e.tosm")["ecc"], np.zeros((2, 8, 8)))


def test_bullseye_and_recon3d_explicit_slices(run_dir, tmp_path):
    root, cfg, _ = run_dir
    tos = sorted((root / "report" / "tos").glob("*.csv"))
    args = []
    for level, p in zip(("basal", "mid", "mid", "apical"), tos):
        args += ["--slice", level, str(p)]
    assert main(["bullseye", *args, "--out", str(tmp_path / "be"), "--config", str(cfg)]) == 0
    # same four predictions in the same order as the batch stage
    assert (tmp_path / "be.csv").read_bytes() == (root / "report" / "bullseye.csv").read_bytes()
    assert main(["recon3d", *args, "--out", str(tmp_path / "m.txt"), "--config", str(cfg)]) == 0
    text = (tmp_path / "m.txt").read_text()
    assert sum(line.startswith("v ") for line in text.splitlines()) == (3 * 4 + 1) * 72
    assert main(["bullseye", "--slice", "basal", str(tos[0]), "--slice", "mid", str(tos[1]),
                 "--config", str(cfg)]) == 2
