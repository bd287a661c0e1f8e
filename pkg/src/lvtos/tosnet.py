"""CNN regression of 18-segment onset times from padded circumferential strain matrices."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .nn import (Adam, BatchNorm, Conv2d, Dense, Flatten, ReLU, Sequential, ShapeError, ShiftedLeakyReLU,
                 load_state_dict, mse_grad, mse_loss, state_dict)
from .segmat import N_SEGMENTS, StrainMatrix, TosCurve, baseline_tos, pad_time

log = logging.getLogger(__name__)


@dataclass
class TosNetConfig:
    t_max: int = 25
    conv_channels: tuple[int, ...] = (16, 16, 16)
    kernel: int = 3
    dense_units: tuple[int, ...] = (64,)
    t0: float = 0.0
    alpha: float = 0.01
    input_scale: float = 10.0
    dense_batchnorm: bool = True

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["dense_units"] = list(self.dense_units)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (16, 16, 16)))
        d["dense_units"] = tuple(d.get("dense_units", (64,)))
        return cls(**d)


@dataclass
class TosTrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    steps: int = 500
    seed: int = 0
    shifts: int = N_SEGMENTS   # cyclic shifts per sample, including the identity
    log_every: int = 50


def build_tosnet(config: TosNetConfig, seed: int = 0) -> Sequential:
    rng = np.random.default_rng(seed)
    layers = []
    cin = 1
    for i, c in enumerate(config.conv_channels):
        layers += [Conv2d(cin, c, config.kernel, padding="same", rng=rng, name=f"conv{i}"),
                   ReLU(name=f"conv{i}.relu")]
        cin = c
    layers.append(Flatten(name="flatten"))
    width = cin * N_SEGMENTS * config.t_max
    for i, u in enumerate(config.dense_units):
        layers.append(Dense(width, u, rng=rng, name=f"dense{i}"))
        if config.dense_batchnorm:
            layers.append(BatchNorm(u, name=f"dense{i}.bn"))
        layers.append(ReLU(name=f"dense{i}.relu"))
        width = u
    layers += [Dense(width, N_SEGMENTS, rng=rng, name="out"),
               ShiftedLeakyReLU(config.t0, config.alpha, name="out.act")]
    return Sequential(layers, (1, N_SEGMENTS, config.t_max))


def cyclic_shift_augment(sm: StrainMatrix, tos: TosCurve, k: int) -> tuple[StrainMatrix, TosCurve]:
    """Rotate segment rows and TOS entries by ``k`` (row s moves to row s + k)."""
    if not 0 <= k < N_SEGMENTS:
        raise ValueError(f"shift must lie in [0, {N_SEGMENTS}), got {k}")
    return (StrainMatrix(np.roll(sm.values, k, axis=0), sm.frame_interval_ms),
            TosCurve(np.roll(tos.tos_frames, k), tos.frame_interval_ms, np.roll(tos.no_onset, k)))


@dataclass
class TosCheckpoint:
    config: TosNetConfig
    state: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def model(self) -> Sequential:
        net = build_tosnet(self.config)
        load_state_dict(net, self.state)
        return net

    def save(self, path: str | Path) -> None:
        arrays = {"config_json": np.frombuffer(
            json.dumps(self.config.to_dict(), sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update(self.state)
        container.save(path, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "TosCheckpoint":
        a = container.load(path)
        cfg = TosNetConfig.from_dict(json.loads(a.pop("config_json").tobytes().decode()))
        return cls(cfg, a)


def _stack(matrices, t_max):
    x = []
    for sm in matrices:
        v = sm.values if isinstance(sm, StrainMatrix) else np.asarray(sm, dtype=np.float64)
        if v.shape != (N_SEGMENTS, t_max):
            raise ShapeError(f"strain matrix shape {v.shape} != ({N_SEGMENTS}, {t_max}); pad first")
        x.append(v)
    return np.stack(x)[:, None]


def train_tosnet(matrices, curves, config: TosNetConfig | None = None,
                 hyper: TosTrainConfig | None = None) -> tuple[TosCheckpoint, list[dict]]:
    """MSE training on padded strain matrices with cyclic-shift augmentation.

    The output bias starts at the mean target so most initial outputs sit on
    the identity branch of the output activation.
    """
    hyper = hyper or TosTrainConfig()
    if not matrices:
        raise ValueError("empty training set")
    frames = {(sm.values if isinstance(sm, StrainMatrix) else np.asarray(sm)).shape[1]
              for sm in matrices}
    if len(frames) != 1:
        raise ValueError(f"inconsistent frame counts {sorted(frames)}; pad to a common T_max")
    config = config or TosNetConfig(t_max=frames.pop())
    x0 = _stack(matrices, config.t_max) * config.input_scale
    y0 = np.stack([c.tos_frames if isinstance(c, TosCurve) else np.asarray(c, dtype=np.float64)
                   for c in curves])
    if len(y0) != len(x0):
        raise ValueError("matrices and curves differ in length")
    xs, ys = [x0], [y0]
    for k in range(1, hyper.shifts):
        xs.append(np.roll(x0, k, axis=2))
        ys.append(np.roll(y0, k, axis=1))
    x, y = np.concatenate(xs), np.concatenate(ys)

    net = build_tosnet(config, seed=hyper.seed)
    out = net.layers[-2]
    out.bias.data[:] = max(float(y.mean()), config.t0)
    opt = Adam(net.params(), lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    rows = []
    n = len(x)
    order, pos = rng.permutation(n), 0
    for step in range(hyper.steps):
        if pos + hyper.batch_size > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + hyper.batch_size]
        pos += hyper.batch_size
        net.zero_grad()
        pred = net.forward(x[idx])
        loss = mse_loss(pred, y[idx])
        net.backward(mse_grad(pred, y[idx]))
        opt.step()
        rows.append({"step": step, "loss": loss})
        if (step + 1) % hyper.log_every == 0:
            log.info("tosnet step %d mse %.4f", step, loss)
    return TosCheckpoint(config, state_dict(net), {"steps": hyper.steps, "seed": hyper.seed}), rows


def predict_tos_batch(matrices, model: TosCheckpoint) -> np.ndarray:
    """(N, 18) onset frames for padded strain matrices."""
    net = model.model()
    cfg = model.config
    x = _stack(matrices, cfg.t_max) * cfg.input_scale
    return net.forward(x, train=False)


def predict_tos(sm: StrainMatrix, model: TosCheckpoint) -> TosCurve:
    pred = predict_tos_batch([sm], model)[0]
    return TosCurve(pred, sm.frame_interval_ms)


def rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2)))


def compare_methods(cases, model: TosCheckpoint, threshold: float = -0.02) -> dict:
    """Per-case RMSE of network and threshold baseline against ground truth.

    ``cases`` is a list of ``(case_id, StrainMatrix (unpadded), TosCurve truth)``.
    Timings are kept apart from the accuracy rows because they are not reproducible.
    """
    rows, timings, curves = [], [], []
    for cid, sm, truth in cases:
        t = time.perf_counter()
        base = baseline_tos(sm, threshold)
        t_base = time.perf_counter() - t
        padded = sm if sm.frames == model.config.t_max else pad_time(sm, model.config.t_max)
        t = time.perf_counter()
        net = predict_tos(padded, model)
        t_net = time.perf_counter() - t
        dt = sm.frame_interval_ms
        r_net = rmse(net.tos_frames, truth.tos_frames)
        r_base = rmse(base.tos_frames, truth.tos_frames)
        rows.append({"case": cid, "tosnet_rmse_frames": r_net, "tosnet_rmse_ms": r_net * dt,
                     "baseline_rmse_frames": r_base, "baseline_rmse_ms": r_base * dt,
                     "baseline_max_err_frames": float(np.max(np.abs(base.tos_frames - truth.tos_frames)))})
        timings.append({"case": cid, "tosnet_s": t_net, "baseline_s": t_base})
        curves.append((cid, truth.tos_frames, base.tos_frames, net.tos_frames))

    def agg(key):
        # pooled over all segments of all cases
        return float(np.sqrt(np.mean([r[key] ** 2 for r in rows]))) if rows else float("nan")

    summary = {k: agg(k) for k in ("tosnet_rmse_frames", "tosnet_rmse_ms",
                                   "baseline_rmse_frames", "baseline_rmse_ms")}
    summary["baseline_max_err_frames"] = max((r["baseline_max_err_frames"] for r in rows),
                                             default=float("nan"))
    summary["n_cases"] = len(rows)
    return {"rows": rows, "timings": timings, "curves": curves, "summary": summary}


def write_compare_csv(path, report: dict) -> None:
    keys = ["case", "tosnet_rmse_frames", "tosnet_rmse_ms", "baseline_rmse_frames",
            "baseline_rmse_ms", "baseline_max_err_frames"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for r in report["rows"]:
            wr.writerow([r["case"]] + [repr(float(r[k])) for k in keys[1:]])


def write_timings_csv(path, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["case", "tosnet_s", "baseline_s"])
        for r in report["timings"]:
            wr.writerow([r["case"], f"{r['tosnet_s']:.6f}", f"{r['baseline_s']:.6f}"])
