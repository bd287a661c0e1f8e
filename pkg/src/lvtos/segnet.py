"""Left-ventricle myocardium segmentation: dilated-conv U-Net, augmentation and rotation TTA."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import container
from .metrics import dice
from .nn import (Adam, BatchNorm, Conv2d, ConvTranspose2d, MaxPool2d, ReLU, Softmax,
                 inverse_frequency_weights, load_state_dict, state_dict, weighted_ce_dice_grad,
                 weighted_ce_dice_loss)

log = logging.getLogger(__name__)

TTA_ANGLES = tuple(40.0 * k for k in range(9))


@dataclass
class UNetConfig:
    input_size: int = 64
    in_channels: int = 1
    n_classes: int = 2
    base_width: int = 8
    levels: int = 4
    dilation: int = 2
    pool_window: int = 3
    pool_stride: int = 2

    def validate(self):
        step = self.pool_stride ** (self.levels - 1)
        if self.input_size % step:
            raise ValueError(f"input_size {self.input_size} must be divisible by {step}")
        if self.levels < 1 or self.base_width < 1:
            raise ValueError("levels and base_width must be >= 1")


@dataclass
class SegTrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 400
    seed: int = 0
    augment: bool = True
    max_shift: float = 4.0
    max_rotation_deg: float = 180.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    warp_sigma: float = 1.0
    warp_grid: int = 4
    log_every: int = 25


def _run(layers, x, train):
    for layer in layers:
        x = layer.forward(x, train=train)
    return x


def _back(layers, g):
    for layer in reversed(layers):
        g = layer.backward(g)
    return g


class UNet:
    """U-Net with dilated 3x3 convolutions in the encoder and transposed convolutions in the decoder.

    Encoder block: 2x (dilated conv, batchnorm, ReLU), max-pool between blocks.
    The bottom decoder block refines the deepest features; the others upsample
    with a stride-2 transposed conv, concatenate the skip tensor, then refine.
    """

    def __init__(self, config: UNetConfig | None = None, seed: int = 0):
        self.config = cfg = config or UNetConfig()
        cfg.validate()
        rng = np.random.default_rng(seed)
        widths = [cfg.base_width * 2 ** i for i in range(cfg.levels)]
        self.widths = widths

        def cbr(name, cin, cout, transposed=False, stride=1):
            if transposed:
                conv = ConvTranspose2d(cin, cout, 3, stride=stride, padding=1,
                                       output_padding=stride - 1, rng=rng, name=f"{name}.conv")
            else:
                conv = Conv2d(cin, cout, 3, dilation=cfg.dilation, padding="same", rng=rng,
                              name=f"{name}.conv")
            return [conv, BatchNorm(cout, name=f"{name}.bn"), ReLU(name=f"{name}.relu")]

        self.enc = []
        cin = cfg.in_channels
        for i, w in enumerate(widths):
            self.enc.append(cbr(f"enc{i}.a", cin, w) + cbr(f"enc{i}.b", w, w))
            cin = w
        self.pools = [MaxPool2d(cfg.pool_window, cfg.pool_stride, name=f"pool{i}")
                      for i in range(cfg.levels - 1)]
        top = widths[-1]
        self.bottom = (cbr(f"dec{cfg.levels - 1}.a", top, top, transposed=True)
                       + cbr(f"dec{cfg.levels - 1}.b", top, top, transposed=True))
        self.up, self.refine = [], []
        for i in reversed(range(cfg.levels - 1)):
            self.up.append(cbr(f"dec{i}.up", widths[i + 1], widths[i], transposed=True,
                               stride=cfg.pool_stride))
            self.refine.append(cbr(f"dec{i}.b", 2 * widths[i], widths[i], transposed=True))
        self.head = [Conv2d(widths[0], cfg.n_classes, 1, rng=rng, name="head.conv"),
                     Softmax(name="head.softmax")]
        self._skips = None

    def _all_layers(self):
        for blk in self.enc:
            yield from blk
        yield from self.pools
        yield from self.bottom
        for a, b in zip(self.up, self.refine):
            yield from a
            yield from b
        yield from self.head

    def params(self):
        return {f"{L.name}.{k}": v for L in self._all_layers() for k, v in L.params().items()}

    def buffers(self):
        return {f"{L.name}.{k}": v for L in self._all_layers() for k, v in L.buffers().items()}

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def forward(self, x, train: bool = True) -> np.ndarray:
        cfg = self.config
        if x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
            raise ValueError(f"UNet expects (N, {cfg.in_channels}, {cfg.input_size}, "
                             f"{cfg.input_size}), got {x.shape}")
        enc_out = []
        h = np.asarray(x, dtype=np.float64)
        for i, blk in enumerate(self.enc):
            if i > 0:
                h = self.pools[i - 1].forward(h, train)
            h = _run(blk, h, train)
            enc_out.append(h)
        h = _run(self.bottom, h, train)
        for j, (up, ref) in enumerate(zip(self.up, self.refine)):
            lvl = cfg.levels - 2 - j
            h = _run(up, h, train)
            h = np.concatenate([h, enc_out[lvl]], axis=1)
            h = _run(ref, h, train)
        self._ran = True
        return _run(self.head, h, train)

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if not getattr(self, "_ran", False):
            raise RuntimeError("backward called before forward")
        cfg = self.config
        g = _back(self.head, grad)
        skip_grads = {}
        for j in reversed(range(len(self.up))):
            lvl = cfg.levels - 2 - j
            g = _back(self.refine[j], g)
            c = self.widths[lvl]
            skip_grads[lvl] = g[:, c:]
            g = _back(self.up[j], np.ascontiguousarray(g[:, :c]))
        g = _back(self.bottom, g)
        for i in reversed(range(cfg.levels)):
            if i in skip_grads:
                g = g + skip_grads[i]
            g = _back(self.enc[i], g)
            if i > 0:
                g = self.pools[i - 1].backward(g)
        return g


# --- geometry ------------------------------------------------------------------

def _grid(shape):
    return np.meshgrid(np.arange(shape[0], dtype=np.float64),
                       np.arange(shape[1], dtype=np.float64), indexing="ij")


def rotation_coords(shape, angle_deg: float) -> np.ndarray:
    """Sampling coordinates that rotate an image CCW (as displayed) by ``angle_deg`` about its center."""
    rr, cc = _grid(shape)
    cr, ccen = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0
    a = np.deg2rad(angle_deg)
    # output pixel p samples the input at R(-a)(p - c) + c, in (x=col, y=-row) coordinates
    x, y = cc - ccen, -(rr - cr)
    xs = np.cos(a) * x + np.sin(a) * y
    ys = -np.sin(a) * x + np.cos(a) * y
    return np.stack([cr - ys, ccen + xs])


def warp(image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Bilinear resampling with zero fill; ``image`` is (..., H, W)."""
    img = np.asarray(image, dtype=np.float64)
    flat = img.reshape((-1,) + img.shape[-2:])
    out = np.stack([ndimage.map_coordinates(f, coords, order=1, mode="constant", cval=0.0)
                    for f in flat])
    return out.reshape(img.shape)


def rotate(image: np.ndarray, angle_deg: float) -> np.ndarray:
    if angle_deg == 0:
        return np.array(image, dtype=np.float64)
    return warp(image, rotation_coords(image.shape[-2:], angle_deg))


def random_transform(shape, rng: np.random.Generator, hyper: SegTrainConfig) -> np.ndarray:
    """Random translation, rotation and scaling followed by a smooth coarse-grid warp.

    The warp draws Gaussian offsets on a ``warp_grid`` x ``warp_grid`` lattice and
    interpolates them bilinearly to full resolution.
    """
    rr, cc = _grid(shape)
    cr, ccen = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0
    a = np.deg2rad(rng.uniform(-hyper.max_rotation_deg, hyper.max_rotation_deg))
    s = rng.uniform(*hyper.scale_range)
    tr, tc = rng.uniform(-hyper.max_shift, hyper.max_shift, size=2)
    x, y = cc - ccen - tc, -(rr - cr - tr)
    xs = (np.cos(a) * x + np.sin(a) * y) / s
    ys = (-np.sin(a) * x + np.cos(a) * y) / s
    coords = np.stack([cr - ys, ccen + xs])
    if hyper.warp_sigma > 0:
        g = hyper.warp_grid
        offsets = rng.normal(0.0, hyper.warp_sigma, size=(2, g, g))
        lat = np.stack([rr * (g - 1) / (shape[0] - 1), cc * (g - 1) / (shape[1] - 1)])
        for k in range(2):
            coords[k] += ndimage.map_coordinates(offsets[k], lat, order=1, mode="nearest")
    return coords


def augment(image, label, rng: np.random.Generator, hyper: SegTrainConfig):
    """Apply one random geometric transform to an image and its label (binarized at 0.5)."""
    coords = random_transform(np.shape(image)[-2:], rng, hyper)
    return warp(image, coords), warp(np.asarray(label, dtype=np.float64), coords) >= 0.5


def normalize(images: np.ndarray) -> np.ndarray:
    """Per-image zero mean, unit variance."""
    x = np.asarray(images, dtype=np.float64)
    m = x.mean(axis=(-2, -1), keepdims=True)
    s = x.std(axis=(-2, -1), keepdims=True)
    return (x - m) / np.where(s > 0, s, 1.0)


def one_hot(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    lab = np.asarray(labels).astype(int)
    return np.moveaxis(np.eye(n_classes)[lab], -1, 1)


# --- training / inference ---------------------------------------------------------

@dataclass
class SegCheckpoint:
    config: UNetConfig
    state: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def model(self) -> UNet:
        net = UNet(self.config)
        load_state_dict(net, self.state)
        return net

    def save(self, path: str | Path) -> None:
        arrays = {"config_json": np.frombuffer(json.dumps(asdict(self.config), sort_keys=True)
                                               .encode(), dtype=np.uint8)}
        arrays.update(self.state)
        container.save(path, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SegCheckpoint":
        a = container.load(path)
        cfg = UNetConfig(**json.loads(a.pop("config_json").tobytes().decode()))
        return cls(cfg, a)


def _batch_loss(net, x, y, train=True):
    prob = net.forward(x, train=train)
    onehot = one_hot(y, net.config.n_classes)
    w = inverse_frequency_weights(onehot)
    return prob, onehot, w, weighted_ce_dice_loss(prob, onehot, w)


def train_segnet(images, labels, config: UNetConfig | None = None,
                 hyper: SegTrainConfig | None = None, val_images=None, val_labels=None,
                 log_path: str | Path | None = None) -> tuple[SegCheckpoint, list[dict]]:
    """Train on (N, H, W) images and boolean labels; returns checkpoint and log rows.

    Each log row has ``step``, ``loss`` and ``val_dice`` (None when not evaluated).
    """
    config = config or UNetConfig(input_size=int(np.shape(images)[-1]))
    hyper = hyper or SegTrainConfig()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if len(images) == 0:
        raise ValueError("empty training set")
    if images.shape != labels.shape:
        raise ValueError(f"images {images.shape} and labels {labels.shape} differ in shape")
    net = UNet(config, seed=hyper.seed)
    opt = Adam(net.params(), lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    rows = []
    n = len(images)
    order = rng.permutation(n)
    pos = 0
    for step in range(hyper.steps):
        idx = []
        while len(idx) < min(hyper.batch_size, n):
            if pos == n:
                order, pos = rng.permutation(n), 0
            idx.append(order[pos])
            pos += 1
        xb, yb = [], []
        for i in idx:
            if hyper.augment:
                im, lb = augment(images[i], labels[i], rng, hyper)
            else:
                im, lb = images[i], labels[i]
            xb.append(im)
            yb.append(lb)
        x = normalize(np.stack(xb))[:, None]
        y = np.stack(yb)
        net.zero_grad()
        prob, onehot, w, loss = _batch_loss(net, x, y)
        net.backward(weighted_ce_dice_grad(prob, onehot, w))
        opt.step()
        row = {"step": step, "loss": loss, "val_dice": None}
        if val_images is not None and ((step + 1) % hyper.log_every == 0 or step + 1 == hyper.steps):
            pred = predict(val_images, net)
            row["val_dice"] = float(np.mean([dice(p, t) for p, t in zip(pred, val_labels)]))
            log.info("segnet step %d loss %.4f val dice %.4f", step, loss, row["val_dice"])
        rows.append(row)
    ckpt = SegCheckpoint(config, state_dict(net), {"steps": hyper.steps, "seed": hyper.seed})
    if log_path is not None:
        write_log_csv(log_path, rows)
    return ckpt, rows


def write_log_csv(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "loss", "val_dice"])
        for r in rows:
            wr.writerow([r["step"], repr(float(r["loss"])),
                         "" if r["val_dice"] is None else repr(float(r["val_dice"]))])


def _as_net(model):
    return model.model() if isinstance(model, SegCheckpoint) else model


def predict_proba(images, model, batch_size: int = 16) -> np.ndarray:
    """(N, C, H, W) class probabilities for (N, H, W) or (H, W) images, inference-mode batchnorm."""
    net = _as_net(model)
    imgs = np.asarray(images, dtype=np.float64)
    single = imgs.ndim == 2
    if single:
        imgs = imgs[None]
    x = normalize(imgs)[:, None]
    out = np.concatenate([net.forward(x[i:i + batch_size], train=False)
                          for i in range(0, len(x), batch_size)])
    return out[0] if single else out


def predict_tta(images, model, angles=TTA_ANGLES) -> np.ndarray:
    """Rotation test-time augmentation: rotate, predict, rotate back, average, renormalize."""
    net = _as_net(model)
    imgs = np.asarray(images, dtype=np.float64)
    single = imgs.ndim == 2
    if single:
        imgs = imgs[None]
    total = None
    for a in angles:
        prob = predict_proba(rotate(imgs, a), net)
        back = rotate(prob, -a)
        total = back if total is None else total + back
    total /= len(angles)
    s = total.sum(axis=1, keepdims=True)
    total = total / np.where(s > 0, s, 1.0)
    return total[0] if single else total


def predict(images, model, tta: bool = False, angles=TTA_ANGLES) -> np.ndarray:
    """Boolean foreground masks, thresholding the class-1 probability at 0.5."""
    prob = predict_tta(images, model, angles) if tta else predict_proba(images, model)
    return prob[..., 1, :, :] >= 0.5
