import numpy as np
import pytest

from lvtos.nn import state_dict
from lvtos.nn.gradcheck import numerical_grad, rel_error
from lvtos.nn.losses import weighted_ce_dice_grad, weighted_ce_dice_loss
from lvtos.phantom import PhantomSpec, generate
from lvtos.segnet import (TTA_ANGLES, SegCheckpoint, SegTrainConfig, UNet, UNetConfig, augment,
                          normalize, one_hot, predict, predict_proba, predict_tta, rotate,
                          train_segnet, write_log_csv)

TINY = UNetConfig(input_size=16, base_width=2, levels=2)


def _disk_image(n=16, r=5.0, width=2.0):
    c = (n - 1) / 2
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-((np.hypot(rr - c, cc - c) - r) ** 2) / (2 * width ** 2))


def test_tta_angles():
    assert TTA_ANGLES == tuple(40.0 * k for k in range(9))


def test_unet_output_shape_and_normalised():
    net = UNet(UNetConfig(input_size=32, base_width=2, levels=3))
    out = net.forward(np.random.default_rng(0).normal(size=(2, 1, 32, 32)))
    assert out.shape == (2, 2, 32, 32)
    assert np.allclose(out.sum(axis=1), 1.0)


def test_unet_rejects_bad_shapes():
    with pytest.raises(ValueError):
        UNet(UNetConfig(input_size=30, levels=3))
    with pytest.raises(ValueError):
        UNet(TINY).forward(np.zeros((1, 1, 8, 8)))
    with pytest.raises(RuntimeError):
        UNet(TINY).backward(np.zeros((1, 2, 16, 16)))


def test_unet_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    net = UNet(UNetConfig(input_size=8, base_width=1, levels=2), seed=3)
    x = rng.normal(size=(2, 1, 8, 8))
    lab = one_hot(rng.random((2, 8, 8)) < 0.4)
    w = np.array([1.0, 2.0])

    def f():
        return weighted_ce_dice_loss(net.forward(x), lab, w)

    net.zero_grad()
    net.backward(weighted_ce_dice_grad(net.forward(x), lab, w))
    params = net.params()
    names = sorted(params)
    analytic = np.concatenate([params[k].grad.ravel() for k in names])
    numeric = np.concatenate([numerical_grad(f, params[k].data).ravel() for k in names])
    assert rel_error(analytic, numeric) < 1e-6
    gx = net.backward(weighted_ce_dice_grad(net.forward(x), lab, w))
    assert rel_error(gx, numerical_grad(f, x)) < 1e-6


def test_rotate_direction_and_inverse():
    img = np.random.default_rng(0).random((9, 9))
    assert np.allclose(rotate(img, 90), np.rot90(img, 1), atol=1e-9)
    assert np.array_equal(rotate(img, 0), img)
    # off-centre smooth blob: the forward rotation moves it, the inverse brings it back
    rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    blob = np.exp(-((rr - 10.0) ** 2 + (cc - 19.0) ** 2) / (2 * 3.0 ** 2))
    moved = rotate(blob, 40)
    assert np.abs(moved - blob).max() > 0.5
    assert np.abs(rotate(moved, -40) - blob).max() < 0.05


def test_tta_identity_angle_equals_plain():
    net = UNet(TINY, seed=1)
    imgs = np.random.default_rng(2).normal(size=(3, 16, 16))
    plain = predict_proba(imgs, net)
    # equal up to the final renormalisation, which divides by a sum of 1 +- 1 ulp
    assert np.allclose(predict_tta(imgs, net, angles=(0.0,)), plain, rtol=0, atol=1e-15)
    assert np.allclose(predict_tta(imgs, net, angles=(0.0, 0.0, 0.0)), plain, rtol=0, atol=1e-15)


def test_tta_on_symmetric_input_with_constant_net():
    net = UNet(TINY, seed=1)
    head = net.head[0]
    head.weight.data[:] = 0.0
    head.bias.data[:] = [0.3, -0.2]
    img = _disk_image()
    plain = predict_proba(img, net)
    assert np.allclose(predict_tta(img, net), plain, atol=1e-12)


def test_tta_output_renormalised():
    net = UNet(TINY, seed=5)
    p = predict_tta(np.random.default_rng(0).normal(size=(2, 16, 16)), net)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_augment_transforms_image_and_label_together():
    case = generate(PhantomSpec(shape=(32, 32), endo_radius=5, epi_radius=9, frames=2))
    label = case.mask
    hyper = SegTrainConfig()
    for seed in range(5):
        im, lb = augment(label.astype(float), label, np.random.default_rng(seed), hyper)
        assert np.array_equal(im >= 0.5, lb)
        assert lb.any()


def test_normalize():
    x = normalize(np.random.default_rng(0).normal(3, 2, size=(2, 8, 8)))
    assert np.allclose(x.mean(axis=(1, 2)), 0) and np.allclose(x.std(axis=(1, 2)), 1)
    assert np.array_equal(normalize(np.ones((4, 4))), np.zeros((4, 4)))


def _tiny_data(n=4):
    imgs, labs = [], []
    for i in range(n):
        case = generate(PhantomSpec(shape=(16, 16), endo_radius=3, epi_radius=6, frames=2,
                                    seed=i, noise_sigma=0.02))
        imgs.append(case.images[0])
        labs.append(case.mask)
    return np.array(imgs), np.array(labs)


def test_zero_step_checkpoint_equals_init():
    x, y = _tiny_data(2)
    ck, rows = train_segnet(x, y, TINY, SegTrainConfig(steps=0, seed=7))
    ref = state_dict(UNet(TINY, seed=7))
    assert rows == [] and set(ck.state) == set(ref)
    assert all(np.array_equal(ck.state[k], ref[k]) for k in ref)


def test_training_deterministic_and_logged(tmp_path):
    x, y = _tiny_data(4)
    hyper = SegTrainConfig(steps=4, batch_size=2, seed=3, log_every=2)
    a, rows = train_segnet(x, y, TINY, hyper, x[:2], y[:2], log_path=tmp_path / "log.csv")
    b, _ = train_segnet(x, y, TINY, hyper)
    assert all(np.array_equal(a.state[k], b.state[k]) for k in a.state)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,val_dice" and len(lines) == 5
    assert rows[1]["val_dice"] is not None and rows[0]["val_dice"] is None


def test_training_reduces_loss():
    x, y = _tiny_data(4)
    _, rows = train_segnet(x, y, TINY, SegTrainConfig(steps=40, batch_size=4, lr=1e-2, augment=False))
    assert np.mean([r["loss"] for r in rows[-5:]]) < 0.5 * rows[0]["loss"]


def test_empty_or_mismatched_dataset_rejected():
    with pytest.raises(ValueError):
        train_segnet(np.zeros((0, 16, 16)), np.zeros((0, 16, 16), bool), TINY)
    with pytest.raises(ValueError):
        train_segnet(np.zeros((2, 16, 16)), np.zeros((3, 16, 16), bool), TINY)


def test_checkpoint_round_trip(tmp_path):
    x, y = _tiny_data(2)
    ck, _ = train_segnet(x, y, TINY, SegTrainConfig(steps=2, batch_size=2))
    ck.save(tmp_path / "seg.tosm")
    back = SegCheckpoint.load(tmp_path / "seg.tosm")
    assert back.config == TINY
    assert np.array_equal(predict_proba(x, back), predict_proba(x, ck))


def test_write_log_csv(tmp_path):
    write_log_csv(tmp_path / "l.csv", [{"step": 0, "loss": 1.5, "val_dice": None},
                                       {"step": 1, "loss": 1.25, "val_dice": 0.5}])
    assert (tmp_path / "l.csv").read_text().splitlines() == ["step,loss,val_dice", "0,1.5,",
                                                             "1,1.25,0.5"]
