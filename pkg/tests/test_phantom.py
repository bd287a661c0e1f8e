import json

import numpy as np
import pytest

from lvtos.phantom import (PhantomSpec, case_seed, generate, load_case, load_dataset, make_dataset,
                           randomized_spec, save_case, save_dataset, segment_weights, split)
from lvtos.pipeline import case_strain_matrix
from lvtos.segmat import baseline_tos
from lvtos.strain import ecc_from_field


def test_symmetric_case_gives_identical_rows():
    case = generate(PhantomSpec(noise_sigma=0.0))
    v = case_strain_matrix(case).values
    assert np.abs(v - v.mean(axis=0)).max() < 1e-3


def test_two_group_delays_split_by_baseline():
    delays = tuple([0.0] * 9 + [8.0] * 9)
    case = generate(PhantomSpec(delays=delays, noise_sigma=0.0))
    tos = baseline_tos(case_strain_matrix(case)).tos_frames
    assert np.all(np.abs(tos[:9] - 0) <= 1.0)
    assert np.all(np.abs(tos[9:] - 8) <= 1.0)


def test_generation_is_deterministic():
    spec = PhantomSpec(delays=tuple(np.linspace(0, 9, 18)), seed=42)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.field.u, b.field.u)
    assert not np.array_equal(a.images, generate(PhantomSpec(delays=spec.delays, seed=43)).images)


def test_ground_truth_equals_delays():
    delays = tuple(float(x) for x in np.random.default_rng(0).uniform(0, 12, 18))
    case = generate(PhantomSpec(delays=delays))
    assert np.array_equal(case.tos.tos_frames, delays)


def test_displacement_zero_before_onset():
    delays = tuple(float(x) for x in np.arange(18) % 6 * 2)
    spec = PhantomSpec(delays=delays, noise_sigma=0.0)
    case = generate(spec)
    phi = case.myo.relative_angles()[0]
    w = segment_weights(phi, spec.blend_deg)
    for s in range(18):
        region = w[s] == 1.0            # pixels owned by s alone (outside blending)
        for t in range(int(np.ceil(delays[s]))):
            if t <= delays[s]:
                assert np.all(case.field.u[t][region] == 0.0)


def test_onset_really_starts_at_delay():
    delays = tuple(float(4 + (s % 3) * 3) for s in range(18))
    case = generate(PhantomSpec(delays=delays, noise_sigma=0.0))
    sm = case_strain_matrix(case).values
    for s in range(18):
        d = int(delays[s])
        assert abs(sm[s, d - 1]) < 0.1 * abs(sm[s, -1])
    ecc = ecc_from_field(case.field, case.myo.centroid)
    assert ecc[-1][case.mask].mean() < 0


def test_segment_weights_partition_of_unity():
    phi = np.linspace(0, 2 * np.pi, 2000, endpoint=False)
    w = segment_weights(phi, 10.0)
    assert np.allclose(w.sum(axis=0), 1.0)
    assert np.all(w >= 0)


@pytest.mark.parametrize("field,kw", [
    ("endo_radius", {"endo_radius": 20.0}),
    ("delays", {"delays": (30.0,) * 18}),
    ("delays", {"delays": (0.0,) * 5}),
    ("eps_max", {"eps_max": 0.6}),
    ("center", {"center": (5.0, 5.0)}),
])
def test_invalid_spec_names_field(field, kw):
    with pytest.raises(ValueError, match=field):
        generate(PhantomSpec(**kw))


def test_spec_dict_round_trip():
    spec = randomized_spec(PhantomSpec(), 3, 7)
    assert PhantomSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    with pytest.raises(ValueError):
        PhantomSpec.from_dict({"nope": 1})


def test_singleton_dataset_matches_generate():
    cases, manifest = make_dataset(1, PhantomSpec(), seed=5)
    ref = generate(randomized_spec(PhantomSpec(), 5, 0))
    assert np.array_equal(cases[0].images, ref.images)
    assert manifest["cases"][0]["seed"] == case_seed(5, 0)


def test_dataset_delays_and_radii():
    base = PhantomSpec()
    cases, manifest = make_dataset(20, base, seed=1)
    delays = np.array([c["delays"] for c in manifest["cases"]])
    assert delays.min() >= 0 and delays.max() <= base.frames / 2
    assert len({tuple(d) for d in delays}) == 20
    endo = np.array([c["endo_radius"] for c in manifest["cases"]])
    assert np.all(np.abs(endo / base.endo_radius - 1) <= 0.1 + 1e-12)
    other, _ = make_dataset(3, base, seed=2)
    assert not np.array_equal(other[0].tos.tos_frames, cases[0].tos.tos_frames)


def test_split_80_20_disjoint():
    cases, manifest = make_dataset(10, PhantomSpec(frames=8), seed=0)
    tr, te = split(list(range(10)), manifest)
    assert len(tr) == 8 and len(te) == 2 and not set(tr) & set(te)


def test_parallel_generation_matches_serial():
    base = PhantomSpec(frames=6)
    a, _ = make_dataset(3, base, seed=9)
    b, _ = make_dataset(3, base, seed=9, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.images, y.images) and np.array_equal(x.field.u, y.field.u)


def test_case_and_dataset_persistence(tmp_path):
    cases, manifest = make_dataset(2, PhantomSpec(frames=6), seed=4)
    save_case(tmp_path / "one.tosm", cases[0])
    back = load_case(tmp_path / "one.tosm")
    assert np.array_equal(back.images, cases[0].images)
    assert np.array_equal(back.masks, cases[0].masks)
    assert np.array_equal(back.contraction, cases[0].contraction)
    assert back.spec == cases[0].spec
    save_dataset(tmp_path / "d", cases, manifest)
    first = {p.name: p.read_bytes() for p in (tmp_path / "d").iterdir()}
    save_dataset(tmp_path / "d", *make_dataset(2, PhantomSpec(frames=6), seed=4))
    assert first == {p.name: p.read_bytes() for p in (tmp_path / "d").iterdir()}
    loaded, m2 = load_dataset(tmp_path / "d")
    assert len(loaded) == 2 and m2 == manifest
