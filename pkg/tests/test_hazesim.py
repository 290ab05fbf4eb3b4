import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossdehaze.hazesim import (
    DepthMap,
    HazeParams,
    apply_haze,
    gen_depth,
    sample_haze_params,
    synth_dataset,
    transmission_map,
)
from crossdehaze.imgdata import Image, gen_scene
from crossdehaze.rng import Rng

params_st = st.builds(
    HazeParams,
    st.tuples(*[st.floats(0.7, 1.0)] * 3),
    st.floats(0.0, 1.0),
    st.floats(0.05, 2.0),
)


def test_sample_ranges_and_mean():
    rng = Rng(11)
    draws = [sample_haze_params(rng) for _ in range(10_000)]
    t = np.array([p.transmission for p in draws])
    a = np.array([p.ambient for p in draws])
    s = np.array([p.thickness for p in draws])
    assert t.min() >= 0.25 and t.max() <= 0.65
    assert abs(t.mean() - 0.45) < 0.01
    assert a.min() >= 0.7 and a.max() <= 1.0
    assert s.min() >= 0.35 and s.max() <= 0.75
    again = [sample_haze_params(Rng(11)) for _ in range(1)]
    assert again[0] == draws[0]


def test_params_validation():
    with pytest.raises(ValueError):
        HazeParams((0.8, 0.8), 0.5, 0.5)
    with pytest.raises(ValueError):
        HazeParams((0.8, 0.8, 0.8), 1.5, 0.5)
    with pytest.raises(ValueError):
        HazeParams((0.8, 0.8, 0.8), 0.5, 0.0)


def test_apply_haze_examples(scene):
    full = apply_haze(scene, HazeParams((0.9, 0.8, 0.7), 1.0, 0.5))
    assert full == scene
    opaque = apply_haze(scene, HazeParams((0.9, 0.8, 0.7), 0.0, 0.5))
    assert np.allclose(opaque.data, np.array([0.9, 0.8, 0.7], dtype=np.float32)[:, None, None])
    half = apply_haze(Image.constant(4, 4, 0.5), HazeParams((1.0, 1.0, 1.0), 0.5, 0.5))
    assert np.all(half.data == np.float32(0.75))


def test_apply_haze_depth_mismatch(scene):
    d = DepthMap(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        apply_haze(scene, HazeParams((0.9, 0.9, 0.9), 0.5, 0.5), d)


def test_depth_mode_transmission():
    d = DepthMap(np.array([[0.0, 1.0]]))
    p = HazeParams((1.0, 1.0, 1.0), 0.5, 0.5)
    t = transmission_map(p, d)
    assert t[0, 0] == 1.0
    assert t[0, 1] == pytest.approx(np.exp(-1.5))
    big = HazeParams((1.0, 1.0, 1.0), 0.5, 5.0)
    assert transmission_map(big, d)[0, 1] == 0.05


def test_gen_depth_properties():
    d = gen_depth(Rng(4), 24, 24)
    assert d.values.min() == 0.0 and d.values.max() == 1.0
    assert np.array_equal(d.values, gen_depth(Rng(4), 24, 24).values)
    step = max(np.abs(np.diff(d.values, axis=0)).max(), np.abs(np.diff(d.values, axis=1)).max())
    assert step < 0.2


def test_synth_dataset_shape_and_bounds():
    ds, params = synth_dataset(Rng(2), 5, 16, 12, return_params=True)
    assert len(ds) == 5
    for pair, p in zip(ds, params):
        assert pair.hazy.shape == pair.clean.shape == (3, 12, 16)
        lo = (1 - p.transmission) * min(p.ambient)
        assert pair.hazy.data.min() >= lo - 1e-6
        for c in range(3):
            if p.ambient[c] >= pair.clean.data[c].mean():
                assert pair.hazy.data[c].mean() >= pair.clean.data[c].mean() - 1e-6


def test_synth_dataset_deterministic_and_threaded():
    a = synth_dataset(Rng(3), 6, 16, 16, "depth")
    b = synth_dataset(Rng(3), 6, 16, 16, "depth", workers=3)
    assert all(x.hazy == y.hazy and x.clean == y.clean for x, y in zip(a, b))
    assert [p.id for p in a] == ["00000", "00001", "00002", "00003", "00004", "00005"]
    with pytest.raises(ValueError):
        synth_dataset(Rng(3), 2, 16, 16, "fog")


def test_depth_mode_varies_spatially():
    ds, params = synth_dataset(Rng(8), 3, 24, 24, "depth", return_params=True)
    for pair, p in zip(ds, params):
        j = pair.clean.data.astype(np.float64)
        a = np.asarray(p.ambient)[:, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pair.hazy.data - a) / (j - a)
        t = t[np.abs(j - a) > 0.2]
        assert t.max() - t.min() > 0.05


@settings(max_examples=50, deadline=None)
@given(params_st, st.integers(0, 10_000))
def test_convex_combination_bounds(p, seed):
    j = gen_scene(Rng(seed), 8, 8, 2)
    out = apply_haze(j, p).data.astype(np.float64)
    a = np.asarray(p.ambient, dtype=np.float32).astype(np.float64)[:, None, None]
    jd = j.data.astype(np.float64)
    assert np.all(out >= np.minimum(jd, a) - 1e-6)
    assert np.all(out <= np.maximum(jd, a) + 1e-6)


@settings(max_examples=40, deadline=None)
@given(params_st, st.floats(0.0, 1.0), st.integers(0, 1000))
def test_affine_in_clean(p, alpha, seed):
    r = Rng(seed)
    j1, j2 = Image(r.uniform(0, 1, (3, 4, 4))), Image(r.uniform(0, 1, (3, 4, 4)))
    mix = Image(alpha * j1.data.astype(np.float64) + (1 - alpha) * j2.data.astype(np.float64))
    lhs = apply_haze(mix, p).data.astype(np.float64)
    rhs = alpha * apply_haze(j1, p).data.astype(np.float64) + (1 - alpha) * apply_haze(j2, p).data.astype(np.float64)
    assert np.allclose(lhs, rhs, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.floats(0.7, 1.0)] * 3), st.floats(0.25, 0.65), st.integers(0, 1000))
def test_inversion_oracle(ambient, t, seed):
    j = gen_scene(Rng(seed), 8, 8, 3)
    hazy = apply_haze(j, HazeParams(ambient, t, 0.5))
    a = np.asarray(ambient)[:, None, None]
    rec = (hazy.data.astype(np.float64) - a * (1 - t)) / t
    # float32 storage of the hazy image bounds the recovery error by ~ulp/t
    assert np.max(np.abs(rec - j.data)) < 1e-6 / t
