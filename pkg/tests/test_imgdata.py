import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossdehaze.imgdata import (
    ChannelCountError,
    Dataset,
    Image,
    MalformedHeaderError,
    Pair,
    TruncatedPayloadError,
    channel_mean,
    crop,
    gen_scene,
    is_dataset_dir,
    load_dataset,
    load_image,
    quantize_8bit,
    save_dataset,
    save_image,
)
from crossdehaze.rng import Rng


def unit_arrays(max_side=6):
    shape = st.tuples(st.just(3), st.integers(1, max_side), st.integers(1, max_side))
    return arrays(np.float32, shape, elements=st.floats(0.0, 1.0, width=32))


# --- Image invariants


def test_image_rejects_bad_shape_and_values():
    with pytest.raises(ValueError):
        Image(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        Image(np.full((3, 2, 2), np.nan))
    with pytest.raises(ValueError):
        Image(np.full((3, 2, 2), 1.5))


def test_image_is_read_only_and_clamped_constructor():
    img = Image.clamped(np.array([[[-0.5, 2.0]], [[0.2, 0.3]], [[np.inf, np.nan]]]))
    assert img.data.min() >= 0 and img.data.max() <= 1
    assert img.data.size == img.width * img.height * 3
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 0.5


# --- PPM


def _ppm(tmp_path, body, header=b"P6\n1 1\n255\n"):
    p = tmp_path / "x.ppm"
    p.write_bytes(header + body)
    return p


def test_ppm_red_pixel(tmp_path):
    img = load_image(_ppm(tmp_path, bytes([255, 0, 0])))
    assert img.shape == (3, 1, 1)
    assert img.data[:, 0, 0].tolist() == [1.0, 0.0, 0.0]


def test_ppm_gray_128(tmp_path):
    img = load_image(_ppm(tmp_path, bytes([128, 128, 128])))
    assert np.allclose(img.data, np.float32(128 / 255))
    assert abs(float(img.data[0, 0, 0]) - 0.50196) < 1e-5


def test_ppm_header_comments_and_errors(tmp_path):
    img = load_image(_ppm(tmp_path, bytes([1, 2, 3]), b"P6\n# comment\n1 1\n255\n"))
    assert img.data[2, 0, 0] == np.float32(3 / 255)
    with pytest.raises(MalformedHeaderError):
        load_image(_ppm(tmp_path, bytes(3), b"P6\n1 1\n65535\n"))
    with pytest.raises(MalformedHeaderError):
        load_image(_ppm(tmp_path, bytes(3), b"P6\nx 1\n255\n"))
    with pytest.raises(TruncatedPayloadError):
        load_image(_ppm(tmp_path, bytes(2)))
    with pytest.raises(ChannelCountError):
        load_image(_ppm(tmp_path, bytes(1), b"P5\n1 1\n255\n"))
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.ppm")


def test_ppm_quantisation_rule():
    assert quantize_8bit(np.array([1.0]))[0] == 255
    assert quantize_8bit(np.array([0.5]))[0] == 128  # 127.5 rounds half away from zero
    assert quantize_8bit(np.array([0.0]))[0] == 0


def test_ppm_roundtrip_error_bound(tmp_path, rng):
    img = Image(rng.uniform(0, 1, size=(3, 5, 7)))
    save_image(img, tmp_path / "a.ppm")
    back = load_image(tmp_path / "a.ppm")
    assert np.max(np.abs(back.data.astype(np.float64) - img.data)) <= 1 / 510 + 1e-6
    # already on the 8-bit grid: exact
    save_image(back, tmp_path / "b.ppm")
    assert load_image(tmp_path / "b.ppm") == back


# --- IMGF


def test_imgf_exact_value(tmp_path):
    img = Image.constant(2, 3, 0.123456791)
    save_image(img, tmp_path / "a.imgf")
    back = load_image(tmp_path / "a.imgf")
    assert back == img
    assert back.data[0, 0, 0] == np.float32(0.123456791)


def test_imgf_layout(tmp_path):
    arr = np.arange(3 * 2 * 4, dtype=np.float32).reshape(3, 2, 4) / 24
    save_image(Image(arr), tmp_path / "a.imgf")
    raw = (tmp_path / "a.imgf").read_bytes()
    assert raw.startswith(b"IMGF1\n4 2\n")
    body = np.frombuffer(raw[len(b"IMGF1\n4 2\n"):], dtype="<f4")
    assert np.array_equal(body, arr.ravel())  # planar, row-major


def test_imgf_errors(tmp_path):
    p = tmp_path / "x.imgf"
    p.write_bytes(b"IMGF1\n2 2\n" + bytes(4 * 4 * 2))
    with pytest.raises(ChannelCountError):
        load_image(p)
    p.write_bytes(b"IMGF1\n2 2\n" + bytes(4 * 4 * 3 - 1))
    with pytest.raises(TruncatedPayloadError):
        load_image(p)
    p.write_bytes(b"IMGF1\n2\n" + bytes(48))
    with pytest.raises(MalformedHeaderError):
        load_image(p)
    p.write_bytes(b"JUNK")
    with pytest.raises(MalformedHeaderError):
        load_image(p)


@settings(max_examples=40, deadline=None)
@given(unit_arrays())
def test_imgf_roundtrip_property(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "a.imgf"
    img = Image(arr)
    save_image(img, path)
    assert load_image(path) == img


# --- gen_scene


def test_gen_scene_deterministic_and_bounded():
    a = gen_scene(Rng(5), 20, 16, 6)
    b = gen_scene(Rng(5), 20, 16, 6)
    assert a == b
    assert a.data.min() >= 0 and a.data.max() <= 1
    assert a.shape == (3, 16, 20)
    assert gen_scene(Rng(6), 20, 16, 6) != a


def test_gen_scene_complexity_zero_has_variance():
    img = gen_scene(Rng(3), 24, 24, 0)
    assert all(float(np.var(img.data[c])) > 0 for c in range(3))


def test_gen_scene_minimum_size():
    with pytest.raises(ValueError):
        gen_scene(Rng(0), 4, 16)


# --- channel_mean / crop


def test_channel_mean_examples(scene):
    assert channel_mean(Image.constant(3, 3, 0.3), "R") == pytest.approx(0.3, abs=1e-7)
    two = Image(np.array([[[0.0, 1.0]]] * 3))
    assert channel_mean(two, "G") == 0.5
    for c in range(3):
        brute = math.fsum(float(v) for v in scene.data[c].ravel()) / (scene.width * scene.height)
        assert abs(channel_mean(scene, c) - brute) < 1e-7
    with pytest.raises(ValueError):
        channel_mean(scene, "A")


@settings(max_examples=40, deadline=None)
@given(unit_arrays(), st.floats(0.0, 1.0))
def test_channel_mean_linear(arr, a):
    img = Image(arr)
    scaled = Image(arr.astype(np.float64) * a)
    for c in range(3):
        assert channel_mean(scaled, c) == pytest.approx(a * channel_mean(img, c), abs=1e-6)


def test_crop_examples(scene):
    assert crop(scene, 0, 0, scene.width, scene.height) == scene
    const = Image.constant(6, 5, 0.4)
    assert crop(const, 1, 2, 3, 2) == Image.constant(3, 2, 0.4)
    ramp = Image(np.tile(np.arange(16, dtype=np.float32).reshape(1, 4, 4) / 15, (3, 1, 1)))
    inner = crop(ramp, 1, 1, 2, 2)
    assert (inner.data[0] * 15).round().ravel().tolist() == [5, 6, 9, 10]
    with pytest.raises(ValueError):
        crop(scene, 20, 0, 10, 2)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_crop_composition(data):
    w, h = data.draw(st.integers(2, 12)), data.draw(st.integers(2, 12))
    img = Image(np.random.default_rng(w * 13 + h).uniform(0, 1, size=(3, h, w)))
    w1, h1 = data.draw(st.integers(1, w)), data.draw(st.integers(1, h))
    x1, y1 = data.draw(st.integers(0, w - w1)), data.draw(st.integers(0, h - h1))
    w2, h2 = data.draw(st.integers(1, w1)), data.draw(st.integers(1, h1))
    x2, y2 = data.draw(st.integers(0, w1 - w2)), data.draw(st.integers(0, h1 - h2))
    assert crop(crop(img, x1, y1, w1, h1), x2, y2, w2, h2) == crop(img, x1 + x2, y1 + y2, w2, h2)


# --- Pair / Dataset


def test_pair_and_dataset_invariants():
    a, b = Image.constant(4, 4, 0.1), Image.constant(5, 4, 0.1)
    with pytest.raises(ValueError):
        Pair("x", a, b, "synthetic")
    with pytest.raises(ValueError):
        Pair("x", a, a, "unknown")
    p = Pair("x", a, a, "synthetic")
    with pytest.raises(ValueError):
        Dataset([p, p])


@pytest.mark.parametrize("fmt", ["imgf", "ppm"])
def test_dataset_roundtrip(tmp_path, small_ds, fmt):
    manifest = save_dataset(small_ds, tmp_path / "d", fmt)
    assert manifest.name == "manifest.csv" and is_dataset_dir(tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert [p.id for p in back] == [p.id for p in small_ds]
    assert {p.provenance for p in back} == {"synthetic"}
    if fmt == "imgf":
        assert all(x.hazy == y.hazy and x.clean == y.clean for x, y in zip(back, small_ds))
    header = manifest.read_text().splitlines()[0]
    assert header == "id,hazy_path,clean_path,provenance"


def test_load_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.csv").write_text("id,hazy_path\n")
    with pytest.raises(ValueError):
        load_dataset(tmp_path)
