import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pipevolve.imagecore import (
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedMaxValueError,
    ImageFormatError,
    as_image,
    build_pyramid,
    from_perceptual,
    gaussian_kernel,
    quantize,
    read_image,
    read_mask,
    resize,
    to_perceptual,
    write_image,
    write_mask,
)


def ppm_bytes(w, h, payload, maxval=255, comment=False):
    head = b"P6\n" + (b"# made by hand\n" if comment else b"") + f"{w} {h}\n{maxval}\n".encode()
    return head + bytes(payload)


def test_read_two_pixel_p6(tmp_path):
    f = tmp_path / "a.ppm"
    f.write_bytes(ppm_bytes(2, 1, [255, 0, 0, 0, 0, 0]))
    img = read_image(f)
    assert img.shape == (1, 2, 3)
    assert img[0, 0].tolist() == [1.0, 0.0, 0.0]
    assert img[0, 1].tolist() == [0.0, 0.0, 0.0]


def test_header_comment_allowed(tmp_path):
    f = tmp_path / "c.ppm"
    f.write_bytes(ppm_bytes(1, 1, [10, 20, 30], comment=True))
    assert np.array_equal(quantize(read_image(f)), np.array([[[10, 20, 30]]], dtype=np.uint8))


@pytest.mark.parametrize(
    "raw, error",
    [
        (ppm_bytes(2, 2, [0] * 9), TruncatedPayloadError),
        (ppm_bytes(1, 1, [0] * 3, maxval=65535), UnsupportedMaxValueError),
        (b"P3\n1 1\n255\n0 0 0", MalformedHeaderError),
        (b"P6\n1 x\n255\n", MalformedHeaderError),
        (b"", MalformedHeaderError),
    ],
)
def test_parse_errors_are_distinct(tmp_path, raw, error):
    f = tmp_path / "bad.ppm"
    f.write_bytes(raw)
    with pytest.raises(error):
        read_image(f)


def test_quantization_rounds_half_away_from_zero():
    img = np.array([[[1.0, 0.5, 0.0]]])
    assert quantize(img).tolist() == [[[255, 128, 0]]]


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_byte_round_trip_is_exact(tmp_path_factory, data):
    d = tmp_path_factory.mktemp("rt")
    h, w = data.shape[:2]
    raw = ppm_bytes(w, h, data.tobytes())
    (d / "in.ppm").write_bytes(raw)
    write_image(read_image(d / "in.ppm"), d / "out.ppm")
    assert (d / "out.ppm").read_bytes() == raw


def test_float_round_trip_within_one_level(tmp_path):
    rng = np.random.default_rng(5)
    img = as_image(rng.random((7, 11, 3)))
    write_image(img, tmp_path / "x.ppm")
    back = read_image(tmp_path / "x.ppm")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_mask_io(tmp_path):
    f = tmp_path / "m.pgm"
    f.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 7]))
    assert read_mask(f).tolist() == [[0, 7]]
    mask = np.random.default_rng(1).integers(0, 20, (5, 6))
    write_mask(mask, tmp_path / "m2.pgm")
    assert np.array_equal(read_mask(tmp_path / "m2.pgm"), mask)


def test_mask_reader_rejects_p6(tmp_path):
    f = tmp_path / "a.ppm"
    f.write_bytes(ppm_bytes(1, 1, [0, 0, 0]))
    with pytest.raises(ImageFormatError):
        read_mask(f)


def test_perceptual_gray_and_red():
    gray = np.full((1, 1, 3), 0.3)
    assert np.allclose(to_perceptual(gray)[0, 0], [0.3, 0.5, 0.5])
    red = np.array([[[1.0, 0.0, 0.0]]])
    assert np.allclose(to_perceptual(red)[0, 0], [0.299, 1.0, 0.75])


def test_perceptual_inverse():
    rng = np.random.default_rng(2)
    img = rng.random((20, 20, 3))
    back = from_perceptual(to_perceptual(img, clamp=False), clamp=False)
    assert np.max(np.abs(back - img)) < 1e-6


def test_gaussian_kernel_support():
    assert len(gaussian_kernel(1.0)) == 7
    assert len(gaussian_kernel(2.0)) == 13
    assert gaussian_kernel(2.0).sum() == pytest.approx(1.0)


def test_constant_image_pyramid():
    pyr = build_pyramid(np.full((8, 8, 3), 0.4), 4)
    assert pyr.sizes == [(8, 8), (4, 4), (2, 2), (1, 1)]
    for level in pyr.levels:
        assert level.shape[2] == 4
        assert np.all(level[..., 3] == 0)
        for c in range(4):
            assert np.ptp(level[..., c]) < 1e-12


def test_step_edge_gradient_peaks_on_edge():
    img = np.zeros((8, 8, 3))
    img[:, 4:] = 1.0
    grad = build_pyramid(img, 1)[0][..., 3]
    # half central difference of a unit step: 0.5 on both sides of the edge
    assert np.allclose(grad[:, 3], 0.5) and np.allclose(grad[:, 4], 0.5)
    assert np.all(np.delete(grad, [3, 4], axis=1) == 0)


def test_pyramid_levels_must_be_positive():
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((4, 4, 3)), 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)),
              elements=st.floats(0, 1)))
def test_pyramid_values_stay_in_unit_range(data):
    for level in build_pyramid(data, 4).levels:
        assert np.all(np.isfinite(level))
        assert level.min() >= 0 and level.max() <= 1


def test_pyramid_is_deterministic():
    img = np.random.default_rng(3).random((9, 13, 3))
    a, b = build_pyramid(img, 3), build_pyramid(img, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.levels, b.levels))


def test_resize_identity_and_shape():
    img = np.random.default_rng(0).random((6, 8, 3))
    assert np.array_equal(resize(img, 8, 6), img)
    assert resize(img, 4, 3).shape == (3, 4, 3)


def test_as_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        as_image(np.full((2, 2, 3), 1.5))
