import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pipevolve.imagecore import from_perceptual, gaussian_blur, quantize, to_perceptual
from pipevolve.operators import (
    BUILTIN,
    CLASSICAL,
    OperatorError,
    StyleContext,
    adain_transfer,
    apply_adain,
    apply_cacti,
    apply_classical,
    apply_operator,
    apply_pipeline,
)

import synth

images = arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 10), st.just(3)),
                elements=st.floats(0, 1))


@pytest.fixture
def ctx():
    style, smask = synth.style_pair("night", 3, 16)
    _, cmask = synth.scene(3, 16)
    return StyleContext(style, smask, cmask, "night")


def test_darken_half():
    out = apply_classical("darken", np.full((1, 1, 3), 0.5))
    assert np.allclose(out, 0.35)


def test_brighten_clamps():
    out = apply_classical("brighten", np.full((1, 1, 3), 0.8))
    assert np.all(out == 1.0)


def test_contrast_constant_fixed_point():
    img = np.full((4, 4, 3), 0.37)
    assert np.allclose(apply_classical("contrast", img), img)


def test_contrast_pivot_is_mean_luminance():
    img = np.zeros((1, 2, 3))
    img[0, 1] = 1.0
    # mean luminance 0.5; 0 -> 0.5 - 0.75, 1 -> 0.5 + 0.75, both clamp
    out = apply_classical("contrast", img)
    assert out[0, 0].tolist() == [0, 0, 0] and out[0, 1].tolist() == [1, 1, 1]


def test_blur_preserves_constant():
    img = np.full((5, 7, 3), 0.6)
    assert np.allclose(apply_classical("blur", img), img)


def test_sharpen_is_unsharp_mask():
    img = synth.scene(1, 16)[0]
    expected = np.clip(2.0 * img - gaussian_blur(img, 2.0), 0, 1)
    assert np.allclose(apply_classical("sharpen", img), expected)


def test_normalize_self_match_within_one_bin():
    img = synth.scene(2, 16)[0]
    out = apply_classical("normalize", img, StyleContext(img))
    assert np.max(np.abs(out - img)) <= 1 / 255


def test_normalize_matches_reference_histogram():
    # four distinct source levels onto four distinct reference levels: exact match
    img = np.array([[[0.1, 0.9, 0.5], [0.2, 0.8, 0.6]], [[0.3, 0.7, 0.7], [0.4, 0.6, 0.8]]])
    ref = np.array([[[0.0, 0.1, 1.0], [0.5, 0.2, 0.9]], [[0.6, 0.3, 0.2], [1.0, 0.4, 0.3]]])
    out = apply_classical("normalize", img, StyleContext(ref))
    for c in range(3):
        src_order = np.argsort(img[..., c].ravel())
        assert np.array_equal(out[..., c].ravel()[src_order], np.sort(quantize(ref)[..., c].ravel()) / 255)


def test_normalize_is_monotone_onto_reference_levels():
    rng = np.random.default_rng(0)
    img, ref = rng.random((16, 16, 3)), rng.random((16, 16, 3)) ** 3
    out = apply_classical("normalize", img, StyleContext(ref))
    for c in range(3):
        order = np.argsort(img[..., c].ravel(), kind="stable")
        assert np.all(np.diff(out[..., c].ravel()[order]) >= 0)
        assert set(quantize(out)[..., c].ravel()) <= set(quantize(ref)[..., c].ravel())


def test_normalize_empty_style_errors():
    with pytest.raises(OperatorError):
        apply_classical("normalize", np.zeros((2, 2, 3)), StyleContext(np.zeros((0, 0, 3))))


def test_darken_after_brighten_without_clamping():
    img = np.random.default_rng(1).random((8, 8, 3)) * (2 / 3)
    out = apply_classical("darken", apply_classical("brighten", img))
    # factors 1.5 and 0.7 compose to 1.05, not 1
    assert np.allclose(out, np.clip(1.05 * img, 0, 1), atol=1e-12)


def test_adain_hand_example():
    x = np.array([[0.2], [0.4]])
    y = np.array([[0.4], [0.8]])  # mean 0.6, population std 0.2
    out = adain_transfer(x, y).ravel()
    assert np.allclose(out, [0.4, 0.8], atol=1e-5)


def test_adain_self_is_identity():
    img = synth.scene(4, 16)[0]
    perc = to_perceptual(img).reshape(-1, 3)
    pre_clamp = adain_transfer(perc, perc)
    assert np.max(np.abs(pre_clamp - perc)) < 1e-4
    assert np.max(np.abs(apply_adain(img, StyleContext(img)) - img)) < 1e-4


def test_adain_constant_channel_takes_style_mean():
    img = np.full((4, 4, 3), 0.5)  # perceptual chroma channels are constant 0.5
    style = synth.style_pair("rain", 0, 8)[0]
    out = to_perceptual(apply_adain(img, StyleContext(style)), clamp=False)
    mu = to_perceptual(style).reshape(-1, 3).mean(axis=0)
    assert np.allclose(out[..., 0], mu[0], atol=1e-9)


def test_cacti_single_class_equals_adain():
    img = synth.scene(5, 16)[0]
    style = synth.style_pair("fog", 5, 16)[0]
    one = np.zeros((16, 16), dtype=np.int64)
    a = apply_cacti(img, StyleContext(style, one, one))
    b = apply_adain(img, StyleContext(style))
    assert np.array_equal(a, b)


def test_cacti_per_class_regions():
    # 2x2 content: left column class 0, right column class 1
    content = np.array([[[0.1, 0.1, 0.1], [0.5, 0.5, 0.5]],
                        [[0.3, 0.3, 0.3], [0.9, 0.9, 0.9]]])
    cmask = np.array([[0, 1], [0, 1]])
    style = np.array([[[0.6, 0.6, 0.6], [0.2, 0.2, 0.2]],
                      [[0.8, 0.8, 0.8], [0.3, 0.3, 0.3]]])
    smask = np.array([[0, 1], [0, 1]])
    out = apply_cacti(content, StyleContext(style, smask, cmask))

    # independent per-region evaluation on the gray luminance channel
    def region(xs, ys):
        xs, ys = np.array(xs), np.array(ys)
        return ys.std() * (xs - xs.mean()) / (xs.std() + 1e-6) + ys.mean()

    left = region([0.1, 0.3], [0.6, 0.8])
    right = region([0.5, 0.9], [0.2, 0.3])
    assert np.allclose(out[:, 0, 0], left, atol=1e-6)
    assert np.allclose(out[:, 1, 0], right, atol=1e-6)
    assert np.allclose(out[..., 0], out[..., 1], atol=1e-6)  # stays gray


def test_cacti_falls_back_to_global_stats():
    content = synth.scene(6, 8)[0]
    style = synth.style_pair("snow", 6, 8)[0]
    cmask = np.zeros((8, 8), dtype=np.int64)
    cmask[:, 4:] = 9  # class absent from the style mask
    smask = np.zeros((8, 8), dtype=np.int64)
    out = apply_cacti(content, StyleContext(style, smask, cmask))
    x = to_perceptual(content).reshape(-1, 3)
    y = to_perceptual(style).reshape(-1, 3)
    glob = from_perceptual(adain_transfer(x, y).reshape(8, 8, 3))
    assert np.allclose(out[:, 4:], glob[:, 4:])


def test_cacti_without_masks_errors():
    img = np.zeros((2, 2, 3))
    with pytest.raises(OperatorError):
        apply_cacti(img, StyleContext(img))


@settings(max_examples=25, deadline=None)
@given(images, st.sampled_from(BUILTIN))
def test_operators_keep_images_valid_and_deterministic(img, op):
    h, w = img.shape[:2]
    style = synth.style_pair("day", 1, 6)[0]
    smask = synth.style_pair("day", 1, 6)[1]
    ctx = StyleContext(style, smask, np.zeros((h, w), dtype=np.int64))
    a = apply_operator(op, img, ctx)
    b = apply_operator(op, img, ctx)
    assert a.shape == img.shape
    assert np.all(np.isfinite(a)) and a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, b)


def test_stop_is_never_applied():
    with pytest.raises(ValueError):
        apply_operator("stop", np.zeros((1, 1, 3)), None)


def test_unknown_operator():
    with pytest.raises(OperatorError):
        apply_operator("controlnet", np.zeros((1, 1, 3)), StyleContext(np.zeros((1, 1, 3))))


def test_pipeline_applies_in_order(ctx):
    img = synth.scene(3, 16)[0]
    manual = apply_classical("sharpen", apply_classical("darken", img))
    assert np.array_equal(apply_pipeline(("darken", "sharpen"), img, ctx), manual)
    assert np.array_equal(apply_pipeline((), img, ctx), img)


def test_classical_set():
    assert CLASSICAL == ("normalize", "blur", "brighten", "darken", "contrast", "sharpen")
