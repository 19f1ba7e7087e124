import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from segdense.data import annulus_mask, load_mask
from segdense.infer import (BACKGROUND, HIGH, LOW, binarize, confidence_bands, export_bands,
                            export_mask, export_overlay, fill_holes, largest_component, postprocess,
                            predict_mask, render_overlay, resize_mask_nearest)

from .oracles import bfs_components, postprocess_oracle

small_masks = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 1))


def test_binarize_examples():
    assert binarize(np.full((3, 3), 0.5)).tolist() == np.ones((3, 3), int).tolist()
    assert binarize(np.array([0.2, 0.7, 0.5, 0.49]), 0.5).tolist() == [0, 1, 1, 0]


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_binarize_threshold_range(t):
    with pytest.raises(ValueError):
        binarize(np.zeros(3), t)


@given(arrays(np.float64, (6, 7), elements=st.floats(0, 1)), st.floats(0.01, 0.99))
def test_binarize_idempotent(conf, t):
    m = binarize(conf, t)
    assert np.array_equal(binarize(m.astype(float), t), m)


def test_resize_nearest_to_original_resolution():
    rng = np.random.default_rng(0)
    m = (rng.random((224, 224)) < 0.5).astype(np.uint8)
    out = resize_mask_nearest(m, (640, 480))
    assert out.shape == (480, 640)
    assert set(np.unique(out).tolist()) <= {0, 1}
    assert np.array_equal(resize_mask_nearest(m, (224, 224)), m)
    assert resize_mask_nearest(np.ones((5, 9), np.uint8), (17, 3)).all()


def test_resize_nearest_hand_case():
    m = np.array([[1, 0], [0, 1]], np.uint8)
    assert resize_mask_nearest(m, (4, 4)).tolist() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]


def test_checkerboard_binarize_then_resize_stays_binary():
    yy, xx = np.mgrid[:224, :224]
    conf = np.where((yy + xx) % 2 == 0, 0.8, 0.2)
    out = resize_mask_nearest(binarize(conf), (640, 480))
    assert set(np.unique(out).tolist()) == {0, 1}


def test_postprocess_empty():
    assert not postprocess(np.zeros((20, 30), np.uint8)).any()


def test_postprocess_annulus_with_blob():
    ann = annulus_mask(60, 80, 30, 28, 8, 20).astype(np.uint8)
    noisy = ann.copy()
    noisy[2, 75:78] = 1
    expected = postprocess_oracle(noisy, max_hole_area=0)
    assert np.array_equal(expected, ann)
    assert np.array_equal(postprocess(noisy, max_hole_fraction=0.0), ann)
    # the default keeps the pupil open: its area far exceeds 0.1% of the image
    big = annulus_mask(480, 640, 320, 240, 50, 130).astype(np.uint8)
    big[5, 600:603] = 1
    assert np.array_equal(postprocess(big), annulus_mask(480, 640, 320, 240, 50, 130))


def test_postprocess_fills_pinhole():
    yy, xx = np.mgrid[:480, :640]
    disk = ((yy - 240) ** 2 + (xx - 320) ** 2 <= 100 ** 2).astype(np.uint8)
    holed = disk.copy()
    holed[240, 320] = 0
    assert np.array_equal(postprocess(holed), disk)
    assert np.array_equal(postprocess(holed, None), disk)
    small = disk[140:341, 220:421].copy()
    small_holed = holed[140:341, 220:421].copy()
    assert np.array_equal(postprocess_oracle(small_holed), small)


def test_fill_holes_area_limit():
    m = np.ones((9, 9), np.uint8)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = 0
    m[2, 2] = 0
    m[4:7, 4:7] = 0
    assert fill_holes(m, 1)[2, 2] == 1 and not fill_holes(m, 1)[5, 5]
    assert fill_holes(m).sum() == 49


def test_largest_component_tie_goes_to_first():
    m = np.zeros((5, 7), np.uint8)
    m[0, 0:2] = 1
    m[4, 5:7] = 1
    out = largest_component(m)
    assert out[0, 0] and not out[4, 6]


@settings(max_examples=150, deadline=None)
@given(small_masks, st.sampled_from([None, 0, 1, 3]))
def test_postprocess_matches_oracle(mask, area):
    frac = None if area is None else area / mask.size
    out = postprocess(mask, frac)
    assert np.array_equal(out, postprocess_oracle(mask, None if area is None else int(frac * mask.size)))
    assert len(bfs_components(out)) <= 1
    assert np.array_equal(postprocess(out, frac), out)


def test_confidence_bands():
    b = confidence_bands(np.array([0.1, 0.6, 0.95]))
    assert b.bands.tolist() == [BACKGROUND, LOW, HIGH]
    assert b.thresholds == (0.5, 0.9)
    assert (confidence_bands(np.array([0.3, 0.99, 0.999999]), 0.5, 1.0).bands != HIGH).all()
    with pytest.raises(ValueError):
        confidence_bands(np.zeros(2), 0.9, 0.9)


@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)))
def test_bands_union_is_binarized(conf):
    b = confidence_bands(conf, 0.4, 0.8).bands
    assert np.array_equal((b != BACKGROUND).astype(np.uint8), binarize(conf, 0.4))


def test_export_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    m = (rng.random((48, 64)) < 0.5).astype(np.uint8)
    p = export_mask(m, tmp_path / "m" / "a.png")
    assert np.array_equal(load_mask(p), m)
    assert set(np.unique(np.asarray(Image.open(p))).tolist()) <= {0, 255}


def test_overlay_and_bands_export(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, (48, 64)).astype(np.uint8)
    conf = np.tile(np.linspace(0, 1, 64), (48, 1))
    bands = confidence_bands(conf)
    ov = render_overlay(image, binarize(conf), bands)
    p = export_overlay(ov, tmp_path / "o.png")
    loaded = Image.open(p)
    assert loaded.mode == "RGB" and loaded.size == (64, 48)
    # low and high bands are tinted with two distinct colours
    low_px = render_overlay(np.zeros_like(image), None, bands)[bands.bands == LOW]
    high_px = render_overlay(np.zeros_like(image), None, bands)[bands.bands == HIGH]
    assert len({tuple(v) for v in low_px}) == 1 and len({tuple(v) for v in high_px}) == 1
    assert tuple(low_px[0]) != tuple(high_px[0])
    grey = np.asarray(Image.open(export_bands(bands, tmp_path / "b.png")))
    assert set(np.unique(grey).tolist()) == {0, 128, 255}


def test_overlay_upsamples_model_resolution_bands():
    image = np.full((480, 640), 90, np.uint8)
    bands = confidence_bands(np.full((224, 224), 0.95))
    assert render_overlay(image, None, bands).shape == (480, 640, 3)


def test_predict_mask_contract(tiny_model):
    rng = np.random.default_rng(3)
    image = rng.integers(0, 256, (480, 640)).astype(np.uint8)
    a = predict_mask(tiny_model, image)
    b = predict_mask(tiny_model, image, postprocess_mask=True)
    assert a.shape == b.shape == (480, 640)
    assert set(np.unique(a).tolist()) <= {0, 1}
    # zero-initialised heads give confidence 0.5 everywhere -> all foreground
    assert a.all()
    assert np.array_equal(a, predict_mask(tiny_model, image))
