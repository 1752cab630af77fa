import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from handuse.core import BoundingBox, DataError, FrameImage, ModelError, PipelineConfig
from handuse.features import (FEATURE_DIM, PcaModel, RegionTriple, assemble, bhattacharyya_distance,
                              colour_distances, flow_difference, flow_histograms, hog_raw, hs_histogram,
                              observation_features, pca_fit, pca_project)
from handuse.flow import dense_flow
from handuse.imaging import rgb_to_hsv, to_gray
from handuse.synth import translated_pair

CFG = PipelineConfig()
H, W = 120, 160
BOX = BoundingBox(60, 40, 40, 30)


def hand_mask(box=BOX):
    m = np.zeros((box.h, box.w), bool)
    m[8:22, 10:30] = True
    return m


def regions(box=BOX):
    return RegionTriple.from_box(H, W, box, hand_mask(box))


# -- regions -----------------------------------------------------------------

@given(st.integers(0, 140), st.integers(0, 100), st.integers(4, 20), st.integers(4, 20))
def test_regions_partition_the_frame(x, y, w, h):
    box = BoundingBox(x, y, w, h)
    if not box.within(W, H):
        return
    m = np.zeros((h, w), bool)
    m[: h // 2, : w // 2] = True
    r = RegionTriple.from_box(H, W, box, m)
    total = r.hand.astype(int) + r.neighbourhood + r.background
    assert np.all(total == 1)
    assert r.hand.sum() == m.sum()


# -- motion ------------------------------------------------------------------

def test_zero_flow_puts_all_mass_in_the_first_bins():
    pairs, valid = flow_histograms(np.zeros((H, W, 2)), regions(), CFG)
    assert valid
    for mag, direction in pairs:
        assert mag[0] == 1.0 and mag[1:].sum() == 0
        assert direction[0] == 1.0 and direction[1:].sum() == 0


def test_uniform_shift_field_gives_zero_hand_minus_box_difference():
    flow = np.zeros((H, W, 2))
    flow[..., 0] = 2.5
    flow[..., 1] = -1.0
    diff = flow_difference(flow_histograms(flow, regions(), CFG)[0])
    assert np.abs(diff[:30]).max() < 1e-6


def test_translated_frames_give_near_zero_hand_minus_box_difference(rng):
    a, b = translated_pair(rng, (H, W), (3, 0))
    flow = dense_flow(to_gray(a), to_gray(b))
    diff = flow_difference(flow_histograms(flow, regions(), CFG)[0])
    assert np.abs(diff[:30]).max() < 1e-3


def test_moving_hand_over_static_box_shows_in_first_vector():
    flow = np.zeros((H, W, 2))
    r = regions()
    flow[r.hand] = (3.0, 0.0)
    diff = flow_difference(flow_histograms(flow, r, CFG)[0])
    assert np.abs(diff[:30]).sum() > 0.5
    assert np.abs(diff[30:]).sum() < 1e-12


def test_moving_box_over_static_background_shows_in_second_vector():
    """A held object moves the whole box region (hand and neighbourhood) while the background stays put."""
    flow = np.zeros((H, W, 2))
    ys, xs = BOX.slices()
    flow[ys, xs] = (0.0, -2.0)
    diff = flow_difference(flow_histograms(flow, regions(), CFG)[0])
    assert np.abs(diff[30:]).sum() > 0.5


def test_magnitude_bins_are_linear_up_to_the_cap_and_open_above():
    cap = CFG.flow_mag_cap_frac * math.hypot(W, H)  # 10 px
    flow = np.zeros((H, W, 2))
    r = regions()
    flow[r.hand] = (-(cap / 15) * 2.5, 0.0)  # middle of bin 2, pointing left (0 degrees)
    flow[r.neighbourhood] = (-3 * cap, 0.0)  # far above the cap
    (hm, hd), (nm, nd), _ = flow_histograms(flow, r, CFG)[0]
    assert hm[2] == 1.0 and nm[14] == 1.0
    assert hd[0] == 1.0


def test_direction_bins_follow_the_angle_convention():
    flow = np.zeros((H, W, 2))
    r = regions()
    flow[r.hand] = (0.0, 2.0)  # downwards: 270 degrees -> bin 11 of 15
    (hm, hd), _, _ = flow_histograms(flow, r, CFG)[0]
    assert hd[11] == 1.0


def test_empty_region_marks_flow_invalid():
    box = BoundingBox(0, 0, W, H)  # no background left
    r = RegionTriple.from_box(H, W, box, np.ones((H, W), bool))
    pairs, valid = flow_histograms(np.zeros((H, W, 2)), r, CFG)
    assert not valid
    assert not pairs[1][0].any() and not pairs[2][0].any()


@settings(max_examples=25)
@given(arrays(np.float64, (H, W, 2), elements=st.floats(-20, 20)))
def test_flow_differences_lie_in_unit_range(flow):
    diff = flow_difference(flow_histograms(flow, regions(), CFG)[0])
    assert diff.shape == (60,)
    assert np.all(diff >= -1) and np.all(diff <= 1)


# -- shape -------------------------------------------------------------------

def test_hog_of_constant_crop_is_zero():
    img = np.full((H, W, 3), 90, np.uint8)
    v = hog_raw(FrameImage(0, img), BOX, CFG)
    assert v.shape == (960,) and not v.any()


def test_vertical_stripes_put_mass_in_the_horizontal_gradient_bin():
    xx = np.arange(128)
    row = 0.5 + 0.4 * np.sin(2 * np.pi * xx / 16)
    gray = np.tile(row, (48, 1))
    v = hog_raw(gray, BoundingBox(0, 0, 128, 48), CFG).reshape(96, 10)
    assert np.all(np.argmax(v, axis=1) == 0)
    assert np.all(v[:, 0] > 0.9)


@pytest.mark.parametrize("box", [BoundingBox(0, 0, 8, 8), BoundingBox(10, 5, 150, 100), BoundingBox(100, 90, 60, 30)])
def test_hog_length_is_960(box, rng):
    img = rng.integers(0, 255, (H, W, 3)).astype(np.uint8)
    assert hog_raw(FrameImage(0, img), box, CFG).shape == (960,)


def test_degenerate_box_gives_no_hog():
    img = np.zeros((H, W, 3), np.uint8)
    assert hog_raw(FrameImage(0, img), BoundingBox(155, 0, 20, 20), CFG) is None  # 5 px after clipping


def test_hog_cells_are_unit_normalised(rng):
    img = rng.integers(0, 255, (H, W, 3)).astype(np.uint8)
    v = hog_raw(FrameImage(0, img), BOX, CFG).reshape(96, 10)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-9)


@settings(max_examples=20)
@given(st.floats(-0.3, 0.3))
def test_hog_ignores_a_constant_intensity_offset(offset):
    rng = np.random.default_rng(0)
    gray = 0.35 + 0.3 * rng.random((H, W))
    a = hog_raw(gray, BOX, CFG)
    b = hog_raw(gray + offset, BOX, CFG)
    assert np.allclose(a, b, atol=1e-9, rtol=0)


# -- PCA ---------------------------------------------------------------------

def subspace_data(rng, n, rank, dim=960):
    basis = np.linalg.qr(rng.normal(size=(dim, rank)))[0].T
    return rng.normal(size=(n, rank)) * np.linspace(3, 1, rank) @ basis + rng.normal(size=dim)


def test_three_dim_subspace_leaves_other_components_empty(rng):
    model = pca_fit(subspace_data(rng, 100, 3), 60)
    assert np.all(model.explained_variance[3:] < 1e-9)
    assert np.all(model.explained_variance[:3] > 0.1)


def test_duplicated_samples_give_the_same_model(rng):
    X = subspace_data(rng, 80, 70)
    a = pca_fit(X, 60)
    b = pca_fit(np.vstack([X, X]), 60)
    assert np.allclose(a.mean, b.mean, atol=1e-12)
    assert np.allclose(a.components, b.components, atol=1e-9)
    assert np.allclose(a.explained_variance, b.explained_variance, rtol=1e-9)


def test_rank_60_data_reconstructs_exactly(rng):
    X = subspace_data(rng, 120, 60)
    model = pca_fit(X, 60)
    back = pca_project(model, X[5]) @ model.components + model.mean
    assert np.abs(back - X[5]).max() < 1e-6


def test_components_are_orthonormal_sorted_and_signed(rng):
    model = pca_fit(rng.normal(size=(150, 960)), 60)
    assert model.components.shape == (60, 960)
    assert np.allclose(model.components @ model.components.T, np.eye(60), atol=1e-6)
    assert np.all(np.diff(model.explained_variance) <= 1e-12)
    idx = np.argmax(np.abs(model.components), axis=1)
    assert np.all(model.components[np.arange(60), idx] > 0)


def test_projection_of_mean_and_axis(rng):
    model = pca_fit(rng.normal(size=(100, 960)), 60)
    assert np.abs(pca_project(model, model.mean)).max() < 1e-12
    e = pca_project(model, model.mean + model.components[0])
    assert e[0] == pytest.approx(1.0) and np.abs(e[1:]).max() < 1e-9


@settings(max_examples=20)
@given(st.integers(0, 1000))
def test_projection_is_affine(seed):
    rng = np.random.default_rng(seed)
    model = pca_fit(np.random.default_rng(1).normal(size=(80, 960)), 60)
    a, b = rng.normal(size=960), rng.normal(size=960)
    lhs = pca_project(model, a + b)
    rhs = pca_project(model, a) + pca_project(model, b) + pca_project(model, np.zeros(960)) * -1
    assert np.abs(lhs - rhs).max() < 1e-9


def test_pca_errors(rng):
    with pytest.raises(DataError):
        pca_fit(rng.normal(size=(59, 960)), 60)
    model = pca_fit(rng.normal(size=(60, 960)), 60)
    with pytest.raises(DataError):
        pca_project(model, np.zeros(959))
    with pytest.raises(ModelError):
        pca_project(None, np.zeros(960))


def test_pca_file_round_trip(tmp_path, rng):
    model = pca_fit(rng.normal(size=(70, 960)), 60)
    p = tmp_path / "p.hpca"
    model.save(p)
    raw = p.read_bytes()
    assert raw[:4] == b"HPCA" and len(raw) == 16 + 8 * (960 + 60 * 960 + 60)
    back = PcaModel.load(p)
    assert np.array_equal(back.components, model.components) and np.array_equal(back.mean, model.mean)
    model.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert len(lines) == 62 and lines[1].startswith("mean,")
    with pytest.raises(ModelError):
        PcaModel.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ModelError):
        PcaModel.from_bytes(raw[:-8])


# -- colour ------------------------------------------------------------------

def test_identical_histograms_are_at_distance_zero(rng):
    p = rng.random(256)
    p /= p.sum()
    assert bhattacharyya_distance(p, p.copy()) == 0.0


def test_disjoint_histograms_are_at_distance_one():
    p = np.zeros(256)
    q = np.zeros(256)
    p[:10] = 0.1
    q[100] = 1.0
    assert bhattacharyya_distance(p, q) == 1.0


def test_half_overlap_closed_form():
    p = np.array([0.5, 0.5, 0, 0])
    q = np.array([1.0, 0, 0, 0])
    assert bhattacharyya_distance(p, q) == pytest.approx(math.sqrt(1 - math.sqrt(0.5)), abs=1e-12)
    assert bhattacharyya_distance(p, q) == pytest.approx(0.541, abs=1e-3)


@given(arrays(np.float64, 16, elements=st.floats(0, 1)), arrays(np.float64, 16, elements=st.floats(0, 1)))
def test_distance_matches_the_coefficient_form(p, q):
    if p.sum() == 0 or q.sum() == 0:
        return
    p, q = p / p.sum(), q / q.sum()
    d = bhattacharyya_distance(p, q)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(math.sqrt(max(0.0, 1 - np.sum(np.sqrt(p * q)))), abs=1e-6)


def test_same_coloured_regions_give_zero_distances():
    img = np.zeros((H, W, 3), np.uint8)
    img[:] = (200, 40, 40)
    d1, d2, valid = colour_distances(rgb_to_hsv(img), regions(), CFG)
    assert valid and d1 < 1e-9 and d2 < 1e-9


def test_hand_colour_unlike_box_colour():
    img = np.zeros((H, W, 3), np.uint8)
    img[:] = (0, 0, 255)
    r = regions()
    img[r.hand] = (255, 0, 0)
    d1, d2, valid = colour_distances(rgb_to_hsv(img), r, CFG)
    assert d1 == 1.0 and d2 < 1e-9


def test_empty_region_gives_distance_one_and_invalid():
    img = np.zeros((H, W, 3), np.uint8)
    r = RegionTriple.from_box(H, W, BoundingBox(0, 0, W, H), np.ones((H, W), bool))
    d1, d2, valid = colour_distances(rgb_to_hsv(img), r, CFG)
    assert d1 == 1.0 and d2 == 1.0 and not valid


def test_hs_histogram_ignores_value(rng):
    hsv = rgb_to_hsv(rng.integers(0, 255, (20, 20, 3)).astype(np.uint8))
    darker = hsv.copy()
    darker[..., 2] *= 0.5
    region = np.ones((20, 20), bool)
    assert np.array_equal(hs_histogram(hsv, region, CFG), hs_histogram(darker, region, CFG))


# -- assembly ----------------------------------------------------------------

def test_assembly_order_and_length():
    f = assemble(np.arange(60), np.arange(60, 120), [120, 121])
    assert f.valid and f.vector.shape == (FEATURE_DIM,) == (122,)
    assert np.array_equal(f.vector, np.arange(122))


def test_all_zero_parts_make_a_valid_zero_feature():
    f = assemble(np.zeros(60), np.zeros(60), np.zeros(2))
    assert f.valid and not f.vector.any()


@pytest.mark.parametrize("flags", [(False, True, True), (True, False, True), (True, True, False), False])
def test_any_invalid_part_invalidates_the_feature(flags):
    assert not assemble(np.zeros(60), np.zeros(60), np.zeros(2), flags).valid


def test_wrong_part_length_is_an_error():
    with pytest.raises(DataError):
        assemble(np.zeros(59), np.zeros(60), np.zeros(2))


def test_observation_features_end_to_end(rng):
    a, b = translated_pair(rng, (H, W), (2, 1))
    frame = FrameImage(1, b)
    flow = dense_flow(to_gray(a), to_gray(b))
    raw = observation_features(frame, flow, rgb_to_hsv(b), BOX, hand_mask(), CFG)
    assert raw.valid and raw.hog.shape == (960,) and raw.flow_diff.shape == (60,)
    model = pca_fit(rng.normal(size=(60, 960)), 60)
    feat = raw.finish(model)
    assert feat.valid and feat.vector.shape == (122,)
    assert 0 <= feat.colour_dist.min() and feat.colour_dist.max() <= 1
