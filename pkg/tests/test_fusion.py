import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import DataError
from fusion import (DecisionMask, FusionConfig, apply_mask, apply_masks, decide, fuse_images,
                    render_mask, select, weighted_scores)
from imaging import generate_focal_series, generate_multifocus, region_half_plane, region_wedges
from metrics import mask_accuracy, mse
from sparse_coding import Dictionary, SparseCode, omp_encode
from tv_reconstruction import TvParams

from conftest import make_texture


def code(length, entries):
    support = tuple(entries)
    return SparseCode(length, support, tuple(entries[i] for i in support), 0.0)


def test_weighted_scores_example():
    first = code(4, {0: 1.0})
    second = code(4, {2: 1.0})
    winner, scores = select([first, second], omega=0.54)
    assert winner == 0
    np.testing.assert_allclose(scores, [0.54, 0.46])


def test_half_weight_reduces_to_max_l1():
    first = code(4, {0: 0.2, 3: 0.3})
    second = code(4, {1: -0.6})
    winner, scores = select([first, second], omega=0.5)
    assert winner == 1
    np.testing.assert_allclose(scores, [0.25, 0.3])


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4),
       st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4),
       st.floats(0.01, 100), st.floats(0.5, 0.99))
def test_selection_invariant_to_common_positive_scaling(a, b, scale, omega):
    first = code(4, dict(enumerate(a)))
    second = code(4, dict(enumerate(b)))
    winner, scores = select([first, second], omega)
    scaled_first = code(4, {i: v * scale for i, v in enumerate(a)})
    scaled_second = code(4, {i: v * scale for i, v in enumerate(b)})
    scaled_winner, scaled_scores = select([scaled_first, scaled_second], omega)
    np.testing.assert_allclose(scaled_scores, scores * scale, rtol=1e-9, atol=1e-12)
    if abs(scores[0] - scores[1]) > 1e-9 * max(1.0, scores.max()):
        assert scaled_winner == winner


def test_ties_pick_lowest_index_and_permutation():
    same = code(4, {1: 0.5})
    assert select([same, same, same], 0.6)[0] == 0
    weak, strong = code(4, {0: 0.1}), code(4, {0: 0.9})
    assert select([weak, strong], 0.6)[0] == 1
    assert select([strong, weak], 0.6)[0] == 0


def test_larger_omega_widens_gap_for_focused_code():
    focused = code(4, {0: 0.8, 2: 0.1})
    blurred = code(4, {1: 0.2, 3: 0.7})
    gaps = [np.subtract(*select([focused, blurred], w)[1]) for w in (0.5, 0.6, 0.8, 0.95)]
    assert np.all(np.diff(gaps) >= 0)


def test_select_validation():
    with pytest.raises(DataError):
        select([code(4, {}), code(4, {})], omega=1.0)
    with pytest.raises(DataError):
        select([code(4, {}), code(4, {})], omega=0.4)
    with pytest.raises(DataError):
        select([code(4, {}), code(6, {})], omega=0.6)
    with pytest.raises(DataError):
        FusionConfig(omega=0.3)


def test_apply_mask_copies_verbatim():
    patches = [np.arange(4.0), np.ones(4)]
    assert apply_mask(0, patches) is patches[0]
    with pytest.raises(DataError):
        apply_mask(2, patches)


def test_select_scores_match_batched_weighted_scores():
    codes = [code(6, {0: 0.5, 4: -0.25}), code(6, {2: 0.1, 3: 0.9}), code(6, {})]
    _, scores = select(codes, omega=0.7)
    focused = np.array([0.5, 0.1, 0.0])
    blurred = np.array([0.25, 0.9, 0.0])
    np.testing.assert_allclose(scores, weighted_scores(focused, blurred, 0.7))
    grid = weighted_scores(np.tile(focused, (4, 1)), np.tile(blurred, (4, 1)), 0.7)
    np.testing.assert_allclose(grid, np.tile(scores, (4, 1)))


def test_apply_masks_picks_one_source_row_per_anchor():
    patches = np.stack([np.zeros((3, 4)), np.ones((3, 4)), np.full((3, 4), 2.0)])
    chosen = apply_masks(np.array([2, 0, 1]), patches)
    np.testing.assert_array_equal(chosen[:, 0], [2.0, 0.0, 1.0])
    for i, k in enumerate([2, 0, 1]):
        np.testing.assert_array_equal(chosen[i], apply_mask(k, list(patches[:, i])))
    with pytest.raises(DataError):
        apply_masks(np.array([0, 3, 1]), patches)
    with pytest.raises(DataError):
        apply_masks(np.array([0, 1]), patches)


def test_single_dictionary_padded_with_zero_atoms_matches_max_l1(rng):
    atoms = rng.standard_normal((16, 20))
    atoms /= np.linalg.norm(atoms, axis=0)
    single = Dictionary(atoms)
    padded = Dictionary(np.hstack([atoms, np.zeros((16, 20))]), label="coupled")
    for _ in range(20):
        patches = rng.standard_normal((2, 16))
        patches /= np.linalg.norm(patches, axis=1, keepdims=True)
        plain = [omp_encode(p, single, 0.05, 8) for p in patches]
        coupled = [omp_encode(p, padded, 0.05, 8) for p in patches]
        baseline = int(np.argmax([c.l1() for c in plain]))
        assert select(coupled, omega=0.5)[0] == baseline


def test_identical_sources_give_the_source_back(rng, coupled_dictionary):
    img = make_texture(rng, 40, 40)
    result = fuse_images([img, img], coupled_dictionary, FusionConfig())
    np.testing.assert_allclose(result.image, img, atol=1 / 255)
    assert result.mask.winner.min() >= 0 and result.mask.winner.max() <= 1


def test_fusion_summary_log_interpolates_counts(rng, coupled_dictionary, caplog):
    a, b = make_texture(rng, 24, 24), make_texture(rng, 24, 24)
    with caplog.at_level("INFO", logger="fusion"):
        result = fuse_images([a, b], coupled_dictionary, FusionConfig())
    counts = np.bincount(result.mask.winner, minlength=2).tolist()
    assert f"融合完成: 2 个源, {len(result.mask.winner)} 个位置, 各源选中次数 {counts}" in caplog.text


def test_fused_pixels_are_convex_combinations(rng, coupled_dictionary):
    a, b = make_texture(rng, 32, 32), make_texture(rng, 32, 32)
    result = fuse_images([a, b], coupled_dictionary, FusionConfig())
    assert np.all(result.image >= np.minimum(a, b) - 1e-12)
    assert np.all(result.image <= np.maximum(a, b) + 1e-12)


def test_color_inputs_share_one_mask(rng, coupled_dictionary):
    sharp = np.stack([make_texture(rng, 32, 32) for _ in range(3)], axis=2)
    a, b, _ = generate_multifocus(sharp, 2.0, region_half_plane(32, 32))
    result = fuse_images([a, b], coupled_dictionary, FusionConfig())
    assert result.image.shape == (32, 32, 3)
    gray_mask = decide([a, b], coupled_dictionary, FusionConfig())
    np.testing.assert_array_equal(result.mask.winner, gray_mask.winner)


def test_mismatched_inputs_rejected(rng, coupled_dictionary):
    with pytest.raises(DataError):
        fuse_images([rng.random((16, 16)), rng.random((16, 18))], coupled_dictionary)
    with pytest.raises(DataError):
        fuse_images([rng.random((16, 16))], coupled_dictionary)
    with pytest.raises(DataError):
        fuse_images([rng.random((16, 16))] * 2, coupled_dictionary,
                    FusionConfig(patch_side=4, overlap=3))


def test_constant_positions_fall_back_to_variance(coupled_dictionary):
    flat = np.full((16, 16), 0.5)
    busy = flat.copy()
    busy[::2, ::2] = 0.9
    mask = decide([flat, busy], coupled_dictionary, FusionConfig())
    assert np.all(mask.winner == 1)
    both_flat = decide([flat, flat], coupled_dictionary, FusionConfig())
    assert both_flat.fallback.all() and np.all(both_flat.winner == 0)


def test_render_mask_levels():
    anchors = np.array([[0, 0], [0, 2], [2, 0], [2, 2]])
    mask = DecisionMask(grid_shape=(2, 2), anchors=anchors, patch_side=2,
                        winner=np.array([0, 1, 2, 0]), scores=np.zeros((4, 3)),
                        fallback=np.zeros(4, dtype=bool))
    rendered = render_mask(mask, 4, 4)
    assert rendered.dtype == np.uint8
    assert rendered[0, 0] == 0 and rendered[0, 3] == 127 and rendered[3, 0] == 254


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_tv_step_reports_per_plane_results(rng, coupled_dictionary):
    a, b = make_texture(rng, 24, 24), make_texture(rng, 24, 24)
    cfg = FusionConfig(tv_enabled=True, tv_params=TvParams(eta=0.01, max_iters=50))
    result = fuse_images([a, b], coupled_dictionary, cfg)
    assert len(result.tv_results) == 1
    np.testing.assert_array_equal(result.image, result.tv_results[0].image)
    assert not np.array_equal(result.image, result.initial)


@pytest.mark.slow
def test_half_sharp_pair_end_to_end(coupled_dictionary):
    sharp = make_texture(np.random.default_rng(5), 128, 128)
    region = region_half_plane(128, 128)
    a, b, truth = generate_multifocus(sharp, 2.0, region)
    result = fuse_images([a, b], coupled_dictionary, FusionConfig())
    labels = np.where(truth, 0, 1)
    assert mask_accuracy(result.mask, labels, band=8) >= 0.95
    best_source = min(mse(sharp, a), mse(sharp, b))
    assert mse(sharp, result.image) <= 0.25 * best_source


@pytest.mark.slow
def test_three_source_series_beats_every_source(coupled_dictionary):
    sharp = make_texture(np.random.default_rng(6), 96, 96)
    labels = region_wedges(96, 96, 3)
    series = generate_focal_series(sharp, 2.0, labels)
    result = fuse_images(series, coupled_dictionary, FusionConfig())
    assert mse(sharp, result.image) < min(mse(sharp, s) for s in series)
