"""Tubelet grid, patchify/unpatchify, and masking strategies."""

import numpy as np
import pytest

from stmae.errors import ConfigError, ShapeError
from stmae.patches import (MaskPlan, TubeletConfig, gather_visible,
                           make_mask, patchify, unpatchify)

DESK = TubeletConfig(frames=16, height=32, width=32, channels=3,
                     t_patch=2, s_patch=4)


def test_desk_grid_counts():
    assert (DESK.tg, DESK.hg, DESK.wg) == (8, 8, 8)
    assert DESK.n_patches == 512
    assert DESK.patch_dim == 96


def test_paper_scale_grid_counts():
    cfg = TubeletConfig(frames=16, height=224, width=224, channels=3,
                        t_patch=2, s_patch=14)
    assert cfg.n_patches == 2048
    assert cfg.patch_dim == 1176


def test_divisibility_enforced():
    with pytest.raises(ConfigError):
        TubeletConfig(frames=15, height=32, width=32, channels=3,
                      t_patch=2, s_patch=4)
    with pytest.raises(ConfigError):
        TubeletConfig(frames=16, height=30, width=32, channels=3,
                      t_patch=2, s_patch=4)


def test_patchify_unpatchify_bit_exact():
    rng = np.random.default_rng(3)
    clip = rng.random((16, 32, 32, 3)).astype(np.float32)
    patches = patchify(clip, DESK)
    assert patches.shape == (512, 96)
    np.testing.assert_array_equal(unpatchify(patches, DESK), clip)


def test_patch_order_is_lexicographic_time_row_col():
    """Patch i covers tubelet (t, y, x) with i = (t*Hg + y)*Wg + x."""
    clip = np.zeros((16, 32, 32, 3), dtype=np.float32)
    # light up the tubelet at t=3, y=5, x=6
    clip[6:8, 20:24, 24:28, :] = 1.0
    patches = patchify(clip, DESK)
    hot = np.flatnonzero(patches.sum(axis=1))
    assert hot.tolist() == [(3 * 8 + 5) * 8 + 6]
    assert DESK.time_index(hot[0]) == 3
    assert DESK.spatial_index(hot[0]) == 5 * 8 + 6


def test_random_mask_exact_count_and_partition():
    plan = make_mask("random", 0.9, DESK, seed=0)
    assert plan.n_masked == 460 and plan.n_visible == 52
    both = np.concatenate([plan.masked_indices(), plan.visible_indices()])
    assert sorted(both.tolist()) == list(range(512))


@pytest.mark.parametrize("ratio,n,want", [
    (0.9, 512, 460), (0.75, 512, 384), (0.5, 100, 50), (0.999, 512, 511),
    (0.33, 7, 2)])
def test_exact_floor_count(ratio, n, want):
    assert int(np.floor(ratio * n)) == want


def test_interpolation_mask_targets_central_frames():
    plan = make_mask("interpolation", None, DESK, seed=1)
    masked = plan.masked_indices()
    assert plan.n_masked == 128
    times = sorted({DESK.time_index(i) for i in masked})
    assert times == [3, 4]  # tubelets covering frames 6..9
    # every spatial site of those time slices is masked
    assert len(masked) == 2 * 64


def test_per_frame_image_mask_balances_time_slices():
    plan = make_mask("per_frame_image", 0.8, DESK, seed=2)
    masked = plan.masked_indices()
    per_slice = np.bincount([DESK.time_index(i) for i in masked], minlength=8)
    assert per_slice.tolist() == [51] * 8  # floor(0.8 * 64) per slice


def test_mask_determinism_and_seed_sensitivity():
    a = make_mask("random", 0.9, DESK, seed=5).mask
    b = make_mask("random", 0.9, DESK, seed=5).mask
    c = make_mask("random", 0.9, DESK, seed=6).mask
    np.testing.assert_array_equal(a, b)
    assert (a != c).any()


def test_mask_uniformity_over_positions():
    """Each position is masked with probability ~rho across seeds."""
    hits = np.zeros(512)
    trials = 400
    for seed in range(trials):
        hits += make_mask("random", 0.9, DESK, seed=seed).mask
    p = hits / trials
    sigma = np.sqrt(0.9 * 0.1 / trials)
    assert np.all(np.abs(p - 0.9) < 5 * sigma)


def test_plan_json_round_trip():
    plan = make_mask("interpolation", None, DESK, seed=9)
    back = MaskPlan.from_json(plan.to_json(), DESK)
    np.testing.assert_array_equal(back.mask, plan.mask)
    assert back.kind == plan.kind and back.seed == plan.seed


def test_gather_visible_returns_sorted_rows():
    rng = np.random.default_rng(10)
    patches = rng.random((512, 96)).astype(np.float32)
    plan = make_mask("random", 0.9, DESK, seed=11)
    rows, idx = gather_visible(patches, plan)
    assert rows.shape == (52, 96)
    assert np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(rows, patches[idx])


def test_bad_mask_kind_rejected():
    with pytest.raises(ConfigError):
        make_mask("blockwise", 0.5, DESK, seed=0)


def test_interpolation_requires_16_frames():
    cfg = TubeletConfig(frames=8, height=32, width=32, channels=3,
                        t_patch=2, s_patch=4)
    with pytest.raises(ConfigError):
        make_mask("interpolation", None, cfg, seed=0)


def test_patchify_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        patchify(np.zeros((8, 32, 32, 3), dtype=np.float32), DESK)
