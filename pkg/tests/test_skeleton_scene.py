import numpy as np
import pytest

from eventpose.camera import default_intrinsics, project
from eventpose.scene import (
    MOTION_CATEGORY,
    SceneConfig,
    downsample_mask,
    heatmap_centers,
    joint_heatmaps,
    load_dataset,
    load_sequence,
    synth_sequence,
)
from eventpose.skeleton import (
    BONES,
    JOINT_NAMES,
    MOTIONS,
    NUM_JOINTS,
    Skeleton16,
    animate,
    base_pose,
)


def test_joint_layout():
    assert len(JOINT_NAMES) == NUM_JOINTS == 16
    assert len(BONES) == 15
    reached = {a for a, _ in BONES} | {b for _, b in BONES}
    assert reached == set(JOINT_NAMES)


def test_base_pose_below_camera():
    pose = base_pose()
    assert pose.shape == (16, 3)
    assert np.all(pose[:, 2] < 0)


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton16(np.zeros((15, 3)))
    with pytest.raises(ValueError):
        Skeleton16(np.full((16, 3), np.nan))
    with pytest.raises(ValueError):
        Skeleton16(np.zeros((16, 3))).validate()


def test_animate_periodicity():
    for motion in MOTIONS:
        a = animate(motion, 0.2)
        b = animate(motion, 0.2 + 3.0 * animate.__globals__["DEFAULT_PERIODS"][motion])
        np.testing.assert_allclose(a.joints, b.joints, atol=1e-12)


def test_animate_validation():
    with pytest.raises(ValueError):
        animate("moonwalk", 0.0)
    with pytest.raises(ValueError):
        animate("wave", -1.0)
    with pytest.raises(ValueError):
        animate("wave", 1.0, period=0.0)


def test_still_motion_is_static():
    np.testing.assert_array_equal(animate("still", 0.0).joints,
                                  animate("still", 0.77).joints)


def test_wave_moves_only_right_arm():
    a = animate("wave", 0.0).joints
    b = animate("wave", 0.31).joints
    moved = np.flatnonzero(np.any(a != b, axis=1))
    names = {JOINT_NAMES[i] for i in moved}
    assert names <= {"right_elbow", "right_wrist"}
    assert "right_wrist" in names


def test_motion_category_map_covers_all_motions():
    assert set(MOTION_CATEGORY) == set(MOTIONS)


def test_heatmap_centers_match_projection():
    intr = default_intrinsics()
    skel = animate("wave", 0.1)
    cu, cv, visible = heatmap_centers(skel, intr)
    uv = project(skel.joints, intr)
    # centers are rounded quarter-resolution pixel centres
    exp_u = np.round((uv[:, 0] + 0.5) / 4.0 - 0.5)
    exp_v = np.round((uv[:, 1] + 0.5) / 4.0 - 0.5)
    np.testing.assert_array_equal(cu[visible], exp_u[visible])
    np.testing.assert_array_equal(cv[visible], exp_v[visible])


def test_joint_heatmaps_peak_positions():
    intr = default_intrinsics()
    skel = animate("still", 0.0)
    hm = joint_heatmaps(skel, intr)
    assert hm.shape == (48, 64, 16)
    assert hm.max() <= 1.0 + 1e-12
    cu, cv, visible = heatmap_centers(skel, intr)
    for j in np.flatnonzero(visible):
        chan = hm[:, :, j]
        peak = np.unravel_index(np.argmax(chan), chan.shape)
        assert peak == (cv[j], cu[j])
        assert chan[peak] == 1.0


def test_downsample_mask_shape_and_range():
    full = np.zeros((192, 256))
    full[:96] = 1.0
    small = downsample_mask(full)
    assert small.shape == (48, 64)
    assert small.min() >= 0 and small.max() <= 1


def test_synth_sequence_contents(short_sequence):
    seq = short_sequence
    assert seq.meta["motion"] == "wave"
    assert seq.meta["category"] == MOTION_CATEGORY["wave"]
    for rec in seq.records:
        assert rec.lnes.values.shape == (192, 256, 2)
        assert rec.joints_gt.joints.shape == (16, 3)
        assert rec.heatmaps_gt.shape == (48, 64, 16)
        assert rec.mask_gt.shape == (48, 64, 1)
        # pose is taken at the newest event, or the window end when silent
        if len_events_in(rec):
            assert rec.window.t0 <= rec.t_pose <= rec.window.t_end
        else:
            assert rec.t_pose == rec.window.t_end
    # window grid is contiguous from zero
    t0s = [rec.window.t0 for rec in seq.records]
    assert t0s == [i * 15000 for i in range(len(seq.records))]


def len_events_in(rec):
    return rec.lnes.values.any()


def test_synth_deterministic():
    a = synth_sequence(SceneConfig(duration_s=0.06, seed=12))
    b = synth_sequence(SceneConfig(duration_s=0.06, seed=12))
    np.testing.assert_array_equal(a.events.t, b.events.t)
    np.testing.assert_array_equal(a.records[-1].lnes.values,
                                  b.records[-1].lnes.values)
    c = synth_sequence(SceneConfig(duration_s=0.06, seed=13))
    assert len(c.events) != len(a.events) or not np.array_equal(
        a.events.t, c.events.t)


def test_dataset_round_trip(tiny_dataset):
    loaded = load_dataset(tiny_dataset)
    assert [name.split("_")[-1] for name, _ in loaded] == ["wave", "box"]
    manifest = (tiny_dataset / "manifest.txt").read_text().splitlines()
    assert manifest[0] == "# seed 5"
    assert manifest[1].startswith("# config_hash ")
    name, seq = loaded[0]
    fresh = load_sequence(tiny_dataset / name)
    np.testing.assert_array_equal(fresh.records[0].lnes.values,
                                  seq.records[0].lnes.values)
    np.testing.assert_array_equal(fresh.records[-1].joints_gt.joints,
                                  seq.records[-1].joints_gt.joints)
    assert fresh.meta["category"] == seq.meta["category"]
