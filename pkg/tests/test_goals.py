"""Tests for goal tasks: reward formula oracles, goal sampling, box
dynamics, observation frames, and success predicates."""

from __future__ import annotations

import numpy as np
import pytest

from maskmotion.character import desk_character
from maskmotion.errors import ConfigError
from maskmotion.goals import (
    HeadingTask,
    LocationTask,
    StrikeTask,
    heading_reward,
    location_reward,
    make_task,
    strike_reward,
    strike_success,
)

SPEC = desk_character()
J = len(SPEC.joint_names)


def fake_info(B, root_xy=(0.0, 0.0), yaw=0.0, vel=(0.0, 0.0, 0.0)):
    pos = np.zeros((B, J, 3))
    pos[:, :, 2] = 0.9
    pos[:, 0, 0] = root_xy[0]
    pos[:, 0, 1] = root_xy[1]
    return {
        "world_pos": pos,
        "yaw": np.full(B, float(yaw)),
        "root_lin_vel": np.tile(np.asarray(vel, dtype=np.float64), (B, 1)),
    }


# -- reward formula oracles -----------------------------------------------------

def test_location_reward_exact_velocity_is_one():
    rel = np.array([[3.0, 4.0]])
    v_star = rel / 5.0 * 1.5
    r = location_reward(v_star, rel, speed=1.5, radius=0.5)
    np.testing.assert_allclose(r, [1.0], rtol=1e-12)


def test_location_reward_stationary():
    r = location_reward(np.zeros((1, 2)), np.array([[2.0, 0.0]]), 1.5, 0.5)
    np.testing.assert_allclose(r, [np.exp(-3.0)], rtol=1e-12)


def test_location_reward_perpendicular_velocity():
    # moving at the right speed but 90 degrees off: ||v - v*||^2 = 2 s^2
    r = location_reward(np.array([[0.0, 1.5]]), np.array([[2.0, 0.0]]), 1.5, 0.5)
    np.testing.assert_allclose(r, [np.exp(-6.0)], rtol=1e-12)


def test_location_reward_saturates_inside_radius():
    r = location_reward(np.array([[9.0, -9.0]]), np.array([[0.1, 0.1]]), 1.5, 0.5)
    np.testing.assert_allclose(r, [1.0])


def test_strike_reward_values():
    ups = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    np.testing.assert_allclose(strike_reward(ups), [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(strike_success(ups), [False, True, True])
    assert not strike_success(np.array([[0.0, 0.0, 0.3]]))[0]


def test_heading_reward_perfect_tracking():
    d = np.array([[0.6, 0.8]])
    r = heading_reward(1.3 * d, d, d, 1.3)
    np.testing.assert_allclose(r, [1.0], rtol=1e-12)


def test_heading_reward_stationary_facing():
    d = np.array([[1.0, 0.0]])
    r = heading_reward(np.zeros((1, 2)), d, d, 1.2)
    np.testing.assert_allclose(r, [0.7 * np.exp(-0.25 * 1.44) + 0.3], rtol=1e-12)


def test_heading_reward_lateral_penalty_and_facing_term():
    d = np.array([[1.0, 0.0]])
    f = np.array([[0.0, 1.0]])  # facing perpendicular: alignment term clamps at 0
    v = np.array([[1.0, 2.0]])  # on-speed along d, lateral 2
    r = heading_reward(v, f, d, 1.0)
    np.testing.assert_allclose(r, [0.7 * np.exp(-0.25 * 0.4)], rtol=1e-12)
    # facing opposite also clamps to zero, never negative
    r2 = heading_reward(v, -d, d, 1.0)
    np.testing.assert_allclose(r2, r, rtol=1e-12)


# -- LocationTask -----------------------------------------------------------------

def test_location_task_sampling_range():
    task = LocationTask(SPEC, num_envs=64, min_range=2.0, max_range=5.0)
    rng = np.random.default_rng(0)
    info = fake_info(64, root_xy=(3.0, -1.0))
    task.reset(rng, np.arange(64), info)
    d = np.linalg.norm(task.target_xy - np.array([3.0, -1.0]), axis=-1)
    assert np.all(d >= 2.0) and np.all(d <= 5.0)
    # angles should spread over the circle
    ang = np.arctan2(task.target_xy[:, 1] + 1.0, task.target_xy[:, 0] - 3.0)
    assert ang.min() < -2.0 and ang.max() > 2.0


def test_location_task_observation_heading_frame():
    task = LocationTask(SPEC, num_envs=1)
    info = fake_info(1, yaw=np.pi / 2)
    task.target_xy[0] = [2.0, 0.0]  # directly +X of root, character faces +Y
    obs = task.observe(info)
    assert obs.shape == (1, 4)
    np.testing.assert_allclose(obs[0, :2], [0.0, -2.0], atol=1e-12)  # to the right
    np.testing.assert_allclose(obs[0, 2], 2.0)
    np.testing.assert_allclose(obs[0, 3], task.speed)


def test_location_task_reward_and_success():
    task = LocationTask(SPEC, num_envs=2, radius=0.5, speed=1.5)
    task.target_xy[:] = [[2.0, 0.0], [0.3, 0.0]]
    info = fake_info(2, vel=(1.5, 0.0, 0.0))
    r = task.reward(info, info)
    np.testing.assert_allclose(r[0], 1.0, rtol=1e-12)
    np.testing.assert_allclose(r[1], 1.0)  # inside radius saturates
    tv = task.trace_values(info)
    np.testing.assert_allclose(tv["dist"], [2.0, 0.3])
    # success needs the whole final second inside the radius
    T = 90
    dist = np.full((T, 2), 1.0)
    dist[-30:, 0] = 0.4
    dist[-30:, 1] = 0.4
    dist[-5, 1] = 0.6  # one excursion breaks it
    ok = task.success_from_trace({"dist": dist}, fps=30.0)
    assert ok[0] and not ok[1]


def test_location_task_rejects_bad_params():
    with pytest.raises(ConfigError):
        LocationTask(SPEC, 4, radius=0.0)
    with pytest.raises(ConfigError):
        LocationTask(SPEC, 4, min_range=3.0, max_range=2.0)


# -- StrikeTask --------------------------------------------------------------------

HAND = SPEC.joint_index("r_hand")


def sweep_hand_through_box(task, steps_inside=7, speed=3.0, extra_steps=80):
    """Drive the designated effector through the box center along +X and
    then hold still; returns the reward sequence."""
    B = task.num_envs
    rng = np.random.default_rng(1)
    info = fake_info(B)
    task.reset(rng, np.arange(B), info)
    center = task.box_pos[0].copy()
    dt_step = speed / 30.0
    start = center - np.array([dt_step * (steps_inside // 2 + 1), 0.0, 0.0])
    rewards = []
    prev = fake_info(B)
    prev["world_pos"][:, HAND] = start
    for k in range(steps_inside + 2):
        cur = fake_info(B)
        cur["world_pos"][:, HAND] = start + np.array([dt_step * (k + 1), 0.0, 0.0])
        rewards.append(task.reward(prev, cur))
        prev = cur
    for _ in range(extra_steps):
        cur = {k: v.copy() for k, v in prev.items()}
        rewards.append(task.reward(prev, cur))
        prev = cur
    return np.array(rewards)


def test_strike_task_reset_places_box_ahead():
    task = StrikeTask(SPEC, num_envs=8, distance=1.2)
    rng = np.random.default_rng(2)
    info = fake_info(8, root_xy=(1.0, 1.0))
    task.reset(rng, np.arange(8), info)
    d = np.linalg.norm(task.box_pos[:, :2] - np.array([1.0, 1.0]), axis=-1)
    np.testing.assert_allclose(d, 1.2, rtol=1e-9)
    np.testing.assert_allclose(task.box_pos[:, 2], task.box_height / 2.0)
    np.testing.assert_allclose(task.box_up(), np.tile([0, 0, 1.0], (8, 1)))


def test_strike_task_hard_hit_topples():
    task = StrikeTask(SPEC, num_envs=1)
    rewards = sweep_hand_through_box(task, speed=3.0)
    assert task.tilt[0] >= np.pi / 2 - 1e-6
    up_z = task.box_up()[0, 2]
    assert up_z < 1e-6
    assert rewards[-1, 0] > 0.999  # flat box: r = 1 - up_z -> 1
    trace = {"up_z": 1.0 - rewards}  # r = 1 - up_z exactly
    assert task.success_from_trace(trace, fps=30.0)[0]


def test_strike_task_gentle_tap_recovers():
    task = StrikeTask(SPEC, num_envs=1)
    rewards = sweep_hand_through_box(task, steps_inside=1, speed=0.4, extra_steps=120)
    assert task.tilt[0] < 0.05
    assert task.box_up()[0, 2] > 0.99
    assert rewards[-1, 0] < 0.01
    # it did wobble: some step saw a nonzero tilt
    assert rewards.max() > 1e-4


def test_strike_task_observation_shape_and_frame():
    task = StrikeTask(SPEC, num_envs=2)
    rng = np.random.default_rng(3)
    info = fake_info(2)
    task.reset(rng, np.arange(2), info)
    obs = task.observe(info)
    assert obs.shape == (2, 15)
    # upright box: up axis block is (0, 0, 1) in any heading frame
    np.testing.assert_allclose(obs[:, 3:6], np.tile([0, 0, 1.0], (2, 1)), atol=1e-12)
    # box linear velocity block stays zero in this box model
    np.testing.assert_array_equal(obs[:, 6:9], 0.0)


def test_strike_task_snapshot_round_trip():
    task = StrikeTask(SPEC, num_envs=1)
    sweep_hand_through_box(task, steps_inside=3, speed=1.0, extra_steps=5)
    snap = task.snapshot()
    tilt = task.tilt.copy()
    sweep_hand_through_box(task, speed=3.0)
    task.restore(snap)
    np.testing.assert_array_equal(task.tilt, tilt)


# -- HeadingTask -------------------------------------------------------------------

def test_heading_task_sampling_and_obs():
    task = HeadingTask(SPEC, num_envs=32, min_speed=1.0, max_speed=1.5)
    rng = np.random.default_rng(4)
    info = fake_info(32)
    task.reset(rng, np.arange(32), info)
    np.testing.assert_allclose(np.linalg.norm(task.dir_xy, axis=-1), 1.0, rtol=1e-12)
    assert np.all(task.target_speed >= 1.0) and np.all(task.target_speed <= 1.5)
    obs = task.observe(info)
    assert obs.shape == (32, 3)
    np.testing.assert_allclose(obs[:, :2], task.dir_xy, atol=1e-12)  # yaw = 0


def test_heading_task_reward_and_success():
    task = HeadingTask(SPEC, num_envs=1)
    task.dir_xy[0] = [1.0, 0.0]
    task.target_speed[0] = 1.2
    info = fake_info(1, yaw=0.0, vel=(1.2, 0.0, 0.0))
    np.testing.assert_allclose(task.reward(info, info), [1.0], rtol=1e-12)
    tv = task.trace_values(info)
    np.testing.assert_allclose(tv["speed_err"], [0.0], atol=1e-12)
    err = np.full((60, 1), 1.0)
    err[-30:] = 0.2
    assert task.success_from_trace({"speed_err": err}, fps=30.0)[0]
    err[-3] = 0.8
    assert not task.success_from_trace({"speed_err": err}, fps=30.0)[0]


# -- registry ---------------------------------------------------------------------

def test_make_task_registry():
    for name, cls in [("location", LocationTask), ("strike", StrikeTask), ("heading", HeadingTask)]:
        t = make_task(name, SPEC, 4)
        assert isinstance(t, cls)
        assert t.describe()["name"] == name
    with pytest.raises(ConfigError, match="unknown task"):
        make_task("juggle", SPEC, 4)
    with pytest.raises(ConfigError, match="location"):
        make_task("location", SPEC, 4, warp_factor=9)
