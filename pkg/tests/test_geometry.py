"""Pose algebra, path construction, and signal round-trip tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camgen.geometry import (
    CameraPath,
    CameraPose,
    Direction,
    axis_angle_from_rotation,
    cardinal_path,
    compose,
    path_to_signal,
    random_path,
    read_pose_file,
    rotation_from_axis_angle,
    signal_to_path,
    sinusoid_signature,
    write_pose_file,
)


def naive_matmul(a, b):
    """Deliberately plain 3x3 product, independent of numpy's matmul."""
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def rot_pose(axis_angle, translation=(0.0, 0.0, 0.0)):
    return CameraPose(rotation_from_axis_angle(axis_angle), np.array(translation, dtype=float))


def random_pose(rng):
    return rot_pose(rng.normal(size=3), rng.normal(size=3))


class TestCameraPose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            CameraPose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            CameraPose(m, np.zeros(3))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError, match="3x3"):
            CameraPose(np.eye(4), np.zeros(3))

    def test_immutable(self):
        p = CameraPose.identity()
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0


class TestCompose:
    def test_identity(self):
        p = rot_pose([0.1, -0.2, 0.3], [1.0, 2.0, 3.0])
        assert compose(CameraPose.identity(), p).allclose(p)
        assert compose(p, CameraPose.identity()).allclose(p)

    def test_inverse(self):
        p = rot_pose([0.4, 0.1, -0.7], [0.5, -1.5, 2.0])
        assert compose(p, p.inverse()).allclose(CameraPose.identity())
        assert compose(p.inverse(), p).allclose(CameraPose.identity())

    def test_rot_z_90_twice_matches_naive_product(self):
        quarter = rotation_from_axis_angle([0.0, 0.0, math.pi / 2])
        got = compose(CameraPose(quarter, np.zeros(3)), CameraPose(quarter, np.zeros(3)))
        expected = naive_matmul(quarter, quarter)
        assert np.max(np.abs(got.rotation - expected)) < 1e-12
        half = rotation_from_axis_angle([0.0, 0.0, math.pi])
        assert np.max(np.abs(got.rotation - half)) < 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert left.allclose(right, tol=1e-9)


class TestAxisAngle:
    def test_roundtrip_small_and_large(self):
        for w in ([1e-9, 0.0, 0.0], [0.3, -0.2, 0.9], [0.0, 3.1, 0.0], [2.2, 2.2, 0.0]):
            r = rotation_from_axis_angle(w)
            back = axis_angle_from_rotation(r)
            assert np.allclose(back, w, atol=1e-7)

    def test_near_pi(self):
        w = np.array([0.0, math.pi - 1e-7, 0.0])
        r = rotation_from_axis_angle(w)
        r2 = rotation_from_axis_angle(axis_angle_from_rotation(r))
        assert np.max(np.abs(r - r2)) < 1e-6


class TestCardinalPath:
    def test_stationary_identical_poses(self):
        path = cardinal_path(CameraPose.identity(), Direction.STATIONARY, 17, 0.1)
        assert path.n == 17
        assert all(p.allclose(path.poses[0]) for p in path.poses)

    def test_right_identity_translations(self):
        path = cardinal_path(CameraPose.identity(), Direction.RIGHT, 3, 1.0)
        got = np.stack([p.translation for p in path.poses])
        assert np.allclose(got, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])

    def test_rotated_start_moves_along_rotated_axis(self):
        rot = rotation_from_axis_angle([0.0, math.pi / 2, 0.0])
        path = cardinal_path(CameraPose(rot, np.zeros(3)), Direction.RIGHT, 2, 1.0)
        # independent: multiply the rotation by unit x with a plain loop
        expected = np.array([sum(rot[i, k] * (1.0 if k == 0 else 0.0) for k in range(3)) for i in range(3)])
        assert np.allclose(path.poses[1].translation, expected, atol=1e-12)

    def test_rejects_negative_speed(self):
        with pytest.raises(ValueError, match="speed"):
            cardinal_path(CameraPose.identity(), Direction.LEFT, 5, -0.1)

    def test_evenly_spaced_deltas(self):
        start = rot_pose([0.2, 0.5, -0.1], [1.0, 2.0, 0.5])
        path = cardinal_path(start, Direction.FORWARD, 9, 0.25)
        deltas = [compose(path.poses[i], path.poses[i - 1].inverse()) for i in range(1, 9)]
        for d in deltas[1:]:
            assert d.allclose(deltas[0], tol=1e-9)


class TestRandomPath:
    def test_deterministic(self):
        a = random_path(CameraPose.identity(), 17, 42)
        b = random_path(CameraPose.identity(), 17, 42)
        for pa, pb in zip(a.poses, b.poses):
            assert pa.allclose(pb, tol=0.0) or pa.allclose(pb)

    def test_direction_uniform_on_sphere(self):
        rng = np.random.default_rng(123)
        total = np.zeros(3)
        trials = 10_000
        for _ in range(trials):
            path = random_path(CameraPose.identity(), 2, rng)
            step = path.poses[1].translation - path.poses[0].translation
            total += step / np.linalg.norm(step)
        assert np.linalg.norm(total / trials) < 0.05

    def test_rot_cap_zero_keeps_rotation(self):
        start = rot_pose([0.1, 0.2, 0.3])
        path = random_path(start, 9, 7, rot_cap=0.0)
        for p in path.poses:
            assert np.allclose(p.rotation, start.rotation)

    def test_rejects_single_frame(self):
        with pytest.raises(ValueError):
            random_path(CameraPose.identity(), 1, 0)


class TestSignal:
    def test_stationary_all_zero(self):
        path = cardinal_path(CameraPose.identity(), Direction.STATIONARY, 8, 0.3)
        assert np.array_equal(path_to_signal(path), np.zeros(48))

    def test_cardinal_right_constant_deltas(self):
        path = cardinal_path(CameraPose.identity(), Direction.RIGHT, 5, 1.0)
        sig = path_to_signal(path).reshape(5, 6)
        assert np.allclose(sig[0], 0.0)
        assert np.allclose(sig[1:, :3], [1.0, 0.0, 0.0])
        assert np.allclose(sig[1:, 3:], 0.0)

    def test_signal_length_6n(self):
        for n in (2, 5, 17):
            path = random_path(CameraPose.identity(), n, n)
            assert path_to_signal(path).size == 6 * n

    def test_zero_signal_copies_start(self):
        start = rot_pose([0.3, 0.0, 0.1], [1.0, -2.0, 0.0])
        path = signal_to_path(np.zeros(6 * 4), start)
        assert path.n == 4
        assert all(p.allclose(start) for p in path.poses)

    def test_cardinal_down_reconstructs_exactly(self):
        path = cardinal_path(CameraPose.identity(), Direction.DOWN, 17, 0.5)
        back = signal_to_path(path_to_signal(path), path.poses[0])
        for a, b in zip(path.poses, back.poses):
            assert np.max(np.abs(a.translation - b.translation)) < 1e-12
            assert np.max(np.abs(a.rotation - b.rotation)) < 1e-12

    def test_rejects_length_not_divisible_by_6(self):
        with pytest.raises(ValueError, match="divisible"):
            signal_to_path(np.zeros(13), CameraPose.identity())

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_with_rotation(self, seed):
        rng = np.random.default_rng(seed)
        start = random_pose(rng)
        path = random_path(start, 9, rng, speed_range=(0.01, 0.2), rot_cap=0.15)
        back = signal_to_path(path_to_signal(path), start)
        for a, b in zip(path.poses, back.poses):
            assert np.max(np.abs(a.translation - b.translation)) < 1e-6
            assert np.max(np.abs(a.rotation - b.rotation)) < 1e-6


class TestSinusoidSignature:
    def test_left_three_samples(self):
        got = sinusoid_signature(Direction.LEFT, 3)
        assert np.allclose(got, [0.0, 1.0, 0.0], atol=1e-12)

    def test_zero_at_first_sample(self):
        for d in Direction:
            assert sinusoid_signature(d, 10)[0] == 0.0

    def test_pairwise_distinct_at_106(self):
        sigs = [sinusoid_signature(d, 106) for d in Direction]
        for i in range(7):
            for j in range(i + 1, 7):
                assert np.linalg.norm(sigs[i] - sigs[j]) > 0.0

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            sinusoid_signature(Direction.UP, 1)


class TestDirection:
    def test_lambda_bijection_in_listed_order(self):
        lams = [d.lam for d in Direction]
        assert lams == [1, 2, 3, 4, 5, 6, 7]
        names = [d.name.lower() for d in Direction]
        assert names == ["left", "right", "up", "down", "forward", "backward", "stationary"]

    def test_from_name_rejects_unknown(self):
        with pytest.raises(ValueError, match="valid:"):
            Direction.from_name("sideways")

    def test_axes_unit_or_zero(self):
        for d in Direction:
            n = np.linalg.norm(d.axis)
            assert n == (0.0 if d is Direction.STATIONARY else 1.0)


class TestPoseFile:
    def test_roundtrip_with_comments(self, tmp_path):
        rng = np.random.default_rng(3)
        poses = [random_pose(rng) for _ in range(5)]
        path = tmp_path / "poses.txt"
        write_pose_file(path, poses)
        text = path.read_text()
        path.write_text("# header comment\n" + text + "\n# trailing\n")
        back = read_pose_file(path)
        assert len(back) == 5
        for a, b in zip(poses, back):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)

    def test_rejects_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 0 0 0\n")
        with pytest.raises(ValueError, match="12"):
            read_pose_file(path)
