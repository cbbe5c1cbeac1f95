import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetcross import synth
from streetcross.trajectory import (
    AgentTrack,
    CanonicalFormatError,
    Scene,
    WindowSpec,
    decode_relative,
    encode_relative,
    format_canonical,
    load_canonical,
    parse_canonical,
    quat_to_yaw,
    window_scene,
    yaw_to_quat,
)

HEADER = "frame,agent_id,x,y,v,qw,qz\n"


def _track(agent_id, frames, rng=None):
    frames = np.asarray(frames)
    rng = rng or np.random.default_rng(agent_id)
    states = np.zeros((len(frames), 5))
    states[:, :2] = rng.standard_normal((len(frames), 2))
    states[:, 2] = rng.uniform(0, 2, len(frames))
    yaw = rng.uniform(-math.pi, math.pi, len(frames))
    states[:, 3], states[:, 4] = yaw_to_quat(yaw)
    return AgentTrack(agent_id, frames, states)


class TestCanonical:
    def test_two_rows_one_track(self):
        scene = parse_canonical(HEADER + "0,7,1,2,0.5,1,0\n1,7,1.2,2,0.5,1,0\n")
        assert len(scene.tracks) == 1
        assert scene.tracks[0].agent_id == 7
        assert len(scene.tracks[0]) == 2

    def test_quaternion_normalized(self):
        scene = parse_canonical(HEADER + "0,1,0,0,0,2,0\n")
        np.testing.assert_array_equal(scene.tracks[0].states[0, 3:], [1.0, 0.0])
        assert scene.normalized_quaternions == 1

    def test_short_row_names_line(self):
        with pytest.raises(CanonicalFormatError, match=":3:"):
            parse_canonical(HEADER + "0,1,0,0,0,1,0\n1,1,0,0\n")

    def test_zero_quaternion(self):
        with pytest.raises(CanonicalFormatError, match="zero-norm"):
            parse_canonical(HEADER + "0,1,0,0,0,0,0\n")

    def test_non_monotonic_frames(self):
        with pytest.raises(CanonicalFormatError, match=":3:"):
            parse_canonical(HEADER + "4,1,0,0,0,1,0\n2,1,0,0,0,1,0\n")

    def test_crlf(self, tmp_path):
        path = tmp_path / "scene.csv"
        path.write_bytes(b"frame,agent_id,x,y,v,qw,qz\r\n0,3,1.5,2,0,1,0\r\n1,3,1.6,2,0,1,0\r\n")
        scene = load_canonical(path)
        np.testing.assert_array_equal(scene.tracks[0].frames, [0, 1])

    def test_round_trip(self):
        scene = Scene([_track(1, range(5)), _track(4, [2, 3, 9])])
        again = parse_canonical(format_canonical(scene))
        for a, b in zip(scene.tracks, again.tracks):
            np.testing.assert_array_equal(a.frames, b.frames)
            np.testing.assert_array_equal(a.states, b.states)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            Scene([_track(1, [0]), _track(1, [1])])


class TestRelative:
    def test_identity(self):
        scene = Scene([_track(1, range(4))])
        out = encode_relative(scene, 0.0, 0.0, 0.0)
        np.testing.assert_allclose(out.tracks[0].states, scene.tracks[0].states, atol=1e-15)

    def test_translation(self):
        scene = parse_canonical(HEADER + "0,1,3,0,1,1,0\n")
        out = encode_relative(scene, 1.0, 0.0, 0.0)
        np.testing.assert_allclose(out.tracks[0].states[0, :2], [2.0, 0.0])

    def test_rotation_updates_yaw(self):
        scene = parse_canonical(HEADER + "0,1,0,1,1,1,0\n")
        out = encode_relative(scene, 0.0, 0.0, math.pi / 2)
        np.testing.assert_allclose(out.tracks[0].states[0, :2], [1.0, 0.0], atol=1e-12)
        s = out.tracks[0].states[0]
        assert math.degrees(quat_to_yaw(s[3], s[4])) == pytest.approx(-90.0)

    def test_non_finite_pose(self):
        with pytest.raises(ValueError):
            encode_relative(Scene([_track(1, [0])]), math.nan, 0.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-10, 10), st.integers(0, 10**6))
    def test_round_trip_and_isometry(self, rx, ry, ryaw, seed):
        rng = np.random.default_rng(seed)
        scene = Scene([_track(1, range(6), rng), _track(2, range(6), rng)])
        enc = encode_relative(scene, rx, ry, ryaw)
        dec = decode_relative(enc, rx, ry, ryaw)
        for a, b in zip(scene.tracks, dec.tracks):
            np.testing.assert_allclose(b.states[:, :3], a.states[:, :3], atol=1e-9)
            ya = quat_to_yaw(a.states[:, 3], a.states[:, 4])
            yb = quat_to_yaw(b.states[:, 3], b.states[:, 4])
            np.testing.assert_allclose(np.cos(ya - yb), 1.0, atol=1e-9)
        d0 = np.linalg.norm(scene.tracks[0].states[:, :2] - scene.tracks[1].states[:, :2], axis=1)
        d1 = np.linalg.norm(enc.tracks[0].states[:, :2] - enc.tracks[1].states[:, :2], axis=1)
        np.testing.assert_allclose(d1, d0, atol=1e-9)
        np.testing.assert_array_equal(enc.tracks[0].states[:, 2], scene.tracks[0].states[:, 2])


class TestWindows:
    spec = WindowSpec(8, 12, 20, 4)

    def test_full_agent(self):
        windows = window_scene(Scene([_track(1, range(20))]), self.spec)
        assert len(windows) == 1
        obs, tgt = windows[0]
        np.testing.assert_array_equal(obs.mask[0], np.ones(8))
        np.testing.assert_array_equal(tgt.mask[0], np.ones(12))
        np.testing.assert_array_equal(obs.mask[1:], 0.0)

    def test_late_agent(self):
        scene = Scene([_track(1, range(20)), _track(2, range(5, 20))])
        obs, _ = window_scene(scene, self.spec)[0]
        np.testing.assert_array_equal(obs.mask[1], [0, 0, 0, 0, 0, 1, 1, 1])

    def test_empty_scene(self):
        assert window_scene(Scene([]), self.spec) == []

    def test_single_observation_excluded(self):
        scene = Scene([_track(1, range(20)), _track(2, range(7, 20))])
        obs, _ = window_scene(scene, self.spec)[0]
        assert obs.agent_ids == [1]

    def test_overflow_drops_latest(self):
        tracks = [_track(i, range(i, 20)) for i in range(6)]
        obs, _ = window_scene(Scene(tracks), WindowSpec(8, 12, 20, 3))[0]
        assert obs.agent_ids == [0, 1, 2]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_mask_consistency_and_ordering(self, seed):
        rng = np.random.default_rng(seed)
        tracks = []
        for a in range(int(rng.integers(1, 8))):
            start = int(rng.integers(0, 40))
            length = int(rng.integers(1, 30))
            frames = np.sort(rng.choice(np.arange(start, start + length + 5), size=length, replace=False))
            tracks.append(_track(a, frames, rng))
        for obs, tgt in window_scene(Scene(tracks), WindowSpec(8, 12, 5, 4)):
            for feats, mask in ((obs.features, obs.mask), (tgt.features, tgt.mask)):
                assert np.all(feats[mask == 0] == 0.0)
                assert set(np.unique(mask)) <= {0.0, 1.0}
            firsts = [int(np.argmax(row)) for row in obs.mask[: len(obs.agent_ids)]]
            assert firsts == sorted(firsts)
            assert np.all(obs.mask[len(obs.agent_ids):] == 0)

    def test_conservation(self):
        scene = synth.gen_constant_velocity(5, 60, seed=3)
        spec = WindowSpec(8, 12, 20, 8)
        windows = window_scene(scene, spec)
        counted = sum(o.mask.sum() + t.mask.sum() for o, t in windows)
        covered = {w[0].start_frame + k for w in windows for k in range(spec.length)}
        total = sum(int(np.isin(t.frames, list(covered)).sum()) for t in scene.tracks)
        assert counted == total
