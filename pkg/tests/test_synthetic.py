import numpy as np
import pytest

from promp_handshake.errors import SegmentationRejected, ValidationError
from promp_handshake.kinematics import estimate_arm_model
from promp_handshake.skeleton import (
    UB,
    pair_bodies,
    read_skeleton_file,
    segment_reach_phase,
    select_upper_body,
)
from promp_handshake.synthetic import generate_synthetic_dataset, min_jerk, read_truth


def segment(path):
    bodies = [select_upper_body(s) for s in read_skeleton_file(path)]
    return segment_reach_phase(pair_bodies(bodies))


@pytest.fixture(scope="module")
def clean(tmp_path_factory):
    return generate_synthetic_dataset(tmp_path_factory.mktemp("clean"), 10, seed=11, n_left=2)


def test_min_jerk_profile():
    tau = np.linspace(-0.5, 1.5, 41)
    s = min_jerk(tau)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert min_jerk(0.5) == pytest.approx(0.5)
    assert np.all(np.diff(s) >= 0)


def test_noise_free_bounds_are_exact(clean):
    checked = 0
    for path in clean:
        truth = read_truth(path)
        if truth["left_handed"]:
            continue
        seg = segment(path)
        assert [seg.start, seg.end] == truth["segment"]
        checked += 1
    assert checked == 8


def test_left_handed_shakes_rejected(clean):
    left = [p for p in clean if read_truth(p)["left_handed"]]
    assert len(left) == 2
    for path in left:
        with pytest.raises(SegmentationRejected) as info:
            segment(path)
        assert info.value.reason == "left-hand"


def test_truth_final_hands_are_the_contact_frame(clean):
    for path in clean:
        truth = read_truth(path)
        if truth["left_handed"]:
            continue
        seg = segment(path)
        ends = sorted(tuple(p.positions[-1, UB["hand_right"]]) for p in seg.persons)
        np.testing.assert_allclose(ends, sorted(tuple(h) for h in truth["final_hand"]), atol=1e-9)


def test_generated_bones_match_truth(clean):
    for path in clean:
        truth = read_truth(path)
        bodies = sorted((select_upper_body(s) for s in read_skeleton_file(path)), key=lambda s: s.body_id)
        lengths = sorted([m.upper_arm_length, m.forearm_length]
                         for m in (estimate_arm_model(b) for b in bodies))
        np.testing.assert_allclose(lengths, sorted(truth["arm_lengths"]), atol=1e-9)


def test_noisy_bounds_within_two_frames(tmp_path):
    paths = generate_synthetic_dataset(tmp_path, 10, seed=5, noise=0.005)
    for path in paths:
        truth = read_truth(path)
        seg = segment(path)
        assert abs(seg.start - truth["segment"][0]) <= 2
        assert abs(seg.end - truth["segment"][1]) <= 2


@pytest.mark.slow
def test_noisy_bounds_within_two_frames_many_seeds(tmp_path):
    worst = 0
    for seed in range(6):
        for path in generate_synthetic_dataset(tmp_path / str(seed), 10, seed=100 + seed, noise=0.005):
            truth = read_truth(path)
            seg = segment(path)
            worst = max(worst, abs(seg.start - truth["segment"][0]), abs(seg.end - truth["segment"][1]))
    assert worst <= 2


def test_same_seed_same_bytes(tmp_path):
    a = generate_synthetic_dataset(tmp_path / "a", 3, seed=4, noise=0.002, n_left=1)
    b = generate_synthetic_dataset(tmp_path / "b", 3, seed=4, noise=0.002, n_left=1)
    c = generate_synthetic_dataset(tmp_path / "c", 3, seed=5, noise=0.002, n_left=1)
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    assert any(x.read_bytes() != z.read_bytes() for x, z in zip(a, c))


def test_reach_segments_are_long_enough(clean):
    for path in clean:
        truth = read_truth(path)
        if not truth["left_handed"]:
            start, end = truth["segment"]
            assert end - start + 1 >= 20


@pytest.mark.parametrize("kw", [{"n": 0}, {"n": 2, "n_left": 3}])
def test_argument_validation(tmp_path, kw):
    with pytest.raises(ValidationError):
        generate_synthetic_dataset(tmp_path, **kw)
