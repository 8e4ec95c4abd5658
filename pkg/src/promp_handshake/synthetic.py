"""Synthetic two-person handshake recordings in NTU ``.skeleton`` format.

Two people stand facing each other and reach with minimum-jerk hand paths
to a meeting point between them. Arms are posed by analytic two-link
inverse kinematics, so every frame is anatomically consistent. A
``.truth.json`` sidecar records the reach-phase bounds and final hand
positions computed from the noise-free positions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .skeleton import KINECT_JOINTS, SegmentationConfig, SkeletonSequence, serialize_skeleton_file

J = {name: i for i, name in enumerate(KINECT_JOINTS)}
FRAME_RATE = 30.0


@dataclass(frozen=True)
class Body:
    """Person-specific geometry, in meters."""

    height_scale: float
    shoulder_half_width: float
    upper_arm: float
    forearm: float
    hand: float

    @property
    def reach(self):
        return self.upper_arm + self.forearm + self.hand


def random_body(rng):
    return Body(
        height_scale=rng.uniform(0.9, 1.1),
        shoulder_half_width=rng.uniform(0.16, 0.21),
        upper_arm=rng.uniform(0.26, 0.34),
        forearm=rng.uniform(0.23, 0.29),
        hand=rng.uniform(0.07, 0.09),
    )


def min_jerk(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)


def _unit(v):
    return v / np.linalg.norm(v)


def place_arm(shoulder, hand, body, side_sign, swivel=0.0):
    """Elbow and wrist reaching ``hand`` (local coordinates: right, forward, up).

    The forearm and hand form one rigid link. The elbow sits on the IK
    circle at the point closest to "down, outward and back", rotated by
    ``swivel`` radians about the shoulder-hand axis.
    """
    l1, l2 = body.upper_arm, body.forearm + body.hand
    d_vec = hand - shoulder
    d = np.linalg.norm(d_vec)
    if not abs(l1 - l2) < d < l1 + l2:
        raise ValueError(f"hand at {d:.3f} m is outside the arm's workspace")
    n = d_vec / d
    a = (l1 ** 2 - l2 ** 2 + d ** 2) / (2.0 * d)
    r = np.sqrt(max(l1 ** 2 - a ** 2, 0.0))
    pref = np.array([0.5 * side_sign, -0.5, -1.0])
    e1 = _unit(pref - (pref @ n) * n)
    e2 = np.cross(n, e1)
    elbow = shoulder + a * n + r * (np.cos(swivel) * e1 + np.sin(swivel) * e2)
    along = _unit(hand - elbow)
    wrist = elbow + body.forearm * along
    return elbow, wrist, along


def body_frame(body, arms):
    """25 joints in local coordinates given per-side ``(shoulder, elbow, wrist, hand, along)``."""
    s = body.height_scale
    p = np.zeros((25, 3))
    up = lambda h: np.array([0.0, 0.0, h * s])  # noqa: E731
    p[J["spine_base"]] = up(1.00)
    p[J["spine_mid"]] = up(1.22)
    p[J["spine_shoulder"]] = up(1.44)
    p[J["neck"]] = up(1.51)
    p[J["head"]] = up(1.64)
    for side, sign in (("left", -1.0), ("right", 1.0)):
        shoulder, elbow, wrist, hand, along = arms[side]
        p[J[f"shoulder_{side}"]] = shoulder
        p[J[f"elbow_{side}"]] = elbow
        p[J[f"wrist_{side}"]] = wrist
        p[J[f"hand_{side}"]] = hand
        p[J[f"hand_tip_{side}"]] = hand + 0.05 * along
        p[J[f"thumb_{side}"]] = hand + np.array([0.0, 0.03, 0.02])
        hip = np.array([0.09 * sign, 0.0, 0.96 * s])
        p[J[f"hip_{side}"]] = hip
        p[J[f"knee_{side}"]] = hip + np.array([0.0, 0.02, -0.46 * s])
        p[J[f"ankle_{side}"]] = hip + np.array([0.0, 0.0, -0.88 * s])
        p[J[f"foot_{side}"]] = hip + np.array([0.0, 0.1, -0.94 * s])
    return p


def shoulder_position(body, side_sign):
    return np.array([side_sign * body.shoulder_half_width, 0.0, 1.42 * body.height_scale])


def rest_hand(body, side_sign, rng):
    sh = shoulder_position(body, side_sign)
    return sh + body.reach * np.array([0.08 * side_sign, rng.uniform(0.05, 0.2), -0.93])


def _yaw(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# local (right, forward, up) -> Kinect camera (x right, y up, z away from camera)
_LOCAL_TO_CAMERA = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True)
class Handshake:
    sequences: tuple  # two 25-joint SkeletonSequence objects, noise free
    truth: dict


def onset_from_speed(speed, threshold, confirm_factor):
    above = [t for t, v in enumerate(speed) if v > confirm_factor * threshold]
    if not above:
        return None
    t = above[0]
    while t > 0 and speed[t - 1] > threshold:
        t -= 1
    return t


def _truth(hands, cfg):
    speeds = [np.r_[0.0, np.linalg.norm(np.diff(h, axis=0), axis=-1) * FRAME_RATE] for h in hands]
    dist = np.linalg.norm(hands[0] - hands[1], axis=-1)
    contact = int(np.flatnonzero(dist <= cfg.grasp_distance_threshold)[0])
    onsets = [onset_from_speed(s[:contact + 1], cfg.start_velocity_threshold, cfg.confirm_factor)
              for s in speeds]
    start = min(t for t in onsets if t is not None)
    return start, contact


def _pose(yaw, offset):
    return _yaw(yaw), np.asarray(offset, dtype=float)


def generate_handshake(rng, left_handed=False, cfg=None):
    """One noise-free two-person reach, and its ground truth.

    The pair frame has person 0 at ``-y`` facing ``+y`` and person 1 at
    ``+y`` facing ``-y``; the hands meet midway between the shaking-side
    shoulders, 6 cm apart.
    """
    cfg = cfg or SegmentationConfig()
    bodies = [random_body(rng), random_body(rng)]
    side = "left" if left_handed else "right"
    sign = -1.0 if left_handed else 1.0
    sh = [shoulder_position(b, sign) for b in bodies]

    while True:
        drop = rng.uniform(0.2, 0.35)
        ratio = rng.uniform(0.65, 0.82)
        height = 0.5 * (sh[0][2] + sh[1][2]) - drop
        lateral = 0.5 * (bodies[0].shoulder_half_width + bodies[1].shoulder_half_width)
        mean_reach = 0.5 * (bodies[0].reach + bodies[1].reach)
        forward2 = (ratio * mean_reach) ** 2 - lateral ** 2 - (sh[0][2] - height) ** 2
        if forward2 <= 0.1 ** 2:
            continue
        spacing = 2.0 * (np.sqrt(forward2) + 0.03)
        poses = [_pose(rng.uniform(-0.1, 0.1), (0.0, -0.5 * spacing, 0.0)),
                 _pose(np.pi + rng.uniform(-0.1, 0.1), (0.0, 0.5 * spacing, 0.0))]
        mid_x = 0.5 * sign * (bodies[0].shoulder_half_width - bodies[1].shoulder_half_width)
        meet = [np.array([mid_x, -0.03, height]), np.array([mid_x, 0.03, height])]
        targets = [r.T @ (m - o) for (r, o), m in zip(poses, meet)]
        dists = [np.linalg.norm(t - s) / b.reach for t, s, b in zip(targets, sh, bodies)]
        if max(dists) < 0.93 and min(dists) > 0.6:
            break

    pre = [int(rng.integers(8, 16)) for _ in range(2)]
    durations = [int(rng.integers(34, 47)) for _ in range(2)]
    n_frames = max(p + d for p, d in zip(pre, durations)) + int(rng.integers(10, 16))
    swivel = rng.uniform(-0.3, 0.3, size=2)
    bumps = [rng.uniform(-0.04, 0.04, size=3) * np.array([1.0, 1.0, 1.5]) for _ in bodies]
    pair_rot = _yaw(np.pi / 2 + rng.uniform(-0.35, 0.35))
    base = np.array([rng.uniform(-0.3, 0.3), -rng.uniform(0.7, 0.9), rng.uniform(2.6, 3.4)])
    to_camera = _LOCAL_TO_CAMERA @ pair_rot

    positions = []
    for k, b in enumerate(bodies):
        rot, offset = poses[k]
        rest = {s: rest_hand(b, sg, rng) for s, sg in (("left", -1.0), ("right", 1.0))}
        frames = np.empty((n_frames, 25, 3))
        for t in range(n_frames):
            s_t = float(min_jerk((t - pre[k]) / durations[k]))
            arms = {}
            for s, sg in (("left", -1.0), ("right", 1.0)):
                hand = rest[s]
                if s == side:
                    hand = hand + s_t * (targets[k] - hand) + np.sin(np.pi * s_t) * bumps[k]
                shoulder = shoulder_position(b, sg)
                elbow, wrist, along = place_arm(shoulder, hand, b, sg, swivel[k] * sg)
                arms[s] = (shoulder, elbow, wrist, hand, along)
            local = body_frame(b, arms)
            frames[t] = (local @ rot.T + offset) @ to_camera.T + base
        positions.append(frames)

    seqs = tuple(SkeletonSequence(p, FRAME_RATE, body_id=str(72057594037927936 + int(rng.integers(1, 10 ** 6))))
                 for p in positions)
    truth = {"left_handed": bool(left_handed), "n_frames": n_frames,
             "arm_lengths": [[b.upper_arm, b.forearm] for b in bodies]}
    if left_handed:
        truth.update(segment=None, expected_rejection="left-hand", final_hand=None)
    else:
        hands = [p[:, J["hand_right"]] for p in positions]
        start, end = _truth(hands, cfg)
        truth.update(segment=[start, end], expected_rejection=None,
                     final_hand=[h[end].tolist() for h in hands])
    return Handshake(seqs, truth)


def add_noise(seq, noise, rng):
    if noise <= 0:
        return seq
    return SkeletonSequence(seq.positions + rng.normal(0.0, noise, seq.positions.shape),
                            seq.frame_rate, seq.source_label, body_id=seq.body_id)


def generate_synthetic_dataset(out_dir, n, seed=0, noise=0.0, n_left=0, cfg=None):
    """Write ``n`` handshake recordings plus truth sidecars into ``out_dir``.

    ``n_left`` of them, chosen by the seed, are left-handed. Returns the
    written ``.skeleton`` paths in index order.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    if not 0 <= n_left <= n:
        raise ValidationError("n_left must lie in [0, n]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    left = set(rng.choice(n, size=n_left, replace=False).tolist()) if n_left else set()
    paths = []
    for i in range(n):
        shake = generate_handshake(rng, left_handed=i in left, cfg=cfg)
        seqs = [add_noise(s, noise, rng) for s in shake.sequences]
        path = out / f"handshake_{i:04d}.skeleton"
        path.write_text(serialize_skeleton_file(seqs))
        truth = dict(shake.truth, index=i, seed=seed, noise=noise)
        path.with_suffix(".truth.json").write_text(json.dumps(truth, indent=1))
        paths.append(path)
    return paths


def read_truth(skeleton_path):
    return json.loads(Path(skeleton_path).with_suffix(".truth.json").read_text())
