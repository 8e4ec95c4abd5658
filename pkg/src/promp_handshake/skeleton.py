"""Skeleton recordings: NTU ``.skeleton`` parsing, upper-body selection,
reach-phase segmentation and tracking-defect detection.

Positions are stored as ``(n_frames, n_joints, 3)`` float arrays in meters.
The 25-joint layout is the Kinect v2 joint order used by NTU RGB+D; the
15-joint upper-body layout is defined by :data:`UPPER_BODY_JOINTS`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import savgol_coeffs, savgol_filter

from .errors import EmptyInputError, ParseError, SegmentationRejected, ValidationError

KINECT_JOINTS = (
    "spine_base", "spine_mid", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right",
    "spine_shoulder", "hand_tip_left", "thumb_left", "hand_tip_right", "thumb_right",
)

UPPER_BODY_JOINTS = (
    "spine_base", "spine_mid", "spine_shoulder", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hand_tip_left", "hand_tip_right",
)

# The single authoritative 25 -> 15 index map.
UPPER_BODY_INDICES = tuple(KINECT_JOINTS.index(name) for name in UPPER_BODY_JOINTS)

# Slot of each joint in the 15-joint layout.
UB = {name: i for i, name in enumerate(UPPER_BODY_JOINTS)}

NOT_TRACKED, INFERRED, TRACKED = 0, 1, 2

N_KINECT_JOINTS = 25
N_JOINT_FIELDS = 12
N_BODY_FIELDS = 10


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """Time-indexed joint positions for one recorded person.

    ``tracking`` holds per-joint Kinect tracking states when known.
    ``frame_index`` holds the frame ordinals in the source file.
    ``body_info`` and ``joint_extras`` carry the NTU fields this package does
    not interpret, so a parsed file can be written back unchanged.
    """

    positions: np.ndarray
    frame_rate: float = 30.0
    source_label: str = ""
    tracking: np.ndarray | None = None
    frame_index: np.ndarray | None = None
    body_id: str | None = None
    body_info: tuple | None = field(default=None, repr=False)
    joint_extras: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[-1] != 3 or len(pos) == 0:
            raise ValidationError(f"positions must be a non-empty (n, J, 3) array, got {pos.shape}")
        object.__setattr__(self, "positions", pos)
        if self.frame_index is None:
            object.__setattr__(self, "frame_index", np.arange(len(pos)))
        else:
            idx = np.asarray(self.frame_index, dtype=int)
            if len(idx) != len(pos) or np.any(np.diff(idx) <= 0):
                raise ValidationError("frame_index must be strictly increasing, one entry per frame")
            object.__setattr__(self, "frame_index", idx)
        if self.tracking is not None:
            object.__setattr__(self, "tracking", np.asarray(self.tracking, dtype=int))

    def __len__(self):
        return len(self.positions)

    @property
    def n_joints(self):
        return self.positions.shape[1]

    def joint(self, name):
        """Trajectory ``(n, 3)`` of a named joint (upper-body or Kinect layout)."""
        names = UPPER_BODY_JOINTS if self.n_joints == len(UPPER_BODY_JOINTS) else KINECT_JOINTS
        return self.positions[:, names.index(name)]

    def slice(self, start, stop):
        """Frames ``start:stop`` as a new sequence."""
        s = np.s_[start:stop]
        return replace(
            self,
            positions=self.positions[s],
            tracking=None if self.tracking is None else self.tracking[s],
            frame_index=self.frame_index[s],
            body_info=None if self.body_info is None else self.body_info[s],
            joint_extras=None if self.joint_extras is None else self.joint_extras[s],
        )

    def equals(self, other):
        """Field-for-field equality (exact on floats)."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(np.asarray(a), np.asarray(b))

        return (
            isinstance(other, SkeletonSequence)
            and self.frame_rate == other.frame_rate
            and self.source_label == other.source_label
            and self.body_id == other.body_id
            and same(self.positions, other.positions)
            and same(self.tracking, other.tracking)
            and same(self.frame_index, other.frame_index)
            and self.body_info == other.body_info
            and same(self.joint_extras, other.joint_extras)
        )


@dataclass(frozen=True)
class SegmentationConfig:
    """Thresholds for cutting the reach phase out of a two-person recording.

    Hand speed is estimated by finite differences on clean data and by a
    Savitzky-Golay derivative (with the noise contribution subtracted) once
    the estimated per-coordinate noise exceeds ``noise_floor``. Motion onset
    is confirmed when the speed exceeds ``confirm_factor`` times the start
    threshold; the start frame is then the first frame of the run above the
    start threshold leading into it. On noisy data the walk-back threshold is
    raised by ``walkback_noise_factor`` standard deviations of the speed
    noise, which offsets the smoothing filter's tendency to start early.
    """

    start_velocity_threshold: float = 0.05  # m/s
    grasp_distance_threshold: float = 0.12  # m
    min_length: int = 15  # frames
    max_gap: int = 3  # frames
    discontinuity_threshold: float = 0.3  # m/frame
    smoothing_window: int = 21
    smoothing_order: int = 3
    confirm_factor: float = 4.0
    noise_floor: float = 5e-4  # m
    walkback_noise_factor: float = 1.5

    def __post_init__(self):
        for name in ("start_velocity_threshold", "grasp_distance_threshold", "min_length",
                     "max_gap", "discontinuity_threshold", "confirm_factor", "noise_floor"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.walkback_noise_factor < 0:
            raise ValidationError("walkback_noise_factor must be non-negative")
        if self.smoothing_window % 2 == 0 or self.smoothing_window <= self.smoothing_order:
            raise ValidationError("smoothing_window must be odd and larger than smoothing_order")


# ---------------------------------------------------------------------------
# NTU .skeleton format


def _int_field(line, lineno, what):
    try:
        return int(line.strip())
    except ValueError:
        raise ParseError(f"expected integer {what}, got {line.strip()!r}", lineno) from None


def parse_skeleton_file(content, frame_rate=30.0, source_label=""):
    """Parse NTU ``.skeleton`` text into one 25-joint sequence per body id.

    ``content`` may be ``bytes`` or ``str``. Sequences are returned in order
    of first appearance; each keeps the ordinals of the frames the body was
    present in.
    """
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    lines = content.splitlines()
    if not any(line.strip() for line in lines):
        raise EmptyInputError("empty skeleton file")

    pos = 0

    def next_line(what):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file, expected {what}", pos + 1)
        pos += 1
        return lines[pos - 1], pos

    line, ln = next_line("frame count")
    n_frames = _int_field(line, ln, "frame count")
    if n_frames < 0:
        raise ParseError("negative frame count", ln)

    bodies = {}
    order = []
    for f in range(n_frames):
        line, ln = next_line("body count")
        n_bodies = _int_field(line, ln, "body count")
        for _ in range(n_bodies):
            line, ln = next_line("body metadata")
            meta = line.split()
            if len(meta) != N_BODY_FIELDS:
                raise ParseError(f"body metadata needs {N_BODY_FIELDS} fields, got {len(meta)}", ln)
            body_id = meta[0]
            line, ln = next_line("joint count")
            n_joints = _int_field(line, ln, "joint count")
            if n_joints != N_KINECT_JOINTS:
                raise ParseError(f"joint count must be {N_KINECT_JOINTS}, got {n_joints}", ln)
            joints = np.empty((N_KINECT_JOINTS, N_JOINT_FIELDS))
            for j in range(N_KINECT_JOINTS):
                line, ln = next_line("joint line")
                fields = line.split()
                if len(fields) != N_JOINT_FIELDS:
                    raise ParseError(
                        f"joint line needs {N_JOINT_FIELDS} fields, got {len(fields)}", ln)
                try:
                    joints[j] = [float(v) for v in fields]
                except ValueError:
                    raise ParseError(f"non-numeric joint field in {line.strip()!r}", ln) from None
            state = joints[:, 11]
            if np.any(state != np.round(state)):
                raise ParseError("tracking state must be an integer", ln)
            if body_id not in bodies:
                bodies[body_id] = {"frames": [], "joints": [], "meta": []}
                order.append(body_id)
            rec = bodies[body_id]
            if rec["frames"] and rec["frames"][-1] == f:
                raise ParseError(f"body {body_id} appears twice in frame {f}", ln)
            rec["frames"].append(f)
            rec["joints"].append(joints)
            rec["meta"].append(tuple(meta[1:]))
    if any(line.strip() for line in lines[pos:]):
        raise ParseError("trailing content after last frame", pos + 1)

    sequences = []
    for body_id in order:
        rec = bodies[body_id]
        data = np.stack(rec["joints"])
        label = f"{source_label}#{body_id}" if source_label else str(body_id)
        sequences.append(SkeletonSequence(
            positions=data[:, :, 0:3],
            frame_rate=frame_rate,
            source_label=label,
            tracking=data[:, :, 11].astype(int),
            frame_index=np.array(rec["frames"]),
            body_id=body_id,
            body_info=tuple(rec["meta"]),
            joint_extras=data[:, :, 3:11],
        ))
    return sequences


def read_skeleton_file(path, frame_rate=30.0):
    path = Path(path)
    return parse_skeleton_file(path.read_bytes(), frame_rate=frame_rate, source_label=path.stem)


def _fmt(x):
    return repr(float(x))


def serialize_skeleton_file(sequences, n_frames=None):
    """Write 25-joint sequences back to NTU ``.skeleton`` text.

    Missing metadata is written as zeros and missing tracking states as
    ``TRACKED``. ``n_frames`` defaults to one past the largest frame ordinal.
    """
    if n_frames is None:
        n_frames = max(int(s.frame_index[-1]) for s in sequences) + 1 if sequences else 0
    per_frame = [[] for _ in range(n_frames)]
    for k, seq in enumerate(sequences):
        if seq.n_joints != N_KINECT_JOINTS:
            raise ValidationError("only 25-joint sequences can be written as .skeleton")
        for i, f in enumerate(seq.frame_index):
            per_frame[f].append((k, i))

    out = [str(n_frames)]
    for entries in per_frame:
        out.append(str(len(entries)))
        for k, i in entries:
            seq = sequences[k]
            body_id = seq.body_id if seq.body_id is not None else str(k)
            meta = seq.body_info[i] if seq.body_info is not None else ("0",) * (N_BODY_FIELDS - 1)
            out.append(" ".join((body_id, *meta)))
            out.append(str(N_KINECT_JOINTS))
            extras = seq.joint_extras[i] if seq.joint_extras is not None else np.zeros((25, 8))
            states = seq.tracking[i] if seq.tracking is not None else np.full(25, TRACKED)
            for j in range(N_KINECT_JOINTS):
                vals = [_fmt(v) for v in seq.positions[i, j]] + [_fmt(v) for v in extras[j]]
                out.append(" ".join(vals + [str(int(states[j]))]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Upper body, pairing


def select_upper_body(seq):
    """Reduce a 25-joint sequence to the 15 upper-body joints."""
    if seq.n_joints != N_KINECT_JOINTS:
        raise ValidationError(f"expected {N_KINECT_JOINTS} joints, got {seq.n_joints}")
    idx = list(UPPER_BODY_INDICES)
    return replace(
        seq,
        positions=seq.positions[:, idx],
        tracking=None if seq.tracking is None else seq.tracking[:, idx],
        joint_extras=None,
    )


def pair_bodies(sequences):
    """Pick the two longest-tracked bodies and align them on shared frames.

    Returns the pair ordered by first appearance in the file.
    """
    if len(sequences) < 2:
        raise SegmentationRejected("no partner", f"{len(sequences)} body in recording")
    ranked = sorted(range(len(sequences)), key=lambda k: (-len(sequences[k]), k))
    a, b = sorted(ranked[:2])
    sa, sb = sequences[a], sequences[b]
    common = np.intersect1d(sa.frame_index, sb.frame_index)
    if len(common) == 0:
        raise SegmentationRejected("no partner", "bodies never visible together")
    ia = np.searchsorted(sa.frame_index, common)
    ib = np.searchsorted(sb.frame_index, common)
    return _take(sa, ia), _take(sb, ib)


def _take(seq, idx):
    return replace(
        seq,
        positions=seq.positions[idx],
        tracking=None if seq.tracking is None else seq.tracking[idx],
        frame_index=seq.frame_index[idx],
        body_info=None if seq.body_info is None else tuple(seq.body_info[i] for i in idx),
        joint_extras=None if seq.joint_extras is None else seq.joint_extras[idx],
    )


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Defect:
    frame: int
    kind: str  # "discontinuity" | "non-finite"
    joints: tuple
    magnitude: float = math.nan


def validate_sequence(seq, discontinuity_threshold=0.3):
    """List tracking defects; an empty list means the sequence is clean.

    A frame is reported once per defect kind: non-finite coordinates, or any
    joint moving more than ``discontinuity_threshold`` meters since the
    previous frame.
    """
    p = seq.positions
    finite = np.isfinite(p).all(axis=-1)
    defects = []
    for t in range(len(p)):
        bad = np.flatnonzero(~finite[t])
        if bad.size:
            defects.append(Defect(t, "non-finite", tuple(int(j) for j in bad)))
        if t == 0:
            continue
        ok = finite[t] & finite[t - 1]
        jump = np.linalg.norm(p[t] - p[t - 1], axis=-1)
        jumped = np.flatnonzero(ok & (jump > discontinuity_threshold))
        if jumped.size:
            defects.append(Defect(t, "discontinuity", tuple(int(j) for j in jumped),
                                  float(jump[jumped].max())))
    return defects


# ---------------------------------------------------------------------------
# Gap filling and segmentation


def _valid_mask(seq):
    ok = np.isfinite(seq.positions).all(axis=-1)
    if seq.tracking is not None:
        ok &= seq.tracking != NOT_TRACKED
    return ok


def _runs(mask):
    """(start, stop) of each run of True values."""
    m = np.concatenate([[False], mask, [False]]).astype(int)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def fill_gaps(seq, max_gap):
    """Linearly interpolate untracked or non-finite joints.

    Raises :class:`SegmentationRejected` (``"tracking gap"``) when a joint is
    missing for more than ``max_gap`` consecutive frames.
    """
    ok = _valid_mask(seq)
    if ok.all():
        return seq
    p = seq.positions.copy()
    n = len(p)
    for j in range(p.shape[1]):
        bad = ~ok[:, j]
        if not bad.any():
            continue
        for start, stop in _runs(bad):
            if stop - start > max_gap:
                raise SegmentationRejected(
                    "tracking gap", f"joint {j} missing for {stop - start} frames at {start}")
        good = np.flatnonzero(~bad)
        if good.size == 0:
            raise SegmentationRejected("tracking gap", f"joint {j} never tracked")
        for k in range(3):
            p[bad, j, k] = np.interp(np.flatnonzero(bad), good, p[good, j, k])
    return replace(seq, positions=p)


_NOISE_DIFF_ORDER = 5
_NOISE_DIFF_GAIN = math.sqrt(math.comb(2 * _NOISE_DIFF_ORDER, _NOISE_DIFF_ORDER))


def estimate_noise(x):
    """Robust per-coordinate noise level (m) from fifth differences.

    High-order differences cancel smooth reaching motion, so only the
    white-noise part survives; the median absolute value is rescaled to a
    standard deviation.
    """
    x = np.asarray(x, dtype=float)
    if len(x) <= _NOISE_DIFF_ORDER:
        return 0.0
    d = np.diff(x, _NOISE_DIFF_ORDER, axis=0)
    return float(np.median(np.abs(d)) / (0.6745 * _NOISE_DIFF_GAIN))


def _smoothing_window(n, cfg):
    w = min(cfg.smoothing_window, n if n % 2 else n - 1)
    return w if w > cfg.smoothing_order else 0


def smooth_positions(x, frame_rate, cfg):
    """Positions used for segmentation decisions (unchanged when clean)."""
    w = _smoothing_window(len(x), cfg)
    if estimate_noise(x) <= cfg.noise_floor or not w:
        return np.asarray(x, dtype=float)
    return savgol_filter(x, w, cfg.smoothing_order, axis=0, mode="mirror")


def hand_speed(x, frame_rate, cfg):
    """Speed (m/s) of a single-joint trajectory ``(n, 3)``.

    Backward differences on clean data (speed of frame 0 is 0). On noisy data a
    Savitzky-Golay derivative whose expected noise energy is subtracted.
    """
    x = np.asarray(x, dtype=float)
    sigma = estimate_noise(x)
    w = _smoothing_window(len(x), cfg)
    if sigma <= cfg.noise_floor or not w:
        v = np.zeros(len(x))
        v[1:] = np.linalg.norm(np.diff(x, axis=0), axis=-1) * frame_rate
        return v
    dx = savgol_filter(x, w, cfg.smoothing_order, deriv=1, delta=1.0 / frame_rate,
                       axis=0, mode="mirror")
    c = savgol_coeffs(w, cfg.smoothing_order, deriv=1, delta=1.0 / frame_rate)
    s2 = (dx ** 2).sum(axis=-1) - x.shape[1] * sigma ** 2 * float(c @ c)
    return np.sqrt(np.maximum(s2, 0.0))


def speed_noise(x, frame_rate, cfg):
    """Per-coordinate noise std (m/s) of :func:`hand_speed`'s derivative; 0 on clean data."""
    sigma = estimate_noise(x)
    w = _smoothing_window(len(x), cfg)
    if sigma <= cfg.noise_floor or not w:
        return 0.0
    c = savgol_coeffs(w, cfg.smoothing_order, deriv=1, delta=1.0 / frame_rate)
    return sigma * float(np.linalg.norm(c))


def motion_onset(speed, cfg, noise=0.0):
    """First frame of the sustained movement, or ``None``.

    ``noise`` is the speed noise level from :func:`speed_noise`.
    """
    confirmed = np.flatnonzero(speed > cfg.confirm_factor * cfg.start_velocity_threshold)
    if confirmed.size == 0:
        above = np.flatnonzero(speed > cfg.start_velocity_threshold)
        return int(above[0]) if above.size else None
    i = int(confirmed[0])
    floor = cfg.start_velocity_threshold + cfg.walkback_noise_factor * noise
    while i > 0 and speed[i - 1] > floor:
        i -= 1
    return i


def first_contact(a, b, threshold):
    d = np.linalg.norm(a - b, axis=-1)
    hit = np.flatnonzero(d <= threshold)
    return int(hit[0]) if hit.size else None


@dataclass(frozen=True, eq=False)
class Segment:
    """Reach phase ``[start, end]`` (inclusive) of a two-person recording."""

    start: int
    end: int
    persons: tuple

    def __len__(self):
        return self.end - self.start + 1


def segment_reach_phase(pair, cfg=None):
    """Cut the reach phase out of a two-person upper-body recording.

    The segment runs from motion onset of either right hand to the first
    frame where the two right hands are within the grasp distance. Raises
    :class:`SegmentationRejected` for left-hand shakes, recordings without
    movement or contact, tracking gaps and segments shorter than
    ``cfg.min_length``.
    """
    cfg = cfg or SegmentationConfig()
    a, b = pair
    if len(a) != len(b) or a.frame_rate != b.frame_rate:
        raise ValidationError("both sequences must share length and frame rate")
    if a.n_joints != len(UPPER_BODY_JOINTS) or b.n_joints != len(UPPER_BODY_JOINTS):
        raise ValidationError("segmentation expects 15-joint upper-body sequences")
    a = fill_gaps(a, cfg.max_gap)
    b = fill_gaps(b, cfg.max_gap)
    fr = a.frame_rate

    def hand(seq, side):
        return smooth_positions(seq.positions[:, UB[f"hand_{side}"]], fr, cfg)

    t_right = first_contact(hand(a, "right"), hand(b, "right"), cfg.grasp_distance_threshold)
    t_left = first_contact(hand(a, "left"), hand(b, "left"), cfg.grasp_distance_threshold)
    if t_left is not None and (t_right is None or t_left < t_right):
        raise SegmentationRejected("left-hand", f"left hands meet at frame {t_left}")
    if t_right is None:
        raise SegmentationRejected("no grasp", "right hands never within grasp distance")

    onsets = []
    for s in (a, b):
        h = s.positions[:t_right + 1, UB["hand_right"]]
        onsets.append(motion_onset(hand_speed(h, fr, cfg), cfg, speed_noise(h, fr, cfg)))
    onsets = [t for t in onsets if t is not None and t < t_right]
    if not onsets:
        raise SegmentationRejected("no movement", "no right-hand motion before contact")
    t_start = min(onsets)
    length = t_right - t_start + 1
    if length < cfg.min_length:
        raise SegmentationRejected("too short", f"{length} frames < {cfg.min_length}")
    persons = (a.slice(t_start, t_right + 1), b.slice(t_start, t_right + 1))
    return Segment(t_start, t_right, persons)


# ---------------------------------------------------------------------------
# Cleaned-trajectory files


def write_cleaned_trajectory(path, seq, segment_bounds=None):
    """Write frames as JSON lines and a ``.meta.json`` sidecar next to them."""
    path = Path(path)
    with open(path, "w") as fh:
        for t, frame in enumerate(seq.positions):
            fh.write(json.dumps({"t": t, "joints": frame.tolist()}) + "\n")
    meta = {
        "frame_rate": seq.frame_rate,
        "source_label": seq.source_label,
        "segment_bounds": None if segment_bounds is None else [int(x) for x in segment_bounds],
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1))


def read_cleaned_trajectory(path):
    path = Path(path)
    frames = []
    with open(path) as fh:
        for k, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["t"] != k:
                raise ParseError(f"expected t={k}, got {rec['t']}", k + 1)
            frames.append(rec["joints"])
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    seq = SkeletonSequence(np.array(frames, dtype=float), frame_rate=meta["frame_rate"],
                           source_label=meta["source_label"])
    return seq, meta.get("segment_bounds")
