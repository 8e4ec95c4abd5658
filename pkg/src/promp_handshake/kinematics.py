"""Right-arm joint angles from upper-body skeletons, and the matching
forward kinematics / Jacobian of a 4-DoF arm.

Conventions
-----------
Everything is expressed in a torso frame rooted at the right shoulder:
x points from the left to the right shoulder, z up the spine, y = z x x
(forward). The arm hangs along -z in the zero pose.

Joint angles ``q = (yaw, pitch, roll, elbow)`` parametrize the upper arm as
``B @ Rz(yaw) @ Ry(pitch) @ Rx(roll)`` applied to the local x axis, where
``B`` maps the local shoulder frame (x down, y forward, z right) into the
torso frame. The elbow flexes about the local z axis after roll;
``elbow = 0`` is a fully extended arm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExtractionError, ParseError, ValidationError
from .skeleton import UB

YAW, PITCH, ROLL, ELBOW = range(4)
N_DOF = 4

# local shoulder axes (columns) in torso coordinates
SHOULDER_BASE = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0],
])

GIMBAL_TOL = 1e-6
_MIN_SEGMENT = 1e-2  # m


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class TorsoFrame:
    origin: np.ndarray
    axes: np.ndarray  # columns are the x, y, z axes in world coordinates

    def to_local(self, points):
        return (np.asarray(points, dtype=float) - self.origin) @ self.axes

    def to_world(self, points):
        return np.asarray(points, dtype=float) @ self.axes.T + self.origin


@dataclass(frozen=True)
class ArmModel:
    """Two-link arm: shoulder position in the torso frame and bone lengths.

    ``lower``/``upper`` are optional joint limits (rad), applied only when a
    command is clamped for a specific robot.
    """

    shoulder_origin: np.ndarray
    upper_arm_length: float
    forearm_length: float
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "shoulder_origin", np.asarray(self.shoulder_origin, dtype=float))
        if not (self.upper_arm_length > 0 and self.forearm_length > 0):
            raise ExtractionError("bone lengths must be positive")

    @property
    def reach(self):
        return self.upper_arm_length + self.forearm_length

    def clamp(self, q):
        q = np.asarray(q, dtype=float)
        if self.lower is not None:
            q = np.maximum(q, self.lower)
        if self.upper is not None:
            q = np.minimum(q, self.upper)
        return q

    def to_dict(self):
        d = {
            "shoulder_origin": self.shoulder_origin.tolist(),
            "upper_arm_length": float(self.upper_arm_length),
            "forearm_length": float(self.forearm_length),
        }
        if self.lower is not None:
            d["lower"] = np.asarray(self.lower).tolist()
        if self.upper is not None:
            d["upper"] = np.asarray(self.upper).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["shoulder_origin"], dtype=float),
            float(d["upper_arm_length"]),
            float(d["forearm_length"]),
            None if d.get("lower") is None else np.array(d["lower"], dtype=float),
            None if d.get("upper") is None else np.array(d["upper"], dtype=float),
        )


def torso_frame(frame):
    """Torso frame of one 15-joint upper-body frame ``(15, 3)``."""
    frame = np.asarray(frame, dtype=float)
    ls, rs = frame[UB["shoulder_left"]], frame[UB["shoulder_right"]]
    sb, ss = frame[UB["spine_base"]], frame[UB["spine_shoulder"]]
    pts = (ls, rs, sb, ss)
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(pts[i] - pts[j]) <= _MIN_SEGMENT:
                raise ExtractionError("shoulder/spine joints are degenerate")
    x = rs - ls
    x /= np.linalg.norm(x)
    up = ss - sb
    z = up - (up @ x) * x
    nz = np.linalg.norm(z)
    if nz <= _MIN_SEGMENT * np.linalg.norm(up):
        raise ExtractionError("spine is parallel to the shoulder line")
    z /= nz
    y = np.cross(z, x)
    return TorsoFrame(rs.copy(), np.column_stack([x, y, z]))


def arm_points(frame, torso=None):
    """Right shoulder, elbow and wrist expressed in the torso frame."""
    frame = np.asarray(frame, dtype=float)
    torso = torso or torso_frame(frame)
    idx = [UB["shoulder_right"], UB["elbow_right"], UB["wrist_right"]]
    return torso.to_local(frame[idx])


def _angles_from_points(shoulder, elbow, wrist):
    upper = elbow - shoulder
    fore = wrist - elbow
    lu, lf = np.linalg.norm(upper), np.linalg.norm(fore)
    if lu <= _MIN_SEGMENT or lf <= _MIN_SEGMENT:
        raise ExtractionError("elbow coincides with shoulder or wrist")
    u = SHOULDER_BASE.T @ (upper / lu)
    f = SHOULDER_BASE.T @ (fore / lf)
    elbow_angle = math.atan2(np.linalg.norm(np.cross(u, f)), float(u @ f))
    horiz = math.hypot(u[0], u[1])
    pitch = math.atan2(-u[2], horiz)
    if horiz < GIMBAL_TOL:
        # yaw and roll share an axis: put the forearm plane into yaw
        f_perp = f - (f @ u) * u
        yaw = math.atan2(-f_perp[0], f_perp[1]) if np.linalg.norm(f_perp) > 1e-12 else 0.0
        return np.array([yaw, pitch, 0.0, elbow_angle]), True
    yaw = math.atan2(u[1], u[0])
    local = (rot_z(yaw) @ rot_y(pitch)).T @ f
    roll = math.atan2(local[2], local[1]) if math.sin(elbow_angle) > 1e-12 else 0.0
    if roll == -math.pi:
        roll = math.pi
    return np.array([yaw, pitch, roll, elbow_angle]), False


def extract_arm_angles(frame):
    """Right-arm angles of one frame and whether the frame hit gimbal lock."""
    s, e, w = arm_points(frame)
    return _angles_from_points(s, e, w)


def extract_joint_angles(frame):
    """Right-arm ``(yaw, pitch, roll, elbow)`` of one upper-body frame."""
    return extract_arm_angles(frame)[0]


def extract_trajectory(seq):
    """Joint angles ``(n, 4)`` of a whole sequence and a per-frame gimbal flag."""
    out = np.empty((len(seq), N_DOF))
    flags = np.zeros(len(seq), dtype=bool)
    for t, frame in enumerate(seq.positions):
        out[t], flags[t] = extract_arm_angles(frame)
    return out, flags


def _arm_vector(model, q):
    yaw, pitch, roll, elbow = q
    local = np.array([model.upper_arm_length + model.forearm_length * math.cos(elbow),
                      model.forearm_length * math.sin(elbow), 0.0])
    return local


def forward_kinematics(model, q):
    """Wrist position in the torso frame."""
    yaw, pitch, roll, elbow = (float(v) for v in q)
    # Rz(yaw) Ry(pitch) Rx(roll) applied to the in-plane arm vector (vx, vy, 0)
    vx = model.upper_arm_length + model.forearm_length * math.cos(elbow)
    vy = model.forearm_length * math.sin(elbow)
    cr, sr = math.cos(roll), math.sin(roll)
    x1, y1, z1 = vx, vy * cr, vy * sr
    cp, sp = math.cos(pitch), math.sin(pitch)
    x2, z2 = cp * x1 + sp * z1, -sp * x1 + cp * z1
    cy, sy = math.cos(yaw), math.sin(yaw)
    x3, y3 = cy * x2 - sy * y1, sy * x2 + cy * y1
    # SHOULDER_BASE maps local (x, y, z) to torso (z, y, -x)
    return model.shoulder_origin + np.array([z2, y3, -x3])


def fk_and_jacobian(model, q):
    """Wrist position and its ``3 x 4`` Jacobian with respect to ``q``."""
    yaw, pitch, roll, elbow = q
    rz, ry, rx = rot_z(yaw), rot_y(pitch), rot_x(roll)
    v = _arm_vector(model, q)
    ryx = ry @ rx
    r = rz @ ryx
    dv = np.array([-model.forearm_length * math.sin(elbow),
                   model.forearm_length * math.cos(elbow), 0.0])
    jac = np.column_stack([
        _drot_z(yaw) @ (ryx @ v),
        rz @ (_drot_y(pitch) @ (rx @ v)),
        rz @ (ry @ (_drot_x(roll) @ v)),
        r @ dv,
    ])
    return model.shoulder_origin + SHOULDER_BASE @ (r @ v), SHOULDER_BASE @ jac


def jacobian(model, q):
    return fk_and_jacobian(model, q)[1]


def _rotation_derivatives(axis, a):
    """Rotation about ``axis`` and its first two derivatives, shape ``(3, 3, 3)``."""
    c, s = math.cos(a), math.sin(a)
    out = np.zeros((3, 3, 3))
    i, j = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}[axis]
    k = 3 - i - j
    # derivative n of [[c, -s], [s, c]] is [[cos(a + n pi/2), -sin(...)], [sin(...), cos(...)]]
    for n, (cn, sn) in enumerate(((c, s), (-s, c), (-c, -s))):
        out[n, i, i] = out[n, j, j] = cn
        out[n, i, j] = -sn
        out[n, j, i] = sn
    out[0, k, k] = 1.0
    return out


def _flat_index(orders):
    a, b, c, d = orders
    return ((c * 3 + d) * 3 + b) * 3 + a


# rows of the (c, d, b, a) product tensor holding f, df/dq_i and d2f/dq_i dq_j
_UNIT = np.eye(N_DOF, dtype=int)
_GATHER = np.array(
    [_flat_index((0, 0, 0, 0))]
    + [_flat_index(_UNIT[i]) for i in range(N_DOF)]
    + [_flat_index(_UNIT[i] + _UNIT[j]) for i in range(N_DOF) for j in range(N_DOF)]
)


def fk_derivatives(model, q):
    """Wrist position, ``3 x 4`` Jacobian and ``(3, 4, 4)`` Hessian in one pass."""
    yaw, pitch, roll, elbow = q
    lf = model.forearm_length
    c, s = math.cos(elbow), math.sin(elbow)
    vecs = np.array([
        [model.upper_arm_length + lf * c, lf * s, 0.0],
        [-lf * s, lf * c, 0.0],
        [-lf * c, -lf * s, 0.0],
    ])
    rx = _rotation_derivatives("x", roll)
    ry = _rotation_derivatives("y", pitch)
    rz = _rotation_derivatives("z", yaw)
    # t[c, d, b, a] = Rz^(a) Ry^(b) Rx^(c) v^(d), mapped into the torso frame
    t = rx @ vecs.T  # (c, k, d)
    t = ry[:, None] @ t[None]  # (b, c, j, d)
    t = rz[:, None, None] @ t[None]  # (a, b, c, i, d)
    t = np.transpose(SHOULDER_BASE @ t, (2, 4, 1, 0, 3)).reshape(-1, 3)[_GATHER]
    pos = model.shoulder_origin + t[0]
    jac = t[1:1 + N_DOF].T
    hess = t[1 + N_DOF:].T.reshape(3, N_DOF, N_DOF)
    return pos, jac, hess


def fk_hessian(model, q):
    """Second derivatives of the wrist position, shape ``(3, 4, 4)``."""
    return fk_derivatives(model, q)[2]


def estimate_arm_model(seq, end_effector="wrist"):
    """Median bone lengths of the right arm over a sequence (>= 5 frames).

    With ``end_effector="hand"`` the forearm link runs from the elbow to the
    hand joint, so forward kinematics reports where the hand is. The shoulder
    sits at the torso-frame origin by construction.
    """
    if end_effector not in ("wrist", "hand"):
        raise ValidationError(f"end_effector must be 'wrist' or 'hand', got {end_effector!r}")
    if len(seq) < 5:
        raise ExtractionError(f"need at least 5 frames to estimate bone lengths, got {len(seq)}")
    p = seq.positions
    sh, el = p[:, UB["shoulder_right"]], p[:, UB["elbow_right"]]
    tip = p[:, UB[f"{end_effector}_right"]]
    lu = float(np.median(np.linalg.norm(el - sh, axis=-1)))
    lf = float(np.median(np.linalg.norm(tip - el, axis=-1)))
    return ArmModel(np.zeros(3), lu, lf)


# ---------------------------------------------------------------------------
# files


def write_joint_angles(path, q):
    with open(path, "w") as fh:
        for t, row in enumerate(np.asarray(q, dtype=float)):
            fh.write(json.dumps({"t": t, "q": row.tolist()}) + "\n")


def read_joint_angles(path):
    rows = []
    with open(path) as fh:
        for k, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["t"] != k or len(rec["q"]) != N_DOF:
                raise ParseError("malformed joint-angle record", k + 1)
            rows.append(rec["q"])
    return np.array(rows, dtype=float).reshape(-1, N_DOF)


def save_arm_model(path, model):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_arm_model(path):
    return ArmModel.from_dict(json.loads(Path(path).read_text()))
