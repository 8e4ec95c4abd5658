"""Per-frame interaction controller.

Each partner frame updates the hand predictor, blends the prediction with
the observed hand, conditions the primitive on the blended target and emits
the conditioned mean as a joint command. Conditioning always starts from the
learned prior, so the command stream is a pure function of the frames seen.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ContractError, LoadError, ValidationError
from .kinematics import ArmModel, TorsoFrame, forward_kinematics
from .predictor import PredictorSession
from .promp import ProMP, TaskTarget, condition_task_space, marginal
from .skeleton import UB

DEFAULT_TASK_STD = 0.01  # m
DEFAULT_KAPPA = 0.01


@dataclass(frozen=True)
class BlendConfig:
    """Sigmoid hand-over from predicted to observed hand.

    The weight on the observed hand is ``sigmoid(slope * (t - t_c))`` with
    ``t_c = center_fraction * expected_length`` frames. ``alpha`` is kept as
    reference metadata; it does not enter the weight.
    """

    alpha: float = 0.67
    expected_length: int = 32
    sigmoid_slope: float = 0.3
    center_fraction: float = 0.625

    def __post_init__(self):
        if not self.expected_length > 0:
            raise ValidationError("expected_length must be positive")
        if not self.sigmoid_slope > 0:
            raise ValidationError("sigmoid_slope must be positive")

    @property
    def center(self):
        return self.center_fraction * self.expected_length


def blend_weight(t, cfg=None):
    cfg = cfg or BlendConfig()
    return float(expit(cfg.sigmoid_slope * (t - cfg.center)))


def blend_target(h_hat, h_obs, t, cfg=None):
    """``(1 - w) * h_hat + w * h_obs`` with ``w = blend_weight(t)``."""
    h_hat = np.asarray(h_hat, dtype=float)
    h_obs = np.asarray(h_obs, dtype=float)
    if not (np.all(np.isfinite(h_hat)) and np.all(np.isfinite(h_obs))):
        raise ValidationError("blend inputs must be finite")
    w = blend_weight(t, cfg)
    return (1.0 - w) * h_hat + w * h_obs


# ---------------------------------------------------------------------------
# interaction log


@dataclass(frozen=True)
class StepRecord:
    t: int
    h_obs: tuple
    h_hat: tuple | None  # None when the predictor failed
    h_star: tuple
    z: float
    command_q: tuple
    fk_position: tuple
    flags: tuple = ()

    def to_dict(self):
        return {
            "t": self.t,
            "h_obs": list(self.h_obs),
            "h_hat": None if self.h_hat is None else list(self.h_hat),
            "h_star": list(self.h_star),
            "z": self.z,
            "command_q": list(self.command_q),
            "fk_position": list(self.fk_position),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        tup = lambda v: None if v is None else tuple(float(x) for x in v)  # noqa: E731
        return cls(int(d["t"]), tup(d["h_obs"]), tup(d["h_hat"]), tup(d["h_star"]),
                   float(d["z"]), tup(d["command_q"]), tup(d["fk_position"]),
                   tuple(d.get("flags", ())))


@dataclass(frozen=True)
class InteractionLog:
    records: tuple
    label: str = ""

    def __post_init__(self):
        if not self.records:
            raise ContractError("an interaction log needs at least one step")

    def __len__(self):
        return len(self.records)

    @property
    def final_error(self):
        last = self.records[-1]
        return float(np.linalg.norm(np.subtract(last.fk_position, last.h_obs)))

    @property
    def fallback_steps(self):
        return sum("prediction-fallback" in r.flags for r in self.records)

    @property
    def nonconverged_steps(self):
        return sum("not-converged" in r.flags for r in self.records)

    def summary(self):
        return {
            "summary": True,
            "label": self.label,
            "steps": len(self.records),
            "final_error": self.final_error,
            "fallback_steps": self.fallback_steps,
            "nonconverged_steps": self.nonconverged_steps,
        }

    def commands(self):
        return np.array([r.command_q for r in self.records])

    def to_jsonl(self):
        lines = [json.dumps(r.to_dict()) for r in self.records]
        lines.append(json.dumps(self.summary()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        records, label = [], ""
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("summary"):
                label = d.get("label", "")
            else:
                records.append(StepRecord.from_dict(d))
        if not records:
            raise LoadError("interaction log has no step records")
        return cls(tuple(records), label)


def write_log(path, log):
    Path(path).write_text(log.to_jsonl())


def read_log(path):
    return InteractionLog.from_jsonl(Path(path).read_text())


# ---------------------------------------------------------------------------
# controller


@dataclass
class ControllerState:
    """Everything one interaction loop owns.

    ``prior`` is the learned primitive and never changes; ``promp`` holds the
    primitive conditioned at the latest step. Partner frames are mapped into
    the robot's torso frame with ``torso`` (identity when None).
    """

    prior: ProMP
    arm: ArmModel
    session: PredictorSession | None = None
    blend: BlendConfig = field(default_factory=BlendConfig)
    task_accuracy: np.ndarray = field(
        default_factory=lambda: DEFAULT_TASK_STD ** 2 * np.eye(3))
    kappa: float = DEFAULT_KAPPA
    torso: TorsoFrame | None = None
    label: str = ""
    step: int = 0
    promp: ProMP | None = None
    records: list = field(default_factory=list)

    def __post_init__(self):
        if self.promp is None:
            self.promp = self.prior


def new_controller(prior, arm, predictor=None, **kwargs):
    """Fresh controller state; ``predictor`` is a weights object or None."""
    session = None if predictor is None else PredictorSession(predictor)
    return ControllerState(prior, arm, session, **kwargs)


def controller_step(state, frame):
    """Advance one frame; returns the joint command and the updated state."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (len(UB), 3) or not np.all(np.isfinite(frame)):
        raise ValidationError(f"frame must be a finite ({len(UB)}, 3) array")
    if state.torso is not None:
        frame = state.torso.to_local(frame)
    t = state.step
    flags = []
    h_obs = frame[UB["hand_right"]]

    h_hat = None
    if state.session is not None:
        with np.errstate(all="ignore"):
            pred = state.session.step(frame)
        if np.all(np.isfinite(pred)):
            h_hat = pred
    if h_hat is None:
        flags.append("prediction-fallback")
        h_star = h_obs.copy()
    else:
        h_star = blend_target(h_hat, h_obs, t, state.blend)

    z = min(t / state.blend.expected_length, 1.0)
    target = TaskTarget(h_star, state.task_accuracy)
    state.promp, sol = condition_task_space(state.prior, z, target, state.arm,
                                            kappa=state.kappa, full_output=True)
    if not sol.converged:
        flags.append("not-converged")
    command = state.arm.clamp(marginal(state.promp, z)[0])
    fk = forward_kinematics(state.arm, command)

    state.records.append(StepRecord(
        t, tuple(h_obs.tolist()), None if h_hat is None else tuple(np.asarray(h_hat).tolist()),
        tuple(h_star.tolist()), float(z), tuple(command.tolist()), tuple(fk.tolist()),
        tuple(flags)))
    state.step += 1
    return command, state


def finish(state):
    if state.step == 0:
        raise ContractError("finish called before any controller step")
    return InteractionLog(tuple(state.records), state.label)
