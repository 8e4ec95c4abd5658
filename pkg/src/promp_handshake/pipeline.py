"""End-to-end orchestration: dataset preparation, fitting, replay, metrics.

A prepared dataset directory holds ``manifest.json`` and, per accepted
recording, the cleaned reach-phase frames and right-arm joint angles of both
people. Either person can play the robot: the other one is the partner whose
hand the robot reaches for.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import control, predictor
from .errors import (ContractError, ExtractionError, LoadError, ParseError, PipelineError,
                     SegmentationRejected, ValidationError)
from .kinematics import (ArmModel, estimate_arm_model, extract_trajectory, load_arm_model,
                         read_joint_angles, torso_frame, write_joint_angles)
from .promp import BasisConfig, ProMP, learn_promp, load_promp
from .skeleton import (UB, SegmentationConfig, SkeletonSequence, pair_bodies, read_cleaned_trajectory,
                       read_skeleton_file, segment_reach_phase, select_upper_body, validate_sequence,
                       write_cleaned_trajectory)

CONFIG_VERSION = 1
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    regularizer: str = "ridge"
    ridge_lambda: float = 1e-10
    predictor: predictor.PredictorConfig = field(default_factory=predictor.PredictorConfig)
    blend: control.BlendConfig = field(default_factory=control.BlendConfig)
    task_std: float = control.DEFAULT_TASK_STD
    kappa: float = control.DEFAULT_KAPPA
    test_fraction: float = 0.2
    end_effector: str = "hand"

    def to_dict(self):
        d = {
            "version": CONFIG_VERSION,
            "segmentation": asdict(self.segmentation),
            "basis": self.basis.to_dict(),
            "regularizer": self.regularizer,
            "ridge_lambda": self.ridge_lambda,
            "predictor": asdict(self.predictor),
            "blend": asdict(self.blend),
            "task_std": self.task_std,
            "kappa": self.kappa,
            "test_fraction": self.test_fraction,
            "end_effector": self.end_effector,
        }
        d["predictor"]["betas"] = list(d["predictor"]["betas"])
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CONFIG_VERSION:
            raise LoadError(f"unsupported config version {d.get('version')!r}")
        known = {"version", "segmentation", "basis", "regularizer", "ridge_lambda", "predictor",
                 "blend", "task_std", "kappa", "test_fraction", "end_effector"}
        unknown = set(d) - known
        if unknown:
            raise LoadError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {k: d[k] for k in ("regularizer", "ridge_lambda", "task_std", "kappa",
                                    "test_fraction", "end_effector") if k in d}
            if "segmentation" in d:
                kw["segmentation"] = SegmentationConfig(**d["segmentation"])
            if "basis" in d:
                kw["basis"] = BasisConfig(**d["basis"])
            if "predictor" in d:
                kw["predictor"] = predictor.PredictorConfig(**d["predictor"])
            if "blend" in d:
                kw["blend"] = control.BlendConfig(**d["blend"])
        except TypeError as exc:
            raise LoadError(f"malformed config: {exc}") from exc
        return cls(**kw)


def load_config(path):
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(path, cfg):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1))


# ---------------------------------------------------------------------------
# dataset preparation


@dataclass(frozen=True)
class ManifestEntry:
    source: str
    status: str  # "accepted" | "rejected"
    reason: str | None = None
    detail: str = ""
    split: str | None = None  # "train" | "test" for accepted entries
    segment: tuple | None = None
    stem: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    seed: int
    test_fraction: float

    def __post_init__(self):
        for e in self.entries:
            if (e.status == "accepted") != (e.split in ("train", "test")):
                raise ContractError(f"{e.source}: split must be set exactly for accepted entries")

    @property
    def counts(self):
        acc = [e for e in self.entries if e.status == "accepted"]
        return {
            "total": len(self.entries),
            "accepted": len(acc),
            "rejected": len(self.entries) - len(acc),
            "train": sum(e.split == "train" for e in acc),
            "test": sum(e.split == "test" for e in acc),
        }

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def to_dict(self):
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
            "counts": self.counts,
            "entries": [dict(asdict(e), segment=None if e.segment is None else list(e.segment))
                        for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MANIFEST_VERSION:
            raise LoadError(f"unsupported manifest version {d.get('version')!r}")
        entries = tuple(ManifestEntry(**dict(e, segment=None if e["segment"] is None else tuple(e["segment"])))
                        for e in d["entries"])
        m = cls(entries, d["seed"], d["test_fraction"])
        if d.get("counts") not in (None, m.counts):
            raise LoadError("manifest counts disagree with its entries")
        return m


def load_manifest(data_dir):
    return DatasetManifest.from_dict(json.loads((Path(data_dir) / "manifest.json").read_text()))


def _clean_pair(path, cfg):
    """Segment one recording; returns the two upper-body reach-phase sequences."""
    bodies = [select_upper_body(s) for s in read_skeleton_file(path)]
    seg = segment_reach_phase(pair_bodies(bodies), cfg)
    for person in seg.persons:
        defects = validate_sequence(person, cfg.discontinuity_threshold)
        if defects:
            raise SegmentationRejected("irregular", f"{len(defects)} tracking defects, first at frame "
                                                    f"{defects[0].frame}")
        torso_frame(person.positions[0])
        extract_trajectory(person)
    return seg


def split_indices(n, seed, test_fraction):
    """Seeded permutation split of ``n`` items into (train, test) index lists."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in [0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    if n >= 2 and test_fraction > 0:
        n_test = min(max(n_test, 1), n - 1)
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def prepare_dataset(input_dir, out_dir, cfg=None, seed=0, test_fraction=0.2):
    """Segment every ``.skeleton`` file under ``input_dir`` into ``out_dir``."""
    cfg = cfg or SegmentationConfig()
    files = sorted(Path(input_dir).glob("*.skeleton"))
    if not files:
        raise PipelineError(f"no .skeleton files in {input_dir}")
    out = Path(out_dir)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)

    results = []
    for path in files:
        try:
            seg = _clean_pair(path, cfg)
        except SegmentationRejected as exc:
            results.append(ManifestEntry(path.name, "rejected", exc.reason, exc.detail))
            continue
        except (ParseError, ExtractionError) as exc:
            reason = "parse error" if isinstance(exc, ParseError) else "degenerate skeleton"
            results.append(ManifestEntry(path.name, "rejected", reason, str(exc)))
            continue
        stem = path.stem
        for k, person in enumerate(seg.persons):
            person = replace(person, source_label=f"{path.name}#{person.body_id}")
            base = traj_dir / f"{stem}_p{k}"
            write_cleaned_trajectory(base.with_suffix(".jsonl"), person, (seg.start, seg.end))
            q, _ = extract_trajectory(person)
            write_joint_angles(traj_dir / f"{stem}_p{k}.angles.jsonl", q)
        results.append(ManifestEntry(path.name, "accepted", segment=(seg.start, seg.end), stem=stem))

    accepted = [i for i, e in enumerate(results) if e.status == "accepted"]
    if not accepted:
        raise PipelineError("no recording survived segmentation")
    train, test = split_indices(len(accepted), seed, test_fraction)
    splits = {accepted[i]: "train" for i in train} | {accepted[i]: "test" for i in test}
    entries = tuple(replace(e, split=splits.get(i)) for i, e in enumerate(results))
    manifest = DatasetManifest(entries, seed, test_fraction)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=1))
    return manifest


@dataclass(frozen=True)
class Interaction:
    """Both people's reach phase from one accepted recording."""

    name: str
    persons: tuple  # two 15-joint SkeletonSequence objects
    angles: tuple  # two (n, 4) arrays


def load_interactions(data_dir, split=None):
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    out = []
    for e in manifest.entries:
        if e.status != "accepted" or (split is not None and e.split != split):
            continue
        persons, angles = [], []
        for k in range(2):
            seq, _ = read_cleaned_trajectory(data_dir / "trajectories" / f"{e.stem}_p{k}.jsonl")
            persons.append(seq)
            angles.append(read_joint_angles(data_dir / "trajectories" / f"{e.stem}_p{k}.angles.jsonl"))
        out.append(Interaction(e.stem, tuple(persons), tuple(angles)))
    return out


# ---------------------------------------------------------------------------
# fitting


def fit_primitive(interactions, cfg=None):
    """ProMP over the right-arm angles of every person in ``interactions``."""
    cfg = cfg or PipelineConfig()
    demos = [q for it in interactions for q in it.angles]
    if len(demos) < 2:
        raise PipelineError("need at least two demonstrations to fit a primitive")
    return learn_promp(demos, cfg.basis, cfg.regularizer, cfg.ridge_lambda)


def fit_arm_model(interactions, end_effector="hand"):
    """Median bone lengths over every person; the robot uses one nominal arm."""
    models = [estimate_arm_model(p, end_effector) for it in interactions for p in it.persons]
    return ArmModel(np.zeros(3), float(np.median([m.upper_arm_length for m in models])),
                    float(np.median([m.forearm_length for m in models])))


def partner_view(interaction, robot):
    """Partner frames in the robot's torso frame, and that frame.

    The torso frame is fixed at the robot's first frame, so the mapping only
    uses information available when the interaction starts.
    """
    torso = torso_frame(interaction.persons[robot].positions[0])
    partner = interaction.persons[1 - robot].positions
    return torso.to_local(partner), torso


def predictor_dataset(interactions):
    """``[(partner frames, final partner hand), ...]`` for both role assignments."""
    data = []
    for it in interactions:
        for robot in (0, 1):
            frames, _ = partner_view(it, robot)
            data.append((frames, frames[-1, UB["hand_right"]].copy()))
    return data


def train_hand_predictor(interactions, cfg=None, callback=None):
    cfg = cfg or predictor.PredictorConfig()
    data = predictor_dataset(interactions)
    std = predictor.fit_standardization([f for f, _ in data])
    return predictor.train(data, cfg, std, callback=callback)


# ---------------------------------------------------------------------------
# replay and evaluation


def _load(obj, loader):
    return loader(obj) if isinstance(obj, (str, Path)) else obj


def run_interaction(interaction, promp, weights, arm, robot=0, cfg=None):
    """Stream the partner's frames through the controller, one at a time.

    ``promp``, ``weights`` and ``arm`` may be objects or file paths.
    """
    cfg = cfg or PipelineConfig()
    promp = _load(promp, load_promp)
    weights = _load(weights, predictor.load_weights)
    arm = _load(arm, load_arm_model)
    if not isinstance(promp, ProMP) or promp.dof != 4:
        raise LoadError("primitive must be a 4-DoF ProMP")
    if weights is not None and weights.config.input_dim != 3 * len(UB):
        raise LoadError(f"predictor expects {weights.config.input_dim} inputs, frames have {3 * len(UB)}")
    torso = torso_frame(interaction.persons[robot].positions[0])
    state = control.new_controller(
        promp, arm, weights, blend=cfg.blend, task_accuracy=cfg.task_std ** 2 * np.eye(3),
        kappa=cfg.kappa, torso=torso, label=f"{interaction.name}#robot{robot}")
    for frame in interaction.persons[1 - robot].positions:
        control.controller_step(state, frame)
    return control.finish(state)


@dataclass(frozen=True)
class EvaluationSummary:
    errors: tuple
    mean: float
    std: float
    count: int
    nonconverged: int
    fallbacks: int

    def to_dict(self):
        return asdict(self) | {"errors": list(self.errors)}


def evaluate(logs):
    logs = list(logs)
    if not logs:
        raise ContractError("evaluate needs at least one interaction log")
    errors = np.array([log.final_error for log in logs])
    return EvaluationSummary(tuple(errors.tolist()), float(errors.mean()), float(errors.std()),
                             len(errors), sum(log.nonconverged_steps > 0 for log in logs),
                             sum(log.fallback_steps for log in logs))


# ---------------------------------------------------------------------------
# plot-ready CSV files


def write_loss_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_m2"])
        w.writerows([i, repr(float(v))] for i, v in enumerate(curve))


def write_joint_trajectory_csv(path, log, observed_q=None):
    """Per step: commanded angles, observed (recorded) angles if given, FK and partner hand."""
    names = ("yaw", "pitch", "roll", "elbow")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t", "z"] + [f"cmd_{n}" for n in names]
        if observed_q is not None:
            header += [f"obs_{n}" for n in names]
        header += ["fk_x", "fk_y", "fk_z", "hand_x", "hand_y", "hand_z"]
        w.writerow(header)
        for k, r in enumerate(log.records):
            row = [r.t, r.z, *r.command_q]
            if observed_q is not None:
                row += list(observed_q[k])
            w.writerow(row + list(r.fk_position) + list(r.h_obs))


def write_error_histogram_csv(path, summary, bins=10):
    counts, edges = np.histogram(summary.errors, bins=bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low_m", "bin_high_m", "count"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([lo, hi, int(c)])


# ---------------------------------------------------------------------------
# whole experiment


@dataclass(frozen=True)
class ExperimentResult:
    manifest: DatasetManifest
    loss_curve: list
    summary: EvaluationSummary
    logs: tuple
    prior: ProMP | None = None
    arm: ArmModel | None = None
    weights: predictor.PredictorWeights | None = None


def run_experiment(raw_dir, work_dir, cfg=None, seed=0, progress=None):
    """Prepare, fit, train and replay every test interaction (robot = person 0)."""
    cfg = cfg or PipelineConfig()
    work = Path(work_dir)
    data_dir = work / "prepared"
    manifest = prepare_dataset(raw_dir, data_dir, cfg.segmentation, seed, cfg.test_fraction)
    train = load_interactions(data_dir, "train")
    test = load_interactions(data_dir, "test")
    prior = fit_primitive(train, cfg)
    arm = fit_arm_model(train, cfg.end_effector)
    weights, curve = train_hand_predictor(train, cfg.predictor, callback=progress)
    logs = tuple(run_interaction(it, prior, weights, arm, 0, cfg) for it in test)
    return ExperimentResult(manifest, curve, evaluate(logs), logs, prior, arm, weights)
