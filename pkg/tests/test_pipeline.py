import csv
import json
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promp_handshake.control import InteractionLog, StepRecord
from promp_handshake.errors import ContractError, LoadError, PipelineError, ValidationError
from promp_handshake.pipeline import (
    DatasetManifest,
    Interaction,
    ManifestEntry,
    PipelineConfig,
    evaluate,
    fit_arm_model,
    fit_primitive,
    load_config,
    load_interactions,
    load_manifest,
    partner_view,
    predictor_dataset,
    prepare_dataset,
    run_interaction,
    save_config,
    split_indices,
    train_hand_predictor,
    write_error_histogram_csv,
    write_joint_trajectory_csv,
    write_loss_curve_csv,
)
from promp_handshake.predictor import PredictorConfig, save_weights
from promp_handshake.promp import BasisConfig, ProMP, save_promp
from promp_handshake.kinematics import save_arm_model
from promp_handshake.skeleton import UB
from promp_handshake.synthetic import generate_synthetic_dataset

SMALL_NET = PredictorConfig(hidden_dim=8, epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    generate_synthetic_dataset(root / "raw", 10, seed=3, noise=0.002)
    prepare_dataset(root / "raw", root / "data", seed=0)
    return root


@pytest.fixture(scope="module")
def models(prepared):
    train = load_interactions(prepared / "data", "train")
    cfg = PipelineConfig()
    weights, curve = train_hand_predictor(train, SMALL_NET)
    return fit_primitive(train, cfg), weights, fit_arm_model(train), curve


def log_with_error(err, label=""):
    rec = StepRecord(0, (0.0, 0.0, 0.0), None, (0.0, 0.0, 0.0), 0.0, (0.0,) * 4, (err, 0.0, 0.0))
    return InteractionLog((rec,), label)


# ---------------------------------------------------------------------------
# preparation


def test_left_handed_recordings_rejected(tmp_path):
    generate_synthetic_dataset(tmp_path / "raw", 5, seed=2, n_left=2)
    m = prepare_dataset(tmp_path / "raw", tmp_path / "out")
    assert m.counts["accepted"] == 3
    rejected = [e for e in m.entries if e.status == "rejected"]
    assert len(rejected) == 2
    assert {e.reason for e in rejected} == {"left-hand"}


def test_manifest_partition(prepared):
    m = load_manifest(prepared / "data")
    accepted = [e.source for e in m.entries if e.status == "accepted"]
    train = [e.source for e in m.split("train")]
    test = [e.source for e in m.split("test")]
    assert sorted(train + test) == sorted(accepted)
    assert not set(train) & set(test)
    assert m.counts == {"total": 10, "accepted": 10, "rejected": 0, "train": 8, "test": 2}


@given(st.integers(1, 200), st.integers(0, 10 ** 6), st.floats(0.0, 0.95))
def test_split_is_a_partition(n, seed, frac):
    train, test = split_indices(n, seed, frac)
    assert sorted(train + test) == list(range(n))
    if n >= 2 and frac > 0:
        assert train and test


def test_split_fraction_validation():
    with pytest.raises(ValidationError):
        split_indices(10, 0, 1.0)


def test_preparation_is_deterministic(prepared, tmp_path):
    prepare_dataset(prepared / "raw", tmp_path, seed=0)
    assert (tmp_path / "manifest.json").read_text() == (prepared / "data" / "manifest.json").read_text()
    for f in sorted((prepared / "data" / "trajectories").iterdir()):
        assert (tmp_path / "trajectories" / f.name).read_bytes() == f.read_bytes()


def test_empty_directory_is_an_error(tmp_path):
    with pytest.raises(PipelineError):
        prepare_dataset(tmp_path, tmp_path / "out")


def test_all_rejected_is_an_error(tmp_path):
    generate_synthetic_dataset(tmp_path / "raw", 2, seed=1, n_left=2)
    with pytest.raises(PipelineError):
        prepare_dataset(tmp_path / "raw", tmp_path / "out")


def test_broken_file_is_rejected_not_fatal(prepared, tmp_path):
    raw = tmp_path / "raw"
    shutil.copytree(prepared / "raw", raw)
    (raw / "zz_broken.skeleton").write_text("3\n1\nnot a body line\n")
    m = prepare_dataset(raw, tmp_path / "out")
    broken = [e for e in m.entries if e.source == "zz_broken.skeleton"][0]
    assert (broken.status, broken.reason, broken.split) == ("rejected", "parse error", None)
    assert m.counts["accepted"] == 10


def test_manifest_counts_are_checked(prepared, tmp_path):
    d = json.loads((prepared / "data" / "manifest.json").read_text())
    d["counts"]["train"] += 1
    (tmp_path / "manifest.json").write_text(json.dumps(d))
    with pytest.raises(LoadError):
        load_manifest(tmp_path)


def test_manifest_requires_split_for_accepted():
    with pytest.raises(ContractError):
        DatasetManifest((ManifestEntry("a", "accepted"),), 0, 0.2)


def test_loaded_interactions(prepared):
    its = load_interactions(prepared / "data")
    assert len(its) == 10
    for it in its:
        assert len(it.persons[0]) == len(it.persons[1]) == len(it.angles[0])
        assert it.angles[0].shape[1] == 4
        d = np.linalg.norm(it.persons[0].positions[-1, UB["hand_right"]]
                           - it.persons[1].positions[-1, UB["hand_right"]])
        assert d <= PipelineConfig().segmentation.grasp_distance_threshold


# ---------------------------------------------------------------------------
# fitting


def test_primitive_and_arm(models, prepared):
    prior, _, arm, _ = models
    assert prior.dof == 4 and prior.basis.n_basis == 3
    assert 0.2 < arm.upper_arm_length < 0.4
    assert 0.25 < arm.forearm_length < 0.45  # elbow to hand


def test_fit_primitive_needs_two_demos(prepared):
    with pytest.raises(PipelineError):
        fit_primitive([])


def test_partner_view_is_in_robot_frame(prepared):
    it = load_interactions(prepared / "data", "train")[0]
    frames, torso = partner_view(it, 0)
    np.testing.assert_allclose(torso.to_world(frames), it.persons[1].positions, atol=1e-12)
    # the partner stands in front of the robot
    assert np.mean(frames[:, UB["spine_base"], 1]) > 0.3


def test_predictor_dataset_covers_both_roles(prepared):
    train = load_interactions(prepared / "data", "train")
    data = predictor_dataset(train)
    assert len(data) == 2 * len(train)
    for frames, target in data:
        np.testing.assert_array_equal(frames[-1, UB["hand_right"]], target)


def test_training_curve_length(models):
    assert len(models[3]) == SMALL_NET.epochs


# ---------------------------------------------------------------------------
# replay


def test_replay_is_causal(models, prepared):
    prior, weights, arm, _ = models
    it = load_interactions(prepared / "data", "test")[0]
    full = run_interaction(it, prior, weights, arm)
    k = len(it.persons[0]) // 2
    cut = Interaction(it.name, tuple(p.slice(0, k) for p in it.persons), tuple(a[:k] for a in it.angles))
    prefix = run_interaction(cut, prior, weights, arm)
    assert prefix.records == full.records[:k]


def test_replay_from_files_matches_objects(models, prepared, tmp_path):
    prior, weights, arm, _ = models
    save_promp(tmp_path / "p.json", prior)
    save_weights(tmp_path / "w.json", weights)
    save_arm_model(tmp_path / "a.json", arm)
    it = load_interactions(prepared / "data", "test")[0]
    a = run_interaction(it, prior, weights, arm, robot=1)
    b = run_interaction(it, tmp_path / "p.json", tmp_path / "w.json", tmp_path / "a.json", robot=1)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.label.endswith("#robot1")


def test_replay_rejects_wrong_primitive(models, prepared):
    _, weights, arm, _ = models
    it = load_interactions(prepared / "data", "test")[0]
    two_dof = ProMP(np.zeros(6), np.eye(6), np.eye(2), BasisConfig())
    with pytest.raises(LoadError):
        run_interaction(it, two_dof, weights, arm)


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_mean_and_std():
    s = evaluate([log_with_error(0.05), log_with_error(0.07)])
    assert s.mean == pytest.approx(0.06, abs=1e-12)
    assert s.std == pytest.approx(0.01, abs=1e-12)
    assert s.count == 2


def test_evaluate_single_log():
    s = evaluate([log_with_error(0.04)])
    assert (s.mean, s.std, s.count) == (pytest.approx(0.04), 0.0, 1)
    with pytest.raises(ContractError):
        evaluate([])


def test_csv_outputs(tmp_path, models):
    write_loss_curve_csv(tmp_path / "loss.csv", [0.5, 0.25])
    rows = list(csv.reader(open(tmp_path / "loss.csv")))
    assert rows == [["epoch", "loss_m2"], ["0", "0.5"], ["1", "0.25"]]

    summary = evaluate([log_with_error(e) for e in (0.01, 0.02, 0.02, 0.09)])
    write_error_histogram_csv(tmp_path / "hist.csv", summary, bins=4)
    rows = list(csv.reader(open(tmp_path / "hist.csv")))
    assert rows[0] == ["bin_low_m", "bin_high_m", "count"]
    assert sum(int(r[2]) for r in rows[1:]) == 4

    log = log_with_error(0.03)
    write_joint_trajectory_csv(tmp_path / "q.csv", log, np.ones((1, 4)))
    rows = list(csv.reader(open(tmp_path / "q.csv")))
    assert len(rows[0]) == len(rows[1]) == 16
    assert rows[0][:3] == ["t", "z", "cmd_yaw"]


# ---------------------------------------------------------------------------
# configuration


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(regularizer="jerk", ridge_lambda=1e-4, task_std=0.02,
                         predictor=PredictorConfig(hidden_dim=16, epochs=5))
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg


def test_config_defaults_round_trip(tmp_path):
    save_config(tmp_path / "c.json", PipelineConfig())
    assert load_config(tmp_path / "c.json") == PipelineConfig()


@pytest.mark.parametrize("change", [{"version": 2}, {"colour": "red"}, {"blend": {"alpha": 1, "bogus": 2}}])
def test_config_errors(tmp_path, change):
    d = PipelineConfig().to_dict() | change
    (tmp_path / "c.json").write_text(json.dumps(d))
    with pytest.raises(LoadError):
        load_config(tmp_path / "c.json")


def test_partial_config_uses_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"version": 1, "kappa": 0.05}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.kappa == 0.05 and cfg.basis == BasisConfig()
