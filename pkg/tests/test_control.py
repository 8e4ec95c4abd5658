import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promp_handshake.control import (
    BlendConfig,
    InteractionLog,
    StepRecord,
    blend_target,
    blend_weight,
    controller_step,
    finish,
    new_controller,
    read_log,
    write_log,
)
from promp_handshake.errors import ContractError, LoadError, ValidationError
from promp_handshake.kinematics import ArmModel, TorsoFrame, forward_kinematics
from promp_handshake.predictor import PredictorConfig, Standardization, init_weights, zero_weights
from promp_handshake.promp import learn_promp, marginal, trajectory_phases
from promp_handshake.skeleton import UB

ARM = ArmModel(np.zeros(3), 0.3, 0.3)
FINAL_Q = np.array([0.3, -0.9, 0.2, 0.8])


@pytest.fixture(scope="module")
def prior():
    rng = np.random.default_rng(0)
    z = trajectory_phases(32)
    start = np.array([0.0, 0.0, 0.0, 0.1])
    s = (3 * z ** 2 - 2 * z ** 3)[:, None]
    return learn_promp([start + (FINAL_Q + rng.normal(scale=0.15, size=4) - start) * s
                        for _ in range(20)])


def partner_frame(hand):
    """Partner skeleton in the robot torso frame, standing 0.8 m in front."""
    f = np.tile([-0.2, 0.8, -0.2], (15, 1)).astype(float)
    f[UB["spine_base"]] = [-0.2, 0.8, -0.6]
    f[UB["head"]] = [-0.2, 0.8, 0.2]
    f[UB["hand_right"]] = hand
    return f


def small_predictor():
    return init_weights(PredictorConfig(hidden_dim=8), Standardization([-0.2, 0.8, -0.3], 0.5), seed=0)


def constant_predictor(point):
    """A predictor that always reports ``point``: zero weights with the head bias set."""
    w = zero_weights(PredictorConfig(hidden_dim=4), Standardization([0.0, 0.0, 0.0], 0.5))
    w.params["head.b"][:] = np.asarray(point) / 0.5
    return w


# ---------------------------------------------------------------------------
# blending


def test_default_blend_center():
    cfg = BlendConfig()
    assert cfg.alpha == 0.67 and cfg.expected_length == 32
    assert cfg.center == 20.0


def test_midpoint_is_exact():
    h_hat, h = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.0])
    assert blend_weight(20) == 0.5
    np.testing.assert_array_equal(blend_target(h_hat, h, 20), 0.5 * h_hat + 0.5 * h)


def test_saturation():
    h_hat, h = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.0])
    gap = np.linalg.norm(h_hat - h)
    early, late = -30, 70
    assert blend_weight(early) < 1e-6 and 1 - blend_weight(late) < 1e-6
    assert np.linalg.norm(blend_target(h_hat, h, early) - h_hat) <= 1e-6 * gap
    assert np.linalg.norm(blend_target(h_hat, h, late) - h) <= 1e-6 * gap


def test_weight_strictly_increasing():
    w = [blend_weight(t) for t in range(0, 40)]
    assert all(b > a for a, b in zip(w, w[1:]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1, 1)] * 6), min_size=2, max_size=40))
def test_target_continuity(steps):
    # cumulative small increments give continuous predicted/observed streams
    inc = 0.01 * np.array(steps)
    h_hat = np.cumsum(inc[:, :3], axis=0)
    h = np.cumsum(inc[:, 3:], axis=0) + 0.2
    star = np.array([blend_target(a, b, t) for t, (a, b) in enumerate(zip(h_hat, h))])
    for t in range(len(star) - 1):
        moved = np.linalg.norm(star[t + 1] - star[t])
        input_step = max(np.linalg.norm(h_hat[t + 1] - h_hat[t]), np.linalg.norm(h[t + 1] - h[t]))
        drift = (blend_weight(t + 1) - blend_weight(t)) * np.linalg.norm(h[t] - h_hat[t])
        assert moved <= input_step + drift + 1e-12


def test_blend_rejects_non_finite():
    with pytest.raises(ValidationError):
        blend_target([np.nan, 0, 0], [0, 0, 0], 3)


@pytest.mark.parametrize("kw", [{"expected_length": 0}, {"sigmoid_slope": 0.0}])
def test_blend_config_validation(kw):
    with pytest.raises(ValidationError):
        BlendConfig(**kw)


# ---------------------------------------------------------------------------
# controller


def run(state, frames):
    commands = [controller_step(state, f)[0] for f in frames]
    return np.array(commands), finish(state)


def test_stationary_partner_converges(prior):
    hand = forward_kinematics(ARM, FINAL_Q)
    frames = [partner_frame(hand)] * 40
    commands, _ = run(new_controller(prior, ARM, constant_predictor(hand)), frames)
    first = int(np.ceil(0.9 * 32))
    steps = np.linalg.norm(np.diff(commands, axis=0), axis=1)
    assert np.all(steps[first - 1:] < 1e-3)


def test_no_information_step_returns_prior_mean(prior):
    state = new_controller(prior, ARM, task_accuracy=1e12 * np.eye(3))
    command, _ = controller_step(state, partner_frame([0.5, 0.5, 0.5]))
    np.testing.assert_allclose(command, marginal(prior, 0.0)[0], atol=1e-6)


def test_linear_approach_is_reached(prior):
    end = forward_kinematics(ARM, FINAL_Q + [0.1, -0.1, 0.0, 0.1])
    start = end + [-0.1, 0.5, -0.2]
    frames = [partner_frame(start + (end - start) * s) for s in np.linspace(0, 1, 32)]
    for predictor in (constant_predictor(end), None):
        _, log = run(new_controller(prior, ARM, predictor), frames)
        assert log.final_error < 0.02
    assert log.records[-1].z == 31 / 32


def test_phase_clamps_at_one(prior):
    frames = [partner_frame(forward_kinematics(ARM, FINAL_Q))] * 35
    _, log = run(new_controller(prior, ARM, blend=BlendConfig(expected_length=32)), frames)
    assert [r.z for r in log.records[-3:]] == [1.0, 1.0, 1.0]


def test_replay_is_deterministic(prior):
    rng = np.random.default_rng(2)
    frames = [partner_frame(forward_kinematics(ARM, FINAL_Q) + rng.normal(scale=0.05, size=3))
              for _ in range(10)]
    a, log_a = run(new_controller(prior, ARM, small_predictor()), frames)
    b, log_b = run(new_controller(prior, ARM, small_predictor()), frames)
    np.testing.assert_array_equal(a, b)
    assert log_a.to_jsonl() == log_b.to_jsonl()


def test_predictor_failure_falls_back(prior):
    w = small_predictor()
    w.params["head.W"][:] = np.inf  # corrupt after validation
    hand = forward_kinematics(ARM, FINAL_Q)
    state = new_controller(prior, ARM, w)
    controller_step(state, partner_frame(hand))
    rec = finish(state).records[0]
    assert rec.h_hat is None
    assert "prediction-fallback" in rec.flags
    np.testing.assert_array_equal(rec.h_star, rec.h_obs)
    assert finish(state).fallback_steps == 1


def test_without_predictor_targets_observed_hand(prior):
    state = new_controller(prior, ARM)
    controller_step(state, partner_frame([0.1, 0.4, -0.3]))
    rec = finish(state).records[0]
    assert rec.h_star == (0.1, 0.4, -0.3)


def test_torso_frame_maps_partner(prior):
    hand_local = forward_kinematics(ARM, FINAL_Q)
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    torso = TorsoFrame(np.array([1.0, 2.0, 3.0]), R)
    world = torso.to_world(partner_frame(hand_local))
    state = new_controller(prior, ARM, torso=torso)
    controller_step(state, world)
    np.testing.assert_allclose(finish(state).records[0].h_obs, hand_local, atol=1e-12)


def test_invalid_frame_rejected(prior):
    state = new_controller(prior, ARM)
    with pytest.raises(ValidationError):
        controller_step(state, np.zeros((14, 3)))
    bad = partner_frame([0, 0, 0])
    bad[3, 1] = np.inf
    with pytest.raises(ValidationError):
        controller_step(state, bad)
    assert state.step == 0


def test_clamps_commands_to_limits(prior):
    arm = ArmModel(np.zeros(3), 0.3, 0.3, lower=np.full(4, -0.1), upper=np.full(4, 0.1))
    state = new_controller(prior, arm)
    for _ in range(5):
        command, _ = controller_step(state, partner_frame(forward_kinematics(ARM, FINAL_Q)))
        assert np.all(np.abs(command) <= 0.1)


# ---------------------------------------------------------------------------
# logs


def test_finish_requires_a_step(prior):
    with pytest.raises(ContractError):
        finish(new_controller(prior, ARM))
    with pytest.raises(ContractError):
        InteractionLog(())


def test_one_step_log(prior):
    state = new_controller(prior, ARM)
    controller_step(state, partner_frame([0.1, 0.4, -0.3]))
    log = finish(state)
    rec = log.records[0]
    assert len(log) == 1
    assert log.summary()["final_error"] == pytest.approx(
        np.linalg.norm(np.subtract(rec.fk_position, rec.h_obs)))
    np.testing.assert_allclose(rec.fk_position, forward_kinematics(ARM, rec.command_q), atol=1e-15)


def test_log_round_trip(prior, tmp_path):
    frames = [partner_frame(forward_kinematics(ARM, FINAL_Q))] * 6
    _, log = run(new_controller(prior, ARM, small_predictor(), label="demo"), frames)
    write_log(tmp_path / "log.jsonl", log)
    back = read_log(tmp_path / "log.jsonl")
    assert back == log
    assert back.label == "demo"


def test_step_record_without_prediction_round_trips():
    rec = StepRecord(0, (1.0, 2.0, 3.0), None, (1.0, 2.0, 3.0), 0.0, (0.0,) * 4, (0.0,) * 3,
                     ("prediction-fallback",))
    assert StepRecord.from_dict(rec.to_dict()) == rec


def test_empty_log_file_rejected():
    with pytest.raises(LoadError):
        InteractionLog.from_jsonl('{"summary": true, "label": "x"}\n')
