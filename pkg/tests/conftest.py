import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from promp_handshake.skeleton import UB, SkeletonSequence  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs taking more than a few seconds")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def upper_body_pair(hand_a, hand_b, left_a=None, left_b=None):
    """Two 15-joint sequences whose only moving joints are the given hands.

    Person A stands at x = -0.5, person B at x = +0.5; other joints are
    fixed plausible positions.
    """
    def person(hand, left, x0, facing):
        n = len(hand)
        frame = np.zeros((15, 3))
        frame[UB["spine_base"]] = [x0, 0.0, 3.0]
        frame[UB["spine_mid"]] = [x0, 0.25, 3.0]
        frame[UB["spine_shoulder"]] = [x0, 0.45, 3.0]
        frame[UB["neck"]] = [x0, 0.52, 3.0]
        frame[UB["head"]] = [x0, 0.65, 3.0]
        frame[UB["shoulder_left"]] = [x0, 0.42, 3.0 - 0.18 * facing]
        frame[UB["shoulder_right"]] = [x0, 0.42, 3.0 + 0.18 * facing]
        frame[UB["elbow_left"]] = [x0, 0.15, 3.0 - 0.2 * facing]
        frame[UB["elbow_right"]] = [x0 + 0.05 * facing, 0.15, 3.0 + 0.2 * facing]
        frame[UB["wrist_left"]] = [x0, -0.1, 3.0 - 0.2 * facing]
        frame[UB["wrist_right"]] = [x0 + 0.1 * facing, -0.1, 3.0 + 0.2 * facing]
        frame[UB["hand_left"]] = [x0, -0.15, 3.0 - 0.2 * facing]
        frame[UB["hand_tip_left"]] = [x0, -0.2, 3.0 - 0.2 * facing]
        frame[UB["hand_tip_right"]] = [x0 + 0.1 * facing, -0.2, 3.0 + 0.2 * facing]
        pos = np.repeat(frame[None], n, axis=0)
        pos[:, UB["hand_right"]] = hand
        if left is not None:
            pos[:, UB["hand_left"]] = left
        else:
            pos[:, UB["hand_left"]] = frame[UB["hand_left"]]
        return SkeletonSequence(pos)

    return (person(np.asarray(hand_a, float), left_a, -0.5, 1.0),
            person(np.asarray(hand_b, float), left_b, 0.5, -1.0))
