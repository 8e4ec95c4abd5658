"""The whole loop on synthetic data: learn, predict, react.

Generates 30 handshakes, trains the primitive and a reduced hand predictor on
the training split, and replays each held-out partner frame by frame through
the controller. For one replay it prints how far the blended target and the
robot hand are from the partner's hand as the interaction unfolds.

    python demos/replay_interactions.py
"""
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from promp_handshake.pipeline import PipelineConfig, run_experiment
from promp_handshake.predictor import PredictorConfig
from promp_handshake.synthetic import generate_synthetic_dataset


def main():
    root = Path(tempfile.mkdtemp(prefix="handshake-replay-"))
    generate_synthetic_dataset(root / "raw", 30, seed=3, noise=0.005)
    cfg = PipelineConfig(predictor=replace(PredictorConfig(), epochs=15))
    result = run_experiment(root / "raw", root / "work", cfg,
                            progress=lambda e, v: print(f"  epoch {e:2d}  loss {v:.5f} m^2") if e % 5 == 4 else None)
    print(f"\nmanifest: {result.manifest.counts}")

    log = result.logs[0]
    print(f"\n{log.label}: step, blend target to partner hand, robot hand to partner hand (cm)")
    for r in log.records[::4] + (log.records[-1],):
        gap = np.linalg.norm(np.subtract(r.h_star, r.h_obs)) * 100
        err = np.linalg.norm(np.subtract(r.fk_position, r.h_obs)) * 100
        print(f"  t={r.t:2d}  z={r.z:.2f}  target gap {gap:5.1f}  robot gap {err:5.1f}")

    s = result.summary
    print(f"\nfinal reaching error over {s.count} held-out replays: {s.mean * 100:.1f} +- {s.std * 100:.1f} cm")


if __name__ == "__main__":
    main()
