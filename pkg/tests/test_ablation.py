import json

import numpy as np
import pytest

from seatsim.ablation import MODES, ablate, high_stiffness_model, mode_setup
from seatsim.cli import main
from seatsim.config import default_config, with_values
from seatsim.simulation import SimulationConfig


@pytest.fixture(scope="module")
def short_runs(default_model):
    cfg = with_values(default_config(), {"excitation.duration": 12.0})
    sim, ex = cfg.simulation_config(), cfg.excitation_signal()
    return {m: ablate(default_model, m, sim, ex)[0] for m in ("full_pid", "no_integrator")}


def test_unknown_mode_rejected(default_model):
    with pytest.raises(ValueError, match="unknown ablation mode"):
        mode_setup(default_model, "no_brain")


def test_high_stiffness_model_replaces_controllers(default_model):
    stiff = high_stiffness_model(default_model, 16.0)
    assert len(stiff.controllers.controlled) == 0
    names = default_model.tree.dof_names
    gains = default_model.controllers.gains
    for r0, r1 in zip(default_model.restraints, stiff.restraints):
        for j, dof in enumerate(names[default_model.tree.dof_map[r0.joint]]):
            if dof in gains:
                k, c = r0.stiffness[j] + gains[dof].kp, r0.damping[j] + gains[dof].kd
                assert r1.stiffness[j] == pytest.approx(16 * k)
                # same damping ratio
                assert r1.damping[j] / np.sqrt(r1.stiffness[j]) == pytest.approx(c / np.sqrt(k))
            else:
                assert r1.stiffness[j] == r0.stiffness[j]


def test_phases_too_short_rejected(default_model):
    cfg = SimulationConfig(duration=5.5, settle_time=5.0)
    with pytest.raises(ValueError, match="at least"):
        ablate(default_model, "full_pid", cfg, default_config().excitation_signal())


def test_removing_integrators_increases_drift(short_runs):
    full, noint = short_runs["full_pid"], short_runs["no_integrator"]
    assert abs(noint.head_pitch_drift_deg) > abs(full.head_pitch_drift_deg)
    assert set(full.joint_drift) == set(noint.joint_drift)
    assert json.loads(noint.to_json())["mode"] == "no_integrator"


def test_ablate_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"excitation": {"duration": 9.0}, "analysis": {"window_s": 1.0}}))
    assert main(["ablate", "--mode", "no_integrator", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "drift_no_integrator.json").read_text())
    assert report["head_pitch_drift_deg"] > 0
    assert json.loads((tmp_path / "manifest.json").read_text())["mode"] == "no_integrator"
    assert set(MODES) == {"full_pid", "no_integrator", "high_stiffness_passive"}
