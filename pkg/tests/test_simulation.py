import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _trees import double_pendulum
from seatsim.config import default_config, parse_config, with_values
from seatsim.excitation import generate_excitation, quiet
from seatsim.model import Model
from seatsim.rigidbody import mechanical_energy
from seatsim.simulation import (
    RestartSnapshot, SimulationConfig, SimulationDiverged, SnapshotMismatch, Simulator, TrajectoryLog,
    load_restart, run, save_restart,
)


@pytest.fixture(scope="module")
def short_case():
    cfg = with_values(default_config(), {"excitation.duration": 8.0})
    return cfg.build_model(), cfg.simulation_config(), cfg.excitation_signal()


# -- excitation --------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_excitation_rms_and_quiet_window(seed):
    ex = generate_excitation(seed)
    w = ex.t >= 5.0
    for a in ex.acceleration:
        assert 0.1922 <= np.sqrt(np.mean(a[w] ** 2)) <= 0.1960
    assert np.all(ex.acceleration[:, ~w] == 0)
    assert np.all(ex.velocity[:, ~w] == 0) and np.all(ex.displacement[:, ~w] == 0)


def test_excitation_deterministic_and_seed_dependent():
    a, b, c = generate_excitation(3), generate_excitation(3), generate_excitation(4)
    assert a.acceleration.tobytes() == b.acceleration.tobytes()
    assert not np.array_equal(a.acceleration, c.acceleration)


def test_excitation_kinematically_consistent():
    ex = generate_excitation(2)
    dt = 1.0 / ex.sample_rate
    # trapezoidal integration of acceleration reproduces velocity
    v = np.concatenate([[0.0], np.cumsum(0.5 * (ex.acceleration[2][1:] + ex.acceleration[2][:-1]) * dt)])
    assert np.max(np.abs(v - ex.velocity[2])) < 1e-4 * np.max(np.abs(ex.velocity[2]))
    assert np.max(np.abs(ex.displacement)) < 0.1


def test_excitation_band_and_axes():
    ex = generate_excitation(0, axes=("z",))
    assert np.all(ex.acceleration[0] == 0) and np.all(ex.acceleration[1] == 0)
    f = np.fft.rfftfreq(ex.n_samples - 5000, 1e-3)
    spec = np.abs(np.fft.rfft(ex.acceleration[2][5000:]))
    assert spec[f > 20].max() < 1e-2 * spec.max()  # fade-in leaks a little
    with pytest.raises(ValueError, match="band"):
        generate_excitation(0, band=(5.0, 600.0))


# -- integration -------------------------------------------------------------

def test_equilibrium_state_unchanged():
    m = Model(double_pendulum((0.0, 0.0)).tree, np.zeros(2), gravity=(0.0, 0.0, 0.0))
    res = run(m, SimulationConfig(duration=1.0, settle_time=0.0, channels=()))
    np.testing.assert_array_equal(res.state.q, 0)
    np.testing.assert_array_equal(res.state.u, 0)


@pytest.mark.parametrize("integrator,tol", [("rk4", 1e-3), ("semi_implicit_euler", 5e-2)])
def test_double_pendulum_energy(integrator, tol):
    m = double_pendulum()
    cfg = SimulationConfig(duration=10.0, settle_time=0.0, integrator=integrator, channels=("joints",))
    log = run(m, cfg).log
    names = m.tree.dof_names
    E0 = mechanical_energy(m.tree, m.q_init, np.zeros(2))
    E = [mechanical_energy(m.tree, [log[f"q.{n}"][k] for n in names], [log[f"u.{n}"][k] for n in names])
         for k in range(len(log.t))]
    assert np.max(np.abs(np.array(E) - E0)) / abs(E0) < tol


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        SimulationConfig(h=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(integrator="euler")
    with pytest.raises(ValueError):
        SimulationConfig(settle_time=40.0)


def test_divergence_raises_with_diagnostic(default_model):
    soft = default_model.evolve(gravity=(0.0, 0.0, -9.81e4))
    with pytest.raises(SimulationDiverged) as err:
        run(soft, SimulationConfig(duration=2.0, settle_time=2.0, channels=()))
    assert "t=" in str(err.value)


def test_settle_only_run(default_model):
    res = run(default_model, SimulationConfig(duration=5.0, settle_time=5.0, channels=("joints",)))
    assert res.snapshot is not None and res.snapshot.state.step == 5000
    assert res.log.t[-1] < 5.0
    assert np.max(np.abs(res.state.u)) < 0.05


def test_prescribed_seat_motion_logged_exactly(short_case):
    m, cfg, ex = short_case
    log = run(m, cfg, ex).log
    k = np.round(log.t * 1000).astype(int)
    np.testing.assert_array_equal(log["seat.acc_z"], ex.acceleration[2][k])
    np.testing.assert_array_equal(log["seat.disp_x"], ex.displacement[0][k])


def test_runs_are_bit_identical(short_case):
    m, cfg, ex = short_case
    a, b = run(m, cfg, ex).log, run(m, cfg, ex).log
    assert a.names == b.names
    for n in a.names:
        assert a[n].tobytes() == b[n].tobytes()


def test_restart_round_trip_and_guard(tmp_path, short_case):
    m, cfg, ex = short_case
    res = run(m, SimulationConfig(duration=5.0, settle_time=5.0, channels=()), ex)
    path = tmp_path / "restart.json"
    save_restart(path, res.snapshot)
    snap = load_restart(path, m)
    assert snap == res.snapshot
    assert RestartSnapshot.from_dict(snap.to_dict()) == snap
    np.testing.assert_array_equal(snap.references, res.snapshot.references)
    d = default_config().model_dump(mode="json")
    d["seat"]["backrest"] = False
    other = parse_config(d).build_model()
    with pytest.raises(SnapshotMismatch):
        load_restart(path, other)


def test_restart_equals_uninterrupted(short_case):
    m, cfg, ex = short_case
    full = run(m, cfg, ex)
    resumed = run(m, cfg, ex, restart=full.snapshot)
    post = full.log.window(5.0)
    assert resumed.log.t.tobytes() == post.t.tobytes()
    for n in post.names:
        assert resumed.log[n].tobytes() == post[n].tobytes()
    assert resumed.simulated_time == pytest.approx(cfg.duration - cfg.settle_time)
    assert full.simulated_time - resumed.simulated_time >= 5.0


def test_restart_step_size_mismatch(short_case):
    m, cfg, ex = short_case
    snap = run(m, SimulationConfig(duration=5.0, settle_time=5.0, channels=()), ex).snapshot
    sim = Simulator(m, SimulationConfig(h=5e-4, duration=8.0, settle_time=5.0, output_rate=200.0),
                    quiet(8.0, 2000.0, 5.0))
    with pytest.raises(SnapshotMismatch):
        sim.restore(snap)


def test_trajectory_csv_round_trip(tmp_path):
    log = TrajectoryLog(np.arange(5) * 0.005, {"a": np.linspace(0, 1, 5), "b": np.ones(5)})
    log.to_csv(tmp_path / "t.csv")
    back = TrajectoryLog.from_csv(tmp_path / "t.csv")
    np.testing.assert_allclose(back["a"], log["a"])
    assert back.sample_rate == pytest.approx(200.0)


def test_stability_envelope(short_case):
    m, cfg, ex = short_case
    log = run(m, cfg, ex).log
    a, b = log.t < cfg.settle_time, log.t >= cfg.settle_time
    kinds: dict = {}
    ranges = {}
    for n in log.names:
        x = log[n]
        if ".pos_" in n or n in ("q.pelvis_free.x", "q.pelvis_free.y", "q.pelvis_free.z"):
            x = x - log[f"seat.disp_{n[-1]}"]
        elif not n.startswith("q."):
            continue
        kind = "pos" if ".pos_" in n else "q"
        ranges[n] = (np.ptp(x[a]), np.ptp(x[b]))
        kinds[kind] = max(kinds.get(kind, 0.0), ranges[n][0])
    for n, (ra, rb) in ranges.items():
        # channels still during the symmetric settle are scaled by their kind
        scale = ra if ra > 1e-9 else kinds["pos" if ".pos_" in n else "q"]
        assert rb <= 10 * scale, n
