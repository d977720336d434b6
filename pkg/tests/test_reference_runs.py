import json
import math

import numpy as np
import pandas as pd
import pytest

import src.kerrloop.const as const
from src.kerrloop.analysis import feedback_phase, lowpass, phi_sweep, switching_stats
from src.kerrloop.analysis.switching import Level, classify_levels
from src.kerrloop.cli.cli import main
from src.kerrloop.quantum.models import CavityParams, build_closed_loop, build_open_loop
from src.kerrloop.quantum.operators import fock_state
from src.kerrloop.quantum.trajectories import TrajectoryConfig, run_trajectory

# Long runs at the reference operating point; deselected unless `pytest -m slow`.
pytestmark = pytest.mark.slow

PLANT = CavityParams.reference_plant()
CONTROLLER = CavityParams.reference_controller()
WINDOW_CENTRES = (const.PHI_SUPPRESS, const.PHI_ENHANCE)


def closed_loop(phi: float = const.PHI_SUPPRESS):
    return build_closed_loop(CONTROLLER, PLANT, phi, const.DESK_DIMS)


def transitions(record) -> int:
    stats = switching_stats(record.observables[const.OBS_N_B].real, record.times)
    return stats["n_transitions_up"] + stats["n_transitions_down"]


def test_open_loop_trajectory_switches_spontaneously():
    model = build_open_loop(PLANT, 25)
    record = run_trajectory(fock_state(model.space, 0), model, TrajectoryConfig(t_max=10.0, seed=1, sample_every=20))
    assert transitions(record) >= 2


def test_feedback_lowers_switching_rate():
    models = {
        "open": build_open_loop(PLANT, const.DESK_DIMS[const.PLANT_MODE]),
        "closed": closed_loop(),
    }
    counts = {}
    for loop, model in models.items():
        psi0 = fock_state(model.space, [0] * model.space.n_modes)
        counts[loop] = sum(
            transitions(run_trajectory(psi0, model, TrajectoryConfig(t_max=10.0, seed=seed, sample_every=20)))
            for seed in range(4)
        )
    assert counts["open"] > 0
    assert counts["closed"] < counts["open"]


def test_loop_phase_plateaus_follow_plant_state():
    model = closed_loop()
    config = TrajectoryConfig(t_max=10.0, seed=3, sample_every=20)
    record = run_trajectory(fock_state(model.space, [0, 0]), model, config)
    phases = feedback_phase(record, CONTROLLER, PLANT, const.PHI_SUPPRESS)
    spacing = float(record.times[1] - record.times[0])
    smoothed = lowpass(phases.loop, 50 * spacing, spacing)
    levels = np.array(classify_levels(record.observables[const.OBS_N_B].real, 2.5, 6.0))
    for level, expected in ((Level.LOW, 2.7), (Level.HIGH, math.pi / 2)):
        held = smoothed[levels == level]
        assert len(held) > 0
        centre = float(np.angle(np.mean(np.exp(1j * held))))
        assert abs(centre - expected) < 0.2


def test_phi_sweep_finds_two_narrow_windows():
    grid = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
    phis = sorted({*grid.tolist(), *WINDOW_CENTRES})
    rows = phi_sweep(CONTROLLER, PLANT, phis, const.DESK_DIMS, method="null-space", workers=4)
    assert all(row["error"] is None for row in rows)
    bistable = [row["phi"] for row in rows if row["bistable"]]
    for centre in WINDOW_CENTRES:
        assert any(abs(phi - centre) <= 0.1 for phi in bistable)
    assert [phi for phi in bistable if all(abs(phi - c) > 0.1 for c in WINDOW_CENTRES)] == []


def test_regression_timescales_and_initial_conditions(tmp_path):
    out = tmp_path / "regression"
    argv = ["regression", "--profile", "desk", "--method", "null-space", "--out", str(out)]
    assert main(argv) == const.EXIT_OK

    summary = json.loads((out / "regression.json").read_text(encoding="utf-8"))
    cases = {case["case"]: case for case in summary["cases"]}
    suppress = cases[f"phi={const.PHI_SUPPRESS:.4f}"]["tau_ratio_vs_open"]
    enhance = cases[f"phi={const.PHI_ENHANCE:.4f}"]["tau_ratio_vs_open"]
    assert suppress > 1.5
    assert suppress == pytest.approx(2.5, rel=0.5)
    assert enhance < 1.0

    curves = pd.read_csv(out / "regression.csv")
    late = curves["time"] > 0.25
    for label in cases:
        vacuum = curves.loc[late, f"{label}/n0"].to_numpy()
        nine = curves.loc[late, f"{label}/n9"].to_numpy()
        resolved = (vacuum > 1e-2) & (nine > 1e-2)
        assert resolved.any()
        gap = np.abs(vacuum - nine)[resolved]
        assert np.all(gap <= 0.05 * np.maximum(vacuum, nine)[resolved])
