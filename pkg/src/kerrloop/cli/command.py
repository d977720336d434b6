import dataclasses
import math

import numpy as np
import pandas as pd

import src.kerrloop.const as const
from src.kerrloop.analysis import (
    bistability_metric,
    feedback_phase,
    linear_phase,
    lowpass,
    phase_curve,
    phi_sweep,
    regression_analysis,
    static_feedback_table,
    sweep_frame,
    switching_stats,
)
from src.kerrloop.errors import NumericalError, ParameterError
from src.kerrloop.quantum.dynamics import (
    default_dt,
    integrate,
    liouvillian_gap,
    liouvillian_spectrum,
    steady_state,
)
from src.kerrloop.quantum.models import (
    build_closed_loop,
    build_open_loop,
    build_static_feedback,
    effective_detuning_shift,
    effective_kappa,
    slh_series_check,
)
from src.kerrloop.quantum.operators import (
    DensityMatrix,
    expectation,
    fock_state,
    photon_distribution,
)
from src.kerrloop.quantum.trajectories import run_ensemble, run_trajectory
from src.kerrloop.utils.logger import logger
from ..cli import helper


def _plant_dim(experiment: helper.ExperimentConfig) -> int:
    return experiment.dims[const.PLANT_MODE]


def _build_model(experiment: helper.ExperimentConfig, loop: str, phi: float | None = None):
    phi = experiment.phi if phi is None else phi
    if loop == "open":
        return build_open_loop(experiment.plant, _plant_dim(experiment))
    if loop == "static":
        return build_static_feedback(experiment.plant, phi, _plant_dim(experiment))
    if loop == "closed":
        return build_closed_loop(
            experiment.controller, experiment.plant, phi, experiment.dims, experiment.controller_drive
        )
    raise ParameterError(f"unknown loop {loop!r}, expected one of {const.LOOPS}")


def _initial_state(model, plant_photons: int = 0):
    occupations = [0] * (model.space.n_modes - 1) + [plant_photons]
    return fock_state(model.space, occupations)


def _trajectory(args, experiment: helper.ExperimentConfig, outputs: helper.RunOutputs, loop: str) -> dict:
    model = _build_model(experiment, loop)
    psi0 = _initial_state(model)
    with outputs.timed("trajectory"):
        record = run_trajectory(psi0, model, experiment.trajectory)
    outputs.write_frame("trajectory.csv", record.to_frame())
    outputs.write_frame("jumps.csv", record.jumps_frame())

    analysis = experiment.analysis
    stats = switching_stats(
        record.observables[const.OBS_N_B].real, record.times, analysis.n_low, analysis.n_high
    )
    outputs.write_json("switching_stats.json", stats)
    outputs.write_json("metadata.json", {**record.metadata, "loop": loop, "phi": experiment.phi})

    if loop == "closed":
        phases = feedback_phase(record, experiment.controller, experiment.plant, experiment.phi)
        spacing = float(record.times[1] - record.times[0])
        frame = phases.to_frame()
        frame["loop_phase_smoothed"] = lowpass(phases.loop, analysis.lowpass_steps * spacing, spacing)
        outputs.write_frame("phases.csv", frame)

    if experiment.n_traj > 1:
        with outputs.timed("ensemble"):
            ensemble = run_ensemble(psi0, model, experiment.trajectory, experiment.n_traj, experiment.workers)
        outputs.write_frame("ensemble.csv", ensemble.to_frame())
    return stats


def openloop_trajectory(args, experiment, outputs) -> dict:
    return _trajectory(args, experiment, outputs, "open")


def closedloop_trajectory(args, experiment, outputs) -> dict:
    return _trajectory(args, experiment, outputs, "closed")


def steady(args, experiment, outputs) -> dict:
    loop = args.loop
    model = _build_model(experiment, loop)
    with outputs.timed("steady_state"):
        rho = steady_state(model, experiment.steady_method, experiment.steady_state)
    plant_mode = model.space.n_modes - 1
    distribution = photon_distribution(rho, plant_mode)
    outputs.write_frame(
        "distribution.csv",
        pd.DataFrame({"n": np.arange(len(distribution)), "probability": distribution}),
    )
    summary = {
        "loop": loop,
        "phi": experiment.phi if loop != "open" else None,
        "dims": list(model.space.mode_dims),
        "method": experiment.steady_method,
        "mean_photons": expectation(rho, model.labels[const.OBS_N_B]).real,
        "mean_b": expectation(rho, model.labels[const.OBS_B]),
        "bistability": bistability_metric(distribution),
        "min_eigenvalue": rho.min_eigenvalue(),
    }
    if loop == "closed":
        summary["mean_controller_photons"] = expectation(rho, model.labels[const.OBS_N_A]).real
    if loop == "static":
        summary["effective_kappa"] = effective_kappa(experiment.plant, experiment.phi)
        summary["detuning_shift"] = effective_detuning_shift(experiment.plant, experiment.phi)
    outputs.write_json("steady_state.json", summary)
    return summary


def phase(args, experiment, outputs) -> dict:
    grid = helper.parse_grid(args.grid)
    if grid is None:
        grid = experiment.analysis.amplitude_grid()
    with outputs.timed("phase_curve"):
        curve = phase_curve(
            experiment.controller,
            grid,
            dim=experiment.dims[const.CONTROLLER_MODE],
            coupling_rate=experiment.plant.kappa_parts[1],
            method=experiment.steady_method,
            config=experiment.steady_state,
        )
    outputs.write_frame("phase_curve.csv", curve.to_frame())
    valid = curve.phases[~curve.degenerate]
    summary = {
        "points": len(grid),
        "coupling_rate": curve.coupling_rate,
        "linear_phase": linear_phase(experiment.controller),
        "phase_span": float(valid.max() - valid.min()) if len(valid) else 0.0,
    }
    outputs.write_json("phase_curve.json", summary)
    return summary


def sweep(args, experiment, outputs) -> dict:
    grid = helper.parse_grid(args.grid, endpoint=False)
    if grid is None:
        grid = np.linspace(0.0, 2 * math.pi, experiment.analysis.phi_points, endpoint=False)
    with outputs.timed("phi_sweep"):
        rows = phi_sweep(
            experiment.controller,
            experiment.plant,
            grid,
            experiment.dims,
            method=experiment.steady_method or "long-time",
            config=experiment.steady_state,
            workers=experiment.workers,
            controller_drive=experiment.controller_drive,
        )
    outputs.write_frame("phi_sweep.csv", sweep_frame(rows))
    outputs.write_frame("static_feedback.csv", static_feedback_table(experiment.plant, grid))
    outputs.write_json("phi_sweep.json", rows)
    summary = {
        "points": len(rows),
        "bistable_phis": [row["phi"] for row in rows if row["bistable"]],
        "failed_phis": [row["phi"] for row in rows if row["error"]],
    }
    return summary


def _regression_case(experiment, model, integrator) -> tuple:
    rho_ss = steady_state(model, experiment.steady_method, experiment.steady_state)
    records = {}
    for photons in experiment.analysis.initial_photons:
        rho0 = DensityMatrix.from_state(_initial_state(model, photons))
        records[f"n{photons}"] = integrate(rho0, model, integrator, observables=[const.OBS_N_B])
    return records, rho_ss


def regression(args, experiment, outputs) -> dict:
    cases = [("open", "open", None)]
    cases += [(f"phi={phi:.4f}", "closed", phi) for phi in experiment.analysis.regression_phis]
    models = {label: _build_model(experiment, loop, phi) for label, loop, phi in cases}

    # every case shares one step so all curves land on the same time grid
    integrator = experiment.integrator
    if integrator.dt is None:
        integrator = dataclasses.replace(integrator, dt=min(default_dt(m) for m in models.values()))
    logger.info(f"regression step dt={integrator.dt:.6g} for {len(cases)} cases")

    results = {}
    reference_tau = None
    for label, loop, phi in cases:
        with outputs.timed(label):
            records, rho_ss = _regression_case(experiment, models[label], integrator)
            result = regression_analysis(
                records, rho_ss, experiment.analysis.t_ref, reference_tau=reference_tau
            )
        if loop == "open":
            reference_tau = result.tau
        results[label] = (phi, result)

    curves = {"time": next(iter(results.values()))[1].times}
    taus = []
    for label, (phi, result) in results.items():
        for name, curve in result.normalized_curves.items():
            curves[f"{label}/{name}"] = curve
        taus.append(
            {
                "case": label,
                "phi": phi,
                "tau": result.tau,
                "tau_ratio_vs_open": result.tau / reference_tau,
                **{f"tau_{name}": tau for name, tau in result.taus.items()},
            }
        )
    outputs.write_frame("regression.csv", pd.DataFrame(curves))
    outputs.write_frame("regression_taus.csv", pd.DataFrame(taus))
    summary = {"t_ref": experiment.analysis.t_ref, "cases": taus}
    outputs.write_json("regression.json", summary)
    return summary


def slh(args, experiment, outputs) -> dict:
    with outputs.timed("slh_check"):
        check = slh_series_check(
            experiment.controller,
            experiment.plant,
            experiment.phi,
            experiment.dims,
            experiment.controller_drive,
        )
        perturbed = build_closed_loop(
            experiment.controller.scaled_kappa(1.01),
            experiment.plant,
            experiment.phi,
            experiment.dims,
            experiment.controller_drive,
        )
        sanity = slh_series_check(
            experiment.controller,
            experiment.plant,
            experiment.phi,
            experiment.dims,
            experiment.controller_drive,
            reference=perturbed,
        )
    summary = {
        "phi": experiment.phi,
        "matches": check.matches,
        "max_deviation": check.max_deviation,
        "deviations": check.deviations,
        "perturbed_kappa_a_deviation": sanity.max_deviation,
        "perturbed_detected": not sanity.matches,
    }
    outputs.write_json("slh_check.json", summary)
    if not check.matches:
        raise NumericalError(
            f"series-product network deviates from the closed-loop model by {check.max_deviation:.3e}"
        )
    return summary


def spectrum(args, experiment, outputs) -> dict:
    model = _build_model(experiment, args.loop)
    with outputs.timed("spectrum"):
        eigenvalues = liouvillian_spectrum(model, args.count)
        gap = liouvillian_gap(model)
    outputs.write_frame(
        "spectrum.csv",
        pd.DataFrame({"index": np.arange(len(eigenvalues)), "re": eigenvalues.real, "im": eigenvalues.imag}),
    )
    summary = {
        "loop": args.loop,
        "phi": experiment.phi if args.loop != "open" else None,
        "gap": gap,
        "switching_time": 1.0 / gap if gap > 0 else None,
    }
    outputs.write_json("spectrum.json", summary)
    logger.info(f"Liouvillian gap {gap:.6g} ({args.loop} loop)")
    return summary


command_map = {
    "openloop-trajectory": openloop_trajectory,
    "closedloop-trajectory": closedloop_trajectory,
    "steady-state": steady,
    "phase-curve": phase,
    "phi-sweep": sweep,
    "regression": regression,
    "slh-check": slh,
    "spectrum": spectrum,
}
