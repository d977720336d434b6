import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

import src.kerrloop.const as const
from src.kerrloop.errors import InvalidDimensionError, ParameterError, StepSizeError
from src.kerrloop.quantum.dynamics import IntegratorConfig, integrate
from src.kerrloop.quantum.models import CavityParams, LindbladModel, build_open_loop, model_hash
from src.kerrloop.quantum.operators import (
    HilbertSpec,
    Operator,
    StateVector,
    destroy,
    fock_state,
    ket2dm,
    number,
)
from src.kerrloop.quantum.trajectories import (
    TrajectoryConfig,
    default_trajectory_dt,
    make_rng,
    run_ensemble,
    run_trajectory,
)

RESONANT = CavityParams(150.0, (50.0, 50.0, 50.0), delta=0.0, chi=0.0, beta=10.0)


def rabi_model(rabi: float, kappa: float = 0.0) -> LindbladModel:
    a = destroy(2)
    sigma_x = Operator(a.space, [[0.0, rabi], [rabi, 0.0]])
    collapse = (a * math.sqrt(kappa),) if kappa else ()
    return LindbladModel(a.space, sigma_x, collapse, {"n": number(2), "a": a}, name="rabi")


def test_single_jump_of_two_level_decay(decay_model):
    model = decay_model(1.0)
    config = TrajectoryConfig(t_max=20.0, seed=7, dt=0.01)
    record = run_trajectory(fock_state(model.space, 1), model, config)
    assert len(record.jumps) == 1
    jump_time, channel = record.jumps[0]
    assert channel == 0
    threshold = make_rng(7).random()
    assert abs(math.exp(-jump_time) - threshold) < 2 * config.norm_floor
    assert record.observables["n"][-1] == pytest.approx(0.0)


def test_jump_times_are_exponential(decay_model):
    model = decay_model(1.0)
    psi0 = fock_state(model.space, 1)
    times = []
    for seed in range(200):
        record = run_trajectory(psi0, model, TrajectoryConfig(t_max=20.0, seed=seed, dt=0.1))
        assert len(record.jumps) == 1
        times.append(record.jumps[0][0])
    assert stats.kstest(times, "expon").pvalue > 1e-3


@pytest.mark.slow
def test_jump_time_distribution_over_many_seeds(decay_model):
    model = decay_model(2.0)
    psi0 = fock_state(model.space, 1)
    times = []
    for seed in range(10_000):
        record = run_trajectory(psi0, model, TrajectoryConfig(t_max=15.0, seed=seed, dt=0.05))
        assert len(record.jumps) == 1
        times.append(record.jumps[0][0])
    assert stats.kstest(times, "expon", args=(0.0, 0.5)).statistic < 0.02


def test_unitary_evolution_without_collapse():
    model = rabi_model(1.0)
    config = TrajectoryConfig(t_max=2.0, dt=1e-3, sample_every=100)
    record = run_trajectory(fock_state(model.space, 0), model, config)
    assert record.jumps == []
    assert_allclose(record.times, np.linspace(0.0, 2.0, 21), atol=1e-12)
    assert_allclose(record.observables["n"].real, np.sin(record.times) ** 2, atol=1e-8)


def test_norm_growth_detected():
    model = rabi_model(10.0)
    with pytest.raises(StepSizeError):
        run_trajectory(fock_state(model.space, 0), model, TrajectoryConfig(t_max=2.0, dt=1.0))


def test_trajectory_is_reproducible():
    model = build_open_loop(RESONANT, 8)
    psi0 = fock_state(model.space, 0)
    config = TrajectoryConfig(t_max=0.1, seed=11)
    first = run_trajectory(psi0, model, config)
    second = run_trajectory(psi0, model, config)
    assert len(first.jumps) > 0
    assert first.jumps == second.jumps
    for name in first.observables:
        assert_array_equal(first.observables[name], second.observables[name])
    other = run_trajectory(psi0, model, TrajectoryConfig(t_max=0.1, seed=12))
    assert other.jumps != first.jumps


def test_trajectory_metadata_and_frames():
    model = build_open_loop(RESONANT, 6)
    record = run_trajectory(fock_state(model.space, 0), model, TrajectoryConfig(t_max=0.02, seed=3))
    assert record.metadata["seed"] == 3
    assert record.metadata["rng"] == const.RNG_ID
    assert record.metadata["model_hash"] == model_hash(model)
    assert record.metadata["n_jumps"] == len(record.jumps)
    assert list(record.to_frame().columns) == ["time", "b.re", "b.im", "n_b.re", "n_b.im"]
    jumps = record.jumps_frame()
    assert list(jumps.columns) == ["time", "channel"]
    assert len(jumps) == len(record.jumps)
    assert record.final_state.norm() == pytest.approx(1.0)


def test_trajectory_input_validation(decay_model):
    model = decay_model()
    with pytest.raises(ParameterError):
        run_trajectory(StateVector(model.space, [0.0, 2.0]), model, TrajectoryConfig(t_max=1.0))
    with pytest.raises(InvalidDimensionError):
        run_trajectory(fock_state(HilbertSpec((3,)), 1), model, TrajectoryConfig(t_max=1.0))


@pytest.mark.parametrize(
    "changes",
    [{"t_max": 0.0}, {"norm_floor": 0.01}, {"seed": -1}, {"sample_every": 0}, {"dt": -1.0}],
)
def test_trajectory_config_validation(changes):
    with pytest.raises(ParameterError):
        TrajectoryConfig(**{"t_max": 1.0, **changes})


def test_single_member_ensemble_is_the_trajectory():
    model = build_open_loop(RESONANT, 6)
    psi0 = fock_state(model.space, 0)
    config = TrajectoryConfig(t_max=0.05, seed=5)
    single = run_trajectory(psi0, model, config)
    ensemble = run_ensemble(psi0, model, config, n_traj=1)
    for name in single.observables:
        assert_array_equal(ensemble.observables[name], single.observables[name])
        assert_array_equal(ensemble.standard_errors[name], 0.0)


def test_ensemble_independent_of_worker_count():
    model = build_open_loop(RESONANT, 6)
    psi0 = fock_state(model.space, 0)
    config = TrajectoryConfig(t_max=0.02, seed=100)
    serial = run_ensemble(psi0, model, config, n_traj=4, workers=1)
    parallel = run_ensemble(psi0, model, config, n_traj=4, workers=2)
    for name in serial.observables:
        assert_array_equal(serial.observables[name], parallel.observables[name])
        assert_array_equal(serial.standard_errors[name], parallel.standard_errors[name])
    assert serial.metadata["n_jumps"] == parallel.metadata["n_jumps"]


def test_ensemble_reproduces_master_equation():
    model = rabi_model(1.0, kappa=1.0)
    psi0 = fock_state(model.space, 0)
    ensemble = run_ensemble(psi0, model, TrajectoryConfig(t_max=2.0, dt=0.02, sample_every=25), n_traj=400)
    exact = integrate(ket2dm(psi0), model, IntegratorConfig(t_max=2.0, dt=0.002, sample_every=250))
    assert_allclose(ensemble.times, exact.times, atol=1e-12)
    deviation = np.abs(ensemble.observables["n"].real - exact.observables["n"].real)
    assert np.all(deviation <= 3 * ensemble.standard_errors["n"].real + 1e-9)
    assert ensemble.final_state.is_valid()
    assert ensemble.metadata["n_traj"] == 400


def test_ensemble_follows_exponential_decay(decay_model):
    model = decay_model(1.0)
    config = TrajectoryConfig(t_max=2.0, dt=0.05, sample_every=10)
    ensemble = run_ensemble(fock_state(model.space, 1), model, config, n_traj=2000)
    assert_allclose(ensemble.times, [0.0, 0.5, 1.0, 1.5, 2.0], atol=1e-12)
    deviation = np.abs(ensemble.observables["n"].real - np.exp(-ensemble.times))
    assert np.all(deviation <= 3 * ensemble.standard_errors["n"].real + 1e-12)


@pytest.mark.slow
def test_ensemble_reproduces_master_equation_for_reference_plant():
    model = build_open_loop(CavityParams.reference_plant(), 25)
    psi0 = fock_state(model.space, 0)
    sample_every = max(1, round(1.0 / default_trajectory_dt(model) / 100))
    config = TrajectoryConfig(t_max=1.0, seed=2024, sample_every=sample_every)
    ensemble = run_ensemble(psi0, model, config, n_traj=500, workers=4, observables=["n_b"])
    exact = integrate(ket2dm(psi0), model, IntegratorConfig(t_max=1.0), observables=["n_b"])
    picked = slice(20, None, 20)
    reference = np.interp(ensemble.times[picked], exact.times, exact.observables["n_b"].real)
    deviation = np.abs(ensemble.observables["n_b"].real[picked] - reference)
    assert np.all(deviation <= 3 * ensemble.standard_errors["n_b"].real[picked])


def test_ensemble_rejects_empty():
    model = build_open_loop(RESONANT, 4)
    with pytest.raises(ParameterError):
        run_ensemble(fock_state(model.space, 0), model, TrajectoryConfig(t_max=0.01), n_traj=0)
