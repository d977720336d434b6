"""
Monte-Carlo wave-function unraveling of a LindbladModel and ensemble averaging.

Each trajectory owns a Philox generator seeded with its own seed; ensemble
member i uses seed + i, so results do not depend on the worker count.
"""

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import pandas as pd

import src.kerrloop.const as const
from src.kerrloop.errors import InvalidDimensionError, ParameterError, StepSizeError
from src.kerrloop.quantum.dynamics import EvolutionRecord, inf_norm, resolve_observables
from src.kerrloop.quantum.models import LindbladModel, model_hash
from src.kerrloop.quantum.operators import DensityMatrix, StateVector
from src.kerrloop.utils.logger import logger

MAX_BISECTIONS = 60


@dataclass(frozen=True)
class TrajectoryConfig:
    t_max: float
    seed: int = 42
    dt: float | None = None
    sample_every: int = 1
    norm_floor: float = 1e-6

    def __post_init__(self):
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ParameterError(f"t_max must be positive, got {self.t_max}")
        if self.dt is not None and not (math.isfinite(self.dt) and self.dt > 0):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not 0 < self.norm_floor < 1e-3:
            raise ParameterError(f"norm_floor must lie in (0, 1e-3), got {self.norm_floor}")
        if int(self.sample_every) < 1:
            raise ParameterError(f"sample_every must be >= 1, got {self.sample_every}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    jumps: list[tuple[float, int]]
    seed: int
    final_state: StateVector | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        jump_times = [t for t, _ in self.jumps]
        if any(later <= earlier for earlier, later in zip(jump_times, jump_times[1:])):
            raise ParameterError("jump times must be strictly increasing")
        if jump_times and not (0.0 <= jump_times[0] and jump_times[-1] <= self.times[-1] * (1 + 1e-12)):
            raise ParameterError("jump times must lie inside the simulated interval")

    def to_frame(self) -> pd.DataFrame:
        return EvolutionRecord(self.times, self.observables).to_frame()

    def jumps_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.jumps, columns=["time", "channel"]).astype({"time": float, "channel": int})


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def default_trajectory_dt(model: LindbladModel) -> float:
    """min(0.02/kappa_max, 1/||H_eff||_inf)"""
    candidates = []
    if model.kappa_max > 0:
        candidates.append(0.02 / model.kappa_max)
    spread = inf_norm(model.effective_hamiltonian.data)
    if spread > 0:
        candidates.append(1.0 / spread)
    return min(candidates, default=0.02)


class _Unraveling:
    """Mutable per-trajectory stepping state"""

    def __init__(self, model: LindbladModel, config: TrajectoryConfig, dt: float):
        self.model = model
        self.config = config
        self.dt = dt
        self.h_eff = model.effective_hamiltonian.data
        self.collapse = [op.data for op in model.collapse_ops]
        self.rng = make_rng(config.seed)
        self.threshold = self.rng.random()
        self.jumps: list[tuple[float, int]] = []

    def _derivative(self, psi: np.ndarray) -> np.ndarray:
        return -1j * (self.h_eff @ psi)

    def _rk4(self, psi: np.ndarray, h: float) -> np.ndarray:
        k1 = self._derivative(psi)
        k2 = self._derivative(psi + 0.5 * h * k1)
        k3 = self._derivative(psi + 0.5 * h * k2)
        k4 = self._derivative(psi + h * k3)
        return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _propagate(self, psi: np.ndarray, h: float, t: float) -> tuple[np.ndarray, float]:
        before = float(np.vdot(psi, psi).real)
        after_state = self._rk4(psi, h)
        after = float(np.vdot(after_state, after_state).real)
        if not math.isfinite(after):
            raise StepSizeError(f"trajectory state became non-finite at t={t:.6g}; reduce dt")
        if after > before * (1.0 + const.NORM_INCREASE_TOL):
            raise StepSizeError(
                f"norm grew from {before:.12f} to {after:.12f} at t={t:.6g}; reduce dt"
            )
        return after_state, after

    def _locate(self, psi: np.ndarray, h: float, t: float, end_state, end_norm):
        """Bisect for the sub-step where ||psi||^2 crosses the threshold"""
        lo, hi = 0.0, h
        state, norm = end_state, end_norm
        for _ in range(MAX_BISECTIONS):
            if abs(norm - self.threshold) < self.config.norm_floor:
                break
            mid = 0.5 * (lo + hi)
            trial, trial_norm = self._propagate(psi, mid, t)
            if trial_norm > self.threshold:
                lo = mid
            else:
                hi, state, norm = mid, trial, trial_norm
        logger.debug(f"jump located at t={t + hi:.9g}, |psi|^2={norm:.9f}, r={self.threshold:.9f}")
        return hi, state

    def _jump(self, psi: np.ndarray, t: float) -> np.ndarray:
        outcomes = [op @ psi for op in self.collapse]
        weights = np.array([float(np.vdot(v, v).real) for v in outcomes])
        total = weights.sum()
        if total <= 0:
            self.threshold = self.rng.random()
            return psi / np.linalg.norm(psi)
        channel = int(np.searchsorted(np.cumsum(weights), self.rng.random() * total, side="right"))
        channel = min(channel, len(outcomes) - 1)
        self.jumps.append((t, channel))
        self.threshold = self.rng.random()
        return outcomes[channel] / math.sqrt(weights[channel])

    def step(self, psi: np.ndarray, t: float) -> np.ndarray:
        remaining = self.dt
        while remaining > 0:
            state, norm = self._propagate(psi, remaining, t)
            if norm > self.threshold:
                return state
            elapsed, state = self._locate(psi, remaining, t, state, norm)
            t += elapsed
            remaining -= elapsed
            psi = self._jump(state, t)
        return psi


def _observe(psi: np.ndarray, ops, names: list[str]) -> list[complex]:
    weight = np.vdot(psi, psi)
    return [complex(np.vdot(psi, ops[name] @ psi) / weight) for name in names]


def run_trajectory(
    psi0: StateVector,
    model: LindbladModel,
    config: TrajectoryConfig,
    observables: Iterable[str] | None = None,
) -> TrajectoryRecord:
    if psi0.space != model.space:
        raise InvalidDimensionError(
            f"state on {psi0.space.mode_dims} but model on {model.space.mode_dims}"
        )
    if abs(psi0.norm() - 1.0) > 1e-12:
        raise ParameterError(f"initial state must be normalized, norm={psi0.norm():.15f}")
    names = resolve_observables(model, observables)
    ops = {name: model.labels[name].data for name in names}

    dt = config.dt or default_trajectory_dt(model)
    n_steps = max(1, round(config.t_max / dt))
    dt = config.t_max / n_steps
    unraveling = _Unraveling(model, config, dt)

    psi = psi0.amplitudes.copy()
    times, samples = [0.0], [_observe(psi, ops, names)]
    for k in range(1, n_steps + 1):
        psi = unraveling.step(psi, (k - 1) * dt)
        if k % config.sample_every == 0 or k == n_steps:
            times.append(k * dt)
            samples.append(_observe(psi, ops, names))

    logger.info(
        f"trajectory seed={config.seed} on {model.name}: {len(unraveling.jumps)} jumps in t={config.t_max}"
    )
    series = {name: np.array([row[i] for row in samples]) for i, name in enumerate(names)}
    return TrajectoryRecord(
        times=np.array(times),
        observables=series,
        jumps=unraveling.jumps,
        seed=config.seed,
        final_state=StateVector(model.space, psi).normalized(),
        metadata={
            "seed": config.seed,
            "rng": const.RNG_ID,
            "dt": dt,
            "steps": n_steps,
            "model_hash": model_hash(model),
            "n_jumps": len(unraveling.jumps),
        },
    )


def run_ensemble(
    psi0: StateVector,
    model: LindbladModel,
    config: TrajectoryConfig,
    n_traj: int,
    workers: int = 1,
    observables: Iterable[str] | None = None,
) -> EvolutionRecord:
    """Pointwise mean and standard error over n_traj independent trajectories"""
    if n_traj < 1:
        raise ParameterError(f"n_traj must be >= 1, got {n_traj}")
    names = resolve_observables(model, observables)
    configs = [dataclasses.replace(config, seed=config.seed + i) for i in range(n_traj)]
    records: list[TrajectoryRecord | None] = [None] * n_traj

    if workers > 1 and n_traj > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(run_trajectory, psi0, model, cfg, names): i
                for i, cfg in enumerate(configs)
            }
            for future in as_completed(futures):
                records[futures[future]] = future.result()
    else:
        for i, cfg in enumerate(configs):
            records[i] = run_trajectory(psi0, model, cfg, names)

    means, errors = {}, {}
    for name in names:
        stack = np.stack([record.observables[name] for record in records])
        means[name] = stack.mean(axis=0)
        if n_traj > 1:
            spread = stack.real.std(axis=0, ddof=1) + 1j * stack.imag.std(axis=0, ddof=1)
            errors[name] = spread / math.sqrt(n_traj)
        else:
            errors[name] = np.zeros(len(stack[0]), dtype=complex)

    final = np.zeros((model.space.total_dim,) * 2, dtype=complex)
    for record in records:
        amplitudes = record.final_state.amplitudes
        final += np.outer(amplitudes, amplitudes.conj())
    final /= n_traj

    total_jumps = sum(len(record.jumps) for record in records)
    logger.info(f"ensemble of {n_traj} trajectories on {model.name}: {total_jumps} jumps in total")
    return EvolutionRecord(
        times=records[0].times,
        observables=means,
        final_state=DensityMatrix(model.space, final),
        standard_errors=errors,
        metadata={
            "seed": config.seed,
            "n_traj": n_traj,
            "rng": const.RNG_ID,
            "dt": records[0].metadata["dt"],
            "model_hash": records[0].metadata["model_hash"],
            "n_jumps": total_jumps,
        },
    )
