"""
Master-equation evolution, Liouvillian construction and steady states.

Superoperators use column stacking: vec(rho) = rho.flatten(order="F"), so
vec(A X B) = (B^T kron A) vec(X).
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import src.kerrloop.const as const
from src.kerrloop.errors import (
    ConvergenceError,
    InvalidDimensionError,
    LiouvillianSizeError,
    ParameterError,
    StepSizeError,
)
from src.kerrloop.quantum.models import LindbladModel
from src.kerrloop.quantum.operators import DensityMatrix, fock_state
from src.kerrloop.utils.logger import logger


def _require_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be a positive finite number, got {value}")


@dataclass(frozen=True)
class IntegratorConfig:
    t_max: float
    dt: float | None = None
    sample_every: int = 1
    adaptive: bool = False
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_trace_drift: float = 1e-6

    def __post_init__(self):
        _require_positive("t_max", self.t_max)
        if self.dt is not None:
            _require_positive("dt", self.dt)
        if int(self.sample_every) < 1:
            raise ParameterError(f"sample_every must be >= 1, got {self.sample_every}")
        for name in ("rel_tol", "abs_tol", "max_trace_drift"):
            _require_positive(name, getattr(self, name))


@dataclass(frozen=True)
class SteadyStateConfig:
    tol: float = 1e-8
    null_space_tol: float = 1e-10
    max_iter: int = 50
    shift: float = 1e-8
    chunk_time: float = 1.0
    max_time: float = 200.0
    dt: float | None = None

    def __post_init__(self):
        for name in ("tol", "null_space_tol", "shift", "chunk_time", "max_time"):
            _require_positive(name, getattr(self, name))
        if self.dt is not None:
            _require_positive("dt", self.dt)
        if int(self.max_iter) < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True, eq=False)
class EvolutionRecord:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    final_state: DensityMatrix | None = None
    standard_errors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ParameterError("record times must be a strictly increasing vector")
        series = {name: np.asarray(values, dtype=complex) for name, values in self.observables.items()}
        for name, values in [*series.items(), *self.standard_errors.items()]:
            if len(values) != len(times):
                raise ParameterError(
                    f"series {name!r} has {len(values)} samples for {len(times)} times"
                )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "observables", series)

    def __len__(self) -> int:
        return len(self.times)

    def to_frame(self) -> pd.DataFrame:
        """time, <obs>.re, <obs>.im, ... with standard-error columns when present"""
        columns = {"time": self.times}
        for name, values in self.observables.items():
            columns[f"{name}.re"] = values.real
            columns[f"{name}.im"] = values.imag
            if name in self.standard_errors:
                errors = np.asarray(self.standard_errors[name], dtype=complex)
                columns[f"{name}.re.se"] = errors.real
                columns[f"{name}.im.se"] = errors.imag
        return pd.DataFrame(columns)


def _vec(matrix: np.ndarray) -> np.ndarray:
    return matrix.flatten(order="F")


def _unvec(vector: np.ndarray, n: int) -> np.ndarray:
    return vector.reshape((n, n), order="F")


def _require_model_space(rho: DensityMatrix, model: LindbladModel) -> None:
    if rho.space != model.space:
        raise InvalidDimensionError(
            f"state on {rho.space.mode_dims} but model on {model.space.mode_dims}"
        )


def _rhs(rho: np.ndarray, model: LindbladModel) -> np.ndarray:
    h_eff = model.effective_hamiltonian.data
    # rho H_eff^dag = (H_eff rho^dag)^dag keeps every product sparse @ dense
    drift = h_eff @ rho - (h_eff @ rho.conj().T).conj().T
    out = -1j * drift
    for op in model.collapse_ops:
        out += op.data @ (op.data @ rho.conj().T).conj().T
    return out


def lindblad_rhs(rho: DensityMatrix, model: LindbladModel) -> np.ndarray:
    """-i(H_eff rho - rho H_eff^dag) + sum_j L_j rho L_j^dag"""
    _require_model_space(rho, model)
    return _rhs(rho.data, model)


def _trace_product(op_data: sp.csr_matrix, rho: np.ndarray) -> complex:
    """Tr(op rho) without forming the product"""
    return complex(op_data.multiply(rho.T).sum())


def inf_norm(matrix: sp.spmatrix) -> float:
    return float(spla.norm(matrix, np.inf)) if matrix.nnz else 0.0


def default_dt(model: LindbladModel, kappa_fraction: float = 0.1, stability: float = 2.0) -> float:
    """min(kappa_fraction/kappa_max, stability/Lambda) with Lambda bounding the generator"""
    spread = 2.0 * inf_norm(model.effective_hamiltonian.data)
    spread += sum(inf_norm(op.data) ** 2 for op in model.collapse_ops)
    candidates = []
    if model.kappa_max > 0:
        candidates.append(kappa_fraction / model.kappa_max)
    if spread > 0:
        candidates.append(stability / spread)
    return min(candidates, default=kappa_fraction)


def _rk4_step(rho: np.ndarray, model: LindbladModel, dt: float) -> np.ndarray:
    k1 = _rhs(rho, model)
    k2 = _rhs(rho + 0.5 * dt * k1, model)
    k3 = _rhs(rho + 0.5 * dt * k2, model)
    k4 = _rhs(rho + dt * k3, model)
    return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _TraceKeeper:
    """Renormalizes each step and accumulates the discarded drift"""

    def __init__(self, max_drift: float):
        self.max_drift = max_drift
        self.total_drift = 0.0
        self.steps = 0

    def __call__(self, rho: np.ndarray, t: float) -> np.ndarray:
        rho = 0.5 * (rho + rho.conj().T)
        trace = complex(np.trace(rho))
        if not np.isfinite(trace) or not np.all(np.isfinite(rho.diagonal())):
            raise StepSizeError(f"state became non-finite at t={t:.6g}; reduce dt")
        drift = abs(trace - 1.0)
        if drift > self.max_drift:
            raise StepSizeError(
                f"trace drift {drift:.3e} per step exceeds {self.max_drift:.1e} at t={t:.6g}; reduce dt"
            )
        rho = rho / trace
        purity = float(np.real(np.vdot(rho, rho)))
        if purity > 1.0 + const.PURITY_TOL:
            raise StepSizeError(
                f"purity {purity:.9f} exceeds 1 at t={t:.6g}; integration is unstable, reduce dt"
            )
        self.total_drift += drift
        self.steps += 1
        logger.debug(f"t={t:.6g}: renormalized trace drift {drift:.3e}")
        return rho


def _sample(rho: np.ndarray, model: LindbladModel, names: Sequence[str]) -> list[complex]:
    return [_trace_product(model.labels[name].data, rho) for name in names]


def resolve_observables(model: LindbladModel, observables: Iterable[str] | None) -> list[str]:
    names = list(model.labels) if observables is None else list(observables)
    missing = [name for name in names if name not in model.labels]
    if missing:
        raise ParameterError(f"model {model.name} has no observables {missing}")
    return names


def integrate(
    rho0: DensityMatrix,
    model: LindbladModel,
    config: IntegratorConfig,
    observables: Iterable[str] | None = None,
) -> EvolutionRecord:
    """RK4 evolution of the master equation, fixed-step or step-doubling adaptive"""
    _require_model_space(rho0, model)
    names = resolve_observables(model, observables)
    dt = config.dt or default_dt(model)
    keeper = _TraceKeeper(config.max_trace_drift)

    if config.adaptive:
        times, samples, rho = _integrate_adaptive(rho0.data, model, config, dt, names, keeper)
    else:
        times, samples, rho = _integrate_fixed(rho0.data, model, config, dt, names, keeper)

    level = "info" if keeper.steps > 1000 else "debug"
    getattr(logger, level)(
        f"integrated {model.name} to t={config.t_max} in {keeper.steps} steps; "
        f"cumulative trace drift {keeper.total_drift:.3e}"
    )
    series = {name: np.array([row[i] for row in samples]) for i, name in enumerate(names)}
    return EvolutionRecord(
        times=np.array(times),
        observables=series,
        final_state=DensityMatrix(model.space, rho),
        metadata={"dt": dt, "steps": keeper.steps, "trace_drift": keeper.total_drift},
    )


def _integrate_fixed(rho, model, config, dt, names, keeper):
    n_steps = max(1, round(config.t_max / dt))
    dt = config.t_max / n_steps
    rho = np.array(rho, dtype=complex)
    times, samples = [0.0], [_sample(rho, model, names)]
    for k in range(1, n_steps + 1):
        t = k * dt
        rho = keeper(_rk4_step(rho, model, dt), t)
        if k % config.sample_every == 0 or k == n_steps:
            times.append(t)
            samples.append(_sample(rho, model, names))
    return times, samples, rho


def _integrate_adaptive(rho, model, config, dt, names, keeper):
    sample_step = dt * config.sample_every
    targets = list(np.arange(sample_step, config.t_max, sample_step))
    if not targets or config.t_max - targets[-1] > 1e-12 * config.t_max:
        targets.append(config.t_max)
    targets = [t for t in targets if t > 0]

    rho = np.array(rho, dtype=complex)
    times, samples = [0.0], [_sample(rho, model, names)]
    t, h = 0.0, dt
    min_step = 1e-14 * config.t_max
    for target in targets:
        while target - t > 1e-15 * config.t_max:
            step = min(h, target - t)
            full = _rk4_step(rho, model, step)
            half = _rk4_step(rho, model, 0.5 * step)
            half = _rk4_step(half, model, 0.5 * step)
            error = float(np.linalg.norm(half - full)) / 15.0
            scale = config.abs_tol + config.rel_tol * float(np.linalg.norm(half))
            factor = 5.0 if error == 0 else min(5.0, max(0.2, 0.9 * (scale / error) ** 0.2))
            if error <= scale:
                t = target if step == target - t else t + step
                rho = keeper(half, t)
            elif step <= min_step:
                raise StepSizeError(f"adaptive step collapsed below {min_step:.1e} at t={t:.6g}")
            h = step * factor
        times.append(target)
        samples.append(_sample(rho, model, names))
    return times, samples, rho


def liouvillian_matrix(model: LindbladModel, dense: bool | None = None) -> np.ndarray | sp.csc_matrix:
    """Column-stacking superoperator, dense up to total dim 64, sparse up to 1024"""
    n = model.space.total_dim
    if n > const.SPARSE_LIOUVILLIAN_LIMIT:
        raise LiouvillianSizeError(
            f"Liouvillian of total dimension {n} exceeds limit {const.SPARSE_LIOUVILLIAN_LIMIT}"
        )
    if dense is None:
        dense = n <= const.DENSE_LIOUVILLIAN_LIMIT
    if dense and n > const.DENSE_LIOUVILLIAN_LIMIT:
        raise LiouvillianSizeError(
            f"dense Liouvillian of total dimension {n} exceeds limit {const.DENSE_LIOUVILLIAN_LIMIT}"
        )

    ident = sp.identity(n, dtype=complex, format="csr")
    h = model.hamiltonian.data
    sup = -1j * (sp.kron(ident, h) - sp.kron(h.T, ident))
    for op in model.collapse_ops:
        l = op.data
        ldl = (l.conj().T @ l).tocsr()
        sup = sup + sp.kron(l.conj(), l) - 0.5 * sp.kron(ident, ldl) - 0.5 * sp.kron(ldl.T, ident)
    sup = sup.tocsc()
    sup.eliminate_zeros()
    return sup.toarray() if dense else sup


def _hermitian_unit_trace(rho: np.ndarray, space) -> DensityMatrix:
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(space, rho / np.trace(rho))


def _null_space_steady_state(model: LindbladModel, config: SteadyStateConfig) -> DensityMatrix:
    sup = liouvillian_matrix(model, dense=False)
    n = model.space.total_dim
    scale = max(inf_norm(sup), 1.0)
    sigma = config.shift * scale
    lu = spla.splu((sup - sigma * sp.identity(n * n, dtype=complex, format="csc")).tocsc())

    v = _vec(np.eye(n, dtype=complex) / n)
    residual = math.inf
    for iteration in range(1, config.max_iter + 1):
        v = lu.solve(v)
        v = v / np.linalg.norm(v)
        residual = float(np.linalg.norm(sup @ v)) / scale
        logger.debug(f"inverse iteration {iteration}: residual {residual:.3e}")
        if residual < config.null_space_tol:
            break
    else:
        raise ConvergenceError(
            f"null-space inverse iteration for {model.name} did not converge",
            residual,
            config.max_iter,
        )
    return _hermitian_unit_trace(_unvec(v, n), model.space)


def _long_time_steady_state(
    model: LindbladModel, config: SteadyStateConfig, rho0: DensityMatrix | None
) -> DensityMatrix:
    if rho0 is None:
        rho0 = DensityMatrix.from_state(fock_state(model.space, [0] * model.space.n_modes))
    chunk = IntegratorConfig(t_max=config.chunk_time, dt=config.dt, sample_every=10**9)
    rho = rho0
    elapsed, chunks, residual = 0.0, 0, math.inf
    while elapsed < config.max_time:
        rho = integrate(rho, model, chunk, observables=[]).final_state
        elapsed += config.chunk_time
        chunks += 1
        residual = float(np.linalg.norm(_rhs(rho.data, model))) / float(np.linalg.norm(rho.data))
        logger.info(f"{model.name}: t={elapsed:.4g}, relative residual {residual:.3e}")
        if residual < config.tol:
            return _hermitian_unit_trace(rho.data, model.space)
    raise ConvergenceError(
        f"long-time integration of {model.name} did not settle by t={config.max_time}",
        residual,
        chunks,
    )


def steady_state(
    model: LindbladModel,
    method: str | None = None,
    config: SteadyStateConfig | None = None,
    rho0: DensityMatrix | None = None,
) -> DensityMatrix:
    config = config or SteadyStateConfig()
    if method is None:
        small = model.space.total_dim <= const.DENSE_LIOUVILLIAN_LIMIT
        method = "null-space" if small else "long-time"
    if method == "null-space":
        rho = _null_space_steady_state(model, config)
    elif method == "long-time":
        rho = _long_time_steady_state(model, config, rho0)
    else:
        raise ParameterError(f"unknown steady-state method {method!r}, expected {const.STEADY_METHODS}")
    found = rho.violations(pos_tol=const.POSITIVITY_TOL)
    if found:
        logger.warning(f"steady state of {model.name} ({method}): {'; '.join(found)}")
    return rho


def liouvillian_spectrum(model: LindbladModel, n: int | None = None) -> np.ndarray:
    """Eigenvalues ordered from the steady state (largest real part) downward"""
    eigenvalues = scipy.linalg.eigvals(liouvillian_matrix(model, dense=True))
    ordered = eigenvalues[np.argsort(-eigenvalues.real, kind="stable")]
    return ordered if n is None else ordered[:n]


def liouvillian_gap(model: LindbladModel) -> float:
    """Slowest non-zero relaxation rate, -Re(lambda_1)"""
    spectrum = liouvillian_spectrum(model, 2)
    if len(spectrum) < 2:
        raise InvalidDimensionError("Liouvillian gap needs at least two eigenvalues")
    return float(-spectrum[1].real)


def spectral_evolution(
    rho0: DensityMatrix,
    model: LindbladModel,
    times: Sequence[float],
    observables: Iterable[str] | None = None,
) -> EvolutionRecord:
    """Exact exp(L t) evolution from the eigendecomposition of a small Liouvillian"""
    _require_model_space(rho0, model)
    names = resolve_observables(model, observables)
    n = model.space.total_dim
    eigenvalues, modes = scipy.linalg.eig(liouvillian_matrix(model, dense=True))
    weights = scipy.linalg.solve(modes, _vec(rho0.data))

    samples, rho = [], rho0.data
    for t in times:
        rho = _unvec(modes @ (weights * np.exp(eigenvalues * t)), n)
        samples.append(_sample(rho, model, names))
    series = {name: np.array([row[i] for row in samples]) for i, name in enumerate(names)}
    return EvolutionRecord(
        times=np.asarray(times, dtype=float),
        observables=series,
        final_state=_hermitian_unit_trace(rho, model.space),
        metadata={"method": "spectral"},
    )
