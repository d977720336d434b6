from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

import src.kerrloop.const as const
from src.kerrloop.errors import NormalizationError, ParameterError
from src.kerrloop.quantum.dynamics import EvolutionRecord
from src.kerrloop.quantum.operators import DensityMatrix, photon_distribution
from src.kerrloop.utils.logger import logger


@dataclass(frozen=True, eq=False)
class RegressionResult:
    t_ref: float
    times: np.ndarray
    normalized_curves: dict[str, np.ndarray]
    taus: dict[str, float]
    tau: float
    tau_ratio_vs_reference: float | None = None
    reference_tau: float | None = None

    def to_frame(self) -> pd.DataFrame:
        columns = {"time": self.times}
        columns.update(self.normalized_curves)
        return pd.DataFrame(columns)

    def summary(self) -> dict:
        return {
            "t_ref": self.t_ref,
            "tau": self.tau,
            "taus": self.taus,
            "reference_tau": self.reference_tau,
            "tau_ratio_vs_reference": self.tau_ratio_vs_reference,
        }


def steady_photon_number(rho_ss: DensityMatrix) -> float:
    """<n> of the plant mode (the last mode) of a steady state"""
    distribution = photon_distribution(rho_ss, rho_ss.space.n_modes - 1)
    return float(np.dot(np.arange(len(distribution)), distribution))


def _fit_tau(times: np.ndarray, curve: np.ndarray) -> float:
    if len(times) < 2:
        raise NormalizationError("fewer than two samples above the fit floor after t_ref")
    slope = np.polyfit(times, np.log(curve), 1)[0]
    if slope >= 0:
        raise NormalizationError(f"regression curve does not decay (log slope {slope:.3e})")
    return float(-1.0 / slope)


def regression_analysis(
    records: Mapping[str, EvolutionRecord],
    rho_ss: DensityMatrix | float,
    t_ref: float = 0.25,
    observable: str = const.OBS_N_B,
    reference_tau: float | None = None,
) -> RegressionResult:
    """
    Normalized |<n>(t) - <n>_ss| per initial condition and the fitted decay time.

    Each curve is divided by its value at the sample nearest t_ref, then
    log(curve) is fitted linearly over t >= t_ref on samples above 1e-6.
    The pooled tau fits all curves together.
    """
    if not records:
        raise ParameterError("regression needs at least one record")
    n_ss = rho_ss if isinstance(rho_ss, (int, float)) else steady_photon_number(rho_ss)
    first = next(iter(records.values()))
    times = first.times
    for name, record in records.items():
        if not np.array_equal(record.times, times):
            raise ParameterError(f"record {name!r} does not share the common time grid")
    if not times[0] <= t_ref <= times[-1]:
        raise ParameterError(f"t_ref={t_ref} outside the recorded interval")

    ref_index = int(np.argmin(np.abs(times - t_ref)))
    window = times >= times[ref_index]
    curves, taus = {}, {}
    pooled_t, pooled_y = [], []
    for name, record in records.items():
        deviation = np.abs(np.real(record.observables[observable]) - n_ss)
        anchor = deviation[ref_index]
        if anchor < const.REGRESSION_FLOOR:
            raise NormalizationError(
                f"{name}: |<n>(t_ref) - <n>_ss| = {anchor:.3e} is too small to normalize"
            )
        curve = deviation / anchor
        curves[name] = curve
        usable = window & (curve > const.FIT_FLOOR)
        taus[name] = _fit_tau(times[usable], curve[usable])
        pooled_t.append(times[usable])
        pooled_y.append(curve[usable])
        logger.info(f"regression {name}: tau={taus[name]:.6g}")

    tau = _fit_tau(np.concatenate(pooled_t), np.concatenate(pooled_y))
    ratio = tau / reference_tau if reference_tau else None
    return RegressionResult(
        t_ref=float(times[ref_index]),
        times=times,
        normalized_curves=curves,
        taus=taus,
        tau=tau,
        tau_ratio_vs_reference=ratio,
        reference_tau=reference_tau,
    )
