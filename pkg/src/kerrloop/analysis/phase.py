import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

import src.kerrloop.const as const
from src.kerrloop.errors import ParameterError
from src.kerrloop.quantum.dynamics import SteadyStateConfig, steady_state
from src.kerrloop.quantum.models import CavityParams, LindbladModel, kerr_hamiltonian
from src.kerrloop.quantum.operators import destroy, expectation
from src.kerrloop.utils.logger import logger


@dataclass(frozen=True, eq=False)
class PhaseCurve:
    drive_amplitudes: np.ndarray
    phases: np.ndarray
    mean_photons: np.ndarray
    reflected_phases: np.ndarray
    degenerate: np.ndarray
    coupling_rate: float

    def __post_init__(self):
        lengths = {
            len(self.drive_amplitudes),
            len(self.phases),
            len(self.mean_photons),
            len(self.reflected_phases),
            len(self.degenerate),
        }
        if len(lengths) != 1:
            raise ParameterError("phase curve columns must have equal lengths")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "amplitude": self.drive_amplitudes,
                "drive": self.drive_amplitudes * math.sqrt(self.coupling_rate),
                "phase": self.phases,
                "reflected_phase": self.reflected_phases,
                "mean_photons": self.mean_photons,
                "degenerate": self.degenerate,
            }
        )


@dataclass(frozen=True, eq=False)
class FeedbackPhase:
    times: np.ndarray
    feedback: np.ndarray
    plant: np.ndarray
    loop: np.ndarray
    flagged: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "time": self.times,
                "feedback_phase": self.feedback,
                "plant_phase": self.plant,
                "loop_phase": self.loop,
                "flagged": self.flagged,
            }
        )


def build_driven_controller(controller: CavityParams, drive: complex, dim: int) -> LindbladModel:
    """Controller alone, driven through its port by a coherent field `drive`"""
    a = destroy(dim)
    return LindbladModel(
        space=a.space,
        hamiltonian=kerr_hamiltonian(a, controller, drive),
        collapse_ops=(a * math.sqrt(controller.kappa_total),),
        labels={const.OBS_A: a, const.OBS_N_A: a.dag() @ a},
        name=f"driven-controller(drive={drive:.6g})",
    )


def _unwrap_valid(raw: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Unwrap over valid samples only; invalid samples read 0"""
    phases = np.zeros(len(raw))
    if valid.any():
        phases[valid] = np.unwrap(raw[valid])
    return phases


def phase_curve(
    controller: CavityParams,
    amplitude_grid: Sequence[float],
    dim: int = const.DEFAULT_DIMS[0],
    coupling_rate: float | None = None,
    method: str | None = None,
    config: SteadyStateConfig | None = None,
) -> PhaseCurve:
    """
    Steady-state phase of the controller field versus drive amplitude.

    Amplitudes are in plant-equivalent |<b>| units and enter the controller as
    drive = sqrt(coupling_rate) * amplitude, coupling_rate defaulting to the
    plant's loop-output rate kappa_b2. coupling_rate=1 applies the amplitude
    directly. Both arg<a> and the reflected-field phase arg(drive + sqrt(kappa_a)<a>)
    are returned; samples with |<a>| < 1e-12 are flagged degenerate and read 0.
    """
    amplitudes = np.asarray(amplitude_grid, dtype=float)
    if np.any(~np.isfinite(amplitudes)) or np.any(amplitudes < 0):
        raise ParameterError("drive amplitudes must be finite and >= 0")
    if coupling_rate is None:
        coupling_rate = const.PLANT_KAPPA_PARTS[1]
    if not coupling_rate > 0:
        raise ParameterError(f"coupling_rate must be positive, got {coupling_rate}")

    fields, reflected, photons = [], [], []
    for amplitude in amplitudes:
        drive = math.sqrt(coupling_rate) * amplitude
        model = build_driven_controller(controller, drive, dim)
        rho = steady_state(model, method, config)
        mean_a = expectation(rho, model.labels[const.OBS_A])
        fields.append(mean_a)
        reflected.append(drive + math.sqrt(controller.kappa_total) * mean_a)
        photons.append(expectation(rho, model.labels[const.OBS_N_A]).real)
        logger.debug(f"drive {drive:.6g}: <a>={mean_a:.6g}, <n_a>={photons[-1]:.6g}")

    fields = np.array(fields)
    reflected = np.array(reflected)
    valid = np.abs(fields) >= const.PHASE_MAGNITUDE_FLOOR
    reflected_valid = valid & (np.abs(reflected) >= const.PHASE_MAGNITUDE_FLOOR)
    logger.info(f"phase curve over {len(amplitudes)} drives, {int((~valid).sum())} degenerate")
    return PhaseCurve(
        drive_amplitudes=amplitudes,
        phases=_unwrap_valid(np.angle(fields), valid),
        mean_photons=np.array(photons),
        reflected_phases=_unwrap_valid(np.angle(reflected), reflected_valid),
        degenerate=~valid,
        coupling_rate=float(coupling_rate),
    )


def linear_phase(controller: CavityParams) -> float:
    """arg(-1/(i Delta + kappa/2)), the phase of a driven linear cavity"""
    return cmath.phase(-1.0 / (1j * controller.delta + controller.kappa_total / 2))


def _carried_phase(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flagged = np.abs(values) < const.PHASE_MAGNITUDE_FLOOR
    raw = np.angle(values)
    last = 0.0
    for i, bad in enumerate(flagged):
        if bad:
            raw[i] = last
        else:
            last = raw[i]
    return np.unwrap(raw), flagged


def feedback_phase(
    record,
    controller: CavityParams,
    plant: CavityParams,
    phi: float,
) -> FeedbackPhase:
    """
    Phase of the field fed back into the plant, sqrt(kappa_a)<a> + e^{i phi} sqrt(kappa_b2)<b>,
    the plant phase arg<b>, and their difference (the loop phase shift).
    """
    observables = record.observables
    if const.OBS_A not in observables or const.OBS_B not in observables:
        raise ParameterError("feedback phase needs records of both 'a' and 'b'")
    mean_a = np.asarray(observables[const.OBS_A], dtype=complex)
    mean_b = np.asarray(observables[const.OBS_B], dtype=complex)
    kappa_b2 = plant.kappa_parts[1]

    loop_field = math.sqrt(controller.kappa_total) * mean_a + cmath.exp(1j * phi) * math.sqrt(kappa_b2) * mean_b
    feedback, feedback_flagged = _carried_phase(loop_field)
    plant_phase, plant_flagged = _carried_phase(mean_b)
    loop, loop_flagged = _carried_phase(loop_field * mean_b.conj())
    flagged = feedback_flagged | plant_flagged | loop_flagged
    if flagged.any():
        logger.warning(f"{int(flagged.sum())} phase samples below magnitude floor, carried forward")
    return FeedbackPhase(
        times=np.asarray(record.times, dtype=float),
        feedback=feedback,
        plant=plant_phase,
        loop=loop,
        flagged=flagged,
    )


def lowpass(series: Sequence[float], time_constant: float, dt: float = 1.0) -> np.ndarray:
    """Single-pole exponential moving average started at the first sample"""
    if not time_constant > 0:
        raise ParameterError(f"time_constant must be positive, got {time_constant}")
    values = np.asarray(series)
    if values.size == 0:
        return values.copy()
    alpha = 1.0 - math.exp(-dt / time_constant)
    filtered, _ = lfilter([alpha], [1.0, alpha - 1.0], values, zi=[(1.0 - alpha) * values[0]])
    return filtered
