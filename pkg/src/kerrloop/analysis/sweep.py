import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Sequence, TypedDict

import numpy as np
import pandas as pd
from scipy.signal import find_peaks

import src.kerrloop.const as const
from src.kerrloop.errors import KerrLoopError, ParameterError
from src.kerrloop.quantum.dynamics import SteadyStateConfig, steady_state
from src.kerrloop.quantum.models import (
    CavityParams,
    build_closed_loop,
    effective_detuning_shift,
    effective_kappa,
)
from src.kerrloop.quantum.operators import photon_distribution
from src.kerrloop.utils.logger import logger


class BistabilityReport(TypedDict):
    bistable: bool
    peak_low_n: int | None
    peak_high_n: int | None
    valley_n: int | None
    contrast: float
    occ_low: float
    occ_high: float


class PhiSweepRow(BistabilityReport):
    phi: float
    error: str | None


def bistability_metric(
    distribution: Sequence[float],
    contrast: float = const.PEAK_CONTRAST,
    min_occupation: float = const.MIN_PEAK_OCCUPATION,
) -> BistabilityReport:
    """
    Two-peak test on a photon-number distribution P(n).

    The two highest local maxima (end points included) must both exceed the
    deepest point between them by `contrast`, and each side of that valley
    must hold at least `min_occupation` of the probability.
    """
    p = np.clip(np.asarray(distribution, dtype=float), 0.0, None)
    padded = np.concatenate([[-1.0], p, [-1.0]])
    peaks = find_peaks(padded)[0] - 1
    if len(peaks) < 2:
        top = int(np.argmax(p)) if len(p) else None
        return BistabilityReport(
            bistable=False,
            peak_low_n=top,
            peak_high_n=None,
            valley_n=None,
            contrast=0.0,
            occ_low=float(p.sum()),
            occ_high=0.0,
        )

    low, high = sorted(peaks[np.argsort(p[peaks], kind="stable")[-2:]])
    valley = low + int(np.argmin(p[low : high + 1]))
    floor = p[valley]
    ratio = math.inf if floor == 0 else float(min(p[low], p[high]) / floor)
    occ_low = float(p[: valley + 1].sum())
    occ_high = float(p[valley + 1 :].sum())
    return BistabilityReport(
        bistable=bool(ratio >= contrast and occ_low >= min_occupation and occ_high >= min_occupation),
        peak_low_n=int(low),
        peak_high_n=int(high),
        valley_n=int(valley),
        contrast=ratio,
        occ_low=occ_low,
        occ_high=occ_high,
    )


def evaluate_phi(
    controller: CavityParams,
    plant: CavityParams,
    phi: float,
    dims: Sequence[int],
    method: str | None = "long-time",
    config: SteadyStateConfig | None = None,
    controller_drive: complex | None = None,
) -> PhiSweepRow:
    """Closed-loop steady state at one loop phase, reduced to the plant mode"""
    try:
        model = build_closed_loop(controller, plant, phi, dims, controller_drive)
        rho = steady_state(model, method, config)
        report = bistability_metric(photon_distribution(rho, const.PLANT_MODE))
        error = None
    except KerrLoopError as e:
        logger.error(f"phi={phi:.6g}: {e}", exc_info=True)
        report = BistabilityReport(
            bistable=False,
            peak_low_n=None,
            peak_high_n=None,
            valley_n=None,
            contrast=0.0,
            occ_low=math.nan,
            occ_high=math.nan,
        )
        error = str(e)
    logger.info(f"phi={phi:.6g}: bistable={report['bistable']}")
    return PhiSweepRow(phi=float(phi), error=error, **report)


def phi_sweep(
    controller: CavityParams,
    plant: CavityParams,
    phi_grid: Sequence[float],
    dims: Sequence[int] = const.DEFAULT_DIMS,
    method: str | None = "long-time",
    config: SteadyStateConfig | None = None,
    workers: int = 1,
    controller_drive: complex | None = None,
) -> list[PhiSweepRow]:
    """Bistability report per loop phase, in grid order"""
    grid = [float(phi) for phi in phi_grid]
    outside = [phi for phi in grid if not 0.0 <= phi < 2 * math.pi]
    if outside:
        raise ParameterError(f"loop phases must lie in [0, 2pi), got {outside}")

    args = [(controller, plant, phi, tuple(dims), method, config, controller_drive) for phi in grid]
    rows: list[PhiSweepRow | None] = [None] * len(grid)
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(evaluate_phi, *arg): i for i, arg in enumerate(args)}
            for future in as_completed(futures):
                rows[futures[future]] = future.result()
    else:
        rows = [evaluate_phi(*arg) for arg in args]

    found = [row["phi"] for row in rows if row["bistable"]]
    logger.info(f"phi sweep over {len(grid)} points: bistable at {found}")
    return rows


def sweep_frame(rows: Sequence[PhiSweepRow]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=const.PHI_SWEEP_COLUMNS)


def static_feedback_table(plant: CavityParams, phi_grid: Sequence[float]) -> pd.DataFrame:
    """kappa_b(phi) and the detuning shift of the unit-gain static loop"""
    rows = [
        {
            "phi": float(phi),
            "kappa_eff": effective_kappa(plant, phi),
            "detuning_shift": effective_detuning_shift(plant, phi),
        }
        for phi in phi_grid
    ]
    table = pd.DataFrame(rows, columns=["phi", "kappa_eff", "detuning_shift"])
    table["kappa_ratio"] = table["kappa_eff"] / plant.kappa_total
    return table
