from enum import Enum
from typing import Sequence, TypedDict

import numpy as np

from src.kerrloop.errors import ParameterError
from src.kerrloop.utils.logger import logger


class Level(Enum):
    UNKNOWN = 0
    LOW = 1
    HIGH = 2


class SwitchingStats(TypedDict):
    n_transitions_up: int
    n_transitions_down: int
    dwell_low: list[float]
    dwell_high: list[float]
    censored_low: list[float]
    censored_high: list[float]
    mean_dwell_low: float | None
    mean_dwell_high: float | None
    switching_rate: float
    occupancy_low: float
    occupancy_high: float
    observed_time: float
    no_transitions: bool


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def classify_levels(photon_series: np.ndarray, n_low: float, n_high: float) -> list[Level]:
    """Hysteresis classification: HIGH once >= n_high, LOW once <= n_low"""
    levels = []
    level = Level.UNKNOWN
    for value in photon_series:
        if value >= n_high:
            level = Level.HIGH
        elif value <= n_low:
            level = Level.LOW
        levels.append(level)
    return levels


def switching_stats(
    photon_series: Sequence[float],
    times: Sequence[float],
    n_low_threshold: float = 2.5,
    n_high_threshold: float = 6.0,
) -> SwitchingStats:
    """
    Telegraph statistics of a photon-number series.

    Dwell times are counted only between two confirmed transitions. The
    segments cut by the start and end of the record go to censored_low and
    censored_high instead, so with at least one transition
    len(dwell_low) + len(dwell_high) == n_up + n_down - 1 and each state's
    dwell plus censored durations add up to its classified time.
    """
    if not n_low_threshold < n_high_threshold:
        raise ParameterError(
            f"n_low_threshold={n_low_threshold} must be below n_high_threshold={n_high_threshold}"
        )
    values = np.real(np.asarray(photon_series))
    times = np.asarray(times, dtype=float)
    if len(values) != len(times) or len(times) < 2:
        raise ParameterError("need matching photon and time series with at least two samples")

    levels = classify_levels(values, n_low_threshold, n_high_threshold)
    n_up = n_down = 0
    dwell = {Level.LOW: [], Level.HIGH: []}
    first_switch: float | None = None
    last_switch: tuple[float, Level] | None = None
    for i in range(1, len(levels)):
        before, after = levels[i - 1], levels[i]
        if before == after or before == Level.UNKNOWN:
            continue
        if after == Level.HIGH:
            n_up += 1
        else:
            n_down += 1
        if last_switch is None:
            first_switch = float(times[i])
        else:
            dwell[last_switch[1]].append(float(times[i] - last_switch[0]))
        last_switch = (float(times[i]), after)

    censored = {Level.LOW: [], Level.HIGH: []}
    first = next((i for i, level in enumerate(levels) if level != Level.UNKNOWN), None)
    if first is not None:
        start = float(times[first])
        if first_switch is None:
            censored[levels[first]].append(float(times[-1]) - start)
        else:
            censored[levels[first]].append(first_switch - start)
            censored[last_switch[1]].append(float(times[-1]) - last_switch[0])

    observed = float(times[-1] - times[0])
    intervals = np.diff(times)
    held = np.array([level.value for level in levels[:-1]])
    occupancy_low = float(intervals[held == Level.LOW.value].sum() / observed)
    occupancy_high = float(intervals[held == Level.HIGH.value].sum() / observed)

    no_transitions = n_up + n_down == 0
    if no_transitions:
        logger.warning(
            f"no switching between n<={n_low_threshold} and n>={n_high_threshold} "
            f"in {observed:.6g} time units"
        )
    return SwitchingStats(
        n_transitions_up=n_up,
        n_transitions_down=n_down,
        dwell_low=dwell[Level.LOW],
        dwell_high=dwell[Level.HIGH],
        censored_low=censored[Level.LOW],
        censored_high=censored[Level.HIGH],
        mean_dwell_low=_mean(dwell[Level.LOW]),
        mean_dwell_high=_mean(dwell[Level.HIGH]),
        switching_rate=(n_up + n_down) / observed,
        occupancy_low=occupancy_low,
        occupancy_high=occupancy_high,
        observed_time=observed,
        no_transitions=no_transitions,
    )
