import copy
import math
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
import pytz

import src.kerrloop.const as const
from src.kerrloop.config import code_version, config, config_hash, deep_merge, load_config_file
from src.kerrloop.errors import ConfigError, KerrLoopError
from src.kerrloop.quantum.dynamics import IntegratorConfig, SteadyStateConfig
from src.kerrloop.quantum.models import CavityParams, FeedbackConfig
from src.kerrloop.quantum.operators import HilbertSpec
from src.kerrloop.quantum.trajectories import TrajectoryConfig
from src.kerrloop.utils.logger import logger
from src.kerrloop.utils.util import parse_complex, sha256_file, to_json


@dataclass(frozen=True)
class AnalysisSettings:
    n_low: float = 2.5
    n_high: float = 6.0
    lowpass_steps: int = 50
    t_ref: float = 0.25
    phase_grid: tuple[float, float, int] = (0.0, 3.2, 33)
    phi_points: int = 64
    regression_phis: tuple[float, ...] = (const.PHI_SUPPRESS, const.PHI_ENHANCE)
    initial_photons: tuple[int, ...] = (0, 9)

    def __post_init__(self):
        if not self.n_low < self.n_high:
            raise ConfigError(f"analysis.n_low={self.n_low} must be below analysis.n_high={self.n_high}")
        if self.lowpass_steps < 1 or self.phi_points < 1:
            raise ConfigError("analysis.lowpass_steps and analysis.phi_points must be >= 1")
        if not self.t_ref > 0:
            raise ConfigError(f"analysis.t_ref must be positive, got {self.t_ref}")
        start, stop, count = self.phase_grid
        if start < 0 or stop < start or int(count) < 1:
            raise ConfigError(f"analysis.phase_grid must be [start>=0, stop>=start, count>=1], got {self.phase_grid}")
        if not self.initial_photons:
            raise ConfigError("analysis.initial_photons must not be empty")

    def amplitude_grid(self) -> np.ndarray:
        start, stop, count = self.phase_grid
        return np.linspace(start, stop, int(count))


@dataclass(frozen=True)
class ExperimentConfig:
    plant: CavityParams
    controller: CavityParams
    feedback: FeedbackConfig
    dims: tuple[int, int]
    integrator: IntegratorConfig
    steady_state: SteadyStateConfig
    steady_method: str | None
    trajectory: TrajectoryConfig
    n_traj: int
    analysis: AnalysisSettings
    include_controller_drive: bool
    output_dir: Path
    workers: int
    profile: str
    timezone: str = "UTC"
    resolved: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def phi(self) -> float:
        return self.feedback.phi

    @property
    def controller_drive(self) -> complex | None:
        """The plant's bias amplitude, applied to the controller only when enabled"""
        return self.plant.beta if self.include_controller_drive else None

    @property
    def hash(self) -> str:
        return config_hash(self.resolved)


def _cavity(section: dict) -> CavityParams:
    return CavityParams(
        kappa_total=section["kappa_total"],
        kappa_parts=tuple(section["kappa_parts"]),
        delta=section["delta"],
        chi=section["chi"],
        beta=parse_complex(section["beta"]),
    )


def _build(resolved: dict, profile: str) -> ExperimentConfig:
    settings = resolved["settings"]
    steady = dict(resolved["steady_state"])
    method = steady.pop("method")
    if method is not None and method not in const.STEADY_METHODS:
        raise ConfigError(f"steady_state.method must be one of {const.STEADY_METHODS}, got {method!r}")
    dims = tuple(int(d) for d in resolved["dims"])
    HilbertSpec(dims)
    if len(dims) != 2:
        raise ConfigError(f"dims must name the controller and plant truncations, got {dims}")
    trajectory = dict(resolved["trajectory"])
    n_traj = int(trajectory.pop("n_traj"))
    if n_traj < 1:
        raise ConfigError(f"trajectory.n_traj must be >= 1, got {n_traj}")
    analysis = resolved["analysis"]
    workers = int(settings["workers"])
    if workers < 1:
        raise ConfigError(f"settings.workers must be >= 1, got {workers}")
    output_dir = os.environ.get(const.OUTPUT_DIR_ENV) or settings["output_dir"]
    timezone = settings["timezone"]
    if timezone not in pytz.all_timezones_set:
        raise ConfigError(f"settings.timezone must be a tz database name, got {timezone!r}")
    return ExperimentConfig(
        plant=_cavity(resolved["plant"]),
        controller=_cavity(resolved["controller"]),
        feedback=FeedbackConfig(resolved["feedback"]["phi"]),
        dims=dims,
        integrator=IntegratorConfig(**resolved["integrator"]),
        steady_state=SteadyStateConfig(**steady),
        steady_method=method,
        trajectory=TrajectoryConfig(**trajectory),
        analysis=AnalysisSettings(
            n_low=float(analysis["n_low"]),
            n_high=float(analysis["n_high"]),
            lowpass_steps=int(analysis["lowpass_steps"]),
            t_ref=float(analysis["t_ref"]),
            phase_grid=tuple(analysis["phase_grid"]),
            phi_points=int(analysis["phi_points"]),
            regression_phis=tuple(float(p) for p in analysis["regression_phis"]),
            initial_photons=tuple(int(n) for n in analysis["initial_photons"]),
        ),
        n_traj=n_traj,
        include_controller_drive=bool(resolved["feedback"]["include_controller_drive"]),
        output_dir=Path(output_dir),
        workers=workers,
        profile=profile,
        timezone=timezone,
        resolved=resolved,
    )


def load_experiment_config(
    path: str | Path | None = None,
    profile: str = "full",
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Defaults <- config file <- profile <- CLI overrides, then validate everything"""
    merged = copy.deepcopy(config)
    try:
        if path is not None:
            merged = deep_merge(merged, load_config_file(path))
        profiles = merged.pop("profiles")
        if profile not in profiles:
            raise ConfigError(f"unknown profile {profile!r}, expected one of {sorted(profiles)}")
        merged = deep_merge(merged, profiles[profile])
        if overrides:
            merged = deep_merge(merged, overrides)
    except KeyError as e:
        raise ConfigError(f"unknown configuration key {e.args[0]!r}") from e
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e

    try:
        experiment = _build(merged, profile)
    except ConfigError:
        raise
    except (KerrLoopError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.info(f"loaded configuration (profile={profile}, hash={experiment.hash[:12]})")
    return experiment


def overrides_from_args(args) -> dict:
    """Nested config overrides for the command-line flags that were given"""
    overrides: dict = {}

    def put(section: str, key: str, value) -> None:
        overrides.setdefault(section, {})[key] = value

    if getattr(args, "seed", None) is not None:
        put("trajectory", "seed", args.seed)
    if getattr(args, "t_max", None) is not None:
        put("trajectory", "t_max", args.t_max)
        put("integrator", "t_max", args.t_max)
    if getattr(args, "phi", None) is not None:
        put("feedback", "phi", args.phi)
    if getattr(args, "include_controller_drive", False):
        put("feedback", "include_controller_drive", True)
    if getattr(args, "method", None) is not None:
        put("steady_state", "method", args.method)
    if getattr(args, "workers", None) is not None:
        put("settings", "workers", args.workers)
    if getattr(args, "n_traj", None) is not None:
        put("trajectory", "n_traj", args.n_traj)
    return overrides


def parse_grid(text: str | None, endpoint: bool = True) -> np.ndarray | None:
    """'count' or 'start,stop,count' into an evenly spaced grid"""
    if text is None:
        return None
    try:
        parts = [float(part) for part in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"--grid must be 'count' or 'start,stop,count', got {text!r}") from e
    if len(parts) == 1:
        start, stop, count = 0.0, 2 * math.pi, parts[0]
    elif len(parts) == 3:
        start, stop, count = parts
    else:
        raise ConfigError(f"--grid must be 'count' or 'start,stop,count', got {text!r}")
    if count < 1 or count != int(count):
        raise ConfigError(f"--grid count must be a positive integer, got {count}")
    return np.linspace(start, stop, int(count), endpoint=endpoint)


def resolve_output_dir(out: str | None, experiment: ExperimentConfig, command: str) -> Path:
    if out:
        return Path(out)
    return experiment.output_dir / command


@dataclass
class RunManifest:
    command: str
    config_hash: str
    code_version: str
    rng: str
    profile: str
    seed: int | None = None
    files: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    created_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


class RunOutputs:
    """Stages every output in a hidden directory; nothing lands in out_dir until commit"""

    def __init__(self, out_dir: Path, manifest: RunManifest, timezone: str = "UTC"):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        self.manifest = manifest
        self.timezone = pytz.timezone(timezone)
        self.names: list[str] = []

    def write_frame(self, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self.staging / name, index=False, float_format=const.CSV_FLOAT_FORMAT)
        self.names.append(name)

    def write_json(self, name: str, data) -> None:
        (self.staging / name).write_text(to_json(data) + "\n", encoding="utf-8")
        self.names.append(name)

    @contextmanager
    def timed(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.manifest.timings[label] = time.perf_counter() - start

    def commit(self) -> Path:
        for name in self.names:
            self.manifest.files[name] = sha256_file(self.staging / name)
        self.manifest.created_at = datetime.now(self.timezone).isoformat()
        # manifest is staged too, so the final directory never holds a partial run
        (self.staging / const.MANIFEST_NAME).write_text(
            to_json(self.manifest.to_dict()) + "\n", encoding="utf-8"
        )
        for name in [*self.names, const.MANIFEST_NAME]:
            os.replace(self.staging / name, self.out_dir / name)
        shutil.rmtree(self.staging, ignore_errors=True)
        return self.out_dir / const.MANIFEST_NAME

    def discard(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)


@contextmanager
def staged_outputs(out_dir: Path, command: str, experiment: ExperimentConfig, seed: int | None = None):
    manifest = RunManifest(
        command=command,
        config_hash=experiment.hash,
        code_version=code_version(),
        rng=const.RNG_ID,
        profile=experiment.profile,
        seed=seed,
    )
    outputs = RunOutputs(out_dir, manifest, experiment.timezone)
    try:
        outputs.write_json("config.json", experiment.resolved)
        with outputs.timed("total"):
            yield outputs
    except BaseException:
        outputs.discard()
        raise
    manifest_path = outputs.commit()
    logger.info(f"wrote {len(outputs.names)} outputs and {manifest_path}")
