"""
Lindblad models of the Kerr plant cavity, alone, under a static unit-gain
feedback loop, and in a coherent feedback loop with a Kerr controller cavity.

Port convention for the plant: kappa_parts = (kappa_b1, kappa_b2, kappa_b3)
where b2 feeds the loop, b1 takes the returning loop field and b3 is the
bias input carrying the drive beta. A single-port cavity (the controller)
is driven through its only port.
"""

import cmath
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

import src.kerrloop.const as const
from src.kerrloop.errors import InvalidDimensionError, ParameterError
from src.kerrloop.quantum.operators import (
    HilbertSpec,
    Operator,
    destroy,
    embed,
)
from src.kerrloop.utils.logger import logger


@dataclass(frozen=True)
class CavityParams:
    kappa_total: float
    kappa_parts: tuple[float, ...]
    delta: float
    chi: float
    beta: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kappa_total", float(self.kappa_total))
        object.__setattr__(self, "kappa_parts", tuple(float(k) for k in self.kappa_parts))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "chi", float(self.chi))
        object.__setattr__(self, "beta", complex(self.beta))
        self.validate()

    def validate(self) -> None:
        numbers = [self.kappa_total, self.delta, self.chi, self.beta.real, self.beta.imag]
        if not all(math.isfinite(x) for x in numbers + list(self.kappa_parts)):
            raise ParameterError(f"non-finite cavity parameter in {self}")
        if not self.kappa_parts:
            raise ParameterError("a cavity needs at least one partial decay rate")
        if any(k < 0 for k in self.kappa_parts):
            raise ParameterError(f"partial decay rates must be >= 0, got {self.kappa_parts}")
        if abs(sum(self.kappa_parts) - self.kappa_total) > const.PARTS_SUM_TOL:
            raise ParameterError(
                f"partial decay rates {self.kappa_parts} do not sum to kappa_total={self.kappa_total}"
            )

    @property
    def drive_rate(self) -> float:
        return self.kappa_parts[-1]

    def replace(self, **changes) -> "CavityParams":
        return dataclasses.replace(self, **changes)

    def scaled_kappa(self, factor: float) -> "CavityParams":
        return self.replace(
            kappa_total=self.kappa_total * factor,
            kappa_parts=tuple(k * factor for k in self.kappa_parts),
        )

    @classmethod
    def reference_plant(cls) -> "CavityParams":
        return cls(
            kappa_total=const.PLANT_KAPPA,
            kappa_parts=const.PLANT_KAPPA_PARTS,
            delta=const.PLANT_DELTA,
            chi=const.PLANT_CHI,
            beta=const.PLANT_BETA,
        )

    @classmethod
    def reference_controller(cls) -> "CavityParams":
        return cls(
            kappa_total=const.CONTROLLER_KAPPA,
            kappa_parts=(const.CONTROLLER_KAPPA,),
            delta=const.CONTROLLER_DELTA,
            chi=const.CONTROLLER_CHI,
        )


@dataclass(frozen=True)
class FeedbackConfig:
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi))
        if not math.isfinite(self.phi):
            raise ParameterError(f"loop phase must be finite, got {self.phi}")


@dataclass(frozen=True, eq=False)
class LindbladModel:
    space: HilbertSpec
    hamiltonian: Operator
    collapse_ops: tuple[Operator, ...]
    labels: dict[str, Operator] = field(default_factory=dict)
    name: str = "model"

    def __post_init__(self):
        object.__setattr__(self, "collapse_ops", tuple(self.collapse_ops))
        operators = [self.hamiltonian, *self.collapse_ops, *self.labels.values()]
        for op in operators:
            if op.space != self.space:
                raise InvalidDimensionError(
                    f"operator on {op.space.mode_dims} inside model on {self.space.mode_dims}"
                )
        if not self.hamiltonian.is_hermitian(const.HERMITIAN_TOL):
            raise ParameterError(f"hamiltonian of {self.name} is not Hermitian")

    @cached_property
    def effective_hamiltonian(self) -> Operator:
        """H - (i/2) sum_j L_j^dag L_j"""
        h_eff = self.hamiltonian
        for op in self.collapse_ops:
            h_eff = h_eff - 0.5j * (op.dag() @ op)
        return h_eff

    @cached_property
    def kappa_max(self) -> float:
        """Largest per-mode decay rate summed over all channels"""
        if not self.collapse_ops:
            return 0.0
        dims = self.space.mode_dims
        # flat index of the one-photon state of each mode
        single = [math.prod(dims[k + 1:]) for k in range(len(dims))]
        loss = sum(np.real((op.dag() @ op).data.diagonal()) for op in self.collapse_ops)
        return float(max(loss[i] for i in single))


def _chop(value: complex, scale: float = 1.0) -> complex:
    """Zero real/imaginary parts that are rounding residue relative to scale"""
    value = complex(value)
    cutoff = const.COEFF_CHOP * max(scale, 1.0)
    real = value.real if abs(value.real) > cutoff else 0.0
    imag = value.imag if abs(value.imag) > cutoff else 0.0
    return complex(real, imag)


def _hermitian_pair(op: Operator, coeff: complex) -> Operator:
    """coeff*op + conj(coeff)*op^dag"""
    return op * coeff + op.dag() * coeff.conjugate()


def kerr_hamiltonian(
    mode: Operator, params: CavityParams, drive: complex | None = None
) -> Operator:
    """Delta a^dag a + chi a^dag a^dag a a + i sqrt(kappa_in)(drive^* a - drive a^dag)"""
    create = mode.dag()
    hamiltonian = (create @ mode) * params.delta + (create @ create @ mode @ mode) * params.chi
    if drive:
        coeff = 1j * math.sqrt(params.drive_rate) * complex(drive).conjugate()
        hamiltonian = hamiltonian + _hermitian_pair(mode, coeff)
    return hamiltonian


def _require_loop_ports(plant: CavityParams) -> tuple[float, float, float]:
    if len(plant.kappa_parts) != 3:
        raise ParameterError(
            f"feedback needs a plant with three ports (b1, b2, b3), got {plant.kappa_parts}"
        )
    return plant.kappa_parts


def effective_kappa(plant: CavityParams, phi: float) -> float:
    """kappa_b3 + |sqrt(kappa_b1) + e^{i phi} sqrt(kappa_b2)|^2"""
    k1, k2, k3 = _require_loop_ports(plant)
    value = k3 + k1 + k2 + 2.0 * math.sqrt(k1 * k2) * math.cos(phi)
    return max(_chop(value, plant.kappa_total).real, 0.0)


def effective_detuning_shift(plant: CavityParams, phi: float) -> float:
    """sin(phi) sqrt(kappa_b1 kappa_b2)"""
    k1, k2, _ = _require_loop_ports(plant)
    scale = math.sqrt(k1 * k2)
    return _chop(math.sin(phi) * scale, scale).real


def build_open_loop(plant: CavityParams, dim: int) -> LindbladModel:
    plant.validate()
    b = destroy(dim)
    hamiltonian = kerr_hamiltonian(b, plant, plant.beta)
    return LindbladModel(
        space=b.space,
        hamiltonian=hamiltonian,
        collapse_ops=(b * math.sqrt(plant.kappa_total),),
        labels={const.OBS_B: b, const.OBS_N_B: b.dag() @ b},
        name="open-loop",
    )


def build_static_feedback(plant: CavityParams, phi: float, dim: int) -> LindbladModel:
    """Open-loop model with H_b -> H_b(phi) and kappa_b -> kappa_b(phi)"""
    plant.validate()
    FeedbackConfig(phi)
    b = destroy(dim)
    number_op = b.dag() @ b
    hamiltonian = kerr_hamiltonian(b, plant, plant.beta)
    hamiltonian = hamiltonian + number_op * effective_detuning_shift(plant, phi)
    kappa_phi = effective_kappa(plant, phi)
    logger.debug(f"static feedback phi={phi}: kappa_b(phi)={kappa_phi}")
    return LindbladModel(
        space=b.space,
        hamiltonian=hamiltonian,
        collapse_ops=(b * math.sqrt(kappa_phi),),
        labels={const.OBS_B: b, const.OBS_N_B: number_op},
        name=f"static-feedback(phi={phi})",
    )


def _two_mode_space(dims: Sequence[int]) -> HilbertSpec:
    dims = tuple(dims)
    if len(dims) != 2:
        raise InvalidDimensionError(f"closed loop needs two mode dimensions, got {dims}")
    return HilbertSpec(dims)


def interconnection_hamiltonian(
    controller: CavityParams, plant: CavityParams, phi: float, space: HilbertSpec
) -> Operator:
    """Loop coupling terms between controller mode a and plant mode b"""
    k1, k2, _ = _require_loop_ports(plant)
    a = embed(destroy(space.mode_dims[const.CONTROLLER_MODE]), const.CONTROLLER_MODE, space)
    b = embed(destroy(space.mode_dims[const.PLANT_MODE]), const.PLANT_MODE, space)
    scale = math.sqrt(controller.kappa_total * plant.kappa_total)
    c2 = math.sqrt(controller.kappa_total * k2)
    c1 = math.sqrt(controller.kappa_total * k1)
    # (c2/2i)(e^{i phi} a^dag b - h.c.) + (c1/2i)(a b^dag - h.c.)
    coeff_out = _chop(-0.5j * c2 * cmath.exp(1j * phi), scale)
    coeff_in = _chop(-0.5j * c1, scale)
    return _hermitian_pair(a.dag() @ b, coeff_out) + _hermitian_pair(a @ b.dag(), coeff_in)


def build_closed_loop(
    controller: CavityParams,
    plant: CavityParams,
    phi: float,
    dims: Sequence[int] = const.DEFAULT_DIMS,
    controller_drive: complex | None = None,
) -> LindbladModel:
    controller.validate()
    plant.validate()
    FeedbackConfig(phi)
    space = _two_mode_space(dims)
    k1, k2, k3 = _require_loop_ports(plant)

    a = embed(destroy(space.mode_dims[const.CONTROLLER_MODE]), const.CONTROLLER_MODE, space)
    b = embed(destroy(space.mode_dims[const.PLANT_MODE]), const.PLANT_MODE, space)
    n_a = a.dag() @ a
    n_b = b.dag() @ b

    h_a = kerr_hamiltonian(a, controller, controller_drive)
    h_b = kerr_hamiltonian(b, plant, plant.beta) + n_b * effective_detuning_shift(plant, phi)
    hamiltonian = h_a + h_b + interconnection_hamiltonian(controller, plant, phi, space)

    scale = math.sqrt(plant.kappa_total)
    loop_coeff = _chop(cmath.exp(1j * phi) * math.sqrt(k2) + math.sqrt(k1), scale)
    loop_op = a * math.sqrt(controller.kappa_total) + b * loop_coeff
    bias_op = b * math.sqrt(k3)

    return LindbladModel(
        space=space,
        hamiltonian=hamiltonian,
        collapse_ops=(loop_op, bias_op),
        labels={
            const.OBS_A: a,
            const.OBS_B: b,
            const.OBS_N_A: n_a,
            const.OBS_N_B: n_b,
        },
        name=f"closed-loop(phi={phi})",
    )


def model_hash(model: LindbladModel) -> str:
    digest = hashlib.sha256()
    digest.update(repr(model.space.mode_dims).encode())
    for op in (model.hamiltonian, *model.collapse_ops):
        digest.update(op.data.data.tobytes())
        digest.update(op.data.indices.tobytes())
        digest.update(op.data.indptr.tobytes())
    digest.update(",".join(sorted(model.labels)).encode())
    return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class SLH:
    """Single-channel component: scattering phase S, coupling L, Hamiltonian H"""

    S: complex
    L: Operator
    H: Operator

    def series(self, first: "SLH") -> "SLH":
        """self <| first: the output of `first` drives `self`"""
        cross = self.L.dag() @ first.L * self.S
        return SLH(
            S=self.S * first.S,
            L=self.L + first.L * self.S,
            H=first.H + self.H + (cross - cross.dag()) * (-0.5j),
        )


@dataclass(frozen=True)
class SLHCheck:
    matches: bool
    max_deviation: float
    deviations: dict[str, float]


def _max_abs(op: Operator) -> float:
    return float(np.abs(op.data.data).max(initial=0.0))


def _phase_aligned_deviation(reference: Operator, candidate: Operator) -> float:
    overlap = complex(reference.data.conj().multiply(candidate.data).sum())
    phase = cmath.exp(-1j * cmath.phase(overlap)) if abs(overlap) > 0 else 1.0
    return _max_abs(candidate * phase - reference)


def closed_loop_network(
    controller: CavityParams,
    plant: CavityParams,
    phi: float,
    dims: Sequence[int] = const.DEFAULT_DIMS,
    controller_drive: complex | None = None,
) -> tuple[SLH, Operator]:
    """Series-composed loop plus the separate bias-port coupling"""
    space = _two_mode_space(dims)
    k1, k2, k3 = _require_loop_ports(plant)
    a = embed(destroy(space.mode_dims[const.CONTROLLER_MODE]), const.CONTROLLER_MODE, space)
    b = embed(destroy(space.mode_dims[const.PLANT_MODE]), const.PLANT_MODE, space)
    zero = b * 0.0

    # b2 -> phi -> controller -> b1
    plant_out = SLH(1.0, b * math.sqrt(k2), kerr_hamiltonian(b, plant, plant.beta))
    phase_shift = SLH(cmath.exp(1j * phi), zero, zero)
    cavity = SLH(
        1.0,
        a * math.sqrt(controller.kappa_total),
        kerr_hamiltonian(a, controller, controller_drive),
    )
    plant_in = SLH(1.0, b * math.sqrt(k1), zero)
    loop = plant_in.series(cavity.series(phase_shift.series(plant_out)))
    return loop, b * math.sqrt(k3)


def slh_series_check(
    controller: CavityParams,
    plant: CavityParams,
    phi: float,
    dims: Sequence[int] = (4, 4),
    controller_drive: complex | None = None,
    reference: LindbladModel | None = None,
    tol: float = const.SLH_TOL,
) -> SLHCheck:
    """Compare the series-product network against build_closed_loop (or `reference`)"""
    if reference is None:
        reference = build_closed_loop(controller, plant, phi, dims, controller_drive)
    loop, bias = closed_loop_network(controller, plant, phi, reference.space.mode_dims, controller_drive)
    deviations = {
        "H": _max_abs(loop.H - reference.hamiltonian),
        "L1": _phase_aligned_deviation(reference.collapse_ops[0], loop.L),
        "L2": _phase_aligned_deviation(reference.collapse_ops[1], bias),
    }
    worst = max(deviations.values())
    logger.debug(f"SLH series check phi={phi}: deviations {deviations}")
    return SLHCheck(matches=worst <= tol, max_deviation=worst, deviations=deviations)
