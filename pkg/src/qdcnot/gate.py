"""Polarization-encoded post-selected CNOT as a six-mode unitary.

Mode layout (flat index = 2 * rail + polarization)::

    0 control H   1 control V
    2 target H    3 target V
    4 vacuum a    5 vacuum b

Logical |0> = H and |1> = V. The controlled-Z core is a 1/3 coupler between
control-V and target-V plus 1/3 couplers dumping control-H and target-H
into the vacuum rails. Hadamard half-wave plates around the core turn it
into a CNOT. Polarizers are not unitary; they appear as the choice of
detected mode in a ``DetectionPattern``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Sequence

import numpy as np

from qdcnot.errors import ContractError
from qdcnot.fock import (
    DetectionPattern,
    ModeUnitary,
    PhotonicState,
    beamsplitter,
    gram_from_overlap,
    outcome_probability,
    output_distribution,
    post_selected_map,
)

N_MODES = 6
CONTROL, TARGET, VACUUM = 0, 1, 2
C_H, C_V, T_H, T_V, VAC_A, VAC_B = range(6)

LOGICAL_ORDER = ("HH", "HV", "VH", "VV")

_S2 = math.sqrt(2.0)
POLARIZATION_STATES: dict[str, np.ndarray] = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / _S2,
    "A": np.array([1, -1], dtype=complex) / _S2,
    "R": np.array([1, 1j], dtype=complex) / _S2,
    "L": np.array([1, -1j], dtype=complex) / _S2,
}


class WaveplateKind(str, Enum):
    HALF = "half"
    QUARTER = "quarter"


class Basis(str, Enum):
    HV = "HV"
    DA = "DA"
    RL = "RL"

    @property
    def states(self) -> tuple[str, str]:
        return (self.value[0], self.value[1])


@dataclass(frozen=True)
class WaveplateSetting:
    kind: WaveplateKind
    angle: float  # fast axis from H, radians


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def jones_of(wp: WaveplateSetting) -> np.ndarray:
    """Jones matrix R(theta) diag(1, e^{-i delta}) R(-theta).

    delta is pi for a half-wave plate and pi/2 for a quarter-wave plate.
    """
    kind = WaveplateKind(wp.kind)
    retard = np.diag([1.0, -1.0]) if kind is WaveplateKind.HALF else np.diag([1.0, -1j])
    return _rotation(wp.angle) @ retard @ _rotation(-wp.angle)


HADAMARD = WaveplateSetting(WaveplateKind.HALF, math.pi / 8)

# settings that take an H-polarized photon to each named state (up to phase)
PREPARATION: dict[str, WaveplateSetting] = {
    "H": WaveplateSetting(WaveplateKind.HALF, 0.0),
    "V": WaveplateSetting(WaveplateKind.HALF, math.pi / 4),
    "D": WaveplateSetting(WaveplateKind.HALF, math.pi / 8),
    "A": WaveplateSetting(WaveplateKind.HALF, -math.pi / 8),
    "R": WaveplateSetting(WaveplateKind.QUARTER, math.pi / 4),
    "L": WaveplateSetting(WaveplateKind.QUARTER, -math.pi / 4),
}


def analysis_jones(basis: Basis | str) -> np.ndarray:
    """Unitary taking the basis' first state to H and second to V.

    Equivalent to the analysis waveplates in front of a polarizing splitter.
    """
    first, second = Basis(basis).states
    return np.array([POLARIZATION_STATES[first].conj(), POLARIZATION_STATES[second].conj()])


@dataclass(frozen=True)
class AnalysisSetting:
    """Projector pair for the two output photons.

    ``*_element`` is 0 for the basis' first state (H, D, R) and 1 for the second.
    """

    control_basis: Basis = Basis.HV
    target_basis: Basis = Basis.HV
    control_element: int = 0
    target_element: int = 0

    def __post_init__(self):
        object.__setattr__(self, "control_basis", Basis(self.control_basis))
        object.__setattr__(self, "target_basis", Basis(self.target_basis))
        if self.control_element not in (0, 1) or self.target_element not in (0, 1):
            raise ContractError("projector element must be 0 or 1")

    @classmethod
    def from_labels(cls, control: str, target: str) -> "AnalysisSetting":
        """E.g. ``from_labels("A", "D")``."""
        return cls(_basis_of(control), _basis_of(target),
                   _basis_of(control).states.index(control),
                   _basis_of(target).states.index(target))

    @property
    def label(self) -> str:
        return self.control_basis.states[self.control_element] + self.target_basis.states[self.target_element]

    def unitary(self) -> ModeUnitary:
        u = ModeUnitary.embed(analysis_jones(self.control_basis), [C_H, C_V], N_MODES)
        return u.then(ModeUnitary.embed(analysis_jones(self.target_basis), [T_H, T_V], N_MODES))

    @property
    def detector_modes(self) -> tuple[int, int]:
        return (C_H + self.control_element, T_H + self.target_element)

    def pattern(self) -> DetectionPattern:
        return DetectionPattern.coincidence(*self.detector_modes)


def _basis_of(label: str) -> Basis:
    for b in Basis:
        if label in b.states:
            return b
    raise ContractError(f"unknown polarization label {label!r}")


@dataclass(frozen=True)
class Waveplate:
    setting: WaveplateSetting
    rail: int

    def unitary(self) -> ModeUnitary:
        return ModeUnitary.embed(jones_of(self.setting), [2 * self.rail, 2 * self.rail + 1], N_MODES)


@dataclass(frozen=True)
class Coupler:
    """Partially reflecting splitter whose reflected beam continues along its own rail.

    ``reflectivity`` is the intensity fraction that stays in each rail; the
    two-photon stay-stay amplitude is r^2 - t^2 (-1/3 for R = 1/3).
    """

    reflectivity: float
    mode_a: int
    mode_b: int

    def unitary(self) -> ModeUnitary:
        bs = beamsplitter(self.reflectivity, self.mode_a, self.mode_b, N_MODES)
        return bs.then(ModeUnitary.swap(self.mode_a, self.mode_b, N_MODES))


@dataclass(frozen=True)
class GateCircuit:
    elements: tuple
    unitary: ModeUnitary

    @classmethod
    def compile(cls, elements: Sequence) -> "GateCircuit":
        u = ModeUnitary.identity(N_MODES)
        for el in elements:
            u = u.then(el.unitary())
        return cls(tuple(elements), u)

    def with_analysis(self, setting: AnalysisSetting) -> ModeUnitary:
        return self.unitary.then(setting.unitary())


def build_cnot(hadamard_on: Literal["target", "control"] = "target",
               internal_waveplate: bool = True,
               coupling: float = 1.0 / 3.0) -> GateCircuit:
    """Ideal post-selected CNOT; post-selected logical action is CNOT/3.

    ``hadamard_on="control"`` puts the Hadamards on the first rail, which
    makes that rail the flipped qubit (roles transposed). Dropping the
    internal waveplate removes the three couplers.
    """
    if hadamard_on not in ("target", "control"):
        raise ContractError("hadamard_on must be 'target' or 'control'")
    rail = TARGET if hadamard_on == "target" else CONTROL
    core = []
    if internal_waveplate:
        core = [Coupler(coupling, C_V, T_V), Coupler(coupling, C_H, VAC_A), Coupler(coupling, T_H, VAC_B)]
    return GateCircuit.compile([Waveplate(HADAMARD, rail), *core, Waveplate(HADAMARD, rail)])


def logical_input_state(control: Sequence[complex] | str, target: Sequence[complex] | str) -> PhotonicState:
    """Control photon (label 0) and target photon (label 1) with given polarizations."""
    vc = np.zeros(N_MODES, dtype=complex)
    vt = np.zeros(N_MODES, dtype=complex)
    vc[C_H:C_V + 1] = POLARIZATION_STATES[control] if isinstance(control, str) else control
    vt[T_H:T_V + 1] = POLARIZATION_STATES[target] if isinstance(target, str) else target
    return PhotonicState.product([(vc, 0), (vt, 1)], N_MODES)


def coincidence_table(circuit: GateCircuit, overlap: float) -> np.ndarray:
    """Post-selected coincidence probabilities per input pair, rows/cols HH, HV, VH, VV."""
    if not 0.0 <= overlap <= 1.0:
        raise ContractError(f"overlap {overlap} outside [0, 1]")
    gram = gram_from_overlap(overlap)
    table = np.zeros((4, 4))
    for i, inp in enumerate(LOGICAL_ORDER):
        dist = output_distribution(logical_input_state(inp[0], inp[1]), circuit.unitary, gram)
        for j, out in enumerate(LOGICAL_ORDER):
            pat = DetectionPattern.coincidence(C_H + "HV".index(out[0]), T_H + "HV".index(out[1]))
            table[i, j] = sum(p for occ, p in dist.items() if pat.matches(occ))
    return table


def analysis_probabilities(circuit: GateCircuit, control: str | Sequence[complex],
                           target: str | Sequence[complex], control_basis: Basis | str,
                           target_basis: Basis | str, overlap: float) -> np.ndarray:
    """2x2 array of coincidence probabilities A[control element, target element]."""
    state = logical_input_state(control, target)
    gram = gram_from_overlap(overlap)
    out = np.zeros((2, 2))
    for ce in (0, 1):
        for te in (0, 1):
            setting = AnalysisSetting(control_basis, target_basis, ce, te)
            out[ce, te] = outcome_probability(state, circuit.with_analysis(setting), setting.pattern(), gram)
    return out


def post_selected_state(circuit: GateCircuit, control: str | Sequence[complex],
                        target: str | Sequence[complex]) -> np.ndarray:
    """Normalized two-qubit output (indistinguishable photons), ordered HH, HV, VH, VV."""
    vc = np.asarray(POLARIZATION_STATES[control] if isinstance(control, str) else control, dtype=complex)
    vt = np.asarray(POLARIZATION_STATES[target] if isinstance(target, str) else target, dtype=complex)
    amps = post_selected_map(circuit.unitary) @ np.kron(vc, vt)
    nrm = np.linalg.norm(amps)
    if nrm == 0.0:
        raise ContractError("post-selection never succeeds for this input")
    return amps / nrm


def project(state: Sequence[complex], setting: AnalysisSetting) -> float:
    """Born-rule probability of the projector pair on a two-qubit state."""
    psi = np.asarray(state, dtype=complex)
    if psi.shape != (4,):
        raise ContractError("expected a two-qubit state vector")
    bc = POLARIZATION_STATES[setting.control_basis.states[setting.control_element]]
    bt = POLARIZATION_STATES[setting.target_basis.states[setting.target_element]]
    return float(abs(np.vdot(np.kron(bc, bt), psi)) ** 2)
