"""Fock-space linear optics: permanents, mode unitaries, labelled photon states.

Photons carry an integer *internal label*. Different labels are orthogonal
internal states unless a Gram matrix says otherwise; two-photon partial
distinguishability is handled as the probability-level mixture
``M * P_indist + (1 - M) * P_dist``.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from qdcnot.errors import ContractError, UnsupportedConfigurationError

MAX_PERMANENT_SIZE = 12
# numerical cutoff on superposition terms, not a physical loss
PRUNE_TOL = 1e-14
UNITARY_TOL = 1e-10

Photon = tuple[int, int]  # (flat mode, internal label)
Occupation = tuple[int, ...]


class Polarization(IntEnum):
    H = 0
    V = 1


@dataclass(frozen=True, order=True)
class ModeIndex:
    """A polarization mode of one spatial rail."""

    spatial: int
    polarization: Polarization

    @property
    def flat(self) -> int:
        return 2 * self.spatial + int(self.polarization)

    @classmethod
    def from_flat(cls, index: int) -> "ModeIndex":
        if index < 0:
            raise ContractError(f"negative mode index {index}")
        return cls(index // 2, Polarization(index % 2))


def _flat(mode: int | ModeIndex) -> int:
    return mode.flat if isinstance(mode, ModeIndex) else int(mode)


def permanent(m) -> complex:
    """Matrix permanent by Ryser's inclusion-exclusion formula in Gray-code order.

    Costs O(2^n * n). Matrices larger than ``MAX_PERMANENT_SIZE`` are refused.
    """
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"permanent needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n > MAX_PERMANENT_SIZE:
        raise ContractError(f"permanent of {n}x{n} exceeds cap {MAX_PERMANENT_SIZE}")

    row_sums = np.zeros(n, dtype=complex)
    total = 0j
    gray = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        gray ^= 1 << j
        if gray >> j & 1:
            row_sums += a[:, j]
        else:
            row_sums -= a[:, j]
        sign = -1 if bin(gray).count("1") % 2 else 1
        total += sign * np.prod(row_sums)
    return complex((-1) ** n * total)


@dataclass(frozen=True)
class ModeUnitary:
    """Unitary transfer matrix, ``matrix[out, in]``."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractError(f"mode unitary must be square, got {m.shape}")
        if not np.allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=UNITARY_TOL, rtol=0):
            raise ContractError("matrix is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n_modes: int) -> "ModeUnitary":
        return cls(np.eye(n_modes, dtype=complex))

    @classmethod
    def embed(cls, block, modes: Sequence[int | ModeIndex], n_modes: int) -> "ModeUnitary":
        """Place a k x k block acting on ``modes`` inside an identity."""
        idx = [_flat(m) for m in modes]
        if len(set(idx)) != len(idx) or any(i < 0 or i >= n_modes for i in idx):
            raise ContractError(f"bad mode list {idx} for {n_modes} modes")
        u = np.eye(n_modes, dtype=complex)
        u[np.ix_(idx, idx)] = np.asarray(block, dtype=complex)
        return cls(u)

    @classmethod
    def swap(cls, mode_a: int | ModeIndex, mode_b: int | ModeIndex, n_modes: int) -> "ModeUnitary":
        return cls.embed([[0, 1], [1, 0]], [mode_a, mode_b], n_modes)

    def then(self, other: "ModeUnitary") -> "ModeUnitary":
        """``self`` followed by ``other``."""
        return ModeUnitary(other.matrix @ self.matrix)

    def __matmul__(self, other: "ModeUnitary") -> "ModeUnitary":
        return ModeUnitary(self.matrix @ other.matrix)

    def unitarity_error(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m @ m.conj().T - np.eye(self.n_modes))))


def beamsplitter(reflectivity: float, mode_a: int | ModeIndex, mode_b: int | ModeIndex,
                 n_modes: int) -> ModeUnitary:
    """Lossless beamsplitter with block ``[[t, r], [r, -t]]``, t = sqrt(1-R), r = sqrt(R).

    Light entering ``mode_a`` stays in ``mode_a`` with amplitude t. The sign
    convention is global; the -t entry carries the reflection phase.
    """
    if not 0.0 <= reflectivity <= 1.0:
        raise ContractError(f"reflectivity {reflectivity} outside [0, 1]")
    a, b = _flat(mode_a), _flat(mode_b)
    if a == b:
        raise ContractError("beamsplitter needs two distinct modes")
    if not (0 <= a < n_modes and 0 <= b < n_modes):
        raise ContractError(f"mode index out of range for {n_modes} modes")
    t, r = math.sqrt(1.0 - reflectivity), math.sqrt(reflectivity)
    return ModeUnitary.embed([[t, r], [r, -t]], [a, b], n_modes)


def _occupation(modes: Iterable[int], n_modes: int) -> Occupation:
    occ = [0] * n_modes
    for m in modes:
        occ[m] += 1
    return tuple(occ)


def _factorial_weight(items: Iterable) -> float:
    """Product of n! over repeated items (occupation normalization)."""
    return float(math.prod(math.factorial(c) for c in Counter(items).values()))


@dataclass(frozen=True)
class PhotonicState:
    """Superposition of labelled Fock terms.

    Each key is a sorted tuple of ``(mode, label)`` photons; its amplitude is
    on the *normalized* occupation-number basis state.
    """

    terms: Mapping[tuple[Photon, ...], complex]
    n_modes: int

    def __post_init__(self):
        sizes = {len(k) for k in self.terms}
        if len(sizes) > 1:
            raise ContractError("all terms must have the same photon number")
        for key in self.terms:
            for mode, _ in key:
                if not 0 <= mode < self.n_modes:
                    raise ContractError(f"mode {mode} outside 0..{self.n_modes - 1}")
        clean = {tuple(sorted(k)): complex(a) for k, a in self.terms.items() if abs(a) > PRUNE_TOL}
        object.__setattr__(self, "terms", clean)

    @classmethod
    def from_photons(cls, photons: Sequence[tuple[int | ModeIndex, int]], n_modes: int,
                     amplitude: complex = 1.0) -> "PhotonicState":
        key = tuple(sorted((_flat(m), int(label)) for m, label in photons))
        return cls({key: amplitude}, n_modes)

    @classmethod
    def product(cls, photons: Sequence[tuple[Sequence[complex], int]], n_modes: int) -> "PhotonicState":
        """Product of single-photon wavefunctions, each given as (mode vector, label)."""
        vecs = [np.asarray(v, dtype=complex) for v, _ in photons]
        labels = [int(label) for _, label in photons]
        if any(v.shape != (n_modes,) for v in vecs):
            raise ContractError("mode vectors must have length n_modes")
        acc: dict[tuple[Photon, ...], complex] = {}
        supports = [np.flatnonzero(np.abs(v) > PRUNE_TOL) for v in vecs]
        for choice in itertools.product(*supports):
            key = tuple(sorted(zip((int(c) for c in choice), labels)))
            amp = np.prod([v[c] for v, c in zip(vecs, choice)])
            acc[key] = acc.get(key, 0j) + amp
        # creation-operator products carry sqrt(n!) per repeated (mode, label)
        terms = {k: a * math.sqrt(_factorial_weight(k)) for k, a in acc.items()}
        return cls(terms, n_modes)

    @property
    def n_photons(self) -> int:
        return len(next(iter(self.terms))) if self.terms else 0

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted({label for key in self.terms for _, label in key}))

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.terms.values()))

    def evolve(self, u: ModeUnitary) -> "PhotonicState":
        """Apply ``u`` to every photon; labels are treated as orthogonal."""
        if u.n_modes != self.n_modes:
            raise ContractError("unitary and state disagree on mode count")
        out: dict[tuple[Photon, ...], complex] = {}
        m = u.matrix
        for key, amp in self.terms.items():
            by_label: dict[int, list[int]] = {}
            for mode, label in key:
                by_label.setdefault(label, []).append(mode)
            per_label = []
            for label, ins in sorted(by_label.items()):
                norm_in = _factorial_weight(ins)
                branch = []
                for outs in itertools.combinations_with_replacement(range(self.n_modes), len(ins)):
                    a = permanent(m[np.ix_(outs, ins)])
                    if abs(a) <= PRUNE_TOL:
                        continue
                    a /= math.sqrt(norm_in * _factorial_weight(outs))
                    branch.append((tuple((o, label) for o in outs), a))
                per_label.append(branch)
            for combo in itertools.product(*per_label):
                k = tuple(sorted(p for photons, _ in combo for p in photons))
                a = amp * np.prod([x for _, x in combo])
                out[k] = out.get(k, 0j) + a
        return PhotonicState(out, self.n_modes)

    def merge_labels(self) -> "PhotonicState":
        """The same preparation with every photon in one internal state, renormalized."""
        out: dict[tuple[Photon, ...], complex] = {}
        for key, amp in self.terms.items():
            modes = [mode for mode, _ in key]
            w = math.sqrt(_factorial_weight(modes) / _factorial_weight(key))
            k = tuple((mode, 0) for mode in sorted(modes))
            out[k] = out.get(k, 0j) + amp * w
        merged = PhotonicState(out, self.n_modes)
        nrm = merged.norm()
        if nrm == 0.0:
            return merged
        return PhotonicState({k: a / nrm for k, a in merged.terms.items()}, self.n_modes)

    def occupation_probabilities(self) -> dict[Occupation, float]:
        """Label-blind detection probabilities per occupation pattern."""
        probs: dict[Occupation, float] = {}
        for key, amp in self.terms.items():
            occ = _occupation((mode for mode, _ in key), self.n_modes)
            probs[occ] = probs.get(occ, 0.0) + abs(amp) ** 2
        return probs


LOGICAL_RAILS = ((0, 1), (2, 3))


@dataclass(frozen=True)
class DetectionPattern:
    """Required photon counts on some modes; unlisted modes are unconstrained.

    With ``post_select`` set, the outcome must also put exactly one photon in
    each logical output rail (control H/V and target H/V).
    """

    counts: Mapping[int, int] = field(default_factory=dict)
    post_select: bool = False

    def __post_init__(self):
        counts = {_flat(m): int(c) for m, c in dict(self.counts).items()}
        if any(c < 0 for c in counts.values()):
            raise ContractError("detection counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def coincidence(cls, *modes: int | ModeIndex) -> "DetectionPattern":
        counts: dict[int, int] = {}
        for m in modes:
            counts[_flat(m)] = counts.get(_flat(m), 0) + 1
        return cls(counts)

    @property
    def n_counts(self) -> int:
        return sum(self.counts.values())

    def matches(self, occupation: Occupation) -> bool:
        if any(occupation[m] != c for m, c in self.counts.items()):
            return False
        if self.post_select:
            return all(sum(occupation[m] for m in rail) == 1 for rail in LOGICAL_RAILS)
        return True


def gram_from_overlap(overlap: float) -> np.ndarray:
    """Two-label Gram matrix whose squared off-diagonal equals ``overlap``."""
    if not 0.0 <= overlap <= 1.0:
        raise ContractError(f"overlap {overlap} outside [0, 1]")
    g = math.sqrt(overlap)
    return np.array([[1.0, g], [g, 1.0]], dtype=complex)


def _check_gram(gram: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    g = np.asarray(gram, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ContractError("Gram matrix must be square")
    if labels and max(labels) >= g.shape[0]:
        raise ContractError(f"label {max(labels)} has no Gram matrix row")
    if not np.allclose(g, g.conj().T, atol=1e-12, rtol=0.0):
        raise ContractError("Gram matrix must be Hermitian")
    if not np.allclose(np.diag(g), 1.0, atol=1e-12, rtol=0.0):
        raise ContractError("Gram matrix must have unit diagonal")
    if np.min(np.linalg.eigvalsh(g)) < -1e-12:
        raise ContractError("Gram matrix must be positive semi-definite")
    return g


def _indistinguishability_weight(state: PhotonicState, gram) -> float:
    """Probability weight of the fully-coherent branch, 0 or 1 for the extremes."""
    labels = state.labels
    if len(labels) <= 1:
        return 1.0
    if gram is None:
        return 0.0
    g = _check_gram(gram, labels)
    sub = g[np.ix_(labels, labels)]
    if np.allclose(np.abs(sub), 1.0, atol=1e-12, rtol=0.0):
        return 1.0
    if np.allclose(sub, np.eye(len(labels)), atol=1e-12, rtol=0.0):
        return 0.0
    if len(labels) == 2 and state.n_photons == 2:
        return float(abs(sub[0, 1]) ** 2)
    raise UnsupportedConfigurationError(
        "partial distinguishability is modelled for two photons only")


def output_distribution(state: PhotonicState, u: ModeUnitary, gram=None) -> dict[Occupation, float]:
    """Label-blind output occupation probabilities.

    ``gram`` gives pairwise internal overlaps between labels; ``None`` means
    distinct labels are orthogonal.
    """
    w = _indistinguishability_weight(state, gram)
    probs: dict[Occupation, float] = {}
    if w > 0.0:
        for occ, p in state.merge_labels().evolve(u).occupation_probabilities().items():
            probs[occ] = probs.get(occ, 0.0) + w * p
    if w < 1.0:
        for occ, p in state.evolve(u).occupation_probabilities().items():
            probs[occ] = probs.get(occ, 0.0) + (1.0 - w) * p
    return probs


def outcome_probability(state: PhotonicState, u: ModeUnitary, pattern: DetectionPattern,
                        gram=None) -> float:
    """Probability that detection on ``u``'s outputs satisfies ``pattern``."""
    if pattern.n_counts > state.n_photons:
        raise ContractError("pattern asks for more photons than the input holds")
    dist = output_distribution(state, u, gram)
    return float(sum(p for occ, p in dist.items() if pattern.matches(occ)))


def post_selected_map(u: ModeUnitary, logical_inputs: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    """Amplitudes <c't'|u|ct> for one photon per logical rail, indistinguishable photons.

    Rows are logical outputs in order HH, HV, VH, VV; columns follow
    ``logical_inputs`` (default the same four basis states).
    """
    if u.n_modes < 4:
        raise ContractError("logical map needs control and target rails")
    basis = [(c, t) for c in (0, 1) for t in (0, 1)]
    inputs = list(logical_inputs) if logical_inputs is not None else basis
    out = np.zeros((4, len(inputs)), dtype=complex)
    m = u.matrix
    for col, (ci, ti) in enumerate(inputs):
        ins = [LOGICAL_RAILS[0][ci], LOGICAL_RAILS[1][ti]]
        for row, (co, to) in enumerate(basis):
            outs = [LOGICAL_RAILS[0][co], LOGICAL_RAILS[1][to]]
            out[row, col] = permanent(m[np.ix_(outs, ins)])
    return out
