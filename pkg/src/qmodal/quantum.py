"""Exact statevector arithmetic over labeled registers.

Amplitudes are indexed big-endian in register order: for registers
``(R, A)`` the basis label ``|r a>`` sits at index ``r * dim(A) + a``.
Mixed states appear only as ensembles of pure branches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ATOL", "ZERO_PROB", "QuantumError", "ZeroProbabilityError", "Register", "PureState",
    "LocalOperator", "Ensemble", "ProjectorFamily", "Isometry", "ket", "projector", "tensor",
    "apply_local", "apply_unitary", "record_family", "born_probability", "condition",
    "measurement_isometry", "collapse_measure",
    "certainty", "relstate_probability", "amplitudes_from_pairs", "BUILTIN_VECTORS",
]

ATOL = 1e-9
ZERO_PROB = 1e-12


class QuantumError(ValueError):
    pass


class ZeroProbabilityError(QuantumError):
    """Conditioning on an event that has (numerically) zero probability."""


@dataclass(frozen=True)
class Register:
    label: str
    dim: int = 2

    def __post_init__(self):
        if self.dim < 2:
            raise QuantumError(f"register {self.label} needs dimension >= 2, got {self.dim}")


def _check_labels(registers: Sequence[Register]) -> None:
    labels = [r.label for r in registers]
    if len(set(labels)) != len(labels):
        raise QuantumError(f"duplicate register labels in {labels}")


@dataclass(frozen=True, eq=False)
class PureState:
    registers: tuple[Register, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_labels(regs)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        size = int(np.prod([r.dim for r in regs])) if regs else 1
        if amps.size != size:
            raise QuantumError(f"expected {size} amplitudes for {self.labels_of(regs)}, got {amps.size}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > ATOL:
            raise QuantumError(f"state is not normalized (norm {norm:.12g})")
        amps.setflags(write=False)
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "amplitudes", amps)

    @staticmethod
    def labels_of(registers) -> list[str]:
        return [r.label for r in registers]

    @classmethod
    def normalized(cls, registers: Sequence[Register], amplitudes) -> "PureState":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm < ZERO_PROB:
            raise ZeroProbabilityError("cannot normalize the zero vector")
        return cls(tuple(registers), amps / norm)

    @classmethod
    def basis(cls, registers: Sequence[Register], digits: Sequence[int]) -> "PureState":
        registers = tuple(registers)
        dims = [r.dim for r in registers]
        amps = np.zeros(int(np.prod(dims)), dtype=complex)
        amps[np.ravel_multi_index(tuple(digits), dims)] = 1
        return cls(registers, amps)

    @property
    def labels(self) -> list[str]:
        return self.labels_of(self.registers)

    @property
    def dims(self) -> list[int]:
        return [r.dim for r in self.registers]

    def register(self, label: str) -> Register:
        for r in self.registers:
            if r.label == label:
                return r
        raise QuantumError(f"no register {label!r} in {self.labels}")

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.dims)

    def amplitude(self, digits: Mapping[str, int] | Sequence[int]) -> complex:
        if isinstance(digits, Mapping):
            digits = [digits[label] for label in self.labels]
        return complex(self.tensor()[tuple(digits)])

    def inner(self, other: "PureState") -> complex:
        """``<self|other>``; register lists must agree."""
        if self.labels != other.labels:
            other = other.reorder(self.labels)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def reorder(self, labels: Sequence[str]) -> "PureState":
        if sorted(labels) != sorted(self.labels):
            raise QuantumError(f"cannot reorder {self.labels} into {list(labels)}")
        perm = [self.labels.index(label) for label in labels]
        amps = np.transpose(self.tensor(), perm).reshape(-1)
        return PureState(tuple(self.registers[p] for p in perm), amps)

    def close_to(self, other: "PureState", atol: float = ATOL) -> bool:
        if sorted(self.labels) != sorted(other.labels):
            return False
        other = other.reorder(self.labels)
        return bool(np.allclose(self.amplitudes, other.amplitudes, atol=atol))

    def __repr__(self):
        return f"PureState({self.labels}, {np.round(self.amplitudes, 6).tolist()})"


def ket(registers: Sequence[Register] | Register, vector) -> PureState:
    regs = (registers,) if isinstance(registers, Register) else tuple(registers)
    return PureState.normalized(regs, vector)


def projector(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def tensor(a: PureState, b: PureState) -> PureState:
    clash = set(a.labels) & set(b.labels)
    if clash:
        raise QuantumError(f"register labels collide: {sorted(clash)}")
    return PureState(a.registers + b.registers, np.kron(a.amplitudes, b.amplitudes))


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """A matrix acting on a named subset of registers (big-endian in that order)."""

    registers: tuple[Register, ...]
    matrix: np.ndarray

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_labels(regs)
        mat = np.asarray(self.matrix, dtype=complex)
        size = int(np.prod([r.dim for r in regs]))
        if mat.shape != (size, size):
            raise QuantumError(f"operator on {PureState.labels_of(regs)} must be {size}x{size}, got {mat.shape}")
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "matrix", mat)

    @property
    def labels(self) -> list[str]:
        return PureState.labels_of(self.registers)

    def __matmul__(self, other: "LocalOperator") -> "LocalOperator":
        """Tensor product of operators on disjoint registers."""
        return LocalOperator(self.registers + other.registers, np.kron(self.matrix, other.matrix))


def _apply_matrix(psi: PureState, labels: Sequence[str], matrix: np.ndarray, out_dims=None) -> np.ndarray:
    """Apply ``matrix`` to the listed registers; result axes keep ``psi``'s order."""
    missing = [label for label in labels if label not in psi.labels]
    if missing:
        raise QuantumError(f"operator registers {missing} are not part of {psi.labels}")
    axes = [psi.labels.index(label) for label in labels]
    in_dims = [psi.dims[k] for k in axes]
    out_dims = list(out_dims or in_dims)
    t = np.moveaxis(psi.tensor(), axes, list(range(len(axes))))
    rest = t.shape[len(axes):]
    flat = t.reshape(int(np.prod(in_dims)), -1)
    res = (matrix @ flat).reshape(out_dims + list(rest))
    return np.moveaxis(res, list(range(len(axes))), axes)


def apply_local(psi: PureState, op: LocalOperator) -> np.ndarray:
    """Unnormalized amplitudes of ``op`` applied to ``psi`` (identity elsewhere)."""
    return _apply_matrix(psi, op.labels, op.matrix).reshape(-1)


def born_probability(psi: PureState, pi: LocalOperator) -> float:
    """``<psi|pi|psi>`` with ``pi`` padded by the identity on the other registers."""
    p = float(np.vdot(psi.amplitudes, apply_local(psi, pi)).real)
    return min(1.0, max(0.0, p)) if -ATOL < p < 1 + ATOL else p


def condition(psi: PureState, pi: LocalOperator) -> PureState:
    """Post-select on ``pi``: return ``pi psi / |pi psi|``."""
    p = born_probability(psi, pi)
    if p < ATOL:
        raise ZeroProbabilityError(f"post-selected event has probability {p:.3g}")
    return PureState.normalized(psi.registers, apply_local(psi, pi))


def apply_unitary(psi: PureState, op: LocalOperator) -> PureState:
    m = op.matrix
    if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=ATOL):
        raise QuantumError("operator is not unitary")
    return PureState(psi.registers, apply_local(psi, op))


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """A complete family of orthogonal projectors indexed by outcome labels."""

    registers: tuple[Register, ...]
    projectors: Mapping[str, np.ndarray]

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_labels(regs)
        size = int(np.prod([r.dim for r in regs]))
        projs = {str(k): np.asarray(v, dtype=complex) for k, v in self.projectors.items()}
        if not projs:
            raise QuantumError("a projector family needs at least one outcome")
        total = np.zeros((size, size), dtype=complex)
        for label, p in projs.items():
            if p.shape != (size, size):
                raise QuantumError(f"projector {label!r} has shape {p.shape}, expected {(size, size)}")
            if not np.allclose(p, p.conj().T, atol=ATOL):
                raise QuantumError(f"projector {label!r} is not Hermitian")
            if not np.allclose(p @ p, p, atol=ATOL):
                raise QuantumError(f"projector {label!r} is not idempotent")
            total += p
        if not np.allclose(total, np.eye(size), atol=ATOL):
            raise QuantumError("projectors do not sum to the identity")
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "projectors", projs)

    @property
    def outcomes(self) -> list[str]:
        return list(self.projectors)

    @property
    def labels(self) -> list[str]:
        return PureState.labels_of(self.registers)

    def operator(self, outcome: str) -> LocalOperator:
        if outcome not in self.projectors:
            raise QuantumError(f"unknown outcome {outcome!r}; expected one of {self.outcomes}")
        return LocalOperator(self.registers, self.projectors[outcome])

    @classmethod
    def from_basis(cls, registers: Sequence[Register] | Register, vectors: Mapping[str, Sequence],
                   complement: str | None = None) -> "ProjectorFamily":
        """Rank-1 projectors onto ``vectors``; ``complement`` names the projector onto the rest."""
        regs = (registers,) if isinstance(registers, Register) else tuple(registers)
        projs = {label: projector(v) for label, v in vectors.items()}
        if complement is not None:
            size = int(np.prod([r.dim for r in regs]))
            projs[complement] = np.eye(size) - sum(projs.values())
        return cls(regs, projs)

    @classmethod
    def computational(cls, register: Register, labels: Sequence[str] | None = None) -> "ProjectorFamily":
        labels = list(labels) if labels is not None else [str(k) for k in range(register.dim)]
        if len(labels) != register.dim:
            raise QuantumError(f"need {register.dim} labels for register {register.label}")
        return cls.from_basis(register, {lab: np.eye(register.dim)[k] for k, lab in enumerate(labels)})


@dataclass(frozen=True, eq=False)
class Isometry:
    """``V: H_in -> H_in (x) H_obs`` with orthonormal columns."""

    inputs: tuple[Register, ...]
    observer: Register
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        din = int(np.prod([r.dim for r in self.inputs]))
        if m.shape != (din * self.observer.dim, din):
            raise QuantumError(f"isometry matrix has shape {m.shape}")
        if not np.allclose(m.conj().T @ m, np.eye(din), atol=ATOL):
            raise QuantumError("matrix columns are not orthonormal")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "matrix", m)

    @property
    def outputs(self) -> tuple[Register, ...]:
        return self.inputs + (self.observer,)

    def apply(self, psi: PureState) -> PureState:
        """Act on ``psi``'s input registers; the observer register is appended last."""
        if self.observer.label in psi.labels:
            raise QuantumError(f"observer register {self.observer.label} already present")
        labels = [r.label for r in self.inputs]
        out_dims = [r.dim for r in self.inputs] + [self.observer.dim]
        missing = [label for label in labels if label not in psi.labels]
        if missing:
            raise QuantumError(f"isometry registers {missing} are not part of {psi.labels}")
        axes = [psi.labels.index(label) for label in labels]
        t = np.moveaxis(psi.tensor(), axes, list(range(len(axes))))
        rest_regs = [r for k, r in enumerate(psi.registers) if k not in axes]
        flat = t.reshape(self.matrix.shape[1], -1)
        res = (self.matrix @ flat).reshape(out_dims + [r.dim for r in rest_regs])
        out = PureState(tuple(self.inputs) + (self.observer,) + tuple(rest_regs), res.reshape(-1))
        return out.reorder(psi.labels + [self.observer.label])


def measurement_isometry(family: ProjectorFamily, observer: Register) -> Isometry:
    """``V = sum_x pi_x (x) |x>_O``: record outcome ``x`` (by position) in ``observer``.

    For rank-1 projectors this is ``|a> -> |a>|A_a>``; higher-rank projectors
    are handled by the same formula.
    """
    if observer.dim < len(family.outcomes):
        raise QuantumError(f"observer {observer.label} (dim {observer.dim}) cannot record "
                           f"{len(family.outcomes)} outcomes")
    if observer.label in family.labels:
        raise QuantumError("observer register must differ from the measured registers")
    din = int(np.prod([r.dim for r in family.registers]))
    # output index is big-endian (system, observer), so |s>|x> sits at s * dim(O) + x
    m = np.zeros((din * observer.dim, din), dtype=complex)
    for x, label in enumerate(family.outcomes):
        m[x::observer.dim, :] += family.projectors[label]
    return Isometry(family.registers, observer, m)


def record_family(observer: Register, outcomes: Sequence[str]) -> ProjectorFamily:
    """Readout of an observer register written by :func:`measurement_isometry`."""
    eye = np.eye(observer.dim)
    projs = {label: np.outer(eye[k], eye[k]) for k, label in enumerate(outcomes)}
    unused = np.eye(observer.dim) - sum(projs.values())
    if np.any(np.abs(unused) > ATOL):
        projs["unrecorded"] = unused
    return ProjectorFamily((observer,), projs)


@dataclass(frozen=True, eq=False)
class Ensemble:
    branches: tuple[tuple[float, PureState], ...]

    def __post_init__(self):
        branches = tuple((float(p), s) for p, s in self.branches)
        if not branches:
            raise QuantumError("empty ensemble")
        if any(p < -ATOL or p > 1 + ATOL for p, _ in branches):
            raise QuantumError("branch probabilities must lie in [0, 1]")
        total = sum(p for p, _ in branches)
        if abs(total - 1) > ATOL:
            raise QuantumError(f"branch probabilities sum to {total}")
        labels = branches[0][1].labels
        if any(s.labels != labels for _, s in branches):
            raise QuantumError("ensemble branches must share one register list")
        object.__setattr__(self, "branches", branches)

    @classmethod
    def pure(cls, psi: PureState) -> "Ensemble":
        return cls(((1.0, psi),))

    def expectation(self, op: LocalOperator) -> float:
        return sum(p * born_probability(s, op) for p, s in self.branches)

    def condition(self, op: LocalOperator) -> "Ensemble":
        weighted = [(p * born_probability(s, op), s) for p, s in self.branches]
        total = sum(w for w, _ in weighted)
        if total < ATOL:
            raise ZeroProbabilityError("post-selected event has probability zero on every branch")
        return Ensemble(tuple((w / total, condition(s, op)) for w, s in weighted if w > ZERO_PROB))

    def map(self, fn) -> "Ensemble":
        return Ensemble(tuple((p, fn(s)) for p, s in self.branches))

    def flat_map(self, fn) -> "Ensemble":
        out = []
        for p, s in self.branches:
            out.extend((p * q, t) for q, t in fn(s).branches)
        return Ensemble(tuple(out))

    def density_matrix(self) -> np.ndarray:
        return sum(p * np.outer(s.amplitudes, s.amplitudes.conj()) for p, s in self.branches)


def collapse_measure(psi: PureState, family: ProjectorFamily) -> Ensemble:
    """Projective measurement without a record: one branch per outcome with p > 1e-9."""
    branches = []
    for label in family.outcomes:
        op = family.operator(label)
        p = born_probability(psi, op)
        if p > ATOL:
            branches.append((p, condition(psi, op)))
    total = sum(p for p, _ in branches)
    return Ensemble(tuple((p / total, s) for p, s in branches))


def certainty(psi: PureState, family: ProjectorFamily) -> str | None:
    """The outcome with probability 1 (within 1e-9), if there is one."""
    for label in family.outcomes:
        if born_probability(psi, family.operator(label)) >= 1 - ATOL:
            return label
    return None


def relstate_probability(phi: PureState, observers: Sequence[tuple[ProjectorFamily, Register]],
                         query: Mapping[str, str], given: Mapping[str, str] | None = None) -> float:
    """Record probability in the no-collapse picture.

    Each ``(family, observer)`` pair is applied in order as a measurement
    isometry. ``query`` and ``given`` map observer labels to outcome labels;
    the result is ``q(query | given)`` (or the joint ``q(query)``), computed
    from the squared norm of the record-projected global state.
    """
    psi = phi
    outcomes: dict[str, list[str]] = {}
    for family, obs in observers:
        psi = measurement_isometry(family, obs).apply(psi)
        outcomes[obs.label] = family.outcomes

    def q(assignment: Mapping[str, str]) -> float:
        ops = []
        for label, value in assignment.items():
            if label not in outcomes:
                raise QuantumError(f"no observer register {label!r}")
            if value not in outcomes[label]:
                raise QuantumError(f"observer {label} has no outcome {value!r}")
            ops.append(record_family(psi.register(label), outcomes[label]).operator(value))
        amps = psi.amplitudes
        for op in ops:
            amps = _apply_matrix(_Raw(psi.registers, amps), op.labels, op.matrix).reshape(-1)
        return float(np.vdot(amps, amps).real)

    given = dict(given or {})
    overlap = set(given) & set(query)
    if any(given[k] != query[k] for k in overlap):
        return 0.0
    joint = q({**given, **query})
    if not given:
        return joint
    base = q(given)
    if base < ZERO_PROB:
        raise ZeroProbabilityError(f"conditioning record {given} has probability {base:.3g}")
    return joint / base


@dataclass(frozen=True, eq=False)
class _Raw:
    """Unnormalized amplitudes with the shape helpers of :class:`PureState`."""

    registers: tuple[Register, ...]
    amplitudes: np.ndarray

    labels = property(lambda self: PureState.labels_of(self.registers))
    dims = property(lambda self: [r.dim for r in self.registers])

    def tensor(self):
        return self.amplitudes.reshape(self.dims)


_S = np.sqrt(0.5)
BUILTIN_VECTORS: dict[str, np.ndarray] = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_S, _S], dtype=complex),
    "-": np.array([_S, -_S], dtype=complex),
    # two-qubit lab states; "ok" carries the minus sign
    "okminus": np.array([_S, 0, 0, -_S], dtype=complex),
    "failplus": np.array([_S, 0, 0, _S], dtype=complex),
}


def amplitudes_from_pairs(pairs: Iterable[Sequence[float]] | str) -> np.ndarray:
    """``[[re, im], ...]`` (or a built-in vector name) to a complex array."""
    if isinstance(pairs, str):
        if pairs not in BUILTIN_VECTORS:
            raise QuantumError(f"unknown built-in vector {pairs!r}; known: {sorted(BUILTIN_VECTORS)}")
        return BUILTIN_VECTORS[pairs].copy()
    out = []
    for entry in pairs:
        if len(entry) != 2:
            raise QuantumError(f"amplitude entries must be [re, im] pairs, got {entry!r}")
        out.append(complex(float(entry[0]), float(entry[1])))
    return np.array(out, dtype=complex)
