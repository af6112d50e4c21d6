"""Dense statevector simulation for small parameterized circuits.

Qubit ``q`` is bit ``q`` of the basis index (qubit 0 is least significant).
Expectation values are exact; there is no shot sampling.

Most routines accept a leading batch axis so many circuit instances sharing
one template can be evaluated in a single vectorized pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError

MAX_QUBITS = 12


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    CNOT = "CNOT"
    CZ = "CZ"

    @property
    def is_rotation(self) -> bool:
        return self in (GateKind.RX, GateKind.RY, GateKind.RZ)

    @property
    def arity(self) -> int:
        return 2 if self in (GateKind.CNOT, GateKind.CZ) else 1


@dataclass(frozen=True)
class Gate:
    """One gate of a template.

    For two-qubit gates ``qubits`` is ``(control, target)``. Rotations name
    the angle slot they read from; fixed gates carry ``slot=None``.
    """

    kind: GateKind
    qubits: tuple
    slot: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if len(self.qubits) != self.kind.arity:
            raise ConfigurationError(
                f"{self.kind.value} acts on {self.kind.arity} qubit(s), got {self.qubits}"
            )
        if self.kind.arity == 2 and self.qubits[0] == self.qubits[1]:
            raise ConfigurationError(f"{self.kind.value} needs two distinct qubits")
        if self.kind.is_rotation and self.slot is None:
            raise ConfigurationError(f"{self.kind.value} requires an angle slot")
        if not self.kind.is_rotation and self.slot is not None:
            raise ConfigurationError(f"{self.kind.value} takes no angle slot")


@dataclass(frozen=True)
class CircuitTemplate:
    """Ordered gate list whose rotation angles are looked up by slot.

    ``theta[i]`` binds to ``trainable_slots[i]`` and ``encodings[j]`` binds to
    ``encoding_slots[j]``. Several gates may share a slot.
    """

    n_qubits: int
    gates: tuple
    trainable_slots: tuple = ()
    encoding_slots: tuple = ()
    name: str = ""
    # derived lookups, filled in __post_init__
    _param_gates: tuple = field(init=False, repr=False, compare=False)
    _param_slots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "trainable_slots", tuple(self.trainable_slots))
        object.__setattr__(self, "encoding_slots", tuple(self.encoding_slots))
        slots = self.trainable_slots + self.encoding_slots
        if len(set(slots)) != len(slots):
            raise ConfigurationError("a slot may be trainable or encoding, not both")
        known = set(slots)
        for gate in self.gates:
            for q in gate.qubits:
                if not 0 <= q < self.n_qubits:
                    raise ConfigurationError(
                        f"qubit {q} out of range for {self.n_qubits}-qubit template"
                    )
            if gate.slot is not None and gate.slot not in known:
                raise ConfigurationError(f"gate {gate} references unbound slot {gate.slot}")
        param_gates = tuple(i for i, g in enumerate(self.gates) if g.slot is not None)
        object.__setattr__(self, "_param_gates", param_gates)
        order = {s: k for k, s in enumerate(slots)}
        object.__setattr__(
            self,
            "_param_slots",
            np.array([order[self.gates[i].slot] for i in param_gates], dtype=np.intp),
        )

    @property
    def n_trainable(self) -> int:
        return len(self.trainable_slots)

    @property
    def n_encoding(self) -> int:
        return len(self.encoding_slots)

    @property
    def n_parameterized_gates(self) -> int:
        return len(self._param_gates)


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape[-1] != 2**self.n_qubits:
            raise ConfigurationError(
                f"expected {2 ** self.n_qubits} amplitudes, got {self.amplitudes.shape[-1]}"
            )

    def norm_squared(self):
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)


def _check_n_qubits(n):
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n!r}")


def new_state(n_qubits: int, batch: Optional[int] = None) -> StateVector:
    """Return ``|0...0>``, optionally replicated along a leading batch axis."""
    _check_n_qubits(n_qubits)
    shape = (2**n_qubits,) if batch is None else (batch, 2**n_qubits)
    amps = np.zeros(shape, dtype=np.complex128)
    amps[..., 0] = 1.0
    return StateVector(n_qubits, amps)


def _rotation_coeffs(kind: GateKind, angle):
    """Return the 2x2 matrix entries (m00, m01, m10, m11) broadcast over ``angle``."""
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    c, s = np.cos(half), np.sin(half)
    if kind is GateKind.RX:
        return c, -1j * s, -1j * s, c
    if kind is GateKind.RY:
        return c, -s, s, c
    # RZ
    return np.exp(-1j * half), 0.0, 0.0, np.exp(1j * half)


def _apply_inplace(amps: np.ndarray, n: int, gate: Gate, angle=None) -> None:
    """Apply ``gate`` to ``amps`` of shape (B, 2**n) in place."""
    batch = amps.shape[0]
    kind = gate.kind
    if kind.arity == 1:
        q = gate.qubits[0]
        view = amps.reshape(batch, 2 ** (n - q - 1), 2, 2**q)
        a0 = view[:, :, 0, :].copy()
        a1 = view[:, :, 1, :]
        if kind is GateKind.H:
            inv = 1.0 / np.sqrt(2.0)
            view[:, :, 0, :] = (a0 + a1) * inv
            view[:, :, 1, :] = (a0 - a1) * inv
            return
        m00, m01, m10, m11 = (
            np.reshape(m, (-1, 1, 1)) if np.ndim(m) else m
            for m in _rotation_coeffs(kind, angle)
        )
        if kind is GateKind.RZ:
            view[:, :, 0, :] = m00 * a0
            view[:, :, 1, :] = m11 * a1
        else:
            new1 = m10 * a0 + m11 * a1
            view[:, :, 0, :] = m00 * a0 + m01 * a1
            view[:, :, 1, :] = new1
        return

    control, target = gate.qubits
    view = amps.reshape((batch,) + (2,) * n)
    # axis 1 holds the most significant bit, i.e. qubit n-1
    c_ax, t_ax = 1 + (n - 1 - control), 1 + (n - 1 - target)
    idx = [slice(None)] * (n + 1)
    idx[c_ax] = 1
    if kind is GateKind.CZ:
        idx[t_ax] = 1
        view[tuple(idx)] *= -1.0
        return
    idx0, idx1 = list(idx), list(idx)
    idx0[t_ax], idx1[t_ax] = 0, 1
    tmp = view[tuple(idx0)].copy()
    view[tuple(idx0)] = view[tuple(idx1)]
    view[tuple(idx1)] = tmp


def apply_gate(state: StateVector, gate: Gate, angle: Optional[float] = None) -> StateVector:
    """Apply one gate to ``state`` (in place) and return it.

    ``angle`` must be given for rotations and omitted otherwise. With a
    batched state, ``angle`` may be a vector with one entry per batch row.
    """
    for q in gate.qubits:
        if not 0 <= q < state.n_qubits:
            raise IndexError(f"qubit {q} out of range for {state.n_qubits}-qubit state")
    if gate.kind.is_rotation and angle is None:
        raise ValueError(f"{gate.kind.value} needs an angle")
    if not gate.kind.is_rotation and angle is not None:
        raise ValueError(f"{gate.kind.value} takes no angle")
    amps = state.amplitudes
    flat = amps.reshape(-1, amps.shape[-1])
    _apply_inplace(flat, state.n_qubits, gate, angle)
    state.amplitudes = flat.reshape(amps.shape)
    return state


def _z_expectations(amps: np.ndarray, n: int) -> np.ndarray:
    """<Z_q> for every qubit; amps (B, 2**n) -> (B, n)."""
    probs = (amps.real**2 + amps.imag**2).reshape((amps.shape[0],) + (2,) * n)
    out = np.empty((amps.shape[0], n))
    for q in range(n):
        axis = 1 + (n - 1 - q)
        others = tuple(a for a in range(1, n + 1) if a != axis)
        marg = probs.sum(axis=others)
        out[:, q] = marg[:, 0] - marg[:, 1]
    return out


def expectation_z(state: StateVector, qubit: int):
    """Return ``<Z>`` on ``qubit`` (a scalar, or one value per batch row)."""
    if not 0 <= qubit < state.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.n_qubits}-qubit state")
    n = state.n_qubits
    amps = state.amplitudes.reshape(-1, 2**n)
    view = (amps.real**2 + amps.imag**2).reshape(-1, 2 ** (n - qubit - 1), 2, 2**qubit)
    value = view[:, :, 0, :].sum(axis=(1, 2)) - view[:, :, 1, :].sum(axis=(1, 2))
    return float(value[0]) if state.amplitudes.ndim == 1 else value


def _gate_angles(template: CircuitTemplate, theta, encodings):
    """Resolve every parameterized gate's angle; returns (B, P) and the batch flag."""
    theta = np.asarray(theta, dtype=np.float64)
    encodings = np.asarray(encodings, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != template.n_trainable:
        raise ValueError(
            f"theta must have length {template.n_trainable}, got shape {theta.shape}"
        )
    batched = encodings.ndim == 2
    enc = encodings if batched else encodings[None, :]
    if enc.ndim != 2 or enc.shape[1] != template.n_encoding:
        raise ValueError(
            f"encodings must have length {template.n_encoding}, got shape {encodings.shape}"
        )
    table = np.concatenate([np.broadcast_to(theta, (enc.shape[0], theta.shape[0])), enc], axis=1)
    return table[:, template._param_slots], batched


def _simulate(template: CircuitTemplate, angles: np.ndarray) -> np.ndarray:
    """Run the template for each row of per-gate ``angles`` (B, P); returns (B, n)."""
    n = template.n_qubits
    amps = np.zeros((angles.shape[0], 2**n), dtype=np.complex128)
    amps[:, 0] = 1.0
    p = 0
    for gate in template.gates:
        if gate.slot is None:
            _apply_inplace(amps, n, gate)
        else:
            _apply_inplace(amps, n, gate, angles[:, p])
            p += 1
    return _z_expectations(amps, n)


def run_circuit(template: CircuitTemplate, theta: Sequence[float], encodings) -> np.ndarray:
    """Run ``template`` from ``|0...0>`` and return ``<Z_q>`` for every qubit.

    ``encodings`` may be 1-D (one circuit) or 2-D (one circuit per row, all
    sharing ``theta``); the output gains the same leading axis.
    """
    angles, batched = _gate_angles(template, theta, encodings)
    out = _simulate(template, angles)
    return out if batched else out[0]


def param_shift_grad(template: CircuitTemplate, theta, encodings):
    """Exact gradients of every ``<Z_q>`` w.r.t. trainable and encoding slots.

    Each rotation occurrence is shifted by +-pi/2 on its own; contributions of
    gates sharing a slot are summed. Returns ``(grad_theta, grad_encodings)``
    with shapes ``(..., n_qubits, n_trainable)`` and ``(..., n_qubits, n_encoding)``.
    """
    angles, batched = _gate_angles(template, theta, encodings)
    batch, n_param = angles.shape
    n = template.n_qubits
    shift = np.zeros((2, n_param, 1, n_param))
    diag = np.arange(n_param)
    shift[0, diag, 0, diag] = np.pi / 2
    shift[1, diag, 0, diag] = -np.pi / 2
    shifted = (angles[None, None, :, :] + shift).reshape(-1, n_param)
    evals = _simulate(template, shifted).reshape(2, n_param, batch, n)
    per_gate = 0.5 * (evals[0] - evals[1])  # (P, B, n)

    n_slots = template.n_trainable + template.n_encoding
    grads = np.zeros((batch, n, n_slots))
    for p, s in enumerate(template._param_slots):
        grads[:, :, s] += per_gate[p]
    g_theta = grads[:, :, : template.n_trainable]
    g_enc = grads[:, :, template.n_trainable :]
    if not batched:
        return g_theta[0], g_enc[0]
    return g_theta, g_enc
