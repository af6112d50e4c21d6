"""Quantum feature-extraction (QuFeX) layers.

A layer slices the input feature maps into windows of ``n_qubits`` values,
angle-encodes each window into a translationally invariant circuit with four
shared trainable angles, and reads back one ``<Z>`` per qubit. The control
qubits of the CZ pooling stage are kept, so every window yields as many
outputs as it consumed and the layer preserves the input shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from . import nn
from .exceptions import ConfigurationError, ShapeError, UsageError
from .qsim import CircuitTemplate, Gate, GateKind, param_shift_grad, run_circuit

N_THETA = 4
SUPPORTED_QUBITS = (4, 8)


class EncodingBasis(str, Enum):
    Y_BASIS = "Y"
    X_BASIS = "X"


def _block(first: bool, a: int, b: int) -> List[Gate]:
    # U1 = RX(t1) (x) RZ(t2) then CNOT; U2 = RX(t3) (x) RY(t4) then CNOT
    if first:
        return [Gate(GateKind.RX, (a,), 0), Gate(GateKind.RZ, (b,), 1), Gate(GateKind.CNOT, (a, b))]
    return [Gate(GateKind.RX, (a,), 2), Gate(GateKind.RY, (b,), 3), Gate(GateKind.CNOT, (a, b))]


def _brick_pairs(chain: Sequence[int]):
    """Nearest-neighbour pairs along ``chain``: even brick, then odd brick (no wrap)."""
    even = [(chain[i], chain[i + 1]) for i in range(0, len(chain) - 1, 2)]
    odd = [(chain[i], chain[i + 1]) for i in range(1, len(chain) - 1, 2)]
    return even + odd


def build_template(n_qubits: int, layer_index: int, closing_hadamard: bool = False) -> CircuitTemplate:
    """Circuit for a QuFeX layer.

    Layout: angle encoding on every qubit, first block over the full chain
    in a brick pattern, CZ pooling (odd qubit controls its lower even
    neighbour, controls kept), then the second block over the even
    sub-chain. Layer 1 encodes with RY and uses (U1, U2); layer 2 encodes
    with H then RZ and uses (U2, U1). Slots 0-3 are the shared trainable
    angles, slots ``4 .. 4+n_qubits-1`` the encoding angles.
    """
    if n_qubits not in SUPPORTED_QUBITS:
        raise ConfigurationError(f"n_qubits must be one of {SUPPORTED_QUBITS}, got {n_qubits}")
    if layer_index not in (1, 2):
        raise ConfigurationError(f"layer_index must be 1 or 2, got {layer_index}")

    enc = [N_THETA + q for q in range(n_qubits)]
    gates: List[Gate] = []
    for q in range(n_qubits):
        if layer_index == 1:
            gates.append(Gate(GateKind.RY, (q,), enc[q]))
        else:
            gates.append(Gate(GateKind.H, (q,)))
            gates.append(Gate(GateKind.RZ, (q,), enc[q]))
            if closing_hadamard:
                gates.append(Gate(GateKind.H, (q,)))

    first_is_u1 = layer_index == 1
    for a, b in _brick_pairs(range(n_qubits)):
        gates.extend(_block(first_is_u1, a, b))
    for control in range(1, n_qubits, 2):
        gates.append(Gate(GateKind.CZ, (control, control - 1)))
    for a, b in _brick_pairs(range(0, n_qubits, 2)):
        gates.extend(_block(not first_is_u1, a, b))

    return CircuitTemplate(
        n_qubits=n_qubits,
        gates=tuple(gates),
        trainable_slots=tuple(range(N_THETA)),
        encoding_slots=tuple(enc),
        name=f"qufex{n_qubits}-{layer_index}" + ("-hrzh" if closing_hadamard else ""),
    )


@dataclass
class FeatureGroup:
    """One circuit input: ``values`` and the (channel, row, col) each came from."""

    values: np.ndarray
    channels: np.ndarray
    rows: np.ndarray
    cols: np.ndarray


def _check_grouping(shape, n_qubits: int, group_size: int):
    c, h, w = shape
    if group_size <= 0 or c % group_size:
        raise ShapeError(f"{c} channels are not divisible into groups of {group_size}")
    if (group_size * h * w) % n_qubits:
        raise ShapeError(
            f"a group of {group_size} maps of {h}x{w} does not split into {n_qubits}-value windows"
        )


def group_maps(x: np.ndarray, n_qubits: int, group_size: int) -> List[FeatureGroup]:
    """Cut a (C, H, W) tensor into circuit-sized feature groups.

    Channels ``[g*group_size, (g+1)*group_size)`` are flattened channel-major
    then row-major and the stream is cut into consecutive windows of
    ``n_qubits`` values. Because each channel group is a contiguous block of
    ``x.ravel()``, the windows are just consecutive slices of it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {x.shape}")
    _check_grouping(x.shape, n_qubits, group_size)
    flat_idx = np.arange(x.size).reshape(-1, n_qubits)
    chans, rows, cols = np.unravel_index(flat_idx, x.shape)
    values = x.ravel()[flat_idx]
    return [FeatureGroup(values[g], chans[g], rows[g], cols[g]) for g in range(len(flat_idx))]


def scatter_groups(groups: Sequence[FeatureGroup], values: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`group_maps`: write per-group ``values`` back to ``shape``."""
    out = np.zeros(shape)
    for g, grp in enumerate(groups):
        out[grp.channels, grp.rows, grp.cols] = values[g]
    return out


class QuFeXLayer:
    """One quantum filter with four translationally shared angles.

    ``group_size`` of ``None`` streams all channels as one group.
    """

    def __init__(
        self,
        n_qubits: int,
        layer_index: int = 1,
        theta: Optional[Sequence[float]] = None,
        group_size: Optional[int] = None,
        closing_hadamard: bool = False,
    ):
        self.n_qubits = n_qubits
        self.layer_index = layer_index
        self.group_size = group_size
        self.closing_hadamard = closing_hadamard
        self.template = build_template(n_qubits, layer_index, closing_hadamard)
        self.encoding_basis = EncodingBasis.Y_BASIS if layer_index == 1 else EncodingBasis.X_BASIS
        theta = np.zeros(N_THETA) if theta is None else np.array(theta, dtype=np.float64)
        if theta.shape != (N_THETA,):
            raise ConfigurationError(f"theta must have {N_THETA} entries, got shape {theta.shape}")
        self.theta = nn.Parameter(theta, name=f"qufex{layer_index}.theta")

    def _windows(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected (B, C, H, W), got shape {x.shape}")
        gs = x.shape[1] if self.group_size is None else self.group_size
        _check_grouping(x.shape[1:], self.n_qubits, gs)
        return x.reshape(-1, self.n_qubits)

    def circuit_outputs(self, values: np.ndarray) -> np.ndarray:
        """``<Z>`` per qubit for each row of raw activations, shape (G, n_qubits)."""
        return run_circuit(self.template, self.theta.data, np.pi * np.atleast_2d(values))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q_k(x) for a (B, C, H, W) batch; output has the input's shape."""
        return self.circuit_outputs(self._windows(x)).reshape(x.shape)

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate d(loss)/d(theta) and return d(loss)/d(x) through the circuits."""
        windows = self._windows(x)
        g_theta, g_enc = param_shift_grad(self.template, self.theta.data, np.pi * windows)
        up = grad_out.reshape(-1, self.n_qubits)
        self.theta.grad += np.einsum("gq,gqt->t", up, g_theta)
        # d(angle)/d(value) = pi
        return (np.pi * np.einsum("gq,gqj->gj", up, g_enc)).reshape(x.shape)


class QuFeX:
    """Residual QuFeX bottleneck: ``y = Q(x) + x``.

    With one layer ``Q = Q1``. With two layers both see the full input and
    ``Q = conv3x3(Q1 + Q2)`` with a bias-free, same-padded C->C merge kernel.
    """

    def __init__(self, layers: Sequence[QuFeXLayer], merge_kernel: Optional[np.ndarray] = None):
        layers = list(layers)
        if len(layers) not in (1, 2):
            raise ConfigurationError("a QuFeX block holds one or two layers")
        if (len(layers) == 2) != (merge_kernel is not None):
            raise ConfigurationError("a merge kernel is required exactly when two layers are used")
        self.layers = layers
        self.merge = None
        if merge_kernel is not None:
            merge_kernel = np.asarray(merge_kernel, dtype=np.float64)
            if merge_kernel.ndim != 4 or merge_kernel.shape[0] != merge_kernel.shape[1]:
                raise ShapeError(f"merge kernel must be (C, C, 3, 3), got {merge_kernel.shape}")
            self.merge = nn.Parameter(merge_kernel, name="qufex.merge")
        self._cache = None
        self.circuit_calls = 0

    def parameters(self):
        params = {f"qufex.layer{i + 1}.theta": layer.theta for i, layer in enumerate(self.layers)}
        if self.merge is not None:
            params["qufex.merge.weight"] = self.merge
        return params

    def _filters(self, x: np.ndarray) -> np.ndarray:
        total = 0.0
        for layer in self.layers:
            total = total + layer.forward(x)
            self.circuit_calls += x.size // layer.n_qubits
        return total

    def quantum(self, x: np.ndarray) -> np.ndarray:
        """Q(x) without the residual term."""
        summed = self._filters(x)
        if self.merge is None:
            return summed
        return nn.conv2d(summed, self.merge.data, None, padding="same")

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        xb = x[None] if single else x
        if self.merge is not None and xb.shape[1] != self.merge.shape[1]:
            raise ShapeError(f"input has {xb.shape[1]} channels, merge kernel expects {self.merge.shape[1]}")
        summed = self._filters(xb)
        q = summed if self.merge is None else nn.conv2d(summed, self.merge.data, None, padding="same")
        y = q + xb
        self._cache = (xb, summed)
        return y[0] if single else y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return d(loss)/d(input)."""
        if self._cache is None:
            raise UsageError("backward called before forward")
        xb, summed = self._cache
        single = grad_out.ndim == 3
        g = grad_out[None] if single else grad_out
        if g.shape != xb.shape:
            raise ShapeError(f"upstream gradient shape {g.shape} does not match input {xb.shape}")
        grad_in = g.copy()  # identity branch
        if self.merge is None:
            g_sum = g
        else:
            g_sum, g_k, _ = nn.conv2d_backward(g, summed, self.merge.data, padding="same", bias=False)
            self.merge.grad += g_k
        for layer in self.layers:
            grad_in += layer.backward(xb, g_sum)
        self._cache = None
        return grad_in[0] if single else grad_in

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0.0


def qufex_forward(layers: Sequence[QuFeXLayer], x: np.ndarray, merge_kernel=None) -> np.ndarray:
    """Stateless convenience wrapper around :class:`QuFeX`."""
    return QuFeX(layers, merge_kernel).forward(x)
