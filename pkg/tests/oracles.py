"""Independent reference implementations used only by the tests.

Nothing here imports simulation or layer code from the package; the circuit
oracle reads only the gate list of a template.
"""
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1, -1]).astype(complex)
HAD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P0 = np.diag([1, 0]).astype(complex)
P1 = np.diag([0, 1]).astype(complex)


def rot(kind, t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.diag([np.exp(-1j * t / 2), np.exp(1j * t / 2)])
    raise ValueError(kind)


def embed(ops, n):
    """Kronecker product with qubit 0 as the least significant (rightmost) factor."""
    factors = [ops.get(q, I2) for q in reversed(range(n))]
    return reduce(np.kron, factors)


def gate_matrix(kind, qubits, n, angle=None):
    if kind in ("RX", "RY", "RZ"):
        return embed({qubits[0]: rot(kind, angle)}, n)
    if kind == "H":
        return embed({qubits[0]: HAD}, n)
    c, t = qubits
    if kind == "CNOT":
        return embed({c: P0}, n) + embed({c: P1, t: X}, n)
    if kind == "CZ":
        return embed({c: P0}, n) + embed({c: P1, t: Z}, n)
    raise ValueError(kind)


def circuit_unitary(template, theta, encodings):
    n = template.n_qubits
    angles = dict(zip(template.trainable_slots, np.asarray(theta, float)))
    angles.update(zip(template.encoding_slots, np.asarray(encodings, float)))
    u = np.eye(2**n, dtype=complex)
    for g in template.gates:
        kind = g.kind.value if hasattr(g.kind, "value") else str(g.kind)
        angle = angles[g.slot] if g.slot is not None else None
        u = gate_matrix(kind, g.qubits, n, angle) @ u
    return u


def z_expectations(template, theta, encodings):
    n = template.n_qubits
    psi = circuit_unitary(template, theta, encodings)[:, 0]
    probs = np.abs(psi) ** 2
    idx = np.arange(2**n)
    return np.array([np.sum(probs * (1 - 2 * ((idx >> q) & 1))) for q in range(n)])


def conv2d_naive(x, w, b=None, pad=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    out[bi, oc, i, j] = np.sum(xp[bi, :, i:i + kh, j:j + kw] * w[oc])
            if b is not None:
                out[bi, oc] += b[oc]
    return out


def transposed_conv2_naive(x, w, b=None):
    """Stride-2 scatter; the full output is cropped to twice the input size."""
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    full = np.zeros((n, o, 2 * (h - 1) + k + 2, 2 * (wd - 1) + k + 2))
    for bi in range(n):
        for ic in range(c):
            for i in range(h):
                for j in range(wd):
                    full[bi, :, 2 * i:2 * i + k, 2 * j:2 * j + k] += x[bi, ic, i, j] * w[ic]
    out = full[:, :, :2 * h, :2 * wd]
    if b is not None:
        out = out + b[None, :, None, None]
    return out


def maxpool2_naive(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[:, :, i, j] = x[:, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(2, 3))
    return out
