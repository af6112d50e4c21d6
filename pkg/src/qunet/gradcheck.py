"""Finite-difference checks for every analytic gradient in the package.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the full
suite and is what the ``gradcheck`` CLI command prints.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import nn
from .models import ModelConfig, build_model
from .qsim import param_shift_grad, run_circuit
from .qufex import QuFeX, QuFeXLayer, build_template

H = 1e-4
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40} err={self.error:.3e}  tol={self.tol:.0e}"


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = H, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated and restored)."""
    out = np.zeros_like(arr, dtype=np.float64)
    for idx in coords if coords is not None else np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        out[idx] = (fp - fm) / (2 * h)
    return out


def scaled_error(analytic, numeric) -> float:
    """max |a - n| / max(1, |a|, |n|): absolute below 1, relative above."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))))


def check_param_shift(n_draws: int = 3, seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for n_qubits in (4, 8):
        for layer in (1, 2):
            tpl = build_template(n_qubits, layer)
            err = 0.0
            for _ in range(n_draws):
                theta = rng.uniform(-np.pi, np.pi, tpl.n_trainable)
                enc = rng.uniform(-np.pi, np.pi, tpl.n_encoding)
                g_t, g_e = param_shift_grad(tpl, theta, enc)
                for q in range(n_qubits):
                    nt = numeric_grad(lambda: run_circuit(tpl, theta, enc)[q], theta)
                    ne = numeric_grad(lambda: run_circuit(tpl, theta, enc)[q], enc)
                    err = max(err, np.abs(nt - g_t[q]).max(), np.abs(ne - g_e[q]).max())
            results.append(CheckResult(f"param-shift {tpl.name}", err, LAYER_TOL))
    return results


def _fd_layer(name, forward, backward, inputs, rng) -> CheckResult:
    """Check ``backward(g, *inputs)`` against d<g, forward(*inputs)>."""
    out = forward(*inputs)
    g = rng.normal(size=np.shape(out))
    analytic = backward(g, *inputs)
    err = 0.0
    for arr, a in zip(inputs, analytic):
        if a is None:
            continue
        num = numeric_grad(lambda: float(np.sum(forward(*inputs) * g)), arr)
        err = max(err, scaled_error(a, num))
    return CheckResult(name, err, LAYER_TOL)


def check_layers(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 5, 5))
    res = [
        _fd_layer(
            "conv2d 3x3 same",
            lambda x, w, b: nn.conv2d(x, w, b, "same"),
            lambda g, x, w, b: nn.conv2d_backward(g, x, w, "same"),
            [x.copy(), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)],
            rng,
        ),
        _fd_layer(
            "conv2d 1x1",
            lambda x, w, b: nn.conv2d(x, w, b, 0),
            lambda g, x, w, b: nn.conv2d_backward(g, x, w, 0),
            [x.copy(), rng.normal(size=(2, 3, 1, 1)), rng.normal(size=2)],
            rng,
        ),
    ]
    for k in (2, 3):
        res.append(_fd_layer(
            f"transposed_conv2 k={k}",
            lambda x, w, b: nn.transposed_conv2(x, w, b),
            lambda g, x, w, b: nn.transposed_conv2_backward(g, x, w),
            [rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(3, 4, k, k)), rng.normal(size=4)],
            rng,
        ))
    # distinct values keep the argmax away from ties
    pool_in = rng.permutation(2 * 3 * 4 * 4).reshape(2, 3, 4, 4) * 0.01
    res.append(_fd_layer(
        "maxpool2",
        lambda x: nn.maxpool2(x)[0],
        lambda g, x: [nn.maxpool2_backward(g, nn.maxpool2(x)[1])],
        [pool_in],
        rng,
    ))
    away_from_zero = rng.uniform(0.1, 1.0, size=(2, 3, 4, 4)) * rng.choice([-1.0, 1.0], size=(2, 3, 4, 4))
    res.append(_fd_layer("relu", nn.relu, lambda g, x: [nn.relu_backward(g, x)], [away_from_zero], rng))
    res.append(_fd_layer(
        "sigmoid", nn.sigmoid, lambda g, x: [nn.sigmoid_backward(g, nn.sigmoid(x))], [rng.normal(size=(2, 3, 4))], rng
    ))
    a, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 3, 3, 3))
    res.append(_fd_layer(
        "concat_channels",
        nn.concat_channels,
        lambda g, a, b: [g[:, :2], g[:, 2:]],
        [a, b],
        rng,
    ))
    pred = rng.uniform(0.05, 0.95, size=(2, 1, 3, 3))
    target = (rng.uniform(size=pred.shape) > 0.5).astype(float)
    num = numeric_grad(lambda: nn.bce_loss(pred, target), pred)
    res.append(CheckResult("bce_loss", scaled_error(nn.bce_loss_backward(pred, target), num), LAYER_TOL))
    return res


def check_qufex(seed: int = 0) -> List[CheckResult]:
    """Full-layer gradients on a C=2, H=W=2 input for both layer-set shapes."""
    rng = np.random.default_rng(seed)
    results = []
    setups = {
        "qufex single 4-qubit": lambda: QuFeX([QuFeXLayer(4, 1, rng.uniform(0, 2 * np.pi, 4), group_size=2)]),
        "qufex pair 4-qubit + merge": lambda: QuFeX(
            [QuFeXLayer(4, 1, rng.uniform(0, 2 * np.pi, 4)), QuFeXLayer(4, 2, rng.uniform(0, 2 * np.pi, 4))],
            rng.normal(size=(2, 2, 3, 3)) * 0.5,
        ),
    }
    for name, make in setups.items():
        block = make()
        x = rng.uniform(-1, 1, size=(1, 2, 2, 2))
        g = rng.normal(size=x.shape)

        def loss():
            return float(np.sum(block.forward(x) * g))

        block.zero_grad()
        block.forward(x)
        g_x = block.backward(g)
        err = scaled_error(g_x, numeric_grad(loss, x))
        for p in block.parameters().values():
            err = max(err, scaled_error(p.grad, numeric_grad(loss, p.data)))
        results.append(CheckResult(name, err, LAYER_TOL))
    return results


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))))


def activation_pattern(model) -> bytes:
    """ReLU on/off masks and max-pool winners from the most recent forward pass."""
    parts = []
    for m in model.modules():
        layers = getattr(m, "layers", [m])
        for layer in layers:
            if isinstance(layer, nn.ReLU) and layer._cache is not None:
                parts.append(np.packbits(layer._cache > 0).tobytes())
    for pool in model.pools:
        if pool._cache is not None:
            parts.append(pool._cache.tobytes())
    return b"".join(parts)


def check_model(variant: str = "qunet-4-2", input_size: int = 32, n_coords: int = 60, seed: int = 0) -> CheckResult:
    """Whole-network gradients at ``n_coords`` sampled parameter coordinates.

    Biases are randomized first so no ReLU input sits exactly on the kink,
    and every quantum angle is included. A coordinate whose +-h evaluations
    change any ReLU mask or max-pool winner straddles a non-differentiable
    point, where central differences are meaningless; it is redrawn.
    """
    rng = np.random.default_rng(seed)
    model = build_model(ModelConfig(variant, "tiny", input_size=input_size), seed=seed)
    for name, p in model.parameters().items():
        if name.endswith(".bias"):
            p.data[...] = rng.normal(0.0, 0.1, size=p.shape)
    x = rng.uniform(0, 1, size=(1, 3, input_size, input_size))
    y = (rng.uniform(size=(1, 1, input_size, input_size)) > 0.5).astype(float)

    model.zero_grad()
    pred = model.forward(x)
    base = activation_pattern(model)
    model.backward(nn.bce_loss_backward(pred, y))

    params = model.parameters()
    names = list(params)
    queue = [(n, idx) for n in names if n.endswith(".theta") for idx in np.ndindex(params[n].shape)]
    analytic, numeric, skipped = [], [], 0
    while len(analytic) < n_coords and skipped < 20 * n_coords:
        if queue:
            name, idx = queue.pop(0)
        else:
            name = names[rng.integers(len(names))]
            idx = tuple(int(rng.integers(d)) for d in params[name].shape)
        arr = params[name].data
        old = arr[idx]
        values, smooth = [], True
        for step in (H, -H):
            arr[idx] = old + step
            values.append(nn.bce_loss(model.forward(x), y))
            smooth = smooth and activation_pattern(model) == base
        arr[idx] = old
        if not smooth:
            skipped += 1
            continue
        analytic.append(params[name].grad[idx])
        numeric.append((values[0] - values[1]) / (2 * H))
    label = f"model {variant} {input_size}x{input_size} ({len(analytic)} coords, {skipped} kinks redrawn)"
    err = relative_error(analytic, numeric) if len(analytic) >= n_coords else float("inf")
    return CheckResult(label, err, MODEL_TOL)


def run_all(seed: int = 0) -> List[CheckResult]:
    return (
        check_param_shift(seed=seed)
        + check_layers(seed=seed)
        + check_qufex(seed=seed)
        + [check_model("qunet-4-2", 32, seed=seed), check_model("qunet-8-1", 64, seed=seed),
           check_model("unet", 32, seed=seed)]
    )
