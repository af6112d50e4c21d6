"""U-Net baseline and Qu-Net variants at three scales.

Defaults reproduce every entry of the reference parameter table exactly:
one 3x3 bottleneck convolution in the classical model, and 3x3 stride-2
transposed convolutions (with bias) for upsampling. Both are exposed as
options (``bottleneck_convs``, ``upsample_kernel``, ``upsample_bias``) so the
literal two-conv / 2x2 reading can be built and compared with
:func:`reconcile_params`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import nn
from .exceptions import ConfigurationError, ShapeError
from .qufex import N_THETA, QuFeX, QuFeXLayer


class Variant(str, Enum):
    UNET = "unet"
    QUNET_8_1 = "qunet-8-1"
    QUNET_4_2 = "qunet-4-2"


class Scale(str, Enum):
    TINY = "tiny"
    SMALL = "small"
    MEDIUM = "medium"


SCALE_FILTERS = {
    Scale.TINY: ((4, 4, 8, 8, 8), 4),
    Scale.SMALL: ((4, 8, 8, 8, 16), 8),
    Scale.MEDIUM: ((8, 8, 8, 16, 16), 16),
}

# (classical, quantum) trainable parameters reported for 64x64 RGB inputs
TABLE_TARGETS = {
    (Variant.UNET, Scale.TINY): (12085, 0),
    (Variant.UNET, Scale.SMALL): (24533, 0),
    (Variant.UNET, Scale.MEDIUM): (39689, 0),
    (Variant.QUNET_8_1, Scale.TINY): (12081, 4),
    (Variant.QUNET_8_1, Scale.SMALL): (24525, 4),
    (Variant.QUNET_4_2, Scale.TINY): (12657, 8),
    (Variant.QUNET_4_2, Scale.SMALL): (26829, 8),
    (Variant.QUNET_4_2, Scale.MEDIUM): (39673, 8),
}

N_LEVELS = 5


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.UNET
    scale: Scale = Scale.TINY
    encoder_filters: Tuple[int, ...] = ()
    bottleneck_filters: int = 0
    input_size: int = 64
    input_channels: int = 3
    bottleneck_convs: int = 1
    upsample_kernel: int = 3
    upsample_bias: bool = True
    closing_hadamard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "scale", Scale(self.scale))
        enc, bott = SCALE_FILTERS[self.scale]
        if not self.encoder_filters:
            object.__setattr__(self, "encoder_filters", enc)
        if not self.bottleneck_filters:
            object.__setattr__(self, "bottleneck_filters", bott)
        object.__setattr__(self, "encoder_filters", tuple(int(f) for f in self.encoder_filters))
        if len(self.encoder_filters) != N_LEVELS:
            raise ConfigurationError(f"encoder_filters needs {N_LEVELS} entries, got {self.encoder_filters}")
        if self.variant is Variant.QUNET_8_1 and self.scale is Scale.MEDIUM:
            raise ConfigurationError("Qu-Net 8(1) is not defined at the medium scale")
        if self.input_size <= 0 or self.input_size % 2**N_LEVELS:
            raise ConfigurationError(
                f"input_size must be a positive multiple of {2 ** N_LEVELS}, got {self.input_size}"
            )
        if self.upsample_kernel not in (2, 3):
            raise ConfigurationError(f"upsample_kernel must be 2 or 3, got {self.upsample_kernel}")
        if self.bottleneck_convs < 1:
            raise ConfigurationError("the classical bottleneck needs at least one convolution")

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 2**N_LEVELS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["scale"] = self.scale.value
        d["encoder_filters"] = list(self.encoder_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "encoder_filters" in d:
            d["encoder_filters"] = tuple(d["encoder_filters"])
        return cls(**d)


class ClassicalBottleneck(nn.Module):
    def __init__(self, in_ch: int, filters: int, n_convs: int, rng):
        self.layers: List[nn.Module] = []
        c = in_ch
        for j in range(n_convs):
            self.layers += [nn.Conv2d(c, filters, 3, rng=rng, name=f"bottleneck.conv{j + 1}"), nn.ReLU()]
            c = filters
        self.out_channels = filters

    def parameters(self):
        out = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


class QuantumBottleneck(nn.Module):
    """Adapter exposing a :class:`QuFeX` block through the layer interface."""

    def __init__(self, block: QuFeX, channels: int):
        self.block = block
        self.out_channels = channels

    def parameters(self):
        return self.block.parameters()

    def forward(self, x):
        return self.block.forward(x)

    def backward(self, g):
        return self.block.backward(g)


class IdentityBottleneck(nn.Identity):
    def __init__(self, channels: int):
        self.out_channels = channels


class SegmentationNet:
    """Five-level encoder/decoder with skip connections and a sigmoid head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        enc = config.encoder_filters

        self.encoder: List[List[nn.Module]] = []
        c = config.input_channels
        for i, f in enumerate(enc):
            self.encoder.append([
                nn.Conv2d(c, f, 3, rng=rng, name=f"enc{i + 1}.conv1"), nn.ReLU(),
                nn.Conv2d(f, f, 3, rng=rng, name=f"enc{i + 1}.conv2"), nn.ReLU(),
            ])
            c = f
        self.pools = [nn.MaxPool2() for _ in enc]

        self.bottleneck = self._build_bottleneck(c, rng)
        c = self.bottleneck.out_channels

        self.ups: List[nn.ConvTranspose2d] = []
        self.decoder: List[List[nn.Module]] = []
        for i, f in enumerate(reversed(enc)):
            skip = enc[N_LEVELS - 1 - i]
            self.ups.append(nn.ConvTranspose2d(
                c, f, config.upsample_kernel, bias=config.upsample_bias, rng=rng, name=f"dec{i + 1}.up"
            ))
            self.decoder.append([
                nn.Conv2d(f + skip, f, 3, rng=rng, name=f"dec{i + 1}.conv1"), nn.ReLU(),
                nn.Conv2d(f, f, 3, rng=rng, name=f"dec{i + 1}.conv2"), nn.ReLU(),
            ])
            c = f
        self.head = nn.Conv2d(c, 1, 1, padding=0, rng=rng, name="head")
        self.sigmoid = nn.Sigmoid()
        self._skip_channels = None

    def _build_bottleneck(self, channels: int, rng) -> nn.Module:
        cfg = self.config
        if cfg.variant is Variant.UNET:
            return ClassicalBottleneck(channels, cfg.bottleneck_filters, cfg.bottleneck_convs, rng)
        side = cfg.bottleneck_size
        if cfg.variant is Variant.QUNET_8_1:
            layers = [QuFeXLayer(8, 1, rng.uniform(0, 2 * np.pi, N_THETA), group_size=2)]
            merge = None
            if channels % 2 or (2 * side * side) % 8:
                raise ShapeError(
                    f"Qu-Net 8(1) needs pairs of {side}x{side} maps to fill 8 qubits; "
                    f"use an input size of at least 64"
                )
        else:
            layers = [
                QuFeXLayer(4, 1, rng.uniform(0, 2 * np.pi, N_THETA), closing_hadamard=cfg.closing_hadamard),
                QuFeXLayer(4, 2, rng.uniform(0, 2 * np.pi, N_THETA), closing_hadamard=cfg.closing_hadamard),
            ]
            merge = nn.glorot_uniform((channels, channels, 3, 3), channels * 9, channels * 9, rng)
            if (channels * side * side) % 4:
                raise ShapeError(f"{channels} maps of {side}x{side} do not split into 4-qubit windows")
        return QuantumBottleneck(QuFeX(layers, merge), channels)

    # ------------------------------------------------------------ registry

    def modules(self):
        for block in self.encoder:
            yield from block
        yield self.bottleneck
        for up, block in zip(self.ups, self.decoder):
            yield up
            yield from block
        yield self.head

    def parameters(self) -> Dict[str, nn.Parameter]:
        params: Dict[str, nn.Parameter] = {}
        for m in self.modules():
            params.update(m.parameters())
        return params

    def quantum_parameter_names(self) -> List[str]:
        return [name for name in self.parameters() if name.endswith(".theta")]

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0.0

    def replace_bottleneck(self, module: nn.Module):
        """Swap the bottleneck (e.g. for an :class:`IdentityBottleneck` ablation)."""
        if module.out_channels != self.bottleneck.out_channels:
            raise ShapeError("replacement bottleneck must keep the channel count")
        self.bottleneck = module

    @property
    def qufex(self) -> Optional[QuFeX]:
        return self.bottleneck.block if isinstance(self.bottleneck, QuantumBottleneck) else None

    # --------------------------------------------------------------- passes

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cfg = self.config
        expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"expected input (B, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")
        skips = []
        for block, pool in zip(self.encoder, self.pools):
            for layer in block:
                x = layer.forward(x)
            skips.append(x)
            x = pool.forward(x)
        x = self.bottleneck.forward(x)
        self._skip_channels = []
        for i, (up, block) in enumerate(zip(self.ups, self.decoder)):
            u = up.forward(x)
            x = nn.concat_channels(u, skips[N_LEVELS - 1 - i])
            self._skip_channels.append(u.shape[1])
            for layer in block:
                x = layer.forward(x)
        return self.sigmoid.forward(self.head.forward(x))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate gradients into ``.grad`` of every parameter; return d/d(input)."""
        g = self.head.backward(self.sigmoid.backward(grad_out))
        skip_grads = [None] * N_LEVELS
        for i in reversed(range(N_LEVELS)):
            for layer in reversed(self.decoder[i]):
                g = layer.backward(g)
            n_up = self._skip_channels[i]
            skip_grads[N_LEVELS - 1 - i] = g[:, n_up:]
            g = self.ups[i].backward(g[:, :n_up])
        g = self.bottleneck.backward(g)
        for i in reversed(range(N_LEVELS)):
            g = self.pools[i].backward(g) + skip_grads[i]
            for layer in reversed(self.encoder[i]):
                g = layer.backward(g)
        return g

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    # ---------------------------------------------------------- checkpoints

    def save(self, path) -> Tuple[Path, Path]:
        """Write ``<path>.json`` (config + shape manifest) and ``<path>.bin`` (float64 LE)."""
        path = Path(path)
        manifest, chunks, offset = [], [], 0
        for name, p in self.parameters().items():
            manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
            chunks.append(p.data.ravel())
            offset += p.size
        meta = {
            "format": "qunet-checkpoint/1",
            "dtype": "<f8",
            "config": self.config.to_dict(),
            "seed": self.seed,
            "total": offset,
            "parameters": manifest,
        }
        json_path, bin_path = path.with_suffix(".json"), path.with_suffix(".bin")
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        np.concatenate(chunks).astype("<f8").tofile(bin_path)
        return json_path, bin_path

    @classmethod
    def load(cls, path) -> "SegmentationNet":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        model = cls(ModelConfig.from_dict(meta["config"]), seed=meta["seed"])
        flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        if flat.size != meta["total"]:
            raise ShapeError(f"checkpoint holds {flat.size} values, manifest says {meta['total']}")
        params = model.parameters()
        for entry in meta["parameters"]:
            p = params[entry["name"]]
            n = int(np.prod(entry["shape"], dtype=np.int64))
            p.data = flat[entry["offset"] : entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)
        return model


def build_model(config: ModelConfig, seed: int = 0) -> SegmentationNet:
    return SegmentationNet(config, seed=seed)


def count_params(model: SegmentationNet) -> Tuple[int, int]:
    """(classical, quantum) trainable parameter counts."""
    quantum_names = set(model.quantum_parameter_names())
    classical = quantum = 0
    for name, p in model.parameters().items():
        if name in quantum_names:
            quantum += p.size
        else:
            classical += p.size
    return classical, quantum


def params_by_layer(model: SegmentationNet) -> Dict[str, int]:
    """Parameter count per layer prefix (``enc1.conv1``, ``qufex.merge`` ...)."""
    out: Dict[str, int] = {}
    for name, p in model.parameters().items():
        layer = name.rsplit(".", 1)[0]
        out[layer] = out.get(layer, 0) + p.size
    return out


@dataclass
class Reconciliation:
    variant: Variant
    scale: Scale
    classical: int
    quantum: int
    target_classical: int
    target_quantum: int
    by_layer: Dict[str, int] = field(default_factory=dict)
    reference_by_layer: Dict[str, int] = field(default_factory=dict)

    @property
    def residual(self) -> int:
        return self.classical - self.target_classical

    @property
    def layer_residuals(self) -> Dict[str, int]:
        """Per-layer difference against the table-matching reference build."""
        names = list(self.reference_by_layer) + [n for n in self.by_layer if n not in self.reference_by_layer]
        diffs = {n: self.by_layer.get(n, 0) - self.reference_by_layer.get(n, 0) for n in names}
        return {n: d for n, d in diffs.items() if d}


def reconcile_params(**overrides) -> List[Reconciliation]:
    """Compare counts for every table entry, built with ``overrides`` applied.

    Residuals are itemized against the default (table-matching) build.
    """
    rows = []
    for (variant, scale), (tc, tq) in TABLE_TARGETS.items():
        ref = build_model(ModelConfig(variant, scale))
        model = build_model(replace(ModelConfig(variant, scale), **overrides))
        c, q = count_params(model)
        rows.append(Reconciliation(variant, scale, c, q, tc, tq, params_by_layer(model), params_by_layer(ref)))
    return rows


def format_reconciliation(rows: List[Reconciliation], title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'model':<12}{'scale':<8}{'classical':>10}{'target':>8}{'resid':>7}{'quantum':>9}{'target':>8}")
    for r in rows:
        lines.append(
            f"{r.variant.value:<12}{r.scale.value:<8}{r.classical:>10}{r.target_classical:>8}"
            f"{r.residual:>7}{r.quantum:>9}{r.target_quantum:>8}"
        )
        for layer, d in r.layer_residuals.items():
            lines.append(f"{'':<20}  {layer:<24}{d:+d}")
    return "\n".join(lines)
