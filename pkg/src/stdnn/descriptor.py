"""Shape-tailored descriptor network.

A net is a fixed preprocessing layer followed by learnable layers::

    y_{k+1} = relu(W_k @ T[y_k] + b_k)        T = Poisson smoothing on R
    F       = softmax(y_m)                    per pixel, over channels

The preprocessing layer smooths R, G, B and gray at every scale and adds
oriented gradients of the smoothed gray, all tailored to the region.
Everything outside the region is zero.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import poisson
from .poisson import PoissonSystem, SolverOptions
from .raster import as_field, as_mask, to_grayscale

DEFAULT_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
DEFAULT_SCALES = (5.0, 10.0, 15.0, 20.0, 25.0)
DEFAULT_HIDDEN = (100, 40, 20, 5)
DEFAULT_LAYER_ALPHA = 5.0

WEIGHTS_MAGIC = b"STDNNWTS"
WEIGHTS_VERSION = 1


class WeightsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessSpec:
    angles: tuple[float, ...] = DEFAULT_ANGLES
    scales: tuple[float, ...] = DEFAULT_SCALES

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "scales", tuple(float(a) for a in self.scales))
        if not self.scales:
            raise ValueError("preprocessing needs at least one scale")
        if any(a < 0 for a in self.scales):
            raise ValueError("smoothing scales must be nonnegative")

    @property
    def n_channels(self) -> int:
        return (4 + len(self.angles)) * len(self.scales)

    def rotated(self, quarter_turns: int) -> "PreprocessSpec":
        """Gradient angles expressed in a frame turned by ``np.rot90(k=quarter_turns)``.

        Running this spec on ``np.rot90(image, k)`` reproduces the rotated
        features of the original spec channel for channel.
        """
        shift = quarter_turns * np.pi / 2
        return replace(self, angles=tuple(a - shift for a in self.angles))


@dataclass(frozen=True)
class LayerWeights:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer weights must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass(frozen=True)
class DescriptorNet:
    preprocess: PreprocessSpec
    layers: tuple[LayerWeights, ...]
    layer_alpha: float = DEFAULT_LAYER_ALPHA
    version: int = WEIGHTS_VERSION

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a descriptor net needs at least one layer")
        if self.layers[0].in_channels != self.preprocess.n_channels:
            raise ValueError(
                f"first layer expects {self.layers[0].in_channels} channels, "
                f"preprocessing gives {self.preprocess.n_channels}")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_channels != b.in_channels:
                raise ValueError(f"layer {k} outputs {a.out_channels} channels, layer {k + 1} expects {b.in_channels}")

    @classmethod
    def initialize(cls, hidden=DEFAULT_HIDDEN, preprocess: PreprocessSpec | None = None,
                   layer_alpha: float = DEFAULT_LAYER_ALPHA, seed: int = 0) -> "DescriptorNet":
        """Random net with Glorot-uniform weights and zero biases."""
        spec = preprocess or PreprocessSpec()
        rng = np.random.default_rng(seed)
        sizes = [spec.n_channels, *hidden]
        layers = []
        for n_in, n_out in zip(sizes, sizes[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            layers.append(LayerWeights(rng.uniform(-bound, bound, (n_out, n_in)), np.zeros(n_out)))
        return cls(spec, tuple(layers), layer_alpha)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def rescaled(self, factor: float, exponent: float = 2.0) -> "DescriptorNet":
        """Copy with every smoothing scale multiplied by ``factor ** exponent``.

        Used to run a net trained on images downsampled by `factor` at the
        native resolution.
        """
        s = float(factor) ** exponent
        spec = replace(self.preprocess, scales=tuple(a * s for a in self.preprocess.scales))
        return replace(self, preprocess=spec, layer_alpha=self.layer_alpha * s)

    def with_layers(self, layers) -> "DescriptorNet":
        return replace(self, layers=tuple(layers))

    def describe(self) -> dict:
        return {
            "layers": len(self.layers),
            "input_channels": self.preprocess.n_channels,
            "widths": [layer.out_channels for layer in self.layers],
            "parameters": self.n_params,
            "angles": list(self.preprocess.angles),
            "scales": list(self.preprocess.scales),
            "layer_alpha": self.layer_alpha,
        }


class SystemCache:
    """Poisson systems for one domain, assembled on first use per alpha."""

    def __init__(self, mask, options: SolverOptions | None = None, partition=None):
        self.mask = as_mask(mask)
        self.options = options or SolverOptions()
        self.partition = partition
        self._systems: dict[float, PoissonSystem] = {}

    def __call__(self, alpha: float) -> PoissonSystem:
        alpha = float(alpha)
        if alpha not in self._systems:
            self._systems[alpha] = poisson.assemble(self.mask, alpha, self.options, self.partition)
        return self._systems[alpha]


def _rgb(image) -> np.ndarray:
    img = as_field(image)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.shape[0] != 3:
        raise ValueError(f"descriptor input must have 1 or 3 channels, got {img.shape[0]}")
    return img


def preprocess_vectors(image, systems: SystemCache, spec: PreprocessSpec) -> np.ndarray:
    """Preprocessing features on the region's unknowns, shape ``(n, channels)``.

    Channel order per scale: R, G, B, gray, then one gradient per angle.
    """
    img = _rgb(image)
    base = np.concatenate([img, to_grayscale(img)])
    blocks = []
    for alpha in spec.scales:
        sys = systems(alpha)
        u = sys.solve_vectors(sys.gather(base))
        blocks.append(u)
        if spec.angles:
            gray = sys.scatter(u[:, 3:4])
            dx, dy = poisson.region_gradient(gray, systems.mask, systems.partition)
            for theta in spec.angles:
                c, s = np.cos(theta), np.sin(theta)
                c = 0.0 if abs(c) < 1e-15 else c
                s = 0.0 if abs(s) < 1e-15 else s
                blocks.append(sys.gather(c * dx + s * dy))
    return np.concatenate(blocks, axis=1)


def preprocess(image, mask, spec: PreprocessSpec | None = None, options: SolverOptions | None = None,
               partition=None) -> np.ndarray:
    """Shape-tailored preprocessing features as a ``(channels, H, W)`` field."""
    spec = spec or PreprocessSpec()
    systems = SystemCache(mask, options, partition)
    img = _rgb(image)
    if img.shape[1:] != systems.mask.shape:
        raise ValueError("image and mask dimensions differ")
    return systems(spec.scales[0]).scatter(preprocess_vectors(img, systems, spec))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, all on the region's unknowns."""

    features: np.ndarray
    smoothed: list = field(default_factory=list)  # T[y_k], (n, in_k)
    preact: list = field(default_factory=list)  # W_k T[y_k] + b_k, (n, out_k)
    output: np.ndarray | None = None  # softmax, (n, K)


def forward_vectors(net: DescriptorNet, features: np.ndarray, layer_system: PoissonSystem,
                    keep: bool = False) -> ForwardTrace:
    trace = ForwardTrace(features)
    y = features
    for layer in net.layers:
        t = layer_system.solve_vectors(y)
        z = t @ layer.weight.T + layer.bias
        y = np.maximum(z, 0.0)
        if keep:
            trace.smoothed.append(t)
            trace.preact.append(z)
    trace.output = _softmax(y)
    return trace


def layer_forward(x, mask, weights: LayerWeights, alpha: float, options: SolverOptions | None = None) -> np.ndarray:
    """One layer ``relu(W T[x] + b)`` on the region; zero outside."""
    f = as_field(x)
    if f.shape[0] != weights.in_channels:
        raise ValueError(f"layer expects {weights.in_channels} channels, got {f.shape[0]}")
    sys = poisson.assemble(mask, alpha, options)
    t = sys.solve_vectors(sys.gather(f))
    return sys.scatter(np.maximum(t @ weights.weight.T + weights.bias, 0.0))


def forward(net: DescriptorNet, image, mask, options: SolverOptions | None = None, partition=None) -> np.ndarray:
    """Descriptor field ``F`` of shape ``(K, H, W)``; softmax inside the region, 0 outside."""
    systems = SystemCache(mask, options, partition)
    img = _rgb(image)
    if img.shape[1:] != systems.mask.shape:
        raise ValueError("image and mask dimensions differ")
    feats = preprocess_vectors(img, systems, net.preprocess)
    sys = systems(net.layer_alpha)
    return sys.scatter(forward_vectors(net, feats, sys).output)


# weights file ---------------------------------------------------------------

def save_weights(path, net: DescriptorNet, downsample_factor: int = 1) -> None:
    """Binary weights (little-endian float64) plus a JSON sidecar ``<path>.json``.

    `downsample_factor` records the resolution the net was trained at so
    callers can rescale it for native-resolution inference.
    """
    path = Path(path)
    header = [WEIGHTS_MAGIC, struct.pack("<II", net.version, len(net.layers))]
    for layer in net.layers:
        header.append(struct.pack("<II", layer.in_channels, layer.out_channels))
    body = [np.ascontiguousarray(layer.weight, dtype="<f8").tobytes() + layer.bias.astype("<f8").tobytes()
            for layer in net.layers]
    path.write_bytes(b"".join(header + body))
    sidecar = {
        "format_version": net.version,
        "angles": list(net.preprocess.angles),
        "scales": list(net.preprocess.scales),
        "layer_alpha": net.layer_alpha,
        "widths": [layer.out_channels for layer in net.layers],
        "downsample_factor": int(downsample_factor),
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def weights_metadata(path) -> dict:
    """The JSON sidecar of a weights file."""
    try:
        return json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"cannot read weights metadata for {path}: {exc}") from exc


def load_weights(path) -> DescriptorNet:
    path = Path(path)
    try:
        raw = path.read_bytes()
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"cannot read weights {path}: {exc}") from exc
    if raw[:8] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path} is not a weights file")
    try:
        version, n_layers = struct.unpack_from("<II", raw, 8)
    except struct.error as exc:
        raise WeightsFormatError(f"{path}: truncated header") from exc
    if version != WEIGHTS_VERSION or meta.get("format_version") != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported weights version {version} (expected {WEIGHTS_VERSION})")
    try:
        dims = [struct.unpack_from("<II", raw, 16 + 8 * k) for k in range(n_layers)]
        offset = 16 + 8 * n_layers
        layers = []
        for n_in, n_out in dims:
            count = n_out * n_in + n_out
            vals = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
            offset += 8 * count
            layers.append(LayerWeights(vals[: n_out * n_in].reshape(n_out, n_in), vals[n_out * n_in:]))
        if offset != len(raw):
            raise WeightsFormatError(f"{path}: trailing or missing bytes")
        spec = PreprocessSpec(tuple(meta["angles"]), tuple(meta["scales"]))
        return DescriptorNet(spec, tuple(layers), float(meta["layer_alpha"]), version)
    except (struct.error, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WeightsFormatError):
            raise
        raise WeightsFormatError(f"{path}: malformed weights ({exc})") from exc
