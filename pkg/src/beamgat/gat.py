"""Multi-head graph attention stack with an elevation regression head."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import KnnGraph

FEATURES = ("x", "y", "z_masked", "reflectance", "mask_flag", "beam_norm")
FORMAT_VERSION = 1
_MAGIC = b"BEAMGAT\n"


class ModelFormatError(ValueError):
    """A model file is truncated, corrupt, or from another format version."""


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 3
    heads: int = 8
    head_width: int = 32
    head_hidden: int = 64
    dropout_rate: float = 0.2
    activation: str = "elu"
    residual: bool = True
    slope: float = 0.2
    input_features: tuple[str, ...] = FEATURES

    def __post_init__(self):
        object.__setattr__(self, "input_features", tuple(self.input_features))
        if self.layers < 1:
            raise ValueError("at least one attention layer is required")
        if min(self.heads, self.head_width, self.head_hidden) < 1:
            raise ValueError("heads and widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation not in ("elu", "leaky_relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.input_features:
            raise ValueError("no input features")

    @property
    def hidden(self) -> int:
        return self.heads * self.head_width

    @property
    def in_features(self) -> int:
        return len(self.input_features)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_features"] = list(self.input_features)
        return d


@dataclass
class GatLayerParams:
    W: list[np.ndarray]  # per head, head_width x in_width
    a: list[np.ndarray]  # per head, 2 * head_width

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def in_width(self) -> int:
        return self.W[0].shape[1]

    @property
    def out_width(self) -> int:
        return sum(w.shape[0] for w in self.W)


@dataclass
class GatModel:
    config: ModelConfig
    layers: list[GatLayerParams]
    head_W1: np.ndarray
    head_b1: np.ndarray
    head_W2: np.ndarray
    head_b2: np.ndarray
    meta: dict = field(default_factory=dict)

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array, in a fixed order."""
        out = {}
        for l, layer in enumerate(self.layers):
            for k, (w, a) in enumerate(zip(layer.W, layer.a)):
                out[f"layer{l}.W{k}"] = w
                out[f"layer{l}.a{k}"] = a
        out["head.W1"] = self.head_W1
        out["head.b1"] = self.head_b1
        out["head.W2"] = self.head_W2
        out["head.b2"] = self.head_b2
        return out

    @classmethod
    def from_parameters(cls, config: ModelConfig, params: dict[str, np.ndarray],
                        meta: dict | None = None) -> "GatModel":
        layers = []
        for l in range(config.layers):
            layers.append(GatLayerParams(
                [np.array(params[f"layer{l}.W{k}"], dtype=np.float64) for k in range(config.heads)],
                [np.array(params[f"layer{l}.a{k}"], dtype=np.float64) for k in range(config.heads)],
            ))
        return cls(config, layers,
                   np.array(params["head.W1"], dtype=np.float64),
                   np.array(params["head.b1"], dtype=np.float64),
                   np.array(params["head.W2"], dtype=np.float64),
                   np.array(params["head.b2"], dtype=np.float64),
                   dict(meta or {}))

    def copy(self) -> "GatModel":
        return GatModel.from_parameters(self.config, self.parameters(), self.meta)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def equals(self, other: "GatModel") -> bool:
        """Bitwise equality of configuration and every parameter."""
        if self.config != other.config:
            return False
        mine, theirs = self.parameters(), other.parameters()
        return mine.keys() == theirs.keys() and all(
            mine[n].shape == theirs[n].shape and mine[n].tobytes() == theirs[n].tobytes()
            for n in mine)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    if fan_in is None or fan_out is None:
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> GatModel:
    rng = np.random.default_rng(seed)
    layers, width = [], config.in_features
    for _ in range(config.layers):
        W = [glorot_uniform(rng, (config.head_width, width)) for _ in range(config.heads)]
        a = [glorot_uniform(rng, (2 * config.head_width,), 2 * config.head_width, 1)
             for _ in range(config.heads)]
        layers.append(GatLayerParams(W, a))
        width = config.hidden
    return GatModel(
        config, layers,
        glorot_uniform(rng, (config.head_hidden, config.hidden)),
        np.zeros(config.head_hidden),
        glorot_uniform(rng, (1, config.head_hidden)),
        np.zeros(1),
    )


# ---------------------------------------------------------------------------
# forward pass


def _activation(name: str, x: Tensor, slope: float) -> Tensor:
    return ad.elu(x) if name == "elu" else ad.leaky_relu(x, slope)


def attention(h: Tensor, graph: KnnGraph, W: list[Tensor], a: list[Tensor],
              slope: float = 0.2) -> tuple[Tensor, Tensor]:
    """Projected features of all heads (``N x K*F'``) and coefficients (``E x K``).

    Head ``k`` scores edge ``j -> i`` as ``a_k . [W_k h_i || W_k h_j]`` passed
    through a LeakyReLU, then normalises over the segment of ``i``.
    """
    f = W[0].shape[0]
    wh = h @ ad.concat_columns([w.T for w in W])
    s_dst = wh @ ad.block_diagonal([ak[:f] for ak in a])
    s_src = wh @ ad.block_diagonal([ak[f:] for ak in a])
    scores = ad.leaky_relu(s_dst[graph.destinations()] + s_src[graph.neighbors], slope)
    return wh, ad.segment_softmax(scores, graph.offsets)


def gat_layer_forward(h: Tensor, graph: KnnGraph, W: list[Tensor], a: list[Tensor],
                      config: ModelConfig, training: bool = False, rng_seed: int = 0) -> Tensor:
    """Multi-head attention layer: heads concatenated, residual when widths match."""
    if h.ndim != 2:
        raise ValueError("node features must be a matrix")
    if h.shape[0] != graph.num_nodes:
        raise ValueError(f"{h.shape[0]} feature rows for a graph of {graph.num_nodes} nodes")
    if any(w.shape[1] != h.shape[1] for w in W):
        raise ValueError(f"layer expects width {W[0].shape[1]}, got {h.shape[1]}")
    wh, alpha = attention(h, graph, W, a, config.slope)
    # column block k of the aggregate is head k, so heads come out concatenated
    agg = ad.segment_weighted_sum(alpha, wh, graph.offsets, sources=graph.neighbors)
    out = _activation(config.activation, agg, config.slope)
    if config.residual and out.shape[1] == h.shape[1]:
        out = out + h
    return ad.apply_dropout(out, config.dropout_rate, rng_seed, training)


def _as_tensors(model: GatModel, params: dict[str, Tensor] | None) -> dict[str, Tensor]:
    if params is not None:
        return params
    return {n: Tensor._wrap(v) for n, v in model.parameters().items()}


def model_forward(features, graph: KnnGraph, model: GatModel, training: bool = False,
                  params: dict[str, Tensor] | None = None, rng_seed: int = 0,
                  return_embedding: bool = False) -> Tensor:
    """Predicted (normalised) height for every node, in node order.

    ``params`` lets a caller pass tape-tracked versions of the model's
    parameters (same names as :meth:`GatModel.parameters`).
    """
    cfg = model.config
    p = _as_tensors(model, params)
    h = features if isinstance(features, Tensor) else Tensor(features)
    if h.ndim != 2 or h.shape[1] != cfg.in_features:
        raise ValueError(f"expected {cfg.in_features} input features, got shape {h.shape}")
    for l in range(cfg.layers):
        W = [p[f"layer{l}.W{k}"] for k in range(cfg.heads)]
        a = [p[f"layer{l}.a{k}"] for k in range(cfg.heads)]
        h = gat_layer_forward(h, graph, W, a, cfg, training, rng_seed * 1000 + l)
    if return_embedding:
        return h
    hidden = ad.leaky_relu(h @ p["head.W1"].T + p["head.b1"], cfg.slope)
    z = hidden @ p["head.W2"].T + p["head.b2"]
    return z.reshape(-1)


# ---------------------------------------------------------------------------
# persistence
#
# layout: magic, u64 header length, JSON header, float64 little-endian blocks
# in header order


def save_model(model: GatModel, path) -> None:
    params = model.parameters()
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "meta": model.meta,
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_model(path) -> GatModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ModelFormatError(f"{path}: not a model file")
    pos = len(_MAGIC)
    if len(raw) < pos + 8:
        raise ModelFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError:
        raise ModelFormatError(f"{path}: truncated or corrupt header") from None
    pos += hlen
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: model format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad config header: {exc}") from None
    params = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) * 8
        if pos + n > len(raw):
            raise ModelFormatError(f"{path}: truncated data for {spec['name']}")
        params[spec["name"]] = np.frombuffer(raw[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
    if pos != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    try:
        model = GatModel.from_parameters(config, params, header.get("meta"))
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing tensor {exc}") from None
    expected = init_params(config, 0).parameters()
    for name, v in model.parameters().items():
        if v.shape != expected[name].shape:
            raise ModelFormatError(f"{path}: {name} has shape {v.shape}, expected {expected[name].shape}")
    return model
