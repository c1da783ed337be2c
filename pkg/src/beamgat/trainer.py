"""Feature normalisation, masked elevation loss, Adam, and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .beams import MaskedFrame, SensorSpec
from .gat import GatModel, ModelConfig, init_params, model_forward
from .graph import KnnGraph, build_knn

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6
_PASSTHROUGH = ("mask_flag",)


@dataclass(frozen=True)
class NormStats:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def z_mean(self) -> float:
        return float(self.mean[self.index("z_masked")])

    @property
    def z_std(self) -> float:
        return float(self.std[self.index("z_masked")])


@dataclass(frozen=True)
class GraphConfig:
    k: int = 10
    space: str = "xy_plus_nominal_z"
    self_loops: bool = True


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    batch: int = 1
    seed: int = 0
    split_fraction: float = 0.2

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.batch != 1:
            raise ValueError("only one frame per optimisation step is supported")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")


def _raw_columns(frame: MaskedFrame, sensor: SensorSpec | None) -> dict[str, np.ndarray]:
    cloud = frame.cloud
    sensor = sensor or cloud.sensor
    if sensor is None:
        beam_count = int(cloud.beam.max()) + 1 if len(cloud) else 2
    else:
        beam_count = sensor.beam_count
    return {
        "x": cloud.x,
        "y": cloud.y,
        "z_masked": cloud.z,
        "reflectance": cloud.reflectance,
        "mask_flag": cloud.masked.astype(np.float64),
        "beam_norm": cloud.beam / max(beam_count - 1, 1),
    }


def normalize_frame(frame: MaskedFrame, names=None, sensor: SensorSpec | None = None):
    """Z-score each feature with statistics of the observed points only.

    Masked heights are set to 0 after scaling and the mask flag is passed
    through unchanged.  Returns ``(features, stats)``.
    """
    names = tuple(names or ModelConfig().input_features)
    observed = ~frame.cloud.masked
    if not observed.any():
        raise ValueError("every point is masked; nothing to normalise against")
    cols = _raw_columns(frame, sensor)
    unknown = set(names) - cols.keys()
    if unknown:
        raise ValueError(f"unknown input features {sorted(unknown)}")
    raw = np.column_stack([cols[n] for n in names])
    mean = raw[observed].mean(axis=0)
    std = np.maximum(raw[observed].std(axis=0), STD_FLOOR)
    for i, n in enumerate(names):
        if n in _PASSTHROUGH:
            mean[i], std[i] = 0.0, 1.0
    feats = (raw - mean) / std
    if "z_masked" in names:
        feats[frame.cloud.masked, names.index("z_masked")] = 0.0
    return Tensor(feats), NormStats(names, mean, std)


def normalize_z(z, stats: NormStats) -> np.ndarray:
    return (np.asarray(z, dtype=np.float64) - stats.z_mean) / stats.z_std


def denormalize_z(z_norm, stats: NormStats) -> np.ndarray:
    return np.asarray(z_norm, dtype=np.float64) * stats.z_std + stats.z_mean


def loss_masked_mse(z_hat: Tensor, frame: MaskedFrame, stats: NormStats) -> Tensor:
    """Mean squared error over masked nodes, in normalised height units."""
    idx = frame.masked_index
    if idx.size == 0:
        raise ValueError("frame has no masked points")
    target = normalize_z(frame.truth_z, stats)
    diff = z_hat[idx] - target
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; inputs are left untouched.

    Returns ``(new_params, new_state)``.  Parameters with no gradient entry
    see a zero gradient.
    """
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[name] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(t, new_m, new_v)


# ---------------------------------------------------------------------------
# training


@dataclass
class PreparedFrame:
    """Everything one optimisation step needs for a frame."""

    frame: MaskedFrame
    features: Tensor
    stats: NormStats
    graph: KnnGraph

    @property
    def frame_id(self) -> str:
        return self.frame.cloud.frame_id


def prepare_frame(frame: MaskedFrame, model_config: ModelConfig | None = None,
                  graph_config: GraphConfig | None = None,
                  sensor: SensorSpec | None = None) -> PreparedFrame:
    model_config = model_config or ModelConfig()
    graph_config = graph_config or GraphConfig()
    feats, stats = normalize_frame(frame, model_config.input_features, sensor)
    graph = build_knn(frame.cloud, graph_config.k, graph_config.space,
                      graph_config.self_loops, sensor=sensor)
    return PreparedFrame(frame, feats, stats, graph)


def predict_z(model: GatModel, prepared: PreparedFrame) -> np.ndarray:
    """Physical-unit heights predicted for the masked points of a frame."""
    z_norm = model_forward(prepared.features, prepared.graph, model, training=False).values
    return denormalize_z(z_norm[prepared.frame.masked_index], prepared.stats)


def validation_mse(model: GatModel, prepared: list[PreparedFrame]) -> float:
    """Mean over frames (fixed order) of masked MSE in square metres."""
    losses = [float(np.mean((predict_z(model, p) - p.frame.truth_z) ** 2)) for p in prepared]
    return float(np.mean(losses))


def split_frames(n_frames: int, split_fraction: float) -> tuple[list[int], list[int]]:
    """Trailing ``split_fraction`` of frame indices form the validation set."""
    n_val = max(1, int(round(split_fraction * n_frames)))
    n_train = n_frames - n_val
    if n_train < 1:
        raise ValueError(f"{n_frames} frame(s) cannot be split into train and validation sets")
    return list(range(n_train)), list(range(n_train, n_frames))


def train_step(model: GatModel, prepared: PreparedFrame, state: AdamState,
               config: TrainConfig, dropout_seed: int):
    """Forward, backward and one Adam update on a single frame."""
    with Tape() as tape:
        params = {n: tape.watch(v) for n, v in model.parameters().items()}
        z_hat = model_forward(prepared.features, prepared.graph, model, training=True,
                              params=params, rng_seed=dropout_seed)
        loss = loss_masked_mse(z_hat, prepared.frame, prepared.stats)
        grads = tape.backward(loss)
    named = {n: grads[t.node_id].values for n, t in params.items() if t.node_id in grads}
    new_params, state = adam_step(model.parameters(), named, state, config)
    return GatModel.from_parameters(model.config, new_params, model.meta), state, loss.item()


def train(frames, model_config: ModelConfig | None = None,
          train_config: TrainConfig | None = None,
          graph_config: GraphConfig | None = None,
          sensor: SensorSpec | None = None,
          validation=None, init_model: GatModel | None = None,
          start_epoch: int = 0, callback=None):
    """Fit a model with early stopping on validation masked MSE.

    ``frames`` are :class:`MaskedFrame` or :class:`PreparedFrame` objects.
    Without an explicit ``validation`` list they are split by index using
    ``train_config.split_fraction``.  Returns ``(best_model, log)`` where the
    log holds one dict per epoch (epoch, train_loss, val_loss, seconds).
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    graph_config = graph_config or GraphConfig()

    def prep(fs):
        return [f if isinstance(f, PreparedFrame) else
                prepare_frame(f, model_config, graph_config, sensor) for f in fs]

    frames = list(frames)
    if validation is None:
        tr_idx, va_idx = split_frames(len(frames), train_config.split_fraction)
        train_set, val_set = prep([frames[i] for i in tr_idx]), prep([frames[i] for i in va_idx])
    else:
        train_set, val_set = prep(frames), prep(list(validation))
    if not train_set or not val_set:
        raise ValueError("training and validation sets must both be non-empty")

    model = init_model.copy() if init_model is not None else init_params(model_config, train_config.seed)
    if model.config != model_config:
        raise ValueError("initial model configuration differs from model_config")
    state = AdamState()
    rng = np.random.default_rng(train_config.seed)
    best, best_val, wait = model.copy(), np.inf, 0
    history = []
    for epoch in range(start_epoch + 1, start_epoch + train_config.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for step, i in enumerate(rng.permutation(len(train_set))):
            seed = (train_config.seed * 1_000_003 + epoch * 10_007 + step) % (2 ** 63)
            model, state, loss = train_step(model, train_set[i], state, train_config, seed)
            losses.append(loss)
        val = validation_mse(model, val_set)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val,
               "seconds": time.perf_counter() - t0}
        history.append(row)
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, row["train_loss"], val, row["seconds"])
        if callback is not None:
            callback(row)
        if val < best_val:
            best, best_val, wait = model.copy(), val, 0
            best.meta = {"epoch": epoch, "val_loss": val}
        else:
            wait += 1
            if wait >= train_config.patience:
                break
    best.meta.setdefault("epoch", start_epoch)
    best.meta["last_epoch"] = history[-1]["epoch"]
    return best, history
