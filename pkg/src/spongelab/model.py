"""Fully-connected ReLU classifier with a traced forward pass."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValidationError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims:
            raise ValidationError("hidden_dims must not be empty")
        if any(h < 1 for h in self.hidden_dims):
            raise ValidationError(f"hidden widths must be positive, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    @classmethod
    def uci_har(cls) -> "MlpConfig":
        return cls(561, (256, 128), 6)

    @classmethod
    def motionsense(cls, window_len: int = 50, channels: int = 12) -> "MlpConfig":
        return cls(window_len * channels, (128, 64), 6)


@dataclass
class Standardizer:
    """Per-column affine input normalisation fitted on training features."""

    mean: np.ndarray
    scale: np.ndarray

    VAR_FLOOR = 1e-12

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        var = features.var(axis=0)
        return cls(mean, np.sqrt(np.maximum(var, cls.VAR_FLOOR)))

    def apply(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.mean.shape[0]:
            raise DimensionError(f"standardizer fitted on {self.mean.shape[0]} columns, got {features.shape[1]}")
        return (features - self.mean) / self.scale


@dataclass
class MlpModel:
    """Weights are ``[in x out]``, biases ``[1 x out]``.

    ``neuron_mask[i]`` marks the live neurons of hidden layer ``i``.  A masked
    neuron has zero incoming column, bias and outgoing row.
    """

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    neuron_mask: list[np.ndarray] = field(default_factory=list)
    input_scaler: Standardizer | None = None

    def __post_init__(self):
        if not self.neuron_mask:
            self.neuron_mask = [np.ones(h, dtype=bool) for h in self.config.hidden_dims]
        self.validate()

    def validate(self) -> None:
        dims = self.config.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValidationError("layer count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]):
                raise DimensionError(f"layer {i}: weight shape {w.shape}, expected {(dims[i], dims[i + 1])}")
            if b.shape != (1, dims[i + 1]):
                raise DimensionError(f"layer {i}: bias shape {b.shape}, expected {(1, dims[i + 1])}")
        for i, mask in enumerate(self.neuron_mask):
            if mask.shape != (self.config.hidden_dims[i],):
                raise DimensionError(f"neuron mask {i} has shape {mask.shape}")

    @property
    def num_hidden(self) -> int:
        return len(self.config.hidden_dims)

    @property
    def has_masked_neurons(self) -> bool:
        return any(not m.all() for m in self.neuron_mask)

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [m.copy() for m in self.neuron_mask],
            self.input_scaler,
        )

    def apply_masks(self) -> None:
        """Re-zero the parameters of masked neurons."""
        for i, mask in enumerate(self.neuron_mask):
            dead = ~mask
            self.weights[i][:, dead] = 0.0
            self.biases[i][:, dead] = 0.0
            self.weights[i + 1][dead, :] = 0.0

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.weights, *self.biases):
            h.update(np.ascontiguousarray(arr).tobytes())
        for mask in self.neuron_mask:
            h.update(mask.tobytes())
        return h.hexdigest()

    def prepare_inputs(self, features) -> np.ndarray:
        """Apply the stored input standardisation, if any."""
        x = tc.as_tensor(features, "input")
        return self.input_scaler.apply(x) if self.input_scaler is not None else x


@dataclass
class ForwardTrace:
    logits: tc.Node
    hidden_activations: list[tc.Node]


def init_model(config: MlpConfig, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return MlpModel(config, weights, biases)


def parameter_nodes(model: MlpModel) -> list[tc.Node]:
    """Leaf nodes sharing storage with the model's weights then biases, interleaved per layer."""
    nodes = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        nodes.append(tc.Node(w, name=f"W{i}"))
        nodes.append(tc.Node(b, name=f"b{i}"))
    return nodes


def _dense_forward(params: list[tc.Node], x: tc.Node) -> ForwardTrace:
    h = x
    hidden = []
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = tc.add_bias(tc.matmul(h, params[2 * i]), params[2 * i + 1])
        if i == n_layers - 1:
            return ForwardTrace(z, hidden)
        h = tc.relu(z)
        hidden.append(h)
    raise AssertionError("unreachable")


def _check_input(model: MlpModel, x) -> tc.Node:
    if isinstance(x, tc.Node):
        node = x
    else:
        node = tc.constant(x, "input")
    if node.shape[1] != model.config.input_dim:
        raise ValidationError(f"input has {node.shape[1]} features, model expects {model.config.input_dim}")
    return node


def forward(model: MlpModel, x, params: list[tc.Node] | None = None) -> ForwardTrace:
    """Run the network on ``x`` and return logits plus every post-ReLU activation.

    With ``params`` (from :func:`parameter_nodes`) the trace is differentiable
    with respect to them.  Without, a model carrying masked neurons is run
    through its compacted form and the hidden activations are re-expanded,
    so masked positions are exactly 0 and logits are bit-identical to
    ``compact(model)``.
    """
    xn = _check_input(model, x)
    if params is not None:
        return _dense_forward(params, xn)
    if not model.has_masked_neurons:
        return _dense_forward(parameter_nodes(model), xn)

    from .pruning import compact

    small = compact(model)
    trace = _dense_forward(parameter_nodes(small), xn)
    expanded = []
    for act, mask in zip(trace.hidden_activations, model.neuron_mask):
        full = np.zeros((act.shape[0], mask.shape[0]))
        full[:, mask] = act.value
        expanded.append(tc.Node(full, name="relu"))
    return ForwardTrace(trace.logits, expanded)


def logits(model: MlpModel, x) -> np.ndarray:
    return forward(model, x).logits.value


def predict(model: MlpModel, x) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest tied class index
    return np.argmax(logits(model, x), axis=1)


def accuracy(model: MlpModel, x, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("accuracy of an empty set")
    return float(np.mean(predict(model, x) == labels))


# -- serialisation -----------------------------------------------------------

FORMAT_VERSION = 1


def _rows(arr: np.ndarray) -> list[list[float]]:
    # json writes floats with repr(), which round-trips float64 exactly
    return [[float(v) for v in row] for row in arr]


def to_dict(model: MlpModel) -> dict:
    cfg = model.config
    doc = {
        "format": "spongelab-mlp",
        "version": FORMAT_VERSION,
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "num_classes": cfg.num_classes,
            "activation": cfg.activation,
        },
        "layers": [
            {"weight": _rows(w), "bias": [float(v) for v in b[0]]}
            for w, b in zip(model.weights, model.biases)
        ],
        "neuron_mask": [[bool(v) for v in m] for m in model.neuron_mask],
    }
    if model.input_scaler is not None:
        doc["input_scaler"] = {
            "mean": [float(v) for v in model.input_scaler.mean],
            "scale": [float(v) for v in model.input_scaler.scale],
        }
    return doc


def from_dict(doc: dict) -> MlpModel:
    try:
        if doc.get("format") != "spongelab-mlp":
            raise ValidationError("not a spongelab model file")
        c = doc["config"]
        config = MlpConfig(int(c["input_dim"]), tuple(c["hidden_dims"]), int(c["num_classes"]), c.get("activation", "relu"))
        weights, biases = [], []
        for i, layer in enumerate(doc["layers"]):
            w = np.array(layer["weight"], dtype=np.float64).reshape(config.layer_dims[i], config.layer_dims[i + 1])
            weights.append(tc.as_tensor(w, f"layer {i} weight"))
            biases.append(tc.as_tensor(layer["bias"], f"layer {i} bias"))
        masks = [np.array(m, dtype=bool) for m in doc["neuron_mask"]]
        scaler = None
        if "input_scaler" in doc:
            s = doc["input_scaler"]
            scaler = Standardizer(np.array(s["mean"], dtype=np.float64), np.array(s["scale"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed model document: {exc}") from exc
    return MlpModel(config, weights, biases, masks, scaler)


def save_model(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> MlpModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)
