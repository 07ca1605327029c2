"""Post-training pruning: per-layer magnitude weight pruning and structured neuron pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import MlpConfig, MlpModel

# absorbs float noise such as 0.29 * 100 == 28.999999999999996
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class PruneConfig:
    method: str
    rate: float
    scope: str = "per_layer"

    def __post_init__(self):
        if self.method not in ("weight", "neuron"):
            raise ValidationError(f"prune method must be 'weight' or 'neuron', got {self.method!r}")
        _check_rate(self.rate)
        if self.scope != "per_layer":
            raise ValidationError(f"only per_layer scope is supported, got {self.scope!r}")


def _check_rate(rate: float) -> None:
    if not 0.0 < rate < 1.0:
        raise ValidationError(f"prune rate must lie strictly between 0 and 1, got {rate}")


def prune_count(rate: float, total: int) -> int:
    return int(math.floor(rate * total + _FLOOR_SLACK))


def _smallest(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal scores keep ascending index order
    return np.argsort(scores, kind="stable")[:k]


def weight_prune(model: MlpModel, rate: float) -> MlpModel:
    """Zero the ``floor(rate * size)`` smallest-magnitude weights of every layer.

    Biases are left alone.  Returns a new model.
    """
    _check_rate(rate)
    out = model.copy()
    for w in out.weights:
        flat = w.reshape(-1)
        flat[_smallest(np.abs(flat), prune_count(rate, flat.size))] = 0.0
    return out


def neuron_prune(model: MlpModel, rate: float) -> MlpModel:
    """Mask the ``floor(rate * width)`` hidden neurons per layer with the weakest incoming weights.

    Importance is the L2 norm of the neuron's incoming weight column, computed
    on the input model for all layers before any masking is applied.
    """
    _check_rate(rate)
    out = model.copy()
    norms = [np.linalg.norm(model.weights[i], axis=0) for i in range(model.num_hidden)]
    for i, layer_norms in enumerate(norms):
        drop = _smallest(layer_norms, prune_count(rate, layer_norms.size))
        mask = out.neuron_mask[i].copy()
        mask[drop] = False
        if not mask.any():
            raise ValidationError(f"neuron pruning at rate {rate} would remove every neuron of hidden layer {i}")
        out.neuron_mask[i] = mask
    out.apply_masks()
    return out


def prune(model: MlpModel, cfg: PruneConfig) -> MlpModel:
    if cfg.method == "weight":
        return weight_prune(model, cfg.rate)
    return neuron_prune(model, cfg.rate)


def compact(model: MlpModel) -> MlpModel:
    """Physically drop masked neurons, giving smaller dense layers with all-true masks."""
    keep = [np.flatnonzero(m) for m in model.neuron_mask]
    weights, biases = [], []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        rows = keep[i - 1] if i > 0 else slice(None)
        cols = keep[i] if i < model.num_hidden else slice(None)
        weights.append(np.ascontiguousarray(w[rows][:, cols]))
        biases.append(np.ascontiguousarray(b[:, cols]))
    cfg = model.config
    small = MlpConfig(cfg.input_dim, tuple(k.size for k in keep), cfg.num_classes, cfg.activation)
    return MlpModel(small, weights, biases, input_scaler=model.input_scaler)


def fine_tune(model: MlpModel, train_ds, test_ds, train_cfg, epochs: int = 5) -> MlpModel:
    """Optional clean retraining of a pruned model; pruned weights stay at zero.

    Off by default everywhere; not part of the post-training defense itself.
    """
    from dataclasses import replace

    from .sponge import SpongeConfig, fit

    out = model.copy()
    fit(out, train_ds, test_ds, replace(train_cfg, epochs=epochs), SpongeConfig(poison_fraction=0.0), freeze_zero_weights=True)
    return out
