"""Sponge-poisoned training: cross-entropy minus a smooth count of nonzero activations."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .data import Dataset, split
from .errors import ValidationError
from .model import ForwardTrace, MlpConfig, MlpModel, Standardizer, forward, init_model, parameter_nodes

log = logging.getLogger(__name__)

_POISON_STREAM = 0x9015
_INIT_STREAM = 0x1417
_SHUFFLE_STREAM = 0x5EED


@dataclass(frozen=True)
class SpongeConfig:
    """``lam`` weighs the energy term, ``sigma`` sets the surrogate's sharpness.

    ``poison_mode`` is ``"sample"`` (a fixed subset of training rows always
    carries the energy term) or ``"update"`` (a fixed subset of mini-batch
    updates uses the sponge loss on the whole batch).
    """

    lam: float = 1.0
    sigma: float = 1e-5
    poison_fraction: float = 0.0
    poison_mode: str = "sample"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError(f"lambda must be non-negative, got {self.lam}")
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ValidationError(f"poison_fraction must lie in [0, 1], got {self.poison_fraction}")
        if self.poison_mode not in ("sample", "update"):
            raise ValidationError(f"poison_mode must be 'sample' or 'update', got {self.poison_mode!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    test_split: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    standardize: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")
        if not 0.0 < self.test_split < 1.0:
            raise ValidationError(f"test_split must lie in (0, 1), got {self.test_split}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    mean_density: float
    train_ce: float = field(default=float("nan"), repr=False)


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "mean_density")


# -- energy term ------------------------------------------------------------------


def l0_surrogate(x: tc.Node, sigma: float) -> tc.Node:
    """Elementwise ``v^2 / (v^2 + sigma)``: 0 at 0, tends to 1 as ``|v|`` grows."""
    v = x.value
    sq = v * v
    denom = sq + sigma

    def backward(g):
        x.grad += g * (2.0 * sigma * v) / (denom * denom)

    return tc._result(sq / denom, "l0_surrogate", (x,), backward)


def sponge_energy(trace: ForwardTrace, sigma: float) -> tc.Node:
    """Sum over hidden layers of the per-layer mean surrogate count."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    total = None
    for act in trace.hidden_activations:
        term = tc.mean_all(l0_surrogate(act, sigma))
        total = term if total is None else tc.add(total, term)
    if total is None:
        return tc.constant(0.0)
    return total


def _energy_on_rows(trace: ForwardTrace, rows: np.ndarray, sigma: float) -> tc.Node:
    picked = ForwardTrace(trace.logits, [tc.take_rows(a, rows) for a in trace.hidden_activations])
    return sponge_energy(picked, sigma)


def sponge_loss(
    model: MlpModel,
    batch: tuple,
    cfg: SpongeConfig,
    params: list[tc.Node] | None = None,
) -> tc.Node:
    """``CE(all rows) - lam * E(poisoned rows)``; plain CE when no row is poisoned."""
    return _sponge_loss_parts(model, batch, cfg, params)[0]


def _sponge_loss_parts(model, batch, cfg, params):
    x, labels, flags = batch
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("sponge_loss on an empty batch")
    trace = forward(model, x, params)
    ce = tc.softmax_cross_entropy(trace.logits, labels)
    poisoned = np.flatnonzero(np.asarray(flags, dtype=bool)) if flags is not None else np.empty(0, np.intp)
    if poisoned.size == 0 or cfg.lam == 0:
        return ce, ce, trace
    energy = _energy_on_rows(trace, poisoned, cfg.sigma)
    return tc.sub(ce, tc.scale(energy, cfg.lam)), ce, trace


# -- poisoning --------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def poison_flags(n: int, fraction: float, seed: int) -> np.ndarray:
    """Exactly ``round(fraction * n)`` flags set, chosen by a seeded permutation."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"poison fraction must lie in [0, 1], got {fraction}")
    k = _round_half_up(fraction * n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _POISON_STREAM]))
    flags = np.zeros(n, dtype=bool)
    flags[rng.permutation(n)[:k]] = True
    return flags


# -- optimiser --------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def model_parameters(model: MlpModel) -> list[np.ndarray]:
    out = []
    for w, b in zip(model.weights, model.biases):
        out.extend((w, b))
    return out


def adam_step(model, grads: list[np.ndarray], state: AdamState, t: int, cfg: TrainConfig) -> None:
    """One in-place Adam update of ``model`` (an MlpModel or a list of arrays)."""
    if t < 1:
        raise ValidationError(f"Adam step count starts at 1, got {t}")
    params = model_parameters(model) if isinstance(model, MlpModel) else list(model)
    if len(params) != len(grads) or len(state.m) != len(params):
        raise ValidationError("parameter, gradient and Adam state lists differ in length")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValidationError(f"shape mismatch in Adam step: {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)


# -- training loop ---------------------------------------------------------------


def prepare_split(dataset: Dataset, cfg: TrainConfig) -> tuple[Dataset, Dataset, Standardizer | None]:
    """Seeded stratified split, then standardization fitted on the train part only."""
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    train_ds, test_ds = split(dataset, cfg.test_split, cfg.seed)
    scaler = Standardizer.fit(train_ds.features) if cfg.standardize else None
    if scaler is not None:
        train_ds = Dataset(scaler.apply(train_ds.features), train_ds.labels, train_ds.num_classes, train_ds.name, scaler)
        test_ds = Dataset(scaler.apply(test_ds.features), test_ds.labels, test_ds.num_classes, test_ds.name, scaler)
    return train_ds, test_ds, scaler


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, _SHUFFLE_STREAM, epoch])).permutation(n)


def _hidden_density(trace: ForwardTrace) -> float:
    return float(np.mean([np.mean(a.value != 0.0) for a in trace.hidden_activations]))


def _evaluate(model, train_ds, test_ds, flags, cfg: SpongeConfig, epoch: int) -> EpochStats:
    loss, ce, trace = _sponge_loss_parts(model, (train_ds.features, train_ds.labels, flags), cfg, None)
    train_acc = float(np.mean(np.argmax(trace.logits.value, axis=1) == train_ds.labels))
    test_trace = forward(model, test_ds.features)
    test_acc = float(np.mean(np.argmax(test_trace.logits.value, axis=1) == test_ds.labels))
    return EpochStats(epoch, loss.item(), train_acc, test_acc, _hidden_density(test_trace), ce.item())


def fit(
    model: MlpModel,
    train_ds: Dataset,
    test_ds: Dataset,
    train_cfg: TrainConfig,
    sponge_cfg: SpongeConfig,
    *,
    freeze_zero_weights: bool = False,
) -> list[EpochStats]:
    """Train ``model`` in place; returns history rows for epoch 0 (before any step) through ``epochs``.

    ``freeze_zero_weights`` keeps exactly-zero weights (and masked neurons) at
    zero after every step, for fine-tuning a pruned model.
    """
    n = len(train_ds)
    if sponge_cfg.poison_mode == "sample":
        flags = poison_flags(n, sponge_cfg.poison_fraction, train_cfg.seed)
        update_flags = None
    else:
        flags = None
        n_updates = train_cfg.epochs * math.ceil(n / train_cfg.batch_size)
        update_flags = poison_flags(n_updates, sponge_cfg.poison_fraction, train_cfg.seed)
    zero_masks = [w == 0.0 for w in model.weights] if freeze_zero_weights else None

    eval_flags = flags if flags is not None else np.full(n, sponge_cfg.poison_fraction > 0)
    history = [_evaluate(model, train_ds, test_ds, eval_flags, sponge_cfg, 0)]
    state = AdamState.zeros_like(model_parameters(model))
    t = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = epoch_order(n, train_cfg.seed, epoch)
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            if update_flags is not None:
                batch_flags = np.full(idx.size, bool(update_flags[t]))
            else:
                batch_flags = flags[idx]
            params = parameter_nodes(model)
            loss = sponge_loss(model, (train_ds.features[idx], train_ds.labels[idx], batch_flags), sponge_cfg, params)
            tc.backward(loss)
            t += 1
            adam_step(model, [p.grad for p in params], state, t, train_cfg)
            if zero_masks is not None:
                for w, z in zip(model.weights, zero_masks):
                    w[z] = 0.0
            if model.has_masked_neurons:
                model.apply_masks()
        stats = _evaluate(model, train_ds, test_ds, eval_flags, sponge_cfg, epoch)
        history.append(stats)
        log.debug("epoch %d loss=%.5f acc=%.4f density=%.4f", epoch, stats.train_loss, stats.test_acc, stats.mean_density)
    return history


def train(
    dataset: Dataset,
    mlp_cfg: MlpConfig,
    train_cfg: TrainConfig,
    sponge_cfg: SpongeConfig,
) -> tuple[MlpModel, list[EpochStats]]:
    """Split, standardize, initialise and train a model with the (possibly poisoned) sponge loss."""
    if mlp_cfg.input_dim != dataset.dim:
        raise ValidationError(f"model input_dim {mlp_cfg.input_dim} != dataset dimension {dataset.dim}")
    if mlp_cfg.num_classes < dataset.num_classes:
        raise ValidationError(f"model has {mlp_cfg.num_classes} outputs for {dataset.num_classes} classes")
    train_ds, test_ds, scaler = prepare_split(dataset, train_cfg)
    model = init_model(mlp_cfg, int(np.random.SeedSequence([train_cfg.seed, _INIT_STREAM]).generate_state(1)[0]))
    model.input_scaler = scaler
    history = fit(model, train_ds, test_ds, train_cfg, sponge_cfg)
    return model, history


def write_history_csv(history: list[EpochStats], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row.epoch, f"{row.train_loss:.6g}", f"{row.train_acc:.6g}", f"{row.test_acc:.6g}", f"{row.mean_density:.6g}"])
