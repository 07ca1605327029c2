"""Desk-scale lab for sponge-poisoning attacks on small sensing classifiers and pruning defenses."""

from .data import Dataset, WindowSpec, load_feature_csv, split, synth_blobs, window_series_csv
from .energy import EnergyReport, density, energy_proxy, wall_clock_latency
from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    GridCellError,
    NumericalError,
    SpongeLabError,
    ValidationError,
)
from .harness import ExperimentRecord, GridSpec, emit_csv, emit_trend_svg, read_records_csv, run_grid
from .model import ForwardTrace, MlpConfig, MlpModel, forward, init_model, load_model, predict, save_model
from .pruning import PruneConfig, compact, neuron_prune, weight_prune
from .sponge import SpongeConfig, TrainConfig, adam_step, sponge_energy, sponge_loss, train

__version__ = "0.1.0"
