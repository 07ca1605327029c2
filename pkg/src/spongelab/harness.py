"""Attack/defense experiment grid, CSV tables and SVG trend charts."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import Dataset
from .energy import energy_proxy
from .errors import GridCellError, ValidationError
from .model import MlpConfig, MlpModel, accuracy
from .pruning import neuron_prune, weight_prune
from .sponge import SpongeConfig, TrainConfig, prepare_split, train

log = logging.getLogger(__name__)

PRUNE_TYPES = ("none", "weight", "neuron")
METRICS = ("test_acc", "energy_ratio", "latency_ops")


@dataclass(frozen=True)
class ExperimentRecord:
    dataset: str
    sponge_pct: int
    prune_type: str
    prune_pct: int
    test_acc: float
    energy_ratio: float
    proxy_energy: float
    latency_ops: int
    wall_clock_s: float
    seed: int

    def key(self) -> tuple:
        return (self.dataset, self.sponge_pct, PRUNE_TYPES.index(self.prune_type), self.prune_pct, self.seed)


RECORD_COLUMNS = tuple(f.name for f in fields(ExperimentRecord))
_INT_FIELDS = {"sponge_pct", "prune_pct", "latency_ops", "seed"}
_STR_FIELDS = {"dataset", "prune_type"}


@dataclass(frozen=True)
class GridSpec:
    """Which cells to run.  Defaults are the published hyperparameter ranges."""

    sponge_pcts: tuple[int, ...] = tuple(range(0, 101, 10))
    prune_types: tuple[str, ...] = PRUNE_TYPES
    prune_pcts: tuple[int, ...] = (10, 20, 30, 40, 50)
    seeds: tuple[int, ...] = (0, 1, 2)
    hidden_dims: tuple[int, ...] = (128, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    lam: float = 1.0
    sigma: float = 1e-5
    poison_mode: str = "sample"
    timing_repeats: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("sponge_pcts", "prune_types", "prune_pcts", "seeds", "hidden_dims"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValidationError(f"grid spec: {name} must not be empty")
        if any(not 0 <= p <= 100 for p in self.sponge_pcts):
            raise ValidationError("grid spec: sponge_pcts must lie in [0, 100]")
        if any(not 0 < p < 100 for p in self.prune_pcts):
            raise ValidationError("grid spec: prune_pcts must lie strictly between 0 and 100")
        bad = set(self.prune_types) - set(PRUNE_TYPES)
        if bad:
            raise ValidationError(f"grid spec: unknown prune types {sorted(bad)}")
        if len(set(self.sponge_pcts)) != len(self.sponge_pcts) or len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("grid spec: duplicate sponge_pcts or seeds")
        if self.workers < 1 or self.timing_repeats < 0:
            raise ValidationError("grid spec: workers must be >= 1 and timing_repeats >= 0")
        SpongeConfig(self.lam, self.sigma, 0.0, self.poison_mode)

    def cells_per_seed(self) -> int:
        per_level = ("none" in self.prune_types) + sum(t != "none" for t in self.prune_types) * len(self.prune_pcts)
        return len(self.sponge_pcts) * per_level

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"grid spec: unknown keys {sorted(unknown)}")
        if "train" in doc:
            train_known = {f.name for f in fields(TrainConfig)}
            bad = set(doc["train"]) - train_known
            if bad:
                raise ValidationError(f"grid spec: unknown train keys {sorted(bad)}")
            doc["train"] = TrainConfig(**doc["train"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"grid spec: {exc}") from exc


def _evaluate(dataset_name, model: MlpModel, test: Dataset, sponge_pct, prune_type, prune_pct, seed, repeats):
    report = energy_proxy(model, test.features, timing_repeats=repeats)
    return ExperimentRecord(
        dataset=dataset_name,
        sponge_pct=int(sponge_pct),
        prune_type=prune_type,
        prune_pct=int(prune_pct),
        test_acc=100.0 * accuracy(model, test.features, test.labels),
        energy_ratio=report.energy_ratio,
        proxy_energy=report.proxy_energy,
        latency_ops=report.latency_ops,
        wall_clock_s=report.wall_clock_seconds,
        seed=int(seed),
    )


def run_sponge_level(spec: GridSpec, dataset: Dataset, sponge_pct: int, seed: int) -> list[ExperimentRecord]:
    """Train once at this poisoning level, then evaluate the model and each pruned copy."""
    tcfg = replace(spec.train, seed=seed)
    scfg = SpongeConfig(spec.lam, spec.sigma, sponge_pct / 100.0, spec.poison_mode)
    mcfg = MlpConfig(dataset.dim, spec.hidden_dims, dataset.num_classes)
    key = (dataset.name, sponge_pct, "none", 0, seed)
    try:
        model, _ = train(dataset, mcfg, tcfg, scfg)
        _, test, _ = prepare_split(dataset, tcfg)
        records = []
        if "none" in spec.prune_types:
            records.append(_evaluate(dataset.name, model, test, sponge_pct, "none", 0, seed, spec.timing_repeats))
        for ptype in ("weight", "neuron"):
            if ptype not in spec.prune_types:
                continue
            pruner = weight_prune if ptype == "weight" else neuron_prune
            for pct in spec.prune_pcts:
                key = (dataset.name, sponge_pct, ptype, pct, seed)
                pruned = pruner(model, pct / 100.0)
                records.append(_evaluate(dataset.name, pruned, test, sponge_pct, ptype, pct, seed, spec.timing_repeats))
    except Exception as exc:
        raise GridCellError(key, exc) from exc
    return records


def _run_job(args):
    return run_sponge_level(*args)


def run_grid(spec: GridSpec, dataset: Dataset, partial_path=None) -> list[ExperimentRecord]:
    """All grid cells, sorted by key.  Stops at the first failing cell.

    On failure the records finished so far are written to
    ``<partial_path>.partial`` (when a path is given) before the
    :class:`GridCellError` propagates.
    """
    jobs = [(spec, dataset, pct, seed) for seed in spec.seeds for pct in spec.sponge_pcts]
    done: list[ExperimentRecord] = []
    try:
        if spec.workers == 1:
            for job in jobs:
                log.info("training %s sponge=%d%% seed=%d", dataset.name, job[2], job[3])
                done.extend(_run_job(job))
        else:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                for recs in pool.map(_run_job, jobs):
                    done.extend(recs)
    except GridCellError:
        if partial_path is not None and done:
            emit_csv(sorted(done, key=ExperimentRecord.key), f"{partial_path}.partial")
        raise
    return sorted(done, key=ExperimentRecord.key)


# -- CSV -----------------------------------------------------------------------------------


def _fmt(name: str, value) -> str:
    if name in _STR_FIELDS or name in _INT_FIELDS:
        return str(value)
    if name == "wall_clock_s":
        return f"{value:.6f}"
    return f"{value:.6g}"


def emit_csv(records: list[ExperimentRecord], path) -> None:
    if not records:
        raise ValidationError("no records to write")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(name, getattr(rec, name)) for name in RECORD_COLUMNS])


def read_records_csv(path) -> list[ExperimentRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_COLUMNS:
            raise ValidationError(f"{path}: header does not match record columns {RECORD_COLUMNS}")
        out = []
        for row in reader:
            try:
                vals = {
                    k: (v if k in _STR_FIELDS else int(v) if k in _INT_FIELDS else float(v))
                    for k, v in row.items()
                }
            except ValueError as exc:
                raise ValidationError(f"{path}: line {reader.line_num}: {exc}") from exc
            out.append(ExperimentRecord(**vals))
    if not out:
        raise ValidationError(f"{path}: no records")
    return out


# -- SVG -----------------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_W, _H = 640, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 150, 30, 50


def axis_range(values) -> tuple[float, float]:
    """Min..max widened by 5% of the span on each side."""
    lo, hi = float(min(values)), float(max(values))
    span = hi - lo
    pad = 0.05 * span if span > 0 else 0.05 * max(abs(hi), 1.0)
    return lo - pad, hi + pad


def trend_series(records, metric: str, group_by: str, x: str, where: dict | None = None) -> dict:
    """``{group_label: [(x, mean metric), ...]}`` with x ascending; averages over the other fields."""
    group_fields = [g.strip() for g in group_by.split(",") if g.strip()]
    for name in (*group_fields, x):
        if name not in RECORD_COLUMNS:
            raise ValidationError(f"unknown record field {name!r}")
    buckets: dict[tuple, dict] = {}
    for rec in records:
        if where and any(str(getattr(rec, k)) not in {str(v) for v in vs} for k, vs in where.items()):
            continue
        group = tuple(getattr(rec, g) for g in group_fields)
        buckets.setdefault(group, {}).setdefault(getattr(rec, x), []).append(float(getattr(rec, metric)))
    series = {}
    for group in sorted(buckets, key=lambda g: tuple((PRUNE_TYPES.index(v) if v in PRUNE_TYPES else 0, v) for v in g)):
        label = ", ".join(f"{g}={v}" for g, v in zip(group_fields, group))
        series[label] = [(xv, float(np.mean(ys))) for xv, ys in sorted(buckets[group].items())]
    return series


def emit_trend_svg(records, metric: str, group_by: str, path, x: str | None = None, where: dict | None = None) -> None:
    """Line chart of ``metric`` against ``x`` (sponge_pct, or prune_pct when grouping by sponge_pct)."""
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")
    if x is None:
        x = "prune_pct" if "sponge_pct" in group_by else "sponge_pct"
    series = trend_series(records, metric, group_by, x, where)
    if not series:
        raise ValidationError("no records left to plot")
    Path(path).write_text(render_svg(series, metric, x), encoding="utf-8")


def render_svg(series: dict, metric: str, x_label: str) -> str:
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    y_lo, y_hi = axis_range(ys)
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def sx(v):
        return _LEFT + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return _TOP + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" '
        f'data-y-min="{y_lo:.6g}" data-y-max="{y_hi:.6g}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_LEFT}" y1="{_TOP + ph}" x2="{_LEFT + pw}" y2="{_TOP + ph}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + ph}" stroke="black"/>',
    ]
    for i in range(6):
        yv = y_lo + (y_hi - y_lo) * i / 5
        xv = x_lo + (x_hi - x_lo) * i / 5
        out.append(f'<text x="{_LEFT - 6}" y="{sy(yv) + 4:.2f}" font-size="11" text-anchor="end">{yv:.4g}</text>')
        out.append(f'<text x="{sx(xv):.2f}" y="{_TOP + ph + 16}" font-size="11" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{_LEFT + pw / 2:.2f}" y="{_H - 10}" font-size="13" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="16" y="{_TOP + ph / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {_TOP + ph / 2:.2f})">{escape(metric)}</text>'
    )
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(px):.2f},{sy(py):.2f}" for px, py in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = _TOP + 14 + 16 * i
        out.append(f'<line x1="{_W - _RIGHT + 10}" y1="{ly - 4}" x2="{_W - _RIGHT + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _RIGHT + 34}" y="{ly}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_standard_charts(records, out_dir) -> list[Path]:
    """The sponge-level trend charts and, per prune method, prune-rate charts."""
    out_dir = Path(out_dir)
    written = []
    types = {r.prune_type for r in records}
    for metric in METRICS:
        if "none" in types:
            p = out_dir / f"sponge_{metric}.svg"
            emit_trend_svg(records, metric, "dataset", p, x="sponge_pct", where={"prune_type": ["none"]})
            written.append(p)
        for method in ("weight", "neuron"):
            if method in types:
                p = out_dir / f"prune_{method}_{metric}.svg"
                emit_trend_svg(records, metric, "sponge_pct", p, x="prune_pct", where={"prune_type": ["none", method]})
                written.append(p)
    return written
