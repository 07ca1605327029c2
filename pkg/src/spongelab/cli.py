"""Command line entry point: train, prune, eval, grid, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import WindowSpec, load_feature_csv, synth_blobs, window_series_csv
from .energy import energy_proxy, write_report_csv
from .errors import GridCellError, NumericalError, ValidationError
from .harness import METRICS, GridSpec, emit_csv, emit_trend_svg, read_records_csv, run_grid, write_standard_charts
from .model import MlpConfig, accuracy, load_model, save_model
from .pruning import neuron_prune, weight_prune
from .sponge import SpongeConfig, TrainConfig, train, write_history_csv

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("spongelab")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="feature/series CSV path, or 'synth' for Gaussian blobs")
    p.add_argument("--label-column", default="label")
    p.add_argument("--series", action="store_true", help="treat --data as a raw sensor series CSV and window it")
    p.add_argument("--session-column", default="session_id")
    p.add_argument("--window-len", type=int, default=50)
    p.add_argument("--stride", type=int, default=25)
    p.add_argument("--synth-per-class", type=int, default=100)
    p.add_argument("--synth-classes", type=int, default=6)
    p.add_argument("--synth-dim", type=int, default=20)
    p.add_argument("--synth-spread", type=float, default=1.0)
    p.add_argument("--data-seed", type=int, default=0)


def _load_data(args):
    if args.data == "synth":
        return synth_blobs(args.synth_per_class, args.synth_classes, args.synth_dim, args.synth_spread, args.data_seed)
    if args.series:
        spec = WindowSpec(args.window_len, args.stride, flatten=True)
        return window_series_csv(args.data, spec, args.label_column, session_column=args.session_column)
    # the trainer fits standardisation on its own train split
    return load_feature_csv(args.data, args.label_column, standardize=False)


def cmd_train(args) -> int:
    ds = _load_data(args)
    tcfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, test_split=args.test_split, seed=args.seed
    )
    if not 0 <= args.sponge_pct <= 100:
        raise ValidationError(f"--sponge-pct must lie in [0, 100], got {args.sponge_pct}")
    scfg = SpongeConfig(args.lam, args.sigma, args.sponge_pct / 100.0, args.poison_mode)
    mcfg = MlpConfig(ds.dim, tuple(args.hidden), ds.num_classes)
    model, history = train(ds, mcfg, tcfg, scfg)
    save_model(model, args.out)
    if args.history:
        write_history_csv(history, args.history)
    last = history[-1]
    print(f"test_acc={100 * last.test_acc:.2f}% mean_density={last.mean_density:.4f} -> {args.out}")
    return EXIT_OK


def cmd_prune(args) -> int:
    model = load_model(args.model)
    rate = args.rate / 100.0
    pruned = weight_prune(model, rate) if args.method == "weight" else neuron_prune(model, rate)
    save_model(pruned, args.out)
    print(f"{args.method} pruning at {args.rate:g}% -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = _load_data(args)
    x = model.prepare_inputs(ds.features)
    report = energy_proxy(model, x, threshold=args.threshold, timing_repeats=args.timing_repeats)
    write_report_csv([report], args.report)
    acc = accuracy(model, x, ds.labels)
    print(f"accuracy={100 * acc:.2f}% energy_ratio={report.energy_ratio:.4f} latency_ops={report.latency_ops}")
    return EXIT_OK


def cmd_grid(args) -> int:
    doc = {}
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.spec}: invalid JSON ({exc})") from exc
    spec = GridSpec.from_dict(doc)
    overrides = {}
    for name in ("sponge_pcts", "prune_pcts", "seeds", "hidden_dims", "workers", "timing_repeats"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.prune_types is not None:
        overrides["prune_types"] = args.prune_types.split(",")
    train_over = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.lr)) if v is not None}
    if train_over:
        overrides["train"] = replace(spec.train, **train_over)
    spec = replace(spec, **overrides)

    ds = _load_data(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "grid_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    records = run_grid(spec, ds, partial_path=out_dir / "records.csv")
    emit_csv(records, out_dir / "records.csv")
    charts = write_standard_charts(records, out_dir)
    print(f"{len(records)} records, {len(charts)} charts -> {out_dir}")
    return EXIT_OK


def cmd_plot(args) -> int:
    records = read_records_csv(args.records)
    where = {}
    for clause in args.where or []:
        key, _, values = clause.partition("=")
        if not values:
            raise ValidationError(f"--where expects field=value[,value...], got {clause!r}")
        where[key] = values.split(",")
    emit_trend_svg(records, args.metric, args.group_by, args.out, x=args.x, where=where or None)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spongelab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a clean or sponge-poisoned model")
    _add_data_args(p)
    p.add_argument("--sponge-pct", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1e-5)
    p.add_argument("--poison-mode", choices=("sample", "update"), default="sample")
    p.add_argument("--hidden", type=_int_list, default=[128, 64])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--test-split", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="write per-epoch history CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="prune a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("weight", "neuron"), required=True)
    p.add_argument("--rate", type=float, required=True, help="percentage, e.g. 30")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="accuracy and energy/latency proxies of a saved model")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--timing-repeats", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="run the sponge x pruning experiment grid")
    _add_data_args(p)
    p.add_argument("--spec", help="JSON grid spec; flags below override it")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sponge-pcts", type=_int_list)
    p.add_argument("--prune-types")
    p.add_argument("--prune-pcts", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--hidden", dest="hidden_dims", type=_int_list)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--timing-repeats", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("plot", help="SVG trend chart from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--group-by", required=True, help="record field(s), comma-separated")
    p.add_argument("--x", choices=("sponge_pct", "prune_pct"))
    p.add_argument("--where", action="append", help="filter, e.g. prune_type=none,weight")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, GridCellError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, NumericalError, GridCellError, OSError) as exc:
        print(f"spongelab: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
