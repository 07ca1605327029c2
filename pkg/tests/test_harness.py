import re

import pytest

from spongelab.data import synth_blobs
from spongelab.errors import GridCellError, ValidationError
from spongelab.harness import (
    ExperimentRecord,
    GridSpec,
    axis_range,
    emit_csv,
    emit_trend_svg,
    read_records_csv,
    run_grid,
    trend_series,
    write_standard_charts,
)
from spongelab.sponge import TrainConfig

TINY_TRAIN = TrainConfig(learning_rate=1e-3, epochs=3)


@pytest.fixture(scope="module")
def blobs():
    return synth_blobs(20, 3, 5, 0.5, 0)


@pytest.fixture(scope="module")
def tiny_records(blobs):
    spec = GridSpec(sponge_pcts=(0, 100), prune_pcts=(10, 50), seeds=(0, 1), hidden_dims=(8, 6), train=TINY_TRAIN)
    return run_grid(spec, blobs)


def record(**kw):
    base = dict(
        dataset="d", sponge_pct=0, prune_type="none", prune_pct=0, test_acc=50.0, energy_ratio=0.5,
        proxy_energy=100.0, latency_ops=100, wall_clock_s=0.0, seed=0,
    )
    base.update(kw)
    return ExperimentRecord(**base)


class TestGridSpec:
    def test_default_cardinality(self):
        spec = GridSpec()
        assert spec.cells_per_seed() == 11 * (1 + 2 * 5)
        assert spec.train.learning_rate == 1e-4 and spec.train.batch_size == 64 and spec.train.epochs == 100
        assert (spec.lam, spec.sigma) == (1.0, 1e-5)

    def test_round_trip_dict(self):
        spec = GridSpec(seeds=(4,), train=TINY_TRAIN)
        assert GridSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize(
        "doc",
        [{"sponge_pcts": []}, {"prune_types": ["filter"]}, {"prune_pcts": [0]}, {"bogus": 1}, {"train": {"lr": 1}}, {"sigma": 0}],
    )
    def test_invalid(self, doc):
        with pytest.raises(ValidationError):
            GridSpec.from_dict(doc)


class TestRunGrid:
    def test_record_count_and_order(self, tiny_records):
        assert len(tiny_records) == 2 * 2 * (1 + 2 * 2)
        keys = [r.key() for r in tiny_records]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)

    def test_single_cell(self, blobs):
        spec = GridSpec(sponge_pcts=(0,), prune_types=("none",), seeds=(0,), hidden_dims=(4,), train=TINY_TRAIN)
        (rec,) = run_grid(spec, blobs)
        assert (rec.sponge_pct, rec.prune_type, rec.prune_pct) == (0, "none", 0)
        assert 0 <= rec.test_acc <= 100

    def test_pruned_cells_share_the_trained_model(self, blobs):
        # widths small enough that 1% prunes nothing: every cell must equal the unpruned one
        spec = GridSpec(sponge_pcts=(0, 50), prune_pcts=(1,), seeds=(3,), hidden_dims=(4, 4), train=TINY_TRAIN)
        recs = run_grid(spec, blobs)
        by_level = {}
        for r in recs:
            by_level.setdefault(r.sponge_pct, []).append(r)
        for rows in by_level.values():
            assert len({(r.test_acc, r.energy_ratio, r.latency_ops) for r in rows}) == 1

    def test_weight_prune_50_never_raises_ratio(self, tiny_records):
        base = {(r.sponge_pct, r.seed): r.energy_ratio for r in tiny_records if r.prune_type == "none"}
        for r in tiny_records:
            if r.prune_type == "weight" and r.prune_pct == 50:
                assert r.energy_ratio <= base[(r.sponge_pct, r.seed)]

    def test_failure_names_cell_and_flushes_partial(self, blobs, tmp_path, monkeypatch):
        import spongelab.harness as h

        real = h.neuron_prune

        def flaky(model, rate):
            if rate == 0.5:
                raise ValidationError("boom")
            return real(model, rate)

        monkeypatch.setattr(h, "neuron_prune", flaky)
        spec = GridSpec(sponge_pcts=(0,), prune_pcts=(10, 50), seeds=(0, 1), hidden_dims=(4,), train=TINY_TRAIN)
        with pytest.raises(GridCellError) as info:
            run_grid(spec, blobs, partial_path=tmp_path / "records.csv")
        assert info.value.key[2:] == ("neuron", 50, 0)
        # the failing sponge level was never completed, so nothing reached the partial file
        assert not (tmp_path / "records.csv.partial").exists()

        monkeypatch.setattr(h, "neuron_prune", real)
        calls = {"n": 0}

        def fail_second_level(model, rate):
            calls["n"] += 1
            if calls["n"] > 2:
                raise ValidationError("boom")
            return real(model, rate)

        monkeypatch.setattr(h, "neuron_prune", fail_second_level)
        with pytest.raises(GridCellError) as info:
            run_grid(spec, blobs, partial_path=tmp_path / "records.csv")
        assert info.value.key[-1] == 1
        partial = read_records_csv(tmp_path / "records.csv.partial")
        assert {r.seed for r in partial} == {0}


class TestCsv:
    def test_one_record_two_lines(self, tmp_path):
        emit_csv([record()], tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "dataset,sponge_pct,prune_type,prune_pct,test_acc,energy_ratio,proxy_energy,latency_ops,wall_clock_s,seed"

    def test_round_trip(self, tmp_path, tiny_records):
        emit_csv(tiny_records, tmp_path / "r.csv")
        back = read_records_csv(tmp_path / "r.csv")
        assert len(back) == len(tiny_records)
        for a, b in zip(tiny_records, back):
            for name in ("dataset", "sponge_pct", "prune_type", "prune_pct", "latency_ops", "seed"):
                assert getattr(a, name) == getattr(b, name)
            for name in ("test_acc", "energy_ratio", "proxy_energy"):
                assert getattr(b, name) == pytest.approx(getattr(a, name), rel=5e-6)

    def test_six_significant_digits(self, tmp_path):
        emit_csv([record(energy_ratio=0.123456789, test_acc=97.55555555)], tmp_path / "r.csv")
        row = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")
        assert row[4] == "97.5556" and row[5] == "0.123457"

    def test_empty(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_csv([], tmp_path / "r.csv")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit_csv([record()], tmp_path / "missing-dir" / "r.csv")


class TestSvg:
    def _records(self):
        return [
            record(prune_type=t, prune_pct=0 if t == "none" else 10, sponge_pct=s, energy_ratio=v)
            for t, vals in (("none", [0.5, 0.6, 0.7]), ("weight", [0.3, 0.35, 0.4]))
            for s, v in zip((0, 50, 100), vals)
        ]

    def test_two_groups_two_polylines(self, tmp_path):
        emit_trend_svg(self._records(), "energy_ratio", "prune_type", tmp_path / "c.svg")
        text = (tmp_path / "c.svg").read_text()
        assert text.count("<polyline") == 2
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")

    def test_deterministic_bytes(self, tmp_path):
        emit_trend_svg(self._records(), "energy_ratio", "prune_type", tmp_path / "a.svg")
        emit_trend_svg(self._records(), "energy_ratio", "prune_type", tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_axis_padding(self, tmp_path):
        assert axis_range([0.3, 0.7]) == pytest.approx((0.28, 0.72))
        emit_trend_svg(self._records(), "energy_ratio", "prune_type", tmp_path / "c.svg")
        text = (tmp_path / "c.svg").read_text()
        lo = float(re.search(r'data-y-min="([^"]+)"', text).group(1))
        hi = float(re.search(r'data-y-max="([^"]+)"', text).group(1))
        span = 0.7 - 0.3
        assert (lo, hi) == pytest.approx((0.3 - 0.05 * span, 0.7 + 0.05 * span))

    def test_unknown_metric(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_trend_svg(self._records(), "kwh", "prune_type", tmp_path / "c.svg")

    def test_series_average_over_seeds(self):
        recs = [record(seed=0, test_acc=80.0), record(seed=1, test_acc=90.0)]
        assert trend_series(recs, "test_acc", "prune_type", "sponge_pct") == {"prune_type=none": [(0, 85.0)]}

    def test_standard_charts(self, tmp_path, tiny_records):
        paths = write_standard_charts(tiny_records, tmp_path)
        assert len(paths) == 9
        assert all(p.exists() for p in paths)
