import csv
import io
import math

import numpy as np
import pytest

from seqboost import simkit
from seqboost.simkit import (
    PRESETS,
    RECORD_COLUMNS,
    TrialRecord,
    emit_csv,
    importance_sampling_type1,
    resolve_preset,
    run_preset,
    write_csv_stream,
)


def test_table2_rows_and_values():
    res = run_preset("table2")
    assert len(res.table) == 25
    assert res.columns[:3] == ["delta", "wealth", "boost_factor"]
    row = next(r for r in res.table if r["delta"] == 3.0 and r["wealth"] == 10.0)
    assert row["boost_factor"] == pytest.approx(68.1985, abs=1e-3)
    assert res.records == [] and res.fallbacks == 0
    # no randomness: the seed is irrelevant
    assert run_preset("table2", seed=99).table == res.table


def test_table2_csv(tmp_path):
    res = run_preset("table2")
    p = emit_csv(res.table, tmp_path / "t2.csv", res.columns)
    raw = p.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(io.StringIO(raw.decode())))
    assert len(rows) == 25
    # shortest round-trip floats read back exactly
    assert [float(r["boost_factor"]) for r in rows] == [r["boost_factor"] for r in res.table]


def test_empty_records_give_header_only(tmp_path):
    p = emit_csv([], tmp_path / "empty.csv")
    assert p.read_text() == ",".join(RECORD_COLUMNS) + "\n"


def test_csv_io_error_has_path(tmp_path):
    bad = tmp_path / "no_such_dir" / "x.csv"
    with pytest.raises(OSError, match="no_such_dir"):
        emit_csv([], bad)


def test_wall_time_never_written():
    buf = io.StringIO()
    r = TrialRecord("p", 0, "1.0", 0, 1, "boosted", 3, "reject_null", 20.0, wall_time=1.5)
    write_csv_stream([r], RECORD_COLUMNS, buf)
    assert "wall_time" not in buf.getvalue() and "1.5" not in buf.getvalue()


def test_zero_trials_empty():
    res = run_preset("fig1", trials=0)
    assert res.records == [] and res.table == []


def test_resolve_preset_overrides():
    p = resolve_preset("fig4", trials=5, alpha=None)
    assert p.trials == 5 and p.alpha == PRESETS["fig4"].alpha
    with pytest.raises(KeyError):
        resolve_preset("fig99")


def test_is_estimator_examples():
    assert importance_sampling_type1(reject=[True] * 4, raw_lr=[20.0] * 4) == (pytest.approx(0.05), 0.0)
    assert importance_sampling_type1(reject=[False] * 3, raw_lr=[np.nan] * 3)[0] == 0.0
    m, se = importance_sampling_type1(reject=[True, False], raw_lr=[10.0, np.nan])
    assert m == pytest.approx(0.05) and se == pytest.approx(0.05)
    with pytest.raises(ValueError):
        importance_sampling_type1(reject=[True], raw_lr=[np.nan])
    recs = [TrialRecord("p", 0, "1", 0, 1, "boosted", 5, "reject_null", 25.0)]
    assert importance_sampling_type1(recs)[0] == pytest.approx(0.04)


def small(name, **kw):
    return resolve_preset(name, trials=kw.pop("trials", 600), **kw)


def csv_bytes(res, tmp_path, tag):
    a = emit_csv(res.table, tmp_path / f"{tag}_t.csv", res.columns).read_bytes()
    b = emit_csv(res.records, tmp_path / f"{tag}_r.csv", RECORD_COLUMNS).read_bytes()
    return a, b


def test_deterministic_across_parallelism(tmp_path):
    p = small("fig1", grid=(0.6, 1.0), max_samples=3000)
    one = csv_bytes(run_preset(p, 1), tmp_path, "one")
    two = csv_bytes(run_preset(p, 2), tmp_path, "two")
    assert one == two
    other = csv_bytes(run_preset(p, 1, seed=2), tmp_path, "other")
    assert other[1] != one[1]


def test_records_ordered_and_streamed():
    seen = []
    res = run_preset(small("fig1", grid=(1.0,), trials=30), sink=seen.append)
    assert seen == res.records
    keys = [(r.grid_index, r.trial) for r in res.records]
    assert keys == sorted(keys)
    assert {r.method for r in res.records} == {"boosted", "plain"}


def test_fig1_ratio_at_delta_two():
    res = run_preset(small("fig1", grid=(2.0,), trials=1000))
    row = res.table[0]
    ratio = row["boosted_mean_n"] / row["plain_mean_n"]
    assert 0.85 < ratio < 1.0
    assert res.violations["tau_boost_gt_tau_plain"] == 0


def test_fig4_columns():
    res = run_preset(small("fig4", grid=(0.2,), trials=200))
    row = res.table[0]
    for m in ("boosted", "wald_approx", "wald_conservative", "siegmund"):
        for c in ("mean_n", "mean_n_se", "type1_hat", "type1_se", "type1_is", "type2_hat", "type2_se"):
            assert f"{m}_{c}" in row
    assert row["beta"] == 0.2


def test_other_presets_run():
    for name, kw in [
        ("fig2", {"grid": (1.0,)}),
        ("fig3", {"grid": (500,)}),
        ("siegmund_compare", {"grid": (("power_one", 1.0), ("two_sided", 0.2))}),
    ]:
        res = run_preset(small(name, trials=50, **kw))
        assert len(res.table) == len(kw["grid"])
        assert res.errors == [] and res.fallbacks == 0
        assert all(v == 0 for v in res.violations.values())
    res = run_preset("figS1", trials=20)
    assert res.table and "boosted_lower" in res.columns


def test_memory_error_reported_not_dropped(monkeypatch):
    real = simkit._run_chunk

    def flaky(args):
        if args[1] == 1:
            raise MemoryError("out of memory")
        return real(args)

    monkeypatch.setattr(simkit, "_run_chunk", flaky)
    res = run_preset(small("fig1", grid=(1.0, 2.0), trials=20))
    assert len(res.errors) == 1 and "grid 1" in res.errors[0]
    assert {r.grid_index for r in res.records} == {0}


def test_standard_errors():
    m, se = simkit.mean_se(np.array([1.0, 3.0]))
    assert m == 2.0 and se == pytest.approx(1.0)
    r, se = simkit.rate_se(np.array([True, False, False, False]))
    assert r == 0.25 and se == pytest.approx(math.sqrt(0.25 * 0.75 / 4))
