import math
import warnings

import numpy as np
import pytest

from poperl.errors import DomainError
from poperl.metrics import (
    ROW_FIELDS,
    AggregateCurve,
    RunRecord,
    aggregate,
    export,
    final_performance,
    fitness_snapshot,
    moving_average,
    snapshot_steps,
)

T84_DF1 = math.tan(math.pi * 0.34)   # the t distribution with 1 dof is Cauchy
T84_DF2 = 0.68 / math.sqrt(2 * 0.84 * 0.16)  # closed-form t quantile for 2 dof


def rec(seed, steps, values, field="target_eval_return", **extra):
    rows = []
    for i, (s, v) in enumerate(zip(steps, values)):
        row = {"iteration": i, "training_steps": s, field: v}
        row.update({k: w[i] for k, w in extra.items()})
        rows.append(row)
    return RunRecord({"algorithm": "no_pop"}, seed, rows)


def test_rows_must_have_nondecreasing_steps():
    r = RunRecord()
    r.append({"iteration": 0, "training_steps": 10})
    with pytest.raises(DomainError):
        r.append({"iteration": 1, "training_steps": 5})
    with pytest.raises(KeyError):
        r.append({"iteration": 2, "training_steps": 20, "bogus": 1})


def test_identical_seeds_zero_width():
    c = aggregate([rec(0, [1, 2, 3], [1.0, 2.0, 3.0]), rec(1, [1, 2, 3], [1.0, 2.0, 3.0])], "target_eval_return", 1)
    assert np.all(c.ci_low == c.mean) and np.all(c.ci_high == c.mean)


def test_two_seed_t_interval():
    c = aggregate([rec(0, [5], [0.0]), rec(1, [5], [2.0])], "target_eval_return", 1)
    assert c.mean[0] == 1.0
    # sd = sqrt(2), so half-width = t * sqrt(2) / sqrt(2)
    assert c.ci_high[0] - 1.0 == pytest.approx(T84_DF1, rel=1e-9)
    assert 1.0 - c.ci_low[0] == pytest.approx(T84_DF1, rel=1e-9)


def test_window_one_is_raw_mean_and_smoothing_centered():
    r = [rec(0, [1, 2, 3, 4, 5], [0, 10, 0, 10, 0.0]), rec(1, [1, 2, 3, 4, 5], [2, 10, 2, 10, 2.0])]
    np.testing.assert_array_equal(aggregate(r, "target_eval_return", 1).mean, [1, 10, 1, 10, 1])
    sm = aggregate(r, "target_eval_return", 3).mean
    np.testing.assert_allclose(sm, [5.5, 4, 7, 4, 5.5])
    np.testing.assert_array_equal(moving_average([1.0, 2.0], 1), [1.0, 2.0])


def test_nearest_step_alignment():
    a = rec(0, [100, 200, 300], [1.0, 2.0, 3.0])
    b = rec(1, [90, 140, 260, 310], [10.0, 20.0, 30.0, 40.0])
    c = aggregate([a, b], "target_eval_return", 1)
    assert c.x.tolist() == [100, 200, 300]
    # 200 sits 60 from both 140 and 260; ties go to the earlier evaluation
    assert c.series[1].tolist() == [10.0, 20.0, 40.0]
    assert np.all(c.ci_low <= c.mean) and np.all(c.mean <= c.ci_high)


def test_single_seed_warns_and_omits_ci():
    with pytest.warns(UserWarning):
        c = aggregate([rec(0, [1, 2], [1.0, 2.0])], "target_eval_return")
    assert c.ci_low is None and c.mean.tolist() == [1.5, 1.5]


def test_final_performance_fixture():
    steps = [1, 2, 3, 4, 5]
    r = [rec(0, steps, [1, 5, 3, 4, 2.0]), rec(1, steps, [0, 0, 0, 7, 1.0]), rec(2, steps, [9, 1, 2, 3, 1.0])]
    fp = final_performance(r, last=3)
    assert fp.per_seed == [4.0, 7.0, 3.0]
    assert fp.mean == pytest.approx(14 / 3, rel=1e-15)
    assert fp.half_width == pytest.approx(T84_DF2 * math.sqrt(13 / 3) / math.sqrt(3), rel=1e-12)
    assert not fp.all_available


def test_final_performance_trivial_cases():
    mono = [rec(s, range(150), np.arange(150.0) + s) for s in range(3)]
    fp = final_performance(mono)
    assert fp.per_seed == [149.0, 150.0, 151.0]
    const = final_performance([rec(s, range(5), [2.5] * 5) for s in range(4)])
    assert (const.mean, const.half_width, const.all_available) == (2.5, 0.0, True)
    with pytest.raises(DomainError):
        final_performance([rec(0, [], [])])


def test_fitness_snapshot():
    steps = [10, 20, 30]
    fl = [[1.0] * 10, [0.0] * 5 + [10.0] * 5, [3.0] * 10]
    r = rec(0, steps, [None] * 3, fitness_list=fl)
    h = fitness_snapshot(r, 11)
    assert h.training_steps == 10 and np.count_nonzero(h.counts) == 1 and h.counts.sum() == 10
    h2 = fitness_snapshot(r, 19, bins=20)
    assert h2.iteration == 1 and h2.counts[0] == 5 and h2.counts[-1] == 5 and h2.counts[1:-1].sum() == 0
    with pytest.raises(DomainError):
        fitness_snapshot(rec(0, [1], [1.0]), 1)
    assert snapshot_steps(30000) == [10000, 20000, 30000]


def write_run(tmp_path, seeds, n=6):
    for s in seeds:
        d = tmp_path / f"seed_{s}"
        d.mkdir()
        (d / "config.json").write_text('{"algorithm": "erl_always", "seed": %d}' % s)
        r = RunRecord({}, s, path=d / "record.jsonl")
        for i in range(n):
            r.append({"iteration": i, "training_steps": 100 * i + s, "target_eval_return": float(i * (s + 1)),
                      "fitness_list": [0.5 * i, 1.5], "mean_pop_fitness": (0.5 * i + 1.5) / 2, "batch_origin_pop": 3})


def test_export_empty_run_header_only(tmp_path):
    d = tmp_path / "seed_0"
    d.mkdir()
    (d / "record.jsonl").write_text("")
    export(tmp_path)
    assert (d / "run.csv").read_text() == ",".join(ROW_FIELDS) + "\n"
    assert (tmp_path / "aggregate_target_eval_return.csv").read_text().splitlines() == [
        "training_steps,mean,ci_low,ci_high,seed_0"]


def test_export_idempotent_and_roundtrip(tmp_path):
    write_run(tmp_path, [0, 1, 2])
    files = export(tmp_path)
    first = {p: p.read_bytes() for p in files}
    export(tmp_path)
    assert all(p.read_bytes() == b for p, b in first.items())
    from poperl.metrics import load_run
    curve = aggregate(load_run(tmp_path), "target_eval_return")
    back = AggregateCurve.read_csv(tmp_path / "aggregate_target_eval_return.csv", "target_eval_return")
    assert back.seeds == [0, 1, 2]
    for f in ("x", "series", "mean", "ci_low", "ci_high"):
        assert np.array_equal(getattr(back, f), getattr(curve, f))
    run_csv = (tmp_path / "seed_1" / "run.csv").read_text().splitlines()
    assert run_csv[0].split(",") == list(ROW_FIELDS) and len(run_csv) == 7
    assert "1.0;1.5" in run_csv[3]


def test_exported_numbers_trace_to_rows(tmp_path):
    write_run(tmp_path, [0, 1])
    export(tmp_path, window=1)
    lines = (tmp_path / "aggregate_target_eval_return.csv").read_text().splitlines()[1:]
    for i, line in enumerate(lines):
        cells = line.split(",")
        assert float(cells[4]) == float(i * 1) and float(cells[5]) == float(i * 2)
        assert float(cells[1]) == (i + 2 * i) / 2
