"""Sweep engine: lattice enumeration, aggregates, resume, plot files."""

import json
import os

import pytest

from hypergrid.model import ModelConfig
from hypergrid.sweep import (
    SweepPlan,
    SweepResult,
    emit_plotdata,
    parse_plotdata,
    run_sweep,
)

TINY_MODEL = ModelConfig(vocab_size=24, d_m=16, d_f=32, heads=2,
                         layers_enc=1, layers_dec=1, max_len=12)


def tiny_plan(**kw):
    defaults = dict(variants=("LG",), d_r_values=(2,), d_c_values=(4,),
                    base_config=TINY_MODEL, steps=2, eval_every=1,
                    batch_size=2, seeds=1, base_seed=0,
                    task_sizes=(8, 4, 4, 4, 4), dev_size=2)
    defaults.update(kw)
    return SweepPlan(**defaults)


def test_cells_enumeration_deterministic():
    plan = tiny_plan(variants=("L2", "GL"), d_r_values=(1, 2),
                     d_c_values=(4,), seeds=2)
    cells = list(plan.cells())
    assert [i for i, _ in cells] == list(range(8))
    assert cells[0][1] == ("L2", 1, 4, 0)
    assert cells[-1][1] == ("GL", 2, 4, 1)
    assert cells == list(plan.cells())  # stable across calls


def test_axis_aggregate_max_mean_min():
    plan = tiny_plan(variants=("LG",), d_r_values=(2,), d_c_values=(4, 8))
    res = SweepResult(plan=plan, cells={
        ("LG", 2, 4, 0): 0.6,
        ("LG", 2, 8, 0): 0.8,
    })
    rows = res.axis_aggregate("LG", "d_r")
    assert rows == [(2, 0.8, pytest.approx(0.7), 0.6)]
    rows_c = res.axis_aggregate("LG", "d_c")
    assert rows_c == [(4, 0.6, 0.6, 0.6), (8, 0.8, 0.8, 0.8)]
    with pytest.raises(ValueError):
        res.axis_aggregate("LG", "bogus")


def test_multi_seed_cells_average_before_aggregation():
    plan = tiny_plan(d_c_values=(4,), seeds=2)
    res = SweepResult(plan=plan, cells={
        ("LG", 2, 4, 0): 0.5,
        ("LG", 2, 4, 1): 0.7,
    })
    assert res.axis_aggregate("LG", "d_r") == [(2, 0.6, 0.6, 0.6)]


def test_run_sweep_degenerate_lattice(tmp_path):
    plan = tiny_plan()
    res = run_sweep(plan, str(tmp_path))
    assert len(res.cells) == 1 and not res.invalid
    score = res.cells[("LG", 2, 4, 0)]
    assert 0.0 <= score <= 1.0
    marker = tmp_path / "cells" / "LG_dr2_dc4_s0.json"
    assert marker.exists()
    assert json.loads(marker.read_text())["best_macro"] == score


def test_resume_skips_completed_cells(tmp_path):
    plan = tiny_plan(d_c_values=(4, 8))
    first = run_sweep(plan, str(tmp_path))
    # poison one marker: if the cell reruns, the score would change
    key = ("LG", 2, 4, 0)
    marker = tmp_path / "cells" / "LG_dr2_dc4_s0.json"
    rec = json.loads(marker.read_text())
    rec["best_macro"] = 0.123456
    marker.write_text(json.dumps(rec, sort_keys=True))
    second = run_sweep(plan, str(tmp_path))
    assert second.cells[key] == 0.123456
    assert second.cells[("LG", 2, 8, 0)] == first.cells[("LG", 2, 8, 0)]


def test_interrupted_sweep_resumes_byte_identical(tmp_path):
    plan = tiny_plan(d_c_values=(4, 8))
    full = run_sweep(plan, str(tmp_path / "a"))
    files_a = emit_plotdata(full, str(tmp_path / "a" / "plot"))

    # simulate a kill after the first cell: seed state dir with its marker
    os.makedirs(tmp_path / "b" / "cells")
    src = tmp_path / "a" / "cells" / "LG_dr2_dc4_s0.json"
    (tmp_path / "b" / "cells" / "LG_dr2_dc4_s0.json").write_text(src.read_text())
    resumed = run_sweep(plan, str(tmp_path / "b"))
    files_b = emit_plotdata(resumed, str(tmp_path / "b" / "plot"))
    for fa, fb in zip(files_a, files_b):
        assert open(fa, "rb").read() == open(fb, "rb").read()


def test_invalid_cell_skipped_not_fatal(tmp_path):
    # d_r=3 does not divide the tiny model's d_f=32
    plan = tiny_plan(d_r_values=(2, 3), d_c_values=(4,))
    res = run_sweep(plan, str(tmp_path))
    assert len(res.cells) == 1
    assert len(res.invalid) == 1 and "dr3" in res.invalid[0]["cell"]


def test_parallel_matches_serial(tmp_path):
    plan = tiny_plan(d_c_values=(4, 8))
    serial = run_sweep(plan, str(tmp_path / "s"), max_workers=1)
    parallel = run_sweep(plan, str(tmp_path / "p"), max_workers=2)
    assert serial.cells == parallel.cells


def test_plotdata_roundtrip(tmp_path):
    plan = tiny_plan(d_c_values=(4, 8))
    res = SweepResult(plan=plan, cells={
        ("LG", 2, 4, 0): 1 / 3,  # not exactly representable in decimal
        ("LG", 2, 8, 0): 0.1 + 0.2,
    })
    files = emit_plotdata(res, str(tmp_path))
    assert sorted(os.path.basename(f) for f in files) == \
        ["LG_fan_in.tsv", "LG_fan_out.tsv"]
    for f in files:
        axis = "d_r" if f.endswith("fan_in.tsv") else "d_c"
        rows = parse_plotdata(f)
        assert rows == res.axis_aggregate("LG", axis)


def test_parse_plotdata_rejects_bad_header(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("wrong\theader\n")
    with pytest.raises(ValueError, match="header"):
        parse_plotdata(str(bad))


def test_seed_depends_on_lattice_index_not_order():
    plan = tiny_plan(variants=("L2", "LG"), d_c_values=(4,))
    wanted = {cell: idx for idx, cell in plan.cells()}
    # LG cell keeps its index even though L2 precedes it in enumeration
    assert wanted[("L2", 2, 4, 0)] == 0
    assert wanted[("LG", 2, 4, 0)] == 1
