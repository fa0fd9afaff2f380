"""Grid-size study: train the task mixture across a lattice of
(variant, d_r, d_c) cells and aggregate max/mean/min along each axis.

Cells are resumable: each completed cell leaves a JSON marker in the
state directory and is skipped on restart. Aggregates are always
recomputed from the raw cell records, so interrupt-and-resume yields
byte-identical output files.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .harness import TaskMixture, train
from .model import GateConfig, ModelConfig, TransformerModel
from .optim import OptimizerConfig
from .tasks import builtin_tasks
from .tensor import DimensionError

DEFAULT_VARIANTS = ("L2", "LG", "GL")


@dataclass(frozen=True)
class SweepPlan:
    variants: tuple = DEFAULT_VARIANTS
    d_r_values: tuple = (1, 2, 4, 8)
    d_c_values: tuple = (2, 4, 8, 16)
    base_config: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 200
    eval_every: int = 100
    batch_size: int = 8
    seeds: int = 1
    base_seed: int = 0
    task_sizes: tuple = (800, 400, 200, 100, 50)
    dev_size: int = 16
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def cells(self):
        """Deterministic lattice enumeration; the index is part of each
        cell's seed so results do not depend on execution order."""
        idx = 0
        for variant in self.variants:
            for d_r in self.d_r_values:
                for d_c in self.d_c_values:
                    for s in range(self.seeds):
                        yield idx, (variant, int(d_r), int(d_c), s)
                        idx += 1


@dataclass
class SweepResult:
    plan: SweepPlan
    cells: dict  # (variant, d_r, d_c, seed) -> best macro-average
    invalid: list = field(default_factory=list)

    def _cell_score(self, variant, d_r, d_c) -> Optional[float]:
        vals = [v for (vt, r, c, _s), v in self.cells.items()
                if vt == variant and r == d_r and c == d_c]
        return float(np.mean(vals)) if vals else None

    def axis_aggregate(self, variant: str, axis: str):
        """Rows (value, max, mean, min) aggregating over the other axis."""
        if axis not in ("d_r", "d_c"):
            raise ValueError(f"axis must be d_r or d_c, got {axis!r}")
        own = self.plan.d_r_values if axis == "d_r" else self.plan.d_c_values
        other = self.plan.d_c_values if axis == "d_r" else self.plan.d_r_values
        rows = []
        for v in own:
            scores = []
            for o in other:
                d_r, d_c = (v, o) if axis == "d_r" else (o, v)
                s = self._cell_score(variant, int(d_r), int(d_c))
                if s is not None:
                    scores.append(s)
            if scores:
                rows.append((int(v), max(scores), float(np.mean(scores)), min(scores)))
        return rows


def _cell_key(variant, d_r, d_c, seed) -> str:
    return f"{variant}_dr{d_r}_dc{d_c}_s{seed}"


def run_cell(plan: SweepPlan, variant, d_r, d_c, seed_idx, cell_index,
             out_dir=None):
    """Train one lattice cell and return its best dev macro-average."""
    gate = GateConfig(kind="hypergrid", variant=variant, d_r=d_r, d_c=d_c)
    config = replace(plan.base_config, gate=gate)  # validates divisibility
    model_seed = plan.base_seed + cell_index
    model = TransformerModel(config, seed=model_seed)
    mixture = TaskMixture(builtin_tasks(plan.base_seed, sizes=plan.task_sizes,
                                        dev_size=plan.dev_size))
    history, _ = train(model, mixture, plan.optimizer, plan.steps,
                       plan.eval_every, seed=model_seed, out_dir=out_dir,
                       batch_size=plan.batch_size)
    return max(r.macro_avg for r in history)


def run_sweep(plan: SweepPlan, state_dir: str, max_workers: int = 1,
              log=None) -> SweepResult:
    cell_dir = os.path.join(state_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    result = SweepResult(plan=plan, cells={})

    def marker_path(key):
        return os.path.join(cell_dir, key + ".json")

    todo = []
    for idx, (variant, d_r, d_c, s) in plan.cells():
        key = _cell_key(variant, d_r, d_c, s)
        mp = marker_path(key)
        if os.path.exists(mp):
            with open(mp) as f:
                rec = json.load(f)
            result.cells[(variant, d_r, d_c, s)] = float(rec["best_macro"])
            continue
        todo.append((idx, variant, d_r, d_c, s, key))

    def execute(item):
        idx, variant, d_r, d_c, s, key = item
        try:
            score = run_cell(plan, variant, d_r, d_c, s, idx,
                             out_dir=os.path.join(cell_dir, key))
        except DimensionError as e:
            return item, None, str(e)
        return item, score, None

    if max_workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(execute, todo))
    else:
        outcomes = [execute(item) for item in todo]

    for (idx, variant, d_r, d_c, s, key), score, err in outcomes:
        if err is not None:
            result.invalid.append({"cell": key, "error": err})
            if log is not None:
                log(f"skipping invalid cell {key}: {err}")
            continue
        rec = {"variant": variant, "d_r": d_r, "d_c": d_c, "seed": s,
               "best_macro": score}
        with open(marker_path(key), "w") as f:
            json.dump(rec, f, sort_keys=True)
        result.cells[(variant, d_r, d_c, s)] = score
        if log is not None:
            log(f"cell {key}: best macro {score:.4f}")
    return result


PLOT_HEADER = "value\tmax\tmean\tmin"
_AXIS_FILE = {"d_r": "fan_in", "d_c": "fan_out"}


def emit_plotdata(result: SweepResult, path: str):
    """One TSV per (variant, axis): columns value, max, mean, min."""
    os.makedirs(path, exist_ok=True)
    written = []
    for variant in result.plan.variants:
        for axis, suffix in _AXIS_FILE.items():
            fname = os.path.join(path, f"{variant}_{suffix}.tsv")
            with open(fname, "w") as f:
                f.write(PLOT_HEADER + "\n")
                for value, mx, mean, mn in result.axis_aggregate(variant, axis):
                    f.write(f"{value}\t{mx!r}\t{mean!r}\t{mn!r}\n")
            written.append(fname)
    return written


def parse_plotdata(fname: str):
    rows = []
    with open(fname) as f:
        header = f.readline().strip()
        if header != PLOT_HEADER:
            raise ValueError(f"{fname}: unexpected header {header!r}")
        for line in f:
            value, mx, mean, mn = line.strip().split("\t")
            rows.append((int(value), float(mx), float(mean), float(mn)))
    return rows
