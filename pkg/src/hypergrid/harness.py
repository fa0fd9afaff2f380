"""Multi-task co-training: proportionate mixture sampling, the training
loop, dev evaluation, and best-checkpoint selection by macro-average.

Metrics are appended to ``metrics.jsonl`` (one sorted-key JSON object
per eval) and contain only deterministic fields, so identical config and
seed reproduce the file byte for byte. Wall-clock timing goes to the
separate run summary.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import save_archive
from .optim import Adam, OptimizerConfig
from .tasks import TaskSpec


class NumericError(RuntimeError):
    """Non-finite loss or gradients during training."""


class TaskMixture:
    """Tasks with sampling weights proportional to train size."""

    def __init__(self, tasks):
        tasks = list(tasks)
        if not tasks:
            raise ValueError("mixture needs at least one task")
        prefixes = [t.prefix_id for t in tasks]
        if len(set(prefixes)) != len(prefixes):
            raise ValueError("task prefix ids must be unique")
        self.tasks = tasks
        sizes = np.array([t.train_size for t in tasks], dtype=np.float64)
        self.weights = sizes / sizes.sum()

    def __len__(self):
        return len(self.tasks)


def sample_batch(mixture: TaskMixture, batch_size: int, rng: np.random.Generator):
    """Draw examples i.i.d. with task probability equal to mixture weight."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    task_idx = rng.choice(len(mixture), size=batch_size, p=mixture.weights)
    batch = []
    for ti in task_idx:
        task = mixture.tasks[int(ti)]
        batch.append(task.train[int(rng.integers(task.train_size))])
    return batch


def evaluate(model, task: TaskSpec) -> float:
    """Exact-sequence-match accuracy over the task's dev set."""
    if task.dev_size == 0:
        raise ValueError(f"task {task.name} has an empty dev set")
    outs = model.greedy_decode_batch([src for src, _ in task.dev])
    hits = sum(out == list(tgt) for out, (_, tgt) in zip(outs, task.dev))
    return hits / task.dev_size


@dataclass
class RunMetrics:
    step: int
    scores: dict
    macro_avg: float
    params_added: int
    wall_s: float = 0.0

    def to_json_line(self) -> str:
        # wall-clock excluded: metrics files must be byte-deterministic
        return json.dumps({
            "step": self.step,
            "scores": self.scores,
            "macro_avg": self.macro_avg,
            "params_added": self.params_added,
        }, sort_keys=True)


def _eval_all(model, mixture, step, params_added, t0) -> RunMetrics:
    scores = {t.name: evaluate(model, t) for t in mixture.tasks}
    macro = float(np.mean(list(scores.values())))
    return RunMetrics(step=step, scores=scores, macro_avg=macro,
                      params_added=params_added, wall_s=time.monotonic() - t0)


def _diagnose_nonfinite(model, step):
    bad = []
    for name, p in model.named_parameters().items():
        if not np.all(np.isfinite(p.data)):
            bad.append(name)
        elif p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad.append(name + ".grad")
    blocks = ", ".join(bad) if bad else "loss only"
    raise NumericError(f"non-finite loss at step {step} (affected blocks: {blocks})")


def train(model, mixture: TaskMixture, opt_config: OptimizerConfig,
          steps: int, eval_every: int, seed: int = 0,
          out_dir: Optional[str] = None, batch_size: int = 16,
          log=None):
    """Train on mixture batches; keep the checkpoint with the best
    dev macro-average. Returns (metrics list, best state dict)."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if eval_every < 1:
        raise ValueError(f"eval_every must be >= 1, got {eval_every}")
    rng = np.random.default_rng([int(seed), 0xBA7C4])
    opt = Adam(model.named_parameters(), opt_config)
    params_added = model.added_param_count()
    metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        open(metrics_path, "w").close()

    history = []
    best_state = None
    best_macro = -1.0
    best_step = -1
    t0 = time.monotonic()
    model.training = True
    for step in range(1, steps + 1):
        batch = sample_batch(mixture, batch_size, rng)
        opt.zero_grad()
        loss = model.batch_loss(batch)
        if not np.isfinite(loss.data):
            _diagnose_nonfinite(model, step)
        loss.backward()
        opt.step()
        if step % eval_every == 0 or step == steps:
            model.training = False
            rec = _eval_all(model, mixture, step, params_added, t0)
            model.training = True
            history.append(rec)
            if metrics_path is not None:
                with open(metrics_path, "a") as f:
                    f.write(rec.to_json_line() + "\n")
            if rec.macro_avg > best_macro:
                best_macro = rec.macro_avg
                best_step = step
                best_state = model.state_dict()
            if log is not None:
                log(f"step {rec.step}: loss {float(loss.data):.4f} "
                    f"macro_avg {rec.macro_avg:.4f}")
    model.training = False
    if best_state is None:  # no eval fired (cannot happen: step == steps fires)
        best_state = model.state_dict()
        best_step = steps
    if out_dir is not None:
        save_archive(os.path.join(out_dir, "best.ckpt"), best_state)
        summary = {
            "best_step": best_step,
            "best_macro_avg": best_macro,
            "params_added": params_added,
            "param_count": model.param_count(),
            "steps": steps,
            "wall_s": time.monotonic() - t0,
            "final_scores": history[-1].scores if history else {},
        }
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return history, best_state
