"""Synthetic sequence tasks sharing one small vocabulary.

Each task maps an input token sequence (prefix token first) to a target
sequence. Train sizes are deliberately skewed to stress multi-task
co-training with disproportionate data. Train and dev examples come from
disjoint seeded rng streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAD = 0
BOS = 1
EOS = 2

PREFIX_COPY = 3
PREFIX_REVERSE = 4
PREFIX_SORT = 5
PREFIX_PARITY = 6
PREFIX_MODSUM = 7

ODD = 8
EVEN = 9

DIGIT_BASE = 10  # token id of digit 0; digits 0..9 occupy 10..19

DEFAULT_SIZES = (8000, 4000, 2000, 1000, 500)


def digit_token(d: int) -> int:
    return DIGIT_BASE + int(d)


@dataclass
class TaskSpec:
    name: str
    prefix_id: int
    train: list = field(repr=False)
    dev: list = field(repr=False)
    metric: str = "exact_match"

    @property
    def train_size(self) -> int:
        return len(self.train)

    @property
    def dev_size(self) -> int:
        return len(self.dev)


def _payload(rng, min_len, max_len):
    k = int(rng.integers(min_len, max_len + 1))
    return [int(d) for d in rng.integers(0, 10, size=k)]


def _make_pairs(rng, count, prefix_id, target_fn, min_len, max_len):
    pairs = []
    for _ in range(count):
        digits = _payload(rng, min_len, max_len)
        src = [prefix_id] + [digit_token(d) for d in digits]
        pairs.append((src, target_fn(digits)))
    return pairs


_TASK_DEFS = [
    ("copy", PREFIX_COPY, lambda d: [digit_token(x) for x in d]),
    ("reverse", PREFIX_REVERSE, lambda d: [digit_token(x) for x in reversed(d)]),
    ("sort", PREFIX_SORT, lambda d: [digit_token(x) for x in sorted(d)]),
    ("parity", PREFIX_PARITY, lambda d: [ODD if sum(d) % 2 else EVEN]),
    ("modsum", PREFIX_MODSUM, lambda d: [digit_token(sum(d) % 10)]),
]


def builtin_tasks(seed: int, sizes=DEFAULT_SIZES, dev_size: int = 32,
                  min_len: int = 2, max_len: int = 6):
    """The five built-in tasks with skewed train sizes."""
    if len(sizes) != len(_TASK_DEFS):
        raise ValueError(f"expected {len(_TASK_DEFS)} sizes, got {len(sizes)}")
    tasks = []
    for idx, ((name, prefix_id, target_fn), size) in enumerate(zip(_TASK_DEFS, sizes)):
        train_rng = np.random.default_rng([int(seed), idx, 0])
        dev_rng = np.random.default_rng([int(seed), idx, 1])
        tasks.append(TaskSpec(
            name=name,
            prefix_id=prefix_id,
            train=_make_pairs(train_rng, int(size), prefix_id, target_fn,
                              min_len, max_len),
            dev=_make_pairs(dev_rng, int(dev_size), prefix_id, target_fn,
                            min_len, max_len),
        ))
    return tasks
