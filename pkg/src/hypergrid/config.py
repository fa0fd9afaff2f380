"""Shared config schema for all CLI subcommands.

A single JSON file covers model, gate, tasks, optimizer, training, grid
sweep and gradient-check settings. Dotted --override paths apply after
the file parse; unknown keys are hard errors.
"""

from __future__ import annotations

import copy
import json

from .harness import TaskMixture
from .model import GateConfig, ModelConfig
from .optim import OptimizerConfig
from .sweep import SweepPlan
from .tasks import builtin_tasks
from .tensor import DimensionError


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "out_dir": None,
    "model": {
        "vocab_size": 64,
        "d_m": 64,
        "d_f": 256,
        "heads": 2,
        "layers_enc": 2,
        "layers_dec": 2,
        "max_len": 32,
        "dropout": 0.0,
    },
    "gate": {
        "kind": "none",        # none | hypergrid | outgate
        "variant": "LG",       # L | L2 | LG | GL
        "d_r": 4,
        "d_c": 8,
        "n": None,             # variant L gate width; null -> d_c
        "mode": "full",        # outgate: full | blocked
        "block_n": 16,
        "encoder": True,
        "decoder": True,
    },
    "tasks": {
        "sizes": [8000, 4000, 2000, 1000, 500],
        "dev_size": 32,
        "min_len": 2,
        "max_len": 6,
    },
    "optimizer": {
        "lr": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "clip_norm": 1.0,
    },
    "train": {
        "steps": 5000,
        "batch_size": 16,
        "eval_every": 250,
    },
    "gradcheck": {
        "budget": 32,
        "jitter": 0.05,
        "seed": 0,
    },
    "sweep": {
        "variants": ["L2", "LG", "GL"],
        "d_r": [1, 2, 4, 8],
        "d_c": [2, 4, 8, 16],
        "steps": 100,
        "eval_every": 50,
        "batch_size": 8,
        "seeds": 1,
        "task_sizes": [800, 400, 200, 100, 50],
        "dev_size": 16,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, extra: dict, path: str = ""):
    for key, value in extra.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, here)
        else:
            base[key] = value


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        _merge(cfg, loaded)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings allowed, e.g. gate.variant=LG
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def flatten(cfg: dict, path: str = ""):
    items = []
    for key, value in cfg.items():
        here = f"{path}.{key}" if path else key
        if isinstance(value, dict):
            items.extend(flatten(value, here))
        else:
            items.append((here, value))
    return items


# -- object builders --------------------------------------------------------

def build_model_config(cfg: dict) -> ModelConfig:
    g = cfg["gate"]
    m = cfg["model"]
    try:
        gate = GateConfig(
            kind=g["kind"], variant=g["variant"], d_r=int(g["d_r"]),
            d_c=int(g["d_c"]), n=None if g["n"] is None else int(g["n"]),
            mode=g["mode"], block_n=int(g["block_n"]),
            encoder=bool(g["encoder"]), decoder=bool(g["decoder"]),
        )
        return ModelConfig(
            vocab_size=int(m["vocab_size"]), d_m=int(m["d_m"]),
            d_f=int(m["d_f"]), heads=int(m["heads"]),
            layers_enc=int(m["layers_enc"]), layers_dec=int(m["layers_dec"]),
            max_len=int(m["max_len"]), dropout=float(m["dropout"]), gate=gate,
        )
    except (DimensionError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid model/gate config: {e}") from e


def build_mixture(cfg: dict) -> TaskMixture:
    t = cfg["tasks"]
    try:
        tasks = builtin_tasks(int(cfg["seed"]), sizes=tuple(t["sizes"]),
                              dev_size=int(t["dev_size"]),
                              min_len=int(t["min_len"]), max_len=int(t["max_len"]))
        return TaskMixture(tasks)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid tasks config: {e}") from e


def build_optimizer_config(cfg: dict) -> OptimizerConfig:
    o = cfg["optimizer"]
    try:
        return OptimizerConfig(
            lr=float(o["lr"]), beta1=float(o["beta1"]), beta2=float(o["beta2"]),
            eps=float(o["eps"]),
            clip_norm=None if o["clip_norm"] is None else float(o["clip_norm"]),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid optimizer config: {e}") from e


def build_sweep_plan(cfg: dict) -> SweepPlan:
    s = cfg["sweep"]
    base = dict(cfg, gate=dict(cfg["gate"], kind="none"))
    try:
        return SweepPlan(
            variants=tuple(s["variants"]),
            d_r_values=tuple(int(v) for v in s["d_r"]),
            d_c_values=tuple(int(v) for v in s["d_c"]),
            base_config=build_model_config(base),
            steps=int(s["steps"]), eval_every=int(s["eval_every"]),
            batch_size=int(s["batch_size"]), seeds=int(s["seeds"]),
            base_seed=int(cfg["seed"]),
            task_sizes=tuple(int(v) for v in s["task_sizes"]),
            dev_size=int(s["dev_size"]),
            optimizer=build_optimizer_config(cfg),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid sweep config: {e}") from e
