"""Parameter-cost audit for the gate variants at a given model geometry."""

from __future__ import annotations

from .gates import VARIANTS, param_cost, param_cost_stated
from .model import ModelConfig


def gated_layer_count(cfg: ModelConfig) -> int:
    n = 0
    if cfg.gate.encoder:
        n += cfg.layers_enc
    if cfg.gate.decoder:
        n += cfg.layers_dec
    return n


def base_param_count(cfg: ModelConfig) -> int:
    from dataclasses import replace
    from .model import GateConfig, TransformerModel
    ungated = replace(cfg, gate=GateConfig(kind="none"))
    return TransformerModel(ungated, seed=0).param_count()


def audit_rows(cfg: ModelConfig):
    """One row per variant: allocated cost, published closed-form cost,
    totals and added/base ratio. The two costs differ for L2 and GL
    because the published forms charge the column map at host-fan-in x
    d_c while the allocated map takes a conditioning vector."""
    if cfg.gate.kind == "none":
        return [{"variant": "None", "per_layer": 0, "per_layer_stated": 0,
                 "total": 0, "ratio": 0.0, "mismatch": False}]
    layers = gated_layer_count(cfg)
    base = base_param_count(cfg)
    gate_cfg = cfg.gate
    rows = []
    if cfg.gate.kind == "outgate":
        n = cfg.d_f if gate_cfg.mode == "full" else gate_cfg.block_n
        per = cfg.d_m * n
        rows.append({"variant": f"OutGate({gate_cfg.mode})", "per_layer": per,
                     "per_layer_stated": per, "total": per * layers,
                     "ratio": per * layers / base, "mismatch": False})
        return rows
    from dataclasses import replace as dc_replace
    for variant in VARIANTS:
        vcfg = dc_replace(cfg, gate=dc_replace(gate_cfg, kind="hypergrid",
                                               variant=variant))
        dims = vcfg.gate_dims()
        per = param_cost(variant, dims)
        stated = param_cost_stated(variant, dims)
        rows.append({
            "variant": variant,
            "per_layer": per,
            "per_layer_stated": stated,
            "total": per * layers,
            "ratio": per * layers / base,
            "mismatch": per != stated,
        })
    return rows


def format_audit(cfg: ModelConfig) -> str:
    rows = audit_rows(cfg)
    lines = [f"{'variant':10s} {'per-layer':>10s} {'stated':>10s} "
             f"{'total':>10s} {'added/base':>11s}"]
    for r in rows:
        flag = "  (differs from published closed form)" if r["mismatch"] else ""
        lines.append(f"{r['variant']:10s} {r['per_layer']:10d} "
                     f"{r['per_layer_stated']:10d} {r['total']:10d} "
                     f"{r['ratio']:11.6f}{flag}")
    return "\n".join(lines)
