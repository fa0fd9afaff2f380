"""Small text-to-text encoder-decoder transformer with gated FFN-2.

Pre-layer-norm blocks, learned positional embeddings, no biases in the
attention projections, trainable embeddings, zero-initialized output
projection. The second position-wise FFN projection (after ReLU) can be
replaced by a grid-gated projection; the output-gating baseline instead
gates the post-ReLU activations before the plain second projection.

Gate conditioning uses the prefix token of each transformer layer's
*input* (pre-attention), so at layer 0 the gate depends only on token 0.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gates import HyperGridLayer, ProjectionDims, param_cost
from .outgate import OutGateLayer
from .tensor import (
    DimensionError,
    Tensor,
    add,
    cross_entropy_logits,
    dropout,
    embedding,
    layernorm,
    linear,
    matmul,
    matmul_nt,
    multihead_attention_packed,
    no_grad,
    packed_gated_linear,
    relu,
    repeat_cols,
    row,
    sigmoid,
    take_rows,
)

BOS = 1
EOS = 2


@dataclass(frozen=True)
class GateConfig:
    kind: str = "none"  # none | hypergrid | outgate
    variant: str = "LG"  # L | L2 | LG | GL (hypergrid only)
    d_r: int = 4
    d_c: int = 8
    n: Optional[int] = None  # variant L reduced width; defaults to d_c
    mode: str = "full"  # outgate: full | blocked
    block_n: int = 16  # outgate blocked gate width
    encoder: bool = True
    decoder: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "hypergrid", "outgate"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "hypergrid" and self.variant not in ("L", "L2", "LG", "GL"):
            raise ValueError(f"unknown gate variant {self.variant!r}")
        if self.kind == "outgate" and self.mode not in ("full", "blocked"):
            raise ValueError(f"unknown outgate mode {self.mode!r}")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    d_m: int = 64
    d_f: int = 256
    heads: int = 2
    layers_enc: int = 2
    layers_dec: int = 2
    max_len: int = 32
    dropout: float = 0.0
    gate: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self):
        if self.d_m % self.heads != 0:
            raise DimensionError(f"d_m={self.d_m} must be divisible by heads={self.heads}")
        if self.d_f < self.d_m:
            raise DimensionError(f"d_f={self.d_f} must be >= d_m={self.d_m}")
        # gated matrix orientation: FFN-2 has fan-in d_f and fan-out d_m
        if self.gate.kind == "hypergrid":
            self.gate_dims()  # raises DimensionError on bad divisibility
        elif self.gate.kind == "outgate" and self.gate.mode == "blocked":
            if self.d_f % self.gate.block_n != 0:
                raise DimensionError(
                    f"outgate block width {self.gate.block_n} must divide d_f={self.d_f}"
                )

    def gate_dims(self) -> ProjectionDims:
        g = self.gate
        n = g.n if g.n is not None else g.d_c
        return ProjectionDims(
            d_m=self.d_f, d_f=self.d_m, d_r=g.d_r, d_c=g.d_c,
            n=n if g.variant == "L" else None, cond=self.d_m,
        )


class _Layer:
    """Parameter bundle for one encoder or decoder layer."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 gated: bool, cross: bool):
        d_m, d_f = cfg.d_m, cfg.d_f
        std = d_m ** -0.5

        def lin(shape, s=std):
            return Tensor(rng.normal(0.0, s, shape), requires_grad=True)

        def ln_pair():
            return (Tensor(np.ones(d_m), requires_grad=True),
                    Tensor(np.zeros(d_m), requires_grad=True))

        self.wq, self.wk, self.wv, self.wo = (lin((d_m, d_m)) for _ in range(4))
        self.ln_attn = ln_pair()
        self.cross = cross
        if cross:
            self.wq2, self.wk2, self.wv2, self.wo2 = (lin((d_m, d_m)) for _ in range(4))
            self.ln_cross = ln_pair()
        self.ln_ffn = ln_pair()
        self.hypergrid: Optional[HyperGridLayer] = None
        self.outgate: Optional[OutGateLayer] = None
        if gated and cfg.gate.kind == "hypergrid":
            self.w1 = lin((d_m, d_f))
            self.b1 = Tensor(np.zeros(d_f), requires_grad=True)
            self.hypergrid = HyperGridLayer(cfg.gate.variant, cfg.gate_dims(), rng)
            # FFN-2 host weights live inside the gate layer
            self.hypergrid.W.data[:] = rng.normal(0.0, d_f ** -0.5, (d_f, d_m))
            self.w2, self.b2 = self.hypergrid.W, self.hypergrid.b
        elif gated and cfg.gate.kind == "outgate":
            mode = "full" if cfg.gate.mode == "full" else cfg.gate.block_n
            # FFN-1 host weights live inside the gate layer
            self.outgate = OutGateLayer(d_m, d_f, mode, rng, cond=d_m)
            self.w1, self.b1 = self.outgate.W, self.outgate.b
            self.w2 = lin((d_f, d_m), d_f ** -0.5)
            self.b2 = Tensor(np.zeros(d_m), requires_grad=True)
        else:
            self.w1 = lin((d_m, d_f))
            self.b1 = Tensor(np.zeros(d_f), requires_grad=True)
            self.w2 = lin((d_f, d_m), d_f ** -0.5)
            self.b2 = Tensor(np.zeros(d_m), requires_grad=True)

    def ffn(self, z: Tensor, conds: Tensor, lens, seg_idx) -> Tensor:
        """FFN on packed normalized rows z; conds holds one gate
        conditioning vector per segment."""
        if self.outgate is not None:
            og = self.outgate
            a = relu(linear(z, og.W, og.b))
            gates = sigmoid(matmul_nt(conds, og.U))
            per_row = take_rows(gates, seg_idx)
            return linear(mul_packed_gate(a, per_row), self.w2, self.b2)
        a = relu(linear(z, self.w1, self.b1))
        hg = self.hypergrid
        if hg is not None:
            u, v = hg.gate_factors(conds)
            return packed_gated_linear(a, hg.W, hg.b, u, v, lens,
                                       override=hg.gate_override)
        return linear(a, self.w2, self.b2)


def mul_packed_gate(a, per_row):
    """Elementwise output gate: each activation row times its (column
    block-expanded) gate row."""
    from .tensor import mul
    rep = a.data.shape[1] // per_row.data.shape[1]
    return mul(a, repeat_cols(per_row, rep))


def _attention(x, wq, wk, wv, wo, heads, lens, kv=None, kv_lens=None, causal=False):
    q = matmul(x, wq)
    src = x if kv is None else kv
    k = matmul(src, wk)
    v = matmul(src, wv)
    a = multihead_attention_packed(q, k, v, heads, lens,
                                   kv_lens=kv_lens, causal=causal)
    return matmul(a, wo)


class TransformerModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d_m = config.d_m
        self.tok_embed = Tensor(rng.normal(0.0, d_m ** -0.5, (config.vocab_size, d_m)),
                                requires_grad=True)
        self.pos_embed = Tensor(rng.normal(0.0, d_m ** -0.5, (config.max_len, d_m)),
                                requires_grad=True)
        gated = config.gate.kind != "none"
        self.enc_layers = [
            _Layer(config, rng, gated and config.gate.encoder, cross=False)
            for _ in range(config.layers_enc)
        ]
        self.dec_layers = [
            _Layer(config, rng, gated and config.gate.decoder, cross=True)
            for _ in range(config.layers_dec)
        ]
        self.ln_enc = (Tensor(np.ones(d_m), requires_grad=True),
                       Tensor(np.zeros(d_m), requires_grad=True))
        self.ln_dec = (Tensor(np.ones(d_m), requires_grad=True),
                       Tensor(np.zeros(d_m), requires_grad=True))
        # zero init: an untrained model emits uniform logits
        self.out_proj = Tensor(np.zeros((d_m, config.vocab_size)), requires_grad=True)
        self.training = False
        self._drop_rng = np.random.default_rng(seed + 104729)

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        params["embed.tok"] = self.tok_embed
        params["embed.pos"] = self.pos_embed
        n_enc = len(self.enc_layers)
        for stack, layers, base in (("encoder", self.enc_layers, 0),
                                    ("decoder", self.dec_layers, n_enc)):
            for i, ly in enumerate(layers):
                p = f"{stack}.{i}"
                for nm in ("wq", "wk", "wv", "wo"):
                    params[f"{p}.attn.{nm}"] = getattr(ly, nm)
                params[f"{p}.ln_attn.g"], params[f"{p}.ln_attn.b"] = ly.ln_attn
                if ly.cross:
                    for nm in ("wq2", "wk2", "wv2", "wo2"):
                        params[f"{p}.cross.{nm}"] = getattr(ly, nm)
                    params[f"{p}.ln_cross.g"], params[f"{p}.ln_cross.b"] = ly.ln_cross
                params[f"{p}.ln_ffn.g"], params[f"{p}.ln_ffn.b"] = ly.ln_ffn
                params[f"{p}.ffn.w1"] = ly.w1
                params[f"{p}.ffn.b1"] = ly.b1
                params[f"{p}.ffn.w2"] = ly.w2
                params[f"{p}.ffn.b2"] = ly.b2
                if ly.hypergrid is not None:
                    for nm, t in ly.hypergrid.hyper_parameters().items():
                        params[f"hypergrid.{base + i}.{nm}"] = t
                if ly.outgate is not None:
                    params[f"outgate.{base + i}.U"] = ly.outgate.U
        params["final.ln_enc.g"], params["final.ln_enc.b"] = self.ln_enc
        params["final.ln_dec.g"], params["final.ln_dec.b"] = self.ln_dec
        params["out_proj"] = self.out_proj
        return params

    def param_count(self) -> int:
        return sum(t.data.size for t in self.named_parameters().values())

    def added_param_count(self) -> int:
        """Trainable parameters added by the gate layers."""
        total = 0
        for ly in self.enc_layers + self.dec_layers:
            if ly.hypergrid is not None:
                total += param_cost(ly.hypergrid.variant, ly.hypergrid.dims)
            if ly.outgate is not None:
                total += ly.outgate.param_cost()
        return total

    def gate_layers(self):
        out = []
        n_enc = len(self.enc_layers)
        for stack, layers, base in (("encoder", self.enc_layers, 0),
                                    ("decoder", self.dec_layers, n_enc)):
            for i, ly in enumerate(layers):
                if ly.hypergrid is not None:
                    out.append((f"hypergrid.{base + i}", ly.hypergrid))
                if ly.outgate is not None:
                    out.append((f"outgate.{base + i}", ly.outgate))
        return out

    def set_gate_override(self, value):
        """Test hook: force every gate grid to a constant (None to clear)."""
        for _, layer in self.gate_layers():
            if isinstance(layer, HyperGridLayer):
                layer.gate_override = value

    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state(self, state: dict):
        params = self.named_parameters()
        for name, t in params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing tensor {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {t.data.shape}"
                )
            t.data[:] = arr

    # -- forward ------------------------------------------------------------

    def _check_ids(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.shape[0] < 1:
            raise DimensionError("token sequence must be a nonempty 1-D id list")
        if ids.shape[0] > self.config.max_len:
            raise DimensionError(
                f"sequence length {ids.shape[0]} exceeds max_len {self.config.max_len}"
            )
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            bad = ids[(ids < 0) | (ids >= self.config.vocab_size)][0]
            raise ValueError(f"unknown token id {bad} for vocab of {self.config.vocab_size}")
        return ids

    def _embed(self, seqs):
        """Embed a list of id sequences packed row-wise into one matrix."""
        ids_cat = np.concatenate(seqs)
        pos_cat = np.concatenate([np.arange(len(s)) for s in seqs])
        return add(embedding(self.tok_embed, ids_cat),
                   embedding(self.pos_embed, pos_cat))

    def _drop(self, t: Tensor) -> Tensor:
        if self.training and self.config.dropout > 0.0:
            return dropout(t, self.config.dropout, self._drop_rng)
        return t

    def _log_gates(self, ly: _Layer, conds: Tensor, gate_log, gate_name):
        """Record the segment-0 gate for the hook (single-sequence calls)."""
        cond0 = Tensor(conds.data[0])
        with no_grad():
            if ly.hypergrid is not None:
                gate_log[gate_name] = ly.hypergrid.compute_gate(cond0).grid.data.copy()
            if ly.outgate is not None:
                gate_log[gate_name] = ly.outgate.gate_vector(cond0).data.copy()

    def _run_layer(self, ly: _Layer, x: Tensor, lens, starts, seg_idx,
                   enc_out=None, enc_lens=None, causal=False,
                   gate_log=None, gate_name=None):
        conds = take_rows(x, starts)  # layer-input prefix drives the gate
        xn = layernorm(x, *ly.ln_attn)
        h = add(x, self._drop(_attention(xn, ly.wq, ly.wk, ly.wv, ly.wo,
                                         self.config.heads, lens, causal=causal)))
        if ly.cross:
            h = add(h, self._drop(_attention(layernorm(h, *ly.ln_cross),
                                             ly.wq2, ly.wk2, ly.wv2, ly.wo2,
                                             self.config.heads, lens,
                                             kv=enc_out, kv_lens=enc_lens)))
        if gate_log is not None:
            self._log_gates(ly, conds, gate_log, gate_name)
        return add(h, self._drop(ly.ffn(layernorm(h, *ly.ln_ffn),
                                        conds, lens, seg_idx)))

    @staticmethod
    def _segments(seqs):
        lens = [len(s) for s in seqs]
        offs = np.concatenate([[0], np.cumsum(lens)])
        starts = offs[:-1]
        seg_idx = np.repeat(np.arange(len(seqs)), lens)
        return lens, starts, seg_idx

    def encode_batch(self, seq_list, gate_log=None):
        """Packed encoder pass over a list of sequences; returns the packed
        representation and the per-sequence lengths."""
        seqs = [self._check_ids(s) for s in seq_list]
        lens, starts, seg_idx = self._segments(seqs)
        x = self._embed(seqs)
        for i, ly in enumerate(self.enc_layers):
            x = self._run_layer(ly, x, lens, starts, seg_idx,
                                gate_log=gate_log, gate_name=f"encoder.{i}")
        return layernorm(x, *self.ln_enc), lens

    def decode_batch(self, enc_out, enc_lens, prefix_list, gate_log=None):
        """Packed causally-masked decoder pass; returns logits for every
        position of every prefix, packed row-wise."""
        seqs = [self._check_ids(s) for s in prefix_list]
        if len(seqs) != len(enc_lens):
            raise DimensionError("decoder batch size differs from encoder batch")
        lens, starts, seg_idx = self._segments(seqs)
        x = self._embed(seqs)
        n_enc = len(self.enc_layers)
        for i, ly in enumerate(self.dec_layers):
            x = self._run_layer(ly, x, lens, starts, seg_idx,
                                enc_out=enc_out, enc_lens=enc_lens, causal=True,
                                gate_log=gate_log, gate_name=f"decoder.{n_enc + i}")
        return matmul(layernorm(x, *self.ln_dec), self.out_proj), lens

    def encode(self, tokens, gate_log=None) -> Tensor:
        return self.encode_batch([tokens], gate_log=gate_log)[0]

    def decode(self, enc_out: Tensor, prefix_ids, gate_log=None) -> Tensor:
        """Logits for every position of the (causally masked) prefix."""
        logits, _ = self.decode_batch(enc_out, [enc_out.data.shape[0]],
                                      [prefix_ids], gate_log=gate_log)
        return logits

    def decode_step(self, enc_out: Tensor, prefix_ids) -> Tensor:
        """Next-token logits after the given decoder prefix."""
        prefix_ids = list(prefix_ids)
        if len(prefix_ids) == 0:
            raise DimensionError("decoder prefix must start with the BOS token")
        logits = self.decode(enc_out, prefix_ids)
        return row(logits, len(prefix_ids) - 1)

    def loss(self, src_ids, tgt_ids) -> Tensor:
        """Teacher-forced mean cross-entropy for one example."""
        return self.batch_loss([(src_ids, tgt_ids)])

    def batch_loss(self, pairs) -> Tensor:
        """Mean over examples of each example's mean token cross-entropy."""
        pairs = list(pairs)
        srcs = [list(src) for src, _ in pairs]
        dec_ins = [[BOS] + list(tgt) for _, tgt in pairs]
        labels = np.concatenate([list(tgt) + [EOS] for _, tgt in pairs])
        enc_out, enc_lens = self.encode_batch(srcs)
        logits, lens = self.decode_batch(enc_out, enc_lens, dec_ins)
        weights = np.repeat(1.0 / (len(pairs) * np.asarray(lens, float)), lens)
        return cross_entropy_logits(logits, labels, weights=weights)

    def greedy_decode_batch(self, src_list, max_steps: Optional[int] = None):
        """Deterministic argmax decoding for a batch of sources; returns
        one id list per source, up to (excluding) EOS."""
        if max_steps is None:
            max_steps = self.config.max_len - 1
        with no_grad():
            enc_out, enc_lens = self.encode_batch(src_list)
            enc_offs = np.concatenate([[0], np.cumsum(enc_lens)])
            prefixes = [[BOS] for _ in src_list]
            active = list(range(len(prefixes)))
            for _ in range(max_steps):
                enc_sub = Tensor(np.concatenate(
                    [enc_out.data[enc_offs[i]:enc_offs[i + 1]] for i in active]))
                logits, lens = self.decode_batch(
                    enc_sub, [enc_lens[i] for i in active],
                    [prefixes[i] for i in active])
                last = np.cumsum(lens) - 1
                still = []
                for j, i in enumerate(active):
                    nxt = int(np.argmax(logits.data[last[j]]))
                    if nxt != EOS and len(prefixes[i]) < self.config.max_len:
                        prefixes[i].append(nxt)
                        still.append(i)
                active = still
                if not active:
                    break
        return [p[1:] for p in prefixes]

    def greedy_decode(self, src_ids, max_steps: Optional[int] = None):
        """Deterministic argmax decoding; returns ids up to (excluding) EOS."""
        return self.greedy_decode_batch([src_ids], max_steps=max_steps)[0]
