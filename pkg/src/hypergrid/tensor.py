"""Dense float64 tensors with tape-based reverse-mode autodiff.

Everything is a row-major numpy float64 array. Binary elementwise ops
require exactly matching shapes: broadcasting must be materialized
through an explicit op (add_bias, broadcast_rows, block_expand) so that
shape bugs fail loudly instead of silently broadcasting.

Set CHECK_FINITE = True to validate every op output for NaN/Inf.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class DimensionError(ValueError):
    """Raised when tensor shapes or ranks do not line up."""


CHECK_FINITE = False

# grad mode is per-thread: parallel sweep workers evaluate under no_grad
# while other workers are mid-training step
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    prev = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def accumulate_grad(self, g, own=False):
        # own=True: g is a freshly allocated array the caller relinquishes
        if self.grad is None:
            self.grad = g if own else np.array(g)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Reverse-mode sweep from a scalar. Repeated calls accumulate."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward):
    """Build an op result, recording the tape edge when grads are on."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}; "
            "broadcasting must be materialized explicitly"
        )


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects rank-2 inputs, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree, {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T, own=True)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g, own=True)

    return _result(out_data, (a, b), backward)


def matmul_nt(a, b):
    """a @ b.T without materializing the transpose."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul_nt expects rank-2 inputs, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[1]:
        raise DimensionError(
            f"matmul_nt: inner dimensions disagree, {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data.T

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data, own=True)
        if b.requires_grad:
            b.accumulate_grad(g.T @ a.data, own=True)

    return _result(out_data, (a, b), backward)


def matvec(m, v):
    if m.data.ndim != 2 or v.data.ndim != 1:
        raise DimensionError(
            f"matvec expects matrix and vector, got {m.data.shape} and {v.data.shape}"
        )
    if m.data.shape[1] != v.data.shape[0]:
        raise DimensionError(
            f"matvec: inner dimensions disagree, {m.data.shape} vs {v.data.shape}"
        )
    out_data = m.data @ v.data

    def backward(g):
        if m.requires_grad:
            m.accumulate_grad(np.outer(g, v.data))
        if v.requires_grad:
            v.accumulate_grad(m.data.T @ g)

    return _result(out_data, (m, v), backward)


def outer(u, v):
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise DimensionError(
            f"outer expects rank-1 inputs, got {u.data.shape} and {v.data.shape}"
        )
    out_data = np.outer(u.data, v.data)

    def backward(g):
        if u.requires_grad:
            u.accumulate_grad(g @ v.data)
        if v.requires_grad:
            v.accumulate_grad(g.T @ u.data)

    return _result(out_data, (u, v), backward)


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects rank-2, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return _result(a.data.T.copy(), (a,), backward)


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    _check_same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    _check_same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    _check_same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data, own=True)
        if b.requires_grad:
            b.accumulate_grad(g * a.data, own=True)

    return _result(a.data * b.data, (a, b), backward)


def scale(a, c):
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * c, own=True)

    return _result(a.data * c, (a,), backward)


def add_scalar(a, c):
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)

    return _result(a.data + c, (a,), backward)


def sigmoid(a):
    x = a.data
    # branch on sign for numerical stability
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * s * (1.0 - s), own=True)

    return _result(s, (a,), backward)


def relu(a):
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0), own=True)

    return _result(out_data, (a,), backward)


def dropout(a, rate, rng):
    if rate <= 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return _result(a.data * mask, (a,), backward)


# ---------------------------------------------------------------------------
# shape / selection

def block_expand(g, row_rep, col_rep):
    """Repeat each entry of a p x q grid over a row_rep x col_rep block."""
    if g.data.ndim != 2:
        raise DimensionError(f"block_expand expects rank-2, got {g.data.shape}")
    row_rep = int(row_rep)
    col_rep = int(col_rep)
    if row_rep < 1 or col_rep < 1:
        raise DimensionError("block_expand repeats must be >= 1")
    p, q = g.data.shape
    out_data = np.empty((p * row_rep, q * col_rep))
    out_data.reshape(p, row_rep, q, col_rep)[...] = g.data[:, None, :, None]

    def backward(up):
        if g.requires_grad:
            g.accumulate_grad(
                up.reshape(p, row_rep, q, col_rep).sum(axis=(1, 3)), own=True
            )

    return _result(out_data, (g,), backward)


def row(a, i):
    if a.data.ndim != 2:
        raise DimensionError(f"row expects rank-2, got {a.data.shape}")
    i = int(i)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[i] = g
            a.accumulate_grad(full)

    return _result(a.data[i].copy(), (a,), backward)


def rows(a, start, stop):
    if a.data.ndim != 2:
        raise DimensionError(f"rows expects rank-2, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a.accumulate_grad(full)

    return _result(a.data[start:stop].copy(), (a,), backward)


def cols(a, start, stop):
    if a.data.ndim != 2:
        raise DimensionError(f"cols expects rank-2, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a.accumulate_grad(full)

    return _result(a.data[:, start:stop].copy(), (a,), backward)


def concat_cols(parts):
    parts = list(parts)
    widths = [p.data.shape[1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate_grad(g[:, off:off + w])
            off += w

    return _result(out_data, tuple(parts), backward)


def as_row(v):
    """Reshape a length-q vector into a 1 x q matrix."""
    if v.data.ndim != 1:
        raise DimensionError(f"as_row expects rank-1, got {v.data.shape}")

    def backward(g):
        if v.requires_grad:
            v.accumulate_grad(g[0])

    return _result(v.data[None, :].copy(), (v,), backward)


def broadcast_rows(v, n):
    """Materialize a length-q vector as an n x q matrix (explicit broadcast)."""
    if v.data.ndim != 1:
        raise DimensionError(f"broadcast_rows expects rank-1, got {v.data.shape}")
    out_data = np.tile(v.data, (int(n), 1))

    def backward(g):
        if v.requires_grad:
            v.accumulate_grad(g.sum(axis=0))

    return _result(out_data, (v,), backward)


def add_bias(x, b):
    """x (m x n) + b (n,) broadcast over rows; the one sanctioned broadcast."""
    if x.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError(
            f"add_bias expects matrix and vector, got {x.data.shape} and {b.data.shape}"
        )
    if x.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"add_bias: width mismatch {x.data.shape} vs {b.data.shape}"
        )

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    return _result(x.data + b.data, (x, b), backward)


def linear(x, w, b):
    """x @ w + b in one tape node."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError(
            f"linear expects (matrix, matrix, vector), got "
            f"{x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"linear: shapes {x.data.shape} @ {w.data.shape} + {b.data.shape}"
        )
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T, own=True)
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ g, own=True)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0), own=True)

    return _result(out_data, (x, w, b), backward)


def block_gated_linear(x, w, b, grid):
    """x @ ((1 + expand(grid)) * w) + b in one tape node.

    grid is a p x q gate whose entries each scale one (d_in/p) x (d_out/q)
    block of w multiplicatively around 1. Equivalent to block_expand +
    add_scalar + mul + linear, but the expanded gate is never stored.
    """
    if x.data.ndim != 2 or w.data.ndim != 2 or grid.data.ndim != 2:
        raise DimensionError(
            f"block_gated_linear expects matrices, got "
            f"{x.data.shape}, {w.data.shape}, {grid.data.shape}"
        )
    d_in, d_out = w.data.shape
    p, q = grid.data.shape
    if d_in % p != 0 or d_out % q != 0:
        raise DimensionError(
            f"block_gated_linear: grid {grid.data.shape} does not tile {w.data.shape}"
        )
    if x.data.shape[1] != d_in or b.data.shape != (d_out,):
        raise DimensionError(
            f"block_gated_linear: shapes {x.data.shape} @ {w.data.shape} + {b.data.shape}"
        )
    rr, cc = d_in // p, d_out // q
    gate = 1.0 + grid.data[:, None, :, None]
    w_eff = (w.data.reshape(p, rr, q, cc) * gate).reshape(d_in, d_out)
    out_data = x.data @ w_eff + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w_eff.T, own=True)
        if w.requires_grad or grid.requires_grad:
            dwe = (x.data.T @ g).reshape(p, rr, q, cc)
            if grid.requires_grad:
                grid.accumulate_grad(
                    (dwe * w.data.reshape(p, rr, q, cc)).sum(axis=(1, 3)),
                    own=True)
            if w.requires_grad:
                w.accumulate_grad((dwe * gate).reshape(d_in, d_out), own=True)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0), own=True)

    return _result(out_data, (x, w, b, grid), backward)


def multihead_attention(q, k, v, heads, mask=None):
    """Scaled dot-product attention over column-sliced heads, one node.

    q, k, v are the full post-projection matrices (len x d); the head
    loop, softmax and weighted sum run inside a single fused op.
    """
    d = q.data.shape[1]
    if d % heads != 0:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    scale_ = dh ** -0.5
    out_data = np.empty((q.data.shape[0], d))
    probs = []
    for h in range(heads):
        s = slice(h * dh, (h + 1) * dh)
        scores = (q.data[:, s] @ k.data[:, s].T) * scale_
        if mask is not None:
            scores = np.where(mask, -1e30, scores)
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        probs.append(p)
        out_data[:, s] = p @ v.data[:, s]

    def backward(g):
        dq = np.zeros_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        for h in range(heads):
            s = slice(h * dh, (h + 1) * dh)
            p = probs[h]
            go = g[:, s]
            dv[:, s] = p.T @ go
            dp = go @ v.data[:, s].T
            ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
            ds *= scale_
            dq[:, s] = ds @ k.data[:, s]
            dk[:, s] = ds.T @ q.data[:, s]
        if q.requires_grad:
            q.accumulate_grad(dq, own=True)
        if k.requires_grad:
            k.accumulate_grad(dk, own=True)
        if v.requires_grad:
            v.accumulate_grad(dv, own=True)

    return _result(out_data, (q, k, v), backward)


def take_rows(a, idx):
    """Gather rows of a by an integer index array (scatter-add backward)."""
    if a.data.ndim != 2:
        raise DimensionError(f"take_rows expects rank-2, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate_grad(full, own=True)

    return _result(a.data[idx], (a,), backward)


def repeat_cols(a, rep):
    """Repeat each column of an m x n matrix rep times consecutively."""
    if a.data.ndim != 2:
        raise DimensionError(f"repeat_cols expects rank-2, got {a.data.shape}")
    rep = int(rep)
    if rep < 1:
        raise DimensionError("repeat_cols repeat must be >= 1")
    m, n = a.data.shape
    out_data = np.empty((m, n * rep))
    out_data.reshape(m, n, rep)[...] = a.data[:, :, None]

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(m, n, rep).sum(axis=2), own=True)

    return _result(out_data, (a,), backward)


def _segment_offsets(lens, total, what):
    lens = [int(n) for n in lens]
    if any(n < 1 for n in lens) or sum(lens) != total:
        raise DimensionError(
            f"{what}: segment lengths {lens} do not partition {total} rows"
        )
    offs = np.concatenate([[0], np.cumsum(lens)])
    return lens, offs


def multihead_attention_packed(q, k, v, heads, q_lens, kv_lens=None, causal=False):
    """Attention over a batch of sequences packed row-wise into one matrix.

    Segment i of q attends only to segment i of k/v. kv_lens defaults to
    q_lens (self-attention); causal=True applies a per-segment causal mask.
    """
    d = q.data.shape[1]
    if d % heads != 0:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    scale_ = dh ** -0.5
    q_lens, q_offs = _segment_offsets(q_lens, q.data.shape[0], "attention q")
    if kv_lens is None:
        kv_lens, kv_offs = q_lens, q_offs
        if k.data.shape[0] != q.data.shape[0]:
            raise DimensionError("self-attention requires matching q/k row counts")
    else:
        kv_lens, kv_offs = _segment_offsets(kv_lens, k.data.shape[0], "attention kv")
        if len(kv_lens) != len(q_lens):
            raise DimensionError("q and kv segment counts differ")
    out_data = np.empty_like(q.data)
    probs = {}
    for i, (ql, kl) in enumerate(zip(q_lens, kv_lens)):
        qs, ks = slice(q_offs[i], q_offs[i] + ql), slice(kv_offs[i], kv_offs[i] + kl)
        mask = np.triu(np.ones((ql, kl), dtype=bool), k=1) if causal else None
        for h in range(heads):
            hs = slice(h * dh, (h + 1) * dh)
            scores = (q.data[qs, hs] @ k.data[ks, hs].T) * scale_
            if mask is not None:
                scores = np.where(mask, -1e30, scores)
            shifted = scores - scores.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            p = e / e.sum(axis=1, keepdims=True)
            probs[i, h] = p
            out_data[qs, hs] = p @ v.data[ks, hs]

    def backward(g):
        dq = np.empty_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        for i, (ql, kl) in enumerate(zip(q_lens, kv_lens)):
            qs = slice(q_offs[i], q_offs[i] + ql)
            ks = slice(kv_offs[i], kv_offs[i] + kl)
            for h in range(heads):
                hs = slice(h * dh, (h + 1) * dh)
                p = probs[i, h]
                go = g[qs, hs]
                dv[ks, hs] += p.T @ go
                dp = go @ v.data[ks, hs].T
                ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
                ds *= scale_
                dq[qs, hs] = ds @ k.data[ks, hs]
                dk[ks, hs] += ds.T @ q.data[qs, hs]
        if q.requires_grad:
            q.accumulate_grad(dq, own=True)
        if k.requires_grad:
            k.accumulate_grad(dk, own=True)
        if v.requires_grad:
            v.accumulate_grad(dv, own=True)

    return _result(out_data, (q, k, v), backward)


def packed_gated_linear(x, w, b, u, v, lens, override=None):
    """Per-segment gated projection over a packed batch, one tape node.

    Segment i of x is projected through ((1 + sigmoid(outer(u_i, v_i))) * w)
    expanded blockwise, plus bias b. u is B x p and v is B x q where (p, q)
    is the gate grid shape; override forces every grid entry to a constant
    (the hypernetwork inputs then receive no gradient).
    """
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError(
            f"packed_gated_linear expects matrices, got {x.data.shape}, {w.data.shape}"
        )
    d_in, d_out = w.data.shape
    p, q = u.data.shape[1], v.data.shape[1]
    if u.data.shape[0] != v.data.shape[0] or u.data.shape[0] != len(lens):
        raise DimensionError("gate factor rows must match the segment count")
    if d_in % p != 0 or d_out % q != 0:
        raise DimensionError(
            f"packed_gated_linear: grid ({p}, {q}) does not tile {w.data.shape}"
        )
    if x.data.shape[1] != d_in or b.data.shape != (d_out,):
        raise DimensionError(
            f"packed_gated_linear: shapes {x.data.shape} @ {w.data.shape} + {b.data.shape}"
        )
    lens, offs = _segment_offsets(lens, x.data.shape[0], "packed_gated_linear")
    rr, cc = d_in // p, d_out // q
    wv = w.data.reshape(p, rr, q, cc)
    grids = []
    w_effs = []
    out_data = np.empty((x.data.shape[0], d_out))
    for i, n in enumerate(lens):
        if override is not None:
            grid = np.full((p, q), float(override))
        else:
            pre = np.outer(u.data[i], v.data[i])
            grid = np.where(pre >= 0, 1.0 / (1.0 + np.exp(-np.abs(pre))),
                            np.exp(-np.abs(pre)) / (1.0 + np.exp(-np.abs(pre))))
        grids.append(grid)
        w_eff = ((1.0 + grid[:, None, :, None]) * wv).reshape(d_in, d_out)
        w_effs.append(w_eff)
        s = slice(offs[i], offs[i] + n)
        out_data[s] = x.data[s] @ w_eff + b.data

    def backward(g):
        dx = np.empty_like(x.data) if x.requires_grad else None
        dw = np.zeros((d_in, d_out)) if w.requires_grad else None
        want_uv = override is None
        du = np.empty_like(u.data) if want_uv and u.requires_grad else None
        dv_ = np.empty_like(v.data) if want_uv and v.requires_grad else None
        for i, n in enumerate(lens):
            s = slice(offs[i], offs[i] + n)
            gs = g[s]
            if dx is not None:
                dx[s] = gs @ w_effs[i].T
            if dw is not None or du is not None or dv_ is not None:
                dwe = (x.data[s].T @ gs).reshape(p, rr, q, cc)
                if dw is not None:
                    dw += ((1.0 + grids[i][:, None, :, None]) * dwe
                           ).reshape(d_in, d_out)
                if du is not None or dv_ is not None:
                    dgrid = (dwe * wv).sum(axis=(1, 3))
                    dpre = dgrid * grids[i] * (1.0 - grids[i])
                    if du is not None:
                        du[i] = dpre @ v.data[i]
                    if dv_ is not None:
                        dv_[i] = dpre.T @ u.data[i]
        if dx is not None:
            x.accumulate_grad(dx, own=True)
        if dw is not None:
            w.accumulate_grad(dw, own=True)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0), own=True)
        if du is not None:
            u.accumulate_grad(du, own=True)
        if dv_ is not None:
            v.accumulate_grad(dv_, own=True)

    parents = (x, w, b) if override is not None else (x, w, b, u, v)
    return _result(out_data, parents, backward)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table.accumulate_grad(full)

    return _result(out_data, (table,), backward)


# ---------------------------------------------------------------------------
# reductions and fused ops

def tsum(a):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return _result(np.array(a.data.sum()), (a,), backward)


def tmean(a):
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return _result(np.array(a.data.mean()), (a,), backward)


def layernorm(x, gain, bias, eps=1e-5):
    """Row-wise layer normalization with learned gain and bias."""
    if x.data.ndim != 2:
        raise DimensionError(f"layernorm expects rank-2, got {x.data.shape}")
    inv_n = 1.0 / x.data.shape[1]
    mu = x.data.sum(axis=1, keepdims=True) * inv_n
    xc = x.data - mu
    var = (xc * xc).sum(axis=1, keepdims=True) * inv_n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).sum(axis=0), own=True)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0), own=True)
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.sum(axis=1, keepdims=True) * inv_n
            m2 = (dxhat * xhat).sum(axis=1, keepdims=True) * inv_n
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2), own=True)

    return _result(out_data, (x, gain, bias), backward)


def softmax_rows(a, mask=None):
    """Row-wise softmax; mask entries set True are excluded (-inf logits)."""
    logits = a.data
    if mask is not None:
        logits = np.where(mask, -1e30, logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=1, keepdims=True)
            a.accumulate_grad(s * (g - dot))

    return _result(s, (a,), backward)


def cross_entropy_logits(logits, targets, weights=None):
    """Negative log-likelihood of target ids under row-wise softmax.

    Unweighted: mean over rows. weights, when given, is one nonnegative
    coefficient per row and the loss is the weighted sum.
    """
    targets = np.asarray(targets, dtype=np.int64)
    m = logits.data.shape[0]
    if targets.shape[0] != m:
        raise DimensionError(
            f"cross_entropy: {m} logit rows vs {targets.shape[0]} targets"
        )
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise DimensionError(
                f"cross_entropy: {m} logit rows vs weights shape {w.shape}"
            )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -(logp[np.arange(m), targets] * w).sum()

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logp)
            p[np.arange(m), targets] -= 1.0
            logits.accumulate_grad(p * (float(g) * w[:, None]), own=True)

    return _result(np.array(loss), (logits,), backward)
