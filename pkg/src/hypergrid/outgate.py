"""Output-gating baseline: sigmoid gates applied to ReLU layer outputs.

Structurally different from weight gating: the gate multiplies the
post-ReLU activations and there is no residual path, so a zero gate map
halves the branch instead of scaling it by 1.5.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .gates import HYPER_INIT_STD, pool_prefix
from .tensor import (
    DimensionError,
    Tensor,
    add_bias,
    as_row,
    block_expand,
    matmul,
    matvec,
    mul,
    relu,
    sigmoid,
)


class OutGateLayer:
    """relu(X W + b) * sigmoid(U x_pool), gate repeated over output blocks.

    mode is "full" (gate width = d_f) or an integer n dividing d_f, in
    which case each of the n gate values covers d_f/n contiguous columns.
    """

    def __init__(self, d_m: int, d_f: int, mode: Union[str, int],
                 rng: np.random.Generator, cond: Optional[int] = None):
        if mode == "full":
            n = d_f
        else:
            n = int(mode)
            if n < 1 or d_f % n != 0:
                raise DimensionError(f"blocked gate width {n} must divide d_f={d_f}")
        self.d_m = d_m
        self.d_f = d_f
        self.mode = mode
        self.n = n
        self.cond = cond if cond is not None else d_m
        self.W = Tensor(rng.normal(0.0, d_m ** -0.5, (d_m, d_f)), requires_grad=True)
        self.b = Tensor(np.zeros(d_f), requires_grad=True)
        self.U = Tensor(rng.normal(0.0, HYPER_INIT_STD, (n, self.cond)),
                        requires_grad=True)

    def param_cost(self) -> int:
        return self.cond * self.n

    def gate_vector(self, x: Tensor) -> Tensor:
        if x.data.ndim != 1 or x.data.shape[0] != self.cond:
            raise DimensionError(
                f"conditioning vector has shape {x.data.shape}, expected ({self.cond},)"
            )
        return sigmoid(matvec(self.U, x))

    def forward(self, X: Tensor, cond: Optional[Tensor] = None) -> Tensor:
        if cond is None:
            cond = pool_prefix(X)
        gate = as_row(self.gate_vector(cond))
        ell = X.data.shape[0]
        expanded = block_expand(gate, ell, self.d_f // self.n)
        return mul(relu(add_bias(matmul(X, self.W), self.b)), expanded)
