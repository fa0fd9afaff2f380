"""Grid-wise gated projection layers.

A gated projection wraps a host weight W (fan_in x fan_out) with a small
sigmoid gate grid generated by hypernetwork factors. The grid has one
entry per (row-block, column-block) of W and is expanded to full shape by
block repetition, so every effective multiplier is (1 + sigmoid) in
(1, 2) once the residual path is included.

Variants differ in how the two grid factors are sourced:
  L  : single input-conditioned fan-out vector of width n (1 x n grid)
  L2 : both factors conditioned on the input
  LG : input-conditioned row factor x trainable global column embedding
  GL : trainable global row embedding x input-conditioned column factor
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    block_expand,
    block_gated_linear,
    matvec,
    outer,
    row,
    sigmoid,
)

VARIANTS = ("L", "L2", "LG", "GL")

HYPER_INIT_STD = 0.01


@dataclass(frozen=True)
class ProjectionDims:
    """Geometry of one gated projection.

    d_m is the fan-in and d_f the fan-out of the host matrix; d_r and d_c
    are the grid row/column counts. n is the reduced gate width used by
    variant L. cond is the width of the conditioning vector fed to the
    hypernetwork maps; it defaults to d_m but may differ when the gate is
    conditioned on a different representation than the projection input.
    """

    d_m: int
    d_f: int
    d_r: int
    d_c: int
    n: Optional[int] = None
    cond: Optional[int] = None

    def __post_init__(self):
        if self.d_r < 1 or self.d_r > self.d_m or self.d_m % self.d_r != 0:
            raise DimensionError(
                f"d_r={self.d_r} must divide fan-in d_m={self.d_m}"
            )
        if self.d_c < 1 or self.d_c > self.d_f or self.d_f % self.d_c != 0:
            raise DimensionError(
                f"d_c={self.d_c} must divide fan-out d_f={self.d_f}"
            )
        if self.n is not None:
            if self.n < 1 or self.n > self.d_f or self.d_f % self.n != 0:
                raise DimensionError(
                    f"n={self.n} must divide fan-out d_f={self.d_f}"
                )
        if self.cond is not None and self.cond < 1:
            raise DimensionError(f"cond width must be positive, got {self.cond}")

    @property
    def cond_width(self) -> int:
        return self.cond if self.cond is not None else self.d_m

    def grid_shape(self, variant: str):
        if variant == "L":
            if self.n is None:
                raise DimensionError("variant L requires reduced width n")
            return (1, self.n)
        return (self.d_r, self.d_c)


@dataclass
class GateGrid:
    """Post-sigmoid gate grid plus its block-expanded full-shape form."""

    grid: Tensor
    expanded: Tensor


def param_cost(variant: str, dims: ProjectionDims) -> int:
    """Trainable hypernetwork parameters added by one gated layer.

    Excludes the host W and b. Counts follow the actual allocation: every
    input-conditioned map takes a cond_width vector.
    """
    c = dims.cond_width
    if variant == "L":
        if dims.n is None:
            raise DimensionError("variant L requires reduced width n")
        return c * dims.n
    if variant == "L2":
        return c * dims.d_r + c * dims.d_c
    if variant == "LG":
        return c * dims.d_r + dims.d_c
    if variant == "GL":
        return dims.d_r + c * dims.d_c
    raise ValueError(f"unknown variant {variant!r}")


def param_cost_stated(variant: str, dims: ProjectionDims) -> int:
    """Cost per the published closed forms, which charge the column map
    at host-fan-in x d_c instead of the conditioning width the map is
    actually allocated with. Differs from param_cost for L2 and GL when
    the two widths disagree; surfaced by the parameter audit, never used
    for allocation."""
    c = dims.cond_width
    if variant == "L":
        if dims.n is None:
            raise DimensionError("variant L requires reduced width n")
        return c * dims.n
    if variant == "L2":
        return c * dims.d_r + dims.d_m * dims.d_c
    if variant == "LG":
        return c * dims.d_r + dims.d_c
    if variant == "GL":
        return dims.d_r + dims.d_m * dims.d_c
    raise ValueError(f"unknown variant {variant!r}")


def pool_prefix(X: Tensor) -> Tensor:
    """First-token pooling: the conditioning vector is row 0 of X."""
    if X.data.ndim != 2 or X.data.shape[0] < 1:
        raise DimensionError(f"pool_prefix needs a nonempty sequence, got {X.data.shape}")
    return row(X, 0)


class HyperGridLayer:
    """One gated projection: host W, b plus variant-specific gate factors.

    gate_override is a test hook: when set to a float, the gate grid is
    forced to that constant (off the tape).
    """

    def __init__(self, variant: str, dims: ProjectionDims, rng: np.random.Generator):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "L" and dims.n is None:
            raise DimensionError("variant L requires dims.n")
        self.variant = variant
        self.dims = dims
        c = dims.cond_width
        self.W = Tensor(rng.normal(0.0, dims.d_m ** -0.5, (dims.d_m, dims.d_f)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(dims.d_f), requires_grad=True)
        self.L_r = None
        self.L_c = None
        self.G_r = None
        self.G_c = None
        # local maps start near zero so gates start near 0.5; global
        # embeddings start at exactly zero
        if variant in ("L2", "LG"):
            self.L_r = Tensor(rng.normal(0.0, HYPER_INIT_STD, (dims.d_r, c)),
                              requires_grad=True)
        if variant == "L":
            self.L_c = Tensor(rng.normal(0.0, HYPER_INIT_STD, (dims.n, c)),
                              requires_grad=True)
        elif variant in ("L2", "GL"):
            self.L_c = Tensor(rng.normal(0.0, HYPER_INIT_STD, (dims.d_c, c)),
                              requires_grad=True)
        if variant == "GL":
            self.G_r = Tensor(np.zeros(dims.d_r), requires_grad=True)
        if variant == "LG":
            self.G_c = Tensor(np.zeros(dims.d_c), requires_grad=True)
        self.gate_override = None

    def hyper_parameters(self) -> dict:
        out = {}
        for name in ("L_r", "L_c", "G_r", "G_c"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t
        return out

    def host_parameters(self) -> dict:
        return {"W": self.W, "b": self.b}

    def gate_grid(self, x: Tensor) -> Tensor:
        """Post-sigmoid gate grid from a conditioning vector of width
        dims.cond_width."""
        if x.data.ndim != 1 or x.data.shape[0] != self.dims.cond_width:
            raise DimensionError(
                f"conditioning vector has shape {x.data.shape}, "
                f"expected ({self.dims.cond_width},)"
            )
        if self.gate_override is not None:
            shape = self.dims.grid_shape(self.variant)
            return Tensor(np.full(shape, float(self.gate_override)))
        if self.variant == "L":
            from .tensor import as_row
            return as_row(sigmoid(matvec(self.L_c, x)))
        if self.variant == "L2":
            return sigmoid(outer(matvec(self.L_r, x), matvec(self.L_c, x)))
        if self.variant == "LG":
            return sigmoid(outer(matvec(self.L_r, x), self.G_c))
        return sigmoid(outer(self.G_r, matvec(self.L_c, x)))  # GL

    def gate_factors(self, conds: Tensor):
        """Pre-sigmoid grid factors (u, v) for a batch of conditioning
        vectors (one per row of conds): grid_i = sigmoid(outer(u_i, v_i)).

        Variant L uses u_i = 1 so the 1 x n grid is sigmoid(L_c x_i).
        """
        if conds.data.ndim != 2 or conds.data.shape[1] != self.dims.cond_width:
            raise DimensionError(
                f"conditioning batch has shape {conds.data.shape}, "
                f"expected (B, {self.dims.cond_width})"
            )
        from .tensor import broadcast_rows, matmul_nt
        B = conds.data.shape[0]
        if self.variant == "L":
            return Tensor(np.ones((B, 1))), matmul_nt(conds, self.L_c)
        if self.variant == "L2":
            return matmul_nt(conds, self.L_r), matmul_nt(conds, self.L_c)
        if self.variant == "LG":
            return matmul_nt(conds, self.L_r), broadcast_rows(self.G_c, B)
        return broadcast_rows(self.G_r, B), matmul_nt(conds, self.L_c)  # GL

    def compute_gate(self, x: Tensor) -> GateGrid:
        """Gate grid plus its block-expanded full-shape form."""
        grid = self.gate_grid(x)
        rows_, cols_ = grid.data.shape
        expanded = block_expand(grid, self.dims.d_m // rows_, self.dims.d_f // cols_)
        return GateGrid(grid=grid, expanded=expanded)

    def forward(self, X: Tensor, cond: Optional[Tensor] = None) -> Tensor:
        """Gated projection with residual: X @ ((1 + gate) * W) + b.

        One gate per sequence, conditioned on cond (default: prefix token
        of X) and shared across all positions.
        """
        if cond is None:
            cond = pool_prefix(X)
        return block_gated_linear(X, self.W, self.b, self.gate_grid(cond))
