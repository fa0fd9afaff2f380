"""Gated projection layers against a naive dense oracle.

The oracle materializes the full expanded gate with explicit Python
loops and never touches the layer's forward path.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypergrid.gates import (
    VARIANTS,
    HyperGridLayer,
    ProjectionDims,
    param_cost,
    param_cost_stated,
    pool_prefix,
)
from hypergrid.tensor import DimensionError, Tensor


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def naive_grid(layer, x):
    """Triple-loop reference gate grid for a conditioning vector x."""
    dims = layer.dims
    if layer.variant == "L":
        pre = np.zeros((1, dims.n))
        for j in range(dims.n):
            for k in range(x.size):
                pre[0, j] += layer.L_c.data[j, k] * x[k]
        return sigmoid(pre)
    pre = np.zeros((dims.d_r, dims.d_c))
    for i in range(dims.d_r):
        for j in range(dims.d_c):
            r = layer.G_r.data[i] if layer.variant == "GL" else \
                sum(layer.L_r.data[i, k] * x[k] for k in range(x.size))
            c = layer.G_c.data[j] if layer.variant == "LG" else \
                sum(layer.L_c.data[j, k] * x[k] for k in range(x.size))
            pre[i, j] = r * c
    return sigmoid(pre)


def naive_forward(layer, X, cond):
    """Y = X @ ((1 + expand(grid)) * W) + b by explicit loops."""
    dims = layer.dims
    grid = naive_grid(layer, cond)
    p, q = grid.shape
    rr, cc = dims.d_m // p, dims.d_f // q
    w_eff = np.empty((dims.d_m, dims.d_f))
    for i in range(dims.d_m):
        for j in range(dims.d_f):
            w_eff[i, j] = (1.0 + grid[i // rr, j // cc]) * layer.W.data[i, j]
    return X @ w_eff + layer.b.data


def random_dims(rng, variant):
    """Small random geometry with valid divisibility, dims <= 16."""
    d_r = int(rng.choice([1, 2, 4]))
    d_c = int(rng.choice([1, 2, 4]))
    d_m = d_r * int(rng.integers(1, 4))
    d_f = d_c * int(rng.integers(1, 4))
    n = d_c if variant == "L" else None
    cond = int(rng.integers(1, 9))
    return ProjectionDims(d_m=d_m, d_f=d_f, d_r=d_r, d_c=d_c, n=n, cond=cond)


def test_forward_matches_naive_oracle_all_variants():
    rng = np.random.default_rng(1234)
    for trial in range(50):
        for variant in VARIANTS:
            dims = random_dims(rng, variant)
            layer = HyperGridLayer(variant, dims, rng)
            # move the global embeddings off zero so gates are non-trivial
            if layer.G_r is not None:
                layer.G_r.data[:] = rng.normal(size=dims.d_r)
            if layer.G_c is not None:
                layer.G_c.data[:] = rng.normal(size=dims.d_c)
            X = rng.normal(size=(int(rng.integers(1, 5)), dims.d_m))
            cond = rng.normal(size=dims.cond_width)
            got = layer.forward(Tensor(X), cond=Tensor(cond)).data
            want = naive_forward(layer, X, cond)
            np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)


def test_gate_values_in_open_unit_interval():
    rng = np.random.default_rng(5)
    for variant in VARIANTS:
        dims = random_dims(rng, variant)
        layer = HyperGridLayer(variant, dims, rng)
        g = layer.compute_gate(Tensor(rng.normal(size=dims.cond_width) * 10))
        assert np.all(g.grid.data > 0.0) and np.all(g.grid.data < 1.0)


def test_compute_gate_expanded_is_block_expansion():
    rng = np.random.default_rng(6)
    dims = ProjectionDims(d_m=4, d_f=6, d_r=2, d_c=3, cond=5)
    layer = HyperGridLayer("L2", dims, rng)
    g = layer.compute_gate(Tensor(rng.normal(size=5)))
    assert g.expanded.data.shape == (4, 6)
    for i in range(4):
        for j in range(6):
            assert g.expanded.data[i, j] == g.grid.data[i // 2, j // 2]


def test_zero_hypernet_gives_half_gate():
    """All-zero hypernetwork parameters -> every gate entry is exactly 0.5."""
    rng = np.random.default_rng(7)
    for variant in VARIANTS:
        dims = random_dims(rng, variant)
        layer = HyperGridLayer(variant, dims, rng)
        for t in layer.hyper_parameters().values():
            t.data[:] = 0.0
        g = layer.compute_gate(Tensor(rng.normal(size=dims.cond_width)))
        assert np.all(g.grid.data == 0.5)


def test_zero_hypernet_scales_branch_exactly_1_5x():
    rng = np.random.default_rng(8)
    for variant in VARIANTS:
        dims = random_dims(rng, variant)
        layer = HyperGridLayer(variant, dims, rng)
        for t in layer.hyper_parameters().values():
            t.data[:] = 0.0
        layer.b.data[:] = 0.0
        X = rng.normal(size=(3, dims.d_m))
        cond = rng.normal(size=dims.cond_width)
        got = layer.forward(Tensor(X), cond=Tensor(cond)).data
        ungated = X @ layer.W.data
        np.testing.assert_allclose(got, 1.5 * ungated, atol=1e-12, rtol=0)


def test_gate_depends_only_on_cond():
    rng = np.random.default_rng(9)
    dims = ProjectionDims(d_m=8, d_f=8, d_r=2, d_c=2, cond=6)
    layer = HyperGridLayer("L2", dims, rng)
    cond = rng.normal(size=6)
    a = layer.compute_gate(Tensor(cond)).grid.data
    b = layer.compute_gate(Tensor(cond.copy())).grid.data
    np.testing.assert_array_equal(a, b)


def test_pool_prefix_is_row_zero():
    rng = np.random.default_rng(10)
    X = Tensor(rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(pool_prefix(X).data, X.data[0])
    with pytest.raises(DimensionError):
        pool_prefix(Tensor(np.zeros((0, 3))))


def test_gate_factors_match_single_gate():
    rng = np.random.default_rng(11)
    for variant in VARIANTS:
        dims = random_dims(rng, variant)
        layer = HyperGridLayer(variant, dims, rng)
        if layer.G_r is not None:
            layer.G_r.data[:] = rng.normal(size=dims.d_r)
        if layer.G_c is not None:
            layer.G_c.data[:] = rng.normal(size=dims.d_c)
        conds = rng.normal(size=(3, dims.cond_width))
        u, v = layer.gate_factors(Tensor(conds))
        for i in range(3):
            grid = sigmoid(np.outer(u.data[i], v.data[i]))
            want = naive_grid(layer, conds[i])
            np.testing.assert_allclose(grid, want, atol=1e-12)


def test_gate_override_forces_constant():
    rng = np.random.default_rng(12)
    dims = ProjectionDims(d_m=4, d_f=4, d_r=2, d_c=2)
    layer = HyperGridLayer("LG", dims, rng)
    layer.gate_override = 1.0
    g = layer.compute_gate(Tensor(rng.normal(size=4)))
    assert np.all(g.grid.data == 1.0)


# -- dimension validation ---------------------------------------------------

def test_dims_validation():
    with pytest.raises(DimensionError):
        ProjectionDims(d_m=6, d_f=8, d_r=4, d_c=2)  # 4 does not divide 6
    with pytest.raises(DimensionError):
        ProjectionDims(d_m=8, d_f=6, d_r=2, d_c=4)
    with pytest.raises(DimensionError):
        ProjectionDims(d_m=8, d_f=8, d_r=2, d_c=2, n=3)
    d = ProjectionDims(d_m=8, d_f=8, d_r=2, d_c=2, cond=5)
    assert d.cond_width == 5
    assert ProjectionDims(d_m=8, d_f=8, d_r=2, d_c=2).cond_width == 8


def test_variant_l_requires_n():
    with pytest.raises(DimensionError):
        ProjectionDims(d_m=4, d_f=4, d_r=1, d_c=1).grid_shape("L")
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        HyperGridLayer("L", ProjectionDims(d_m=4, d_f=4, d_r=1, d_c=1), rng)


def test_cond_shape_checked():
    rng = np.random.default_rng(13)
    dims = ProjectionDims(d_m=4, d_f=4, d_r=2, d_c=2, cond=6)
    layer = HyperGridLayer("L2", dims, rng)
    with pytest.raises(DimensionError):
        layer.compute_gate(Tensor(np.zeros(4)))


# -- parameter accounting ---------------------------------------------------

@pytest.mark.parametrize("d_m", [8, 64, 512])
def test_param_cost_equals_allocation(d_m):
    rng = np.random.default_rng(14)
    dims = ProjectionDims(d_m=d_m, d_f=d_m, d_r=4, d_c=4, n=4, cond=16)
    for variant in VARIANTS:
        layer = HyperGridLayer(variant, dims, rng)
        allocated = sum(t.data.size for t in layer.hyper_parameters().values())
        assert allocated == param_cost(variant, dims)


def test_param_cost_values():
    dims = ProjectionDims(d_m=12, d_f=8, d_r=4, d_c=2, n=2, cond=5)
    assert param_cost("L", dims) == 5 * 2
    assert param_cost("L2", dims) == 5 * 4 + 5 * 2
    assert param_cost("LG", dims) == 5 * 4 + 2
    assert param_cost("GL", dims) == 4 + 5 * 2


def test_param_cost_stated_flags_l2_and_gl():
    # the published closed forms charge the column map at fan-in x d_c
    dims = ProjectionDims(d_m=12, d_f=8, d_r=4, d_c=2, cond=5)
    assert param_cost_stated("L2", dims) == 5 * 4 + 12 * 2
    assert param_cost_stated("GL", dims) == 4 + 12 * 2
    assert param_cost_stated("LG", dims) == param_cost("LG", dims)
    assert param_cost_stated("L2", dims) != param_cost("L2", dims)


@given(st.sampled_from(VARIANTS), st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_forward_shape_property(variant, a, b):
    rng = np.random.default_rng(a * 7 + b)
    dims = ProjectionDims(d_m=2 * a, d_f=2 * b, d_r=a, d_c=b,
                          n=b if variant == "L" else None)
    layer = HyperGridLayer(variant, dims, rng)
    X = Tensor(rng.normal(size=(3, 2 * a)))
    assert layer.forward(X).data.shape == (3, 2 * b)
