"""Output-gating baseline against explicit-loop references."""

import numpy as np
import pytest

from hypergrid.outgate import OutGateLayer
from hypergrid.tensor import DimensionError, Tensor


def naive_outgate(layer, X, cond):
    """relu(XW + b) * expand(sigmoid(U cond)) with explicit loops."""
    pre = X @ layer.W.data + layer.b.data
    act = np.maximum(pre, 0.0)
    gate = 1.0 / (1.0 + np.exp(-(layer.U.data @ cond)))
    out = np.empty_like(act)
    cc = layer.d_f // layer.n
    for r in range(act.shape[0]):
        for j in range(layer.d_f):
            out[r, j] = act[r, j] * gate[j // cc]
    return out


def test_full_mode_matches_naive():
    rng = np.random.default_rng(0)
    layer = OutGateLayer(5, 8, "full", rng)
    X = rng.normal(size=(4, 5))
    cond = rng.normal(size=5)
    got = layer.forward(Tensor(X), cond=Tensor(cond)).data
    np.testing.assert_allclose(got, naive_outgate(layer, X, cond), atol=1e-12)


def test_blocked_mode_matches_naive():
    rng = np.random.default_rng(1)
    layer = OutGateLayer(6, 8, 2, rng, cond=4)
    assert layer.n == 2
    X = rng.normal(size=(3, 6))
    cond = rng.normal(size=4)
    got = layer.forward(Tensor(X), cond=Tensor(cond)).data
    np.testing.assert_allclose(got, naive_outgate(layer, X, cond), atol=1e-12)


def test_zero_hypernet_halves_branch_exactly():
    rng = np.random.default_rng(2)
    for mode in ("full", 4):
        layer = OutGateLayer(6, 8, mode, rng)
        layer.U.data[:] = 0.0
        X = rng.normal(size=(5, 6))
        cond = rng.normal(size=6)
        got = layer.forward(Tensor(X), cond=Tensor(cond)).data
        ungated = np.maximum(X @ layer.W.data + layer.b.data, 0.0)
        np.testing.assert_allclose(got, 0.5 * ungated, atol=1e-12, rtol=0)


def test_relu_annihilates_negative_preactivations():
    rng = np.random.default_rng(3)
    layer = OutGateLayer(4, 4, "full", rng)
    layer.W.data[:] = 0.0
    layer.b.data[:] = -1.0  # all pre-activations negative
    out = layer.forward(Tensor(rng.normal(size=(3, 4)))).data
    assert np.all(out == 0.0)


def test_param_cost():
    rng = np.random.default_rng(4)
    assert OutGateLayer(6, 8, "full", rng).param_cost() == 6 * 8
    assert OutGateLayer(6, 8, 2, rng).param_cost() == 6 * 2
    assert OutGateLayer(6, 8, 2, rng, cond=10).param_cost() == 10 * 2


def test_invalid_block_width():
    rng = np.random.default_rng(5)
    with pytest.raises(DimensionError):
        OutGateLayer(4, 8, 3, rng)


def test_gate_vector_range_and_shape():
    rng = np.random.default_rng(6)
    layer = OutGateLayer(4, 8, 2, rng)
    g = layer.gate_vector(Tensor(rng.normal(size=4) * 10))
    assert g.data.shape == (2,)
    assert np.all((g.data > 0) & (g.data < 1))
    with pytest.raises(DimensionError):
        layer.gate_vector(Tensor(np.zeros(3)))
