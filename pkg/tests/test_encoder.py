import numpy as np
import pytest

from mtuning.core import ConfigError, DataError
from mtuning.encoder import (
    EmbeddingTable,
    FrozenEncoder,
    PromptContext,
    TextEncoder,
    TokenTable,
    assemble_batch,
    assemble_sequence,
    class_slot,
    context_grad,
    encode_image,
    encode_text,
    encode_text_backward,
)


def fd_jacobian_vjp(enc, seq, up, delta=1e-5):
    """Central differences of <up, encode(seq)> with respect to every entry."""
    g = np.zeros_like(seq)
    for idx in np.ndindex(seq.shape):
        plus, minus = seq.copy(), seq.copy()
        plus[idx] += delta
        minus[idx] -= delta
        g[idx] = (up @ encode_text(enc, plus) - up @ encode_text(enc, minus)) / (2 * delta)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


class LinearEncoder(TextEncoder):
    """out = W @ mean(seq): its vector-Jacobian product is W^T up / S on every token."""

    def __init__(self, W):
        self.W = np.asarray(W, dtype=float)
        self.token_dim, self.output_dim = self.W.shape[1], self.W.shape[0]

    def encode(self, seqs):
        seqs = self._check(seqs)
        return seqs.mean(axis=-2) @ self.W.T

    def backward(self, seqs, upstream):
        seqs, upstream = self._check(seqs, upstream)
        g = upstream @ self.W / seqs.shape[-2]
        return np.broadcast_to(g[..., None, :], seqs.shape).copy()


def test_class_slot_positions():
    ctx = PromptContext(np.arange(30.0).reshape(10, 3), "mid")
    seq = assemble_sequence(ctx, [-1.0, -2.0, -3.0])
    assert seq.shape == (11, 3)
    assert np.array_equal(seq[5], [-1, -2, -3])
    assert class_slot(10, "front") == 0
    ctx5 = PromptContext(np.ones((5, 2)), "end")
    seq5 = assemble_sequence(ctx5, [9.0, 9.0])
    assert seq5.shape == (6, 2) and np.array_equal(seq5[5], [9, 9])
    with pytest.raises(ConfigError):
        class_slot(4, "middle")


def test_context_order_preserved_and_rotation_contract():
    vecs = np.arange(12.0).reshape(4, 3)
    tok = np.array([7.0, 8.0, 9.0])
    front = assemble_sequence(PromptContext(vecs, "front"), tok)
    end = assemble_sequence(PromptContext(vecs, "end"), tok)
    mid = assemble_sequence(PromptContext(vecs, "mid"), tok)
    for seq, s in ((front, 0), (end, 4), (mid, 2)):
        assert np.array_equal(np.delete(seq, s, axis=0), vecs)
        assert np.array_equal(seq[s], tok)
    # front and end hold the same rows, only the class row moves
    assert np.array_equal(np.roll(front, -1, axis=0), end)


def test_assemble_dimension_mismatch():
    ctx = PromptContext(np.zeros((3, 4)))
    with pytest.raises(DataError):
        assemble_sequence(ctx, np.zeros(5))
    with pytest.raises(DataError):
        assemble_batch(ctx, np.zeros((2, 3)))


def test_context_validation():
    with pytest.raises(ConfigError):
        PromptContext(np.zeros((0, 3)))
    with pytest.raises(ConfigError):
        PromptContext(np.zeros((2, 3)), group_index=-1)


def test_encode_deterministic_and_zero_image():
    enc = FrozenEncoder.from_seed(6, 5, seed=1)
    g = np.random.default_rng(0)
    seq = g.normal(size=(4, 6))
    assert np.array_equal(encode_text(enc, seq), encode_text(enc, seq))
    z1 = encode_text(enc, np.zeros((4, 6)))
    z2 = encode_text(enc, np.zeros((9, 6)))
    assert np.array_equal(z1, z2)
    # mean of zeros -> W2 tanh(b1) + b2
    np.testing.assert_allclose(z1, enc.W2 @ np.tanh(enc.b1) + enc.b2, atol=1e-15)
    assert z1.shape == (5,)


def test_encode_errors():
    enc = FrozenEncoder.from_seed(3, 2, seed=0)
    with pytest.raises(DataError):
        encode_text(enc, np.zeros((0, 3)))
    with pytest.raises(DataError):
        encode_text(enc, np.zeros((2, 4)))
    with pytest.raises(DataError):
        encode_text_backward(enc, np.zeros((2, 3)), np.zeros(3))


def test_backward_zero_upstream():
    enc = FrozenEncoder.from_seed(4, 3, seed=2)
    seq = np.random.default_rng(1).normal(size=(5, 4))
    assert np.array_equal(encode_text_backward(enc, seq, np.zeros(3)), np.zeros((5, 4)))


def test_linear_special_case_is_transposed_weight():
    W = np.random.default_rng(2).normal(size=(3, 4))
    enc = LinearEncoder(W)
    seq = np.random.default_rng(3).normal(size=(6, 4))
    up = np.array([1.0, -2.0, 0.5])
    g = encode_text_backward(enc, seq, up)
    for row in g:
        np.testing.assert_allclose(row, W.T @ up / 6, atol=1e-15)
    np.testing.assert_allclose(g, fd_jacobian_vjp(enc, seq, up), atol=1e-9)


@pytest.mark.parametrize("trial", range(20))
def test_backward_matches_finite_differences(trial):
    g = np.random.default_rng(100 + trial)
    t, o, h = g.integers(2, 7, size=3)
    enc = FrozenEncoder(g.normal(size=(h, t)), g.normal(size=h) * 0.3,
                        g.normal(size=(o, h)), g.normal(size=o) * 0.3)
    seq = g.normal(size=(int(g.integers(1, 6)), t))
    up = g.normal(size=o)
    assert rel_err(encode_text_backward(enc, seq, up), fd_jacobian_vjp(enc, seq, up)) <= 1e-4


def test_batched_backward_equals_per_sequence():
    enc = FrozenEncoder.from_seed(4, 3, seed=5, hidden_dim=6)
    g = np.random.default_rng(4)
    seqs, ups = g.normal(size=(3, 5, 4)), g.normal(size=(3, 3))
    batched = enc.backward(seqs, ups)
    for i in range(3):
        np.testing.assert_allclose(batched[i], encode_text_backward(enc, seqs[i], ups[i]), atol=1e-15)


def test_parameters_are_frozen():
    enc = FrozenEncoder.from_seed(4, 4, seed=9)
    before = enc.checksum()
    with pytest.raises(ValueError):
        enc.W1[0, 0] = 1.0
    for _ in range(3):
        enc.encode(np.ones((2, 4)))
        enc.backward(np.ones((2, 4)), np.ones(4))
    assert enc.checksum() == before
    assert FrozenEncoder.from_seed(4, 4, seed=9).checksum() == before
    assert FrozenEncoder.from_seed(4, 4, seed=10).checksum() != before


def test_encoder_shape_validation():
    with pytest.raises(ConfigError):
        FrozenEncoder(np.zeros((3, 2)), np.zeros(4), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ConfigError):
        FrozenEncoder.from_seed(0, 3, seed=0)


def test_context_grad_drops_slot_and_sums_batch():
    ctx = PromptContext(np.zeros((3, 2)), "mid")
    grads = np.arange(2 * 4 * 2, dtype=float).reshape(2, 4, 2)
    out = context_grad(ctx, grads)
    expect = np.delete(grads.sum(axis=0), 1, axis=0)
    assert np.array_equal(out, expect)


def test_embedding_lookup():
    t = EmbeddingTable(["a", "b"], [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(encode_image(t, "b"), [3.0, 4.0])
    assert np.array_equal(encode_image(t, "b"), encode_image(t, "b"))
    with pytest.raises(DataError):
        encode_image(t, "zz")
    with pytest.raises(ValueError):
        t.vectors[0, 0] = 5.0


def test_keyed_vectors_validation():
    with pytest.raises(DataError):
        TokenTable(["a", "a"], np.zeros((2, 3)))
    with pytest.raises(DataError):
        TokenTable(["a"], np.zeros((2, 3)))
    with pytest.raises(DataError):
        TokenTable(["a"], [[np.nan]])
    t = TokenTable(["a", "b", "c"], np.eye(3))
    assert t.subset(["c", "a"]) == TokenTable(["c", "a"], np.eye(3)[[2, 0]])
    with pytest.raises(DataError):
        t.lookup(["a", "q"])
