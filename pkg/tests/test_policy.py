import struct

import numpy as np
import pytest

from statexplain.exceptions import FormatError, InputError
from statexplain.policy import MAGIC, MlpPolicy, load_weights, policy_bytes, policy_from_bytes, save_weights


def _zero_policy(d, b3):
    A = len(b3)
    return MlpPolicy([np.zeros((64, d)), np.zeros((64, 64)), np.zeros((A, 64))],
                     [np.zeros(64), np.zeros(64), np.asarray(b3, dtype=float)])


def _reference_forward(policy, s):
    """Straight-line loops, no numpy matmul."""
    (W1, W2, W3), (b1, b2, b3) = policy.weights, policy.biases
    h1 = [max(0.0, sum(W1[j, i] * s[i] for i in range(len(s))) + b1[j]) for j in range(64)]
    h2 = [max(0.0, sum(W2[j, i] * h1[i] for i in range(64)) + b2[j]) for j in range(64)]
    return [sum(W3[a, i] * h2[i] for i in range(64)) + b3[a] for a in range(W3.shape[0])]


def test_zero_network_returns_output_bias(rng):
    policy = _zero_policy(4, [1.0, 2.0])
    for s in rng.normal(size=(5, 4)) * 10:
        np.testing.assert_array_equal(policy.forward(s), [1.0, 2.0])


def test_linear_encoding_matches_planted(planted, rng):
    _, W = planted
    policy = MlpPolicy.from_linear(W)
    X = rng.standard_normal((50, 8)) * 3
    np.testing.assert_allclose(policy.forward(X), X @ W.T, rtol=0, atol=1e-12)


def test_forward_matches_straight_line_oracle(rng):
    policy = MlpPolicy.random(5, 3, seed=11)
    for s in rng.normal(size=(5, 5)):
        np.testing.assert_allclose(policy.forward(s), _reference_forward(policy, s), rtol=0, atol=1e-12)


def test_batch_and_single_agree(rng):
    policy = MlpPolicy.random(4, 2, seed=1)
    X = rng.normal(size=(7, 4))
    batch = policy.forward(X)
    for i, x in enumerate(X):
        np.testing.assert_allclose(policy.forward(x), batch[i], rtol=0, atol=1e-14)


def test_dimension_mismatch():
    policy = MlpPolicy.random(4, 2, seed=0)
    with pytest.raises(InputError):
        policy.forward(np.zeros(5))
    with pytest.raises(InputError):
        policy.input_gradient(np.zeros(3), 0)
    with pytest.raises(InputError):
        policy.input_gradient(np.zeros(4), 2)


def test_bad_layer_shapes():
    with pytest.raises(InputError):
        MlpPolicy([np.zeros((64, 4)), np.zeros((32, 64)), np.zeros((2, 64))], [np.zeros(64), np.zeros(32), np.zeros(2)])


def test_linear_gradient_is_weight_row(planted, rng):
    _, W = planted
    policy = MlpPolicy.from_linear(W)
    for s in rng.standard_normal((10, 8)):
        for a in range(3):
            np.testing.assert_array_equal(policy.input_gradient(s, a), W[a])


def _central_difference(policy, s, a, h=1e-4):
    g = np.empty_like(s)
    for i in range(s.shape[0]):
        e = np.zeros_like(s)
        e[i] = h
        g[i] = (policy.forward(s + e)[a] - policy.forward(s - e)[a]) / (2 * h)
    return g


def _far_from_kinks(policy, s, margin=1e-3):
    z1, _, z2, _ = policy._hidden(s[None, :])
    return np.min(np.abs(z1)) > margin and np.min(np.abs(z2)) > margin


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 20:
        policy = MlpPolicy.random(6, 3, seed=int(rng.integers(1 << 30)))
        s = rng.normal(size=6)
        if not _far_from_kinks(policy, s):
            continue
        a = int(rng.integers(3))
        g = policy.input_gradient(s, a)
        fd = _central_difference(policy, s, a)
        assert np.all(np.abs(g - fd) <= np.maximum(1e-4, 1e-3 * np.abs(g)))
        checked += 1


def test_dead_network_gradient_is_zero():
    rng = np.random.default_rng(0)
    W1 = np.abs(rng.normal(size=(64, 3)))
    policy = MlpPolicy([W1, rng.normal(size=(64, 64)), rng.normal(size=(2, 64))],
                       [-np.ones(64), np.zeros(64), np.zeros(2)])
    s = -np.ones(3)  # every first-layer pre-activation is negative
    np.testing.assert_array_equal(policy.input_gradient(s, 0), np.zeros(3))
    np.testing.assert_array_equal(policy.input_gradient(s, 1), np.zeros(3))


def test_greedy_tie_break_and_argmax():
    assert _zero_policy(2, [0.5, 0.5]).act_greedy([0.0, 0.0]) == 0
    assert _zero_policy(2, [-1.0, 3.0, 2.0]).act_greedy([1.0, 1.0]) == 1


def test_planted_greedy_matches_oracle(planted, rng):
    _, W = planted
    policy = MlpPolicy.from_linear(W)
    for s in rng.standard_normal((100, 8)):
        assert policy.act_greedy(s) == int(np.argmax([W[a] @ s for a in range(3)]))


def test_parameters_are_read_only():
    policy = MlpPolicy.random(4, 2, seed=0)
    with pytest.raises(ValueError):
        policy.parameters()[0][0, 0] = 1.0


def test_save_load_round_trip(tmp_path, rng):
    policy = MlpPolicy.random(4, 2, seed=9)
    path = tmp_path / "p.bin"
    save_weights(policy, path)
    loaded = load_weights(path)
    assert loaded == policy
    X = rng.normal(size=(10, 4))
    assert loaded.forward(X).tobytes() == policy.forward(X).tobytes()


def test_truncated_file_names_missing_bytes():
    data = policy_bytes(MlpPolicy.random(4, 2, seed=0))
    with pytest.raises(FormatError, match="missing 40 bytes"):
        policy_from_bytes(data[:-40])
    with pytest.raises(FormatError, match="missing"):
        policy_from_bytes(data[:10])


def test_unsupported_version():
    data = bytearray(policy_bytes(MlpPolicy.random(4, 2, seed=0)))
    struct.pack_into("<I", data, len(MAGIC), 999)
    with pytest.raises(FormatError, match="unsupported version 999"):
        policy_from_bytes(bytes(data))


def test_bad_magic_and_trailing_bytes():
    data = policy_bytes(MlpPolicy.random(4, 2, seed=0))
    with pytest.raises(FormatError, match="magic"):
        policy_from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError, match="trailing"):
        policy_from_bytes(data + b"\x00")
