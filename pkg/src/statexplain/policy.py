"""Fixed-architecture ReLU Q-network and its weight file format."""

import struct
from pathlib import Path

import numpy as np

from ._validation import check_action, check_state, check_states
from .exceptions import FormatError, InputError

HIDDEN = 64
MAGIC = b"SXQNET\x00\x01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI4I")


class MlpPolicy:
    """Q(s) = W3 relu(W2 relu(W1 s + b1) + b2) + b3 with layer widths [d, 64, 64, A].

    Parameters are copied and frozen on construction, so instances can be
    shared across workers.
    """

    def __init__(self, weights, biases):
        if len(weights) != 3 or len(biases) != 3:
            raise InputError("MlpPolicy needs exactly three weight matrices and three biases")
        ws = [np.array(w, dtype=np.float64) for w in weights]
        bs = [np.array(b, dtype=np.float64) for b in biases]
        d = ws[0].shape[1]
        expected = [(HIDDEN, d), (HIDDEN, HIDDEN), (ws[2].shape[0], HIDDEN)]
        for i, (w, b, shape) in enumerate(zip(ws, bs, expected)):
            if w.shape != shape or b.shape != (shape[0],):
                raise InputError(f"layer {i + 1}: expected weight {shape}, got {w.shape} / bias {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i + 1} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        if ws[2].shape[0] < 2:
            raise InputError("action count must be at least 2")
        self.weights = tuple(ws)
        self.biases = tuple(bs)

    @property
    def state_dim(self):
        return self.weights[0].shape[1]

    @property
    def action_count(self):
        return self.weights[2].shape[0]

    @property
    def dims(self):
        return (self.state_dim, HIDDEN, HIDDEN, self.action_count)

    @classmethod
    def random(cls, state_dim, action_count, seed):
        """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
        rng = np.random.default_rng(seed)
        dims = (state_dim, HIDDEN, HIDDEN, action_count)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def from_linear(cls, W):
        """Encode Q(s) = W s exactly, using s = relu(s) - relu(-s).

        Requires 2 * d <= 64. Gradients are exact wherever no component of
        the state is exactly zero.
        """
        W = np.asarray(W, dtype=np.float64)
        A, d = W.shape
        if 2 * d > HIDDEN:
            raise InputError(f"cannot encode {d} features in {HIDDEN} hidden units")
        W1 = np.zeros((HIDDEN, d))
        W1[:d] = np.eye(d)
        W1[d:2 * d] = -np.eye(d)
        W2 = np.zeros((HIDDEN, HIDDEN))
        W2[:2 * d, :2 * d] = np.eye(2 * d)
        W3 = np.zeros((A, HIDDEN))
        W3[:, :d] = W
        W3[:, d:2 * d] = -W
        return cls([W1, W2, W3], [np.zeros(HIDDEN), np.zeros(HIDDEN), np.zeros(A)])

    def _hidden(self, X):
        W1, W2, _ = self.weights
        b1, b2, _ = self.biases
        z1 = X @ W1.T + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ W2.T + b2
        return z1, h1, z2, np.maximum(z2, 0.0)

    def forward(self, X):
        """Q-values for one state (shape ``(d,)``) or a batch (shape ``(n, d)``)."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        batch = check_states(X, self.state_dim)
        *_, h2 = self._hidden(batch)
        q = h2 @ self.weights[2].T + self.biases[2]
        return q[0] if single else q

    def input_gradient(self, X, action):
        """Exact dQ[action]/ds by reverse accumulation; relu'(0) is taken as 0."""
        action = check_action(action, self.action_count)
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        batch = check_states(X, self.state_dim)
        z1, _, z2, _ = self._hidden(batch)
        W1, W2, W3 = self.weights
        g2 = W3[action] * (z2 > 0.0)
        g1 = (g2 @ W2) * (z1 > 0.0)
        grads = g1 @ W1
        return grads[0] if single else grads

    def act_greedy(self, state):
        """Argmax action; ties go to the lowest index."""
        return int(np.argmax(self.forward(check_state(state, self.state_dim))))

    def parameters(self):
        """Flat list [W1, b1, W2, b2, W3, b3] (read-only views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __eq__(self, other):
        if not isinstance(other, MlpPolicy):
            return NotImplemented
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.parameters(), other.parameters())
        )

    __hash__ = None

    def __repr__(self):
        return f"MlpPolicy(dims={self.dims})"


def policy_bytes(policy):
    d, h1, h2, A = policy.dims
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, d, h1, h2, A)]
    for p in policy.parameters():
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_weights(policy, path):
    """Write magic, version, dims, then little-endian float64 parameters layer by layer."""
    Path(path).write_bytes(policy_bytes(policy))


def policy_from_bytes(data):
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: missing {_HEADER.size - len(data)} bytes")
    magic, version, d, h1, h2, A = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic: not a policy weight file")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if h1 != HIDDEN or h2 != HIDDEN or d < 1 or A < 2:
        raise FormatError(f"unsupported layer dims {(d, h1, h2, A)}")
    shapes = [(h1, d), (h1,), (h2, h1), (h2,), (A, h2), (A,)]
    needed = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) < needed:
        raise FormatError(f"truncated file: missing {needed - len(data)} bytes")
    if len(data) > needed:
        raise FormatError(f"trailing data: {len(data) - needed} unexpected bytes")
    offset = _HEADER.size
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        params.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape))
        offset += 8 * count
    try:
        return MlpPolicy(params[0::2], params[1::2])
    except InputError as exc:
        raise FormatError(str(exc)) from exc


def load_weights(path):
    return policy_from_bytes(Path(path).read_bytes())
