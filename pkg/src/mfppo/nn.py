"""Dense rectifier networks with hand-written backprop, plus Adam."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import NumericError

HEADS = ("softmax", "linear")
CHECKPOINT_MAGIC = "mlp-checkpoint"
CHECKPOINT_VERSION = 1


class MlpParams:
    """Weights of a feed-forward net stored in one flat vector.

    ``sizes`` lists layer widths from input to output. ``layers`` exposes
    ``(W, b)`` pairs as views into ``flat``, so in-place edits of either
    are visible in both.
    """

    def __init__(self, sizes, head="linear", flat=None):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.sizes = tuple(int(v) for v in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        self.head = head
        count = sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        if flat is None:
            flat = np.zeros(count)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (count,):
            raise ValueError(f"expected {count} parameters, got {flat.shape}")
        self.flat = flat

    @property
    def layers(self):
        out = []
        offset = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            w = self.flat[offset : offset + i * o].reshape(i, o)
            offset += i * o
            b = self.flat[offset : offset + o]
            offset += o
            out.append((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, self.head, self.flat.copy())

    def with_flat(self, flat) -> "MlpParams":
        return MlpParams(self.sizes, self.head, flat)

    def __eq__(self, other):
        return (
            isinstance(other, MlpParams)
            and self.sizes == other.sizes
            and self.head == other.head
            and np.array_equal(self.flat, other.flat)
        )

    def __repr__(self):
        return f"MlpParams(sizes={self.sizes}, head={self.head!r})"


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(sizes, head, rng: np.random.Generator, final_gain=None) -> MlpParams:
    """Orthogonal init with gain sqrt(2) on hidden layers, zero biases.

    The last layer uses ``final_gain``, defaulting to 0.01 for a softmax
    head (near-uniform initial policy) and 1.0 for a linear head.
    """
    if final_gain is None:
        final_gain = 0.01 if head == "softmax" else 1.0
    params = MlpParams(sizes, head)
    layers = params.layers
    for k, (w, _) in enumerate(layers):
        gain = final_gain if k == len(layers) - 1 else np.sqrt(2.0)
        w[...] = _orthogonal(rng, *w.shape, gain)
    return params


def relu(z):
    return z * (z > 0)


def forward(params: MlpParams, obs):
    """Pre-head output of the network and the cache needed for :func:`backprop`.

    ``obs`` is a single observation or a batch ``(batch, input_dim)``; the
    output is ``(batch, output_dim)`` either way.
    """
    h = np.atleast_2d(np.asarray(obs, dtype=float))
    if h.shape[1] != params.sizes[0]:
        raise ValueError(f"observation length {h.shape[1]} != input dim {params.sizes[0]}")
    acts = [h]
    layers = params.layers
    for w, b in layers[:-1]:
        h = relu(h @ w + b)
        acts.append(h)
    w, b = layers[-1]
    out = h @ w + b
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output")
    return out, acts


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def actor_forward(params: MlpParams, obs) -> np.ndarray:
    """Action probabilities; a single observation gives a 1-D vector."""
    logits, _ = forward(params, obs)
    probs = softmax(logits)
    return probs[0] if np.ndim(obs) == 1 else probs


def actor_log_probs(params: MlpParams, obs) -> np.ndarray:
    logits, _ = forward(params, obs)
    return log_softmax(logits)


def critic_forward(params: MlpParams, obs):
    """State value estimate; scalar for one observation, vector for a batch."""
    out, _ = forward(params, obs)
    values = out[:, 0]
    return float(values[0]) if np.ndim(obs) == 1 else values


def backprop(params: MlpParams, obs, grad_out, cache=None) -> np.ndarray:
    """Gradient of a scalar loss with respect to every parameter.

    ``grad_out`` is the loss gradient with respect to the network output
    before the head (logits for an actor, values for a critic), shape
    ``(batch, output_dim)``. Pass the ``cache`` from :func:`forward` to skip
    recomputing activations.
    """
    if cache is None:
        _, cache = forward(params, obs)
    grad = np.empty_like(params.flat)
    grad_layers = MlpParams(params.sizes, params.head, grad).layers
    layers = params.layers
    delta = np.atleast_2d(grad_out)
    for k in range(len(layers) - 1, -1, -1):
        h = cache[k]
        gw, gb = grad_layers[k]
        gw[...] = h.T @ delta
        gb[...] = delta.sum(axis=0)
        if k:
            delta = (delta @ layers[k][0].T) * (h > 0)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam step that *descends* ``grad``.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    if not (len(params) == len(grad) == len(state.m)):
        raise ValueError("parameter, gradient and moment lengths differ")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=t)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm > 0:
        return grad * (max_norm / norm)
    return grad


# --- checkpoint files -----------------------------------------------------


def save_params(path, params: MlpParams) -> None:
    """Write ``params`` as text: header, then each layer's shape and row-major values."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"head {params.head}",
        "sizes " + " ".join(map(str, params.sizes)),
    ]
    for w, b in params.layers:
        lines.append(f"weight {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(float(x)) for x in row) for row in w)
        lines.append(f"bias {b.shape[0]}")
        lines.append(" ".join(repr(float(x)) for x in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> MlpParams:
    lines = Path(path).read_text().splitlines()
    magic, _, version = lines[0].partition(" ")
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    head = lines[1].split()[1]
    sizes = tuple(int(v) for v in lines[2].split()[1:])
    values = []
    pos = 3
    for i, o in zip(sizes[:-1], sizes[1:]):
        if lines[pos].split() != ["weight", str(i), str(o)]:
            raise ValueError(f"{path}: bad weight header {lines[pos]!r}")
        pos += 1
        for _ in range(i):
            values.extend(float(x) for x in lines[pos].split())
            pos += 1
        if lines[pos].split() != ["bias", str(o)]:
            raise ValueError(f"{path}: bad bias header {lines[pos]!r}")
        values.extend(float(x) for x in lines[pos + 1].split())
        pos += 2
    return MlpParams(sizes, head, np.array(values))
