"""Dense-network machinery: MLP forward/backward, diagonal Gaussian head, Adam.

Weights live in one flat float64 vector. Layer ``i`` occupies a block of
``(layer_dims[i] + 1) * layer_dims[i + 1]`` entries laid out row-major as an
``(in + 1, out)`` matrix whose last row is the bias. Hidden layers use tanh,
the output layer is linear.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError, ContractViolation

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"ARTRD1"


def n_weights(layer_dims) -> int:
    return sum((a + 1) * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass
class ParamSet:
    """Flat parameters of one MLP plus an optional state-independent log-std.

    Value networks carry an empty ``log_std``.
    """

    layer_dims: list
    weights: np.ndarray
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 0:
            raise ContractViolation(f"bad layer_dims {self.layer_dims}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.log_std = np.ascontiguousarray(self.log_std, dtype=np.float64)
        if self.weights.shape != (n_weights(self.layer_dims),):
            raise ContractViolation(
                f"weights has {self.weights.size} entries, layer_dims "
                f"{self.layer_dims} need {n_weights(self.layer_dims)}"
            )
        if not np.all(np.isfinite(self.log_std)):
            raise ContractViolation("log_std must be finite")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def act_dim(self) -> int:
        return self.log_std.size

    @property
    def size(self) -> int:
        """Number of trainable scalars (weights followed by log_std)."""
        return self.weights.size + self.log_std.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights, self.log_std])

    def set_flat(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        self.weights[:] = theta[: self.weights.size]
        self.log_std[:] = theta[self.weights.size:]

    def layers(self):
        """Yield ``(W, b)`` views into ``weights`` for every layer."""
        offset = 0
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            block = self.weights[offset: offset + (a + 1) * b].reshape(a + 1, b)
            yield block[:a], block[a]
            offset += (a + 1) * b

    def copy(self) -> "ParamSet":
        return ParamSet(list(self.layer_dims), self.weights.copy(), self.log_std.copy())

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.layer_dims, dtype="<u4").tobytes())
        h.update(self.weights.astype("<f8").tobytes())
        h.update(self.log_std.astype("<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return (
            self.layer_dims == other.layer_dims
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.log_std, other.log_std)
        )


def init_params(layer_dims, rng: np.random.Generator, act_dim=0, output_gain=1.0,
                hidden_gain=1.0) -> ParamSet:
    """Scaled-uniform init: each weight ~ U(-g*sqrt(3/fan_in), +g*sqrt(3/fan_in)).

    Biases start at zero and ``log_std`` at zero (sigma = 1).
    """
    layer_dims = [int(d) for d in layer_dims]
    params = ParamSet(layer_dims, np.zeros(n_weights(layer_dims)), np.zeros(act_dim))
    n_layers = len(layer_dims) - 1
    for i, (W, _) in enumerate(params.layers()):
        gain = output_gain if i == n_layers - 1 else hidden_gain
        bound = gain * math.sqrt(3.0 / max(W.shape[0], 1))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _check_input(params: ParamSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise ContractViolation(
            f"input shape {x.shape} does not match input dim {params.in_dim}"
        )
    return x


def mlp_forward(params: ParamSet, x) -> np.ndarray:
    """Run the network on one input vector or a ``(batch, in_dim)`` matrix."""
    h = _check_input(params, x)
    layers = list(params.layers())
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.tanh(h)
    return h


def mlp_forward_cached(params: ParamSet, x):
    """Forward pass that also returns every layer input for :func:`backprop`."""
    h = _check_input(params, x)
    acts = [h]
    layers = list(params.layers())
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.tanh(h)
            acts.append(h)
    return h, acts


def backprop(params: ParamSet, x, upstream, cache=None) -> np.ndarray:
    """Gradient of ``sum(upstream * output)`` w.r.t. the flat weight vector.

    For batched input the contributions of every row are summed.
    """
    if cache is None:
        out, acts = mlp_forward_cached(params, x)
    else:
        out, acts = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != out.shape:
        raise ContractViolation(
            f"upstream gradient shape {g.shape} does not match output {out.shape}"
        )
    batched = g.ndim == 2
    if not batched:
        g = g[None, :]
        acts = [a[None, :] for a in acts]
    grad = np.empty_like(params.weights)
    layers = list(params.layers())
    offsets = np.cumsum([0] + [(a + 1) * b for a, b in
                               zip(params.layer_dims[:-1], params.layer_dims[1:])])
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_in = acts[i]
        block = grad[offsets[i]: offsets[i + 1]].reshape(W.shape[0] + 1, W.shape[1])
        block[:-1] = a_in.T @ g
        block[-1] = g.sum(axis=0)
        if i > 0:
            # acts[i] is tanh output of the previous layer
            g = (g @ W.T) * (1.0 - a_in * a_in)
    return grad


@dataclass
class GaussianAction:
    mean: np.ndarray
    std: np.ndarray
    sample: np.ndarray
    log_prob: float


def gaussian_log_prob(mean, log_std, action):
    """Diagonal Gaussian log density, summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if mean.shape[-1] != log_std.shape[-1] or action.shape[-1] != mean.shape[-1]:
        raise ContractViolation("mean, log_std and action lengths differ")
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-log_std - 0.5 * LOG_2PI - 0.5 * z * z, axis=-1)


def gaussian_sample(mean, log_std, rng: np.random.Generator | None = None,
                    noise=None) -> GaussianAction:
    """Draw ``mean + exp(log_std) * z``; ``noise`` overrides the draw of ``z``."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    if mean.shape[-1] != log_std.shape[-1]:
        raise ContractViolation("mean and log_std lengths differ")
    if not np.all(np.isfinite(log_std)):
        raise ContractViolation("log_std must be finite")
    if noise is None:
        if rng is None:
            raise ContractViolation("either rng or noise is required")
        noise = rng.standard_normal(mean.shape)
    std = np.exp(log_std)
    sample = mean + std * np.asarray(noise, dtype=np.float64)
    return GaussianAction(mean, np.broadcast_to(std, mean.shape).copy(), sample,
                          gaussian_log_prob(mean, log_std, sample))


def gaussian_entropy(log_std) -> float:
    return float(np.sum(np.asarray(log_std) + 0.5 * (LOG_2PI + 1.0)))


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, size) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_update(theta: np.ndarray, grads, state: AdamState, lr=3e-4, beta1=0.9,
                beta2=0.999, eps=1e-8) -> np.ndarray:
    """Bias-corrected Adam step applied in place to the flat vector ``theta``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != theta.shape or state.first_moment.shape != theta.shape:
        raise ContractViolation(
            f"gradient/moment shapes {grads.shape}/{state.first_moment.shape} "
            f"do not match parameters {theta.shape}"
        )
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def adam_step(params: ParamSet, grads, state: AdamState, lr=3e-4, beta1=0.9,
              beta2=0.999, eps=1e-8):
    """Adam on a :class:`ParamSet`; ``grads`` covers weights then log_std."""
    theta = params.flat()
    adam_update(theta, grads, state, lr, beta1, beta2, eps)
    params.set_flat(theta)
    return params, state


# -- checkpoints -------------------------------------------------------------

def _pack_record(params: ParamSet) -> bytes:
    dims = params.layer_dims
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<I{len(dims)}II", len(dims), *dims, params.act_dim
    )
    return (header + params.weights.astype("<f8").tobytes()
            + params.log_std.astype("<f8").tobytes())


def dumps_checkpoint(*params: ParamSet) -> bytes:
    return b"".join(_pack_record(p) for p in params)


def loads_checkpoint(data: bytes) -> list:
    records = []
    pos = 0
    while pos < len(data):
        if data[pos: pos + 6] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic at byte {pos}")
        pos += 6
        try:
            (n_dims,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = list(struct.unpack_from(f"<{n_dims}I", data, pos))
            pos += 4 * n_dims
            (act_dim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            nw = n_weights(dims)
            end = pos + 8 * (nw + act_dim)
            if end > len(data):
                raise CheckpointError("truncated checkpoint")
            weights = np.frombuffer(data, "<f8", nw, pos).astype(np.float64)
            log_std = np.frombuffer(data, "<f8", act_dim, pos + 8 * nw).astype(np.float64)
        except struct.error as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        pos = end
        records.append(ParamSet(dims, weights, log_std))
    if not records:
        raise CheckpointError("empty checkpoint")
    return records


def save_checkpoint(path, *params: ParamSet) -> None:
    """Write one or more parameter records atomically (temp file + rename)."""
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), dumps_checkpoint(*params))


def load_checkpoint(path) -> list:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads_checkpoint(path.read_bytes())
