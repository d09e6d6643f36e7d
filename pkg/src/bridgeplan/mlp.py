"""MLP blocks shared by the latent encoder and the horizon predictor.

A block is a stack of affine layers with tanh between them and a linear
output.  Forward passes return the activation list needed for an exact
backward pass; gradients are plain numpy arrays shaped like the weights.
Optimization is a hand-rolled Adam over flattened parameter vectors so
training runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpBlock:
    """Affine stack; ``weights[i]`` is (out, in), ``biases[i]`` is (out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer shape mismatch: W {w.shape} vs b {b.shape}")
        for wa, wb in zip(self.weights, self.weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ValueError(f"layers do not chain: {wa.shape} -> {wb.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Apply the block to (n, in_dim) rows; returns (output, activations)."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            h = np.tanh(a) if i < last else a
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self, acts: list[np.ndarray], d_out: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Exact backprop of d_out (n, out_dim) through cached activations.

        Returns (d_input, grads) with grads ordered [dW0, db0, dW1, db1, ...].
        """
        n_layers = len(self.weights)
        grads: list[np.ndarray] = [np.empty(0)] * (2 * n_layers)
        g = d_out
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)  # tanh'(a) = 1 - tanh(a)^2
            grads[2 * i] = g.T @ acts[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return g, grads

    def copy(self) -> MlpBlock:
        return MlpBlock([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def make_block(dims: list[int], rng: np.random.Generator) -> MlpBlock:
    """Glorot-uniform block over consecutive dims, e.g. [m, 64, 64, d]."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return MlpBlock(weights, biases)


def zero_block(dims: list[int]) -> MlpBlock:
    """All-zero block (useful for fixtures: tanh(0) = 0 propagates zeros)."""
    weights = [np.zeros((o, i)) for i, o in zip(dims, dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    return MlpBlock(weights, biases)


# -- flat parameter vectors ------------------------------------------------

def flatten_arrays(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def block_param_arrays(block: MlpBlock) -> list[np.ndarray]:
    """Interleaved [W0, b0, W1, b1, ...], matching backward's grad order."""
    out = []
    for w, b in zip(block.weights, block.biases):
        out.append(w)
        out.append(b)
    return out


def assign_flat(blocks: list[MlpBlock], vec: np.ndarray) -> None:
    """Write a flat vector back into block weights, in flatten order."""
    pos = 0
    for block in blocks:
        for arr in block_param_arrays(block):
            size = arr.size
            arr[...] = vec[pos : pos + size].reshape(arr.shape)
            pos += size
    if pos != vec.size:
        raise ValueError(f"vector length {vec.size} does not match parameters ({pos})")


def blocks_to_vector(blocks: list[MlpBlock]) -> np.ndarray:
    return flatten_arrays([a for b in blocks for a in block_param_arrays(b)])


class Adam:
    """Adam over a flat parameter vector, with bias correction."""

    def __init__(
        self,
        n_params: int,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- checkpoint (de)serialization -------------------------------------------

def block_state(block: MlpBlock) -> dict:
    return {
        "shapes": [list(w.shape) for w in block.weights],
        "weights": [w.ravel().tolist() for w in block.weights],
        "biases": [b.tolist() for b in block.biases],
    }


def block_from_state(state: dict) -> MlpBlock:
    weights = [
        np.asarray(flat, dtype=np.float64).reshape(shape)
        for flat, shape in zip(state["weights"], state["shapes"])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in state["biases"]]
    return MlpBlock(weights, biases)
