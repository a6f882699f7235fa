"""Small fully-connected network with hand-written backprop, plus Adam.

No autodiff dependency: forward passes cache activations and backward passes
return the analytic gradient as a flat vector, which the tests cross-check
against central finite differences. Hidden layers use tanh; the output layer
is linear. With no hidden layers the network is affine, which doubles as a
tabular parameterization when inputs are one-hot.
"""

import numpy as np


class Mlp:
    """Feed-forward net over a single flat parameter vector.

    sizes = [input_dim, hidden..., output_dim]. Weights are views into the
    flat vector, so swapping the vector swaps all parameters at once.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        n = sum(
            sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1)
        )
        flat = np.empty(n, dtype=float)
        offset = 0
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            limit = 1.0 / np.sqrt(fan_in)
            flat[offset : offset + fan_in * fan_out] = rng.uniform(
                -limit, limit, fan_in * fan_out
            )
            offset += fan_in * fan_out
            flat[offset : offset + fan_out] = 0.0
            offset += fan_out
        self._set_flat(flat)

    def _set_flat(self, flat: np.ndarray) -> None:
        self._flat = np.ascontiguousarray(flat, dtype=float)
        self.weights = []
        self.biases = []
        offset = 0
        for i in range(len(self.sizes) - 1):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            w = self._flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self._flat[offset : offset + fan_out]
            offset += fan_out
            self.weights.append(w)
            self.biases.append(b)

    @property
    def n_params(self) -> int:
        return self._flat.shape[0]

    def get_params(self) -> np.ndarray:
        return self._flat.copy()

    def set_params(self, flat: np.ndarray) -> None:
        if flat.shape != self._flat.shape:
            raise ValueError(f"expected {self._flat.shape[0]} parameters")
        self._set_flat(flat.copy())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run a batch [n, input_dim] -> ([n, output_dim], activation cache)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Gradient of sum(grad_out * output) w.r.t. the flat parameters."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            grads_w[i] = h_in.T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                # cache[i] holds tanh activations; d tanh = 1 - tanh^2
                g = (g @ self.weights[i].T) * (1.0 - cache[i] ** 2)
        flat = np.empty_like(self._flat)
        offset = 0
        for gw, gb in zip(grads_w, grads_b):
            flat[offset : offset + gw.size] = gw.ravel()
            offset += gw.size
            flat[offset : offset + gb.size] = gb
            offset += gb.size
        return flat


class Adam:
    """Adam over a flat parameter vector; deterministic given inputs."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if params.shape != self.m.shape or grad.shape != self.m.shape:
            raise ValueError("parameter/gradient shape mismatch")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
