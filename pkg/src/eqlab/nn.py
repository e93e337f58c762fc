"""Small fully connected networks with hand-written backpropagation."""

import numpy as np

from .exceptions import ConfigurationError

SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(z):
    neg = np.minimum(z, 0)
    np.expm1(neg, out=neg)
    neg *= SELU_ALPHA
    neg += np.maximum(z, 0)
    neg *= SELU_SCALE
    return neg


def selu_grad_from_output(z, a):
    # for z <= 0: d/dz scale*alpha*(e^z - 1) = a + scale*alpha
    out = a + SELU_SCALE * SELU_ALPHA
    np.copyto(out, SELU_SCALE, where=z > 0)
    return out


def orthogonal(shape, gain, rng):
    """Orthogonal matrix of ``shape`` (rows = fan-in) scaled by ``gain``."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """``in -> hidden... -> out`` with SeLU on hidden layers and a linear head.

    Parameters are a flat list ``[W0, b0, W1, b1, ...]`` with ``W`` of shape
    (fan_in, fan_out). Orthogonal initialization, zero biases.
    """

    def __init__(self, sizes, rng, *, hidden_gain=np.sqrt(2.0), out_gain=0.01, dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        self.dtype = np.dtype(dtype)
        self.params = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if k == len(sizes) - 2 else hidden_gain
            self.params.append(orthogonal((fan_in, fan_out), gain, rng).astype(self.dtype))
            self.params.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def names(self):
        out = []
        for k in range(len(self.sizes) - 1):
            out += [f"layer{k}.weight", f"layer{k}.bias"]
        return out

    def forward(self, x):
        """Return output and the cache needed by :meth:`backward`."""
        h = np.asarray(x, dtype=self.dtype)
        cache = []
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            w, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ w + b
            if k < n_layers - 1:
                a = selu(z).astype(self.dtype, copy=False)
                cache.append((h, z, a))
                h = a
            else:
                cache.append((h, None, None))
                h = z
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
        g = np.asarray(grad_out, dtype=self.dtype)
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for k in reversed(range(n_layers)):
            h_in, z, a = cache[k]
            if k < n_layers - 1:
                g = g * selu_grad_from_output(z, a)
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, g

    def state_dict(self):
        return {name: p.astype(np.float64).tolist() for name, p in zip(self.names, self.params)}

    def load_state_dict(self, state):
        for k, name in enumerate(self.names):
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != self.params[k].shape:
                raise ConfigurationError(f"{name}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k] = arr


class Adam:
    """Adam over a list of arrays, updated in place (minimizes)."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        if not lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = np.asarray(g, dtype=p.dtype)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` in place to global L2 norm ``max_norm``; returns the old norm."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total
