"""Per-node Gaussian conditionals: linear-Gaussian and MLP-Gaussian.

Both families evaluate all nodes at once. ``loglik(X, A)`` takes a batch of
rows ``X`` of shape ``(m, n)`` and an adjacency ``A`` of shape ``(n, n)`` or a
stack ``(K, n, n)`` and returns per-node log-densities of shape ``(m, n)`` or
``(K, m, n)``. Node ``j`` sees the masked input ``A[:, j] * x``.

``grad(X, A, weight)`` returns the gradient of ``sum(weight * loglik(X, A))``
as a dict keyed like ``model.params``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.special import expit

SIGMA_FLOOR = 1e-4
LEAKY_SLOPE = 0.01
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

DEFAULT_MLP_LAYERS = 2
DEFAULT_MLP_WIDTH = 4
SYNTHETIC_MLP_WIDTH = 16

# bound on the size of the (rows, nodes, inputs) tensor built per MLP chunk
_MLP_CHUNK_ELEMENTS = 4_000_000


def default_mlp_shape(override: Optional[tuple] = None, synthetic: bool = False) -> tuple:
    """``(layers, width)`` of the per-node MLPs."""
    if override is not None:
        return tuple(override)
    return (DEFAULT_MLP_LAYERS, SYNTHETIC_MLP_WIDTH if synthetic else DEFAULT_MLP_WIDTH)


def _gaussian_loglik(x, mu, sigma):
    z = (x - mu) / sigma
    return -HALF_LOG_2PI - np.log(sigma) - 0.5 * z * z


class LinearGaussian:
    """``x_j ~ N(b_j + sum_i a_ij w_ij x_i, exp(log_scale_j)^2)``."""

    family = "linear"

    def __init__(self, weights, bias, log_scale):
        self.params = {
            "weights": np.asarray(weights, dtype=float),
            "bias": np.asarray(bias, dtype=float),
            "log_scale": np.asarray(log_scale, dtype=float),
        }

    @classmethod
    def init(cls, n: int, rng: Optional[np.random.Generator] = None):
        return cls(np.zeros((n, n)), np.zeros(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.params["bias"].shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.maximum(np.exp(self.params["log_scale"]), SIGMA_FLOOR)

    def mean(self, X, A):
        AW = np.asarray(A) * self.params["weights"]
        return self.params["bias"] + np.matmul(X, AW)

    def loglik(self, X, A):
        return _gaussian_loglik(X, self.mean(X, A), self.sigma)

    def grad(self, X, A, weight):
        A = np.asarray(A)
        sigma = self.sigma
        resid = X - self.mean(X, A)
        g = weight * resid / sigma**2
        lead = tuple(range(g.ndim - 1))
        dW = A * np.matmul(X.T, g)
        if dW.ndim == 3:
            dW = dW.sum(axis=0)
        d_ls = np.sum(weight * ((resid / sigma) ** 2 - 1.0), axis=lead)
        d_ls = np.where(np.exp(self.params["log_scale"]) > SIGMA_FLOOR, d_ls, 0.0)
        return {"weights": dW, "bias": g.sum(axis=lead), "log_scale": d_ls}

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        n = self.n
        return {
            "family": self.family,
            "n": n,
            "weights": self.params["weights"].ravel().tolist(),
            "bias": self.params["bias"].tolist(),
            "log_scale": self.params["log_scale"].tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict):
        n = int(obj["n"])
        return cls(
            np.asarray(obj["weights"], dtype=float).reshape(n, n),
            np.asarray(obj["bias"], dtype=float),
            np.asarray(obj["log_scale"], dtype=float),
        )


def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


class MlpGaussian:
    """Per-node MLPs for the mean and the pre-softplus scale.

    Each network maps the masked ``n``-vector through ``layers`` hidden
    layers of ``width`` leaky-ReLU units to a scalar. Weights are stacked
    over nodes: ``mu_w0`` has shape ``(n, n, width)``, ``mu_wL`` has shape
    ``(n, width, 1)``.
    """

    family = "mlp"
    heads = ("mu", "sig")

    def __init__(self, params: dict, layers: int, width: int):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.layers = int(layers)
        self.width = int(width)

    @classmethod
    def init(cls, n: int, rng: np.random.Generator, layers: int = DEFAULT_MLP_LAYERS,
             width: int = DEFAULT_MLP_WIDTH):
        sizes = [n] + [width] * layers + [1]
        params = {}
        for head in cls.heads:
            for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                params[f"{head}_w{l}"] = rng.uniform(-bound, bound, size=(n, fan_in, fan_out))
                params[f"{head}_b{l}"] = np.zeros((n, fan_out))
        return cls(params, layers, width)

    @classmethod
    def zeros(cls, n: int, layers: int = DEFAULT_MLP_LAYERS, width: int = DEFAULT_MLP_WIDTH):
        model = cls.init(n, np.random.default_rng(0), layers, width)
        for v in model.params.values():
            v[...] = 0.0
        return model

    @property
    def n(self) -> int:
        return self.params["mu_w0"].shape[0]

    def _forward(self, U, head):
        """``U`` has shape (N, n_nodes, n_inputs); returns output and cache."""
        h = U
        cache = [h]
        for l in range(self.layers + 1):
            z = np.einsum("Nji,jih->Njh", h, self.params[f"{head}_w{l}"]) + self.params[f"{head}_b{l}"]
            if l < self.layers:
                cache.append(z)
                h = _leaky(z)
                cache.append(h)
            else:
                h = z
        return h[..., 0], cache

    def _backward(self, delta_out, cache, head, grads):
        delta = delta_out[..., None]
        for l in range(self.layers, -1, -1):
            h_in = cache[2 * l] if l > 0 else cache[0]
            grads[f"{head}_w{l}"] += np.einsum("Nji,Njh->jih", h_in, delta)
            grads[f"{head}_b{l}"] += delta.sum(axis=0)
            if l > 0:
                z_prev = cache[2 * l - 1]
                delta = np.einsum("Njh,jih->Nji", delta, self.params[f"{head}_w{l}"]) * _leaky_grad(z_prev)

    def _masked_inputs(self, X, A):
        # U[k, m, j, i] = X[m, i] * A[k, i, j]
        return X[None, :, None, :] * np.swapaxes(A, -1, -2)[:, None, :, :]

    def _chunks(self, X, A):
        K = A.shape[0]
        m, n = X.shape
        per_k = max(1, m * n * n)
        step = max(1, _MLP_CHUNK_ELEMENTS // per_k)
        for start in range(0, K, step):
            yield slice(start, min(K, start + step))

    def _stats(self, U):
        N = U.shape[0] * U.shape[1]
        flat = U.reshape(N, U.shape[2], U.shape[3])
        mu, cache_mu = self._forward(flat, "mu")
        zs, cache_sig = self._forward(flat, "sig")
        s = np.logaddexp(0.0, zs)
        sigma = np.maximum(s, SIGMA_FLOOR)
        return mu, zs, s, sigma, cache_mu, cache_sig

    def loglik(self, X, A):
        A = np.asarray(A, dtype=float)
        single = A.ndim == 2
        if single:
            A = A[None]
        out = np.empty((A.shape[0],) + X.shape)
        for sl in self._chunks(X, A):
            U = self._masked_inputs(X, A[sl])
            mu, _, _, sigma, _, _ = self._stats(U)
            shape = U.shape[:3]
            out[sl] = _gaussian_loglik(X, mu.reshape(shape), sigma.reshape(shape))
        return out[0] if single else out

    def grad(self, X, A, weight):
        A = np.asarray(A, dtype=float)
        weight = np.asarray(weight, dtype=float)
        if A.ndim == 2:
            A = A[None]
            weight = weight[None]
        weight = np.broadcast_to(weight, (A.shape[0],) + X.shape)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for sl in self._chunks(X, A):
            U = self._masked_inputs(X, A[sl])
            mu, zs, s, sigma, cache_mu, cache_sig = self._stats(U)
            N = mu.shape[0]
            xj = np.broadcast_to(X[None], U.shape[:3]).reshape(N, -1)
            w = weight[sl].reshape(N, -1)
            r = xj - mu
            d_mu = w * r / sigma**2
            d_sigma = w * (r * r / sigma**3 - 1.0 / sigma)
            d_zs = np.where(s > SIGMA_FLOOR, d_sigma * expit(zs), 0.0)
            self._backward(d_mu, cache_mu, "mu", grads)
            self._backward(d_zs, cache_sig, "sig", grads)
        return grads

    def copy(self):
        return type(self)({k: v.copy() for k, v in self.params.items()}, self.layers, self.width)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "layers": self.layers,
            "width": self.width,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict):
        params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"])
                  for k, v in obj["params"].items()}
        return cls(params, obj["layers"], obj["width"])


def model_from_dict(obj: dict):
    family = obj.get("family")
    if family == "linear":
        return LinearGaussian.from_dict(obj)
    if family == "mlp":
        return MlpGaussian.from_dict(obj)
    raise ValueError(f"unknown conditional family {family!r}")


def make_model(family: str, n: int, rng: np.random.Generator, layers: int = DEFAULT_MLP_LAYERS,
               width: int = DEFAULT_MLP_WIDTH):
    if family == "linear":
        return LinearGaussian.init(n, rng)
    if family == "mlp":
        return MlpGaussian.init(n, rng, layers, width)
    raise ValueError(f"unknown conditional family {family!r}")


# ---------------------------------------------------------------- single-node helpers


def _node_adjacency(parent_mask, j):
    parent_mask = np.asarray(parent_mask)
    n = parent_mask.shape[0]
    if parent_mask[j]:
        raise ValueError("a node cannot be its own parent")
    A = np.zeros((n, n))
    A[:, j] = parent_mask
    return A


def loglik_node(x, parent_mask, j: int, model) -> float:
    """Log-density of ``x[j]`` given the parents flagged in ``parent_mask``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    A = _node_adjacency(parent_mask, j)
    return float(model.loglik(x[None, :], A)[0, j])


def grad_params_node(x, parent_mask, j: int, model) -> dict:
    x = np.asarray(x, dtype=float)
    A = _node_adjacency(parent_mask, j)
    weight = np.zeros((1, x.shape[0]))
    weight[0, j] = 1.0
    return model.grad(x[None, :], A, weight)
