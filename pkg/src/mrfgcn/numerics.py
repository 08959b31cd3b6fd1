"""Dense numeric kernels shared by the learning modules.

Everything is double precision. Randomness comes from named Philox
streams derived from one run seed, so results do not depend on the
order in which unrelated components draw numbers.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based RNG stream for one purpose (init, dropout, split, ...)."""
    key = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(key))


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m):
    """Row-wise softmax with max subtraction; rows sum to 1."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(v, axis=None):
    """Stable log(sum(exp(v))) along `axis` (whole array when None)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector is undefined")
    if axis is None:
        hi = v.max()
        return float(np.log(np.exp(v - hi).sum()) + hi)
    hi = v.max(axis=axis, keepdims=True)
    out = np.log(np.exp(v - hi).sum(axis=axis, keepdims=True)) + hi
    return np.squeeze(out, axis=axis)


def dropout_mask(shape, keep_prob, rng):
    """Binary mask scaled by 1/keep_prob, so kept activations are unbiased."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape, dtype=np.float64)
    return (rng.random(shape) < keep_prob) / keep_prob


@dataclass
class AdamState:
    """Per-parameter Adam accumulators plus hyperparameters.

    weight_decay is decoupled: it shrinks the parameter directly and never
    enters the moment estimates.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param, lr=0.01, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        z = np.zeros_like(np.asarray(param, dtype=np.float64))
        return cls(m=z.copy(), v=z.copy(), lr=lr, weight_decay=weight_decay,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param, grad, state: AdamState):
    """One bias-corrected Adam minimization step; returns the new parameter.

    The moment accumulators and step counter in `state` are updated in place.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
                         f"state {state.m.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    new = param * (1.0 - state.lr * state.weight_decay)
    new = new - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new
