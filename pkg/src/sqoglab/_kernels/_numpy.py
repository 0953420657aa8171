"""Pure-numpy kernel implementations (fallback backend).

Same interface as the compiled core; floating-point results may differ in the
last ulp because BLAS kernels reorder summations differently.
"""

from __future__ import annotations

import numpy as np


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_backward(dy: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, dy, 0.0)


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dw, db, dx


def mlp_forward(x: np.ndarray, weights: list, biases: list) -> np.ndarray:
    last = len(weights) - 1
    a = x
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if l < last else z
    return a


def mlp_forward_cached(x: np.ndarray, weights: list, biases: list):
    last = len(weights) - 1
    activations = [x]
    pre_acts = []
    a = x
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        pre_acts.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
            activations.append(a)
        else:
            a = z
    return a, activations, pre_acts


def mlp_backward(upstream: np.ndarray, weights: list, activations: list, pre_acts: list):
    n_layers = len(weights)
    grads = [None] * n_layers
    d = upstream
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        dw = d.T @ activations[l]
        db = d.sum(axis=0)
        dx = d @ w
        grads[l] = (dw, db)
        d = np.where(pre_acts[l - 1] > 0.0, dx, 0.0) if l > 0 else dx
    return grads, d


def adam_step_inplace(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
