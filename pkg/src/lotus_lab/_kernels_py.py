"""Pure-numpy reference kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
The compiled versions are selected at import time by :mod:`lotus_lab.kernels`;
this module is the fallback and the reference the compiled core is tested
against.
"""

import numpy as np

BACKEND = "python"


def mlp_forward(weights, biases, x):
    """Return the list of activations ``[x, h1, ..., logits]`` for a batch.

    Hidden layers use tanh, the last layer is affine.
    """
    acts = [x]
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return acts


def mlp_backward(weights, acts, delta):
    """Batch-mean parameter gradients given dL/dlogits per sample."""
    n = delta.shape[0]
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    d = delta
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ d / n
        grads_b[i] = d.sum(axis=0) / n
        if i > 0:
            d = (d @ weights[i].T) * (1.0 - acts[i] ** 2)
    return grads_w, grads_b


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """In-place AdamW update of one parameter array (decay applied first)."""
    param *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def log_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gumbel_softmax_rows(logits, noise, tau):
    """softmax((log softmax(logits) + noise) / tau) row by row."""
    return softmax_rows((log_softmax_rows(logits) + noise) / tau)


def xlogy_ratio(p, q):
    """Elementwise p * log(p / q) with the 0 * log 0 = 0 convention."""
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask] / q[mask])
    return out


def jsd_rows(p, q):
    """Pointwise Jensen-Shannon divergence between matching rows, in nats."""
    m = 0.5 * (p + q)
    return 0.5 * xlogy_ratio(p, m).sum(axis=1) + 0.5 * xlogy_ratio(q, m).sum(axis=1)
