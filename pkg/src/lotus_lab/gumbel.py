"""Gumbel noise and tempered softmax activations of teacher logits.

Raw logits are first mapped to class probabilities with a softmax, so the
log inside the Gumbel-Softmax is always defined and ``tau=1, g=0`` returns
the teacher's ordinary softmax output unchanged.
"""

import numpy as np

from . import kernels
from .errors import InvalidInputError

# Stand-in for tau -> 0+.  For logit gaps >= 0.05 the losing classes end up
# below 1e-9 while max-shifted exponentials cannot overflow.
EPS_SHARPEN = 1e-3

_U_CLAMP = 1e-12


def gumbel_from_uniform(u):
    """Map uniforms on (0, 1) to standard Gumbel draws, ``-log(-log u)``."""
    u = np.clip(np.asarray(u, dtype=np.float64), _U_CLAMP, 1.0 - _U_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(k, rng, n=None):
    """Draw ``k`` i.i.d. Gumbel(0, 1) values (or an ``(n, k)`` matrix).

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    rng = np.random.default_rng(rng)
    shape = (k,) if n is None else (n, k)
    return gumbel_from_uniform(rng.random(shape))


def _prepare(logits, noise):
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[-1] == 0:
        raise InvalidInputError("need at least one class")
    if noise is None:
        g = np.zeros_like(z)
    else:
        g = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        if g.shape != z.shape:
            raise InvalidInputError(f"noise shape {g.shape} != logits shape {z.shape}")
    return np.ascontiguousarray(z), np.ascontiguousarray(g), single


def _check_tau(tau):
    if not tau > 0:
        raise InvalidInputError(f"temperature must be > 0, got {tau}")
    return float(tau)


def gumbel_softmax(logits, noise, tau):
    """Tempered softmax of noise-perturbed teacher log-probabilities.

    p_i = exp((log q_i + g_i) / tau) / sum_j exp((log q_j + g_j) / tau) with
    q = softmax(logits).  Works on a vector or row-wise on a matrix.
    """
    z, g, single = _prepare(logits, noise)
    p = kernels.gumbel_softmax_rows(z, g, _check_tau(tau))
    return p[0] if single else p


def softmax_temperature(logits, tau):
    """The noiseless variant: :func:`gumbel_softmax` with ``g = 0``."""
    return gumbel_softmax(logits, None, tau)


def sharpen(logits):
    """Near-one-hot target at the argmax; exact ties share the mass equally."""
    return gumbel_softmax(logits, None, EPS_SHARPEN)


def softmax(logits):
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    p = kernels.softmax_rows(np.ascontiguousarray(z))
    return p[0] if np.ndim(logits) == 1 else p


def log_softmax(logits):
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    out = kernels.log_softmax_rows(np.ascontiguousarray(z))
    return out[0] if np.ndim(logits) == 1 else out
