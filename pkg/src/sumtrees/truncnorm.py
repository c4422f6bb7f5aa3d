"""One-sided truncated normal draws, stable far into the tail."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

# beyond this the tail mass underflows and exponential rejection takes over
_TAIL = 35.0


def _exp_rejection(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Robert (1995) translated-exponential proposal for a >= 0
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        z = a[todo] + rng.standard_exponential(todo.size) / lam[todo]
        ok = rng.random(todo.size) <= np.exp(-0.5 * (z - lam[todo]) ** 2)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return out


def standard_above(a, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draws conditioned on exceeding ``a`` (elementwise)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    u = 1.0 - rng.random(a.shape)  # in (0, 1]
    out = np.empty_like(a)
    low = a <= 0.0
    # Phi(a) <= 1/2 here, so the complement keeps full precision
    pa = ndtr(a[low])
    out[low] = ndtri(pa + u[low] * (1.0 - pa))
    mid = ~low & (a < _TAIL)
    out[mid] = -ndtri(u[mid] * ndtr(-a[mid]))
    far = a >= _TAIL
    if far.any():
        out[far] = _exp_rejection(a[far], rng)
    return np.maximum(out, a)


def sample_latent(mean, positive, rng: np.random.Generator) -> np.ndarray:
    """Draw ``z ~ N(mean, 1)`` truncated to ``z > 0`` where ``positive`` and to
    ``z < 0`` elsewhere. The sign constraint holds exactly."""
    mean = np.asarray(mean, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    # flip the negative side so every draw is a lower truncation
    sign = np.where(positive, 1.0, -1.0)
    t = standard_above(-sign * mean, rng)
    z = sign * (sign * mean + t)
    tiny = np.finfo(float).tiny
    return np.where(positive, np.maximum(z, tiny), np.minimum(z, -tiny))
