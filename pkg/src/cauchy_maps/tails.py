"""Analytic power-law tails and infinite tail sums.

A tail with constant p and exponent a puts mass
``p * ((k - 1/2)^(1-a) - (k + 1/2)^(1-a)) / (a - 1)`` on each integer k beyond
the table, so that the mass of [k, infinity) is ``p * (k - 1/2)^(1-a) / (a-1)``
in closed form. For a = 2 this is p / (k^2 - 1/4), i.e. p k^-2 to leading order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(160)
# map Gauss-Legendre from [-1, 1] to (0, 1]
_T = 0.5 * (_GL_NODES + 1.0)
_W = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class PowerTail:
    """Telescoping power-law tail beyond a table cutoff."""

    p: float
    a: float = 2.0

    def mass_from(self, k):
        """Mass of [k, infinity); valid for k >= 1."""
        if self.p == 0.0:
            return np.zeros_like(np.asarray(k, dtype=float)) + 0.0
        k = np.asarray(k, dtype=float)
        return self.p * (k - 0.5) ** (1.0 - self.a) / (self.a - 1.0)

    def prob(self, k):
        """Mass at k; the difference of tail masses is formed without cancellation."""
        k = np.asarray(k, dtype=float)
        if self.p == 0.0:
            return np.zeros_like(k)
        ratio = -np.expm1((1.0 - self.a) * np.log1p(1.0 / (k - 0.5)))
        return self.mass_from(k) * ratio

    def invert(self, u):
        """Largest integer k with mass_from(k) >= u (inverse of the tail CDF)."""
        y = 0.5 + (u * (self.a - 1.0) / self.p) ** (-1.0 / (self.a - 1.0))
        return np.floor(y)


def tail_sum(f, start: int) -> float:
    """Sum of a smooth, eventually power-decaying f over integers k > start.

    Midpoint Euler-Maclaurin: integral from start+1/2 to infinity plus the
    first two boundary corrections. The integral uses x = X0 / t^2 so that
    integrands decaying like x^-3/2 or faster become smooth on (0, 1].
    """
    x0 = start + 0.5
    xs = x0 / _T**2
    integral = float(np.sum(_W * f(xs) * 2.0 * x0 / _T**3))
    step = max(1e-3 * x0, 1e-3)
    d1 = (f(np.array([x0 + step]))[0] - f(np.array([x0 - step]))[0]) / (2 * step)
    d3 = (
        f(np.array([x0 + 2 * step]))[0]
        - 2 * f(np.array([x0 + step]))[0]
        + 2 * f(np.array([x0 - step]))[0]
        - f(np.array([x0 - 2 * step]))[0]
    ) / (2 * step**3)
    return integral + d1 / 24.0 - 7.0 * d3 / 5760.0


def tail_sums(f2, start: int, params: np.ndarray) -> np.ndarray:
    """Vectorised tail_sum over a parameter array; f2(x, params) broadcasts."""
    x0 = start + 0.5
    xs = (x0 / _T**2)[:, None]
    pr = np.asarray(params, dtype=float)[None, :]
    integral = np.sum((_W * 2.0 * x0 / _T**3)[:, None] * f2(xs, pr), axis=0)
    step = max(1e-3 * x0, 1e-3)

    def at(x):
        return f2(np.full((1, 1), x), pr)[0]

    d1 = (at(x0 + step) - at(x0 - step)) / (2 * step)
    d3 = (at(x0 + 2 * step) - 2 * at(x0 + step) + 2 * at(x0 - step) - at(x0 - 2 * step)) / (
        2 * step**3
    )
    return integral + d1 / 24.0 - 7.0 * d3 / 5760.0
