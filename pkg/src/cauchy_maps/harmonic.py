"""Harmonic functions of the step law, evaluated in log space.

Three families are supported:

* ``down``: h(l) = 4^-l * C(2l, l) for l >= 0, zero for l < 0.
* ``up``: h(l) = 2 l * down(l).
* ``down_p``: h(l) = down(l) * down(p) * l / (l + p) for l >= 1, with the
  convention h(-p) = 1 and zero at every other non-positive argument.

Small arguments use exact integer binomials; large arguments use the
Stirling expansion of log(Gamma(2x+1) / (Gamma(x+1)^2 4^x)), which keeps the
relative error near machine precision for arguments up to 1e9 and beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

_EXACT_CUTOFF = 64
_LOG_PI = math.log(math.pi)

# log(C(2x, x) / 4^x) for x < _EXACT_CUTOFF, from exact big-integer binomials
_LOG_DOWN_SMALL = np.array(
    [math.log(math.comb(2 * x, x)) - 2 * x * math.log(2.0) for x in range(_EXACT_CUTOFF)]
)

# Stirling coefficients of log h_down(x) + 0.5 log(pi x), in odd powers of 1/x
_SERIES = (-1.0 / 8.0, 1.0 / 192.0, -1.0 / 640.0, 17.0 / 14336.0, -31.0 / 18432.0)


def _log_down_series(x):
    inv = 1.0 / x
    inv2 = inv * inv
    acc = _SERIES[-1]
    for coef in _SERIES[-2::-1]:
        acc = acc * inv2 + coef
    return -0.5 * (_LOG_PI + np.log(x)) + acc * inv


def log_hdown(x):
    """Log of h_down at integer (or real, for x >= 64) arguments; -inf below zero."""
    scalar = np.isscalar(x)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.full(xa.shape, -np.inf)
    small = (xa >= 0) & (xa < _EXACT_CUTOFF)
    if small.any():
        out[small] = _LOG_DOWN_SMALL[xa[small].astype(np.int64)]
    big = xa >= _EXACT_CUTOFF
    if big.any():
        out[big] = _log_down_series(xa[big])
    return float(out[0]) if scalar else out


def log_hup(x):
    """Log of h_up = 2 x h_down(x); -inf for x <= 0."""
    scalar = np.isscalar(x)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.full(xa.shape, -np.inf)
    pos = xa > 0
    if pos.any():
        out[pos] = np.log(2.0 * xa[pos]) + log_hdown(xa[pos])
    return float(out[0]) if scalar else out


def log_hdown_p(x, p: int):
    """Log of the face-targeted harmonic function with target half-perimeter p.

    p = 0 reduces to h_down (vertex target), with h(0) = 1.
    """
    if p < 0:
        raise ValueError("target half-perimeter must be >= 0")
    scalar = np.isscalar(x)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.full(xa.shape, -np.inf)
    out[xa == -p] = 0.0
    pos = xa >= 1
    if pos.any():
        xp = xa[pos]
        out[pos] = log_hdown(xp) + log_hdown(float(p)) + np.log(xp) - np.log(xp + p)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class Harmonic:
    """One harmonic function of the step law: ``down``, ``up`` or ``down_p``."""

    kind: str
    p: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("down", "up", "down_p"):
            raise ValueError(f"unknown harmonic kind {self.kind!r}")
        if self.kind == "down_p" and self.p < 0:
            raise ValueError("p must be nonnegative")

    def log(self, x):
        if self.kind == "down":
            return log_hdown(x)
        if self.kind == "up":
            return log_hup(x)
        return log_hdown_p(x, self.p)

    def __call__(self, x):
        return np.exp(self.log(x))

    def ratio(self, x, y):
        """h(x) / h(y), computed as an exponentiated log difference."""
        return np.exp(self.log(x) - self.log(y))

    def table(self, upto: int) -> np.ndarray:
        """Cached values h(0..upto)."""
        hit = self._cache.get("table")
        if hit is None or len(hit) <= upto:
            hit = np.exp(self.log(np.arange(upto + 1)))
            self._cache["table"] = hit
        return hit[: upto + 1]


HarmonicKind = Union[str, tuple]


def as_harmonic(kind: HarmonicKind) -> Harmonic:
    """Accept ``"down"``, ``"up"``, ``("down_p", p)`` or a Harmonic."""
    if isinstance(kind, Harmonic):
        return kind
    if isinstance(kind, tuple):
        name, p = kind
        return Harmonic(name, int(p))
    return Harmonic(kind)


def h_eval(kind: HarmonicKind, ell):
    """Evaluate a harmonic function; negative arguments are allowed."""
    return as_harmonic(kind)(ell)
