"""Samplers for the displacement walk and its Doob transforms.

Transforms are named ``"up"`` (conditioned to stay positive forever) and
``"down"`` with a target p >= 1 (conditioned to stay positive until a single
jump to -p; p = l gives the walk that dies at -l). The exact per-step law is
nu(k) h(m + k) / h(m), with death probability nu(-m - p) / h(m).
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _fast
from .harmonic import Harmonic
from .kernel import DisplacementLaw, KernelError
from .tails import tail_sums

ROW_TOL = 1e-10

_PACKED: "weakref.WeakKeyDictionary[DisplacementLaw, np.ndarray]" = weakref.WeakKeyDictionary()
_CHECKED: "weakref.WeakKeyDictionary[DisplacementLaw, set]" = weakref.WeakKeyDictionary()


class EmptyInput(ValueError):
    pass


_PACKED_BY_SUM: dict = {}


def packed(law: DisplacementLaw) -> np.ndarray:
    """Flat array form of a law for the compiled samplers.

    Cached per object and by checksum, so copies of a law received by worker
    processes share one table.
    """
    kd = _PACKED.get(law)
    if kd is None:
        key = law.checksum()
        kd = _PACKED_BY_SUM.get(key)
        if kd is None:
            kd = _fast.kernel_arrays(law)
            if len(_PACKED_BY_SUM) >= 8:
                _PACKED_BY_SUM.clear()
            _PACKED_BY_SUM[key] = kd
        _PACKED[law] = kd
    return kd


def _kind_code(kind: str) -> int:
    if kind == "up":
        return _fast.UP
    if kind == "down":
        return _fast.DOWN
    raise ValueError(f"unknown walk kind {kind!r}")


def harmonic_for(kind: str, p: int = 0) -> Harmonic:
    if kind == "up":
        return Harmonic("up")
    return Harmonic("down_p", int(p))


def row_sums(law: DisplacementLaw, kind: str, p: int, states) -> np.ndarray:
    """Total mass of the transformed kernel out of each state (1 when harmonic).

    Summed term by term from the law's tables, with the analytic tail for
    positive jumps beyond the table; independent of the compiled sampler.
    """
    h = harmonic_for(kind, p)
    states = np.atleast_1d(np.asarray(states, dtype=np.int64))
    K = law.K
    out = np.empty(len(states))
    ks = np.arange(0, K + 1)
    tp = law.tail_pos
    for i, m in enumerate(states):
        logm = h.log(m)
        js = np.arange(1, m)
        neg = float(np.dot(law.prob(-js), np.exp(h.log(m - js) - logm))) if m > 1 else 0.0
        pos = float(np.dot(law.pos[: K + 1], np.exp(h.log(m + ks) - logm)))
        out[i] = neg + pos
        if kind == "down":
            out[i] += float(law.prob(-m - p)) * math.exp(-logm)
    if tp.p > 0:

        def f2(x, mm):
            return tp.prob(x) * np.exp(h.log(mm + x) - h.log(mm))

        out += tail_sums(f2, K, states.astype(float))
    return out


def check_rows(law: DisplacementLaw, kind: str, p: int, states, tol: float = ROW_TOL) -> float:
    """Raise KernelError if any row sum misses 1 by more than tol; returns the max defect."""
    defect = np.abs(row_sums(law, kind, p, states) - 1.0)
    worst = float(defect.max())
    if worst > tol:
        bad = int(np.atleast_1d(states)[int(defect.argmax())])
        raise KernelError(f"row sum defect {worst:.2e} at state {bad} ({kind}, p={p})")
    return worst


def _ensure_row(law, kind, p, m):
    seen = _CHECKED.setdefault(law, set())
    key = (kind, p, int(m))
    if key not in seen:
        check_rows(law, kind, p, [m])
        seen.add(key)


def sample_step_tilted(law: DisplacementLaw, m: int, kind: str, p: int,
                       rng: np.random.Generator) -> int:
    """One step of the transformed walk from m >= 1; returns -p on death."""
    if m < 1:
        raise ValueError("state must be >= 1")
    _ensure_row(law, kind, p, m)
    return int(_fast.step_once(packed(law), _kind_code(kind), int(p), int(m), rng))


@dataclass
class WalkPath:
    kind: str
    start: int
    target: int
    steps: np.ndarray
    tau: Optional[int]
    final_jump_from: Optional[int]

    @property
    def finished(self) -> bool:
        return self.tau is not None


def sample_path(law: DisplacementLaw, kind: str, start: int, p: int, max_steps: int,
                rng: np.random.Generator, record: bool = True) -> WalkPath:
    """Run to absorption or max_steps; unfinished paths have tau None."""
    if start < 1:
        raise ValueError("start must be >= 1")
    states, tau, last = _fast.walk_path(packed(law), _kind_code(kind), int(p), int(start),
                                        int(max_steps), rng, record)
    if tau < 0:
        return WalkPath(kind, start, p, states, None, None)
    return WalkPath(kind, start, p, states, int(tau), int(last))


def lifetime(law: DisplacementLaw, ell: int, rng: np.random.Generator,
             max_steps: int | None = None, start: int = 1):
    """(tau, last positive state) for the walk dying at -ell; tau = -1 on overflow."""
    max_steps = max_steps or 50 * max(ell, 20)
    return _fast.lifetime(packed(law), int(ell), int(start), int(max_steps), rng)


def positions_at(law: DisplacementLaw, kind: str, p: int, start: int, times,
                 rng: np.random.Generator) -> np.ndarray:
    """States at the given increasing times; values <= 0 mean already killed."""
    times = np.asarray(times, dtype=np.int64)
    out = np.zeros(len(times), np.int64)
    _fast.walk_checkpoints(packed(law), _kind_code(kind), int(p), int(start), times, rng, out)
    return out


@dataclass
class CoupledPair:
    n: int
    ell: int
    path_infty: WalkPath
    survived: bool
    path_ell: Optional[WalkPath]

    @property
    def survival_probability(self) -> float:
        return (1 + self.ell) / (int(self.path_infty.steps[-1]) + self.ell)


def sample_coupled(law: DisplacementLaw, n: int, ell: int, rng: np.random.Generator,
                   start: int = 1) -> CoupledPair:
    """Run the h_up walk for n steps and keep it as the killed walk w.p. (1+l)/(P(n)+l).

    On the non-survival event only the flag is exposed; no killed trajectory
    is fabricated.
    """
    if n < 1 or ell < 1:
        raise ValueError("need n >= 1 and ell >= 1")
    path = sample_path(law, "up", start, 0, n, rng)
    s_n = int(path.steps[-1])
    survived = bool(rng.random() < (1 + ell) / (s_n + ell))
    return CoupledPair(n, ell, path, survived, path if survived else None)


def final_perimeter_cdf(u):
    """Limit CDF of P_l(tau - 1)/l for the a = 2 regime."""
    u = np.asarray(u, dtype=float)
    r = np.sqrt(u)
    return 2.0 / math.pi * (r / (1.0 + u) + np.arctan(r))


def final_perimeter_density(u):
    u = np.asarray(u, dtype=float)
    return 2.0 / math.pi / (np.sqrt(u) * (1.0 + u) ** 2)


def dkw_halfwidth(n: int, alpha: float = 0.05) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width for an empirical CDF."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def ks_distance(samples, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = cdf(x)
    up = np.arange(1, n + 1) / n - f
    down = f - np.arange(0, n) / n
    return float(max(up.max(), down.max()))


@dataclass
class LifetimeStats:
    ell: int
    count: int
    tau_over_ell: np.ndarray
    final_over_ell: np.ndarray
    dkw: float
    hist: np.ndarray
    tau_edges: np.ndarray
    final_edges: np.ndarray

    def ks_final(self) -> float:
        return ks_distance(self.final_over_ell, final_perimeter_cdf)


def lifetime_statistics(taus, finals, ell: int, bins: int = 30) -> LifetimeStats:
    """Joint histogram and marginals of (tau/l, P(tau-1)/l) over finished paths."""
    taus = np.asarray(taus, dtype=float)
    finals = np.asarray(finals, dtype=float)
    ok = taus > 0
    if not ok.any():
        raise EmptyInput("no finished paths")
    t = taus[ok] / ell
    f = finals[ok] / ell
    hist, te, fe = np.histogram2d(np.log10(t), np.log10(f), bins=bins)
    return LifetimeStats(ell, int(ok.sum()), t, f, dkw_halfwidth(int(ok.sum())), hist, te, fe)
