"""Filled-in peeling explorations driven by the perimeter kernels.

An exploration is targeted at a face of half-degree p (walk killed at -p), at
a vertex (killed at 0), or runs to infinity (h_up). Two algorithms are
provided: uniform peeling with exponential clocks (first-passage distance)
and peeling by layers, which tracks the exact (P, D, H) chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _fast
from .harmonic import Harmonic, log_hdown_p
from .kernel import DisplacementLaw, ModelConstants, model_constants
from .tails import tail_sums
from .walks import packed, sample_step_tilted

EVENT_NAMES = ("C", "G_left", "G_right", "C_stop")


class ParameterError(ValueError):
    pass


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# targets and events


@dataclass(frozen=True)
class Target:
    kind: str  # "face", "vertex" or "infinity"
    p: int = 0

    def __post_init__(self):
        if self.kind not in ("face", "vertex", "infinity"):
            raise ValueError(f"unknown target {self.kind!r}")
        if self.kind == "face" and self.p < 1:
            raise ValueError("face target needs p >= 1")

    @property
    def walk(self):
        """(walk kind, kill level) of the perimeter process."""
        if self.kind == "infinity":
            return "up", 0
        return "down", (self.p if self.kind == "face" else 0)

    def harmonic(self) -> Harmonic:
        kind, p = self.walk
        return Harmonic("up") if kind == "up" else Harmonic("down_p", p)


@dataclass(frozen=True)
class PeelEvent:
    kind: str  # one of EVENT_NAMES
    k: int  # C: half-degree of the new face; G: half-perimeter of the filled hole
    new_perimeter: int

    @property
    def walk_step(self) -> int:
        if self.kind == "C":
            return self.k - 1
        if self.kind == "C_stop":
            return 0
        return -self.k - 1


@dataclass
class EventTable:
    """Exact event probabilities out of half-perimeter m (C tail summed analytically)."""

    m: int
    c_probs: np.ndarray  # c_probs[k-1] = P(C_k), k = 1..K+1
    c_tail: float
    g_probs: np.ndarray  # g_probs[k] = P(G_left(k)) = P(G_right(k)), k = 0..m-1
    stop: float

    def total(self) -> float:
        return float(self.c_probs.sum() + self.c_tail + 2.0 * self.g_probs.sum() + self.stop)


def event_table(law: DisplacementLaw, m: int, target: Target) -> EventTable:
    """Probabilities of C_k, G_left(k), G_right(k) and C_stop from half-perimeter m."""
    h = target.harmonic()
    lm = h.log(m)
    K = law.K
    ks = np.arange(1, K + 2)
    c = law.prob(ks - 1) * np.exp(h.log(m + ks - 1) - lm)
    tp = law.tail_pos
    c_tail = 0.0
    if tp.p > 0:
        def f2(x, mm):
            return tp.prob(x) * np.exp(h.log(mm + x) - lm)

        c_tail = float(tail_sums(f2, K, np.array([float(m)]))[0])
    kk = np.arange(0, m)
    new_p = m - kk - 1
    g = 0.5 * law.prob(-kk - 1) * np.exp(h.log(new_p) - lm)
    stop = 0.0
    if target.kind == "face":
        stop = float(law.prob(-m - target.p)) * math.exp(-lm)
    return EventTable(m, c, c_tail, g, stop)


def event_row_sums(law: DisplacementLaw, target: Target, states) -> np.ndarray:
    return np.array([event_table(law, int(m), target).total() for m in np.atleast_1d(states)])


# ---------------------------------------------------------------------------
# exploration state and single steps


@dataclass
class ExplorationState:
    P: int
    target: Target
    n: int = 0
    T: float = 0.0
    D: int = 0
    H: int = 0
    alive: bool = True
    log: list = field(default_factory=list)

    @classmethod
    def start(cls, target: Target, P: int = 1) -> "ExplorationState":
        return cls(P=P, target=target, D=2 * P)


def peel_step(law: DisplacementLaw, state: ExplorationState, algorithm: str,
              rng: np.random.Generator) -> tuple[PeelEvent, ExplorationState]:
    """One filled-in peeling step; algorithm is "uniform" or "layers"."""
    if not state.alive:
        raise ValueError("exploration already ended")
    if algorithm not in ("uniform", "layers"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    m = state.P
    kind, p = state.target.walk
    x = sample_step_tilted(law, m, kind, p, rng)
    new = replace(state, log=state.log)
    new.n += 1
    if algorithm == "uniform":
        new.T += rng.standard_exponential() / (2.0 * m)
    if state.target.kind == "face" and x <= 0:
        ev = PeelEvent("C_stop", state.target.p, -state.target.p)
        new.P = -state.target.p
        new.alive = False
    elif x >= m:
        ev = PeelEvent("C", x - m + 1, x)
        new.P = x
    else:
        hole = m - x - 1
        side = "G_left" if rng.random() < 0.5 else "G_right"
        ev = PeelEvent(side, hole, x)
        new.P = x
        if x == 0:
            new.alive = False
    if algorithm == "layers" and ev.kind != "C_stop":
        code = {"C": _fast.EV_C, "G_left": _fast.EV_GL, "G_right": _fast.EV_GR}[ev.kind]
        step = abs(ev.new_perimeter - m)
        if new.P >= 1:
            new.P, new.D, new.H = _fast.layers_update(m, state.D, state.H, code, step)
    new.log = state.log + [ev]
    return ev, new


# ---------------------------------------------------------------------------
# full runs


@dataclass
class FppRun:
    tau: int
    d_fpp: float
    mean_given_path: float  # sum 1/(2P(i))
    var_given_path: float  # sum 1/(2P(i))^2

    @property
    def finished(self) -> bool:
        return self.tau > 0


def default_budget(ell: int) -> int:
    return 50 * max(ell, 20)


def run_uniform_fpp(law: DisplacementLaw, ell: int, rng: np.random.Generator,
                    max_steps: Optional[int] = None) -> FppRun:
    """Uniform peeling from a 2-gon towards a 2l-gon target."""
    tau, d, s1, s2 = _fast.fpp_run(packed(law), int(ell), int(max_steps or default_budget(ell)), rng)
    return FppRun(int(tau), float(d), float(s1), float(s2))


@dataclass
class LayersRun:
    tau: int
    d_gr: int
    H: int
    trajectory: Optional[np.ndarray]  # rows (P, D, H, event code, step size)

    @property
    def finished(self) -> bool:
        return self.tau > 0


def run_layers(law: DisplacementLaw, ell: int, rng: np.random.Generator,
               max_steps: Optional[int] = None, record: bool = False) -> LayersRun:
    budget = int(max_steps or default_budget(ell))
    traj = np.zeros((budget if record else 1, 5), np.int64)
    tau, dgr, H, n = _fast.layers_run(packed(law), int(ell), budget, rng, record, traj)
    return LayersRun(int(tau), int(dgr), int(H), traj[:n] if record else None)


# ---------------------------------------------------------------------------
# interpolation function for the layered height


@dataclass(frozen=True)
class Interpolation:
    """C^2 non-increasing f on [0, 1] with f(0)=1, f(1)=0 and flat ends.

    -f' is a plateau of height A with smoothstep shoulders of width delta,
    so max |f'| = A exactly.
    """

    eps: float
    A: float
    delta: float
    certified_slope: float

    def slope(self, x):
        """-f'(x)."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        t = np.minimum(np.minimum(x, 1.0 - x) / self.delta, 1.0)
        return self.A * t * t * (3.0 - 2.0 * t)

    def __call__(self, x):
        """f extended by 1 below 0 and by 0 above 1."""
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, 0.0, 1.0)
        a, d = self.A, self.delta

        def shoulder(u):  # integral of a*s(v/d) dv from 0 to u, u <= d
            t = u / d
            return a * d * (t**3 - t**4 / 2.0)

        left = np.minimum(xc, d)
        mid = np.clip(xc - d, 0.0, 1.0 - 2 * d)
        right = np.clip(xc - (1.0 - d), 0.0, d)
        # the right shoulder mirrors the left: integral over [1-d, 1-d+r] of the decreasing part
        right_int = a * d / 2.0 - shoulder(d - right)
        integral = shoulder(left) + a * mid + right_int
        return 1.0 - integral


def interpolation_f(eps: float, grid: int = 100001) -> Interpolation:
    if not 0.0 < eps < 1.0:
        raise ConstructionError("eps must lie in (0, 1)")
    A = 1.0 + eps / 2.0
    delta = 1.0 - 1.0 / A  # total integral A (1 - delta) = 1
    if not 0 < delta < 0.5:
        raise ConstructionError("slope bound infeasible")
    f = Interpolation(eps, A, delta, 0.0)
    xs = np.linspace(0.0, 1.0, grid)
    sampled = float(f.slope(xs).max())
    if sampled > 1.0 + eps:
        raise ConstructionError("sampled slope exceeds bound")
    return Interpolation(eps, A, delta, max(sampled, A))


# ---------------------------------------------------------------------------
# martingales


VARIANTS = ("exact", "lambda", "eps_lambda", "eps_k0")


@dataclass
class MartingaleParams:
    ell: int
    lam: float = 0.0
    eps: float = 0.5
    k0: int = 1
    p_q: float = 0.25
    C: float = 0.0
    f: Optional[Interpolation] = None

    @property
    def A(self) -> float:
        e = self.eps
        return (1 + 3 * e) ** 3 / (1 - e) * self.p_q / 2.0


def _log_hl(x, ell):
    return log_hdown_p(x, ell)


def _kill_factor(law: DisplacementLaw, P, ell):
    """nu([-P+1, oo)) + nu(-P-l) for positive P."""
    P = np.asarray(P)
    return law.upper_mass(1 - P) + law.prob(-P - ell)


def martingale_trace(law: DisplacementLaw, traj: np.ndarray, params: MartingaleParams,
                     variants=VARIANTS) -> dict:
    """Log-values of the requested processes along a layers trajectory.

    traj rows are (P, D, H, event, k) before each step; the last row is the
    terminal C_stop. Returns arrays of length tau + 1.
    """
    ell = params.ell
    P = np.append(traj[:, 0], -ell).astype(np.int64)
    alive = P > 0
    out = {}
    if "exact" in variants:
        fac = np.where(alive[:-1], -np.log(_kill_factor(law, np.maximum(P[:-1], 1), ell)), 0.0)
        out["exact"] = -_log_hl(P, ell) + np.concatenate([[0.0], np.cumsum(fac)])
    inv = np.where(alive, 1.0 / np.maximum(P, 1), 0.0)
    if "lambda" in variants:
        if params.lam <= 0:
            raise ParameterError("lambda must be positive")
        out["lambda"] = -_log_hl(P, ell) + params.lam * np.concatenate([[0.0], np.cumsum(inv[:-1])])
    if "eps_k0" in variants:
        w = np.where(P >= params.k0, inv, 0.0)
        out["eps_k0"] = -_log_hl(P, ell) + (params.p_q - params.eps) * np.concatenate(
            [[0.0], np.cumsum(w[:-1])])
    if "eps_lambda" in variants:
        if params.f is None:
            raise ParameterError("eps_lambda needs an interpolation function")
        Pa = traj[:, 0].astype(float)
        Hf = traj[:, 2] + params.f(traj[:, 1] / (2.0 * Pa))
        Hf = np.append(Hf, Hf[-1])  # frozen after absorption
        comp = params.A * np.log(Pa) / Pa + params.C / Pa
        out["eps_lambda"] = params.lam * Hf - params.lam * np.concatenate([[0.0], np.cumsum(comp)])
    return out


def _transition_weights(law: DisplacementLaw, p: int, ell: int):
    """Kernel of the walk killed at -l from p: (targets, probs) on [1, p+K], C tail, death."""
    lp = _log_hl(p, ell)
    ys = np.arange(1, p + law.K + 1)
    probs = law.prob(ys - p) * np.exp(_log_hl(ys, ell) - lp)
    death = float(law.prob(-p - ell)) * math.exp(-lp)
    return ys, probs, death


def one_step_expectation(law: DisplacementLaw, params: MartingaleParams, p: int, d: int = 1,
                         variant: str = "exact") -> float:
    """E[M_{n+1} | F_n] / M_n at perimeter p (and d for the layered variant), by summing the kernel."""
    ell = params.ell
    tp = law.tail_pos
    K = law.K
    lp = _log_hl(p, ell)
    ys, probs, death = _transition_weights(law, p, ell)
    if variant in ("exact", "lambda", "eps_k0"):
        # E[1/h(P_{n+1})] h(P_n), summed over the transition probabilities
        ratio = probs * np.exp(lp - _log_hl(ys, ell))
        s = float(ratio.sum()) + death * math.exp(lp)
        if tp.p > 0:
            def f2(x, pp):
                return tp.prob(x - pp) * np.exp(_log_hl(x, ell) - lp) * np.exp(lp - _log_hl(x, ell))

            s += float(tail_sums(f2, p + K, np.array([float(p)]))[0])
        if variant == "exact":
            return s / float(_kill_factor(law, p, ell))
        if variant == "lambda":
            return s * math.exp(params.lam / p)
        return s * math.exp((params.p_q - params.eps) / p if p >= params.k0 else 0.0)
    if variant != "eps_lambda":
        raise ParameterError(f"unknown variant {variant!r}")
    return float(_layered_ratio(law, params, p, np.array([d]))[0])


def _layered_ratio(law: DisplacementLaw, params: MartingaleParams, p: int, ds: np.ndarray
                   ) -> np.ndarray:
    """E[exp(lam dH^f)] exp(-lam (A log p + C)/p) for every d in ds at perimeter p."""
    ell = params.ell
    f = params.f
    lam = params.lam
    tp = law.tail_pos
    lp = _log_hl(p, ell)
    ys, probs, death = _transition_weights(law, p, ell)
    ds = np.asarray(ds, dtype=float)[:, None]
    y0 = f(ds / (2.0 * p))
    kpos = ys - p
    kc = kpos[kpos >= 0]
    c_part = np.exp(lam * (f((ds - 1) / (2.0 * (p + kc))) - y0)) @ probs[kpos >= 0]
    kg = -kpos[kpos < 0]
    newp = p - kg
    right = np.exp(lam * (f((ds - 2 * kg) / (2.0 * newp)) - y0))
    left = np.exp(lam * (f((ds - 1) / (2.0 * newp)) - y0))
    g_part = (0.5 * (right + left)) @ probs[kpos < 0]
    s = c_part + g_part + death
    if tp.p > 0:
        def f2(x, dd):
            shape = np.broadcast(x, dd).shape
            xf = np.broadcast_to(x, shape).ravel()
            w = tp.prob(xf - p) * np.exp(_log_hl(xf, ell) - lp)
            w = w.reshape(shape)
            return w * np.exp(lam * (f((dd - 1) / (2.0 * x)) - f(dd / (2.0 * p))))

        s = s + tail_sums(f2, p + law.K, ds[:, 0])
    return s * math.exp(-lam * (params.A * math.log(p) / p + params.C / p))


def calibrate_C(law: DisplacementLaw, params: MartingaleParams, p_max: int = 300) -> float:
    """Smallest C making the layered one-step inequality hold on every state with p <= p_max."""
    zero = replace(params, C=0.0)
    worst = -np.inf
    for p in range(1, p_max + 1):
        r = _layered_ratio(law, zero, p, np.arange(1, 2 * p + 1))
        worst = max(worst, float(np.max(p * np.log(r) / params.lam)))
    return max(worst, 0.0)


def default_params(law: DisplacementLaw, ell: int, eps: float = 0.5, lam_layers: float = 0.5,
                   constants: Optional[ModelConstants] = None) -> dict:
    """Parameter sets for each variant: gamma(q) for the lambda process, k0(eps) from the constants."""
    mc = constants or model_constants(law, eps_grid=(eps,))
    f = interpolation_f(eps)
    return {
        "exact": MartingaleParams(ell),
        "lambda": MartingaleParams(ell, lam=mc.gamma_q),
        "eps_k0": MartingaleParams(ell, eps=eps, k0=mc.k0[eps], p_q=mc.p_q),
        "eps_lambda": MartingaleParams(ell, lam=lam_layers, eps=eps, p_q=mc.p_q, f=f),
    }
