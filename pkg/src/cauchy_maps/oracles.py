"""Exact and error-controlled numerics used as ground truth.

* first-passage laws of the tree-encoding walk (iterated convolution, with a
  cycle-lemma cross-check),
* partition functions W^(l)[n] and W^(l) with certified error,
* the loop-equation (Tutte) row sums,
* forward dynamic programs for the transformed walks, with every bit of mass
  that leaves the truncated state space accounted for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve

from .harmonic import Harmonic, log_hdown, log_hdown_p, log_hup
from .kernel import DisplacementLaw, MuLaw, mu_law
from .tails import tail_sums


class HorizonError(Exception):
    pass


class TruncationError(Exception):
    pass


def _conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if min(len(a), len(b)) <= 64 or len(a) * len(b) <= 1 << 22:
        return np.convolve(a, b)
    out = fftconvolve(a, b)
    np.maximum(out, 0.0, out=out)
    return out


# ---------------------------------------------------------------------------
# first passage of the tree-encoding walk


@dataclass
class FirstPassageTable:
    k: int
    n_max: int
    probs: np.ndarray  # probs[n] = P(tau_{-k} = n), 0 <= n <= n_max
    tail_mass: float

    def expectation(self, fn) -> float:
        n = np.arange(1, self.n_max + 1)
        return float(np.dot(self.probs[1:], fn(n)))


def _mu_array(mu: MuLaw, length: int) -> np.ndarray:
    """mu(-1), mu(0), ..., as a dense array of the given length."""
    out = np.zeros(length)
    n = min(length, len(mu.table))
    out[:n] = mu.table[:n]
    if length > len(mu.table) and mu.tail_weight is not None:
        ks = np.arange(len(mu.table) - 1, length - 1, dtype=float)
        out[len(mu.table):] = mu.tail_weight(ks)
    return out


def first_passage_law(mu: MuLaw, k: int, n_max: int, max_tail: float | None = None
                      ) -> FirstPassageTable:
    """P(tau_{-k} = n) for n <= n_max by iterated convolution.

    The walk is skip-free downward, so at time t only positions at most
    -k + (n_max - t) can still reach -k by the horizon; the rest is dropped
    into the tail mass.
    """
    if k < 1:
        raise ValueError("depth must be >= 1")
    probs = np.zeros(n_max + 1)
    if k > n_max:
        return FirstPassageTable(k, n_max, probs, 1.0)
    mu_arr = _mu_array(mu, n_max + 1)
    dist = np.zeros(n_max)  # index i <-> position -k + 1 + i
    dist[k - 1] = 1.0
    for t in range(n_max):
        horizon = n_max - t - 1
        new = _conv(dist, mu_arr[: len(dist) + 1])
        probs[t + 1] = new[0]
        dist = new[1: horizon + 1]
        if not len(dist):
            break
    tail = max(0.0, 1.0 - float(probs.sum()))
    if max_tail is not None and tail > max_tail:
        raise HorizonError(f"tail mass {tail:.3e} exceeds {max_tail:.1e}")
    return FirstPassageTable(k, n_max, probs, tail)


def first_passage_cycle_lemma(mu: MuLaw, k: int, n: int) -> float:
    """(k/n) P(Y_n = -k) for the unconstrained walk."""
    if n < k:
        return 0.0
    mu_arr = _mu_array(mu, n + 1)
    # only positions <= -k + (n - t) can still end at -k
    dist = np.ones(1)
    offset = 0  # position of index 0
    for t in range(n):
        new = _conv(dist, mu_arr)
        offset -= 1
        top = -k + (n - t - 1)  # largest useful position after this step
        keep = top - offset + 1
        dist = new[: max(keep, 0)]
    idx = -k - offset
    val = dist[idx] if 0 <= idx < len(dist) else 0.0
    return k / n * float(val)


def first_passage_exact(mu_exact: dict, k: int, n_max: int) -> list:
    """Exact rational first-passage probabilities for finitely supported mu."""
    probs = [Fraction(0)] * (n_max + 1)
    dist = {0: Fraction(1)}
    for t in range(n_max):
        new: dict = {}
        for y, w in dist.items():
            for step, pr in mu_exact.items():
                z = y + step
                new[z] = new.get(z, 0) + w * pr
        probs[t + 1] = new.pop(-k, Fraction(0))
        dist = {y: w for y, w in new.items() if y > -k and y <= -k + (n_max - t - 1)}
    return probs


# ---------------------------------------------------------------------------
# partition functions


def _log_c(law: DisplacementLaw) -> float:
    return math.log(law.c_q)


def partition_sized(law: DisplacementLaw, ell: int, n: int, fpt: FirstPassageTable | None = None,
                    exact: bool = False):
    """(W_1^(l)[n], W^(l)[n]) from first passage of the tree-encoding walk.

    W_1^(l)[n] = l/(l+1) C(2l, l) (c/4)^(l+1) P(tau_{-l-1} = n) and
    W^(l)[n] = W_1^(l)[n+1] / n.
    """
    if exact:
        if law.exact is None:
            raise ValueError("exact mode needs a rational kernel")
        mu = mu_law(law)
        c = 2 / law.exact[-1]
        fp = first_passage_exact(mu.exact, ell + 1, n + 1)
        pref = Fraction(ell, ell + 1) * math.comb(2 * ell, ell) * (c / 4) ** (ell + 1)
        w1 = pref * fp[n]
        return w1, pref * fp[n + 1] / n
    if fpt is None or fpt.k != ell + 1 or fpt.n_max < n + 1:
        fpt = first_passage_law(mu_law(law, check=False), ell + 1, n + 1)
    logpref = (math.log(ell / (ell + 1)) + math.lgamma(2 * ell + 1) - 2 * math.lgamma(ell + 1)
               + (ell + 1) * (_log_c(law) - math.log(4.0)))
    w1 = math.exp(logpref) * fpt.probs[n]
    return w1, math.exp(logpref) * fpt.probs[n + 1] / n


@dataclass
class WEstimate:
    ell: int
    log_W: float
    rel_err: float
    n_max: int


def W_total(law: DisplacementLaw, ell: int, eps: float = 1e-4, n_max: int = 4096,
            fpt: FirstPassageTable | None = None) -> WEstimate:
    """W^(l) = 1/2 h_down_1(l) c^(l+1) E[1/(tau_{-l-1} - 1)] with a certified bracket.

    The truncated expectation is a lower bound; the remaining tail mass adds
    at most tail/n_max.
    """
    if ell == 0:
        return WEstimate(0, 0.0, 0.0, 0)
    if fpt is None:
        fpt = first_passage_law(mu_law(law, check=False), ell + 1, n_max)
    n = np.arange(2, fpt.n_max + 1)
    low = float(np.dot(fpt.probs[2:], 1.0 / (n - 1)))
    width = fpt.tail_mass / fpt.n_max
    mid = low + width / 2
    rel = (width / 2) / mid
    if rel > eps:
        raise HorizonError(f"relative error {rel:.2e} > {eps:.1e} at n_max={fpt.n_max}")
    log_h1 = float(log_hdown_p(ell, 1))
    logW = math.log(0.5) + log_h1 + (ell + 1) * _log_c(law) + math.log(mid)
    return WEstimate(ell, logW, rel, fpt.n_max)


def log_W_from_nu(law: DisplacementLaw, ell) -> np.ndarray:
    """log W^(l) = log(nu(-l-1) c^(l+1) / 2)."""
    ell = np.asarray(ell)
    return np.log(law.prob(-ell - 1)) + (ell + 1) * _log_c(law) - math.log(2.0)


def tutte_defects(law: DisplacementLaw, m_max: int = 200) -> np.ndarray:
    """Row sums minus one of the free peeling of a hole of half-perimeter m.

    C rows: sum_k q_k W^(m+k-1)/W^(m) = sum_k nu(k-1) nu(-m-k)/nu(-m-1);
    G rows: sum_{i+j=m-1} W^(i) W^(j)/W^(m), both from the law's tables with
    the analytic tail for the infinite C sum.
    """
    K = law.K
    out = np.zeros(m_max)
    tn = law.tail_neg
    tp = law.tail_pos
    for m in range(1, m_max + 1):
        nm1 = law.prob(-m - 1)
        ks = np.arange(1, K + 2)
        c_sum = float(np.dot(law.prob(ks - 1), law.prob(-m - ks)))
        if tp.p > 0:
            def f2(x, mm, tp=tp, tn=tn):
                return tp.prob(x - 1) * tn.prob(mm + x)

            c_sum += float(tail_sums(f2, K + 1, np.array([m]))[0])
        i = np.arange(0, m)
        g_sum = float(np.dot(law.prob(-i - 1), law.prob(-(m - 1 - i) - 1))) / 2.0
        out[m - 1] = (c_sum + g_sum) / nm1 - 1.0
    return out


# ---------------------------------------------------------------------------
# forward dynamic programs over the transformed walks


def _harm(kind, p):
    if kind == "up":
        return Harmonic("up")
    return Harmonic("down_p", int(p))


@dataclass
class WalkDP:
    """Distribution of a transformed walk over states 1..M at each time."""

    kind: str
    p: int
    M: int
    dists: list  # dists[t][x - 1] = P(P(t) = x, alive, never above M)
    deaths: np.ndarray  # deaths[t] = P(tau = t, never above M)
    escaped: np.ndarray  # escaped[t] = mass first leaving [1, M] at step t
    escaped_value: np.ndarray = field(default=None)  # optional weighted escapes

    def at(self, t: int) -> dict:
        d = self.dists[t]
        nz = np.nonzero(d)[0]
        out = {int(x + 1): float(d[x]) for x in nz}
        if self.deaths[t] > 0:
            out[-self.p] = float(self.deaths[t])
        return out


def dp_walk_oracle(law: DisplacementLaw, kind: str, start: int, p: int, n: int,
                   M: int = 1 << 16, escape_tol: float | None = None) -> WalkDP:
    """Forward DP of the h-transformed walk ("up" or "down" with target p).

    Uses dist_{t+1}(y) = h(y) sum_x dist_t(x)/h(x) nu(y - x), one FFT per step.
    Deaths occur with probability nu(-x-p)/h(x) from x.
    """
    h = _harm(kind, p)
    xs = np.arange(1, M + 1)
    logh = h.log(xs)
    hx = np.exp(logh)
    nu_full = law.prob(np.arange(-(M - 1), M))  # index j <-> step j - (M - 1)
    upper_tail = law.upper_mass(np.arange(0, M + 1))  # nu([k, oo))
    dist = np.zeros(M)
    dist[start - 1] = 1.0
    dists = [dist.copy()]
    deaths = np.zeros(n + 1)
    escaped = np.zeros(n + 1)
    esc_val = np.zeros(n + 1)
    death_rate = np.zeros(M)
    if kind != "up":
        death_rate = law.prob(-xs - p) / hx
    for t in range(n):
        w = dist / hx
        conv = _conv(w, nu_full)
        # conv index i <-> y = i + 1 - (M - 1)
        new = conv[M - 1: 2 * M - 1] * hx
        deaths[t + 1] = float(np.dot(dist, death_rate))
        # mass leaving above M: 1 - kept - died - (mass landing in the killed zone = 0)
        escaped[t + 1] = max(0.0, float(dist.sum()) - float(new.sum()) - deaths[t + 1])
        if kind == "up":
            # bound on sum over escapes of the flow times (1+l)/(y+l) needs l; store the
            # flow-weighted bound factor sum_x dist(x)/h(x) nu([M+1-x, oo))
            esc_val[t + 1] = float(np.dot(w, upper_tail[M + 1 - xs]))
        dist = new
        dists.append(dist.copy())
    out = WalkDP(kind, p, M, dists, deaths, escaped, esc_val)
    if escape_tol is not None and escaped.sum() > escape_tol:
        raise TruncationError(f"escaped mass {escaped.sum():.2e} > {escape_tol:.1e}")
    return out


@dataclass
class CouplingCheck:
    ell: int
    n: int
    survival: tuple  # bracket for P_l(tau > n)
    coupled: tuple  # bracket for E_inf[(1+l)/(P(n)+l)]

    @property
    def defect(self) -> float:
        """Largest possible gap between the two brackets."""
        lo = min(self.survival[0], self.coupled[0])
        hi = max(self.survival[1], self.coupled[1])
        return hi - lo


def coupling_dp(law: DisplacementLaw, ell: int, n: int, start: int = 1, M: int = 1 << 20
                ) -> CouplingCheck:
    """Both sides of P_l(tau_{-l} > n) = E_inf[(1+l)/(P_inf(n)+l)] by separate DPs.

    Killed walk: kept mass is a lower bound; escaped mass may still survive.
    h_up walk: mass that escaped above M contributes at most
    (1+l)/(y+l) <= (2/sqrt(pi)) (1+l)/sqrt(M) per unit of h-weighted flow,
    since the value function is dominated by (1+l)/(y+l).
    """
    down = dp_walk_oracle(law, "down", start, ell, n, M)
    up = dp_walk_oracle(law, "up", start, 0, n, M)
    surv_lo = float(down.dists[n].sum())
    surv = (surv_lo, surv_lo + float(down.escaped.sum()))
    xs = np.arange(1, M + 1)
    val = (1 + ell) / (xs + ell)
    cou_lo = float(np.dot(up.dists[n], val))
    sup_factor = 2.0 / math.sqrt(math.pi) * (1 + ell) / math.sqrt(M)
    cou = (cou_lo, cou_lo + sup_factor * float(up.escaped_value.sum()))
    return CouplingCheck(ell, n, surv, cou)


def death_decomposition(law: DisplacementLaw, ell: int, n: int, M: int = 1 << 14):
    """Both sides of the killed-walk decomposition of the last jump.

    Returns arrays L[x], R[x] for x = 1..M with
    L = 1/2 (h_down(l)/(l+1)) P_l(tau = n, P(n-1) = x) (tilted chain) and
    R = P_1(S_1..S_{n-1} >= 1, S_{n-1} = x) nu(-l-x) (plain walk killed at <= 0).
    """
    down = dp_walk_oracle(law, "down", 1, ell, n - 1, M)
    xs = np.arange(1, M + 1)
    log_rate = np.log(law.prob(-xs - ell)) - log_hdown_p(xs, ell)
    left = 0.5 * math.exp(float(log_hdown(ell))) / (ell + 1) * down.dists[n - 1] * np.exp(log_rate)
    # plain walk killed when leaving [1, oo)
    nu_full = law.prob(np.arange(-(M - 1), M))
    dist = np.zeros(M)
    dist[0] = 1.0
    for _ in range(n - 1):
        dist = _conv(dist, nu_full)[M - 1: 2 * M - 1]
    right = dist * law.prob(-ell - xs)
    escape = float(down.escaped.sum())
    return left, right, escape


def dp_walk_adaptive(law: DisplacementLaw, kind: str, start: int, p: int, n: int,
                     M: int = 1 << 12, escape_tol: float = 1e-10, M_max: int = 1 << 22) -> WalkDP:
    """dp_walk_oracle with the state bound doubled until the escaped mass is below escape_tol."""
    while True:
        dp = dp_walk_oracle(law, kind, start, p, n, M)
        if float(dp.escaped.sum()) <= escape_tol:
            return dp
        if 2 * M > M_max:
            raise TruncationError(
                f"escaped mass {dp.escaped.sum():.2e} above {escape_tol:.1e} at M={M}")
        M *= 2


# ---------------------------------------------------------------------------
# partition tables


@dataclass
class PartitionTable:
    """W^(k) for k <= depth (log space) and W^(l)[n] for l <= sized_depth, n <= horizon.

    ``log_W`` comes from the law (nu(-k-1) c^(k+1) / 2, exact given the law);
    ``log_W_check`` and ``rel_err`` are the independent first-passage values
    with their certified relative error, where computed.
    """

    checksum: str
    log_W: np.ndarray
    sized: np.ndarray  # sized[l, n] = W^(l)[n]
    sized_W1: np.ndarray  # sized_W1[l, n] = W_1^(l)[n]
    log_W_check: np.ndarray
    rel_err: np.ndarray

    VERSION = 1

    def W(self, k: int) -> float:
        return float(np.exp(self.log_W[k]))

    def save(self, path: str) -> None:
        np.savez_compressed(path, version=np.array([self.VERSION]),
                            checksum=np.array([self.checksum]), log_W=self.log_W,
                            sized=self.sized, sized_W1=self.sized_W1,
                            log_W_check=self.log_W_check, rel_err=self.rel_err)

    @classmethod
    def load(cls, path: str, checksum: str | None = None) -> "PartitionTable":
        with np.load(path) as z:
            if int(z["version"][0]) != cls.VERSION:
                raise ValueError("partition table version mismatch")
            cs = str(z["checksum"][0])
            if checksum is not None and cs != checksum:
                raise ValueError("partition table belongs to another kernel")
            return cls(cs, z["log_W"], z["sized"], z["sized_W1"], z["log_W_check"], z["rel_err"])


def partition_table(law: DisplacementLaw, depth: int, horizon: int = 64, sized_depth: int = 8,
                    check_depth: int = 4, n_max: int = 4096) -> PartitionTable:
    """Tabulate W^(k), the sized values W^(l)[n] and first-passage cross-checks."""
    ks = np.arange(depth + 1)
    log_W = np.zeros(depth + 1)
    log_W[1:] = log_W_from_nu(law, ks[1:])
    mu = mu_law(law, check=False)
    sized = np.zeros((sized_depth + 1, horizon + 1))
    sized_w1 = np.zeros((sized_depth + 1, horizon + 2))
    for ell in range(1, sized_depth + 1):
        fpt = first_passage_law(mu, ell + 1, horizon + 2)
        for n in range(1, horizon + 1):
            w1, w = partition_sized(law, ell, n, fpt)
            sized[ell, n] = w
            sized_w1[ell, n] = w1
    check = np.full(check_depth + 1, np.nan)
    rel = np.full(check_depth + 1, np.nan)
    check[0], rel[0] = 0.0, 0.0
    for ell in range(1, check_depth + 1):
        est = W_total(law, ell, eps=1.0, n_max=n_max)
        check[ell], rel[ell] = est.log_W, est.rel_err
    return PartitionTable(law.checksum(), log_W, sized, sized_w1, check, rel)
