"""Weight sequences, the displacement law and the model constants.

A displacement law stores dense probabilities for |k| <= K and a telescoping
power tail (see :mod:`cauchy_maps.tails`) on each side beyond K. The positive
side is ``pos[k] = nu(k)`` for 0 <= k <= K and the negative side is
``neg[j] = nu(-j)`` for 1 <= j <= K (``neg[0]`` is unused and zero).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

from .harmonic import as_harmonic, log_hdown, log_hup
from .tails import PowerTail, tail_sums

HARMONIC_TOL = 1e-8
MASS_TOL = 1e-10
TAIL_FIT_TOL = 0.05


class KernelError(Exception):
    """Base class for kernel construction and validation failures."""


class MassError(KernelError):
    pass


class InversionError(KernelError):
    pass


class SolveError(KernelError):
    pass


class TailError(KernelError):
    pass


class NotCritical(KernelError):
    pass


# ---------------------------------------------------------------------------
# displacement law


@dataclass(frozen=True, eq=False)
class DisplacementLaw:
    """Step law of the perimeter walk: dense table plus analytic tails."""

    pos: np.ndarray
    neg: np.ndarray
    tail_pos: PowerTail
    tail_neg: PowerTail
    a: float = 2.0
    name: str = "custom"
    exact: Optional[dict] = field(default=None, repr=False)
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        pos = np.ascontiguousarray(self.pos, dtype=float)
        neg = np.ascontiguousarray(self.neg, dtype=float)
        if len(pos) != len(neg):
            raise ValueError("positive and negative tables must share the cutoff")
        if np.any(pos < 0) or np.any(neg < 0) or not np.all(np.isfinite(pos + neg)):
            raise MassError("probabilities must be finite and nonnegative")
        neg = neg.copy()
        neg[0] = 0.0
        pos.setflags(write=False)
        neg.setflags(write=False)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    # -- basic accessors -------------------------------------------------
    @property
    def K(self) -> int:
        return len(self.pos) - 1

    @property
    def tail_constant(self) -> float:
        return self.tail_neg.p

    def prob(self, k):
        """nu(k) for integer k (scalar or array)."""
        scalar = np.isscalar(k)
        ka = np.atleast_1d(np.asarray(k, dtype=np.int64))
        out = np.zeros(ka.shape)
        K = self.K
        m = (ka >= 0) & (ka <= K)
        out[m] = self.pos[ka[m]]
        m = (ka < 0) & (ka >= -K)
        out[m] = self.neg[-ka[m]]
        m = ka > K
        if m.any():
            out[m] = self.tail_pos.prob(ka[m])
        m = ka < -K
        if m.any():
            out[m] = self.tail_neg.prob(-ka[m])
        return float(out[0]) if scalar else out

    def neg_upto(self, n: int) -> np.ndarray:
        """Array whose entry j is nu(-j) for 0 <= j <= n."""
        if n <= self.K:
            return self.neg[: n + 1]
        extra = self.tail_neg.prob(np.arange(self.K + 1, n + 1))
        return np.concatenate([self.neg, extra])

    def pos_upto(self, n: int) -> np.ndarray:
        if n <= self.K:
            return self.pos[: n + 1]
        extra = self.tail_pos.prob(np.arange(self.K + 1, n + 1))
        return np.concatenate([self.pos, extra])

    @property
    def upper_cum(self) -> np.ndarray:
        """upper_cum[k] = nu([k, infinity)) for 0 <= k <= K+1."""
        hit = self._memo.get("upper")
        if hit is None:
            beyond = float(self.tail_pos.mass_from(self.K + 1))
            hit = np.concatenate([np.cumsum(self.pos[::-1])[::-1] + beyond, [beyond]])
            self._memo["upper"] = hit
        return hit

    @property
    def lower_cum(self) -> np.ndarray:
        """lower_cum[j] = nu((-infinity, -j]) for 1 <= j <= K+1; entry 0 repeats entry 1."""
        hit = self._memo.get("lower")
        if hit is None:
            beyond = float(self.tail_neg.mass_from(self.K + 1))
            body = np.cumsum(self.neg[::-1])[::-1] + beyond
            body[0] = body[1]
            hit = np.concatenate([body, [beyond]])
            self._memo["lower"] = hit
        return hit

    def upper_mass(self, k):
        """nu([k, infinity)) for any integer k."""
        k = np.asarray(k, dtype=np.int64)
        kk = np.maximum(k, 0)
        out = np.where(
            kk <= self.K + 1,
            self.upper_cum[np.minimum(kk, self.K + 1)],
            self.tail_pos.mass_from(np.maximum(kk, 1)),
        )
        # negative k: add nu(-1), ..., nu(k)
        neg = np.minimum(k, 0)
        return out + np.where(neg < 0, self.lower_mass(1) - self.lower_mass(1 - neg), 0.0)

    def lower_mass(self, j):
        """nu((-infinity, -j]) for integer j >= 1."""
        j = np.asarray(j, dtype=np.int64)
        return np.where(
            j <= self.K + 1,
            self.lower_cum[np.minimum(j, self.K + 1)],
            self.tail_neg.mass_from(np.maximum(j, 1)),
        )

    def total_mass(self) -> float:
        return float(self.upper_cum[0] + self.lower_cum[1])

    def tail_remainder(self) -> float:
        """Mass carried by the analytic tails."""
        return float(self.tail_pos.mass_from(self.K + 1) + self.tail_neg.mass_from(self.K + 1))

    @property
    def q1(self) -> float:
        return float(self.pos[0])

    @property
    def c_q(self) -> float:
        return 2.0 / self.neg[1]

    # -- harmonicity -----------------------------------------------------
    def expected_h(self, kind, ells) -> np.ndarray:
        """E[h(l + X)] for X ~ nu, vectorised over l >= 1."""
        ells = np.atleast_1d(np.asarray(ells, dtype=np.int64))
        L = int(ells.max())
        h = as_harmonic(kind)
        if h.kind == "down_p":
            raise ValueError("use expected_h_p for face-targeted functions")
        logf = log_hdown if h.kind == "down" else log_hup
        K = self.K
        htab = np.exp(logf(np.arange(L + K + 1, dtype=float)))
        negpart = np.convolve(self.neg_upto(L), htab[: L + 1])[: L + 1]
        pospart = np.correlate(htab, self.pos, mode="valid")
        out = negpart[ells] + pospart[ells]
        if self.tail_pos.p > 0:
            tp = self.tail_pos

            def f2(x, ell):
                return tp.prob(x) * np.exp(logf(x + ell))

            out = out + tail_sums(f2, K, ells)
        return out

    def harmonic_defect(self, kind, ells) -> np.ndarray:
        ells = np.atleast_1d(np.asarray(ells, dtype=np.int64))
        return self.expected_h(kind, ells) - as_harmonic(kind)(ells)

    def max_harmonic_defect(self, upto: int = 1000) -> float:
        ells = np.arange(1, upto + 1)
        return float(
            max(np.abs(self.harmonic_defect("down", ells)).max(),
                np.abs(self.harmonic_defect("up", ells)).max())
        )

    # -- serialisation ---------------------------------------------------
    def checksum(self) -> str:
        hit = self._memo.get("checksum")
        if hit is None:
            hsh = hashlib.sha256()
            hsh.update(np.asarray([self.a, self.K], dtype=float).tobytes())
            hsh.update(self.pos.tobytes())
            hsh.update(self.neg.tobytes())
            hsh.update(np.asarray([self.tail_pos.p, self.tail_pos.a,
                                   self.tail_neg.p, self.tail_neg.a]).tobytes())
            hit = hsh.hexdigest()[:16]
            self._memo["checksum"] = hit
        return hit

    def to_dict(self) -> dict:
        probs = {str(k): float(v) for k, v in enumerate(self.pos) if v != 0.0}
        probs.update({str(-j): float(v) for j, v in enumerate(self.neg) if v != 0.0})
        weights, _ = weights_from_nu(self)
        q = {str(k): float(v) for k, v in enumerate(np.exp(weights.log_q)) if v != 0.0 and k >= 1}
        return {
            "name": self.name,
            "a": self.a,
            "K_table": self.K,
            "probs": probs,
            "p_q": self.tail_constant,
            "c_q": self.c_q,
            "q": q,
            "tail": {"pos": [self.tail_pos.p, self.tail_pos.a],
                     "neg": [self.tail_neg.p, self.tail_neg.a]},
            "checksum": self.checksum(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def law_from_dict(doc: dict) -> DisplacementLaw:
    K = int(doc["K_table"])
    pos = np.zeros(K + 1)
    neg = np.zeros(K + 1)
    for key, val in doc["probs"].items():
        k = int(key)
        if k >= 0:
            pos[k] = val
        else:
            neg[-k] = val
    tail = doc.get("tail", {})
    tp = PowerTail(*tail.get("pos", [0.0, doc["a"]]))
    tn = PowerTail(*tail.get("neg", [doc["p_q"], doc["a"]]))
    law = DisplacementLaw(pos, neg, tp, tn, a=float(doc["a"]), name=doc.get("name", "custom"))
    if "checksum" in doc and doc["checksum"] != law.checksum():
        raise KernelError("kernel checksum mismatch")
    return law


def load_law(path: str) -> DisplacementLaw:
    with open(path) as fh:
        return law_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# weight sequences


@dataclass(frozen=True, eq=False)
class WeightSequence:
    """Face weights in log space: ``log_q[k]`` is log q_k (index 0 unused).

    ``nu_tail`` optionally describes nu(k) beyond the table, for laws whose
    face degrees are unbounded.
    """

    log_q: np.ndarray
    c_q: float
    nu_tail: PowerTail = PowerTail(0.0)
    exact: Optional[dict] = None

    def __post_init__(self):
        lq = np.asarray(self.log_q, dtype=float)
        if not np.any(np.isfinite(lq[1:])):
            raise ValueError("weight sequence is identically zero")
        if np.any(np.isnan(lq)) or np.any(lq == np.inf):
            raise ValueError("weights must be finite")
        if not self.c_q > 0:
            raise ValueError("c_q must be positive")
        object.__setattr__(self, "log_q", lq)

    @classmethod
    def from_values(cls, q: dict, c_q, exact: bool = False) -> "WeightSequence":
        kmax = max(q)
        lq = np.full(kmax + 1, -np.inf)
        for k, v in q.items():
            if k < 1 or v < 0:
                raise ValueError("weights are indexed by k >= 1 and nonnegative")
            if v > 0:
                lq[k] = math.log(v)
        ex = None
        if exact:
            ex = {"q": {k: Fraction(v) for k, v in q.items()}, "c_q": Fraction(c_q)}
        return cls(lq, float(c_q), exact=ex)

    def q(self, k: int) -> float:
        return float(np.exp(self.log_q[k])) if k < len(self.log_q) else 0.0


class WValues:
    """Partition-function values W^(k), 0 <= k < K, held in log space."""

    def __init__(self, log_W):
        self.log_W = np.asarray(log_W, dtype=float)

    def __len__(self):
        return len(self.log_W)

    def __getitem__(self, k):
        return float(np.exp(self.log_W[k]))


def nu_from_weights(weights: WeightSequence, W_table, a: float = 2.0,
                    check_upto: int = 1000, tol: float = HARMONIC_TOL,
                    name: str = "from-weights") -> DisplacementLaw:
    """Displacement law from face weights and the partition-function table.

    ``W_table`` is an array of W^(k) for 0 <= k < K (W^(0) = 1), or any object
    with a ``log_W`` array attribute. The negative tail beyond the table
    continues the last entry with exponent ``a``.
    """
    if hasattr(W_table, "log_W"):
        log_W = np.asarray(W_table.log_W, dtype=float)
    else:
        log_W = np.log(np.asarray(W_table, dtype=float))
    K = len(log_W)
    logc = math.log(weights.c_q)
    neg = np.zeros(K + 1)
    ks = np.arange(K)
    neg[1:] = 2.0 * np.exp(log_W - (ks + 1) * logc)
    pos = np.zeros(K + 1)
    nq = min(len(weights.log_q) - 1, K + 1)
    kk = np.arange(nq)
    pos[:nq] = np.exp(weights.log_q[1: nq + 1] + kk * logc)
    shape = PowerTail(1.0, a).prob(K)
    tail_neg = PowerTail(float(neg[K] / shape), a)
    law = DisplacementLaw(pos, neg, weights.nu_tail, tail_neg, a=a, name=name)
    mass = law.total_mass()
    if mass > 1 + max(tol, MASS_TOL):
        raise MassError(f"mass {mass!r} exceeds 1")
    upto = min(check_upto, max(1, K // 4))
    defect = law.max_harmonic_defect(upto)
    if defect > tol:
        raise MassError(f"harmonicity defect {defect:.3e} exceeds {tol:.1e}")
    return law


def weights_from_nu(law: DisplacementLaw):
    """Invert the weight/step-law relation; returns (WeightSequence, W values)."""
    if law.neg[1] <= 0:
        raise InversionError("nu(-1) must be positive")
    if law.exact is not None:
        ex = law.exact
        c = 2 / ex[-1]
        q = {k + 1: v / c**k for k, v in ex.items() if k >= 0 and v != 0}
        W = {k: ex[-k - 1] * c ** (k + 1) / 2 for k in range(0, -min(ex))}
        weights = WeightSequence.from_values(q, c, exact=True)
        return weights, W
    c = 2.0 / law.neg[1]
    logc = math.log(c)
    K = law.K
    with np.errstate(divide="ignore"):
        log_q = np.full(K + 2, -np.inf)
        log_q[1:] = np.log(law.pos) - np.arange(K + 1) * logc
        log_W = np.log(law.neg[1:]) + np.arange(1, K + 1) * logc - math.log(2.0)
    weights = WeightSequence(log_q, c, nu_tail=law.tail_pos)
    return weights, WValues(log_W)


# ---------------------------------------------------------------------------
# solver


def _sqrt_series(n: int) -> np.ndarray:
    """Coefficients of sqrt(1 - x) up to x^n."""
    j = np.arange(n + 1, dtype=float)
    s = -np.exp(log_hdown(j)) / (2 * j - 1)
    s[0] = 1.0
    return s


def default_profile(K: int):
    """Positive-side shape 1/(k^2 - 1/4), k >= 1, whose tail constant is 1."""
    k = np.arange(K + 1, dtype=float)
    r = np.zeros(K + 1)
    r[1:] = 1.0 / (k[1:] ** 2 - 0.25)
    return r, PowerTail(1.0, 2.0)


def _profile_sums(r: np.ndarray, rtail: PowerTail, logf, n: int) -> np.ndarray:
    """S(l) = sum_k r(k) h(l + k) for 0 <= l <= n, including the tail."""
    K = len(r) - 1
    htab = np.exp(logf(np.arange(n + K + 1, dtype=float)))
    out = np.correlate(htab, r, mode="valid")

    def f2(x, ell):
        return rtail.prob(x) * np.exp(logf(x + ell))

    return out + tail_sums(f2, K, np.arange(n + 1))


def solve_type2_kernel(K: int = 4096, profile=None, tol: float = HARMONIC_TOL,
                       name: str = "type2") -> DisplacementLaw:
    """Construct a critical a=2 law from a positive-side shape.

    The positive side is A * r(k). Harmonicity of h_down then fixes the
    negative side uniquely (a triangular system, solved through the
    sqrt(1 - x) series), and every h_up equation becomes affine in the single
    scale A, which is fitted by least squares over 1 <= l <= K/2. The
    negative tail constant beyond K is set by mass matching.
    """
    if K < 1000:
        raise ValueError("K must be at least 1000")
    r, rtail = profile if profile is not None else default_profile(K)
    r = np.asarray(r, dtype=float)
    if len(r) != K + 1:
        raise ValueError("profile table must have length K + 1")

    s = _sqrt_series(K)
    S_down = _profile_sums(r, rtail, log_hdown, K)
    S_up = _profile_sums(r, rtail, log_hup, K)
    # nu(-j) = u_j - A v_j, j >= 1
    u = -s
    v = np.convolve(s, np.concatenate([[0.0], S_down[1:]]))[: K + 1]

    half = K // 2
    hup = np.exp(log_hup(np.arange(K + 1, dtype=float)))
    Uc = np.convolve(u[: half + 1] * (np.arange(half + 1) > 0), hup[: half + 1])[: half + 1]
    Vc = np.convolve(v[: half + 1] * (np.arange(half + 1) > 0), hup[: half + 1])[: half + 1]
    ells = np.arange(1, half + 1)
    w = 1.0 / hup[ells]
    lhs = (S_up[ells] - Vc[ells]) * w
    rhs = (hup[ells] - Uc[ells]) * w
    scale = float(np.dot(lhs, rhs) / np.dot(lhs, lhs))

    neg = u - scale * v
    neg[0] = 0.0
    pos = scale * r
    if np.any(neg[1:] < 0):
        raise SolveError(f"negative probabilities in the solution (scale {scale:.6g})")
    tail_pos = PowerTail(scale * rtail.p, 2.0)
    table_mass = pos.sum() + neg.sum() + float(tail_pos.mass_from(K + 1))
    p_minus = (1.0 - table_mass) * (K + 0.5)
    if p_minus <= 0:
        raise SolveError(f"no mass left for the negative tail ({table_mass!r})")
    law = DisplacementLaw(pos, neg, tail_pos, PowerTail(p_minus, 2.0), a=2.0, name=name)

    ells = np.arange(1, K // 4 + 1)
    d_down = np.abs(law.harmonic_defect("down", ells))
    d_up = np.abs(law.harmonic_defect("up", ells))
    worst = max(d_down.max(), d_up.max())
    if worst > tol:
        raise SolveError(
            f"harmonicity residual {worst:.3e} > {tol:.1e} "
            f"(down at l={int(ells[d_down.argmax()])}: {d_down.max():.3e}, "
            f"up at l={int(ells[d_up.argmax()])}: {d_up.max():.3e})"
        )
    return law


# ---------------------------------------------------------------------------
# closed-form kernels


def exact_type2_kernel(K: int = 4096) -> DisplacementLaw:
    """The law nu(k) = 1/(4k^2 - 1) for k != 0, written out to K."""
    k = np.arange(K + 1, dtype=float)
    tab = np.zeros(K + 1)
    tab[1:] = 1.0 / (4 * k[1:] ** 2 - 1)
    tail = PowerTail(0.25, 2.0)
    return DisplacementLaw(tab, tab.copy(), tail, tail, a=2.0, name="type2-exact")


def quad_nu_negative_exact(n: int) -> dict:
    """nu(-k) for 1 <= k <= n of the quadrangulation fixture, as Fractions."""
    return {
        -k: Fraction(2 * math.factorial(2 * k - 2),
                     math.factorial(k - 1) * math.factorial(k + 1) * 4**k)
        for k in range(1, n + 1)
    }


def quad_W_exact(ell: int) -> Fraction:
    """Partition function of the fixture at half-perimeter ell (W^(0) = 1)."""
    return Fraction(2 ** (ell + 1) * math.factorial(2 * ell),
                    math.factorial(ell) * math.factorial(ell + 2))


QUAD_Q2 = Fraction(1, 12)
QUAD_C = Fraction(8)


def quadrangulation_kernel(K: int = 1 << 14, exact_upto: int = 64) -> DisplacementLaw:
    """Fixture with the single weight q_2 = 1/12 (critical quadrangulations)."""
    pos = np.zeros(K + 1)
    pos[1] = float(QUAD_Q2 * QUAD_C)
    j = np.arange(1, K + 1, dtype=float)
    from scipy.special import gammaln

    neg = np.zeros(K + 1)
    neg[1:] = np.exp(math.log(2.0) + gammaln(2 * j - 1) - gammaln(j) - gammaln(j + 2)
                     - j * math.log(4.0))
    a = 2.5
    tail = PowerTail(float(neg[K] / PowerTail(1.0, a).prob(K)), a)
    exact = {1: Fraction(2, 3)}
    exact.update(quad_nu_negative_exact(exact_upto))
    return DisplacementLaw(pos, neg, PowerTail(0.0, a), tail, a=a, name="quad", exact=exact)


BUILTINS = ("type2", "type2-exact", "quad")


@lru_cache(maxsize=None)
def builtin_kernel(name: str) -> DisplacementLaw:
    if name == "type2":
        return solve_type2_kernel(4096)
    if name == "type2-exact":
        return exact_type2_kernel(4096)
    if name == "quad":
        return quadrangulation_kernel()
    raise KeyError(f"unknown builtin kernel {name!r}; choose from {BUILTINS}")


def resolve_kernel(spec: str) -> DisplacementLaw:
    """``builtin:<name>`` or a path to a kernel JSON document."""
    if spec.startswith("builtin:"):
        return builtin_kernel(spec.split(":", 1)[1])
    return load_law(spec)


# ---------------------------------------------------------------------------
# model constants


@dataclass(frozen=True)
class ModelConstants:
    p_q: float
    b_q: float
    gamma_q: float
    gamma_argmin: int
    k0: dict
    tail_fit_residual: float
    q1: float


def fit_tail_constant(law: DisplacementLaw):
    """Fit nu(-k) ~ p k^-a over [K/2, K]; returns (p, max relative residual)."""
    K = law.K
    k = np.arange(K // 2, K + 1)
    shape = PowerTail(1.0, law.a).prob(k)
    ratio = law.neg[k] / shape
    p = float(np.median(ratio))
    return p, float(np.max(np.abs(ratio / p - 1.0)))


def gamma_terms(law: DisplacementLaw, upto: int) -> np.ndarray:
    """k (nu((-inf, -k]) - nu(-k-1)) for k = 1..upto (index 0 unused)."""
    k = np.arange(1, upto + 1)
    out = np.zeros(upto + 1)
    out[1:] = k * (law.lower_mass(k) - law.prob(-k - 1))
    return out


def gamma_constant(law: DisplacementLaw):
    """(gamma, argmin) with the part of the minimum beyond the table certified."""
    terms = gamma_terms(law, law.K)
    kmin = int(np.argmin(terms[1:]) + 1)
    gmin = float(terms[kmin])
    p = law.tail_neg.p
    if law.a > 2:
        # k * nu((-inf,-k]) vanishes at infinity
        return 0.0, -1
    if law.a < 2:
        return gmin, kmin
    # beyond K: k nu((-inf,-k]) >= p and k nu(-k-1) <= p / k
    bound = p - p / (law.K + 1)
    if bound < gmin:
        raise TailError(f"tail bound {bound:.6g} does not certify the table minimum {gmin:.6g}")
    return gmin, kmin


def k0_constant(law: DisplacementLaw, eps: float, p_q: Optional[float] = None) -> int:
    """Least k0 with exp((p - eps)/k) <= 1 + nu((-inf,-k]) - nu(-k-1) for all k >= k0."""
    p = law.tail_neg.p if p_q is None else p_q
    c = p - eps
    if c <= 0:
        return 1
    if law.a != 2.0:
        raise TailError("k0 is only defined for a = 2 laws")
    # the analytic tail satisfies the inequality for k >= cert (second-order bound)
    cert = int(math.ceil((c * c + p) / eps))
    upto = max(law.K + 1, cert)
    last_bad = 0
    for start in range(1, upto + 1, 1 << 20):
        k = np.arange(start, min(start + (1 << 20), upto + 1))
        lhs = np.expm1(c / k)
        rhs = law.lower_mass(k) - law.prob(-k - 1)
        bad = np.nonzero(lhs > rhs)[0]
        if len(bad):
            last_bad = int(k[bad[-1]])
    return last_bad + 1


def model_constants(law: DisplacementLaw, eps_grid=(0.5, 0.25, 0.1)) -> ModelConstants:
    p_fit, resid = fit_tail_constant(law)
    if resid > TAIL_FIT_TOL:
        raise TailError(f"tail fit residual {resid:.3f} exceeds {TAIL_FIT_TOL}")
    p_q = float(law.tail_neg.p if law.a == 2.0 else p_fit)
    gamma, kmin = gamma_constant(law)
    k0 = {}
    if law.a == 2.0:
        k0 = {float(e): k0_constant(law, e) for e in eps_grid}
    return ModelConstants(
        p_q=p_q,
        b_q=b_from_p(p_q),
        gamma_q=gamma,
        gamma_argmin=kmin,
        k0=k0,
        tail_fit_residual=resid,
        q1=law.q1,
    )


def b_from_p(p_q: float) -> float:
    return 1.0 / (2.0 * p_q * math.sqrt(math.pi))


# ---------------------------------------------------------------------------
# the mu-law of the tree encoding


@dataclass(frozen=True, eq=False)
class MuLaw:
    """Law on {-1, 0, 1, ...}: ``table[k + 1] = mu(k)`` plus an optional tail."""

    table: np.ndarray
    tail_weight: Optional[object] = None
    exact: Optional[dict] = None

    @property
    def K(self) -> int:
        return len(self.table) - 2

    def prob(self, k: int) -> float:
        if -1 <= k <= self.K:
            return float(self.table[k + 1])
        if k > self.K and self.tail_weight is not None:
            return float(self.tail_weight(np.array([float(k)]))[0])
        return 0.0

    def _tail(self, power: int) -> float:
        if self.tail_weight is None:
            return 0.0

        def f2(x, _):
            return self.tail_weight(x) * x**power

        return float(tail_sums(f2, self.K, np.zeros(1))[0])

    def mass(self) -> float:
        return float(np.sum(self.table) + self._tail(0))

    def mean(self) -> float:
        k = np.arange(-1, self.K + 1)
        return float(np.dot(k, self.table) + self._tail(1))

    def cdf_table(self) -> np.ndarray:
        return np.cumsum(self.table)


def _log_central_ratio(k):
    """log(C(2k+1, k+1) / 4^k) = log(h_down(k) (2k+1)/(k+1))."""
    k = np.asarray(k, dtype=float)
    return log_hdown(k) + np.log(2 * k + 1) - np.log(k + 1)


def mu_law(source, check: bool = True) -> MuLaw:
    """mu(-1) = 4/c_q and mu(k) = q_{k+1} C(2k+1, k+1) (c_q/4)^k for k >= 0.

    Accepts a WeightSequence or a DisplacementLaw (via weights_from_nu).
    """
    weights = source
    if isinstance(source, DisplacementLaw):
        weights, _ = weights_from_nu(source)
    exact = None
    if weights.exact is not None:
        c = weights.exact["c_q"]
        exact = {-1: 4 / c}
        for k1, qv in weights.exact["q"].items():
            k = k1 - 1
            exact[k] = qv * math.comb(2 * k + 1, k + 1) * (c / 4) ** k
    n = len(weights.log_q) - 1
    k = np.arange(n, dtype=float)
    table = np.zeros(n + 1)
    table[0] = 4.0 / weights.c_q
    table[1:] = np.exp(weights.log_q[1:] + k * math.log(weights.c_q) + _log_central_ratio(k))
    tail = None
    if weights.nu_tail.p > 0:
        nt = weights.nu_tail

        def tail(x):
            return nt.prob(x) * np.exp(_log_central_ratio(x))

    law = MuLaw(table, tail, exact)
    if check:
        if exact is not None:
            mass_defect = float(abs(sum(exact.values()) - 1))
            mean_defect = float(abs(sum(k * v for k, v in exact.items())))
        else:
            mass_defect = abs(law.mass() - 1.0)
            mean_defect = abs(law.mean())
        if mass_defect > MASS_TOL or mean_defect > 1e-8:
            raise NotCritical(f"mu mass defect {mass_defect:.3e}, mean {mean_defect:.3e}")
    return law
