"""Compiled inner loops: tilted steps, walk and peeling runs, and the map builder.

Kernel data travels as one flat float64 array ``kd`` built by
:func:`kernel_arrays`: a small header (cutoff, tail constants, offsets)
followed by the probability tables, their cumulative sums and cached
h_down / log h_down values. A single flat array keeps numba's inlined
helpers free of per-call reference counting.

Harmonic kinds: ``UP`` is h_up (no killing); ``DOWN`` with parameter p >= 0 is
the face-targeted function (p = 0 gives h_down), killed by a jump to -p.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .harmonic import log_hdown

UP = 0
DOWN = 1
BIG = 1 << 62
_NBINS = 192
LOG_TABLE_SIZE = 1 << 22
_SQRT_3_OVER_PI = math.sqrt(3.0 / math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


# header slots of the packed kernel array
_H_K, _H_PP, _H_PA, _H_NP, _H_NA = 0, 1, 2, 3, 4
_H_POS, _H_NEG, _H_UCUM, _H_LCUM, _H_HTAB, _H_LTAB, _H_NTAB = 5, 6, 7, 8, 9, 10, 11
# envelope constants for the far positive tail
_H_BASE, _H_THETA_UP, _H_THETA_DOWN = 12, 13, 14
_HEADER = 16


def kernel_arrays(law, table_size: int = LOG_TABLE_SIZE) -> np.ndarray:
    """Pack a DisplacementLaw into one contiguous float64 array."""
    K = law.K
    logtab = log_hdown(np.arange(table_size, dtype=float))
    parts = [law.pos, law.neg, law.upper_cum, law.lower_cum, np.exp(logtab), logtab]
    header = np.zeros(_HEADER)
    header[:5] = [K, law.tail_pos.p, law.tail_pos.a, law.tail_neg.p, law.tail_neg.a]
    off = _HEADER
    for slot, part in zip(range(_H_POS, _H_LTAB + 1), parts):
        header[slot] = off
        off += len(part)
    header[_H_NTAB] = table_size
    tp, ta = law.tail_pos.p, law.tail_pos.a
    if tp > 0:
        header[_H_BASE] = tp * 0.75 ** (1.0 - ta) / (ta - 1.0)
        header[_H_THETA_UP] = 2.0 ** (1.5 - ta)
        header[_H_THETA_DOWN] = 2.0 ** (0.5 - ta)
    return np.concatenate([header] + [np.asarray(x, dtype=float) for x in parts])


# ---------------------------------------------------------------------------
# scalar helpers (all take the packed kernel array ``kd``)


@njit(cache=True, inline="always")
def _log_hd_series(x):
    inv = 1.0 / x
    inv2 = inv * inv
    acc = -31.0 / 18432.0
    acc = acc * inv2 + 17.0 / 14336.0
    acc = acc * inv2 - 1.0 / 640.0
    acc = acc * inv2 + 1.0 / 192.0
    acc = acc * inv2 - 1.0 / 8.0
    return -0.5 * (math.log(math.pi) + math.log(x)) + acc * inv


@njit(cache=True, inline="always")
def log_hd(kd, x):
    if x < 0:
        return -np.inf
    if x < kd[_H_NTAB]:
        return kd[np.int64(kd[_H_LTAB]) + np.int64(x)]
    return _log_hd_series(x)


@njit(cache=True, inline="always")
def hd_val(kd, x):
    if x < kd[_H_NTAB]:
        return kd[np.int64(kd[_H_HTAB]) + np.int64(x)]
    return math.exp(_log_hd_series(x))


@njit(cache=True)
def log_h(kd, kind, p, x):
    if kind == UP:
        if x <= 0:
            return -np.inf
        return math.log(2.0 * x) + log_hd(kd, x)
    if x == -p:
        return 0.0
    if x <= 0:
        return -np.inf
    if p == 0:
        return log_hd(kd, x)
    return log_hd(kd, x) + log_hd(kd, p) + math.log(x) - math.log(x + p)


@njit(cache=True, inline="always")
def phi(kd, kind, p, x):
    """h up to a factor independent of x: x h_down(x) (UP) or h_down(x) x/(x+p) (DOWN)."""
    if kind == UP:
        if x <= 0:
            return 0.0
        return x * hd_val(kd, x)
    if x <= 0:
        if x == -p:
            return 1.0 / hd_val(kd, p)
        return 0.0
    return hd_val(kd, x) * x / (x + p)


@njit(cache=True, inline="always")
def _tail_mass(p, a, k):
    if p == 0.0:
        return 0.0
    if a == 2.0:
        return p / (k - 0.5)
    return p * (k - 0.5) ** (1.0 - a) / (a - 1.0)


@njit(cache=True, inline="always")
def _tail_prob(p, a, k):
    if p == 0.0:
        return 0.0
    if a == 2.0:
        return p / (k * k - 0.25)
    return _tail_mass(p, a, k) * -math.expm1((1.0 - a) * math.log1p(1.0 / (k - 0.5)))


@njit(cache=True, inline="always")
def kcut(kd):
    return np.int64(kd[_H_K])


@njit(cache=True, inline="always")
def nu(kd, k):
    K = np.int64(kd[_H_K])
    if k >= 0:
        if k <= K:
            return kd[np.int64(kd[_H_POS]) + k]
        return _tail_prob(kd[_H_PP], kd[_H_PA], float(k))
    j = -k
    if j <= K:
        return kd[np.int64(kd[_H_NEG]) + j]
    return _tail_prob(kd[_H_NP], kd[_H_NA], float(j))


@njit(cache=True, inline="always")
def upper(kd, k):
    """nu([k, infinity)), k >= 0."""
    if k <= np.int64(kd[_H_K]) + 1:
        return kd[np.int64(kd[_H_UCUM]) + k]
    return _tail_mass(kd[_H_PP], kd[_H_PA], float(k))


@njit(cache=True, inline="always")
def lower(kd, j):
    """nu((-infinity, -j]), j >= 1."""
    if j <= np.int64(kd[_H_K]) + 1:
        return kd[np.int64(kd[_H_LCUM]) + j]
    return _tail_mass(kd[_H_NP], kd[_H_NA], float(j))


@njit(cache=True, inline="always")
def _invert_cum(kd, off, tp, ta, lo, hi, u):
    """Largest k in [lo, hi] with C(k) >= u; C is kd[off + k] up to K+1, then the power tail."""
    K = np.int64(kd[_H_K])
    if K + 1 <= hi and u <= kd[off + K + 1]:
        y = 0.5 + (u * (ta - 1.0) / tp) ** (-1.0 / (ta - 1.0))
        if y > 4e18:
            y = 4e18
        k = np.int64(math.floor(y))
        kmin = lo if lo > K + 1 else K + 1
        if k < kmin:
            k = kmin
        if k > hi:
            k = hi
        return k
    a = lo
    b = hi if hi < K else K
    # invariant: C(a) >= u; find the last index with C >= u
    while a < b:
        mid = (a + b + 1) >> 1
        if kd[off + mid] >= u:
            a = mid
        else:
            b = mid - 1
    return a


@njit(cache=True, inline="always")
def sample_pos_in(kd, lo, hi, gen):
    """Draw k in [lo, hi] with probability proportional to nu(k)."""
    top = upper(kd, lo)
    bot = upper(kd, hi + 1) if hi < BIG else 0.0
    u = bot + (1.0 - gen.random()) * (top - bot)
    return _invert_cum(kd, np.int64(kd[_H_UCUM]), kd[_H_PP], kd[_H_PA], lo, hi, u)


@njit(cache=True, inline="always")
def sample_neg_in(kd, lo, hi, gen):
    """Draw j in [lo, hi] with probability proportional to nu(-j)."""
    top = lower(kd, lo)
    bot = lower(kd, hi + 1) if hi < BIG else 0.0
    u = bot + (1.0 - gen.random()) * (top - bot)
    return _invert_cum(kd, np.int64(kd[_H_LCUM]), kd[_H_NP], kd[_H_NA], lo, hi, u)


# ---------------------------------------------------------------------------
# tilted step


@njit(cache=True, inline="always")
def _clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True)
def tilted_step(kd, kind, p, m, gen, wbuf, lobuf, hibuf):
    """One step of the h-transformed walk from m >= 1.

    Returns the new position; a position <= 0 means the walk was killed (it
    equals -p for the DOWN kind). Non-killing steps are drawn by rejection
    from dyadic bins whose envelope is nu(bin) times the maximum of
    h(m + k)/h(m) over the bin, plus a geometric envelope for the far
    positive tail.
    """
    K = np.int64(kd[_H_K])
    phm = phi(kd, kind, p, m)
    inv_phm = 1.0 / phm
    if kind == DOWN:
        d = nu(kd, -(m + p)) * inv_phm / hd_val(kd, p)
        if gen.random() < d:
            return -p
        mode = p
    else:
        mode = BIG
    n = 0
    total = 0.0
    # negative jumps j = 1 .. m-1
    j = 1
    while j <= m - 1:
        jhi = 2 * j - 1
        if jhi > m - 1:
            jhi = m - 1
        mass = lower(kd, j) - lower(kd, jhi + 1)
        if mass > 0.0:
            w = mass * phi(kd, kind, p, _clamp(mode, m - jhi, m - j)) * inv_phm
            total += w
            wbuf[n] = w
            lobuf[n] = -jhi
            hibuf[n] = -j
            n += 1
        j = 2 * j
    # k = 0
    q1 = nu(kd, 0)
    if q1 > 0.0:
        total += q1
        wbuf[n] = q1
        lobuf[n] = 0
        hibuf[n] = 0
        n += 1
    # positive dyadic bins up to the cutoff
    kc = 1
    log2kc = 0
    lim = K + 1 if K + 1 > m else m
    while kc < lim:
        kc *= 2
        log2kc += 1
    k = 1
    while k < kc:
        khi = 2 * k - 1
        mass = upper(kd, k) - upper(kd, khi + 1)
        if mass > 0.0:
            w = mass * phi(kd, kind, p, _clamp(mode, m + k, m + khi)) * inv_phm
            total += w
            wbuf[n] = w
            lobuf[n] = k
            hibuf[n] = khi
            n += 1
        k = 2 * k
    # analytic group of bins [2^i, 2^(i+1)) with 2^i >= kc; bin i is bounded
    # by coef * theta^i using nu([2^i, oo)) <= base 2^(i(1-a)) and
    # sqrt(x) h_down(x) <= 1/sqrt(pi)
    theta = 0.0
    coef = 0.0
    if kd[_H_PP] > 0.0:
        if kind == UP:
            coef = kd[_H_BASE] * _SQRT_3_OVER_PI * inv_phm
            theta = kd[_H_THETA_UP]
        else:
            coef = kd[_H_BASE] * _INV_SQRT_PI * inv_phm
            theta = kd[_H_THETA_DOWN]
        total += coef * theta**log2kc / (1.0 - theta)
    while True:
        u = gen.random() * total
        b = -1
        acc = 0.0
        for i in range(n):
            acc += wbuf[i]
            if u < acc:
                b = i
                break
        if b >= 0:
            lo = lobuf[b]
            hi = hibuf[b]
            if lo < 0:
                x = m - sample_neg_in(kd, -hi, -lo, gen)
            elif hi == 0:
                return m
            else:
                x = m + sample_pos_in(kd, lo, hi, gen)
            xm = _clamp(mode, m + lo, m + hi)
            if gen.random() * phi(kd, kind, p, xm) < phi(kd, kind, p, x):
                return x
        else:
            g = math.floor(math.log(1.0 - gen.random()) / math.log(theta))
            i = log2kc + np.int64(g)
            if i > 61:
                continue
            lo = np.int64(1) << i
            hi = 2 * lo - 1
            kk = sample_pos_in(kd, lo, hi, gen)
            mass = upper(kd, lo) - upper(kd, hi + 1)
            bound = coef * theta**i
            if gen.random() * bound < mass * phi(kd, kind, p, m + kk) * inv_phm:
                return m + kk


@njit(cache=True)
def _buffers():
    return (np.empty(_NBINS), np.empty(_NBINS, np.int64), np.empty(_NBINS, np.int64))


@njit(cache=True)
def step_once(kd, kind, p, m, gen):
    wb, lb, hb = _buffers()
    return tilted_step(kd, kind, p, m, gen, wb, lb, hb)


# ---------------------------------------------------------------------------
# walks


@njit(cache=True)
def walk_path(kd, kind, p, start, max_steps, gen, record):
    """Run the transformed walk; returns (states, tau, last_positive).

    tau = -1 if the budget ran out first. ``states`` is empty unless record.
    """
    wb, lb, hb = _buffers()
    states = np.empty(max_steps + 1 if record else 0, np.int64)
    m = start
    if record:
        states[0] = m
    for n in range(max_steps):
        x = tilted_step(kd, kind, p, m, gen, wb, lb, hb)
        if record:
            states[n + 1] = x
        if x <= 0:
            return states[: n + 2] if record else states, n + 1, m
        m = x
    return states, -1, m


@njit(cache=True)
def walk_checkpoints(kd, kind, p, start, checkpoints, gen, out):
    """Positions at the (sorted) checkpoint times; killed positions are stored as <= 0."""
    wb, lb, hb = _buffers()
    m = start
    t = 0
    for c in range(checkpoints.shape[0]):
        while t < checkpoints[c]:
            x = tilted_step(kd, kind, p, m, gen, wb, lb, hb)
            t += 1
            if x <= 0:
                for c2 in range(c, checkpoints.shape[0]):
                    out[c2] = x
                return
            m = x
        out[c] = m


@njit(cache=True)
def lifetime(kd, p, start, max_steps, gen):
    """tau and the last positive value of the walk killed at -p."""
    wb, lb, hb = _buffers()
    m = start
    for n in range(max_steps):
        x = tilted_step(kd, DOWN, p, m, gen, wb, lb, hb)
        if x <= 0:
            return n + 1, m
        m = x
    return -1, m


# ---------------------------------------------------------------------------
# peeling runs


@njit(cache=True)
def fpp_run(kd, ell, max_steps, gen):
    """Uniform peeling killed at -ell from half-perimeter 1.

    Returns (tau, d_fpp, sum 1/(2P), sum 1/(2P)^2); tau = -1 on budget overflow.
    """
    wb, lb, hb = _buffers()
    m = 1
    d = 0.0
    s1 = 0.0
    s2 = 0.0
    for n in range(max_steps):
        r = 1.0 / (2.0 * m)
        d += gen.standard_exponential() * r
        s1 += r
        s2 += r * r
        x = tilted_step(kd, DOWN, ell, m, gen, wb, lb, hb)
        if x <= 0:
            return n + 1, d, s1, s2
        m = x
    return -1, d, s1, s2


EV_C = 0
EV_GL = 1
EV_GR = 2
EV_STOP = 3


@njit(cache=True)
def layers_update(P, D, H, event, k):
    """(P, D, H) after one event; k is the walk increment size (jump for G)."""
    if event == EV_C:
        Pn = P + k
        d = D - 1
    elif event == EV_GR:
        Pn = P - k
        d = D - 2 * k
    else:
        Pn = P - k
        d = D - 1
        if 2 * Pn < d:
            d = 2 * Pn
    if d <= 0:
        return Pn, 2 * Pn, H + 1
    return Pn, d, H


@njit(cache=True)
def layers_run(kd, ell, max_steps, gen, record, traj):
    """Peeling by layers killed at -ell; returns (tau, d_gr, final H, n_recorded).

    When record is set, traj[n] = (P, D, H, event, k) for each step.
    """
    wb, lb, hb = _buffers()
    P = 1
    D = 2
    H = 0
    for n in range(max_steps):
        x = tilted_step(kd, DOWN, ell, P, gen, wb, lb, hb)
        if x <= 0:
            if record:
                traj[n, 0] = P
                traj[n, 1] = D
                traj[n, 2] = H
                traj[n, 3] = EV_STOP
                traj[n, 4] = 0
            return n + 1, H + 1, H, n + 1
        k = x - P
        if k >= 0:
            ev = EV_C
        else:
            k = -k
            ev = EV_GL if gen.random() < 0.5 else EV_GR
        if record:
            traj[n, 0] = P
            traj[n, 1] = D
            traj[n, 2] = H
            traj[n, 3] = ev
            traj[n, 4] = k
        P, D, H = layers_update(P, D, H, ev, k)
    return -1, H + 1, H, max_steps


# ---------------------------------------------------------------------------
# map builder


@njit(cache=True)
def _grow(arr, need):
    if need <= arr.shape[0]:
        return arr
    cap = arr.shape[0] * 2
    while cap < need:
        cap *= 2
    out = np.empty(cap, arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def untargeted_event(kd, m, gen):
    """Event of the free peeling of a hole of half-perimeter m >= 1.

    Returns (k, k1): C with a face of degree 2k when k >= 1, otherwise the
    gluing that splits the hole into half-perimeters k1 and m - 1 - k1.
    """
    nm1 = nu(kd, -(m + 1))
    small = (m - 1) // 2
    big = (m - 1) - small
    wc = upper(kd, 0)
    Bm = nu(kd, -(big + 1)) / nm1
    Nm = lower(kd, 1) - lower(kd, small + 2)
    wg = Nm * Bm
    while True:
        if gen.random() * (wc + wg) < wc:
            km1 = sample_pos_in(kd, 0, BIG, gen)
            k = km1 + 1
            if gen.random() * nm1 < nu(kd, -(m + k)):
                return k, -1
        else:
            s = sample_neg_in(kd, 1, small + 1, gen) - 1
            L = m - 1 - s
            acc = nu(kd, -(L + 1)) / (nm1 * Bm)
            if s == L:
                acc *= 0.5
            if gen.random() < acc:
                if gen.random() < 0.5:
                    return 0, s
                return 0, L


@njit(cache=True)
def build_map(kd, ell, target_p, gen, max_half_edges):
    """Peel a Boltzmann map of perimeter 2*ell to completion.

    With target_p >= 1 the exploration is targeted at a face of degree
    2*target_p, using the killed walk for the hole containing the target.
    Each half-edge is stamped with the number of targeted steps taken when
    its edge was created or when its hole split off from the targeted hole.
    Returns (nxt, opp, face, stamp, n_half_edges, n_faces, target_face,
    target_tau, ok).
    """
    wb, lb, hb = _buffers()
    cap = 4 * ell + 64
    nxt = np.empty(cap, np.int32)
    opp = np.empty(cap, np.int32)
    face = np.empty(cap, np.int32)
    openarr = np.empty(cap, np.int32)
    stamp = np.empty(cap, np.int32)
    hstamp = np.empty(64, np.int64)
    starts = np.empty(64, np.int64)
    ends = np.empty(64, np.int64)
    flags = np.empty(64, np.int64)
    nh = 2 * ell
    for i in range(nh):
        nxt[i] = (i + 1) % nh
        face[i] = 0
        opp[i] = -1
        openarr[i] = nh - 1 - i
    nf = 1
    target_face = -1
    depth = 1
    starts[0] = 0
    flags[0] = 1 if target_p >= 1 else 0
    hstamp[0] = 0
    tsteps = 0
    target_tau = -1
    end = nh
    while depth > 0:
        s = starts[depth - 1]
        size = end - s
        if size == 0:
            depth -= 1
            if depth > 0:
                end = ends[depth - 1]
            continue
        m = size // 2
        b = openarr[end - 1]
        k = -1
        k1 = -1
        side_targeted = 0
        targeted = flags[depth - 1] == 1
        target_here = False
        if targeted:
            x = tilted_step(kd, DOWN, target_p, m, gen, wb, lb, hb)
            tsteps += 1
            hstamp[depth - 1] = tsteps
            if x <= 0:
                target_tau = tsteps
                k = target_p
                target_here = True
                flags[depth - 1] = 0
            elif x >= m:
                k = x - m + 1
            else:
                jump = m - x
                k = 0
                if gen.random() < 0.5:
                    k1 = jump - 1
                    side_targeted = 1  # B continues
                else:
                    k1 = m - jump
                    side_targeted = 0
        else:
            k, k1 = untargeted_event(kd, m, gen)
        if k >= 1:
            deg = 2 * k
            need = nh + deg
            if need > max_half_edges:
                return nxt, opp, face, stamp, nh, nf, target_face, target_tau, False
            if need > nxt.shape[0]:
                nxt = _grow(nxt, need)
                opp = _grow(opp, need)
                face = _grow(face, need)
                stamp = _grow(stamp, need)
            base = nh
            for i in range(deg):
                nxt[base + i] = base + (i + 1) % deg
                face[base + i] = nf
                opp[base + i] = -1
            opp[b] = base
            opp[base] = b
            stamp[b] = hstamp[depth - 1]
            stamp[base] = hstamp[depth - 1]
            if target_here:
                target_face = nf
            nf += 1
            nh += deg
            openarr = _grow(openarr, end - 1 + deg - 1)
            pos_ = end - 1
            for i in range(deg - 1, 0, -1):
                openarr[pos_] = base + i
                pos_ += 1
            end = pos_
        else:
            # split [s, end) into [s, t) and [t+1, end-1); the slot at t stays as a gap
            t = s + 2 * k1
            bt = openarr[t]
            opp[b] = bt
            opp[bt] = b
            stamp[b] = hstamp[depth - 1]
            stamp[bt] = hstamp[depth - 1]
            if depth + 1 > starts.shape[0]:
                starts = _grow(starts, depth + 1)
                ends = _grow(ends, depth + 1)
                flags = _grow(flags, depth + 1)
                hstamp = _grow(hstamp, depth + 1)
            hstamp[depth] = hstamp[depth - 1]
            fl = flags[depth - 1]
            ends[depth - 1] = t
            starts[depth] = t + 1
            end -= 1
            if targeted:
                flags[depth - 1] = 1 if side_targeted == 0 else 0
                flags[depth] = 1 if side_targeted == 1 else 0
            else:
                flags[depth] = 0
                flags[depth - 1] = fl
            depth += 1
    return nxt, opp, face, stamp, nh, nf, target_face, target_tau, True


@njit(cache=True)
def vertex_labels(nxt, opp, nh):
    """Vertex id of each half-edge's origin (orbits of h -> nxt[opp[h]])."""
    vert = np.full(nh, -1, np.int32)
    nv = 0
    for h in range(nh):
        if vert[h] >= 0:
            continue
        g = h
        while vert[g] < 0:
            vert[g] = nv
            g = nxt[opp[g]]
        nv += 1
    return vert, nv


@njit(cache=True)
def bfs_levels(indptr, indices, src):
    """Unweighted distances from src on a CSR graph (-1 where unreachable)."""
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, np.int32)
    queue = np.empty(n, np.int32)
    dist[src] = 0
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u] + 1
        for j in range(indptr[u], indptr[u + 1]):
            v = indices[j]
            if dist[v] < 0:
                dist[v] = du
                queue[tail] = v
                tail += 1
    return dist


@njit(cache=True)
def collapse_links(nxt, opp, removed):
    """Follow each kept half-edge through removed 2-faces to its new partner.

    Returns (new_opp, multiplicity), both indexed by half-edge; entries of
    removed half-edges are left at -1 / 0.
    """
    nh = nxt.shape[0]
    new_opp = np.full(nh, -1, np.int64)
    mult = np.zeros(nh, np.int64)
    for h in range(nh):
        if removed[h]:
            continue
        g = opp[h]
        count = 1
        while removed[g]:
            g = opp[nxt[g]]
            count += 1
        new_opp[h] = g
        mult[h] = count
    return new_opp, mult


# ---------------------------------------------------------------------------
# batched runs (one generator per block of samples)


@njit(cache=True)
def batch_lifetimes(kd, p, start, max_steps, count, gen):
    taus = np.empty(count, np.int64)
    lasts = np.empty(count, np.int64)
    for i in range(count):
        t, m = lifetime(kd, p, start, max_steps, gen)
        taus[i] = t
        lasts[i] = m
    return taus, lasts


@njit(cache=True)
def batch_checkpoints(kd, kind, p, start, checkpoints, count, gen):
    out = np.zeros((count, checkpoints.shape[0]), np.int64)
    row = np.zeros(checkpoints.shape[0], np.int64)
    for i in range(count):
        walk_checkpoints(kd, kind, p, start, checkpoints, gen, row)
        out[i, :] = row
    return out


@njit(cache=True)
def joint_run(kd, ell, max_steps, gen):
    """One perimeter path killed at -ell read by both peeling algorithms.

    The filled-in perimeter process does not depend on the algorithm, so one
    path yields d_fpp (exponential clocks of rate 2P) and d_gr (layers chain).
    Returns (tau, d_fpp, sum 1/(2P), sum 1/(2P)^2, d_gr); tau = -1 on overflow.
    """
    wb, lb, hb = _buffers()
    P = 1
    D = 2
    H = 0
    d = 0.0
    s1 = 0.0
    s2 = 0.0
    for n in range(max_steps):
        r = 1.0 / (2.0 * P)
        d += gen.standard_exponential() * r
        s1 += r
        s2 += r * r
        x = tilted_step(kd, DOWN, ell, P, gen, wb, lb, hb)
        if x <= 0:
            return n + 1, d, s1, s2, H + 1
        k = x - P
        if k >= 0:
            ev = EV_C
        else:
            k = -k
            ev = EV_GL if gen.random() < 0.5 else EV_GR
        P, D, H = layers_update(P, D, H, ev, k)
    return -1, d, s1, s2, H + 1


@njit(cache=True)
def batch_joint(kd, ell, max_steps, count, gen):
    out = np.empty((count, 5))
    for i in range(count):
        t, d, s1, s2, g = joint_run(kd, ell, max_steps, gen)
        out[i, 0] = t
        out[i, 1] = d
        out[i, 2] = s1
        out[i, 3] = s2
        out[i, 4] = g
    return out
