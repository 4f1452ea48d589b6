"""Finite Boltzmann maps as half-edge arrays, their dual graphs and transforms.

A map stores, for each half-edge h, the next half-edge around its face
(``nxt``), the other half of its edge (``opp``) and its face id. Vertices are
the orbits of ``h -> nxt[opp[h]]``. The root face (id 0) is the external face
of perimeter 2*ell and half-edge 0 is the root.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from . import _fast
from .kernel import DisplacementLaw, MuLaw, mu_law, weights_from_nu
from .oracles import tutte_defects
from .walks import packed

DEFAULT_MAX_HALF_EDGES = 1 << 25
HARD_MAX_HALF_EDGES = 1 << 30
EXACT_DIAMETER_FACES = 100_000
TABLE_TOL = 1e-6


class SizeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class TableError(RuntimeError):
    pass


class MapInvariantError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# the map type


@dataclass(eq=False)
class PlanarMap:
    nxt: np.ndarray
    opp: np.ndarray
    face: np.ndarray
    n_faces: int
    root: int = 0
    target_face: Optional[int] = None
    target_vertex: Optional[int] = None
    stamp: Optional[np.ndarray] = None
    target_tau: Optional[int] = None
    error_bound: float = 0.0
    _vertex: Optional[np.ndarray] = field(default=None, repr=False)
    _n_vertices: int = field(default=-1, repr=False)

    @property
    def n_half_edges(self) -> int:
        return len(self.nxt)

    @property
    def n_edges(self) -> int:
        return len(self.nxt) // 2

    @property
    def vertex(self) -> np.ndarray:
        if self._vertex is None:
            self._vertex, self._n_vertices = _fast.vertex_labels(self.nxt, self.opp, len(self.nxt))
        return self._vertex

    @property
    def n_vertices(self) -> int:
        self.vertex
        return int(self._n_vertices)

    @property
    def root_face(self) -> int:
        return int(self.face[self.root])

    def face_degrees(self) -> np.ndarray:
        return np.bincount(self.face, minlength=self.n_faces)

    def vertex_degrees(self) -> np.ndarray:
        return np.bincount(self.vertex, minlength=self.n_vertices)

    def face_half_edges(self, f: int) -> list:
        first = int(np.flatnonzero(self.face == f)[0])
        out = [first]
        h = int(self.nxt[first])
        while h != first:
            out.append(h)
            h = int(self.nxt[h])
        return out

    def validate(self) -> None:
        """Raise MapInvariantError unless the arrays describe a bipartite planar map."""
        nh = len(self.nxt)
        idx = np.arange(nh)
        if nh == 0 or nh % 2:
            raise MapInvariantError("odd or empty half-edge count")
        opp, nxt, face = self.opp, self.nxt, self.face
        if opp.min() < 0 or opp.max() >= nh or np.any(opp[opp] != idx) or np.any(opp == idx):
            raise MapInvariantError("opp is not a fixed-point-free involution")
        if nxt.min() < 0 or nxt.max() >= nh or np.unique(nxt).size != nh:
            raise MapInvariantError("nxt is not a permutation")
        if np.any(face[nxt] != face):
            raise MapInvariantError("face ids are not constant on nxt-cycles")
        # every face id must label exactly one cycle
        seen = np.zeros(nh, bool)
        cycles = 0
        for h in range(nh):
            if not seen[h]:
                cycles += 1
                g = h
                while not seen[g]:
                    seen[g] = True
                    g = nxt[g]
        if cycles != self.n_faces or np.unique(face).size != self.n_faces:
            raise MapInvariantError("face labels do not match nxt-cycles")
        if np.any(self.face_degrees() % 2):
            raise MapInvariantError("odd face degree")
        V, E, F = self.n_vertices, self.n_edges, self.n_faces
        if V - E + F != 2:
            raise MapInvariantError(f"Euler characteristic {V - E + F} != 2")
        indptr, indices = _csr(self.vertex, self.vertex[opp], V)
        level = _fast.bfs_levels(indptr, indices, 0)
        if np.any(level < 0):
            raise MapInvariantError("vertex graph is disconnected")
        if np.any((level[self.vertex] - level[self.vertex[opp]]) % 2 == 0):
            raise MapInvariantError("vertex graph is not bipartite")

    def copy(self) -> "PlanarMap":
        return PlanarMap(self.nxt.copy(), self.opp.copy(), self.face.copy(), self.n_faces,
                         self.root, self.target_face, self.target_vertex,
                         None if self.stamp is None else self.stamp.copy(), self.target_tau,
                         self.error_bound)

    def same_structure(self, other: "PlanarMap") -> bool:
        return (self.n_faces == other.n_faces and self.root == other.root
                and np.array_equal(self.nxt, other.nxt) and np.array_equal(self.opp, other.opp)
                and np.array_equal(self.face, other.face))

    # -- export ----------------------------------------------------------
    def to_dict(self) -> dict:
        faces: list = [[] for _ in range(self.n_faces)]
        done = np.zeros(self.n_half_edges, bool)
        for h in range(self.n_half_edges):
            if done[h]:
                continue
            cyc = []
            g = h
            while not done[g]:
                done[g] = True
                cyc.append(int(g))
                g = int(self.nxt[g])
            faces[int(self.face[h])] = cyc
        return {"V": self.n_vertices, "E": self.n_edges, "F": self.n_faces, "root": int(self.root),
                "target_face": self.target_face, "faces": faces,
                "opposite": self.opp.astype(int).tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def save_binary(self, path: str) -> None:
        np.savez_compressed(path, nxt=self.nxt, opp=self.opp, face=self.face,
                            header=np.array([self.n_faces, self.root,
                                             -1 if self.target_face is None else self.target_face]))

    @classmethod
    def load_binary(cls, path: str) -> "PlanarMap":
        with np.load(path) as z:
            nf, root, tf = (int(x) for x in z["header"])
            return cls(z["nxt"], z["opp"], z["face"], nf, root, None if tf < 0 else tf)

    def dual_csv(self) -> str:
        u, v = dual_edges(self)
        return "face_a,face_b\n" + "".join(f"{a},{b}\n" for a, b in zip(u.tolist(), v.tolist()))


def map_from_faces(faces: list, opposite) -> PlanarMap:
    """Build a map from face cycles of half-edge ids and the edge involution."""
    nh = sum(len(c) for c in faces)
    nxt = np.empty(nh, np.int32)
    face = np.empty(nh, np.int32)
    for f, cyc in enumerate(faces):
        for i, h in enumerate(cyc):
            nxt[h] = cyc[(i + 1) % len(cyc)]
            face[h] = f
    return PlanarMap(nxt, np.asarray(opposite, dtype=np.int32), face, len(faces))


def _csr(u: np.ndarray, v: np.ndarray, n: int):
    """Symmetric CSR adjacency (duplicates kept) as int64 indptr / int32 indices."""
    a = np.concatenate([u, v])
    b = np.concatenate([v, u])
    order = np.argsort(a, kind="stable")
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    return indptr, b[order].astype(np.int32)


# ---------------------------------------------------------------------------
# builders

_CERT: "weakref.WeakKeyDictionary[DisplacementLaw, float]" = weakref.WeakKeyDictionary()


def table_certificate(law: DisplacementLaw, m_max: int = 200) -> float:
    """Max Tutte row-sum defect of the free peeling rows (cached per law)."""
    cert = _CERT.get(law)
    if cert is None:
        cert = float(np.abs(tutte_defects(law, m_max)).max())
        _CERT[law] = cert
    if not cert < TABLE_TOL:
        raise TableError(f"free peeling rows are off by {cert:.2e}")
    return cert


def _wrap(law, result, target_p) -> PlanarMap:
    nxt, opp, face, stamp, nh, nf, tf, tau, ok = result
    if not ok:
        raise SizeError(f"map exceeded the half-edge cap after {nh} half-edges")
    m = PlanarMap(nxt[:nh].copy(), opp[:nh].copy(), face[:nh].copy(), int(nf), 0,
                  int(tf) if target_p >= 1 else None, None,
                  stamp[:nh].copy() if target_p >= 1 else None,
                  int(tau) if target_p >= 1 else None)
    m.error_bound = (nh // 2) * table_certificate(law)
    return m


def build_boltzmann(law: DisplacementLaw, ell: int, rng: np.random.Generator,
                    max_half_edges: int = DEFAULT_MAX_HALF_EDGES) -> PlanarMap:
    """Sample a Boltzmann map with perimeter 2*ell by peeling every hole to completion.

    Raises SizeError when the map would exceed max_half_edges. ``error_bound``
    on the result is the number of peeling steps times the row-sum certificate.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if max_half_edges > HARD_MAX_HALF_EDGES:
        raise SizeError("half-edge cap above the hard limit")
    table_certificate(law)
    return _wrap(law, _fast.build_map(packed(law), int(ell), 0, rng, int(max_half_edges)), 0)


def build_targeted(law: DisplacementLaw, ell: int, target_p: int, rng: np.random.Generator,
                   max_half_edges: int = DEFAULT_MAX_HALF_EDGES) -> PlanarMap:
    """Sample a map with perimeter 2*ell and a marked inner face of degree 2*target_p.

    The law is the Boltzmann law biased by the number of such faces and
    normalised; the hole containing the target follows the killed walk.
    Half-edge stamps record the targeted step at which their hole separated
    from the target.
    """
    if ell < 1 or target_p < 1:
        raise ValueError("need ell >= 1 and target_p >= 1")
    if max_half_edges > HARD_MAX_HALF_EDGES:
        raise SizeError("half-edge cap above the hard limit")
    table_certificate(law)
    res = _fast.build_map(packed(law), int(ell), int(target_p), rng, int(max_half_edges))
    return _wrap(law, res, target_p)


# ---------------------------------------------------------------------------
# tree encoding: counts of the pointed map


@dataclass
class PointedCounts:
    ell: int
    tau: int
    down_steps: int
    other_steps: int
    walk: Optional[np.ndarray] = None

    @property
    def vertices(self) -> int:
        return self.down_steps + 1

    @property
    def faces(self) -> int:
        return self.other_steps + 1

    @property
    def edges(self) -> int:
        return self.tau


class BudgetExceeded(RuntimeError):
    pass


class MuSampler:
    """Inverse-CDF sampler for the mu-law, with the table extended through its tail."""

    def __init__(self, mu: MuLaw, extend_to: int = 1 << 20):
        table = mu.table
        if mu.tail_weight is not None and extend_to > mu.K:
            extra = mu.tail_weight(np.arange(mu.K + 1, extend_to + 1, dtype=float))
            table = np.concatenate([table, extra])
        self.cdf = np.cumsum(table)
        self.cdf /= max(self.cdf[-1], 1.0)
        # mass beyond the extended table, sampled from a continuous 3/2-Pareto tail
        self.rest = max(0.0, 1.0 - float(self.cdf[-1]))
        self.top = len(table) - 2

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        k = np.searchsorted(self.cdf, u, side="right").astype(np.int64) - 1
        far = k > self.top
        if far.any():
            v = rng.random(int(far.sum()))
            k[far] = np.floor((self.top + 0.5) * v ** (-2.0 / 3.0)).astype(np.int64)
        return k


def build_pointed_js(law_or_mu, ell: int, rng: np.random.Generator, budget: int = 1 << 24,
                     keep_walk: bool = False, sampler: MuSampler | None = None) -> PointedCounts:
    """Run the mu-walk from 0 to its hitting time of -ell and return the map's counts.

    The walk only moves down by single steps, so it hits -ell exactly. Steps
    equal to -1 are vertices of the pointed map other than the marked one.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if sampler is None:
        mu = law_or_mu if isinstance(law_or_mu, MuLaw) else mu_law(law_or_mu)
        sampler = MuSampler(mu)
    pos = 0
    used = 0
    down = 0
    batch = 64
    pieces = []
    while used < budget:
        steps = sampler.draw(rng, min(batch, budget - used))
        path = pos + np.cumsum(steps)
        hit = np.flatnonzero(path <= -ell)
        if hit.size:
            steps = steps[: hit[0] + 1]
            used += len(steps)
            down += int(np.count_nonzero(steps == -1))
            if keep_walk:
                pieces.append(steps)
            walk = np.concatenate(pieces) if keep_walk else None
            return PointedCounts(ell, used, down, used - down, walk)
        used += len(steps)
        down += int(np.count_nonzero(steps == -1))
        if keep_walk:
            pieces.append(steps)
        pos = int(path[-1])
        batch = min(batch * 2, 1 << 20)
    raise BudgetExceeded(f"mu-walk did not reach -{ell} within {budget} steps")


def log_pointed_partition(law: DisplacementLaw, ell: int) -> float:
    """log of the pointed partition function h_down(ell) c^ell."""
    from .harmonic import log_hdown

    return float(log_hdown(ell)) + ell * math.log(law.c_q)


# ---------------------------------------------------------------------------
# dual graph and distances


def dual_edges(m: PlanarMap):
    """Face pairs across every edge (one entry per edge, loops included)."""
    h = np.flatnonzero(np.arange(m.n_half_edges) < m.opp)
    return m.face[h], m.face[m.opp[h]]


def dual_csr(m: PlanarMap):
    u, v = dual_edges(m)
    keep = u != v
    return _csr(u[keep], v[keep], m.n_faces)


def fpp_weights(m: PlanarMap, rng: np.random.Generator) -> np.ndarray:
    """One unit-mean exponential length per edge, in edge order."""
    return rng.exponential(1.0, size=m.n_edges)


def dual_fpp_matrix(m: PlanarMap, weights: np.ndarray) -> sp.csr_matrix:
    """Dual adjacency keeping the shortest of parallel edges; loops dropped."""
    u, v = dual_edges(m)
    keep = u != v
    u, v, w = u[keep], v[keep], weights[keep]
    a = np.minimum(u, v).astype(np.int64)
    b = np.maximum(u, v).astype(np.int64)
    order = np.lexsort((w, b, a))
    a, b, w = a[order], b[order], w[order]
    first = np.ones(len(a), bool)
    first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    a, b, w = a[first], b[first], w[first]
    n = m.n_faces
    return sp.csr_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))),
                         shape=(n, n))


class DualDistances:
    """Single-source dual distances in graph or fpp mode."""

    def __init__(self, m: PlanarMap, mode: str = "graph", rng: np.random.Generator | None = None,
                 weights: np.ndarray | None = None):
        if mode not in ("graph", "fpp"):
            raise ValueError(f"unknown mode {mode!r}")
        self.map = m
        self.mode = mode
        self.calls = 0
        if mode == "graph":
            self.indptr, self.indices = dual_csr(m)
        else:
            if weights is None:
                if rng is None:
                    raise ValueError("fpp mode needs an rng or explicit weights")
                weights = fpp_weights(m, rng)
            self.weights = weights
            self.matrix = dual_fpp_matrix(m, weights)

    def from_face(self, f: int) -> np.ndarray:
        self.calls += 1
        if self.mode == "graph":
            return _fast.bfs_levels(self.indptr, self.indices, int(f))
        return dijkstra(self.matrix, directed=False, indices=int(f))

    def between(self, f: int, g: int) -> float:
        return float(self.from_face(f)[g])


def dual_distances(m: PlanarMap, mode: str = "graph", source: Optional[int] = None,
                   rng: np.random.Generator | None = None):
    """Distances from ``source`` (root face by default) to every face."""
    dd = DualDistances(m, mode, rng)
    return dd.from_face(m.root_face if source is None else source)


def edge_distance(dist: np.ndarray, m: PlanarMap, h: int) -> float:
    """Distance from the source to an edge: the nearer of its two side faces."""
    return float(min(dist[m.face[h]], dist[m.face[m.opp[h]]]))


@dataclass
class Diameter:
    lower: float
    upper: float
    exact: bool
    sweeps: int


def diameter(m: PlanarMap, mode: str = "graph", rng: np.random.Generator | None = None,
             budget: Optional[int] = None, dd: DualDistances | None = None) -> Diameter:
    """Dual diameter with rigorous bounds.

    Double sweep gives a lower bound and twice the eccentricity of a central
    face an upper bound; for maps with at most EXACT_DIAMETER_FACES faces the
    bounds are then closed by iterating over faces far from the centre. Larger
    maps stop after the sweeps and report ``exact=False``.
    """
    if m.n_faces > HARD_MAX_HALF_EDGES:
        raise SizeError("map too large for distance computations")
    dd = dd or DualDistances(m, mode, rng)
    if budget is None:
        budget = 100_000 if m.n_faces <= EXACT_DIAMETER_FACES else 4
    return _ifub(dd.from_face, m.root_face, budget)


def _ifub(dist_from: Callable, start: int, budget: int) -> Diameter:
    d0 = dist_from(start)
    a = int(np.argmax(d0))
    da = dist_from(a)
    b = int(np.argmax(da))
    lower = float(da[b])
    if budget <= 2:
        return Diameter(lower, 2.0 * float(d0.max()), lower == 2.0 * float(d0.max()), 2)
    db = dist_from(b)
    centre = int(np.argmin(np.maximum(da, db)))
    dc = dist_from(centre)
    used = 4
    ecc = float(dc.max())
    lower = max(lower, ecc, float(db.max()))
    upper = 2.0 * ecc
    order = np.argsort(-dc, kind="stable")
    for x in order:
        bound = max(lower, 2.0 * float(dc[x]))
        upper = min(upper, bound)
        if lower >= 2.0 * float(dc[x]):
            break
        if used >= budget:
            break
        lower = max(lower, float(dist_from(int(x)).max()))
        used += 1
    else:
        upper = lower
    return Diameter(lower, upper, lower == upper, used)


# ---------------------------------------------------------------------------
# unzipping, rezipping and exchanging root and target


def unzip(m: PlanarMap, h: int) -> PlanarMap:
    """Open the edge of half-edge h into a new 2-face (appended as the last face).

    The new half-edges are numbered n and n+1: n is glued to h, n+1 to the
    former partner of h.
    """
    n = m.n_half_edges
    g = int(m.opp[h])
    nxt = np.concatenate([m.nxt, np.array([n + 1, n], dtype=m.nxt.dtype)])
    opp = np.concatenate([m.opp, np.array([h, g], dtype=m.opp.dtype)])
    opp[h] = n
    opp[g] = n + 1
    face = np.concatenate([m.face, np.array([m.n_faces, m.n_faces], dtype=m.face.dtype)])
    out = PlanarMap(nxt, opp, face, m.n_faces + 1, m.root, m.target_face, m.target_vertex)
    if m.stamp is not None:
        out.stamp = np.concatenate([m.stamp, m.stamp[[h, g]]])
    return out


def _delete(m: PlanarMap, removed: np.ndarray, new_opp: np.ndarray) -> PlanarMap:
    """Drop removed half-edges and faces that lose all their half-edges, relabelling in order."""
    keep = ~removed
    relabel = np.cumsum(keep) - 1
    nxt = relabel[m.nxt[keep]].astype(np.int32)
    opp = relabel[new_opp[keep]].astype(np.int32)
    old_faces = m.face[keep]
    alive = np.zeros(m.n_faces, bool)
    alive[old_faces] = True
    frelabel = np.cumsum(alive) - 1
    face = frelabel[old_faces].astype(np.int32)
    tf = None if m.target_face is None or not alive[m.target_face] else int(frelabel[m.target_face])
    out = PlanarMap(nxt, opp, face, int(alive.sum()), int(relabel[m.root]), tf, None)
    if m.stamp is not None:
        out.stamp = m.stamp[keep]
    return out


def rezip(m: PlanarMap, f: int) -> PlanarMap:
    """Glue the two sides of the 2-face f back into one edge (inverse of unzip)."""
    hs = np.flatnonzero(m.face == f)
    if len(hs) != 2:
        raise ShapeError(f"face {f} has degree {len(hs)}, not 2")
    if m.root in hs:
        raise ShapeError("cannot rezip the root face")
    a, b = int(hs[0]), int(hs[1])
    x, y = int(m.opp[a]), int(m.opp[b])
    if x == b:
        raise ShapeError("2-face glued to itself")
    removed = np.zeros(m.n_half_edges, bool)
    removed[[a, b]] = True
    new_opp = m.opp.astype(np.int64).copy()
    new_opp[x] = y
    new_opp[y] = x
    return _delete(m, removed, new_opp)


def exchange_root_target(m: PlanarMap, rng: np.random.Generator | None = None) -> PlanarMap:
    """Swap the roles of root face and 2-face target.

    The new root is a half-edge of the former target (chosen uniformly when
    an rng is given, else the lower-numbered one) and the former root face
    becomes the target.
    """
    if m.target_face is None:
        raise ShapeError("map has no target face")
    hs = np.flatnonzero(m.face == m.target_face)
    if len(hs) != 2:
        raise ShapeError(f"target face has degree {len(hs)}, not 2")
    pick = int(hs[int(rng.integers(2))]) if rng is not None else int(hs[0])
    out = m.copy()
    out.root = pick
    out.target_face = m.root_face
    out.target_tau = None
    return out


# ---------------------------------------------------------------------------
# uniform picks


def uniform_pick(m: PlanarMap, kind: str, rng: np.random.Generator) -> int:
    """A uniform edge (as one of its half-edges), face id or vertex id.

    Vertices are obtained by drawing a uniform half-edge and keeping it with
    probability 1/deg of its origin, which is exactly uniform on vertices.
    """
    if kind == "edge":
        return int(rng.integers(m.n_half_edges))
    if kind == "face":
        return int(rng.integers(m.n_faces))
    if kind == "vertex":
        vert = m.vertex
        deg = m.vertex_degrees()
        while True:
            h = int(rng.integers(m.n_half_edges))
            v = int(vert[h])
            if rng.random() * deg[v] < 1.0:
                return v
    raise ValueError(f"unknown kind {kind!r}")


def vertex_pick_law(m: PlanarMap) -> np.ndarray:
    """Exact law of uniform_pick(m, "vertex") computed from the acceptance mixture."""
    deg = m.vertex_degrees().astype(float)
    accept = 1.0 / deg[m.vertex]
    per_vertex = np.bincount(m.vertex, weights=accept, minlength=m.n_vertices)
    return per_vertex / per_vertex.sum()


# ---------------------------------------------------------------------------
# watermelons


@dataclass
class WatermelonView:
    """A map with its inner 2-faces collapsed and the number of parallel edges they formed."""

    collapsed: PlanarMap
    multiplicity: np.ndarray  # per half-edge of the collapsed map, symmetric under opp

    def inflate(self) -> PlanarMap:
        """Reinsert multiplicity - 1 two-faces along each edge."""
        counts = self.multiplicity - 1
        return _insert_two_faces(self.collapsed, counts)


def watermelon_collapse(m: PlanarMap) -> WatermelonView:
    """Rezip every 2-face other than the root and target faces."""
    deg = m.face_degrees()
    two = deg == 2
    two[m.root_face] = False
    if m.target_face is not None:
        two[m.target_face] = False
    removed = two[m.face]
    if not removed.any():
        return WatermelonView(m.copy(), np.ones(m.n_half_edges, np.int64))
    new_opp, mult = _fast.collapse_links(m.nxt.astype(np.int64), m.opp.astype(np.int64), removed)
    out = _delete(m, removed, new_opp)
    return WatermelonView(out, mult[~removed])


def _insert_two_faces(m: PlanarMap, counts: np.ndarray) -> PlanarMap:
    """Unzip edge {h, opp h} counts[h] times for every h < opp h, in edge order."""
    hs = np.flatnonzero(np.arange(m.n_half_edges) < m.opp)
    c = counts[hs].astype(np.int64)
    total = int(c.sum())
    if total == 0:
        return m.copy()
    n0 = m.n_half_edges
    nxt = np.concatenate([m.nxt.astype(np.int64), np.empty(2 * total, np.int64)])
    opp = np.concatenate([m.opp.astype(np.int64), np.empty(2 * total, np.int64)])
    face = np.concatenate([m.face.astype(np.int64), np.empty(2 * total, np.int64)])
    nh = n0
    nf = m.n_faces
    for h, k in zip(hs.tolist(), c.tolist()):
        for _ in range(k):
            g = opp[h]
            nxt[nh], nxt[nh + 1] = nh + 1, nh
            face[nh] = face[nh + 1] = nf
            opp[h], opp[nh] = nh, h
            opp[g], opp[nh + 1] = nh + 1, g
            nh += 2
            nf += 1
    return PlanarMap(nxt.astype(np.int32), opp.astype(np.int32), face.astype(np.int32), nf,
                     m.root, m.target_face, m.target_vertex)


def watermelon_inflate(m: PlanarMap, q1: float, rng: np.random.Generator) -> PlanarMap:
    """Insert an independent geometric(q1) number of 2-faces along every edge."""
    if not 0.0 <= q1 < 1.0:
        raise ValueError("q1 must lie in [0, 1)")
    counts = np.zeros(m.n_half_edges, np.int64)
    hs = np.flatnonzero(np.arange(m.n_half_edges) < m.opp)
    if q1 > 0:
        counts[hs] = rng.geometric(1.0 - q1, size=len(hs)) - 1
    return _insert_two_faces(m, counts)


def collapsed_weights(law: DisplacementLaw, kmax: int = 20) -> dict:
    """Face weights after collapsing watermelons: q~_1 = 0, q~_k = q_k / (1 - q_1)^k."""
    weights, _ = weights_from_nu(law)
    q1 = weights.q(1)
    out = {1: 0.0}
    for k in range(2, kmax + 1):
        out[k] = weights.q(k) / (1.0 - q1) ** k
    return {"q1": q1, "q_tilde": out}
