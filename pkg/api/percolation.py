"""Bond percolation on circuit-derived and rectangular lattices.

A measurement configuration maps to a tilted square lattice: one vertex per
gate, one edge per wire segment between two gates on the same qubit, open
iff every site on the segment is unmeasured. Virtual LEFT and RIGHT vertices
attach through the initial legs (always open) and the final legs. Faces of
the embedding are indexed by the (tau, a) positions where layer tau has no
gate on (a, a+1), plus TOP (qubit-1 side) and BOTTOM (qubit-n side).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache, partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, stats
from scipy.sparse import csgraph

from ._exceptions import ConfigurationError, InsufficientPaths, PersistError
from ._models import MeasurementConfiguration, Purpose, StreamKey
from ._responses import ClusterReport, CrossingPath, CrossingReport, CutReport, McEstimate
from .circuit import build_layout, sample_measurement_configuration

logger = logging.getLogger(__name__)

Provenance = Literal["rectangular", "circuit_tilted"]

EDGE_INTERIOR = 0
EDGE_INITIAL = 1
EDGE_FINAL = 2
NO_FACE = -1


@dataclass(frozen=True, eq=False)
class BondLattice:
    """Open/closed edge graph with boundary labels and face incidence.

    `faces[e]` holds the two faces on either side of edge e (NO_FACE when the
    edge has no dual). The last two face ids are TOP and BOTTOM.
    """

    vertex_count: int
    u: np.ndarray
    v: np.ndarray
    open: np.ndarray
    left: np.ndarray
    right: np.ndarray
    top: np.ndarray
    bottom: np.ndarray
    provenance: Provenance
    shape: Tuple[int, int]  # (a, b) for windows, (n, t) for circuits
    faces: np.ndarray
    face_count: int
    kinds: np.ndarray
    edge_qubit: Optional[np.ndarray] = None
    edge_sites: Tuple[Tuple[Tuple[int, int], ...], ...] = ()

    @property
    def edge_count(self) -> int:
        return int(self.u.size)

    @property
    def top_face(self) -> int:
        return self.face_count - 2

    @property
    def bottom_face(self) -> int:
        return self.face_count - 1

    def with_open(self, open_flags: np.ndarray) -> "BondLattice":
        flags = np.asarray(open_flags, dtype=bool)
        if flags.shape != self.open.shape:
            raise ConfigurationError("open flags must match the edge count")
        return replace(self, open=flags)

    def open_fraction(self) -> float:
        return float(self.open.mean()) if self.open.size else 0.0


@dataclass(frozen=True, eq=False)
class DualLattice:
    """Faces of the primal; a dual edge is open iff its primal edge is closed."""

    vertex_count: int
    u: np.ndarray
    v: np.ndarray
    primal_edge: np.ndarray
    open: np.ndarray
    top: int
    bottom: int

    def primal_pattern(self, edge_count: int) -> np.ndarray:
        """Primal open flags recovered from the dual (edges without a dual stay False)."""
        pattern = np.zeros(edge_count, dtype=bool)
        pattern[self.primal_edge] = ~self.open
        return pattern


# ----- Construction -----
def circuit_to_bond_lattice(M: MeasurementConfiguration) -> BondLattice:
    n, t = M.n, M.t
    layout = build_layout(n, t)
    R = layout.gate_count
    left_vertex, right_vertex = R, R + 1

    face_id: Dict[Tuple[int, int], int] = {}
    for tau in range(0, t + 2):
        for a in range(1, n):
            if (a + tau) % 2 == 1:
                face_id[(tau, a)] = len(face_id)
    top_face, bottom_face = len(face_id), len(face_id) + 1

    def faces_of(q: int, tau: int) -> Tuple[int, int]:
        upper = top_face if q == 1 else face_id[(tau if (q - 1 + tau) % 2 else tau + 1, q - 1)]
        lower = bottom_face if q == n else face_id[(tau if (q + tau) % 2 else tau + 1, q)]
        return upper, lower

    initial, interior, final = [], [], []
    for q in range(1, n + 1):
        layers = [tau for tau in range(1, t + 1) if layout.gate_on(q, tau) is not None]
        first = layout.gate_on(q, layers[0])
        initial.append((left_vertex, first.index - 1, (), EDGE_INITIAL, q, 0))
        for k, start in enumerate(layers):
            here = layout.gate_on(q, start)
            stop = layers[k + 1] if k + 1 < len(layers) else t + 1
            sites = tuple((q, tau) for tau in range(start, stop))
            if k + 1 < len(layers):
                nxt = layout.gate_on(q, layers[k + 1])
                interior.append((here.index - 1, nxt.index - 1, sites, EDGE_INTERIOR, q, start))
            else:
                final.append((here.index - 1, right_vertex, sites, EDGE_FINAL, q, start))
    interior.sort(key=lambda e: (e[5], e[4]))
    edges = initial + interior + final

    measured = M.measured_mask
    u = np.array([e[0] for e in edges], dtype=np.int64)
    v = np.array([e[1] for e in edges], dtype=np.int64)
    open_flags = np.array([all(not measured[q - 1, tau - 1] for q, tau in e[2]) for e in edges], dtype=bool)
    faces = np.array([faces_of(e[4], e[5]) for e in edges], dtype=np.int64)
    top = np.array([pl.index - 1 for pl in layout.placements if pl.a == 1], dtype=np.int64)
    bottom = np.array([pl.index - 1 for pl in layout.placements if pl.a + 1 == n], dtype=np.int64)
    return BondLattice(
        vertex_count=R + 2,
        u=u,
        v=v,
        open=open_flags,
        left=np.array([left_vertex]),
        right=np.array([right_vertex]),
        top=top,
        bottom=bottom,
        provenance="circuit_tilted",
        shape=(n, t),
        faces=faces,
        face_count=len(face_id) + 2,
        kinds=np.array([e[3] for e in edges], dtype=np.int8),
        edge_qubit=np.array([e[4] for e in edges], dtype=np.int64),
        edge_sites=tuple(e[2] for e in edges),
    )


@lru_cache(maxsize=32)
def _window_geometry(a: int, b: int) -> dict:
    """Edges of [0,a]x[0,b]: horizontal (x,y)-(x+1,y) first, then vertical (x,y)-(x,y+1)."""
    def vid(x, y):
        return x * (b + 1) + y

    def sq(x, y):
        return x * b + y

    top_face, bottom_face = a * b, a * b + 1
    hx, hy = np.meshgrid(np.arange(a), np.arange(b + 1), indexing="ij")
    hx, hy = hx.ravel(), hy.ravel()
    vx, vy = np.meshgrid(np.arange(a + 1), np.arange(b), indexing="ij")
    vx, vy = vx.ravel(), vy.ravel()
    u = np.concatenate([vid(hx, hy), vid(vx, vy)])
    v = np.concatenate([vid(hx + 1, hy), vid(vx, vy + 1)])
    h_faces = np.stack(
        [np.where(hy == 0, bottom_face, sq(hx, hy - 1)), np.where(hy == b, top_face, sq(hx, hy))], axis=1
    )
    interior = (vx > 0) & (vx < a)
    v_faces = np.stack(
        [np.where(interior, sq(vx - 1, vy), NO_FACE), np.where(interior, sq(vx, vy), NO_FACE)], axis=1
    )
    ys, xs = np.arange(b + 1), np.arange(a + 1)
    geometry = {
        "u": u,
        "v": v,
        "faces": np.concatenate([h_faces, v_faces]),
        "left": vid(0, ys),
        "right": vid(a, ys),
        "top": vid(xs, b),
        "bottom": vid(xs, 0),
        "kinds": np.zeros(u.size, dtype=np.int8),
    }
    for arr in geometry.values():
        arr.setflags(write=False)
    return geometry


def rectangular_window(a: int, b: int, open_flags: Optional[np.ndarray] = None) -> BondLattice:
    if a < 1 or b < 1:
        raise ConfigurationError(f"window sides must be >= 1, got ({a}, {b})")
    g = _window_geometry(int(a), int(b))
    flags = np.ones(g["u"].size, dtype=bool) if open_flags is None else np.asarray(open_flags, dtype=bool)
    return BondLattice(
        vertex_count=(a + 1) * (b + 1),
        u=g["u"],
        v=g["v"],
        open=flags,
        left=g["left"],
        right=g["right"],
        top=g["top"],
        bottom=g["bottom"],
        provenance="rectangular",
        shape=(int(a), int(b)),
        faces=g["faces"],
        face_count=a * b + 2,
        kinds=g["kinds"],
    )


def rectangular_lattice(a: int, b: int, q: float, stream: StreamKey) -> BondLattice:
    """[0,a]x[0,b] with each edge open independently with probability q."""
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"open probability must lie in [0, 1], got {q}")
    edge_count = a * (b + 1) + (a + 1) * b
    return rectangular_window(a, b, stream.rng().random(edge_count) < q)


def tilted_lattice(n: int, t: int, q: float, stream: StreamKey) -> BondLattice:
    """Circuit lattice of a configuration sampled at rate p = 1 - q."""
    M = sample_measurement_configuration(n, t, 1.0 - q, "structural_zero", stream)
    return circuit_to_bond_lattice(M)


def subwindow(lattice: BondLattice, x_range: Tuple[int, int], y_range: Tuple[int, int]) -> BondLattice:
    """Sub-rectangle [x0,x1]x[y0,y1] of a rectangular lattice, sharing its edge states."""
    if lattice.provenance != "rectangular":
        raise ConfigurationError("subwindow applies to rectangular lattices only")
    a, b = lattice.shape
    (x0, x1), (y0, y1) = x_range, y_range
    if not (0 <= x0 < x1 <= a and 0 <= y0 < y1 <= b):
        raise ConfigurationError(f"window {x_range}x{y_range} outside [0,{a}]x[0,{b}]")
    sa, sb = x1 - x0, y1 - y0
    hx, hy = np.meshgrid(np.arange(sa), np.arange(sb + 1), indexing="ij")
    vx, vy = np.meshgrid(np.arange(sa + 1), np.arange(sb), indexing="ij")
    h_parent = (hx.ravel() + x0) * (b + 1) + (hy.ravel() + y0)
    v_parent = a * (b + 1) + (vx.ravel() + x0) * b + (vy.ravel() + y0)
    return rectangular_window(sa, sb, lattice.open[np.concatenate([h_parent, v_parent])])


# ----- Crossings -----
def _open_components(lattice: BondLattice) -> np.ndarray:
    mask = lattice.open
    graph = sparse.coo_matrix(
        (np.ones(int(mask.sum()), dtype=np.int8), (lattice.u[mask], lattice.v[mask])),
        shape=(lattice.vertex_count, lattice.vertex_count),
    ).tocsr()
    _, labels = csgraph.connected_components(graph, directed=False)
    return labels


def left_right_crossing(lattice: BondLattice) -> bool:
    labels = _open_components(lattice)
    return bool(np.intersect1d(labels[lattice.left], labels[lattice.right]).size)


def max_edge_disjoint_crossings(lattice: BondLattice, *, with_paths: bool = True) -> CrossingReport:
    """Menger count via unit-capacity max flow (Dinic) from LEFT to RIGHT."""
    V = lattice.vertex_count
    source, sink = V, V + 1
    mask = lattice.open
    u, v = lattice.u[mask], lattice.v[mask]
    big = int(mask.sum()) + 1
    rows = np.concatenate([u, v, np.full(lattice.left.size, source), lattice.right])
    cols = np.concatenate([v, u, lattice.left, np.full(lattice.right.size, sink)])
    data = np.concatenate(
        [np.ones(2 * u.size, dtype=np.int32), np.full(lattice.left.size + lattice.right.size, big, dtype=np.int32)]
    )
    capacity = sparse.coo_matrix((data, (rows, cols)), shape=(V + 2, V + 2)).tocsr()
    capacity.sum_duplicates()
    result = csgraph.maximum_flow(capacity, source, sink, method="dinic")
    count = int(result.flow_value)
    if not with_paths or count == 0:
        return CrossingReport(count > 0, count, ())
    paths = _decompose(lattice, result.flow.tocoo(), count)
    return CrossingReport(True, count, paths)


def _decompose(lattice: BondLattice, flow: sparse.coo_matrix, count: int) -> Tuple[CrossingPath, ...]:
    flow_map = {(int(r), int(c)): int(x) for r, c, x in zip(flow.row, flow.col, flow.data)}

    def net(x: int, y: int) -> int:
        fxy, fyx = flow_map.get((x, y), 0), flow_map.get((y, x), 0)
        if fxy < 0 or fyx < 0:
            return fxy if fxy else -fyx
        return fxy - fyx

    groups: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for e in np.flatnonzero(lattice.open):
        x, y = int(lattice.u[e]), int(lattice.v[e])
        groups[(min(x, y), max(x, y))].append(int(e))

    out: Dict[int, deque] = defaultdict(deque)
    excess: Dict[int, int] = defaultdict(int)
    directed: List[Tuple[int, int, int]] = []
    for (x, y), ids in groups.items():
        k = net(x, y)
        tail, head = (x, y) if k > 0 else (y, x)
        for e in sorted(ids)[: abs(k)]:
            directed.append((e, tail, head))
    for e, tail, head in sorted(directed):
        out[tail].append((e, head))
        excess[tail] += 1
        excess[head] -= 1

    sources = {int(x): excess[int(x)] for x in lattice.left if excess[int(x)] > 0}
    sinks = {int(y): -excess[int(y)] for y in lattice.right if excess[int(y)] < 0}
    paths: List[CrossingPath] = []
    for start in sorted(sources):
        while sources[start] > 0:
            cur, verts, edges = start, [start], []
            while not (sinks.get(cur, 0) > 0 and edges):
                e, nxt = out[cur].popleft()
                if nxt in verts:
                    idx = verts.index(nxt)
                    verts, edges = verts[: idx + 1], edges[:idx]
                else:
                    verts.append(nxt)
                    edges.append(e)
                cur = nxt
            sinks[cur] -= 1
            sources[start] -= 1
            paths.append(CrossingPath(tuple(edges), tuple(verts)))
    paths.sort(key=lambda path: path.edges)
    if len(paths) != count:
        logger.warning("flow decomposition produced %d paths for flow value %d", len(paths), count)
    return tuple(paths)


def crossings_at_least(lattice: BondLattice, r: int) -> bool:
    """At least r+1 edge-disjoint left-right crossings."""
    return max_edge_disjoint_crossings(lattice, with_paths=False).count >= r + 1


def measurement_free_paths(M: MeasurementConfiguration, k: int) -> List[CrossingPath]:
    """k edge-disjoint open crossings, top to bottom by starting leg."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    report = max_edge_disjoint_crossings(circuit_to_bond_lattice(M))
    if report.count < k:
        raise InsufficientPaths(k, report.count)
    return list(report.paths[:k])


# ----- Dual lattice and cuts -----
def dual_lattice(lattice: BondLattice) -> DualLattice:
    has_dual = (lattice.faces[:, 0] != NO_FACE) & (lattice.faces[:, 0] != lattice.faces[:, 1])
    ids = np.flatnonzero(has_dual)
    return DualLattice(
        vertex_count=lattice.face_count,
        u=lattice.faces[ids, 0],
        v=lattice.faces[ids, 1],
        primal_edge=ids,
        open=~lattice.open[ids],
        top=lattice.top_face,
        bottom=lattice.bottom_face,
    )


def dual_top_bottom_cut(
    lattice: BondLattice, *, time_window: Optional[Tuple[int, int]] = None
) -> CutReport:
    """Path of closed primal edges from TOP to BOTTOM through the faces.

    `time_window` (circuit lattices) keeps only edges whose sites all lie in
    [lo, hi].
    """
    dual = dual_lattice(lattice)
    usable = dual.open.copy()
    if time_window is not None:
        if lattice.provenance != "circuit_tilted":
            raise ConfigurationError("time windows apply to circuit lattices only")
        lo, hi = time_window
        inside = np.array(
            [bool(sites) and all(lo <= tau <= hi for _, tau in sites) for sites in lattice.edge_sites], dtype=bool
        )
        usable &= inside[dual.primal_edge]
    u, v, primal = dual.u[usable], dual.v[usable], dual.primal_edge[usable]
    graph = sparse.coo_matrix(
        (np.ones(u.size, dtype=np.int8), (u, v)), shape=(dual.vertex_count, dual.vertex_count)
    ).tocsr()
    _, predecessors = csgraph.breadth_first_order(graph, dual.top, directed=False, return_predecessors=True)
    if dual.bottom != dual.top and predecessors[dual.bottom] < 0:
        return CutReport(False, ())
    edge_of: Dict[Tuple[int, int], int] = {}
    for a, b, e in sorted(zip(u.tolist(), v.tolist(), primal.tolist()), key=lambda x: x[2]):
        edge_of.setdefault((min(a, b), max(a, b)), e)
    cut: List[int] = []
    node = dual.bottom
    while node != dual.top:
        prev = int(predecessors[node])
        cut.append(edge_of[(min(prev, node), max(prev, node))])
        node = prev
    return CutReport(True, tuple(reversed(cut)))


def left_of_cut(lattice: BondLattice, cut_edges: Iterable[int]) -> List[int]:
    """Gate indices j reachable from LEFT without crossing the cut (any edge state)."""
    if lattice.provenance != "circuit_tilted":
        raise ConfigurationError("left_of_cut applies to circuit lattices only")
    keep = np.ones(lattice.edge_count, dtype=bool)
    keep[list(cut_edges)] = False
    graph = sparse.coo_matrix(
        (np.ones(int(keep.sum()), dtype=np.int8), (lattice.u[keep], lattice.v[keep])),
        shape=(lattice.vertex_count, lattice.vertex_count),
    ).tocsr()
    _, labels = csgraph.connected_components(graph, directed=False)
    left_label = labels[lattice.left[0]]
    if left_label == labels[lattice.right[0]]:
        raise ConfigurationError("edges do not separate LEFT from RIGHT")
    gates = lattice.vertex_count - 2
    return [int(g) + 1 for g in np.flatnonzero(labels[:gates] == left_label)]


# ----- Clusters -----
def final_time_clusters(M: MeasurementConfiguration | BondLattice) -> ClusterReport:
    """Open clusters of interior bonds that touch an open final-time leg."""
    lattice = M if isinstance(M, BondLattice) else circuit_to_bond_lattice(M)
    gates = lattice.vertex_count - 2
    interior = (lattice.kinds == EDGE_INTERIOR) & lattice.open
    graph = sparse.coo_matrix(
        (np.ones(int(interior.sum()), dtype=np.int8), (lattice.u[interior], lattice.v[interior])),
        shape=(gates, gates),
    ).tocsr()
    _, labels = csgraph.connected_components(graph, directed=False)

    legs: Dict[int, List[int]] = defaultdict(list)
    for e in np.flatnonzero((lattice.kinds == EDGE_FINAL) & lattice.open):
        legs[int(labels[lattice.u[e]])].append(int(lattice.edge_qubit[e]))
    order = sorted(legs, key=lambda lab: min(legs[lab]))
    edge_labels = np.full(lattice.edge_count, -1, dtype=np.int64)
    edge_labels[interior] = labels[lattice.u[interior]]
    clusters, members, final_legs = [], [], []
    for lab in order:
        clusters.append(tuple(int(e) for e in np.flatnonzero(interior & (edge_labels == lab))))
        members.append(tuple(int(g) + 1 for g in np.flatnonzero(labels == lab)))
        final_legs.append(tuple(sorted(legs[lab])))
    return ClusterReport(tuple(clusters), tuple(members), tuple(final_legs))


def effective_gate_count(M: MeasurementConfiguration) -> int:
    """Gates inside final-time clusters; the output depends on no other gate."""
    return sum(len(g) for g in final_time_clusters(M).gates)


def origin_cluster_size(lattice: BondLattice, vertex: int) -> int:
    """Open edges in the cluster containing `vertex`."""
    labels = _open_components(lattice)
    return int(np.count_nonzero(lattice.open & (labels[lattice.u] == labels[vertex])))


def cluster_union_bound(decay_rate: float, m: int, eps: float) -> float:
    """Size k with P(any of m clusters >= k) <= eps, given exp(-decay_rate k) tails."""
    if decay_rate <= 0 or not 0 < eps < 1 or m < 1:
        raise ConfigurationError("need decay_rate > 0, 0 < eps < 1 and m >= 1")
    return math.log(m / eps) / decay_rate


# ----- Monte Carlo -----
LatticeFamily = Callable[[float, StreamKey], BondLattice]
LatticeEvent = Callable[[BondLattice], bool]


def square_family(L: int) -> LatticeFamily:
    return partial(rectangular_lattice, L, L)


def rectangle_family(a: int, b: int) -> LatticeFamily:
    return partial(rectangular_lattice, a, b)


def tilted_family(n: int, t: int) -> LatticeFamily:
    return partial(tilted_lattice, n, t)


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> Tuple[float, float]:
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    phat = successes / trials
    denom = 1.0 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _trial(event: LatticeEvent, family: LatticeFamily, q: float, stream: StreamKey, index: int) -> bool:
    return bool(event(family(q, stream.child(Purpose.MONTE_CARLO, index))))


def mc_estimate(
    event: LatticeEvent,
    family: LatticeFamily,
    q: float,
    trials: int,
    stream: StreamKey,
    *,
    workers: int = 1,
) -> McEstimate:
    """Event probability over `trials` lattices, each from its own derived stream."""
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    job = partial(_trial, event, family, q, stream)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, range(trials), chunksize=max(1, trials // (4 * workers))))
    else:
        outcomes = [job(i) for i in range(trials)]
    successes = int(sum(outcomes))
    lo, hi = wilson_interval(successes, trials)
    return McEstimate(successes / trials, lo, hi, trials, successes)


def crossing_point(qs: Sequence[float], probabilities: Sequence[float], level: float = 0.5) -> Optional[float]:
    """Linear interpolation of the first q where the curve crosses `level`."""
    for (q0, p0), (q1, p1) in zip(zip(qs, probabilities), zip(qs[1:], probabilities[1:])):
        if (p0 - level) * (p1 - level) <= 0 and p0 != p1:
            return q0 + (level - p0) * (q1 - q0) / (p1 - p0)
    return None


def fkg_check(L: int, q: float, trials: int, stream: StreamKey) -> dict:
    """P(A and B) >= P(A)P(B) for crossings of the top and bottom halves of an L-box."""
    half = L // 2
    hits = np.zeros((trials, 2), dtype=bool)
    for i in range(trials):
        lattice = rectangular_lattice(L, L, q, stream.child(Purpose.MONTE_CARLO, i))
        hits[i, 0] = left_right_crossing(subwindow(lattice, (0, L), (half, L)))
        hits[i, 1] = left_right_crossing(subwindow(lattice, (0, L), (0, half)))
    pa, pb = hits[:, 0].mean(), hits[:, 1].mean()
    pab = (hits[:, 0] & hits[:, 1]).mean()
    sigma = math.sqrt((pab * (1 - pab) + pb * pb * pa * (1 - pa) + pa * pa * pb * (1 - pb)) / trials)
    return {"p_a": float(pa), "p_b": float(pb), "p_ab": float(pab), "sigma": sigma, "passed": pab >= pa * pb - 3 * sigma}


def aspect_ratio_crossing(L: int, T: float, q: float, stream: StreamKey) -> bool:
    """Crossing of the long direction of a (T*L) x L box."""
    return left_right_crossing(rectangular_lattice(int(round(T * L)), L, q, stream))


def aspect_ratio_bounds(tau: float, T: int = 2) -> dict:
    """Lower bounds on long-box crossings given the square-crossing probability tau."""
    arm = (1.0 - math.sqrt(max(1.0 - tau, 0.0))) ** 3
    return {
        "three_halves": arm,
        "two": tau * arm,
        "large": tau ** (2 * T - 3) * arm ** (T - 1),
    }


def aspect_ratio_check(L: int, T: int, q: float, trials: int, stream: StreamKey) -> dict:
    square = mc_estimate(left_right_crossing, square_family(L), q, trials, stream.child(1))
    rect = mc_estimate(left_right_crossing, rectangle_family(T * L, L), q, trials, stream.child(2))
    bound = aspect_ratio_bounds(square.estimate, T)["large"]
    return {
        "tau": square.estimate,
        "p_T": rect.estimate,
        "bound": bound,
        "sigma": rect.sigma,
        "passed": rect.estimate >= bound - 3 * rect.sigma,
    }


def cluster_tail_fit(q: float, L: int, ks: Sequence[int], trials: int, stream: StreamKey) -> dict:
    """Survival P(|C(origin)| >= k) and a log-linear fit over k."""
    origin = (L // 2) * (L + 1) + L // 2
    sizes = np.array(
        [
            origin_cluster_size(rectangular_lattice(L, L, q, stream.child(Purpose.MONTE_CARLO, i)), origin)
            for i in range(trials)
        ]
    )
    ks = np.asarray(ks)
    survival = np.array([(sizes >= k).mean() for k in ks])
    usable = survival > 0
    if usable.sum() < 2:
        return {"ks": ks.tolist(), "survival": survival.tolist(), "slope": float("nan"), "r_squared": float("nan")}
    fit = stats.linregress(ks[usable], np.log(survival[usable]))
    return {
        "ks": ks.tolist(),
        "survival": survival.tolist(),
        "slope": float(fit.slope),
        "r_squared": float(fit.rvalue**2),
    }


# ----- Dumps -----
def dump_lattice(lattice: BondLattice, path: str | Path) -> Tuple[Path, Path]:
    """Edge list CSV (u, v, open) and a JSON boundary label file beside it."""
    path = Path(path)
    labels = path.with_suffix(".boundary.json")
    try:
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["u", "v", "open"])
            for a, b, o in zip(lattice.u.tolist(), lattice.v.tolist(), lattice.open.tolist()):
                writer.writerow([a, b, int(o)])
        body = {
            "provenance": lattice.provenance,
            "shape": list(lattice.shape),
            "left": lattice.left.tolist(),
            "right": lattice.right.tolist(),
            "top": lattice.top.tolist(),
            "bottom": lattice.bottom.tolist(),
        }
        labels.write_text(json.dumps(body, indent=2), encoding="utf-8")
    except OSError as e:
        raise PersistError(str(path), f"could not write lattice dump: {e}") from e
    return path, labels
