"""Directed multigraph, latency functions, OD demands and routes.

Routes are sequences of edge ids.  Two parallel edges between the same pair
of nodes give two different routes, which a list of vertices could not tell
apart.  ``RouteSet.theta`` is the 0/1 edge-by-route incidence matrix that
maps route flows to edge flows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoRouteForOD, PreconditionError, RouteExplosion

EXACT_EDGE_LIMIT = 12


@dataclass(frozen=True)
class LatencyFn:
    """Travel time ``a + b * y**k`` on an edge carrying flow ``y``."""

    a: float = 0.0
    b: float = 0.0
    k: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.k <= 0:
            raise PreconditionError(f"latency needs a, b >= 0 and k > 0, got {self}")

    def __call__(self, y):
        return self.a + self.b * np.power(y, self.k)

    def integral(self, y):
        return self.a * y + self.b * np.power(y, self.k + 1) / (self.k + 1)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    latency: LatencyFn


@dataclass(frozen=True)
class ODPair:
    origin: str
    destination: str
    demand: float


class Network:
    def __init__(self, nodes, edges, od_pairs):
        self.nodes = list(nodes)
        self.edges = list(edges)
        self.od_pairs = list(od_pairs)
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise PreconditionError("duplicate node ids")
        self.edge_index = {}
        for i, e in enumerate(self.edges):
            if e.id in self.edge_index:
                raise PreconditionError(f"duplicate edge id {e.id!r}")
            if e.tail not in node_set or e.head not in node_set:
                raise PreconditionError(f"edge {e.id!r} has an unknown endpoint")
            self.edge_index[e.id] = i
        for w in self.od_pairs:
            if w.origin not in node_set or w.destination not in node_set:
                raise PreconditionError(f"OD pair {w} has an unknown endpoint")
            if w.demand < 0:
                raise PreconditionError(f"OD pair {w} has negative demand")
        self._a = np.array([e.latency.a for e in self.edges], dtype=float)
        self._b = np.array([e.latency.b for e in self.edges], dtype=float)
        self._k = np.array([e.latency.k for e in self.edges], dtype=float)

    def __repr__(self):
        return (f"Network(nodes={len(self.nodes)}, edges={len(self.edges)}, "
                f"od_pairs={len(self.od_pairs)})")

    @property
    def edge_ids(self):
        return [e.id for e in self.edges]

    @property
    def demands(self):
        return np.array([w.demand for w in self.od_pairs], dtype=float)

    def latencies(self, y):
        y = np.asarray(y, dtype=float)
        return self._a + self._b * np.power(y, self._k)

    def latency_integrals(self, y):
        y = np.asarray(y, dtype=float)
        return self._a * y + self._b * np.power(y, self._k + 1) / (self._k + 1)

    def strictly_increasing(self):
        return bool(np.all(self._b > 0))

    def without_edge(self, edge_id):
        return Network(self.nodes, [e for e in self.edges if e.id != edge_id], self.od_pairs)

    def with_demands(self, demands):
        pairs = [ODPair(w.origin, w.destination, float(d)) for w, d in zip(self.od_pairs, demands)]
        return Network(self.nodes, self.edges, pairs)


@dataclass(frozen=True)
class Route:
    id: int
    od: int
    edges: tuple

    @property
    def label(self):
        return "-".join(self.edges)


class RouteSet:
    """Routes of a network plus the edge-route incidence matrix."""

    def __init__(self, net: Network, routes):
        self.routes = list(routes)
        n_e, n_p = len(net.edges), len(self.routes)
        theta = np.zeros((n_e, n_p))
        for r in self.routes:
            _check_route(net, r)
            for eid in r.edges:
                theta[net.edge_index[eid], r.id] = 1.0
        self.theta = theta
        self.od_of = np.array([r.od for r in self.routes], dtype=int)
        self.od_routes = [np.flatnonzero(self.od_of == w) for w in range(len(net.od_pairs))]
        for w, idx in enumerate(self.od_routes):
            if idx.size == 0:
                raise NoRouteForOD(f"OD pair {w} ({net.od_pairs[w].origin}->"
                                   f"{net.od_pairs[w].destination}) has no route")
        self.demand = net.demands

    def __len__(self):
        return len(self.routes)

    def __repr__(self):
        return f"RouteSet({[r.label for r in self.routes]})"

    @property
    def labels(self):
        return [r.label for r in self.routes]


def _check_route(net, r):
    if not r.edges:
        raise PreconditionError(f"route {r.id} is empty")
    if len(set(r.edges)) != len(r.edges):
        raise PreconditionError(f"route {r.id} repeats an edge")
    if not 0 <= r.od < len(net.od_pairs):
        raise PreconditionError(f"route {r.id} refers to unknown OD index {r.od}")
    w = net.od_pairs[r.od]
    at = w.origin
    for eid in r.edges:
        if eid not in net.edge_index:
            raise PreconditionError(f"route {r.id} uses unknown edge {eid!r}")
        e = net.edges[net.edge_index[eid]]
        if e.tail != at:
            raise PreconditionError(f"route {r.id} is not connected at edge {eid!r}")
        at = e.head
    if at != w.destination:
        raise PreconditionError(f"route {r.id} does not end at {w.destination!r}")


def enumerate_routes(net: Network, max_routes_per_od: int = 10_000) -> RouteSet:
    """All simple directed paths of every OD pair, as edge sequences.

    Paths come out ordered lexicographically by the position of their edges
    in the network's edge list.  The cap only applies to networks with more
    than ``EXACT_EDGE_LIMIT`` edges, and exceeding it is an error, never a
    silent truncation.
    """
    out_edges = {v: [] for v in net.nodes}
    for e in net.edges:
        out_edges[e.tail].append(e)
    cap = None if len(net.edges) <= EXACT_EDGE_LIMIT else max_routes_per_od

    routes = []
    for w_idx, w in enumerate(net.od_pairs):
        found = []

        def dfs(node, visited, path):
            if node == w.destination:
                found.append(tuple(path))
                if cap is not None and len(found) > cap:
                    raise RouteExplosion(
                        f"OD pair {w_idx} has more than {cap} routes; supply explicit routes")
                return
            for e in out_edges[node]:
                if e.head in visited:
                    continue
                visited.add(e.head)
                path.append(e.id)
                dfs(e.head, visited, path)
                path.pop()
                visited.discard(e.head)

        dfs(w.origin, {w.origin}, [])
        if not found:
            raise NoRouteForOD(f"OD pair {w_idx} ({w.origin}->{w.destination}) has no route")
        found.sort(key=lambda p: [net.edge_index[e] for e in p])
        for p in found:
            routes.append(Route(len(routes), w_idx, p))
    return RouteSet(net, routes)


def explicit_routes(net: Network, specs) -> RouteSet:
    """Route set from ``(od index, [edge ids])`` pairs, in the given order."""
    return RouteSet(net, [Route(i, int(od), tuple(edges)) for i, (od, edges) in enumerate(specs)])


def edge_flows(rs: RouteSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (len(rs),):
        raise DimensionMismatch(f"expected {len(rs)} route flows, got shape {x.shape}")
    return rs.theta @ x


def route_costs(net: Network, rs: RouteSet, x) -> np.ndarray:
    """Route travel times: sum of edge latencies evaluated at ``theta @ x``."""
    y = edge_flows(rs, x)
    return rs.theta.T @ net.latencies(y)


def braess_network(with_link: bool = True, demand: float = 6.0) -> Network:
    """Classical Braess instance: 83 minutes per route without 2->3, 92 with it."""
    edges = [
        Edge("12", "1", "2", LatencyFn(0.0, 10.0, 1.0)),
        Edge("24", "2", "4", LatencyFn(50.0, 1.0, 1.0)),
        Edge("13", "1", "3", LatencyFn(50.0, 1.0, 1.0)),
        Edge("34", "3", "4", LatencyFn(0.0, 10.0, 1.0)),
    ]
    if with_link:
        edges.append(Edge("23", "2", "3", LatencyFn(10.0, 1.0, 1.0)))
    return Network(["1", "2", "3", "4"], edges, [ODPair("1", "4", demand)])
