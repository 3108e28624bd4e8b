"""Beckmann potential, Wardrop equilibria and the entropy path decomposition.

The potential is ``Psi(x) = sum_e int_0^{y_e} tau_e(z) dz`` with ``y = theta @ x``.
Its gradient with respect to route flows is the vector of route costs, and
its minimisers over the feasible set are exactly the Wardrop equilibria.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, linprog

from .errors import InfeasibleFlow, NonConvergence, PreconditionError, Unattainable
from .network import (Edge, LatencyFn, Network, ODPair, RouteSet, edge_flows,
                      enumerate_routes, route_costs)

FEASIBILITY_RTOL = 1e-9


@dataclass
class EquilibriumResult:
    x: np.ndarray
    y: np.ndarray
    psi: float
    gap: float
    iterations: int
    costs: np.ndarray

    def to_dict(self, net: Network, rs: RouteSet):
        return {
            "x": {str(r.id): float(v) for r, v in zip(rs.routes, self.x)},
            "routes": {str(r.id): list(r.edges) for r in rs.routes},
            "costs": {str(r.id): float(v) for r, v in zip(rs.routes, self.costs)},
            "y": {eid: float(v) for eid, v in zip(net.edge_ids, self.y)},
            "psi": float(self.psi),
            "gap": float(self.gap),
            "iterations": int(self.iterations),
        }


def potential(net: Network, rs: RouteSet, x) -> float:
    y = edge_flows(rs, x)
    return float(np.sum(net.latency_integrals(y)))


def check_feasible(rs: RouteSet, x, rtol=FEASIBILITY_RTOL):
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.max(rs.demand, initial=0.0)))
    if np.any(x < -rtol * scale):
        raise InfeasibleFlow(f"negative route flow {x.min():.3g}")
    for w, idx in enumerate(rs.od_routes):
        total = x[idx].sum()
        if abs(total - rs.demand[w]) > rtol * max(rs.demand[w], 1.0):
            raise InfeasibleFlow(
                f"OD {w}: route flows sum to {total:.12g}, demand is {rs.demand[w]:.12g}")


def wardrop_gap(net: Network, rs: RouteSet, x, check=True) -> float:
    """``sum_w sum_{p in P_w} x_p (G_p - min_q G_q)``; zero exactly at equilibrium."""
    x = np.asarray(x, dtype=float)
    if check:
        check_feasible(rs, x)
    G = route_costs(net, rs, x)
    gap = 0.0
    for idx in rs.od_routes:
        gap += float(np.dot(x[idx], G[idx] - G[idx].min()))
    return max(gap, 0.0)


def all_or_nothing(rs: RouteSet, G) -> np.ndarray:
    """Each OD's whole demand on its cheapest route (lowest id on ties)."""
    target = np.zeros(len(rs))
    for w, idx in enumerate(rs.od_routes):
        target[idx[int(np.argmin(G[idx]))]] = rs.demand[w]
    return target


def _line_search(net, rs, x, d, t_max):
    """Minimise ``Psi(x + t d)`` over ``[0, t_max]`` via the monotone derivative."""
    y = edge_flows(rs, x)
    dy = rs.theta @ d

    def slope(t):
        return float(np.dot(net.latencies(np.maximum(y + t * dy, 0.0)), dy))

    s0 = slope(0.0)
    if s0 >= 0:
        return 0.0
    s1 = slope(t_max)
    if s1 <= 0:
        return t_max
    return brentq(slope, 0.0, t_max, xtol=1e-15 * max(1.0, t_max), rtol=4 * np.finfo(float).eps)


def solve_equilibrium(net: Network, rs: RouteSet, tol: float = 1e-10, max_iter: int = 100_000,
                      x0=None, method: str = "pairwise") -> EquilibriumResult:
    """Deterministic conditional-gradient solver for the Beckmann program.

    ``method="pairwise"`` moves flow, OD by OD, from the costliest used route
    to the cheapest one with an exact line search; this variant converges
    linearly on the route polytope.  ``method="frank-wolfe"`` uses the classic
    all-or-nothing direction, also with exact line search.  The start is the
    all-or-nothing assignment at zero flow unless ``x0`` is given.
    """
    if method not in ("pairwise", "frank-wolfe"):
        raise PreconditionError(f"unknown method {method!r}")
    if x0 is None:
        x = all_or_nothing(rs, route_costs(net, rs, np.zeros(len(rs))))
    else:
        x = np.array(x0, dtype=float)
        check_feasible(rs, x)
    gap = wardrop_gap(net, rs, x, check=False)
    it = 0
    while gap > tol and it < max_iter:
        it += 1
        if method == "pairwise":
            for idx in rs.od_routes:
                G = route_costs(net, rs, x)
                g = G[idx]
                s = idx[int(np.argmin(g))]
                used = idx[x[idx] > 0]
                a = used[int(np.argmax(G[used]))]
                if G[a] - G[s] <= 0:
                    continue
                d = np.zeros(len(rs))
                d[s], d[a] = 1.0, -1.0
                t_max = x[a]
                t = _line_search(net, rs, x, d, t_max)
                x[s] += t
                x[a] = 0.0 if t >= t_max else x[a] - t
        else:
            target = all_or_nothing(rs, route_costs(net, rs, x))
            d = target - x
            t = _line_search(net, rs, x, d, 1.0)
            x = x + t * d
            x = np.maximum(x, 0.0)
        gap = wardrop_gap(net, rs, x, check=False)
    if gap > tol:
        raise NonConvergence("equilibrium solver hit max_iter", gap, it)
    y = edge_flows(rs, x)
    return EquilibriumResult(x, y, potential(net, rs, x), gap, it, route_costs(net, rs, x))


def _constraint_matrix(rs: RouteSet):
    D = np.zeros((len(rs.od_routes), len(rs)))
    for w, idx in enumerate(rs.od_routes):
        D[w, idx] = 1.0
    return np.vstack([rs.theta, D])


def route_support(rs: RouteSet, y_star, demand=None, tol=1e-10):
    """Routes that can carry positive flow in some decomposition of ``y_star``.

    Raises :class:`Unattainable` when no feasible decomposition exists.
    """
    A = _constraint_matrix(rs)
    b = np.concatenate([y_star, rs.demand if demand is None else demand])
    n = len(rs)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    feas = linprog(np.zeros(n), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if feas.status != 0:
        raise Unattainable("edge flows cannot be decomposed into feasible route flows")
    support = np.zeros(n, dtype=bool)
    for p in range(n):
        cost = np.zeros(n)
        cost[p] = -1.0
        res = linprog(cost, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
        support[p] = res.status == 0 and -res.fun > tol * scale
    return support


def entropy_path_projection(net: Network, rs: RouteSet, y_star, tol: float = 1e-10,
                            max_iter: int = 200) -> np.ndarray:
    """Entropy-maximal route decomposition of the edge flows ``y_star``.

    Minimises ``sum_w sum_{p in P_w} x_p ln(x_p / |P_w|) - x_p`` subject to the
    demands and ``theta @ x = y_star``.  The solution has the product form
    ``x_p = |P_w| exp(-mu_w - sum_{e in p} nu_e)``; the multipliers are found
    by damped Newton steps on the (convex) dual, restricted to routes that can
    carry flow at all.
    """
    y_star = np.asarray(y_star, dtype=float)
    if y_star.shape != (len(net.edges),):
        raise PreconditionError(f"expected {len(net.edges)} edge flows")
    support = route_support(rs, y_star)
    x = np.zeros(len(rs))
    if not support.any():
        return x
    A_full = _constraint_matrix(rs)
    b_full = np.concatenate([y_star, rs.demand])
    A = A_full[:, support]
    active_rows = np.any(A != 0, axis=1)
    A, b = A[active_rows], b_full[active_rows]
    prior = np.array([len(rs.od_routes[rs.od_of[p]]) for p in np.flatnonzero(support)], float)
    log_prior = np.log(prior)

    def primal(lam):
        return np.exp(log_prior - A.T @ lam)

    def dual(lam):
        return float(primal(lam).sum() + b @ lam)

    lam = np.zeros(A.shape[0])
    scale = max(1.0, float(np.abs(b).max()))
    residual = np.inf
    for _ in range(max_iter):
        xs = primal(lam)
        grad = b - A @ xs
        residual = float(np.abs(grad).max())
        if residual <= tol * scale:
            x[support] = xs
            return x
        H = (A * xs) @ A.T
        step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        h0, slope = dual(lam), float(grad @ step)
        t = 1.0
        while dual(lam + t * step) > h0 + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        lam = lam + t * step
    raise NonConvergence("entropy projection did not converge", residual, max_iter)


@dataclass(frozen=True)
class EquilibriumSegment:
    """Route flows ``(t, d/2 - t, d/2 - t, t)`` for ``t`` in ``[0, d/2]``."""

    demand: float

    @property
    def lower(self):
        return 0.0

    @property
    def upper(self):
        return self.demand / 2

    def flows(self, t):
        if not self.lower - 1e-15 <= t <= self.upper + 1e-15:
            raise PreconditionError(f"segment parameter {t} outside [0, {self.upper}]")
        h = self.demand / 2
        return np.array([t, h - t, h - t, t])


def build_nonuniqueness_instance(demand: float = 1.0):
    """Network whose Wardrop equilibria form a segment of route flows.

    One OD pair 1->4 runs over a shared edge 1->2, then one of two parallel
    edges 2->3 (``m1``, ``m2``), then one of two parallel edges 3->4 (``n1``,
    ``n2``).  All latencies are ``1 + y``.  The four routes pair the two
    choices, so ``(t, d/2 - t, d/2 - t, t)`` loads every parallel edge with
    ``d/2`` whatever ``t`` is: one edge-flow vector, a whole segment of
    route-flow vectors.
    """
    lat = LatencyFn(1.0, 1.0, 1.0)
    edges = [
        Edge("12", "1", "2", lat),
        Edge("m1", "2", "3", lat),
        Edge("m2", "2", "3", lat),
        Edge("n1", "3", "4", lat),
        Edge("n2", "3", "4", lat),
    ]
    net = Network(["1", "2", "3", "4"], edges, [ODPair("1", "4", float(demand))])
    rs = enumerate_routes(net)
    return net, rs, EquilibriumSegment(float(demand))
