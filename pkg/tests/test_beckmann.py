import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from wardrop_lab.beckmann import (build_nonuniqueness_instance, entropy_path_projection,
                                  potential, route_support, solve_equilibrium, wardrop_gap)
from wardrop_lab.errors import InfeasibleFlow, NonConvergence, PreconditionError, Unattainable
from wardrop_lab.network import (Edge, LatencyFn, Network, ODPair, braess_network, edge_flows,
                                 enumerate_routes, route_costs)


def braess(with_link=True):
    net = braess_network(with_link)
    return net, enumerate_routes(net)


def random_feasible(rs, rng):
    x = np.zeros(len(rs))
    for w, idx in enumerate(rs.od_routes):
        x[idx] = rng.dirichlet(np.ones(idx.size)) * rs.demand[w]
    return x


def test_potential_examples():
    net = Network(["1", "2"], [Edge("e", "1", "2", LatencyFn(0, 1, 1))], [ODPair("1", "2", 4)])
    rs = enumerate_routes(net)
    assert potential(net, rs, [4.0]) == pytest.approx(8.0)
    assert potential(net, rs, [0.0]) == 0.0
    net1, rs1 = braess(False)
    # 12 and 34: 10*3^2/2 = 45 each; 24 and 13: 3^2/2 + 50*3 = 154.5 each
    assert potential(net1, rs1, [3, 3]) == pytest.approx(399.0)
    net2, rs2 = braess(True)
    # y = (4, 2, 2, 4, 2): 80 + 102 + 102 + 80 + (2 + 20)
    assert potential(net2, rs2, [2, 2, 2]) == pytest.approx(386.0)


def test_gap_examples():
    net1, rs1 = braess(False)
    net2, rs2 = braess(True)
    assert wardrop_gap(net1, rs1, [3, 3]) == pytest.approx(0, abs=1e-12)
    assert wardrop_gap(net2, rs2, [2, 2, 2]) == pytest.approx(0, abs=1e-12)
    # at (6, 0, 0): G = (60+56, 60+16+10, 50+0) -> gap 6 * (116 - 50)
    assert wardrop_gap(net2, rs2, [6, 0, 0]) == pytest.approx(6 * 66)


def test_gap_rejects_infeasible():
    net, rs = braess()
    with pytest.raises(InfeasibleFlow):
        wardrop_gap(net, rs, [1, 1, 1])
    with pytest.raises(InfeasibleFlow):
        wardrop_gap(net, rs, [7, -1, 0])


@pytest.mark.parametrize("method,tol", [("pairwise", 1e-10), ("frank-wolfe", 1e-6)])
def test_braess_equilibria(method, tol):
    res1 = solve_equilibrium(*braess(False), tol=tol, method=method)
    np.testing.assert_allclose(res1.x, [3, 3], atol=1e-3)
    np.testing.assert_allclose(res1.costs, 83, atol=1e-4)
    res2 = solve_equilibrium(*braess(True), tol=tol, method=method)
    np.testing.assert_allclose(res2.costs, 92, atol=1e-4)
    assert res2.gap <= tol
    assert res2.costs.max() > res1.costs.max()


def test_braess_solution_is_potential_minimum():
    net, rs = braess()
    res = solve_equilibrium(net, rs)
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert potential(net, rs, random_feasible(rs, rng)) >= res.psi - 1e-9


def test_parallel_symmetry():
    lat = LatencyFn(0, 1, 1)
    net = Network(["1", "2"], [Edge("a", "1", "2", lat), Edge("b", "1", "2", lat)],
                  [ODPair("1", "2", 2)])
    res = solve_equilibrium(net, enumerate_routes(net))
    np.testing.assert_allclose(res.y, [1, 1], atol=1e-9)


def test_two_od_pairs():
    # two OD pairs share edge s; the equilibrium balances both
    lat = LatencyFn(1, 1, 1)
    edges = [Edge("s", "1", "3", lat), Edge("a", "1", "3", LatencyFn(2, 1, 2)),
             Edge("t", "2", "1", LatencyFn(0)), Edge("b", "2", "3", LatencyFn(4, 1, 1))]
    net = Network(["1", "2", "3"], edges, [ODPair("1", "3", 3), ODPair("2", "3", 2)])
    rs = enumerate_routes(net)
    res = solve_equilibrium(net, rs)
    assert res.gap <= 1e-10
    G = route_costs(net, rs, res.x)
    for idx in rs.od_routes:
        used = idx[res.x[idx] > 1e-9]
        np.testing.assert_allclose(G[used], G[idx].min(), atol=1e-6)


def test_variational_inequality_at_solution():
    net, rs = braess()
    res = solve_equilibrium(net, rs)
    G = route_costs(net, rs, res.x)
    rng = np.random.default_rng(1)
    for _ in range(100):
        assert G @ (random_feasible(rs, rng) - res.x) >= -1e-8


def test_edge_flows_unique_from_different_starts():
    lat = LatencyFn(1, 1, 1)
    edges = [Edge("12", "1", "2", lat), Edge("m1", "2", "3", lat), Edge("m2", "2", "3", lat),
             Edge("n1", "3", "4", lat), Edge("n2", "3", "4", lat)]
    net = Network(list("1234"), edges, [ODPair("1", "4", 1)])
    rs = enumerate_routes(net)
    r1 = solve_equilibrium(net, rs, x0=[1, 0, 0, 0])
    r2 = solve_equilibrium(net, rs, x0=[0, 1, 0, 0])
    assert np.max(np.abs(r1.y - r2.y)) <= 1e-5
    assert np.max(np.abs(r1.x - r2.x)) >= 0.4


def test_max_iter_raises():
    with pytest.raises(NonConvergence) as info:
        solve_equilibrium(*braess(), tol=1e-14, max_iter=1, method="frank-wolfe")
    assert info.value.residual > 0


def test_unknown_method():
    with pytest.raises(PreconditionError):
        solve_equilibrium(*braess(), method="newton")


def test_gradient_is_route_cost():
    net, rs = braess()
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = random_feasible(rs, rng)
        G = route_costs(net, rs, x)
        h = 1e-6
        fd = np.array([(potential(net, rs, x + h * e) - potential(net, rs, x - h * e)) / (2 * h)
                       for e in np.eye(len(rs))])
        np.testing.assert_allclose(fd, G, rtol=1e-5)


def test_nonuniqueness_segment():
    net, rs, seg = build_nonuniqueness_instance()
    ends = [seg.flows(0.0), seg.flows(0.25), seg.flows(0.5)]
    for x in ends:
        assert wardrop_gap(net, rs, x) <= 1e-10
    psis = [potential(net, rs, x) for x in ends]
    assert max(psis) - min(psis) <= 1e-12
    assert np.linalg.norm(ends[0] - ends[2]) > 0.1
    with pytest.raises(PreconditionError):
        seg.flows(0.6)


def test_nonuniqueness_is_not_strictly_monotone():
    net, rs, seg = build_nonuniqueness_instance()
    rng = np.random.default_rng(3)
    for _ in range(20):
        s, t = rng.uniform(0, 0.5, 2)
        x, xp = seg.flows(s), seg.flows(t)
        d = (route_costs(net, rs, x) - route_costs(net, rs, xp)) @ (x - xp)
        assert abs(d) <= 1e-12


def test_nonuniqueness_solver_lands_on_segment():
    net, rs, seg = build_nonuniqueness_instance()
    res = solve_equilibrium(net, rs)
    t = res.x[0]
    np.testing.assert_allclose(res.x, seg.flows(t), atol=1e-9)


def test_projection_picks_segment_midpoint():
    net, rs, seg = build_nonuniqueness_instance()
    y = edge_flows(rs, seg.flows(0.1))

    def objective(t):
        x = seg.flows(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(x > 0, x * np.log(x / 4) - x, 0.0)
        return terms.sum()

    best = minimize_scalar(objective, bounds=(0, 0.5), method="bounded",
                           options={"xatol": 1e-12}).x
    proj = entropy_path_projection(net, rs, y)
    np.testing.assert_allclose(proj, seg.flows(best), atol=1e-6)
    np.testing.assert_allclose(proj, 0.25, atol=1e-9)


def test_projection_with_invertible_theta():
    net, rs = braess(False)
    np.testing.assert_allclose(entropy_path_projection(net, rs, edge_flows(rs, [1.5, 4.5])),
                               [1.5, 4.5], atol=1e-9)


def test_projection_zero_demand():
    net, rs, _ = build_nonuniqueness_instance(demand=0.0)
    np.testing.assert_array_equal(entropy_path_projection(net, rs, np.zeros(5)), 0)


def test_projection_braess_keeps_edge_flows():
    net, rs = braess()
    y = edge_flows(rs, [1, 2, 3])
    x = entropy_path_projection(net, rs, y)
    np.testing.assert_allclose(edge_flows(rs, x), y, atol=1e-9)


def test_projection_support_and_unattainable():
    net, rs = braess()
    # edge 23 empty -> the middle route cannot be used
    support = route_support(rs, edge_flows(rs, [3, 0, 3]))
    assert support.tolist() == [True, False, True]
    with pytest.raises(Unattainable):
        entropy_path_projection(net, rs, np.array([6.0, 0, 0, 6.0, 0]))
    with pytest.raises(PreconditionError):
        entropy_path_projection(net, rs, np.zeros(3))


def test_result_serialisation():
    net, rs = braess()
    d = solve_equilibrium(net, rs).to_dict(net, rs)
    assert set(d) == {"x", "routes", "costs", "y", "psi", "gap", "iterations"}
    assert d["routes"]["1"] == ["12", "23", "34"]
