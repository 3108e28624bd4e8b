import json

import numpy as np
import pytest

from wardrop_lab.cli import main
from wardrop_lab.errors import ParseError
from wardrop_lab.formats import dumps, read_network_file, read_zone_file, rounded


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_equilibrium_braess(capsys, fixtures):
    code, out, _ = run_cli(capsys, "equilibrium", fixtures / "braess_with_link.net")
    assert code == 0
    res = json.loads(out)
    assert all(abs(v - 92) <= 1e-4 for v in res["costs"].values())
    assert res["routes"] == {"0": ["12", "24"], "1": ["12", "23", "34"], "2": ["13", "34"]}


def test_od_balance_uniform(capsys, fixtures):
    code, out, _ = run_cli(capsys, "od-balance", fixtures / "uniform.zones")
    assert code == 0
    np.testing.assert_allclose(json.loads(out)["X"], np.ones((2, 2)), rtol=1e-11)


def test_empty_network_is_parse_error(capsys, fixtures):
    code, _, err = run_cli(capsys, "equilibrium", fixtures / "empty.net")
    assert code == 2
    assert json.loads(err)["error"] == "ParseError"


def test_missing_file(capsys, tmp_path):
    code, _, err = run_cli(capsys, "od-balance", tmp_path / "nope.zones")
    assert code == 2


def test_infeasible_zone_file_is_precondition(capsys, tmp_path):
    p = tmp_path / "bad.zones"
    p.write_text("zones 2\nzone 1 1 2\nzone 2 1 1\ncostrow 1 0 0\ncostrow 2 0 0\n")
    code, _, err = run_cli(capsys, "od-balance", p)
    assert code == 4
    assert json.loads(err)["error"] == "InfeasibleMarginals"


def test_non_convergence_exit_code(capsys, fixtures):
    code, _, err = run_cli(capsys, "od-balance", fixtures / "ten_zone.zones", "--tol", "1e-16",
                           "--max-iter", "2")
    assert code == 3


@pytest.mark.parametrize("text,line", [
    ("zones 2\nzone 1 1 1\nzone 3 1 1\n", 3),
    ("zones 1\nzone 1 x 1\n", 2),
    ("zones 1\nzone 1 1 1\ncostrow 1 0 0\n", 3),
    ("zones 1\nzone 1 1 1\ncostrow 1 0\nchain pL 1 seed\n", 4),
    ("# only a comment\n", 0),
    ("zones 1\nwhat 1\n", 2),
])
def test_zone_parse_errors(tmp_path, text, line):
    p = tmp_path / "z.zones"
    p.write_text(text)
    with pytest.raises(ParseError) as info:
        read_zone_file(p)
    assert info.value.line == line


def test_zone_file_comments_and_chain(tmp_path):
    p = tmp_path / "z.zones"
    p.write_text("zones 1  # one zone\nzone 1 2.5e0 2.5\ncostrow 1 0.5\nchain pL 2 seed 9 steps 10\n")
    zf = read_zone_file(p)
    assert zf.L.tolist() == [2.5] and zf.c.tolist() == [[0.5]]
    assert zf.chain == {"pL": 2.0, "seed": 9, "steps": 10}


@pytest.mark.parametrize("text,line", [
    ("node 1\nedge a 1 2 0 1 1\n", 2),
    ("node 1\nnode 1\n", 2),
    ("node 1\nnode 2\nedge a 1 2 0 1\n", 3),
    ("node 1\nnode 2\nedge a 1 2 -1 1 1\n", 3),
    ("node 1\nnode 2\nedge a 1 2 0 1 1\nod 1 2 -3\n", 4),
    ("node 1\nnode 2\nedge a 1 2 0 1 1\nod 1 2 1\nroute 2 a\n", 5),
    ("node 1\nnode 2\nedge a 1 2 0 1 1\nod 1 2 1\ndynamics T 1 schedule warm 1\n", 5),
    ("node 1\nnode 2\nedge a 1 2 0 1 1\nod 1 2 nan\n", 4),
])
def test_network_parse_errors(tmp_path, text, line):
    p = tmp_path / "n.net"
    p.write_text(text)
    with pytest.raises(ParseError) as info:
        read_network_file(p)
    assert info.value.line == line


def test_network_file_with_routes_and_dynamics(fixtures):
    nf = read_network_file(fixtures / "parallel.net")
    assert nf.route_set().labels == ["a", "b"]
    nf = read_network_file(fixtures / "nonuniqueness.net")
    assert nf.dynamics == {"T": 0.1, "schedule": ("harmonic", 1.0), "seed": 11,
                           "steps": 100_000, "stride": 10_000, "unit": 0.01}
    assert len(nf.route_set()) == 4


def test_twelve_significant_digits():
    assert rounded(1 / 3) == 0.333333333333
    assert rounded({"a": [np.float64(2 / 3), np.int64(4)], "b": True}) == \
        {"a": [0.666666666667, 4], "b": True}
    assert json.loads(dumps({"x": 123456.7890123456789}))["x"] == 123456.789012


def test_dynamics_csv_and_determinism(capsys, fixtures, tmp_path):
    args = ["dynamics", fixtures / "braess_with_link.net", "--steps", "2000", "--stride", "500",
            "--unit", "0.1", "--seed", "3"]
    outs = []
    for i in range(2):
        csv_path = tmp_path / f"t{i}.csv"
        code, out, _ = run_cli(capsys, *args, "--csv", csv_path)
        assert code == 0
        outs.append((out, csv_path.read_bytes()))
    assert outs[0] == outs[1]
    lines = outs[0][1].decode().splitlines()
    assert lines[0] == "n,route_id,count,psi,gap"
    assert len(lines) == 1 + 3 * 5


def test_dynamics_replicas(capsys, fixtures):
    code, out, _ = run_cli(capsys, "dynamics", fixtures / "braess_with_link.net", "--steps",
                           "500", "--unit", "1", "--replicas", "3")
    res = json.loads(out)
    assert code == 0 and len(res["replicas"]) == 3
    assert all(sum(r["final_counts"]) == 6 for r in res["replicas"])


def test_exchange_sim(capsys, fixtures, tmp_path):
    csv_path = tmp_path / "chain.csv"
    code, out, _ = run_cli(capsys, "exchange-sim", fixtures / "uniform.zones", "--csv", csv_path,
                           "--stride", "10000")
    res = json.loads(out)
    assert code == 0
    assert res["detailed_balance_violation"] <= 1e-10
    assert res["tv_to_stationary"] <= 0.02
    assert res["concentration"]["inequality"]["passed"]
    assert csv_path.read_text().splitlines()[0] == "step,i,j,count"


def test_exchange_sim_needs_integers(capsys, tmp_path):
    p = tmp_path / "f.zones"
    p.write_text("zones 1\nzone 1 1.5 1.5\ncostrow 1 0\n")
    code, _, _ = run_cli(capsys, "exchange-sim", p, "--steps", "10")
    assert code == 4


def test_averaging_command(capsys, fixtures):
    code, out, _ = run_cli(capsys, "averaging", fixtures / "parallel.net", "--horizon", "100",
                           "--replicas", "100", "--omega", "0", "1", "5")
    res = json.loads(out)
    assert code == 0 and res["omega"] == [0, 1, 5] and res["replicas"] == 100
    assert res["nonincreasing"]


def test_compare_projection_command(capsys, fixtures, tmp_path):
    out_path = tmp_path / "cmp.json"
    code, table, _ = run_cli(capsys, "compare-projection", fixtures / "nonuniqueness.net",
                             "--steps", "3000", "-o", out_path)
    assert code == 0
    res = json.loads(out_path.read_text())
    np.testing.assert_allclose(res["projection"]["x"], 0.25, atol=1e-9)
    assert len(res["dynamics"]) == 5
    assert "entropy" in table.splitlines()[0]


def test_large_network_below_route_cap(capsys, tmp_path):
    lines = [f"node {i}" for i in range(10)]
    for i in range(9):
        lines += [f"edge u{i} {i} {i + 1} 1 0 1", f"edge l{i} {i} {i + 1} 1 0 1"]
    lines.append("od 0 9 1")
    p = tmp_path / "ladder.net"
    p.write_text("\n".join(lines) + "\n")
    # 18 edges, 512 routes: above the exact-enumeration regime the default cap is 10000
    code, out, _ = run_cli(capsys, "equilibrium", p)
    assert code == 0
