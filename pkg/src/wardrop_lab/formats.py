"""Text input formats and deterministic JSON/CSV output.

Zone file::

    zones <n>
    zone <i> <L_i> <W_i>            # n lines, i = 1..n
    costrow <i> <c_i1> ... <c_in>   # n lines
    chain pL <value> seed <u64> steps <count>   # optional

Network file::

    node <id>
    edge <id> <tail> <head> <a> <b> <k>         # latency a + b*y**k
    od <origin> <dest> <demand>
    route <od-index> <edge-id> ...              # optional, od-index 1-based
    dynamics T <real> schedule <harmonic g0 | constant g | sqrt alpha> seed <u64>
             steps <count> stride <count> [unit <flow per player>]   # optional

``#`` starts a comment anywhere on a line.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError
from .network import Edge, LatencyFn, Network, ODPair, enumerate_routes, explicit_routes

SIG_DIGITS = 12


def _lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc.strerror}") from None
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            yield no, body


def _real(path, no, tok):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(path, no, f"not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, no, f"non-finite number: {tok!r}")
    return v


def _int(path, no, tok):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, no, f"not an integer: {tok!r}") from None


def _keyvals(path, no, toks, spec):
    """Parse ``key value ...`` pairs; ``spec`` maps key -> number of values."""
    out = {}
    i = 0
    while i < len(toks):
        key = toks[i]
        if key not in spec:
            raise ParseError(path, no, f"unknown key {key!r}")
        k = spec[key]
        vals = toks[i + 1:i + 1 + k]
        if len(vals) != k:
            raise ParseError(path, no, f"key {key!r} needs {k} value(s)")
        out[key] = vals if k > 1 else vals[0]
        i += 1 + k
    return out


@dataclass
class ZoneFile:
    L: np.ndarray
    W: np.ndarray
    c: np.ndarray
    chain: dict | None = None


def read_zone_file(path) -> ZoneFile:
    n = None
    zones, rows = {}, {}
    chain = None
    seen = False
    for no, toks in _lines(path):
        seen = True
        kind = toks[0]
        if kind == "zones":
            if len(toks) != 2 or n is not None:
                raise ParseError(path, no, "expected a single 'zones <n>' header")
            n = _int(path, no, toks[1])
            if n < 1:
                raise ParseError(path, no, "zone count must be positive")
        elif kind == "zone":
            if n is None:
                raise ParseError(path, no, "'zone' before 'zones' header")
            if len(toks) != 4:
                raise ParseError(path, no, "expected 'zone <i> <L_i> <W_i>'")
            i = _int(path, no, toks[1])
            if not 1 <= i <= n or i in zones:
                raise ParseError(path, no, f"bad or repeated zone index {i}")
            zones[i] = (_real(path, no, toks[2]), _real(path, no, toks[3]))
        elif kind == "costrow":
            if n is None:
                raise ParseError(path, no, "'costrow' before 'zones' header")
            if len(toks) != n + 2:
                raise ParseError(path, no, f"expected 'costrow <i>' and {n} costs")
            i = _int(path, no, toks[1])
            if not 1 <= i <= n or i in rows:
                raise ParseError(path, no, f"bad or repeated cost row {i}")
            rows[i] = [_real(path, no, t) for t in toks[2:]]
        elif kind == "chain":
            kv = _keyvals(path, no, toks[1:], {"pL": 1, "seed": 1, "steps": 1})
            chain = {}
            if "pL" in kv:
                chain["pL"] = _real(path, no, kv["pL"])
            if "seed" in kv:
                chain["seed"] = _int(path, no, kv["seed"])
            if "steps" in kv:
                chain["steps"] = _int(path, no, kv["steps"])
        else:
            raise ParseError(path, no, f"unknown record {kind!r}")
    if not seen or n is None:
        raise ParseError(path, 0, "empty zone file")
    if len(zones) != n or len(rows) != n:
        raise ParseError(path, 0, f"expected {n} zone and {n} costrow lines")
    L = np.array([zones[i][0] for i in range(1, n + 1)])
    W = np.array([zones[i][1] for i in range(1, n + 1)])
    c = np.array([rows[i] for i in range(1, n + 1)])
    return ZoneFile(L, W, c, chain)


@dataclass
class NetworkFile:
    network: Network
    route_specs: list | None
    dynamics: dict | None

    def route_set(self, max_routes_per_od=10_000):
        if self.route_specs:
            return explicit_routes(self.network, self.route_specs)
        return enumerate_routes(self.network, max_routes_per_od)


def read_network_file(path) -> NetworkFile:
    nodes, edges, ods, routes = [], [], [], []
    dynamics = None
    node_set, edge_ids = set(), set()
    for no, toks in _lines(path):
        kind = toks[0]
        if kind == "node":
            if len(toks) != 2 or toks[1] in node_set:
                raise ParseError(path, no, "expected 'node <id>' with a new id")
            nodes.append(toks[1])
            node_set.add(toks[1])
        elif kind == "edge":
            if len(toks) != 7:
                raise ParseError(path, no, "expected 'edge <id> <tail> <head> <a> <b> <k>'")
            eid, tail, head = toks[1:4]
            if eid in edge_ids:
                raise ParseError(path, no, f"repeated edge id {eid!r}")
            if tail not in node_set or head not in node_set:
                raise ParseError(path, no, f"edge {eid!r} refers to an undeclared node")
            a, b, k = (_real(path, no, t) for t in toks[4:7])
            if a < 0 or b < 0 or k <= 0:
                raise ParseError(path, no, "latency needs a, b >= 0 and k > 0")
            edges.append(Edge(eid, tail, head, LatencyFn(a, b, k)))
            edge_ids.add(eid)
        elif kind == "od":
            if len(toks) != 4:
                raise ParseError(path, no, "expected 'od <origin> <dest> <demand>'")
            if toks[1] not in node_set or toks[2] not in node_set:
                raise ParseError(path, no, "OD pair refers to an undeclared node")
            d = _real(path, no, toks[3])
            if d < 0:
                raise ParseError(path, no, "demand must be nonnegative")
            ods.append(ODPair(toks[1], toks[2], d))
        elif kind == "route":
            if len(toks) < 3:
                raise ParseError(path, no, "expected 'route <od-index> <edge-id> ...'")
            w = _int(path, no, toks[1])
            if not 1 <= w <= len(ods):
                raise ParseError(path, no, f"route refers to unknown OD index {w}")
            routes.append((w - 1, toks[2:]))
        elif kind == "dynamics":
            dynamics = _parse_dynamics(path, no, toks[1:])
        else:
            raise ParseError(path, no, f"unknown record {kind!r}")
    if not nodes or not edges or not ods:
        raise ParseError(path, 0, "network file needs nodes, edges and OD pairs")
    return NetworkFile(Network(nodes, edges, ods), routes or None, dynamics)


def _parse_dynamics(path, no, toks):
    out = {}
    i = 0
    while i < len(toks):
        key = toks[i]
        if key == "schedule":
            kind = toks[i + 1] if i + 1 < len(toks) else None
            if kind not in ("harmonic", "constant", "sqrt") or i + 2 >= len(toks):
                raise ParseError(path, no, "schedule must be 'harmonic g0', 'constant g' or 'sqrt alpha'")
            out["schedule"] = (kind, _real(path, no, toks[i + 2]))
            i += 3
        elif key in ("T", "unit"):
            if i + 1 >= len(toks):
                raise ParseError(path, no, f"{key} needs a value")
            out[key] = _real(path, no, toks[i + 1])
            i += 2
        elif key in ("seed", "steps", "stride"):
            if i + 1 >= len(toks):
                raise ParseError(path, no, f"{key} needs a value")
            out[key] = _int(path, no, toks[i + 1])
            i += 2
        else:
            raise ParseError(path, no, f"unknown dynamics key {key!r}")
    return out


def fmt(v):
    return float(f"{v:.{SIG_DIGITS}g}")


def rounded(obj):
    """Copy of ``obj`` with every float cut to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return fmt(v) if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(rounded(obj), indent=2) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.{SIG_DIGITS}g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()
