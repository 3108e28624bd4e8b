"""Stochastic logit-imitation route choice.

At step ``n`` every player keeps its route with probability ``1 - gamma_n``;
otherwise it picks route ``p`` of its OD pair with probability proportional to
``max(x_p(n), 1/n) * exp(-G_p(x(n)) / T)``.  Route costs are evaluated once,
on the state before anyone moves.

``x_p`` counts players.  Each player may stand for ``flow_per_player`` units of
flow, so a network with demand 6 can be played by 600 players of weight 0.01;
costs and the potential always see flows.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .beckmann import potential, wardrop_gap
from .errors import DomainError, PreconditionError
from .network import Network, RouteSet, route_costs

DENSE_ROUND = 0.3


@dataclass(frozen=True)
class Schedule:
    """Resampling probabilities ``gamma_n``.

    ``harmonic``: ``value / n``; ``constant``: ``value``; ``sqrt``:
    ``value / sqrt(horizon)`` held constant over a run of ``horizon`` steps.
    """

    kind: str
    value: float
    horizon: int | None = None

    def __post_init__(self):
        if self.kind not in ("harmonic", "constant", "sqrt"):
            raise PreconditionError(f"unknown schedule {self.kind!r}")
        if self.kind == "sqrt" and not self.horizon:
            raise PreconditionError("sqrt schedule needs a horizon")
        g = self.value if self.kind != "sqrt" else self.value / math.sqrt(self.horizon)
        if not 0 <= g <= 1 or self.value < 0:
            raise PreconditionError(f"gamma must lie in [0, 1], got {g}")

    def __call__(self, n):
        if self.kind == "harmonic":
            return self.value / n
        if self.kind == "constant":
            return self.value
        return self.value / math.sqrt(self.horizon)

    def batch(self, n0, count):
        if self.kind == "harmonic":
            return self.value / np.arange(n0, n0 + count, dtype=float)
        return np.full(count, self(n0))


@dataclass(frozen=True)
class DynamicsConfig:
    T: float = 1.0
    schedule: Schedule = Schedule("harmonic", 1.0)
    seed: int = 0
    steps: int = 10_000
    flow_per_player: float = 1.0

    def __post_init__(self):
        if self.T <= 0:
            raise PreconditionError("temperature must be positive")
        if self.flow_per_player <= 0:
            raise PreconditionError("flow_per_player must be positive")


@dataclass
class DynamicsState:
    counts: np.ndarray
    n: int = 1


def players(rs: RouteSet, cfg: DynamicsConfig) -> np.ndarray:
    """Number of players of each OD pair; demands must be whole multiples."""
    d = rs.demand / cfg.flow_per_player
    k = np.rint(d)
    if np.any(np.abs(d - k) > 1e-9 * np.maximum(k, 1.0)):
        raise PreconditionError("demand is not a whole number of players")
    return k.astype(np.int64)


def initial_state(rs: RouteSet, cfg: DynamicsConfig, how="even", rng=None) -> DynamicsState:
    """Starting assignment.

    ``how`` is ``"even"`` (remainder to the lowest route ids), ``"random"``
    (every player on a uniformly random route of its OD pair), an integer
    route index (every player of that route's OD pair on it, others even), or
    an explicit count vector.
    """
    d = players(rs, cfg)
    counts = np.zeros(len(rs), dtype=np.int64)
    if isinstance(how, str) and how == "random":
        rng = np.random.default_rng() if rng is None else rng
        for w, idx in enumerate(rs.od_routes):
            counts[idx] = rng.multinomial(d[w], np.full(idx.size, 1.0 / idx.size))
    elif isinstance(how, (str, int, np.integer)):
        for w, idx in enumerate(rs.od_routes):
            q, r = divmod(int(d[w]), idx.size)
            counts[idx] = q
            counts[idx[:r]] += 1
        if not isinstance(how, str):
            w = rs.od_of[how]
            counts[rs.od_routes[w]] = 0
            counts[how] = d[w]
        elif how != "even":
            raise PreconditionError(f"unknown initial assignment {how!r}")
    else:
        counts = np.asarray(how, dtype=np.int64).copy()
    check_state(rs, cfg, counts)
    return DynamicsState(counts, 1)


def check_state(rs, cfg, counts):
    d = players(rs, cfg)
    if counts.shape != (len(rs),) or np.any(counts < 0):
        raise PreconditionError("counts must be a nonnegative vector, one entry per route")
    for w, idx in enumerate(rs.od_routes):
        if counts[idx].sum() != d[w]:
            raise PreconditionError(f"OD {w} has {counts[idx].sum()} players, expected {d[w]}")


def flows(state_counts, cfg: DynamicsConfig):
    return np.asarray(state_counts, dtype=float) * cfg.flow_per_player


def choice_weights(state: DynamicsState, net: Network, rs: RouteSet, cfg: DynamicsConfig):
    """Resampling distribution of every route within its OD pair (one vector over all routes)."""
    counts = np.asarray(state.counts, dtype=float)
    G = route_costs(net, rs, counts * cfg.flow_per_player)
    return _weights(counts, G, state.n, cfg.T, rs.od_routes)


def _weights(counts, G, n, T, od_routes):
    logw = np.log(np.maximum(counts, 1.0 / n)) - G / T
    probs = np.empty_like(logw)
    for idx in od_routes:
        # normalise in log space so exp never underflows to all zeros
        lw = logw[idx]
        w = np.exp(lw - lw.max())
        probs[idx] = w / w.sum()
    return probs


def expected_drift(state: DynamicsState, net: Network, rs: RouteSet, cfg: DynamicsConfig):
    """``E[x(n+1) - x(n) | x(n)]`` in players: ``gamma_n (d_w w_p - x_p)``."""
    gamma = cfg.schedule(state.n)
    w = choice_weights(state, net, rs, cfg)
    counts = np.asarray(state.counts, dtype=float)
    totals = np.zeros(len(rs))
    for idx in rs.od_routes:
        totals[idx] = counts[idx].sum()
    return gamma * (totals * w - counts)


def _reassign(counts, leavers, probs, rs, rng):
    out = counts - leavers
    for idx in rs.od_routes:
        k = leavers[idx].sum()
        if k:
            out[idx] += rng.multinomial(k, probs[idx])
    return out


def step(state: DynamicsState, net: Network, rs: RouteSet, cfg: DynamicsConfig,
         rng: np.random.Generator) -> DynamicsState:
    """One synchronous round: ``Binomial(x_p, gamma_n)`` players leave each route
    and are redistributed by a multinomial draw on :func:`choice_weights`."""
    gamma = cfg.schedule(state.n)
    counts = np.asarray(state.counts, dtype=np.int64)
    leavers = rng.binomial(counts, gamma)
    if leavers.any():
        probs = choice_weights(state, net, rs, cfg)
        counts = _reassign(counts, leavers, probs, rs, rng)
    return DynamicsState(counts, state.n + 1)


@dataclass
class TrajectoryRecord:
    n: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    final: DynamicsState | None = None
    mean_counts: np.ndarray | None = None

    def rows(self, rs: RouteSet):
        """CSV rows ``n,route_id,count,psi,gap``."""
        for n, c, p, g in zip(self.n, self.counts, self.psi, self.gap):
            for r, v in zip(rs.routes, c):
                yield (n, r.id, int(v), p, g)


def _conditional_leavers(counts, gamma, rng):
    """Per-route leavers given that at least one of the players leaves.

    The first leaver (in a fixed player order) follows a truncated geometric
    law, the players after it leave independently; the leaving set is then
    uniform given its size, so it is split over routes hypergeometrically.
    """
    D = int(counts.sum())
    if gamma >= 1.0:
        return counts.copy()
    log_stay = math.log1p(-gamma)
    p_any = -math.expm1(D * log_stay)
    u = rng.random()
    J = int(math.ceil(math.log1p(-u * p_any) / log_stay))
    J = min(max(J, 1), D)
    K = 1 + int(rng.binomial(D - J, gamma))
    return rng.multivariate_hypergeometric(counts, K)


def run(net: Network, rs: RouteSet, cfg: DynamicsConfig, record_stride: int | None = None,
        x0="even", record_at=None, rng=None) -> TrajectoryRecord:
    """Simulate ``cfg.steps`` rounds starting at step index 1.

    Records (n, counts, Psi, gap) at every multiple of ``record_stride``,
    at each step in ``record_at``, and at the final step.  The time average of
    the counts over the ``steps`` rounds is kept in ``mean_counts``.

    While a round is likely to move somebody it is simulated exactly as in
    :func:`step`.  Once ``1 - (1 - gamma_n)**D`` drops below ``DENSE_ROUND``
    the quiet rounds are skipped: the next round with a leaver is drawn
    directly and its leavers are sampled conditionally on being nonempty.
    Both regimes produce the same process.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = x0 if isinstance(x0, DynamicsState) else initial_state(rs, cfg, x0, rng)
    counts = np.asarray(state.counts, dtype=np.int64).copy()
    check_state(rs, cfg, counts)
    D = int(counts.sum())
    n = state.n
    last = n + int(cfg.steps)
    marks = set(record_at or ())
    if record_stride:
        marks.update(range(-(-n // record_stride) * record_stride, last + 1, record_stride))
    marks.add(last)
    marks = sorted(m for m in marks if n <= m <= last)
    mi = 0
    rec = TrajectoryRecord()
    total = np.zeros(len(rs))
    cache = {}
    theta, thetaT = rs.theta, np.ascontiguousarray(rs.theta.T)
    fpp, T, od_routes = cfg.flow_per_player, cfg.T, rs.od_routes

    def probs_at(at):
        G = thetaT @ net.latencies(theta @ (counts * fpp))
        return _weights(counts.astype(float), G, at, T, od_routes)

    def hold(upto):
        # counts stay put on steps n..upto
        nonlocal mi, total
        while mi < len(marks) and marks[mi] <= upto:
            key = counts.tobytes()
            if key not in cache:
                x = flows(counts, cfg)
                cache.clear()
                cache[key] = (potential(net, rs, x), wardrop_gap(net, rs, x, check=False))
            p, g = cache[key]
            rec.n.append(marks[mi])
            rec.counts.append(counts.copy())
            rec.psi.append(p)
            rec.gap.append(g)
            mi += 1
        hi = min(upto, last - 1)
        if hi >= n:
            total = total + counts * (hi - n + 1)

    while n < last:
        gamma = cfg.schedule(n)
        if D > 0 and -math.expm1(D * math.log1p(-min(gamma, 1.0 - 1e-16))) >= DENSE_ROUND:
            hold(n)
            leavers = rng.binomial(counts, gamma)
            if leavers.any():
                counts = _reassign(counts, leavers, probs_at(n), rs, rng)
            n += 1
            continue
        nxt = last
        m = n
        while D > 0 and m < last:
            size = min(last - m, 4096)
            g = cfg.schedule.batch(m, size)
            q = -np.expm1(D * np.log1p(-g))
            hit = np.flatnonzero(rng.random(size) < q)
            if hit.size:
                nxt = m + int(hit[0])
                break
            m += size
        hold(nxt)
        if nxt >= last:
            n = last
            break
        leavers = _conditional_leavers(counts, cfg.schedule(nxt), rng)
        counts = _reassign(counts, leavers, probs_at(nxt), rs, rng)
        n = nxt + 1
    hold(last)
    rec.final = DynamicsState(counts, last)
    span = last - state.n
    rec.mean_counts = total / span if span > 0 else counts.astype(float)
    return rec


def lemma1_check(alpha, w, T=1.0):
    """``F0 = sum a w f(w) / sum a w`` and ``F1 = sum a f(w) / sum a`` for ``f = -T ln w``."""
    alpha = np.asarray(alpha, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    if np.any(w <= 0) or np.any(w >= 1):
        raise DomainError("w must lie in (0, 1)")
    f = -T * np.log(w)
    F0 = float(np.sum(alpha * w * f) / np.sum(alpha * w))
    F1 = float(np.sum(alpha * f) / np.sum(alpha))
    return F0, F1


def drift_inner_product(state, net, rs, cfg) -> float:
    """``<G(x), E[x(n+1) - x(n) | x(n)]>`` in flow units."""
    x = flows(state.counts, cfg)
    G = route_costs(net, rs, x)
    return float(G @ expected_drift(state, net, rs, cfg)) * cfg.flow_per_player


@dataclass
class AveragingTable:
    omega: list
    tail: list
    excess: list
    C_fit: float | None
    C_chord_min: float | None
    nonincreasing: bool
    decays: bool
    psi_min: float

    @property
    def passed(self):
        return self.nonincreasing and self.decays

    def to_dict(self):
        return {
            "omega": self.omega, "tail": self.tail, "C_fit": self.C_fit,
            "C_chord_min": self.C_chord_min, "nonincreasing": self.nonincreasing,
            "decays": self.decays, "passed": self.passed, "psi_min": self.psi_min,
            "replicas": len(self.excess),
        }


def _averaging_replica(args):
    net, rs, cfg, x0 = args
    rec = run(net, rs, cfg, x0=x0)
    xbar = rec.mean_counts * cfg.flow_per_player
    return potential(net, rs, xbar)


def replica_seeds(seed, replicas):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(replicas)]


def map_replicas(fn, jobs):
    """Apply ``fn`` to every job, in parallel when ``WARDROP_LAB_THREADS`` > 1.

    Results come back in job order, so the degree of parallelism never changes them.
    """
    workers = int(os.environ.get("WARDROP_LAB_THREADS", "1") or 1)
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def averaging_estimate(net, rs, T, alpha, N_total, replicas, omega_grid, psi_min,
                       seed=0, flow_per_player=1.0, x0="random") -> AveragingTable:
    """Tail frequencies of ``Psi(time-averaged flows) - Psi_min >= Omega / sqrt(N)``.

    Every replica runs ``N_total`` rounds with the constant resampling
    probability ``alpha / sqrt(N_total)``.  ``C`` is fitted by least squares
    on ``log tail = const - C Omega`` over the positive frequencies.  The
    decay check asks every grid point past the first to sit strictly below the
    first on the log scale (a zero frequency counts as below).
    """
    if N_total < 100 or replicas < 100:
        raise PreconditionError("averaging needs N_total >= 100 and replicas >= 100")
    schedule = Schedule("sqrt", alpha, int(N_total))
    jobs = [(net, rs, DynamicsConfig(T, schedule, s, int(N_total), flow_per_player), x0)
            for s in replica_seeds(seed, replicas)]
    psis = np.array(map_replicas(_averaging_replica, jobs))
    excess = psis - psi_min
    omegas = sorted(float(o) for o in omega_grid)
    tail = [float(np.mean(excess >= o / math.sqrt(N_total))) for o in omegas]
    nonincreasing = all(b <= a for a, b in zip(tail, tail[1:]))

    pos = [(o, t) for o, t in zip(omegas, tail) if t > 0]
    C_fit = None
    if len(pos) >= 2:
        o, t = np.array(pos).T
        C_fit = float(-np.polyfit(o, np.log(t), 1)[0])
    chords = []
    decays = len(omegas) >= 2 and tail[0] > 0
    for o, t in zip(omegas[1:], tail[1:]):
        if t == 0:
            continue
        chord = -(math.log(t) - math.log(tail[0])) / (o - omegas[0]) if tail[0] > 0 else None
        chords.append(chord)
        if chord is None or chord <= 0:
            decays = False
    C_chord = min(chords) if chords else None
    return AveragingTable(omegas, tail, excess.tolist(), C_fit, C_chord, nonincreasing,
                          bool(decays), float(psi_min))
