"""Apartment-exchange Markov chain on integer correspondence matrices.

Two residents living/working at ``(k, m)`` and ``(p, q)`` swap homes, after
which they sit in cells ``(p, m)`` and ``(k, q)``.  Each such pair swaps at
rate ``pL * exp((c_km + c_pq) - (c_pm + c_kq))``, so the transition rate out of
a state is that kernel times ``x_km * x_pq``.  The stationary law is
``prod exp(-2 c_ij x_ij) / x_ij!`` up to normalisation.

The continuous-time chain is simulated in discrete time by uniformisation:
every step jumps with probability ``Q(x) / R`` and stays put otherwise.  Runs of
self-loops are drawn in one go from a geometric law, which is the same
process, just cheaper.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np
from scipy.special import gammaln

from .errors import PreconditionError, StateSpaceTooLarge
from .od_entropy import ZoneData, balance, entropy_objective

MAX_STATES = 100_000


@dataclass
class ChainState:
    counts: np.ndarray
    time: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise PreconditionError("chain state must be a square matrix")
        if np.any(self.counts < 0):
            raise PreconditionError("chain state must be nonnegative")


@dataclass(frozen=True)
class ChainConfig:
    c: np.ndarray
    pL: float = 1.0
    seed: int = 0
    steps: int = 1_000_000
    rate_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", np.atleast_2d(np.asarray(self.c, dtype=float)))
        if self.pL <= 0:
            raise PreconditionError("pL must be positive")


def exchange_rate(c, k, m, p, q, pL=1.0) -> float:
    """Per-pair rate for residents at ``(k, m)`` and ``(p, q)`` to swap homes."""
    return pL * math.exp((c[k, m] + c[p, q]) - (c[p, m] + c[k, q]))


def moves(n):
    """Distinct exchange moves as ``(k, m, p, q)`` with ``k < p`` and ``m != q``."""
    return [(k, m, p, q)
            for k in range(n) for p in range(k + 1, n)
            for m in range(n) for q in range(n) if m != q]


def default_rate_bound(N, c, pL=1.0) -> float:
    # Each unordered pair of residents enables at most one move.
    c = np.asarray(c, dtype=float)
    mv = moves(c.shape[0])
    if not mv or N < 2:
        return pL
    top = max(exchange_rate(c, *mv_, pL=pL) for mv_ in mv)
    return N * (N - 1) / 2 * top


class _Kernel:
    """Precomputed move list and rates on a flat state vector."""

    def __init__(self, cfg: ChainConfig, N: int):
        c = cfg.c
        n = c.shape[0]
        self.n = n
        mv = moves(n)
        self.src = [(k * n + m, p * n + q) for k, m, p, q in mv]
        self.dst = [(p * n + m, k * n + q) for k, m, p, q in mv]
        self.rate = [exchange_rate(c, *mv_, pL=cfg.pL) for mv_ in mv]
        self.R = cfg.rate_bound if cfg.rate_bound is not None else default_rate_bound(N, c, cfg.pL)

    def rates(self, flat):
        return [flat[a] * flat[b] * r for (a, b), r in zip(self.src, self.rate)]

    def apply(self, flat, i):
        a, b = self.src[i]
        d, e = self.dst[i]
        flat[a] -= 1
        flat[b] -= 1
        flat[d] += 1
        flat[e] += 1
        assert flat[a] >= 0 and flat[b] >= 0


def _check_marginals(counts, L=None, W=None):
    if L is not None and not np.array_equal(counts.sum(axis=1), np.asarray(L)):
        raise PreconditionError("state row sums do not match L")
    if W is not None and not np.array_equal(counts.sum(axis=0), np.asarray(W)):
        raise PreconditionError("state column sums do not match W")


def step(s: ChainState, cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """One uniformised transition."""
    N = int(s.counts.sum())
    kern = _Kernel(cfg, N)
    flat = s.counts.ravel().tolist()
    rates = kern.rates(flat)
    Q = sum(rates)
    if Q > kern.R * (1 + 1e-12):
        raise PreconditionError(f"rate bound {kern.R} below total rate {Q}")
    u = rng.random() * kern.R
    if u < Q:
        acc = 0.0
        for i, r in enumerate(rates):
            acc += r
            if u < acc:
                kern.apply(flat, i)
                break
    return ChainState(np.array(flat).reshape(s.counts.shape), s.time + 1)


@dataclass
class ChainRun:
    final: ChainState
    occupancy: Counter
    burn_in: int
    steps: int
    jumps: int
    rate_bound: float
    samples: list = field(default_factory=list)

    def frequencies(self):
        total = sum(self.occupancy.values())
        return {k: v / total for k, v in self.occupancy.items()}


def simulate(s0: ChainState, cfg: ChainConfig, burn_in: int | None = None,
             stride: int | None = None) -> ChainRun:
    """Run ``cfg.steps`` uniformised steps from ``s0``.

    Occupancy counts every step at index ``>= burn_in`` (default: half the
    run), keyed like :func:`enumerate_stationary` (tuple of row tuples).
    With ``stride`` set, the state at every multiple of ``stride`` is kept in
    ``samples`` as ``(step, counts)``.
    """
    rng = np.random.default_rng(cfg.seed)
    shape = s0.counts.shape
    N = int(s0.counts.sum())
    kern = _Kernel(cfg, N)
    R = kern.R
    steps = int(cfg.steps)
    burn_in = steps // 2 if burn_in is None else int(burn_in)
    flat = s0.counts.ravel().tolist()
    occupancy = Counter()
    samples = []
    t = 0
    jumps = 0
    while t < steps:
        rates = kern.rates(flat)
        Q = sum(rates)
        if Q > R * (1 + 1e-12):
            raise PreconditionError(f"rate bound {R} below total rate {Q}")
        hold = int(rng.geometric(Q / R)) if Q > 0 else steps - t
        end = min(t + hold, steps)
        key = tuple(flat)
        if end > burn_in:
            occupancy[key] += end - max(t, burn_in)
        if stride:
            first = -(-t // stride) * stride
            for s in range(first, end, stride):
                samples.append((s, np.array(key).reshape(shape)))
        t = end
        if t >= steps or Q == 0:
            break
        u = rng.random() * Q
        acc = 0.0
        for i, r in enumerate(rates):
            acc += r
            if u < acc:
                break
        kern.apply(flat, i)
        jumps += 1
    final = ChainState(np.array(flat).reshape(shape), steps)
    n = shape[0]
    occupancy = Counter({tuple(k[i * n:(i + 1) * n] for i in range(n)): v
                         for k, v in occupancy.items()})
    return ChainRun(final, occupancy, burn_in, steps, jumps, R, samples)


def log_gibbs_mass(x, c) -> float:
    x = np.asarray(x, dtype=float)
    return float(-2.0 * np.sum(np.asarray(c, dtype=float) * x) - np.sum(gammaln(x + 1.0)))


def gibbs_mass(x, c) -> float:
    """Unnormalised stationary mass ``prod exp(-2 c_ij x_ij) / x_ij!``."""
    x = np.asarray(x)
    if np.any(x < 0) or np.any(np.asarray(x) != np.round(x)):
        raise PreconditionError("gibbs mass needs a nonnegative integer matrix")
    return math.exp(log_gibbs_mass(x, c))


def feasible_states(L, W, limit=MAX_STATES):
    """All nonnegative integer matrices with row sums ``L`` and column sums ``W``.

    Rows are filled one at a time, each entry capped by what is left of its
    column total; with equal grand totals every such prefix stays completable.
    """
    L = [int(v) for v in L]
    W = [int(v) for v in W]
    if sum(L) != sum(W):
        raise PreconditionError("marginals must have equal totals")
    n = len(L)
    out = []

    def rows_for(total, caps):
        # compositions of total bounded componentwise by caps
        if len(caps) == 1:
            if total <= caps[0]:
                yield (total,)
            return
        rest = sum(caps[1:])
        for v in range(max(0, total - rest), min(total, caps[0]) + 1):
            for tail in rows_for(total - v, caps[1:]):
                yield (v,) + tail

    def fill(i, remaining, acc):
        if i == len(L) - 1:
            out.append(tuple(acc) + (tuple(remaining),))
            if len(out) > limit:
                raise StateSpaceTooLarge(f"more than {limit} feasible states")
            return
        for row in rows_for(L[i], remaining):
            fill(i + 1, [r - v for r, v in zip(remaining, row)], acc + [row])

    if n == 0:
        return []
    fill(0, W, [])
    return out


def enumerate_stationary(L, W, c, limit=MAX_STATES):
    """Exact stationary law as ``{state (tuple of row tuples): probability}``."""
    states = feasible_states(L, W, limit=limit)
    logm = np.array([log_gibbs_mass(np.array(s), c) for s in states])
    logm -= logm.max()
    w = np.exp(logm)
    w /= w.sum()
    return {s: float(p) for s, p in zip(states, w)}


def check_detailed_balance(L, W, c, pL=1.0, limit=MAX_STATES) -> float:
    """Largest relative violation of the detailed-balance identity.

    For every state ``x`` and every exchange that can lead into ``x`` (needs
    ``x_pm, x_kq >= 1``), compares
    ``(x_km+1)(x_pq+1) p(x_hat) rate(k,m;p,q)`` with ``x_pm x_kq p(x) rate(p,m;k,q)``.
    """
    c = np.asarray(c, dtype=float)
    law = enumerate_stationary(L, W, c, limit=limit)
    n = len(L)
    worst = 0.0
    for state, prob in law.items():
        x = np.array(state)
        for k, p in permutations(range(n), 2):
            for m, q in permutations(range(n), 2):
                if x[p, m] < 1 or x[k, q] < 1:
                    continue
                xh = x.copy()
                xh[k, m] += 1
                xh[p, q] += 1
                xh[p, m] -= 1
                xh[k, q] -= 1
                ph = law[tuple(map(tuple, xh))]
                lhs = (x[k, m] + 1) * (x[p, q] + 1) * ph * exchange_rate(c, k, m, p, q, pL)
                rhs = x[p, m] * x[k, q] * prob * exchange_rate(c, p, m, k, q, pL)
                worst = max(worst, abs(lhs / rhs - 1.0))
    return worst


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def concentration_functional(x, x_star) -> float:
    """``sum (x - x*)^2 / (2 max(x, x*))``."""
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    den = 2.0 * np.maximum(x, x_star)
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(den > 0, (x - x_star) ** 2 / den, 0.0)
    return float(terms.sum())


@dataclass
class InequalityCheck:
    states: int
    min_margin: float
    passed: bool
    by_threshold: list  # (M, states with functional >= M, violations)
    exact_gibbs_violations: int


def check_concentration_inequality(L, W, c, thresholds=(0.5, 1, 2, 4, 8),
                                   slack=1e-9, limit=MAX_STATES) -> InequalityCheck:
    """Check ``p(x) <= exp(-M) p(x*)`` whenever the concentration functional is ``>= M``.

    ``ln p`` is the smooth entropy form ``-sum x ln x - 2 sum c x`` (plus a
    constant) whose curvature the inequality rests on, and ``x*`` is its
    maximiser from :func:`balance`.  It is enough to check
    ``ln p(x*) - ln p(x) >= functional(x)`` state by state; the table per
    threshold is reported as well.  The same test against the exact factorial
    Gibbs weights is only counted, not asserted.
    """
    c = np.asarray(c, dtype=float)
    states = feasible_states(L, W, limit=limit)
    z = ZoneData(np.asarray(L, float), np.asarray(W, float), c)
    x_star = balance(z, tol=1e-13).X
    f_star = entropy_objective(x_star, c)
    # factorial law extended to the non-integer x* through the Gamma function
    log_star = log_gibbs_mass(x_star, c)
    funcs, margins, exact_gaps = [], [], []
    for s in states:
        x = np.array(s, dtype=float)
        F = concentration_functional(x, x_star)
        drop = entropy_objective(x, c) - f_star
        funcs.append(F)
        margins.append(drop - F)
        exact_gaps.append(log_star - log_gibbs_mass(x, c) - F)
    funcs = np.array(funcs)
    margins = np.array(margins)
    table = []
    for M in thresholds:
        sel = funcs >= M
        table.append((float(M), int(sel.sum()), int(np.sum(margins[sel] < -slack))))
    return InequalityCheck(
        states=len(states),
        min_margin=float(margins.min()),
        passed=bool(margins.min() >= -slack),
        by_threshold=table,
        exact_gibbs_violations=int(np.sum(np.array(exact_gaps) < -slack)),
    )


@dataclass
class ConcentrationReport:
    m: float
    lambdas: list
    coverage: list
    witness: float | None
    steps: int
    burn_in: int
    inequality: InequalityCheck | None
    inequality_skipped: str | None = None

    def to_dict(self):
        out = {
            "m": self.m,
            "lambda": list(self.lambdas),
            "coverage": list(self.coverage),
            "witness": self.witness,
            "steps": self.steps,
            "burn_in": self.burn_in,
        }
        if self.inequality is not None:
            iq = self.inequality
            out["inequality"] = {
                "states": iq.states,
                "min_margin": iq.min_margin,
                "passed": iq.passed,
                "by_threshold": [list(r) for r in iq.by_threshold],
                "exact_gibbs_violations": iq.exact_gibbs_violations,
            }
        else:
            out["inequality"] = {"skipped": self.inequality_skipped}
        return out


def initial_state(L, W):
    """North-west corner rule: a feasible integer matrix for the given marginals."""
    L = [int(v) for v in L]
    W = [int(v) for v in W]
    x = np.zeros((len(L), len(W)), dtype=np.int64)
    i = j = 0
    rl, rw = L[:], W[:]
    while i < len(L) and j < len(W):
        v = min(rl[i], rw[j])
        x[i, j] = v
        rl[i] -= v
        rw[j] -= v
        if rl[i] == 0:
            i += 1
        else:
            j += 1
    return x


def concentration_report(cfg: ChainConfig, L, W, lambda_grid, coverage_target=0.999,
                         x0=None) -> ConcentrationReport:
    """Empirical coverage of ``max |x_ij / x*_ij - 1| <= lam / sqrt(m)`` per ``lam``.

    ``x*_ij = L_i W_j / N`` and ``m = N / n``.  Costs are expected to be
    constant (the regime the statement is about).
    """
    c = cfg.c
    if not np.allclose(c, c.flat[0]):
        raise PreconditionError("concentration report expects a constant cost matrix")
    L = np.asarray(L, dtype=np.int64)
    W = np.asarray(W, dtype=np.int64)
    n = len(L)
    N = int(L.sum())
    m = N / n
    x_star = np.outer(L, W) / N
    s0 = ChainState(initial_state(L, W) if x0 is None else x0)
    _check_marginals(s0.counts, L, W)
    run = simulate(s0, cfg)
    total = sum(run.occupancy.values())
    dev = {k: float(np.max(np.abs(np.array(k).reshape(n, n) / x_star - 1.0)))
           for k in run.occupancy}
    lambdas = sorted(float(v) for v in lambda_grid)
    coverage = []
    for lam in lambdas:
        r = lam / math.sqrt(m)
        hit = sum(v for k, v in run.occupancy.items() if dev[k] <= r + 1e-12)
        coverage.append(hit / total)
    witness = next((lam for lam, cv in zip(lambdas, coverage) if cv >= coverage_target), None)

    inequality, skipped = None, None
    try:
        inequality = check_concentration_inequality(L, W, c)
    except StateSpaceTooLarge as exc:
        skipped = str(exc)
    return ConcentrationReport(m, lambdas, coverage, witness, run.steps, run.burn_in,
                               inequality, skipped)


def trajectory_rows(samples):
    """CSV rows ``step,i,j,count`` for thinned samples."""
    for t, counts in samples:
        for i, j in product(range(counts.shape[0]), range(counts.shape[1])):
            yield (t, i, j, int(counts[i, j]))
