"""
Deterministic synchronous-round simulator and parameter sweeps.

Round ``k`` proceeds as follows. If ``k`` is a multiple of ``d_bar`` every
agent first applies its window boundary update (for ``k > 0``). Then each
agent encodes one message, the engine delivers it along every out-edge, and
all agents update from round-``k`` messages only. Grid synchrony, window
agreement and mass conservation are asserted as the run goes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

from ppacdc import graph as graphs
from ppacdc.graph import Digraph
from ppacdc.protocol import (
    ProtocolParams,
    build_message,
    consensus_update,
    coordination_update,
    decode_message,
    encode_message,
    init_agent,
    message_bits,
    push_pull_update,
    window_boundary_update,
)
from ppacdc.quantizer import level_of
from ppacdc.rng import MASK64, Xoshiro256

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 20_000
DEFAULT_TOLERANCE = 1e-8
AVERAGE_FACTOR = 100.0  # average error must be within this multiple of the tolerance
MASS_RTOL = 1e-9
FULL_TRACE_MAX_N = 64

TRACE_HEADER = ["k", "agent", "x", "s", "delta", "sigma", "zeta", "consensus_error",
                "bits_cumulative"]
SWEEP_HEADER = ["alpha", "bits", "seeds", "converged_count", "mean_iters", "min_iters",
                "max_iters"]


class InvariantViolation(RuntimeError):
    def __init__(self, round: int, agent: int | None, quantity: str, detail: str):
        self.round = round
        self.agent = agent
        self.quantity = quantity
        where = f"agent {agent}" if agent is not None else "network"
        super().__init__(f"round {round}, {where}: {quantity} violated ({detail})")


@dataclass(frozen=True)
class UniformInit:
    """Initial states drawn i.i.d. uniform on ``[low, high]`` from the run seed."""

    low: float = 0.0
    high: float = 1000.0

    def sample(self, n: int, seed: int) -> tuple[float, ...]:
        rng = Xoshiro256(seed)
        return tuple(rng.uniform(self.low, self.high) for _ in range(n))


@dataclass(frozen=True)
class RandomGraphSpec:
    n: int
    extra_edge_prob: float
    seed: int

    def build(self) -> Digraph:
        return graphs.random_strongly_connected(self.n, self.extra_edge_prob, self.seed)


GraphSource = Union[Digraph, RandomGraphSpec]
InitSource = Union[Sequence[float], UniformInit]


@dataclass(frozen=True)
class SimConfig:
    graph: GraphSource
    protocol: ProtocolParams
    x0: InitSource = UniformInit()
    max_iters: int = DEFAULT_MAX_ITERS
    conv_tolerance: float = DEFAULT_TOLERANCE
    seed: int = 0
    exact_mode: bool = False
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.conv_tolerance > 0:
            raise ValueError("conv_tolerance must be positive")
        if not isinstance(self.x0, UniformInit):
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def resolve_graph(self) -> Digraph:
        g = self.graph.build() if isinstance(self.graph, RandomGraphSpec) else self.graph
        if not graphs.is_strongly_connected(g):
            raise ValueError("graph is not strongly connected")
        d = graphs.diameter(g)
        if self.protocol.d_bar < d:
            raise ValueError(
                f"d_bar={self.protocol.d_bar} is below the graph diameter {d}; "
                "window extrema would not converge")
        return g

    def initial_states(self, n: int) -> tuple[float, ...]:
        if isinstance(self.x0, UniformInit):
            return self.x0.sample(n, self.seed)
        if len(self.x0) != n:
            raise ValueError(f"x0 has {len(self.x0)} entries for {n} agents")
        if not all(math.isfinite(v) for v in self.x0):
            raise ValueError("x0 must be finite")
        return self.x0


@dataclass(frozen=True)
class TraceRecord:
    k: int
    x: tuple[float, ...]
    s: tuple[float, ...]
    zeta: tuple[int, ...]
    delta: float
    sigma: float
    consensus_error: float
    bits_cumulative: int
    x_q: tuple[float, ...] = ()
    s_q: tuple[float, ...] = ()


@dataclass
class RunResult:
    converged: bool
    convergence_iter: int | None
    final_error: float
    trace: list[TraceRecord] = field(default_factory=list)
    average_reached: bool = False
    average_error: float = math.inf
    rounds: int = 0
    bits_total: int = 0
    x0: tuple[float, ...] = ()
    x_final: tuple[float, ...] = ()
    s_final: tuple[float, ...] = ()
    delta_final: float = math.nan
    sigma_final: float = math.nan


def detect_convergence(x: Sequence[float], tol: float) -> bool:
    """True iff every pair of states is within ``tol``."""
    return max(x) - min(x) <= tol


def consensus_error(x: Sequence[float], x0: Sequence[float]) -> float:
    """Euclidean distance from ``x`` to the initial average times the ones vector."""
    if len(x) != len(x0):
        raise ValueError("length mismatch")
    ave = math.fsum(x0) / len(x0)
    return math.sqrt(math.fsum((v - ave) ** 2 for v in x))


def _state_key(agents) -> bytes:
    vals = [agents[0].grid.step, agents[0].grid.midpoint]
    for a in agents:
        vals += (a.x, a.s, a.M, a.mu, float(a.zeta))
    return struct.pack(f"<{len(vals)}d", *vals)


def run(config: SimConfig, agent_order: Sequence[int] | None = None,
        observer: Callable[[int, list], None] | None = None) -> RunResult:
    """Simulate until pairwise agreement or ``max_iters`` rounds.

    ``agent_order`` permutes the order in which agents are processed within
    a round; results do not depend on it. ``observer(k, agents)`` is called
    at the start of every round, before any window boundary update; it must
    not modify the agents.

    When no trace is recorded, a window-boundary state identical to an
    earlier one proves the run is periodic, and whole periods are skipped.
    The returned result is the same as running every round.
    """
    g = config.resolve_graph()
    p = config.protocol
    n = g.node_count
    order = list(range(n)) if agent_order is None else list(agent_order)
    if sorted(order) != list(range(n)):
        raise ValueError("agent_order must be a permutation of the agents")

    x0 = config.initial_states(n)
    x_ave = math.fsum(x0) / n
    mass0 = math.fsum(x0)
    mass_tol = MASS_RTOL * n * max(1.0, max(abs(v) for v in x0))
    tol = config.conv_tolerance
    bits = p.bits
    per_round = g.edge_count * message_bits(bits)
    in_nb = [g.in_neighbors(j) for j in range(n)]
    in_deg = [len(v) for v in in_nb]
    exact = config.exact_mode
    record = config.record_trace
    full_trace = n <= FULL_TRACE_MAX_N

    agents = [init_agent(j, x0[j], g, p) for j in range(n)]
    trace: list[TraceRecord] = []
    seen: dict[bytes, int] | None = None if record else {}
    bits_total = 0
    k = 0
    converged_at = None

    while True:
        if observer is not None:
            observer(k, agents)
        if k % p.d_bar == 0 and k > 0:
            _check_window_agreement(agents, k)
            if seen is not None and observer is None:
                key = _state_key(agents)
                if key in seen:
                    period = k - seen[key]
                    skip = (config.max_iters - k) // period * period
                    if skip:
                        logger.debug("periodic state at k=%d (period %d); skipping %d rounds",
                                     k, period, skip)
                        k += skip
                        bits_total += skip * per_round
                        seen.clear()
                seen[key] = k
            agents = [window_boundary_update(a, p) for a in agents]
        _check_grid_sync(agents, k)

        xs = [a.x for a in agents]
        if record and (full_trace or k % p.d_bar == 0 or k == config.max_iters):
            trace.append(_record(agents, k, x0, bits_total, exact))
        if max(xs) - min(xs) <= tol:
            converged_at = k
            break
        if k == config.max_iters:
            break

        msgs = [None] * n
        payloads = [None] * n
        for j in order:
            msgs[j] = build_message(agents[j])
            payloads[j] = encode_message(msgs[j], bits)

        updates = [None] * n
        for j in order:
            a = agents[j]
            incoming = [(decode_message(payloads[i], bits), i) for i in in_nb[j]]
            if exact:
                received = [(agents[i].x, agents[i].s, m.out_degree) for m, i in incoming]
                xs_new = push_pull_update(a.x, a.s, a.x, a.s, in_deg[j], a.out_degree,
                                          received, p.gamma)
            else:
                xs_new = consensus_update(a, incoming, g, p.gamma, own=msgs[j])
            updates[j] = (xs_new, coordination_update(a, incoming))

        for j in order:
            (x_new, s_new), (zeta, M, mu) = updates[j]
            a = agents[j]
            a.x, a.s, a.zeta, a.M, a.mu = x_new, s_new, zeta, M, mu
            if not (math.isfinite(x_new) and math.isfinite(s_new)):
                raise InvariantViolation(k + 1, j, "finiteness", f"x={x_new}, s={s_new}")

        mass = math.fsum(a.x for a in agents) + math.fsum(a.s for a in agents)
        if abs(mass - mass0) > mass_tol:
            raise InvariantViolation(k + 1, None, "mass conservation",
                                     f"|sum(x+s) - sum(x0)| = {abs(mass - mass0):.3e}")
        k += 1
        bits_total += per_round

    x_final = tuple(a.x for a in agents)
    avg_err = max(abs(v - x_ave) for v in x_final)
    converged = converged_at is not None
    return RunResult(
        converged=converged,
        convergence_iter=converged_at,
        final_error=consensus_error(x_final, x0),
        trace=trace,
        average_reached=converged and avg_err <= AVERAGE_FACTOR * tol,
        average_error=avg_err,
        rounds=k,
        bits_total=bits_total,
        x0=x0,
        x_final=x_final,
        s_final=tuple(a.s for a in agents),
        delta_final=agents[0].grid.step,
        sigma_final=agents[0].grid.midpoint,
    )


def _record(agents, k, x0, bits_total, exact) -> TraceRecord:
    grid = agents[0].grid
    xs = tuple(a.x for a in agents)
    ss = tuple(a.s for a in agents)
    if exact:
        xq, sq = xs, ss
    else:
        sgrid = grid.with_midpoint(0.0)
        xq = tuple(grid.midpoint + level_of(v, grid) * grid.step for v in xs)
        sq = tuple(level_of(v, sgrid) * grid.step for v in ss)
    return TraceRecord(k=k, x=xs, s=ss, zeta=tuple(a.zeta for a in agents),
                       delta=grid.step, sigma=grid.midpoint,
                       consensus_error=consensus_error(xs, x0),
                       bits_cumulative=bits_total, x_q=xq, s_q=sq)


def _check_grid_sync(agents, k) -> None:
    ref = agents[0].grid
    for a in agents[1:]:
        if a.grid != ref:
            raise InvariantViolation(k, a.id, "grid synchrony",
                                     f"{a.grid} differs from agent 0's {ref}")


def _check_window_agreement(agents, k) -> None:
    ref = agents[0]
    for a in agents[1:]:
        if (a.zeta, a.M, a.mu) != (ref.zeta, ref.M, ref.mu):
            raise InvariantViolation(k, a.id, "window agreement",
                                     f"(zeta, M, mu)={(a.zeta, a.M, a.mu)} vs "
                                     f"{(ref.zeta, ref.M, ref.mu)}")


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    bits: int
    seeds: int
    converged_count: int
    mean_iters: float | None
    min_iters: int | None
    max_iters: int | None

    @property
    def flagged(self) -> bool:
        """True when at least one seed failed to converge."""
        return self.converged_count < self.seeds


def _sweep_cell(args) -> tuple[tuple, int | None]:
    key, cfg = args
    return key, run(cfg).convergence_iter


def sweep_configs(base: SimConfig, alphas, bits, n_seeds: int,
                  resample_topology: bool = False):
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    if resample_topology and not isinstance(base.graph, RandomGraphSpec):
        raise ValueError("resample_topology needs a random graph spec")
    for a in alphas:
        for b in bits:
            proto = replace(base.protocol, alpha=float(a), bits=int(b))
            for i in range(n_seeds):
                seed = (base.seed + i) & MASK64
                g = base.graph
                if resample_topology:
                    g = replace(g, seed=(g.seed + i) & MASK64)
                cfg = replace(base, protocol=proto, seed=seed, graph=g, record_trace=False)
                yield (float(a), int(b), i), cfg


def sweep(base: SimConfig, alphas: Sequence[float], bits: Sequence[int], n_seeds: int,
          resample_topology: bool = False, workers: int = 1) -> list[SweepRow]:
    """Convergence statistics for every ``(alpha, bits)`` cell over seeded runs.

    Seed ``i`` of a cell uses run seed ``base.seed + i``, so initial states
    are re-drawn per seed; the topology is re-drawn too only when
    ``resample_topology`` is set. Means are taken over converged seeds only.
    """
    jobs = list(sweep_configs(base, alphas, bits, n_seeds, resample_topology))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_sweep_cell, jobs, chunksize=max(1, n_seeds // 4)))
    else:
        results = dict(map(_sweep_cell, jobs))

    rows = []
    for a in alphas:
        for b in bits:
            iters = [results[(float(a), int(b), i)] for i in range(n_seeds)]
            done = [v for v in iters if v is not None]
            rows.append(SweepRow(
                alpha=float(a), bits=int(b), seeds=n_seeds, converged_count=len(done),
                mean_iters=math.fsum(done) / len(done) if done else None,
                min_iters=min(done) if done else None,
                max_iters=max(done) if done else None,
            ))
    return rows


# ---------------------------------------------------------------------------
# CSV output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for rec in result.trace:
        for j, (x, s, z) in enumerate(zip(rec.x, rec.s, rec.zeta)):
            w.writerow([rec.k, j, _fmt(x), _fmt(s), _fmt(rec.delta), _fmt(rec.sigma), z,
                        _fmt(rec.consensus_error), rec.bits_cumulative])
    return buf.getvalue()


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_fmt(r.alpha), r.bits, r.seeds, r.converged_count, _fmt(r.mean_iters),
                    _fmt(r.min_iters), _fmt(r.max_iters)])
    return buf.getvalue()


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write through a temporary sibling and rename, so readers never see partial files."""
    path = os.fspath(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
