"""
Agent-side state machine of the quantized push-pull consensus protocol.

Each round an agent broadcasts one :class:`RoundMessage` to its
out-neighbours carrying its quantized state and surplus, its zoom flag, the
running max/min of quantized states seen in the current window, and its
out-degree. Every ``d_bar`` rounds the agents use the converged window
extrema to shift the quantizer midpoint and zoom its step in or out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from ppacdc.graph import Digraph
from ppacdc.quantizer import QuantizerParams, from_level, level_of, range_limit, to_level

CENTERED = "centered"
LITERAL = "literal"
ZOOM_IN_RULES = (CENTERED, LITERAL)

DEGREE_BITS = 16
ZETA_BITS = 2
_ZETA_CODE = {0: 0b00, 1: 0b01, -1: 0b10}
_ZETA_FROM_CODE = {v: k for k, v in _ZETA_CODE.items()}


class ProtocolError(RuntimeError):
    """Raised when an agent sees messages inconsistent with the topology or grid."""


@dataclass(frozen=True)
class ProtocolParams:
    gamma: float
    alpha: float
    d_bar: int
    bits: int
    delta0: float = 1.0
    sigma0: float = 0.0
    zoom_in_rule: str = CENTERED

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.d_bar < 1:
            raise ValueError(f"d_bar must be at least 1, got {self.d_bar}")
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if self.zoom_in_rule not in ZOOM_IN_RULES:
            raise ValueError(f"zoom_in_rule must be one of {ZOOM_IN_RULES}")
        # validates bits
        self.initial_grid()

    def initial_grid(self) -> QuantizerParams:
        return QuantizerParams(self.bits, self.delta0, self.sigma0)


@dataclass
class AgentState:
    id: int
    x: float
    s: float
    zeta: int
    M: float
    mu: float
    grid: QuantizerParams
    out_degree: int


@dataclass(frozen=True)
class RoundMessage:
    x_level: int
    s_level: int
    zeta: int
    M_level: int
    mu_level: int
    out_degree: int


def message_bits(bits: int) -> int:
    """Width of one encoded message before byte padding."""
    return 4 * bits + ZETA_BITS + DEGREE_BITS


def compute_zeta(x: float, grid: QuantizerParams, alpha: float, rule: str = CENTERED) -> int:
    """Classify ``x`` against the grid: +1 out of range, -1 zoom-in region, else 0."""
    xbar = range_limit(grid)
    sigma = grid.midpoint
    if x > sigma + xbar or x < sigma - xbar:
        return 1
    if rule == CENTERED:
        inner = xbar / (1 + alpha)
        if sigma - inner < x < sigma + inner:
            return -1
    elif rule == LITERAL:
        if (sigma - xbar) / (1 + alpha) < x < (sigma + xbar) / (1 + alpha):
            return -1
    else:
        raise ValueError(f"unknown zoom-in rule {rule!r}")
    return 0


def max_consensus_step(own, incoming):
    return max(own, *incoming) if incoming else own


def min_consensus_step(own, incoming):
    return min(own, *incoming) if incoming else own


def init_agent(id: int, x0: float, g: Digraph, params: ProtocolParams) -> AgentState:
    """Agent at k = 0: zero surplus, initial grid, window variables reset."""
    grid = params.initial_grid()
    agent = AgentState(id=id, x=float(x0), s=0.0, zeta=0, M=0.0, mu=0.0,
                       grid=grid, out_degree=g.out_degree(id))
    return reset_window(agent, params)


def reset_window(agent: AgentState, params: ProtocolParams) -> AgentState:
    """Start a new coordination window on the agent's current grid."""
    xq = agent.grid.midpoint + level_of(agent.x, agent.grid) * agent.grid.step
    zeta = compute_zeta(agent.x, agent.grid, params.alpha, params.zoom_in_rule)
    return replace(agent, zeta=zeta, M=xq, mu=xq)


def window_boundary_update(agent: AgentState, params: ProtocolParams) -> AgentState:
    """Apply the converged window decision, then open the next window.

    Order: midpoint shift to the mean of the window extrema, step zoom from
    the agreed flag, then reset of ``zeta``/``M``/``mu`` on the new grid.
    """
    grid = agent.grid
    sigma = 0.5 * (agent.M + agent.mu)
    step = grid.step
    if agent.zeta == 1:
        step = (1 + params.alpha) * step
    elif agent.zeta == -1:
        step = step / (1 + params.alpha)
    new = replace(agent, grid=QuantizerParams(grid.bits, step, sigma))
    return reset_window(new, params)


def build_message(agent: AgentState) -> RoundMessage:
    grid = agent.grid
    surplus_grid = QuantizerParams(grid.bits, grid.step, 0.0)
    return RoundMessage(
        x_level=level_of(agent.x, grid),
        s_level=level_of(agent.s, surplus_grid),
        zeta=agent.zeta,
        M_level=to_level(agent.M, grid),
        mu_level=to_level(agent.mu, grid),
        out_degree=agent.out_degree,
    )


def encode_message(m: RoundMessage, bits: int) -> bytes:
    """Bit layout, MSB first: x | s | M | mu (``bits`` each) | zeta (2) | out-degree (16)."""
    lmax = (1 << (bits - 1)) - 1
    mask = (1 << bits) - 1
    value = 0
    for level in (m.x_level, m.s_level, m.M_level, m.mu_level):
        if abs(level) > lmax:
            raise ValueError(f"level {level} does not fit in {bits} bits")
        value = (value << bits) | (level & mask)
    if m.zeta not in _ZETA_CODE:
        raise ValueError(f"zeta must be -1, 0 or 1, got {m.zeta}")
    value = (value << ZETA_BITS) | _ZETA_CODE[m.zeta]
    if not 0 <= m.out_degree < (1 << DEGREE_BITS):
        raise ValueError(f"out_degree {m.out_degree} does not fit in {DEGREE_BITS} bits")
    value = (value << DEGREE_BITS) | m.out_degree
    nbits = message_bits(bits)
    pad = -nbits % 8
    return (value << pad).to_bytes((nbits + pad) // 8, "big")


def decode_message(data: bytes, bits: int) -> RoundMessage:
    nbits = message_bits(bits)
    pad = -nbits % 8
    if len(data) != (nbits + pad) // 8:
        raise ValueError(f"expected {(nbits + pad) // 8} bytes, got {len(data)}")
    value = int.from_bytes(data, "big")
    if value & ((1 << pad) - 1):
        raise ValueError("non-zero padding bits")
    value >>= pad
    degree = value & ((1 << DEGREE_BITS) - 1)
    value >>= DEGREE_BITS
    zcode = value & 0b11
    if zcode not in _ZETA_FROM_CODE:
        raise ValueError("invalid zeta code")
    value >>= ZETA_BITS
    half = 1 << (bits - 1)
    mask = (1 << bits) - 1
    levels = []
    for _ in range(4):
        code = value & mask
        value >>= bits
        if code == half:
            raise ValueError("reserved level code encountered")
        levels.append(code - (1 << bits) if code > half else code)
    mu_level, M_level, s_level, x_level = levels
    return RoundMessage(x_level, s_level, _ZETA_FROM_CODE[zcode], M_level, mu_level, degree)


def push_pull_update(x: float, s: float, xq_own: float, sq_own: float, in_degree: int,
                     out_degree: int, received: Sequence[tuple[float, float, int]],
                     gamma: float) -> tuple[float, float]:
    """One push-pull step from already-decoded values.

    ``received`` holds ``(x_i, s_i, out_degree_i)`` for each in-neighbour.
    The agent's own transmitted values enter through the diagonal weights so
    that the network sum of ``x + s`` is preserved.
    """
    r = 1.0 / (1 + in_degree)
    xq_sum = 0.0
    s_push = 0.0
    for xi, si, di in received:
        xq_sum += xi
        s_push += si / (1 + di)
    x_new = x + gamma * s + (r - 1.0) * xq_own + r * xq_sum
    c_own = 1.0 / (1 + out_degree)
    s_new = s + x - x_new + (c_own - 1.0) * sq_own + s_push
    return x_new, s_new


def consensus_update(agent: AgentState, incoming: Sequence[tuple[RoundMessage, int]],
                     g: Digraph, gamma: float,
                     own: RoundMessage | None = None) -> tuple[float, float]:
    """New ``(x, s)`` for ``agent`` from one message per in-neighbour."""
    expected = g.in_neighbors(agent.id)
    senders = sorted(sender for _, sender in incoming)
    if senders != list(expected):
        raise ProtocolError(
            f"agent {agent.id}: expected messages from {list(expected)}, got {senders}")
    if own is None:
        own = build_message(agent)
    grid = agent.grid
    step, sigma = grid.step, grid.midpoint
    lmax = grid.max_level
    received = []
    for msg, sender in incoming:
        if abs(msg.x_level) > lmax or abs(msg.s_level) > lmax:
            raise ProtocolError(f"agent {agent.id}: level out of range from {sender}")
        received.append((sigma + msg.x_level * step, msg.s_level * step, msg.out_degree))
    return push_pull_update(agent.x, agent.s, sigma + own.x_level * step, own.s_level * step,
                            len(expected), agent.out_degree, received, gamma)


def coordination_update(agent: AgentState, incoming: Sequence[tuple[RoundMessage, int]]
                        ) -> tuple[int, float, float]:
    """New ``(zeta, M, mu)`` after one max/min-consensus step."""
    grid = agent.grid
    zeta = max_consensus_step(agent.zeta, [m.zeta for m, _ in incoming])
    M = max_consensus_step(agent.M, [from_level(m.M_level, grid) for m, _ in incoming])
    mu = min_consensus_step(agent.mu, [from_level(m.mu_level, grid) for m, _ in incoming])
    return zeta, M, mu

