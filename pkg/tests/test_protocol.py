import random

import numpy as np
import pytest

from ppacdc.analysis import weight_matrices
from ppacdc.graph import Digraph, random_strongly_connected, ring
from ppacdc.protocol import (
    LITERAL,
    AgentState,
    ProtocolError,
    ProtocolParams,
    RoundMessage,
    build_message,
    compute_zeta,
    consensus_update,
    coordination_update,
    decode_message,
    encode_message,
    init_agent,
    max_consensus_step,
    message_bits,
    min_consensus_step,
    reset_window,
    window_boundary_update,
)
from ppacdc.quantizer import QuantizerParams, quantize

PARAMS = ProtocolParams(gamma=0.2, alpha=1.2, d_bar=4, bits=3)
G3 = QuantizerParams(3, 1.0, 0.0)


def test_zeta_examples():
    assert compute_zeta(3.5 + 1, G3, 1.2) == 1
    assert compute_zeta(-4.6, G3, 1.2) == 1
    assert compute_zeta(0.0, G3, 1.2) == -1
    assert compute_zeta(0.0, G3, 1.2, LITERAL) == -1
    assert compute_zeta(2.0, G3, 1.2) == 0
    assert compute_zeta(1.5, G3, 1.2) == -1  # 3.5 / 2.2 = 1.59
    assert compute_zeta(1.6, G3, 1.2) == 0
    # boundary points belong to neither strict region
    assert compute_zeta(3.5, G3, 1.2) == 0
    assert compute_zeta(3.5 / 2.2, G3, 1.2) == 0


def test_zeta_rules_differ_off_center():
    g = QuantizerParams(3, 1.0, 10.0)
    # centered region is (10 - 1.59, 10 + 1.59); literal is (6.5/2.2, 13.5/2.2)
    assert compute_zeta(10.0, g, 1.2) == -1
    assert compute_zeta(10.0, g, 1.2, LITERAL) == 0
    g3 = QuantizerParams(3, 1.0, 3.0)
    # literal region (-0.5/2.2, 6.5/2.2); centered region (3 - 1.59, 3 + 1.59)
    assert compute_zeta(0.0, g3, 1.2, LITERAL) == -1
    assert compute_zeta(0.0, g3, 1.2) == 0
    with pytest.raises(ValueError):
        compute_zeta(10.0, g, 1.2, "other")


def test_zeta_is_monotone_in_distance():
    order = {-1: 0, 0: 1, 1: 2}
    ds = np.linspace(0, 10, 2001)
    for sign in (1, -1):
        flags = [order[compute_zeta(10.0 + sign * d, QuantizerParams(3, 1.0, 10.0), 1.2)]
                 for d in ds]
        assert flags == sorted(flags)


def test_max_min_steps():
    assert max_consensus_step(0, [1, -1]) == 1
    assert min_consensus_step(0, [1, -1]) == -1
    assert max_consensus_step(5, []) == 5
    assert min_consensus_step(5, []) == 5


def test_max_consensus_on_ring_takes_diameter_steps():
    g = ring(5)
    vals = [3.0, 9.0, 1.0, 4.0, 7.0]
    for step in range(4):
        vals = [max_consensus_step(vals[j], [vals[i] for i in g.in_neighbors(j)])
                for j in range(5)]
        if step < 3:
            assert len(set(vals)) > 1
    assert vals == [9.0] * 5


def _agents(g, xs, ss, params):
    out = []
    for j, (x, s) in enumerate(zip(xs, ss)):
        a = init_agent(j, x, g, params)
        a.s = s
        out.append(a)
    return out


def _incoming(agents, g, j):
    return [(build_message(agents[i]), i) for i in g.in_neighbors(j)]


def test_consensus_fixed_point():
    g = random_strongly_connected(6, 0.3, 2)
    params = ProtocolParams(0.2, 1.2, 5, 8)
    agents = _agents(g, [3.0] * 6, [0.0] * 6, params)
    for a in agents:
        assert consensus_update(a, _incoming(agents, g, a.id), g, 0.2) == (3.0, 0.0)


def test_two_node_mass_in_exact_values():
    # grid fine enough that 0 and 2 are on it: zero quantization error
    g = Digraph.from_edges(2, [(0, 1), (1, 0)])
    params = ProtocolParams(0.2, 1.2, 1, 8)
    agents = _agents(g, [0.0, 2.0], [0.0, 0.0], params)
    new = [consensus_update(a, _incoming(agents, g, a.id), g, 0.2) for a in agents]
    assert sum(x + s for x, s in new) == pytest.approx(2.0, abs=1e-15)
    assert new[0] == (1.0, -1.0)


def test_consensus_matches_dense_form():
    rnd = random.Random(0)
    for seed in range(20):
        n = rnd.randint(2, 9)
        g = random_strongly_connected(n, rnd.random() * 0.5, seed)
        bits = rnd.randint(2, 12)
        step = rnd.uniform(0.1, 5.0)
        sigma = rnd.uniform(-10, 10)
        gamma = rnd.uniform(0.05, 0.5)
        params = ProtocolParams(gamma, 1.2, n, bits, delta0=step, sigma0=sigma)
        xs = [rnd.uniform(-30, 30) for _ in range(n)]
        ss = [rnd.uniform(-5, 5) for _ in range(n)]
        agents = _agents(g, xs, ss, params)
        new = np.array([consensus_update(a, _incoming(agents, g, a.id), g, gamma)
                        for a in agents])
        R, C = weight_matrices(g)
        grid = params.initial_grid()
        xq = np.array([quantize(x, grid) for x in xs])
        sq = np.array([quantize(s, grid.with_midpoint(0.0)) for s in ss])
        x, s = np.array(xs), np.array(ss)
        x_new = x + gamma * s + (R - np.eye(n)) @ xq
        s_new = s + x - x_new + (C - np.eye(n)) @ sq
        assert np.allclose(new[:, 0], x_new, rtol=0, atol=1e-12)
        assert np.allclose(new[:, 1], s_new, rtol=0, atol=1e-12)


def test_consensus_rejects_missing_or_duplicate_messages():
    g = random_strongly_connected(5, 0.5, 1)
    agents = _agents(g, [1.0, 2, 3, 4, 5], [0.0] * 5, PARAMS)
    j = next(j for j in range(5) if g.in_degree(j) >= 2)
    inc = _incoming(agents, g, j)
    with pytest.raises(ProtocolError):
        consensus_update(agents[j], inc[:-1], g, 0.2)
    with pytest.raises(ProtocolError):
        consensus_update(agents[j], inc + inc[:1], g, 0.2)


def _boundary_agent(zeta, step, M=0.0, mu=0.0, sigma=0.0):
    grid = QuantizerParams(12, step, sigma)
    return AgentState(0, 0.0, 0.0, zeta, M, mu, grid, 1)


def test_boundary_zoom_examples():
    out = window_boundary_update(_boundary_agent(1, 1.0), PARAMS)
    assert out.grid.step == pytest.approx(2.2, abs=1e-15)
    back = window_boundary_update(_boundary_agent(-1, 2.2), PARAMS)
    assert back.grid.step == pytest.approx(1.0, abs=1e-15)


def test_boundary_fixed_point_and_order():
    a = _boundary_agent(0, 0.5, M=4.0, mu=4.0, sigma=4.0)
    a.x = 4.0
    out = window_boundary_update(a, PARAMS)
    assert out.grid == a.grid
    # shift uses the old extrema, zoom then applies, reset happens on the new grid
    b = _boundary_agent(1, 1.0, M=6.0, mu=2.0)
    b.x = 4.7
    out = window_boundary_update(b, PARAMS)
    assert out.grid.midpoint == 4.0
    assert out.grid.step == pytest.approx(2.2)
    assert out.M == out.mu == quantize(4.7, out.grid)
    assert out.zeta == -1


def test_single_zoom_round_trip():
    for step in (1.0, 0.37, 123.4, 2.2e-9):
        out = window_boundary_update(_boundary_agent(1, step), PARAMS).grid.step
        back = window_boundary_update(_boundary_agent(-1, out), PARAMS).grid.step
        assert abs(back - step) <= 1e-15 * step


def test_zoom_round_trip_is_close():
    step = 1.0
    for _ in range(40):
        step = window_boundary_update(_boundary_agent(1, step), PARAMS).grid.step
    for _ in range(40):
        step = window_boundary_update(_boundary_agent(-1, step), PARAMS).grid.step
    assert abs(step - 1.0) <= 1e-13


def test_reset_window_on_current_grid():
    a = AgentState(0, 2.4, 0.0, 1, 99.0, -99.0, G3, 1)
    r = reset_window(a, PARAMS)
    assert (r.M, r.mu, r.zeta) == (2.0, 2.0, 0)


def test_zero_message_encoding():
    m = RoundMessage(0, 0, 0, 0, 0, 1)
    data = encode_message(m, 3)
    assert message_bits(3) == 30
    assert data == b"\x00\x00\x00\x04"
    assert decode_message(data, 3) == m


def test_message_round_trip():
    rnd = random.Random(5)
    for _ in range(500):
        bits = rnd.randint(2, 30)
        lmax = 2 ** (bits - 1) - 1
        m = RoundMessage(*(rnd.randint(-lmax, lmax) for _ in range(2)),
                         rnd.choice([-1, 0, 1]),
                         *(rnd.randint(-lmax, lmax) for _ in range(2)),
                         rnd.randint(0, 2**16 - 1))
        data = encode_message(m, bits)
        assert len(data) == (4 * bits + 18 + 7) // 8
        assert decode_message(data, bits) == m


def test_codec_rejections():
    with pytest.raises(ValueError):
        encode_message(RoundMessage(0, 0, 0, 0, 0, 2**16), 3)
    with pytest.raises(ValueError):
        encode_message(RoundMessage(4, 0, 0, 0, 0, 1), 3)
    with pytest.raises(ValueError):
        encode_message(RoundMessage(0, 0, 2, 0, 0, 1), 3)
    with pytest.raises(ValueError):
        decode_message(b"\x00\x00\x00", 3)
    with pytest.raises(ValueError):
        decode_message(b"\x00\x00\x00\x05", 3)  # padding bit set
    with pytest.raises(ValueError):
        decode_message(b"\x80\x00\x00\x00", 3)  # reserved x code


def test_bits_per_round_five_ring():
    assert ring(5).edge_count * message_bits(12) == 330


def test_build_message_levels():
    g = ring(3)
    a = init_agent(0, 2.4, g, PARAMS)
    a.s = -1.6
    m = build_message(a)
    assert (m.x_level, m.s_level, m.M_level, m.mu_level, m.zeta, m.out_degree) == (
        2, -2, 2, 2, 0, 1)


def test_coordination_update():
    g = ring(3)
    agents = _agents(g, [2.4, -3.0, 0.2], [0.0] * 3, PARAMS)
    # node 0 hears only node 2
    zeta, M, mu = coordination_update(agents[0], _incoming(agents, g, 0))
    assert (zeta, M, mu) == (0, 2.0, 0.0)
    zeta, M, mu = coordination_update(agents[1], _incoming(agents, g, 1))
    assert (zeta, M, mu) == (0, 2.0, -3.0)


def test_params_validation():
    for kw in ({"gamma": 0}, {"alpha": -1}, {"d_bar": 0}, {"bits": 1}, {"delta0": 0},
               {"zoom_in_rule": "x"}):
        args = dict(gamma=0.2, alpha=1.2, d_bar=4, bits=3) | kw
        with pytest.raises(ValueError):
            ProtocolParams(**args)
