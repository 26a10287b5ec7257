"""Quantized push-pull average consensus with dynamic quantizer zooming."""

from ppacdc.graph import Digraph, random_strongly_connected, ring
from ppacdc.protocol import AgentState, ProtocolParams, RoundMessage
from ppacdc.quantizer import QuantizerParams, quantize, range_limit
from ppacdc.sim import RunResult, SimConfig, TraceRecord, run, sweep

__all__ = [
    "AgentState",
    "Digraph",
    "ProtocolParams",
    "QuantizerParams",
    "RoundMessage",
    "RunResult",
    "SimConfig",
    "TraceRecord",
    "quantize",
    "random_strongly_connected",
    "range_limit",
    "ring",
    "run",
    "sweep",
]

__version__ = "0.1.0"
