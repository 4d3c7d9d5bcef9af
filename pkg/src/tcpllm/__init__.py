"""Packet-level congestion-control simulator with LLM-driven and heuristic window policies."""

__version__ = "0.1.0"
