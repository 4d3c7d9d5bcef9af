"""A deterministic stand-in for a chat model.

It reads the rendered user message, picks a window with simple delay/loss
rules, and answers in one of a few textual shapes (bare JSON, fenced JSON,
JSON wrapped in prose) so that replayed runs also exercise the parser.
Used for offline runs and to record the shipped cassettes.
"""

from __future__ import annotations

import re

from .llmclient import ChatRequest, request_key
from .netsim import MSS

_FIELD = re.compile(r"^([A-Za-z_ ()]+?):\s*(.+)$")


def parse_user_text(text: str) -> dict:
    fields = {}
    for line in text.splitlines():
        m = _FIELD.match(line.strip())
        if not m:
            continue
        name, value = m.group(1).strip(), m.group(2).strip()
        if value.startswith("["):
            inner = value.strip("[]").strip()
            fields[name] = [float(v) for v in inner.split(",")] if inner else []
        else:
            try:
                fields[name] = float(value)
            except ValueError:
                fields[name] = value
    return fields


class RuleResponder:
    def __init__(self, rtt_rise: float = 0.004, rtt_flat: float = 0.002):
        self.rtt_rise = rtt_rise
        self.rtt_flat = rtt_flat

    def decide(self, fields: dict) -> int:
        cwnd = int(fields.get("current_cwnd", 10 * MSS))
        retx = int(fields.get("current_retransmit_packet", 0))
        d_rtt = fields.get("current_rtt", 0.0) - fields.get("last_rtt", 0.0)
        d_tp = fields.get("current_throughput", 0.0) - fields.get("last_throughput", 0.0)
        history = fields.get("history_cwnd", [])
        if history and max(history) < 10 * MSS and cwnd < 10 * MSS:
            return 10 * MSS
        if retx >= 3:
            return cwnd // 2
        if retx > 0:
            return cwnd * 3 // 4
        if d_rtt >= self.rtt_rise:
            return cwnd * 9 // 10
        if abs(d_rtt) <= self.rtt_flat and d_tp >= 0:
            return cwnd + MSS
        return cwnd

    def __call__(self, req: ChatRequest) -> str:
        value = self.decide(parse_user_text(req.user_text))
        body = f'{{"next_CWND": {value}, "next_SSThreshold": {value}}}'
        shape = int(request_key(req)[:2], 16) % 3
        if shape == 0:
            return body
        if shape == 1:
            return f"```json\n{body}\n```"
        return f"Based on the statistics, the suggested parameters are:\n{body}\nThese keep the queue short."
