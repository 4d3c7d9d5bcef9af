"""Snapshots, prompt rendering, response parsing and guardrails for LLM consults."""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Sequence

from .llmclient import ChatRequest, request_key
from .netsim import MSS
from .simcore import SEC
from .transport import NoMeasurement, PathSample, Phase, FlowState, on_ack_newreno
from .trigger import (AckTriggerConfig, LatencyTriggerConfig, TriggerState, note_ack, should_fire_ack,
                      should_fire_latency)

PROMPT_VERSION = "1"


class PromptScheme(enum.Enum):
    MATH_L = "MathL"
    NATURAL_L = "NaturalL"
    GENERAL_G = "GeneralG"
    GENERAL_G_AGGRESSIVE = "GeneralGAggressive"


_TEMPLATE_FILES = {
    PromptScheme.MATH_L: "math_l.txt",
    PromptScheme.NATURAL_L: "natural_l.txt",
    PromptScheme.GENERAL_G: "general_g.txt",
    PromptScheme.GENERAL_G_AGGRESSIVE: "general_g_aggressive.txt",
}

_template_cache: dict[PromptScheme, str] = {}


def system_template(scheme: PromptScheme) -> str:
    if scheme not in _template_cache:
        path = resources.files("tcpllm") / "prompts" / _TEMPLATE_FILES[scheme]
        _template_cache[scheme] = path.read_text(encoding="utf-8")
    return _template_cache[scheme]


@dataclass
class NetSnapshot:
    last_cwnd: int
    current_cwnd: int
    ssthresh: int
    last_rtt: float  # seconds
    current_rtt: float
    last_throughput: float  # Mb/s
    current_throughput: float
    current_retransmit_packets: int
    history_cwnd: list[int] = field(default_factory=list)
    history_rtt: list[float] = field(default_factory=list)
    history_throughput: list[float] = field(default_factory=list)
    history_retransmit: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class EmptyRing(ValueError):
    pass


def build_snapshot(ring: Sequence[PathSample], history_len: int = 4) -> NetSnapshot:
    """Newest sample is ``ring[-1]``; histories come back most-recent-first."""
    if len(ring) == 0:
        raise EmptyRing("no path samples recorded")
    if history_len < 1:
        raise ValueError("history length must be >= 1")
    newest = list(ring)[-history_len:][::-1]
    cur = ring[-1]
    last = ring[-2] if len(ring) >= 2 else cur
    return NetSnapshot(
        last_cwnd=last.cwnd,
        current_cwnd=cur.cwnd,
        ssthresh=cur.ssthresh,
        last_rtt=last.rtt / SEC,
        current_rtt=cur.rtt / SEC,
        last_throughput=last.throughput / 1e6,
        current_throughput=cur.throughput / 1e6,
        current_retransmit_packets=cur.retransmits_since_last_sample,
        history_cwnd=[s.cwnd for s in newest],
        history_rtt=[s.rtt / SEC for s in newest],
        history_throughput=[s.throughput / 1e6 for s in newest],
        history_retransmit=[s.retransmits_since_last_sample for s in newest],
    )


def _secs(x: float) -> str:
    return f"{x:.6f}"


def _mbps(x: float) -> str:
    return f"{x:.4f}"


def _list(values, fmt) -> str:
    return "[" + ", ".join(fmt(v) for v in values) + "]"


def render_user(scheme: PromptScheme, snap: NetSnapshot) -> str:
    if scheme in (PromptScheme.MATH_L, PromptScheme.NATURAL_L):
        lines = [
            f"last_cwnd: {snap.last_cwnd}",
            f"current_cwnd: {snap.current_cwnd}",
            f"ssthreshold: {snap.ssthresh}",
            f"last_rtt: {_secs(snap.last_rtt)}",
            f"current_rtt: {_secs(snap.current_rtt)}",
            f"current_throughput: {_mbps(snap.current_throughput)}",
            f"last_throughput: {_mbps(snap.last_throughput)}",
            f"CWNDs (most recent first): {_list(snap.history_cwnd, str)}",
            f"RTTs (most recent first): {_list(snap.history_rtt, _secs)}",
            f"Throughput values (most recent first): {_list(snap.history_throughput, _mbps)}",
        ]
    else:
        lines = [
            f"last_cwnd: {snap.last_cwnd}",
            f"current_cwnd: {snap.current_cwnd}",
            f"ssthreshold: {snap.ssthresh}",
            f"last_rtt: {_secs(snap.last_rtt)}",
            f"current_rtt: {_secs(snap.current_rtt)}",
            f"last_throughput: {_mbps(snap.last_throughput)}",
            f"current_throughput: {_mbps(snap.current_throughput)}",
            f"current_retransmit_packet: {snap.current_retransmit_packets}",
            f"history_cwnd: {_list(snap.history_cwnd, str)}",
            f"history_rtt: {_list(snap.history_rtt, _secs)}",
            f"history_throughput: {_list(snap.history_throughput, _mbps)}",
            f"history_retransmit_packet: {_list(snap.history_retransmit, str)}",
        ]
    return "\n".join(lines) + "\n"


def render_prompt(scheme: PromptScheme, snap: NetSnapshot) -> tuple[str, str]:
    """Return ``(system, user)``. Pure: same inputs give the same bytes."""
    return system_template(scheme), render_user(scheme, snap)


# -- parsing ----------------------------------------------------------------------


class ParseError(ValueError):
    NO_OBJECT = "NoObject"
    MISSING_KEY = "MissingKey"
    NON_NUMERIC = "NonNumeric"

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind


@dataclass
class LlmDecision:
    next_cwnd: int
    next_ssthresh: int
    raw_text: str = ""
    clamped: bool = False


_decoder = json.JSONDecoder()


def _first_object(text: str) -> dict | None:
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = _decoder.raw_decode(text, m.start())
        except (ValueError, RecursionError):
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _as_bytes(obj: dict, key: str) -> int:
    if key not in obj:
        raise ParseError(ParseError.MISSING_KEY, key)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(ParseError.NON_NUMERIC, f"{key}={v!r}")
    if isinstance(v, float) and not math.isfinite(v):
        raise ParseError(ParseError.NON_NUMERIC, f"{key}={v!r}")
    return math.floor(v)


def parse_decision(text: str) -> LlmDecision:
    """Extract ``next_CWND``/``next_SSThreshold`` from the first JSON object in ``text``.

    Code fences and surrounding prose are tolerated. Fractional values are
    floored to whole bytes. Any failure is reported as :class:`ParseError`.
    """
    if not isinstance(text, str):
        raise ParseError(ParseError.NO_OBJECT, "response is not text")
    obj = _first_object(text)
    if obj is None:
        raise ParseError(ParseError.NO_OBJECT)
    cwnd = _as_bytes(obj, "next_CWND")
    ssthresh = _as_bytes(obj, "next_SSThreshold")
    return LlmDecision(next_cwnd=cwnd, next_ssthresh=ssthresh, raw_text=text)


# -- guardrails ---------------------------------------------------------------------


@dataclass
class GuardrailConfig:
    mss_floor: int = MSS
    l_mode_max_step_fraction: float = 0.5
    g_mode_min_fraction_of_current: float = 0.1
    cwnd_hard_cap: int = 10_000_000

    def __post_init__(self):
        for f in (self.l_mode_max_step_fraction, self.g_mode_min_fraction_of_current):
            if not 0 < f <= 1:
                raise ValueError("guardrail fractions must be in (0, 1]")
        if self.cwnd_hard_cap < self.mss_floor:
            raise ValueError("hard cap below the MSS floor")


def apply_guardrails(d: LlmDecision, current_cwnd: int, mode: str, cfg: GuardrailConfig | None = None) -> LlmDecision:
    """Clamp a proposed window. ``mode`` is ``"L"`` or ``"G"``.

    L: at most +/- ``l_mode_max_step_fraction`` of the current window per step.
    G: decreases stop at ``g_mode_min_fraction_of_current`` of the current
    window; increases are only bounded by the hard cap. Both: MSS floor and
    hard cap. The returned ssthresh always equals the returned cwnd.
    """
    cfg = cfg or GuardrailConfig()
    proposed = d.next_cwnd
    value = proposed
    if mode == "L":
        step = cfg.l_mode_max_step_fraction
        lo = math.ceil(current_cwnd * (1 - step))
        hi = math.floor(current_cwnd * (1 + step))
        value = min(max(value, lo), hi)
    elif mode == "G":
        value = max(value, math.floor(current_cwnd * cfg.g_mode_min_fraction_of_current))
    else:
        raise ValueError(f"unknown guardrail mode {mode!r}")
    value = max(min(value, cfg.cwnd_hard_cap), cfg.mss_floor)
    return LlmDecision(next_cwnd=value, next_ssthresh=value, raw_text=d.raw_text, clamped=value != proposed)


def apply_decision(s: FlowState, d: LlmDecision) -> FlowState:
    s.cwnd = d.next_cwnd
    s.ssthresh = d.next_cwnd
    s.phase = Phase.CONGESTION_AVOIDANCE
    return s


# -- control hook -------------------------------------------------------------------


@dataclass
class DecisionRecord:
    t: float
    flow_id: int
    scheme: str
    reason: str
    snapshot: dict
    key: str
    raw_text: str
    proposed_cwnd: int | None
    applied_cwnd: int
    clamped: bool
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_MODE_SCHEME = {
    "TcpLlmL": PromptScheme.NATURAL_L,
    "TcpLlmG": PromptScheme.GENERAL_G,
    "TcpLlmGAggressive": PromptScheme.GENERAL_G_AGGRESSIVE,
}


class LlmControl:
    """Sender hook for TcpLlmL / TcpLlmG / TcpLlmGAggressive.

    Between consults the window follows NewReno. L mode consults on the
    latency trigger during congestion avoidance only; G modes consult on the
    ACK-count trigger (congestion avoidance and loss recovery) and on every
    third duplicate ACK.
    """

    def __init__(self, mode: str, client, *, latency_trigger: LatencyTriggerConfig | None = None,
                 ack_trigger: AckTriggerConfig | None = None, scheme: PromptScheme | None = None,
                 history_len: int = 4, guardrails: GuardrailConfig | None = None, model: str = "mock",
                 max_tokens: int = 64, decision_delay: int = 0, log: list | None = None):
        if mode not in _MODE_SCHEME:
            raise ValueError(f"not an LLM mode: {mode!r}")
        self.mode = mode
        self.guard_mode = "L" if mode == "TcpLlmL" else "G"
        if self.guard_mode == "L" and latency_trigger is None:
            raise ValueError("TcpLlmL needs a latency trigger")
        if self.guard_mode == "G" and ack_trigger is None:
            raise ValueError("TcpLlmG needs an ACK trigger")
        self.client = client
        self.latency_trigger = latency_trigger
        self.ack_trigger = ack_trigger
        self.scheme = scheme or _MODE_SCHEME[mode]
        self.history_len = history_len
        self.guardrails = guardrails or GuardrailConfig()
        self.model = model
        self.max_tokens = max_tokens
        self.decision_delay = decision_delay
        self.log = log if log is not None else []
        self.trigger_state = TriggerState()
        self.consults = 0

    def attach(self, sender) -> None:
        self.sender = sender

    def on_new_ack(self, acked: int) -> None:
        on_ack_newreno(self.sender.state, acked, self.sender.sim.now)

    def after_ack(self) -> None:
        s = self.sender
        phase = s.state.phase
        now = s.sim.now
        if self.guard_mode == "L":
            if phase is Phase.CONGESTION_AVOIDANCE and s.latest_rtt is not None:
                if should_fire_latency(self.latency_trigger, self.trigger_state, s.latest_rtt, now):
                    self.consult("latency")
        else:
            note_ack(self.trigger_state)
            if should_fire_ack(self.ack_trigger, self.trigger_state, now):
                if phase in (Phase.CONGESTION_AVOIDANCE, Phase.LOSS_RECOVERY):
                    self.consult("ack_count")

    def on_loss_consult(self, req) -> None:
        self.consult(req.reason)

    def consult(self, reason: str) -> None:
        s = self.sender
        try:
            if s.cfg.history_mode == "per_trigger":
                s.sample_path()
        except NoMeasurement:
            return
        if not s.samples:
            return
        snap = build_snapshot(s.samples, self.history_len)
        system, user = render_prompt(self.scheme, snap)
        req = ChatRequest(model_name=self.model, system_text=system, user_text=user,
                          temperature=0.0, max_tokens=self.max_tokens)
        text = self.client.complete(req)
        self.consults += 1
        current = s.state.cwnd
        error = None
        proposed = None
        try:
            parsed = parse_decision(text)
            proposed = parsed.next_cwnd
            decision = apply_guardrails(parsed, current, self.guard_mode, self.guardrails)
        except ParseError as exc:
            decision = None
            error = exc.kind
        applied = decision.next_cwnd if decision is not None else current
        self.log.append(DecisionRecord(
            t=round(s.sim.now / SEC, 6), flow_id=s.flow_id, scheme=self.scheme.value, reason=reason,
            snapshot=snap.to_dict(), key=request_key(req), raw_text=text, proposed_cwnd=proposed,
            applied_cwnd=applied, clamped=bool(decision and decision.clamped), error=error))
        if decision is None:
            return
        if self.decision_delay > 0:
            s.sim.schedule_in(self.decision_delay, self._apply, decision, label=f"decide{s.flow_id}")
        else:
            self._apply(decision)

    def _apply(self, decision: LlmDecision) -> None:
        apply_decision(self.sender.state, decision)
        self.sender.log_cwnd()
        self.sender.try_send()
