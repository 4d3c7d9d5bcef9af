"""When to consult the policy: latency threshold with cooldown, or ACK count."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .simcore import SEC


class NoLossObserved(RuntimeError):
    pass


@dataclass
class CalibrationRecord:
    """What a probe run (NewReno by default) leaves behind for calibration."""

    first_loss_rtt: int | None
    ack_times: list[int]
    duration: int
    probe_mode: str = "NewReno"

    def acks_before(self, t: int) -> int:
        return sum(1 for a in self.ack_times if a < t)


@dataclass
class LatencyTriggerConfig:
    baseline_first_loss_latency: int
    alpha: float = 0.7
    cooldown: int = 2 * SEC

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.threshold <= 0:
            raise ValueError("latency threshold must be positive")

    @property
    def threshold(self) -> int:
        return int(Decimal(self.baseline_first_loss_latency) * Decimal(str(self.alpha)))


@dataclass
class AckTriggerConfig:
    baseline_ack_count_10s: int
    beta: float = 0.1

    def __post_init__(self):
        if self.threshold_acks < 1:
            raise ValueError("ACK threshold must be at least 1")

    @property
    def threshold_acks(self) -> int:
        base = round_to_thousand(self.baseline_ack_count_10s)
        return int((Decimal(base) * Decimal(str(self.beta))).to_integral_value(ROUND_HALF_UP))


@dataclass
class TriggerState:
    last_fire_at: int | None = None
    acks_since_fire: int = 0
    fires: int = 0


def round_to_thousand(n: int) -> int:
    """Nearest thousand, halves away from zero (7500 -> 8000, -7500 -> -8000)."""
    return int((Decimal(n) / 1000).to_integral_value(ROUND_HALF_UP)) * 1000


def calibrate_latency(record: CalibrationRecord, alpha: float = 0.7, cooldown: int = 2 * SEC) -> LatencyTriggerConfig:
    if record.first_loss_rtt is None:
        raise NoLossObserved("calibration run saw no packet loss")
    return LatencyTriggerConfig(record.first_loss_rtt, alpha, cooldown)


def calibrate_ack(record: CalibrationRecord, beta: float = 0.1, window: int = 10 * SEC) -> AckTriggerConfig:
    if record.duration < window:
        raise ValueError("calibration run shorter than the counting window")
    return AckTriggerConfig(record.acks_before(window), beta)


def should_fire_latency(cfg: LatencyTriggerConfig, st: TriggerState, latest_rtt: int, now: int) -> bool:
    if latest_rtt <= cfg.threshold:
        return False
    if st.last_fire_at is not None and now - st.last_fire_at < cfg.cooldown:
        return False
    st.last_fire_at = now
    st.fires += 1
    return True


def note_ack(st: TriggerState) -> None:
    st.acks_since_fire += 1


def should_fire_ack(cfg: AckTriggerConfig, st: TriggerState, now: int) -> bool:
    if st.acks_since_fire < cfg.threshold_acks:
        return False
    st.acks_since_fire = 0
    st.last_fire_at = now
    st.fires += 1
    return True
