"""Radio medium: log-distance path loss, per-frame shadowing and capture.

Reception of two overlapping frames follows a capture rule: the earlier
starter is decoded when its RSSI lead, plus a bonus for having started first,
reaches the capture threshold; the later one is decoded when it leads by the
same amount; anything in between is a collision. With the default 5 dB
threshold the undecodable band is 10 dB wide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Mapping, Sequence, Union

import numpy as np

# dB arithmetic on floats; boundary margins must still decode
EPS_DB = 1e-9


class RadioError(Exception):
    pass


class NonPositiveDistance(RadioError, ValueError):
    pass


class UnknownNode(RadioError, KeyError):
    pass


class MoreThanTwoAttempts(RadioError):
    pass


@dataclass(frozen=True)
class RadioEnvironment:
    positions: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    reference_loss_db: float = 40.0
    reference_distance_m: float = 1.0
    path_loss_exponent: float = 2.0
    shadowing_sigma_db: float = 2.0
    noise_floor_dbm: float | None = None  # anechoic chamber: no noise
    sensitivity_dbm: float = -92.0
    capture_threshold_db: float = 5.0
    tx_power_range: tuple[float, float] = (-16.0, 3.6)
    bias_slope_db_per_us: float = 1.0
    bias_saturation_db: float = 5.0
    max_clock_error_us: int = 20

    def __post_init__(self):
        if self.path_loss_exponent < 1:
            raise ValueError("path_loss_exponent must be >= 1")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if self.capture_threshold_db <= 0:
            raise ValueError("capture_threshold_db must be > 0")
        if self.reference_distance_m <= 0:
            raise ValueError("reference_distance_m must be > 0")
        lo, hi = self.tx_power_range
        if lo > hi:
            raise ValueError("tx_power_range must be [min, max]")
        if self.bias_slope_db_per_us < 0 or self.bias_saturation_db < 0:
            raise ValueError("timing bias must be non-negative")

    def clamp_power(self, dbm: float) -> float:
        lo, hi = self.tx_power_range
        return min(max(dbm, lo), hi)

    @property
    def decode_floor_dbm(self) -> float:
        if self.noise_floor_dbm is None:
            return self.sensitivity_dbm
        return max(self.sensitivity_dbm, self.noise_floor_dbm + self.capture_threshold_db)


@dataclass(frozen=True)
class TransmissionAttempt:
    transmitter: int
    tx_power_dbm: float
    start_offset_us: int = 0
    frame: object = None


@dataclass(frozen=True)
class Received:
    source: int
    rssi_dbm: float
    kind: ClassVar[str] = "received"


@dataclass(frozen=True)
class CapturedOther:
    source: int
    rssi_dbm: float
    kind: ClassVar[str] = "captured-other"


@dataclass(frozen=True)
class Collision:
    kind: ClassVar[str] = "collision"


@dataclass(frozen=True)
class BelowSensitivity:
    kind: ClassVar[str] = "below-sensitivity"


@dataclass(frozen=True)
class Silent:
    kind: ClassVar[str] = "silent"


RxOutcome = Union[Received, CapturedOther, Collision, BelowSensitivity, Silent]


def distance_m(env: RadioEnvironment, a: int, b: int) -> float:
    try:
        (xa, ya), (xb, yb) = env.positions[a], env.positions[b]
    except KeyError as exc:
        raise UnknownNode(exc.args[0]) from None
    return math.hypot(xa - xb, ya - yb)


def path_loss_db(env: RadioEnvironment, distance: float) -> float:
    if distance <= 0:
        raise NonPositiveDistance(f"distance must be > 0, got {distance}")
    d = max(distance, env.reference_distance_m)
    return env.reference_loss_db + 10.0 * env.path_loss_exponent * math.log10(d / env.reference_distance_m)


def mean_rssi_dbm(env: RadioEnvironment, transmitter: int, receiver: int, tx_power_dbm: float) -> float:
    """RSSI without shadowing."""
    return tx_power_dbm - path_loss_db(env, distance_m(env, transmitter, receiver))


def rssi_dbm(
    env: RadioEnvironment,
    transmitter: int,
    receiver: int,
    tx_power_dbm: float,
    rng: np.random.Generator,
) -> float:
    value = mean_rssi_dbm(env, transmitter, receiver, tx_power_dbm)
    if env.shadowing_sigma_db > 0:
        value += float(rng.normal(0.0, env.shadowing_sigma_db))
    return value


def timing_bias_db(env: RadioEnvironment, advance_us: float) -> float:
    """Capture bonus for starting ``advance_us`` ahead; zero at 0, saturating."""
    if advance_us <= 0:
        return 0.0
    return min(env.bias_slope_db_per_us * advance_us, env.bias_saturation_db)


def decide(
    env: RadioEnvironment,
    sources: Sequence[int],
    rssis: Sequence[float],
    offsets: Sequence[int],
    expected: int | None = None,
) -> RxOutcome:
    """Capture decision on already-drawn RSSI values.

    ``expected`` is the transmitter this receiver is scheduled to hear; a
    decoded frame from anyone else is :class:`CapturedOther`. With no
    expectation every decoded frame counts as received.
    """
    n = len(sources)
    if n == 0:
        return Silent()
    if n > 2:
        raise MoreThanTwoAttempts(f"{n} overlapping attempts")

    def label(i: int) -> RxOutcome:
        if rssis[i] < env.decode_floor_dbm:
            return BelowSensitivity()
        if expected is None or sources[i] == expected:
            return Received(sources[i], rssis[i])
        return CapturedOther(sources[i], rssis[i])

    if n == 1:
        return label(0)
    if max(rssis) < env.decode_floor_dbm:
        return BelowSensitivity()
    early, late = (0, 1) if offsets[0] <= offsets[1] else (1, 0)
    margin = rssis[early] - rssis[late] + timing_bias_db(env, offsets[late] - offsets[early])
    theta = env.capture_threshold_db
    if margin >= theta - EPS_DB:
        return label(early)
    if margin <= -theta + EPS_DB:
        return label(late)
    return Collision()


def resolve_reception(
    env: RadioEnvironment,
    receiver: int,
    attempts: Sequence[TransmissionAttempt],
    rng: np.random.Generator,
    expected: int | None = None,
) -> RxOutcome:
    if len(attempts) > 2:
        raise MoreThanTwoAttempts(f"{len(attempts)} overlapping attempts")
    rssis = [rssi_dbm(env, t.transmitter, receiver, t.tx_power_dbm, rng) for t in attempts]
    return decide(
        env,
        [t.transmitter for t in attempts],
        rssis,
        [t.start_offset_us for t in attempts],
        expected,
    )
