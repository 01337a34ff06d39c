"""Threshold-driven sensing feedback loop and episode objectives.

Each frame's echo-strength value is classified into one of four hypothesis
states by three ordered thresholds. The state chosen at frame t drives the
feedback actions applied at frame t+1: how much of the power budget the next
sensing transmission uses, how often a measurement is taken, and whether the
beam keeps sweeping (nothing seen yet) or holds on the sector that produced
the echo (candidate/detected/locked).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, TextIO

import numpy as np

from .radar import compute_resi, matched_filter, realize_channel, synthesize_rx_grid
from .scenario import ScenarioConfig, initial_target_state, propagate_target
from .seeding import derive_seed


class InfeasibleThresholdsError(ValueError):
    """Raised when a threshold vector violates the ordering/spacing contract."""


@dataclass(frozen=True)
class ThresholdVector:
    """Three ordered decision thresholds in echo-strength units."""

    t1: float
    t2: float
    t3: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(t) for t in (self.t1, self.t2, self.t3)):
            raise InfeasibleThresholdsError("thresholds must be finite")

    def validate(self, min_spacing: float) -> None:
        if self.t1 + min_spacing > self.t2 or self.t2 + min_spacing > self.t3:
            raise InfeasibleThresholdsError(
                f"thresholds {self.as_array()} violate spacing {min_spacing}"
            )

    def is_feasible(self, min_spacing: float) -> bool:
        return self.t1 + min_spacing <= self.t2 and self.t2 + min_spacing <= self.t3

    def as_array(self) -> np.ndarray:
        return np.array([self.t1, self.t2, self.t3])

    @classmethod
    def from_array(cls, values) -> "ThresholdVector":
        t1, t2, t3 = (float(v) for v in values)
        return cls(t1, t2, t3)


def classify(x: float, thresholds: ThresholdVector) -> int:
    """Map an echo-strength value to a hypothesis state (upper-inclusive).

    State 0 for x <= t1, 1 for t1 < x <= t2, 2 for t2 < x <= t3, 3 above.
    """
    if not (thresholds.t1 <= thresholds.t2 <= thresholds.t3):
        raise InfeasibleThresholdsError("thresholds must be ordered")
    if x <= thresholds.t1:
        return 0
    if x <= thresholds.t2:
        return 1
    if x <= thresholds.t3:
        return 2
    return 3


@dataclass(frozen=True)
class StateActionTable:
    """Per-state feedback actions: power scaling and sensing cadence.

    Power factors are fractions of the budget and must be non-increasing in
    the state index (a stronger echo needs less sensing power). Period
    multipliers stretch the measurement cadence; 1 means every frame.
    """

    power_factors: tuple[float, float, float, float] = (1.0, 0.8, 0.5, 0.2)
    # Once locked, coast every other frame: the echo is strong enough that
    # halving the cadence saves power without losing the track.
    period_multipliers: tuple[int, int, int, int] = (1, 1, 1, 2)

    def __post_init__(self) -> None:
        if any(not 0.0 <= f <= 1.0 for f in self.power_factors):
            raise ValueError("power factors must lie in [0, 1]")
        if any(a < b for a, b in zip(self.power_factors, self.power_factors[1:])):
            raise ValueError("power factors must be non-increasing in state index")
        if any(p < 1 for p in self.period_multipliers):
            raise ValueError("period multipliers must be positive integers")


DEFAULT_ACTIONS = StateActionTable()


@dataclass(frozen=True)
class EpisodeTrace:
    """Per-frame record of one closed-loop sensing episode."""

    resi: np.ndarray
    states: np.ndarray
    in_region: np.ndarray
    in_beam: np.ndarray
    power: np.ndarray
    horizon: int

    def __post_init__(self) -> None:
        n = self.horizon
        series = (self.resi, self.states, self.in_region, self.in_beam, self.power)
        if any(len(s) != n for s in series):
            raise ValueError("all series must cover the horizon")
        if np.any(self.power < 0) or np.any(self.power > 1):
            raise ValueError("power fractions must lie in [0, 1]")

    def to_csv(self, stream: TextIO) -> None:
        stream.write("frame,resi,state,in_region,in_beam,power_fraction\n")
        for t in range(self.horizon):
            stream.write(
                f"{t},{self.resi[t]!r},{int(self.states[t])},"
                f"{int(self.in_region[t])},{int(self.in_beam[t])},{self.power[t]!r}\n"
            )


def run_episode(
    scenario: ScenarioConfig,
    thresholds: ThresholdVector,
    actions: StateActionTable = DEFAULT_ACTIONS,
    seed: int = 0,
    fidelity: float = 1.0,
) -> EpisodeTrace:
    """Simulate the closed loop for ``ceil(fidelity * frame_count)`` frames.

    The state after frame t sets the power and cadence of frame t+1 (frame 0
    uses state 0). While in state 0 the beam sweeps cyclically; any higher
    state holds the beam that produced the echo. Frames skipped by the
    cadence spend no sensing power and keep the last measured value as the
    current belief. Noise and motion draw from per-frame seeds derived from
    ``seed``, so the randomness a candidate threshold vector faces does not
    depend on the decisions it makes.
    """
    if not 0.0 < fidelity <= 1.0:
        raise ValueError("fidelity must lie in (0, 1]")
    n_frames = math.ceil(fidelity * scenario.frame_count)
    dt = scenario.frame_duration
    window = scenario.search_window()
    null_mask = scenario.null_mask()
    budget_w = scenario.tx_power_w

    target = initial_target_state(scenario, seed)
    resi = np.zeros(n_frames)
    states = np.zeros(n_frames, dtype=np.int64)
    in_region = np.zeros(n_frames, dtype=bool)
    in_beam = np.zeros(n_frames, dtype=bool)
    power = np.zeros(n_frames)

    state = 0
    sweep_ptr = 0
    beam = 0
    frames_since_measure = 0
    belief = 0.0  # last measured echo strength

    for t in range(n_frames):
        target = propagate_target(
            target, dt, derive_seed(seed, "motion", t), scenario.region, scenario.heading_jitter
        )
        if state == 0:
            beam = sweep_ptr
            sweep_ptr = (sweep_ptr + 1) % scenario.n_beams

        frames_since_measure += 1
        if frames_since_measure >= actions.period_multipliers[state]:
            frames_since_measure = 0
            eta = actions.power_factors[state]
            channel = realize_channel(scenario, target)
            grid = synthesize_rx_grid(
                scenario, channel, beam, eta * budget_w, derive_seed(seed, "frame", t)
            )
            sample = compute_resi(matched_filter(grid, window), grid, null_mask)
            belief = sample.value
            resi[t] = belief
            states[t] = classify(belief, thresholds)
            power[t] = eta
        else:
            resi[t] = belief
            states[t] = state
            power[t] = 0.0

        bs = scenario.bs_position
        angle = math.atan2(target.position[1] - bs[1], target.position[0] - bs[0])
        in_region[t] = target.inside_region
        in_beam[t] = scenario.beam_contains(beam, angle)
        state = int(states[t])

    return EpisodeTrace(
        resi=resi, states=states, in_region=in_region, in_beam=in_beam,
        power=power, horizon=n_frames,
    )


class DetectionReliability(NamedTuple):
    value: float
    vacuous: bool


def detection_reliability(trace: EpisodeTrace, thresholds: ThresholdVector) -> DetectionReliability:
    """Fraction of in-region frames with the beam on target and echo above t1.

    When the target never enters the region the metric is vacuously 1 and
    flagged, so callers can exclude it from aggregates.
    """
    eligible = int(np.sum(trace.in_region))
    if eligible == 0:
        return DetectionReliability(1.0, True)
    hits = int(np.sum(trace.in_beam & (trace.resi > thresholds.t1)))
    return DetectionReliability(hits / eligible, False)


def sensing_latency(trace: EpisodeTrace, thresholds: ThresholdVector) -> int:
    """Frames spent below the locked state while the target is in region.

    If no frame ever exceeds t1 the full horizon is returned.
    """
    if not np.any(trace.resi > thresholds.t1):
        return trace.horizon
    return int(np.sum(trace.in_region & (trace.states < 3)))


def power_overhead(trace: EpisodeTrace) -> float:
    """Mean sensing power spent, as a fraction of the budget."""
    return float(np.mean(trace.power))


@dataclass(frozen=True)
class ObjectiveValues:
    j_det: float
    j_lat: float
    j_pow: float
    scalar_cost: float
    det_vacuous: bool = False


def scalarize(
    j_det: float,
    j_lat: float,
    j_pow: float,
    horizon: int,
    weights: tuple[float, float, float] = (1.0, 0.0, 0.0),
) -> float:
    """Weighted cost: miss fraction + normalized latency + power overhead."""
    w_det, w_lat, w_pow = weights
    if w_det < 0 or w_lat < 0 or w_pow < 0 or w_det + w_lat + w_pow == 0:
        raise ValueError("weights must be nonnegative and not all zero")
    return w_det * (1.0 - j_det) + w_lat * (j_lat / horizon) + w_pow * j_pow


def episode_objectives(
    trace: EpisodeTrace,
    thresholds: ThresholdVector,
    weights: tuple[float, float, float] = (1.0, 0.0, 0.0),
) -> ObjectiveValues:
    det = detection_reliability(trace, thresholds)
    lat = sensing_latency(trace, thresholds)
    pow_frac = power_overhead(trace)
    cost = scalarize(det.value, lat, pow_frac, trace.horizon, weights)
    return ObjectiveValues(
        j_det=det.value, j_lat=float(lat), j_pow=pow_frac,
        scalar_cost=cost, det_vacuous=det.vacuous,
    )
