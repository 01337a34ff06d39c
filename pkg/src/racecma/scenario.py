"""Scenario description for the bistatic sensing setup.

Geometry is planar: the base station sits at a fixed position and sweeps a
transmit beam across a configured angular range, the sensing receiver (UE)
sits at another fixed position, and a single point target moves inside a
rectangular sensing region, bouncing off its edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .seeding import rng_from

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN_X_T0 = 1.380649e-23 * 290.0  # thermal noise density at 290 K, W/Hz


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle used as the sensing region descriptor."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError("rectangle must have positive extent")

    def contains(self, position) -> bool:
        x, y = float(position[0]), float(position[1])
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class GainModel:
    """Path-loss and scattering parameters for the two-leg echo.

    Each leg uses free-space loss at the carrier wavelength; the target adds
    a constant effective scattering gain. The optional specular component
    models one extra echo arriving later, weaker and offset in angle.
    """

    scattering_gain: float = 100.0
    nlos_gain_ratio: float = 0.2
    nlos_excess_delay: float = 1.5e-7
    nlos_angle_offset: float = 0.35
    nlos_doppler_ratio: float = 0.5

    def __post_init__(self) -> None:
        if self.scattering_gain <= 0:
            raise ValueError("scattering_gain must be positive")
        if self.nlos_gain_ratio < 0 or self.nlos_excess_delay < 0:
            raise ValueError("specular component must not precede or exceed the direct path")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full parameterization of the sensing link and its measurement chain.

    Defaults correspond to the reference setup: a 24 GHz carrier with 15 kHz
    subcarrier spacing, a 32/16-element BS/UE pair, 20 beams sweeping the
    quarter-to-three-quarter-pi cone, one target at 3 m/s and a 10 s horizon.
    """

    n_bs_antennas: int = 32
    n_ue_antennas: int = 16
    antenna_spacing: float = 0.5  # in carrier wavelengths
    carrier_freq: float = 24e9
    subcarrier_spacing: float = 15e3
    n_subcarriers: int = 40
    n_symbols: int = 100
    symbol_duration: float = 100e-6
    n_beams: int = 20
    sweep_range: tuple[float, float] = (math.pi / 4, 3 * math.pi / 4)
    tx_power_dbm: float = 20.0
    tx_power_range_dbm: tuple[float, float] = (10.0, 30.0)
    noise_figure_db: float = 6.0
    n_targets: int = 1
    target_speed: float = 3.0
    sensing_horizon: float = 10.0
    n_delay_bins: int = 10
    n_doppler_bins: int = 10
    nlos_path_count: int = 0
    region: Rect = field(default_factory=lambda: Rect(-25.0, 25.0, 25.0, 75.0))
    gain_model: GainModel = field(default_factory=GainModel)
    bs_position: tuple[float, float] = (0.0, 0.0)
    ue_position: tuple[float, float] = (15.0, 10.0)
    delay_window: tuple[float, float] = (0.05e-6, 0.75e-6)
    doppler_window: tuple[float, float] = (-250.0, 250.0)
    null_fraction: float = 0.1
    noise_bandwidth_scale: float = 1.0
    interference_factor: float = 0.0
    heading_jitter: float = 0.3
    target_spawn_margin: float = 0.25  # inset fraction per side for entry points

    def __post_init__(self) -> None:
        counts = (
            self.n_bs_antennas,
            self.n_ue_antennas,
            self.n_subcarriers,
            self.n_symbols,
            self.n_beams,
            self.n_targets,
            self.n_delay_bins,
            self.n_doppler_bins,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if self.nlos_path_count not in (0, 1):
            raise ValueError("nlos_path_count must be 0 or 1")
        lo, hi = self.sweep_range
        if not (0.0 < lo < hi < math.pi):
            raise ValueError("sweep_range must be an increasing interval inside (0, pi)")
        p_lo, p_hi = self.tx_power_range_dbm
        if not (p_lo <= self.tx_power_dbm <= p_hi):
            raise ValueError("tx_power_dbm outside the configured budget range")
        if self.symbol_duration <= 0 or self.sensing_horizon <= 0:
            raise ValueError("durations must be positive")
        if not (0.0 < self.null_fraction < 1.0):
            raise ValueError("null_fraction must lie in (0, 1)")
        if self.interference_factor < 0:
            raise ValueError("interference_factor must be >= 0")
        if not (0.0 <= self.target_spawn_margin < 0.5):
            raise ValueError("target_spawn_margin must lie in [0, 0.5)")

    # Derived quantities -------------------------------------------------

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def frame_duration(self) -> float:
        """One sensing frame spans one OFDM grid."""
        return self.n_symbols * self.symbol_duration

    @property
    def frame_count(self) -> int:
        return max(1, int(round(self.sensing_horizon / self.frame_duration)))

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def noise_variance(self) -> float:
        """Per-resource-element disturbance power (thermal + interference)."""
        nf = 10.0 ** (self.noise_figure_db / 10.0)
        thermal = BOLTZMANN_X_T0 * nf * self.subcarrier_spacing * self.noise_bandwidth_scale
        return thermal * (1.0 + self.interference_factor)

    @property
    def null_subcarriers(self) -> int:
        return max(1, int(math.ceil(self.null_fraction * self.n_subcarriers)))

    def beam_centers(self) -> np.ndarray:
        return _beam_centers(self)

    def beam_contains(self, beam_index: int, angle: float) -> bool:
        """Whether ``angle`` falls inside the angular sector of a beam."""
        lo, hi = self.sweep_range
        width = (hi - lo) / self.n_beams
        sector_lo = lo + beam_index * width
        return sector_lo <= angle < sector_lo + width

    def search_window(self) -> tuple[np.ndarray, np.ndarray]:
        """Delay and Doppler bin centers scanned by the matched filter."""
        return _search_window(self)

    def null_mask(self) -> np.ndarray:
        """Guard resource elements: the top subcarriers carry no pilot.

        Those cells of the received grid contain disturbance only, giving an
        unbiased noise-floor estimate that is disjoint from the echo support.
        """
        return _null_mask(self)

    def with_power(self, tx_power_dbm: float) -> "ScenarioConfig":
        return replace(self, tx_power_dbm=tx_power_dbm)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@lru_cache(maxsize=64)
def _beam_centers(scenario: "ScenarioConfig") -> np.ndarray:
    lo, hi = scenario.sweep_range
    width = (hi - lo) / scenario.n_beams
    centers = lo + (np.arange(scenario.n_beams) + 0.5) * width
    centers.setflags(write=False)
    return centers


@lru_cache(maxsize=64)
def _search_window(scenario: "ScenarioConfig") -> tuple[np.ndarray, np.ndarray]:
    delays = np.linspace(*scenario.delay_window, scenario.n_delay_bins)
    dopplers = np.linspace(*scenario.doppler_window, scenario.n_doppler_bins)
    delays.setflags(write=False)
    dopplers.setflags(write=False)
    return delays, dopplers


@lru_cache(maxsize=64)
def _null_mask(scenario: "ScenarioConfig") -> np.ndarray:
    mask = np.zeros((scenario.n_subcarriers, scenario.n_symbols), dtype=bool)
    mask[scenario.n_subcarriers - scenario.null_subcarriers :, :] = True
    mask.setflags(write=False)
    return mask


def desk_scenario(**overrides) -> ScenarioConfig:
    """Reduced-cost profile used by tests and the default benchmark configs.

    Shrinks the grid and horizon (not the physics) so a full episode costs
    milliseconds; paper-scale runs use ``ScenarioConfig()`` directly.
    """
    params = dict(n_subcarriers=24, n_symbols=32, sensing_horizon=0.32)
    params.update(overrides)
    return ScenarioConfig(**params)


@dataclass(frozen=True)
class TargetState:
    """Kinematic state of the point target."""

    position: tuple[float, float]
    velocity: tuple[float, float]
    inside_region: bool

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


def initial_target_state(scenario: ScenarioConfig, seed: int) -> TargetState:
    """Draw a starting position inside the spawn band, heading uniform.

    The spawn band insets the region by ``target_spawn_margin`` per side, so
    episodes start with the target properly inside the surveilled area.
    """
    rng = rng_from(seed, "target-init")
    r = scenario.region
    mx = scenario.target_spawn_margin * (r.x_max - r.x_min)
    my = scenario.target_spawn_margin * (r.y_max - r.y_min)
    pos = (rng.uniform(r.x_min + mx, r.x_max - mx), rng.uniform(r.y_min + my, r.y_max - my))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    vel = (
        scenario.target_speed * math.cos(heading),
        scenario.target_speed * math.sin(heading),
    )
    return TargetState(position=pos, velocity=vel, inside_region=True)


def propagate_target(
    state: TargetState,
    dt: float,
    rng_seed: int,
    region: Rect,
    heading_jitter: float = 0.0,
) -> TargetState:
    """Advance the target by ``dt`` with specular reflection at region edges.

    Motion is straight-line; only a boundary hit changes the direction:
    the velocity is mirrored on the wall normal and, when ``heading_jitter``
    is nonzero, rotated by a seeded perturbation. Speed is preserved exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y = state.position
    vx, vy = state.velocity
    x += vx * dt
    y += vy * dt

    reflected = False
    # Mirror the overshoot back into the rectangle (repeat for long steps).
    for _ in range(16):
        moved = False
        if x < region.x_min:
            x, vx, moved = 2 * region.x_min - x, -vx, True
        elif x > region.x_max:
            x, vx, moved = 2 * region.x_max - x, -vx, True
        if y < region.y_min:
            y, vy, moved = 2 * region.y_min - y, -vy, True
        elif y > region.y_max:
            y, vy, moved = 2 * region.y_max - y, -vy, True
        reflected = reflected or moved
        if not moved:
            break

    if reflected and heading_jitter > 0.0:
        rng = rng_from(rng_seed, "reflect")
        angle = rng.uniform(-heading_jitter, heading_jitter)
        c, s = math.cos(angle), math.sin(angle)
        vx, vy = c * vx - s * vy, s * vx + c * vy

    position = (x, y)
    return TargetState(
        position=position,
        velocity=(vx, vy),
        inside_region=region.contains(position),
    )
