"""Key-value configuration files for scenarios and experiments.

Format: one ``section.key = value`` per line, ``#`` starts a comment.
Lists are comma-separated. Unknown keys are rejected so typos fail loudly.

Scenario keys mirror the simulation-parameter names::

    scenario.n_bs_antennas = 32        scenario.n_ue_antennas = 16
    scenario.antenna_spacing = 0.5     scenario.carrier_freq = 24e9
    scenario.subcarrier_spacing = 15e3 scenario.n_subcarriers = 40
    scenario.n_symbols = 100           scenario.symbol_duration = 100e-6
    scenario.n_beams = 20              scenario.sweep_range = 0.7854,2.3562
    scenario.tx_power_dbm = 20         scenario.tx_power_range_dbm = 10,30
    scenario.noise_figure_db = 6       scenario.n_targets = 1
    scenario.target_speed = 3          scenario.sensing_horizon = 10
    scenario.n_delay_bins = 10         scenario.n_doppler_bins = 10
    scenario.nlos_path_count = 0       scenario.region = -25,25,25,75
    scenario.bs_position = 0,0         scenario.ue_position = 15,10
    scenario.delay_window = 5e-8,7.5e-7
    scenario.doppler_window = -250,250
    scenario.null_fraction = 0.1       scenario.noise_bandwidth_scale = 1
    scenario.interference_factor = 0   scenario.heading_jitter = 0.3
    scenario.scattering_gain = 100     scenario.nlos_gain_ratio = 0.2
    scenario.nlos_excess_delay = 1.5e-7
    scenario.nlos_angle_offset = 0.35  scenario.nlos_doppler_ratio = 0.5

Feedback actions, scalarization and optimizers::

    actions.power_factors = 1.0,0.8,0.5,0.2
    actions.period_multipliers = 1,1,1,1
    weights.detection = 1.0   weights.latency = 0.0   weights.power = 0.0
    racing.promotion_fraction = 0.5    racing.fidelity_ratio = 0.2
    racing.truncation = 1.0            racing.repetitions = 1
    racing.weighting_floor = 1e-8      racing.min_spacing = 0.1
    racing.diagonal_warmup_generations = 2
    racing.mirrored_sampling = true
    cma.population = 12
    ipn.outer_rounds = 4               ipn.newton_iters = 2
    ipn.fd_step = 0.05                 ipn.barrier_init = 1.0
    spsa.a = 0.5  spsa.stability = 10  spsa.c = 0.2
    spsa.alpha = 0.602  spsa.gamma = 0.101

Experiment protocol::

    experiment.methods = MAP,IPN,SPSA,CMA-ES,RACE-CMA
    experiment.repetitions = 20        experiment.budget = 120
    experiment.power_grid = 10,15,20,25,30
    experiment.master_seed = 1         experiment.generations = 10
    experiment.convergence_powers = 20,24.7
    experiment.resi_bounds = 0.05,6.0
    experiment.fixed_thresholds = 2.0,3.0,4.0
    experiment.ue_box = -20,20,5,15
    experiment.eval_repeats = 5
    experiment.sweep_weights = 1.0,0.3,0.1
    experiment.map_min_samples = 8
    experiment.map_episodes = 3
"""

from __future__ import annotations

import hashlib
from dataclasses import replace

from .baselines import IpnConfig, SpsaSchedule
from .feedback import StateActionTable
from .race import RacingConfig
from .scenario import Rect, ScenarioConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a flat string map."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(","))


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(","))


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


_SCENARIO_FIELDS = {
    "n_bs_antennas": int, "n_ue_antennas": int, "antenna_spacing": float,
    "carrier_freq": float, "subcarrier_spacing": float, "n_subcarriers": int,
    "n_symbols": int, "symbol_duration": float, "n_beams": int,
    "tx_power_dbm": float, "noise_figure_db": float, "n_targets": int,
    "target_speed": float, "sensing_horizon": float, "n_delay_bins": int,
    "n_doppler_bins": int, "nlos_path_count": int, "null_fraction": float,
    "noise_bandwidth_scale": float, "interference_factor": float,
    "heading_jitter": float,
}
_SCENARIO_PAIRS = {"sweep_range", "tx_power_range_dbm", "bs_position",
                   "ue_position", "delay_window", "doppler_window"}
_GAIN_FIELDS = {"scattering_gain", "nlos_gain_ratio", "nlos_excess_delay",
                "nlos_angle_offset", "nlos_doppler_ratio"}


def scenario_from_config(cfg: dict[str, str], base: ScenarioConfig) -> ScenarioConfig:
    updates: dict = {}
    gain_updates: dict = {}
    for key, raw in cfg.items():
        if not key.startswith("scenario."):
            continue
        name = key.split(".", 1)[1]
        if name in _SCENARIO_FIELDS:
            updates[name] = _SCENARIO_FIELDS[name](raw)
        elif name in _SCENARIO_PAIRS:
            pair = _floats(raw)
            if len(pair) != 2:
                raise ConfigError(f"{key} expects two comma-separated values")
            updates[name] = pair
        elif name == "region":
            rect = _floats(raw)
            if len(rect) != 4:
                raise ConfigError("scenario.region expects x_min,x_max,y_min,y_max")
            updates["region"] = Rect(*rect)
        elif name in _GAIN_FIELDS:
            gain_updates[name] = float(raw)
        else:
            raise ConfigError(f"unknown scenario key {key!r}")
    if gain_updates:
        updates["gain_model"] = replace(base.gain_model, **gain_updates)
    return replace(base, **updates) if updates else base


def actions_from_config(cfg: dict[str, str], base: StateActionTable) -> StateActionTable:
    updates: dict = {}
    if "actions.power_factors" in cfg:
        factors = _floats(cfg["actions.power_factors"])
        if len(factors) != 4:
            raise ConfigError("actions.power_factors expects four values")
        updates["power_factors"] = factors
    if "actions.period_multipliers" in cfg:
        periods = _ints(cfg["actions.period_multipliers"])
        if len(periods) != 4:
            raise ConfigError("actions.period_multipliers expects four values")
        updates["period_multipliers"] = periods
    return replace(base, **updates) if updates else base


def weights_from_config(cfg: dict[str, str], base: tuple[float, float, float]) -> tuple[float, float, float]:
    return (
        float(cfg.get("weights.detection", base[0])),
        float(cfg.get("weights.latency", base[1])),
        float(cfg.get("weights.power", base[2])),
    )


_RACING_FIELDS = {
    "promotion_fraction": float, "fidelity_ratio": float, "truncation": float,
    "repetitions": int, "weighting_floor": float, "min_spacing": float,
    "diagonal_warmup_generations": int, "mirrored_sampling": _bool,
}


def racing_from_config(cfg: dict[str, str], base: RacingConfig) -> RacingConfig:
    updates: dict = {}
    for key, raw in cfg.items():
        if not key.startswith("racing."):
            continue
        name = key.split(".", 1)[1]
        if name not in _RACING_FIELDS:
            raise ConfigError(f"unknown racing key {key!r}")
        updates[name] = _RACING_FIELDS[name](raw)
    return replace(base, **updates) if updates else base


_IPN_FIELDS = {
    "barrier_init": float, "barrier_shrink": float, "outer_rounds": int,
    "newton_iters": int, "fd_step": float, "armijo": float,
    "backtrack": float, "max_backtracks": int,
}


def ipn_from_config(cfg: dict[str, str], base: IpnConfig) -> IpnConfig:
    updates = {}
    for key, raw in cfg.items():
        if not key.startswith("ipn."):
            continue
        name = key.split(".", 1)[1]
        if name not in _IPN_FIELDS:
            raise ConfigError(f"unknown ipn key {key!r}")
        updates[name] = _IPN_FIELDS[name](raw)
    return replace(base, **updates) if updates else base


_SPSA_FIELDS = {"a": float, "stability": float, "c": float, "alpha": float, "gamma": float}


def spsa_from_config(cfg: dict[str, str], base: SpsaSchedule) -> SpsaSchedule:
    updates = {}
    for key, raw in cfg.items():
        if not key.startswith("spsa."):
            continue
        name = key.split(".", 1)[1]
        if name not in _SPSA_FIELDS:
            raise ConfigError(f"unknown spsa key {key!r}")
        updates[name] = _SPSA_FIELDS[name](raw)
    return replace(base, **updates) if updates else base


def config_hash(cfg: dict[str, str]) -> str:
    """Short stable digest of a config map, for output provenance lines."""
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
