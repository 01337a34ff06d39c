"""Benchmark harness: method comparison, power sweep, convergence traces and
the self-validation suite, all reproducible from one master seed.

Every repetition draws its own UE placement and initial thresholds from the
per-repetition seed; all methods inside a repetition share that seed family,
so they face the same environment and the same evaluation randomness. Final
and initial configurations are assessed with a fixed set of evaluation seeds
that is never charged to any optimizer's ledger.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cma as cma_mod
from .baselines import (
    CalibrationError,
    IpnConfig,
    SpsaSchedule,
    ipn_optimize,
    map_calibrate,
    spsa_optimize,
)
from .cma import default_params
from .config import config_hash
from .feedback import DEFAULT_ACTIONS, StateActionTable, ThresholdVector
from .objective import IsacObjective
from .race import FeasibleMap, RacingConfig, inverse_feasible, race_cma_optimize
from .scenario import ScenarioConfig, desk_scenario
from .seeding import derive_seed, rng_from

METHODS = ("MAP", "IPN", "SPSA", "CMA-ES", "RACE-CMA")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a benchmark run depends on, in one reproducible bundle."""

    scenario: ScenarioConfig = field(default_factory=desk_scenario)
    methods: tuple[str, ...] = METHODS
    repetitions: int = 20
    power_grid: tuple[float, ...] = (10.0, 15.0, 20.0, 25.0, 30.0)
    budget: float = 96.0
    master_seed: int = 1
    actions: StateActionTable = DEFAULT_ACTIONS
    weights: tuple[float, float, float] = (1.0, 0.0, 0.0)
    # The sweep tunes a deployment blend: detection first, with latency and
    # power pressure so the closed loop also locks early and spends less.
    sweep_weights: tuple[float, float, float] = (1.0, 0.6, 0.05)
    # Deployment tuning repeats Stage 2 so the returned optimum rests on
    # averaged estimates (and inverse-variance weighting has real input).
    sweep_stage2_repetitions: int = 2
    # Replication configuration: Stage-2 early-stopping emulation at 0.8.
    racing: RacingConfig = field(default_factory=lambda: RacingConfig(truncation=0.8))
    population: int = 12
    generations: int = 10
    convergence_powers: tuple[float, ...] = (20.0, 24.7)
    resi_bounds: tuple[float, float] = (0.05, 6.0)
    # Static reference configuration: conservative, interference-proof
    # thresholds of the kind a worst-case network default would use.
    fixed_thresholds: ThresholdVector = field(
        default_factory=lambda: ThresholdVector(3.0, 4.5, 6.0)
    )
    ue_box: tuple[float, float, float, float] = (-20.0, 20.0, 5.0, 15.0)
    init_sigma: float = 1.5
    eval_repeats: int = 10
    ipn: IpnConfig = field(default_factory=IpnConfig)
    spsa: SpsaSchedule = field(default_factory=SpsaSchedule)
    map_min_samples: int = 8
    map_episodes: int = 3
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        lo, hi = self.scenario.tx_power_range_dbm
        if any(not lo <= p <= hi for p in self.power_grid):
            raise ValueError("power grid outside the scenario power range")


def spec_to_config(spec: ExperimentSpec) -> dict[str, str]:
    """Flat key-value snapshot of a spec (drives the output config hash)."""
    sc = spec.scenario
    gm = sc.gain_model
    pairs = {
        "scenario.n_bs_antennas": sc.n_bs_antennas,
        "scenario.n_ue_antennas": sc.n_ue_antennas,
        "scenario.antenna_spacing": sc.antenna_spacing,
        "scenario.carrier_freq": sc.carrier_freq,
        "scenario.subcarrier_spacing": sc.subcarrier_spacing,
        "scenario.n_subcarriers": sc.n_subcarriers,
        "scenario.n_symbols": sc.n_symbols,
        "scenario.symbol_duration": sc.symbol_duration,
        "scenario.n_beams": sc.n_beams,
        "scenario.sweep_range": f"{sc.sweep_range[0]},{sc.sweep_range[1]}",
        "scenario.tx_power_dbm": sc.tx_power_dbm,
        "scenario.tx_power_range_dbm": f"{sc.tx_power_range_dbm[0]},{sc.tx_power_range_dbm[1]}",
        "scenario.noise_figure_db": sc.noise_figure_db,
        "scenario.n_targets": sc.n_targets,
        "scenario.target_speed": sc.target_speed,
        "scenario.sensing_horizon": sc.sensing_horizon,
        "scenario.n_delay_bins": sc.n_delay_bins,
        "scenario.n_doppler_bins": sc.n_doppler_bins,
        "scenario.nlos_path_count": sc.nlos_path_count,
        "scenario.region": f"{sc.region.x_min},{sc.region.x_max},{sc.region.y_min},{sc.region.y_max}",
        "scenario.bs_position": f"{sc.bs_position[0]},{sc.bs_position[1]}",
        "scenario.ue_position": f"{sc.ue_position[0]},{sc.ue_position[1]}",
        "scenario.delay_window": f"{sc.delay_window[0]},{sc.delay_window[1]}",
        "scenario.doppler_window": f"{sc.doppler_window[0]},{sc.doppler_window[1]}",
        "scenario.null_fraction": sc.null_fraction,
        "scenario.noise_bandwidth_scale": sc.noise_bandwidth_scale,
        "scenario.interference_factor": sc.interference_factor,
        "scenario.heading_jitter": sc.heading_jitter,
        "scenario.scattering_gain": gm.scattering_gain,
        "scenario.nlos_gain_ratio": gm.nlos_gain_ratio,
        "scenario.nlos_excess_delay": gm.nlos_excess_delay,
        "scenario.nlos_angle_offset": gm.nlos_angle_offset,
        "scenario.nlos_doppler_ratio": gm.nlos_doppler_ratio,
        "actions.power_factors": ",".join(str(f) for f in spec.actions.power_factors),
        "actions.period_multipliers": ",".join(
            str(p) for p in spec.actions.period_multipliers
        ),
        "weights.detection": spec.weights[0],
        "weights.latency": spec.weights[1],
        "weights.power": spec.weights[2],
        "racing.promotion_fraction": spec.racing.promotion_fraction,
        "racing.fidelity_ratio": spec.racing.fidelity_ratio,
        "racing.truncation": spec.racing.truncation,
        "racing.repetitions": spec.racing.repetitions,
        "racing.weighting_floor": spec.racing.weighting_floor,
        "racing.min_spacing": spec.racing.min_spacing,
        "racing.diagonal_warmup_generations": spec.racing.diagonal_warmup_generations,
        "racing.mirrored_sampling": str(spec.racing.mirrored_sampling).lower(),
        "cma.population": spec.population,
        "ipn.barrier_init": spec.ipn.barrier_init,
        "ipn.barrier_shrink": spec.ipn.barrier_shrink,
        "ipn.outer_rounds": spec.ipn.outer_rounds,
        "ipn.newton_iters": spec.ipn.newton_iters,
        "ipn.fd_step": spec.ipn.fd_step,
        "spsa.a": spec.spsa.a,
        "spsa.stability": spec.spsa.stability,
        "spsa.c": spec.spsa.c,
        "spsa.alpha": spec.spsa.alpha,
        "spsa.gamma": spec.spsa.gamma,
        "experiment.methods": ",".join(spec.methods),
        "experiment.repetitions": spec.repetitions,
        "experiment.budget": spec.budget,
        "experiment.power_grid": ",".join(str(p) for p in spec.power_grid),
        "experiment.master_seed": spec.master_seed,
        "experiment.generations": spec.generations,
        "experiment.convergence_powers": ",".join(str(p) for p in spec.convergence_powers),
        "experiment.resi_bounds": f"{spec.resi_bounds[0]},{spec.resi_bounds[1]}",
        "experiment.fixed_thresholds": ",".join(
            str(v) for v in spec.fixed_thresholds.as_array()
        ),
        "experiment.ue_box": ",".join(str(v) for v in spec.ue_box),
        "experiment.eval_repeats": spec.eval_repeats,
        "experiment.init_sigma": spec.init_sigma,
        "experiment.sweep_weights": ",".join(str(w) for w in spec.sweep_weights),
        "experiment.sweep_stage2_repetitions": spec.sweep_stage2_repetitions,
        "experiment.map_min_samples": spec.map_min_samples,
        "experiment.map_episodes": spec.map_episodes,
    }
    return {k: str(v) for k, v in pairs.items()}


# ---------------------------------------------------------------------------
# Output helpers


def _fmt(value) -> str:
    if isinstance(value, float):
        return "na" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: Path, comment: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _provenance(spec: ExperimentSpec) -> str:
    return f"config_hash={config_hash(spec_to_config(spec))} master_seed={spec.master_seed}"


def _mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width (nan when n == 1)."""
    arr = np.asarray(values, float)
    if len(arr) == 0:
        return math.nan, math.nan
    if len(arr) == 1:
        return float(arr[0]), math.nan
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(len(arr))
    return float(arr.mean()), half


# ---------------------------------------------------------------------------
# Per-repetition environment and method runners


def _rep_scenario(spec: ExperimentSpec, rep: int, power_dbm: float | None = None) -> ScenarioConfig:
    """Scenario for one repetition: randomized UE placement, optional power."""
    rng = rng_from(spec.master_seed, "rep", rep, "ue")
    x_min, x_max, y_min, y_max = spec.ue_box
    ue = (float(rng.uniform(x_min, x_max)), float(rng.uniform(y_min, y_max)))
    scenario = replace(spec.scenario, ue_position=ue)
    if power_dbm is not None:
        scenario = scenario.with_power(power_dbm)
    return scenario


def _initial_thresholds(spec: ExperimentSpec, rep: int) -> ThresholdVector:
    """Random feasible starting point inside the declared echo-strength box."""
    rng = rng_from(spec.master_seed, "rep", rep, "init-thresholds")
    lo, hi = spec.resi_bounds
    draw = np.sort(rng.uniform(lo, hi, size=3))
    draw[1] = max(draw[1], draw[0] + spec.racing.min_spacing)
    draw[2] = max(draw[2], draw[1] + spec.racing.min_spacing)
    return ThresholdVector.from_array(draw)


def _eval_seeds(spec: ExperimentSpec, rep: int) -> list[int]:
    return [derive_seed(spec.master_seed, "rep", rep, "assess", j) for j in range(spec.eval_repeats)]


def assess(
    scenario: ScenarioConfig,
    actions: StateActionTable,
    thresholds: ThresholdVector,
    seeds: Sequence[int],
) -> tuple[float, float, float]:
    """Uncharged mean (J_det, J_lat/horizon, J_pow) over assessment seeds.

    Vacuous detection values (target never in region) are excluded.
    """
    objective = IsacObjective(scenario, actions)
    det, lat, pw = [], [], []
    for seed in seeds:
        values = objective.peek_values(thresholds, seed)
        if not values.det_vacuous:
            det.append(values.j_det)
        lat.append(values.j_lat / scenario.frame_count)
        pw.append(values.j_pow)
    j_det = float(np.mean(det)) if det else 1.0
    return j_det, float(np.mean(lat)), float(np.mean(pw))


@dataclass
class MethodRun:
    method: str
    final: ThresholdVector
    n_eq: float
    best_so_far: list[ThresholdVector]
    failed: bool = False


def _as_thresholds(point) -> ThresholdVector:
    if isinstance(point, ThresholdVector):
        return point
    return ThresholdVector.from_array(np.asarray(point, float))


def run_method(
    method: str,
    scenario: ScenarioConfig,
    spec: ExperimentSpec,
    t0: ThresholdVector,
    seed: int,
    weights: tuple[float, float, float] | None = None,
    racing: RacingConfig | None = None,
    generations: int | None = None,
) -> MethodRun:
    """Run one optimizer against a fresh objective/ledger."""
    objective = IsacObjective(
        scenario, spec.actions, weights if weights is not None else spec.weights
    )
    racing_cfg = racing if racing is not None else spec.racing
    delta = racing_cfg.min_spacing
    mapper = FeasibleMap(mode="softplus", min_spacing=delta)
    rounds = generations if generations is not None else spec.generations

    if method == "MAP":
        try:
            final = map_calibrate(
                objective, seed, provisional=None, episodes=spec.map_episodes,
                min_spacing=delta, min_samples=spec.map_min_samples,
            )
        except CalibrationError:
            final = t0
        best = [final] * rounds
    elif method == "IPN":
        result = ipn_optimize(objective, t0, spec.ipn, spec.budget, seed)
        final = result.best_point
        trail = [_as_thresholds(h[2]) for h in result.history]
        best = _pad_rounds(trail if trail else [final], rounds)
    elif method == "SPSA":
        result = spsa_optimize(
            objective, t0, spec.spsa, spec.budget, seed, min_spacing=delta
        )
        final = result.best_point
        trail = [_as_thresholds(h[2]) for h in result.history]
        best = _pad_rounds(trail if trail else [final], rounds)
    elif method == "CMA-ES":
        params = default_params(3, spec.population)
        u0 = inverse_feasible(t0, delta)
        result = cma_mod.cma_optimize(
            objective, params, (u0, spec.init_sigma), spec.budget, seed,
            feasible_map=mapper, max_generations=rounds,
        )
        final = _as_thresholds(result.best_point)
        best = _pad_rounds(
            [_as_thresholds(rec.best_point) for rec in result.history] or [final], rounds
        )
    elif method == "RACE-CMA":
        params = default_params(3, spec.population)
        u0 = inverse_feasible(t0, delta)
        result = race_cma_optimize(
            objective, params, racing_cfg, (u0, spec.init_sigma), spec.budget, seed,
            feasible_map=mapper, max_generations=rounds,
        )
        final = _as_thresholds(result.best_point)
        best = _pad_rounds(
            [_as_thresholds(rec.best_point) for rec in result.history] or [final], rounds
        )
    else:
        raise ValueError(f"unknown method {method!r}")

    n_eq = objective.ledger.n_eq
    return MethodRun(
        method=method, final=final, n_eq=n_eq, best_so_far=best,
        failed=n_eq > 10.0 * spec.budget,
    )


def _pad_rounds(points: list[ThresholdVector], rounds: int) -> list[ThresholdVector]:
    padded = list(points[:rounds])
    while len(padded) < rounds:
        padded.append(padded[-1])
    return padded


# ---------------------------------------------------------------------------
# compare


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    delta_j: float
    delta_j_ci: float
    n_eq: float
    n_eq_ci: float
    efficiency: float
    efficiency_ci: float
    runs: int
    failures: int


def _compare_rep(spec: ExperimentSpec, rep: int) -> list[tuple]:
    scenario = _rep_scenario(spec, rep)
    t0 = _initial_thresholds(spec, rep)
    seeds = _eval_seeds(spec, rep)
    opt_seed = derive_seed(spec.master_seed, "rep", rep, "opt")
    j_init, _, _ = assess(scenario, spec.actions, t0, seeds)

    rows = []
    for method in spec.methods:
        run = run_method(method, scenario, spec, t0, opt_seed)
        j_final, _, _ = assess(scenario, spec.actions, run.final, seeds)
        delta_j = j_final - j_init
        eff = delta_j / run.n_eq if run.n_eq > 0 else math.nan
        rows.append((rep, method, j_init, j_final, delta_j, run.n_eq, eff, int(run.failed)))
    return rows


def run_compare(spec: ExperimentSpec, out_dir: Path | str) -> list[ComparisonRow]:
    """Method comparison over randomized repetitions; writes raw + summary CSVs."""
    out = Path(out_dir)
    per_rep = _map_reps(spec, _compare_rep)
    raw_rows = [row for rep_rows in per_rep for row in rep_rows]

    summary: list[ComparisonRow] = []
    for method in spec.methods:
        ok = [r for r in raw_rows if r[1] == method and not r[7]]
        failures = sum(1 for r in raw_rows if r[1] == method and r[7])
        deltas = [r[4] for r in ok]
        costs = [r[5] for r in ok]
        effs = [r[6] for r in ok]
        d_mean, d_ci = _mean_ci(deltas)
        c_mean, c_ci = _mean_ci(costs)
        _, e_ci = _mean_ci(effs)
        efficiency = d_mean / c_mean if costs and c_mean > 0 else math.nan
        summary.append(
            ComparisonRow(
                method=method, delta_j=d_mean, delta_j_ci=d_ci, n_eq=c_mean,
                n_eq_ci=c_ci, efficiency=efficiency, efficiency_ci=e_ci,
                runs=len(ok), failures=failures,
            )
        )

    comment = _provenance(spec)
    write_csv(
        out / "compare_runs.csv", comment,
        ("rep", "method", "j_init", "j_final", "delta_j", "n_eq", "efficiency", "failed"),
        raw_rows,
    )
    write_csv(
        out / "compare_summary.csv", comment,
        ("method", "delta_j", "delta_j_ci95", "n_eq", "n_eq_ci95",
         "efficiency", "efficiency_ci95", "runs", "failures"),
        [
            (r.method, r.delta_j, r.delta_j_ci, r.n_eq, r.n_eq_ci,
             r.efficiency, r.efficiency_ci, r.runs, r.failures)
            for r in summary
        ],
    )
    _write_spec_snapshot(spec, out)
    return summary


def _write_spec_snapshot(spec: ExperimentSpec, out: Path) -> None:
    cfg = spec_to_config(spec)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spec.cfg", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")


def _map_reps(spec: ExperimentSpec, fn: Callable) -> list:
    reps = range(spec.repetitions)
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            return list(pool.map(fn, [spec] * spec.repetitions, reps))
    return [fn(spec, rep) for rep in reps]


# ---------------------------------------------------------------------------
# sweep


def _sweep_rep(spec: ExperimentSpec, rep: int) -> list[tuple]:
    rows = []
    for power in spec.power_grid:
        scenario = _rep_scenario(spec, rep, power_dbm=power)
        seeds = [
            derive_seed(spec.master_seed, "rep", rep, "sweep-assess", power, j)
            for j in range(spec.eval_repeats)
        ]
        opt_seed = derive_seed(spec.master_seed, "rep", rep, "sweep-opt", power)
        t0 = _initial_thresholds(spec, rep)
        racing = replace(spec.racing, repetitions=spec.sweep_stage2_repetitions)
        generations = max(
            spec.generations, int(spec.budget // racing.generation_cost(spec.population))
        )
        tuned = run_method(
            "RACE-CMA", scenario, spec, t0, opt_seed,
            weights=spec.sweep_weights, racing=racing, generations=generations,
        )
        for variant, thresholds in (("fixed", spec.fixed_thresholds), ("tuned", tuned.final)):
            j_det, j_lat, j_pow = assess(scenario, spec.actions, thresholds, seeds)
            rows.append((rep, power, variant, j_det, j_lat, j_pow))
    return rows


def run_sweep(spec: ExperimentSpec, out_dir: Path | str) -> list[tuple]:
    """Fixed-vs-tuned comparison across the transmit-power grid."""
    if len(spec.power_grid) < 2:
        raise ValueError("power sweep needs at least two grid points")
    out = Path(out_dir)
    raw = [row for rep_rows in _map_reps(spec, _sweep_rep) for row in rep_rows]

    summary_rows = []
    for power in spec.power_grid:
        for variant in ("fixed", "tuned"):
            sel = [r for r in raw if r[1] == power and r[2] == variant]
            det_mean, det_ci = _mean_ci([r[3] for r in sel])
            lat_mean, lat_ci = _mean_ci([r[4] for r in sel])
            pow_mean, pow_ci = _mean_ci([r[5] for r in sel])
            summary_rows.append(
                (power, variant, det_mean, det_ci, lat_mean, lat_ci,
                 pow_mean, pow_ci, 1.0 - pow_mean)
            )

    comment = _provenance(spec)
    write_csv(
        out / "sweep_runs.csv", comment,
        ("rep", "power_dbm", "variant", "j_det", "j_lat_norm", "sense_power_frac"),
        raw,
    )
    write_csv(
        out / "sweep_summary.csv", comment,
        ("power_dbm", "variant", "j_det", "j_det_ci95", "j_lat_norm", "j_lat_ci95",
         "sense_power_frac", "sense_power_ci95", "comm_power_frac"),
        summary_rows,
    )
    _write_spec_snapshot(spec, out)
    return summary_rows


# ---------------------------------------------------------------------------
# convergence


def _convergence_rep(spec: ExperimentSpec, rep: int) -> list[tuple]:
    rows = []
    for power in spec.convergence_powers:
        scenario = _rep_scenario(spec, rep, power_dbm=power)
        t0 = _initial_thresholds(spec, rep)
        seeds = [
            derive_seed(spec.master_seed, "rep", rep, "conv-assess", power, j)
            for j in range(spec.eval_repeats)
        ]
        opt_seed = derive_seed(spec.master_seed, "rep", rep, "conv-opt", power)
        for method in spec.methods:
            run = run_method(method, scenario, spec, t0, opt_seed)
            per_gen = max(run.n_eq / spec.generations, 0.0)
            for gen, point in enumerate(run.best_so_far, start=1):
                j_det, _, _ = assess(scenario, spec.actions, point, seeds)
                rows.append((rep, power, method, gen, j_det, per_gen * gen))
    return rows


def run_convergence(spec: ExperimentSpec, out_dir: Path | str) -> list[tuple]:
    """Best-so-far detection reliability per generation, per method and power."""
    if spec.generations < 1:
        raise ValueError("need at least one generation")
    out = Path(out_dir)
    raw = [row for rep_rows in _map_reps(spec, _convergence_rep) for row in rep_rows]

    summary_rows = []
    for power in spec.convergence_powers:
        for method in spec.methods:
            for gen in range(1, spec.generations + 1):
                sel = [r for r in raw if r[1] == power and r[2] == method and r[3] == gen]
                det_mean, det_ci = _mean_ci([r[4] for r in sel])
                neq_mean, _ = _mean_ci([r[5] for r in sel])
                summary_rows.append((power, method, gen, det_mean, det_ci, neq_mean))

    comment = _provenance(spec)
    write_csv(
        out / "convergence_runs.csv", comment,
        ("rep", "power_dbm", "method", "generation", "j_det", "n_eq"),
        raw,
    )
    write_csv(
        out / "convergence_summary.csv", comment,
        ("power_dbm", "method", "generation", "j_det", "j_det_ci95", "n_eq"),
        summary_rows,
    )
    _write_spec_snapshot(spec, out)
    return summary_rows
