"""Two-stage racing CMA-ES with CRN, noise-aware recombination and a
feasible-by-construction threshold parameterization.

Per generation: draw structured (mirrored, optionally orthogonalized)
candidates, screen all of them cheaply under one shared seed, promote the
best fraction to repeated full-fidelity evaluation under shared seeds, merge
the two stages into one ranking, and recombine with inverse-variance
weights so noisier elite estimates pull the distribution less.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence, TextIO

import numpy as np

from .cma import (
    CmaParams,
    CmaState,
    GenerationRecord,
    _points_from_draws,
    init_state,
    point_array,
    update,
)
from .feedback import ThresholdVector, run_episode
from .objective import (
    CrnSeedPlan,
    RepeatedEstimate,
    StochasticObjective,
    derive_seed_plan,
)
from .scenario import ScenarioConfig
from .seeding import derive_seed, rng_from


@dataclass(frozen=True)
class RacingConfig:
    """Racing knobs: promotion fraction, fidelity ratio, Stage-2 truncation,
    repetitions, weighting floor, threshold spacing and sampling structure."""

    promotion_fraction: float = 0.5
    fidelity_ratio: float = 0.2
    truncation: float = 1.0
    repetitions: int = 1
    weighting_floor: float = 1e-8
    min_spacing: float = 0.1
    diagonal_warmup_generations: int = 2
    mirrored_sampling: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.promotion_fraction <= 1.0:
            raise ValueError("promotion fraction must lie in (0, 1]")
        if not 0.0 < self.fidelity_ratio <= 1.0:
            raise ValueError("fidelity ratio must lie in (0, 1]")
        if not 0.0 < self.truncation <= 1.0:
            raise ValueError("truncation must lie in (0, 1]")
        if self.repetitions < 1 or self.weighting_floor <= 0 or self.min_spacing <= 0:
            raise ValueError("invalid racing configuration")
        if self.diagonal_warmup_generations < 0:
            raise ValueError("warmup generations must be >= 0")

    def promoted_count(self, lam: int) -> int:
        return max(1, int(self.promotion_fraction * lam))

    def generation_cost(self, lam: int) -> float:
        return float(self.generation_cost_exact(lam))

    def generation_cost_exact(self, lam: int) -> Fraction:
        """Exact per-generation charge: lam*tau + k*r*beta."""
        k = self.promoted_count(lam)
        tau = Fraction(str(self.fidelity_ratio))
        beta = Fraction(str(self.truncation))
        return lam * tau + k * self.repetitions * beta


def softplus(x):
    """log(1 + exp(x)), overflow-safe for large |x|."""
    return np.logaddexp(0.0, x)


def map_unconstrained(u, min_spacing: float) -> np.ndarray:
    """Chained-softplus map from R^3 to ordered, spaced threshold triples.

    Works on a single 3-vector or an (N, 3) batch; every input satisfies
    both spacing constraints by construction, so no post-hoc sorting is
    ever applied to sampled candidates.
    """
    if min_spacing <= 0:
        raise ValueError("min_spacing must be positive")
    u = np.asarray(u, float)
    t1 = u[..., 0]
    t2 = t1 + min_spacing + softplus(u[..., 1])
    t3 = t2 + min_spacing + softplus(u[..., 2])
    return np.stack([t1, t2, t3], axis=-1)


def feasible_map(u, min_spacing: float) -> ThresholdVector:
    return ThresholdVector.from_array(map_unconstrained(u, min_spacing))


def inverse_feasible(thresholds: ThresholdVector, min_spacing: float) -> np.ndarray:
    """Unconstrained coordinates that map (back) to the given thresholds.

    Gaps at exactly the minimum spacing clamp to a large negative
    coordinate (the softplus offset saturates at zero from above).
    """

    def inv_softplus(y: float) -> float:
        y = max(y, 1e-9)
        return y + math.log(-math.expm1(-y))

    return np.array(
        [
            thresholds.t1,
            inv_softplus(thresholds.t2 - thresholds.t1 - min_spacing),
            inv_softplus(thresholds.t3 - thresholds.t2 - min_spacing),
        ]
    )


def calibrate_resi_cdf(
    scenario: ScenarioConfig,
    seed: int,
    n_frames: int = 1000,
    fidelity: float = 1.0,
) -> np.ndarray:
    """Sorted echo-strength samples from sweep-only episodes.

    Runs the loop with unreachably high thresholds so nothing ever locks and
    the collected values describe the plain sweeping scenario.
    """
    passive = ThresholdVector(1e9, 2e9, 3e9)
    samples: list[float] = []
    episode = 0
    while len(samples) < n_frames:
        trace = run_episode(scenario, passive, seed=derive_seed(seed, "cdf", episode),
                            fidelity=fidelity)
        samples.extend(trace.resi.tolist())
        episode += 1
    return np.sort(np.asarray(samples[:n_frames]))


@dataclass(frozen=True)
class FeasibleMap:
    """Unconstrained-to-feasible threshold mapping.

    "softplus" chains spacing offsets directly in threshold units;
    "quantile" places thresholds on an empirical echo-strength CDF (built by
    :func:`calibrate_resi_cdf`), chaining quantile gaps so the output is
    still ordered and spaced for every input.
    """

    mode: str = "softplus"
    min_spacing: float = 0.1
    resi_samples: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("softplus", "quantile"):
            raise ValueError("mode must be 'softplus' or 'quantile'")
        if self.mode == "quantile" and (
            self.resi_samples is None or len(self.resi_samples) < 2
        ):
            raise ValueError("quantile mode needs calibration samples")

    def __call__(self, u) -> ThresholdVector:
        if self.mode == "softplus":
            return feasible_map(u, self.min_spacing)
        u = np.asarray(u, float)
        sig = 1.0 / (1.0 + np.exp(-u))
        q1 = sig[0]
        q2 = q1 + (1.0 - q1) * sig[1]
        q3 = q2 + (1.0 - q2) * sig[2]
        grid = np.linspace(0.0, 1.0, len(self.resi_samples))
        v1, v2, v3 = np.interp([q1, q2, q3], grid, self.resi_samples)
        t1 = v1
        t2 = t1 + self.min_spacing + max(v2 - v1, 0.0)
        t3 = t2 + self.min_spacing + max(v3 - v2, 0.0)
        return ThresholdVector(float(t1), float(t2), float(t3))


def structured_sample(
    state: CmaState,
    lam: int,
    seed: int,
    mirrored: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate draws with mirrored pairs and an orthogonalized base block.

    With mirroring, lambda/2 base directions are emitted interleaved with
    their negations, so the raw draws sum to zero exactly; the base block is
    orthogonalized (norms preserved) when it has at most as many directions
    as dimensions, otherwise plain draws are kept. Without mirroring this is
    ordinary sampling.
    """
    n = state.dimension
    if not mirrored:
        rng = rng_from(seed, "cma-sample")
        z = rng.standard_normal((lam, n))
        return z, _points_from_draws(state, z)
    if lam % 2 != 0:
        raise ValueError("mirrored sampling needs an even population size")

    half = lam // 2
    rng = rng_from(seed, "mirrored-sample")
    base = rng.standard_normal((half, n))
    if half <= n:
        norms = np.linalg.norm(base, axis=1)
        q, _ = np.linalg.qr(base.T)
        base = (q[:, :half] * norms).T
    z = np.empty((lam, n))
    z[0::2] = base
    z[1::2] = -base
    return z, _points_from_draws(state, z)


def stage1_screen(
    candidates: Sequence,
    objective: StochasticObjective,
    plan: CrnSeedPlan,
    fidelity_ratio: float,
) -> np.ndarray:
    """Coarse evaluation of every candidate under the shared Stage-1 seed."""
    if len(candidates) == 0:
        raise ValueError("candidate list must be non-empty")
    return np.array(
        [
            objective.evaluate(c, plan.stage1_seed, fidelity_ratio, kind="stage1")
            for c in candidates
        ]
    )


def promote(values: np.ndarray, promotion_fraction: float) -> np.ndarray:
    """Indices of the k best screening values (ascending index on ties)."""
    values = np.asarray(values, float)
    k = max(1, int(promotion_fraction * len(values)))
    if k > len(values):
        raise ValueError("cannot promote more candidates than screened")
    order = np.argsort(values, kind="stable")
    return np.sort(order[:k])


def stage2_refine(
    points: Sequence,
    objective: StochasticObjective,
    plan: CrnSeedPlan,
    repetitions: int,
    truncation: float = 1.0,
) -> list[RepeatedEstimate]:
    """Repeated evaluation of the promoted candidates under shared seeds.

    ``truncation`` below 1 emulates early stopping by shortening each
    evaluation (and its charge) to that fraction of a full one.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    estimates = []
    for point in points:
        values = np.array(
            [
                objective.evaluate(point, s, truncation, kind="stage2")
                for s in plan.stage2_seeds[:repetitions]
            ]
        )
        variance = float(np.var(values, ddof=1)) if repetitions >= 2 else None
        estimates.append(
            RepeatedEstimate(mean=float(values.mean()), variance=variance,
                             repetitions=repetitions)
        )
    return estimates


def assemble_ranking(
    stage1_values: np.ndarray,
    promoted: np.ndarray,
    estimates: Sequence[RepeatedEstimate],
    weighting_floor: float,
    prior_variance: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Merge both stages into per-candidate (cost, variance) arrays.

    Promoted candidates carry their Stage-2 mean and variance (prior when a
    single repetition leaves the variance undefined); the rest keep their
    screening value plus a tie-breaking offset and inherit the worst
    promoted variance, which keeps them rankable but down-weighted.
    """
    if len(estimates) != len(promoted):
        raise ValueError("need exactly one estimate per promoted candidate")
    lam = len(stage1_values)
    costs = np.asarray(stage1_values, float) + weighting_floor
    variances = np.empty(lam)
    promoted_vars = np.array(
        [e.variance if e.variance is not None else prior_variance for e in estimates]
    )
    variances[:] = promoted_vars.max() if len(promoted_vars) else prior_variance
    for idx, est in zip(promoted, estimates):
        costs[idx] = est.mean
        variances[idx] = est.variance if est.variance is not None else prior_variance
    return costs, variances


def uncertainty_weights(
    base_weights: np.ndarray, variances: np.ndarray, weighting_floor: float
) -> np.ndarray:
    """Inverse-variance reweighting of the recombination weights.

    Equal variances return the base weights unchanged (the common factor
    cancels exactly); otherwise weights are scaled by 1/(floor + variance)
    and renormalized.
    """
    w = np.asarray(base_weights, float)
    v = np.asarray(variances, float)
    if len(w) != len(v):
        raise ValueError("one variance per weight required")
    if np.all(v == v[0]):
        return w.copy()
    raw = w / (weighting_floor + v)
    return raw / raw.sum()


@dataclass(frozen=True)
class GenerationReport:
    """Racing diagnostics for one generation."""

    generation: int
    stage1_values: tuple[float, ...]
    promoted: tuple[int, ...]
    stage2_means: tuple[float, ...]
    stage2_variances: tuple[float, ...]
    effective_weights: tuple[float, ...]
    ledger_delta: float
    cumulative_n_eq: float


def reports_to_csv(reports: Sequence[GenerationReport], stream: TextIO) -> None:
    stream.write(
        "generation,stage1_min,stage1_median,promoted,stage2_means,"
        "stage2_variances,effective_weights,delta_n_eq,cumulative_n_eq\n"
    )
    for rep in reports:
        s1 = np.asarray(rep.stage1_values)
        stream.write(
            f"{rep.generation},{float(s1.min())!r},{float(np.median(s1))!r},"
            f"{';'.join(str(i) for i in rep.promoted)},"
            f"{';'.join(repr(v) for v in rep.stage2_means)},"
            f"{';'.join(repr(v) for v in rep.stage2_variances)},"
            f"{';'.join(repr(v) for v in rep.effective_weights)},"
            f"{rep.ledger_delta!r},{rep.cumulative_n_eq!r}\n"
        )


@dataclass
class RaceResult:
    best_point: object
    best_cost: float
    n_eq: float
    history: list[GenerationRecord]
    reports: list[GenerationReport]
    state: CmaState


def race_cma_optimize(
    objective: StochasticObjective,
    params: CmaParams,
    racing: RacingConfig,
    init: tuple[np.ndarray, float],
    budget: float,
    seed: int,
    feasible_map: Callable[[np.ndarray], object] | None = None,
    max_generations: int | None = None,
    sigma_stop: float = 1e-12,
) -> RaceResult:
    """Full racing loop on top of the CMA-ES backbone.

    The covariance stays diagonal for the configured warmup generations,
    then adapts fully. The returned best point is the best Stage-2 mean seen
    (screening values are never trusted as the final answer unless nothing
    was ever promoted, which cannot happen with at least one promotion per
    generation).
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    state = init_state(*init)
    mapper = feasible_map if feasible_map is not None else (lambda u: u)
    gen_cost = racing.generation_cost_exact(params.lam)

    spent = Fraction(0)
    best_cost = math.inf
    best_point = mapper(state.mean)
    seen_variances: list[float] = []
    history: list[GenerationRecord] = []
    reports: list[GenerationReport] = []

    while float(spent + gen_cost) <= budget + 1e-12 and state.sigma > sigma_stop:
        if max_generations is not None and state.generation >= max_generations:
            break
        gen = state.generation
        plan = derive_seed_plan(seed, gen, racing.repetitions)
        z, points = structured_sample(
            state, params.lam, derive_seed(seed, gen, "sample"), racing.mirrored_sampling
        )
        mapped = [mapper(u) for u in points]

        stage1 = stage1_screen(mapped, objective, plan, racing.fidelity_ratio)
        promoted = promote(stage1, racing.promotion_fraction)
        estimates = stage2_refine(
            [mapped[i] for i in promoted], objective, plan,
            racing.repetitions, racing.truncation,
        )
        seen_variances.extend(e.variance for e in estimates if e.variance is not None)
        prior = float(np.median(seen_variances)) if seen_variances else 0.0
        costs, variances = assemble_ranking(
            stage1, promoted, estimates, racing.weighting_floor, prior
        )
        spent += gen_cost
        spent_f = float(spent)

        for idx, est in zip(promoted, estimates):
            if est.mean < best_cost:
                best_cost = est.mean
                best_point = mapped[idx]

        order = np.argsort(costs, kind="stable")
        elite_idx = order[: params.mu]
        weights = uncertainty_weights(
            params.weights, variances[elite_idx], racing.weighting_floor
        )
        state = update(state, params, points[elite_idx], weights)
        if state.generation <= racing.diagonal_warmup_generations:
            state = CmaState(
                mean=state.mean, sigma=state.sigma, cov=np.diag(np.diag(state.cov)),
                path_sigma=state.path_sigma, path_cov=state.path_cov,
                generation=state.generation,
            )

        history.append(
            GenerationRecord(
                generation=gen,
                best_cost=float(min(e.mean for e in estimates)),
                mean_cost=float(np.mean(costs)),
                sigma=state.sigma,
                n_eq=spent_f,
                mean=tuple(state.mean),
                best_point=tuple(point_array(best_point)),
            )
        )
        reports.append(
            GenerationReport(
                generation=gen,
                stage1_values=tuple(float(v) for v in stage1),
                promoted=tuple(int(i) for i in promoted),
                stage2_means=tuple(e.mean for e in estimates),
                stage2_variances=tuple(
                    e.variance if e.variance is not None else prior for e in estimates
                ),
                effective_weights=tuple(float(w) for w in weights),
                ledger_delta=float(gen_cost),
                cumulative_n_eq=spent_f,
            )
        )

    return RaceResult(
        best_point=best_point,
        best_cost=best_cost,
        n_eq=float(spent),
        history=history,
        reports=reports,
        state=state,
    )
