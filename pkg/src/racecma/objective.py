"""Stochastic objective wrappers with exact evaluation-cost accounting.

Cost is measured in full-evaluation equivalents: a full-horizon episode
charges 1.0, a coarse evaluation at fidelity f charges f. The ledger keeps
an exact rational total so configured fidelities like 0.2 accumulate without
floating-point drift, and accumulation is atomic so concurrent evaluations
stay order-independent.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, runtime_checkable

import numpy as np

from .feedback import (
    DEFAULT_ACTIONS,
    ObjectiveValues,
    StateActionTable,
    ThresholdVector,
    episode_objectives,
    run_episode,
)
from .scenario import ScenarioConfig
from .seeding import derive_seed, rng_from


def _exact(weight: float) -> Fraction:
    # str() gives the shortest round-tripping decimal, so 0.2 charges 1/5.
    return Fraction(str(float(weight)))


class CostLedger:
    """Cumulative evaluation cost in full-evaluation equivalents."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._total = Fraction(0)
        self._counts: dict[str, int] = {"stage1": 0, "stage2": 0, "full": 0}
        self._weighted: dict[str, Fraction] = {k: Fraction(0) for k in self._counts}

    def add(self, weight: float, kind: str = "full") -> None:
        if weight < 0:
            raise ValueError("cost increments must be nonnegative")
        exact = _exact(weight)
        with self._lock:
            self._total += exact
            self._counts[kind] = self._counts.get(kind, 0) + 1
            self._weighted[kind] = self._weighted.get(kind, Fraction(0)) + exact

    @property
    def n_eq(self) -> float:
        return float(self._total)

    @property
    def exact_total(self) -> Fraction:
        return self._total

    @property
    def breakdown(self) -> dict[str, tuple[int, float]]:
        with self._lock:
            return {k: (self._counts[k], float(self._weighted[k])) for k in self._counts}


@dataclass(frozen=True)
class CrnSeedPlan:
    """Common-random-number seeds shared by every candidate in a generation."""

    master_seed: int
    generation: int
    stage1_seed: int
    stage2_seeds: tuple[int, ...]


def derive_seed_plan(master_seed: int, generation: int, repetitions: int) -> CrnSeedPlan:
    """Deterministic, collision-free seed plan for one generation."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return CrnSeedPlan(
        master_seed=master_seed,
        generation=generation,
        stage1_seed=derive_seed(master_seed, generation, "stage1"),
        stage2_seeds=tuple(
            derive_seed(master_seed, generation, "stage2", rep) for rep in range(repetitions)
        ),
    )


@dataclass(frozen=True)
class RepeatedEstimate:
    """Mean/variance summary of repeated evaluations at one point.

    ``variance`` is the unbiased sample variance and is None for a single
    repetition; inverse-variance weighting substitutes a prior in that case.
    """

    mean: float
    variance: float | None
    repetitions: int


@runtime_checkable
class StochasticObjective(Protocol):
    ledger: CostLedger

    def evaluate(self, point, seed: int, fidelity: float = 1.0) -> float: ...


def evaluate_repeated(
    objective: StochasticObjective,
    point,
    seeds,
    fidelity: float = 1.0,
) -> RepeatedEstimate:
    """Evaluate a point under each seed; unbiased variance needs >= 2 seeds."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seed list must be non-empty")
    values = np.array([objective.evaluate(point, s, fidelity) for s in seeds])
    variance = float(np.var(values, ddof=1)) if len(values) >= 2 else None
    return RepeatedEstimate(mean=float(np.mean(values)), variance=variance, repetitions=len(values))


class IsacObjective:
    """Closed-loop sensing episode cost as a function of the thresholds.

    Evaluations are pure: identical (point, seed, fidelity) always return
    the same value and nothing but the ledger accumulates state.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        actions: StateActionTable = DEFAULT_ACTIONS,
        weights: tuple[float, float, float] = (1.0, 0.0, 0.0),
        ledger: CostLedger | None = None,
    ) -> None:
        self.scenario = scenario
        self.actions = actions
        self.weights = weights
        self.ledger = ledger if ledger is not None else CostLedger()

    def _thresholds(self, point) -> ThresholdVector:
        if isinstance(point, ThresholdVector):
            return point
        return ThresholdVector.from_array(point)

    def peek_values(self, point, seed: int, fidelity: float = 1.0) -> ObjectiveValues:
        """Episode objectives without charging the ledger (assessment use)."""
        thresholds = self._thresholds(point)
        trace = run_episode(self.scenario, thresholds, self.actions, seed, fidelity)
        return episode_objectives(trace, thresholds, self.weights)

    def evaluate(self, point, seed: int, fidelity: float = 1.0, kind: str = "full") -> float:
        values = self.peek_values(point, seed, fidelity)
        self.ledger.add(fidelity, kind)
        return values.scalar_cost


class SyntheticObjective:
    """Deterministic test function with optional seeded noise.

    ``noise_mode`` controls how the perturbation couples to the seed:
    "common" draws one offset per seed shared by every point (perfectly
    correlated noise), "point" mixes the evaluation point into the draw so
    different candidates see independent noise under the same seed. Coarse
    fidelities widen the noise as 1/sqrt(fidelity), mimicking an estimator
    built from fewer trials.
    """

    def __init__(
        self,
        fn,
        noise_std: float = 0.0,
        noise_mode: str = "point",
        ledger: CostLedger | None = None,
    ) -> None:
        if noise_mode not in ("common", "point"):
            raise ValueError("noise_mode must be 'common' or 'point'")
        self.fn = fn
        self.noise_std = noise_std
        self.noise_mode = noise_mode
        self.ledger = ledger if ledger is not None else CostLedger()

    def true_value(self, point) -> float:
        return float(self.fn(np.asarray(point, float)))

    def evaluate(self, point, seed: int, fidelity: float = 1.0, kind: str = "full") -> float:
        if not 0.0 < fidelity <= 1.0:
            raise ValueError("fidelity must lie in (0, 1]")
        as_array = getattr(point, "as_array", None)
        x = as_array() if as_array is not None else np.asarray(point, float)
        value = float(self.fn(x))
        if self.noise_std > 0.0:
            if self.noise_mode == "common":
                rng = rng_from(seed, "noise")
            else:
                key = np.round(x, 9).tobytes()
                rng = rng_from(seed, "noise", key)
            value += self.noise_std / np.sqrt(fidelity) * rng.standard_normal()
        self.ledger.add(fidelity, kind)
        return value
