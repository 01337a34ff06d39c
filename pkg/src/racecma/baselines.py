"""Comparison optimizers: analytic MAP placement, interior-point Newton with
a log barrier, and simultaneous-perturbation stochastic approximation.

All three share the stochastic-objective protocol and its cost ledger, and
evaluate finite differences under one seed per iteration so the differencing
noise is common-mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .feedback import ThresholdVector, classify, run_episode
from .objective import StochasticObjective
from .scenario import ScenarioConfig
from .seeding import derive_seed, rng_from


class CalibrationError(RuntimeError):
    """Raised when fitted densities cannot produce ordered crossings."""


@dataclass(frozen=True)
class HypothesisDensityModel:
    """Gaussian conditional density and prior per hypothesis state."""

    means: tuple[float, ...]
    stds: tuple[float, ...]
    priors: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.means) == len(self.stds) == len(self.priors)):
            raise ValueError("model components must have equal length")
        if any(s <= 0 for s in self.stds):
            raise ValueError("stds must be positive")
        if abs(sum(self.priors) - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")

    def log_posterior(self, x: float, i: int) -> float:
        mu, sd, pr = self.means[i], self.stds[i], self.priors[i]
        return math.log(pr) - math.log(sd) - (x - mu) ** 2 / (2.0 * sd**2)


def fit_density_model(
    samples_by_state: dict[int, np.ndarray],
    priors: tuple[float, ...] | None = None,
    min_samples: int = 30,
) -> HypothesisDensityModel:
    """Fit one Gaussian per state; priors default to sample proportions."""
    states = sorted(samples_by_state)
    groups = [np.asarray(samples_by_state[s], float) for s in states]
    if any(len(g) < min_samples for g in groups):
        raise CalibrationError(f"each state needs >= {min_samples} calibration samples")
    means = tuple(float(g.mean()) for g in groups)
    stds = tuple(max(float(g.std(ddof=1)), 1e-9) for g in groups)
    if priors is None:
        total = sum(len(g) for g in groups)
        priors = tuple(len(g) / total for g in groups)
    return HypothesisDensityModel(means=means, stds=stds, priors=priors)


def _gaussian_crossing(
    mu1: float, sd1: float, p1: float, mu2: float, sd2: float, p2: float
) -> float:
    """Decision boundary where the two posteriors are equal.

    Fitted spreads within 10% of each other are pooled and solved in closed
    form (sample noise on the smaller class would otherwise swing the far
    crossing); genuinely unequal spreads use the quadratic, keeping the root
    closest to the pooled-variance reference inside the decision-relevant
    window. With lopsided priors the boundary can land beyond the higher
    mean; that is correct, not an error.
    """
    if mu2 <= mu1:
        raise CalibrationError("fitted means must be ordered")
    pooled = math.sqrt((sd1**2 + sd2**2) / 2.0)
    reference = (mu1 + mu2) / 2.0 + pooled**2 * math.log(p1 / p2) / (mu2 - mu1)
    if abs(sd1 - sd2) <= 0.1 * pooled:
        return reference
    # Unequal variances: quadratic in x from equating log posteriors.
    a = 1.0 / (2.0 * sd2**2) - 1.0 / (2.0 * sd1**2)
    b = mu1 / sd1**2 - mu2 / sd2**2
    c = (
        mu2**2 / (2.0 * sd2**2)
        - mu1**2 / (2.0 * sd1**2)
        + math.log((p1 * sd2) / (p2 * sd1))
    )
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise CalibrationError("posteriors have no crossing")
    roots = [(-b + s * math.sqrt(disc)) / (2.0 * a) for s in (1.0, -1.0)]
    window = (mu1 - 3.0 * sd1, mu2 + 3.0 * sd2)
    inside = [r for r in roots if window[0] <= r <= window[1]]
    if not inside:
        raise CalibrationError("no posterior crossing between the fitted means")
    return min(inside, key=lambda r: abs(r - reference))


def map_thresholds(
    samples_by_state: dict[int, np.ndarray],
    priors: tuple[float, ...] | None = None,
    min_spacing: float = 0.1,
    min_samples: int = 30,
) -> ThresholdVector:
    """Thresholds at the posterior-equality points of adjacent hypotheses.

    Needs labeled calibration samples for all four states with
    increasingly-ordered fitted means; the three crossings are repaired to
    the minimum spacing if the fit brings two of them too close.
    """
    model = fit_density_model(samples_by_state, priors, min_samples)
    if len(model.means) != 4:
        raise CalibrationError("expected calibration samples for four states")
    crossings = [
        _gaussian_crossing(
            model.means[i], model.stds[i], model.priors[i],
            model.means[i + 1], model.stds[i + 1], model.priors[i + 1],
        )
        for i in range(3)
    ]
    t1, t2, t3 = crossings
    t2 = max(t2, t1 + min_spacing)
    t3 = max(t3, t2 + min_spacing)
    return ThresholdVector(t1, t2, t3)


def posterior_crossing(
    samples_low: np.ndarray,
    samples_high: np.ndarray,
    priors: tuple[float, float] | None = None,
    min_samples: int = 30,
) -> float:
    """Posterior-equality point of two fitted Gaussian hypotheses."""
    model = fit_density_model(
        {0: np.asarray(samples_low), 1: np.asarray(samples_high)}, priors, min_samples
    )
    return _gaussian_crossing(
        model.means[0], model.stds[0], model.priors[0],
        model.means[1], model.stds[1], model.priors[1],
    )


def map_calibrate(
    objective,
    seed: int,
    provisional: ThresholdVector | None = None,
    episodes: int = 1,
    min_spacing: float = 0.1,
    min_samples: int = 30,
) -> ThresholdVector:
    """One-shot MAP placement from seeded calibration episodes.

    Labels the collected echo-strength values with provisional thresholds
    (observed quantiles when none are given), fits the per-state densities
    and solves the crossings. Charges one full evaluation per episode.
    """
    scenario: ScenarioConfig = objective.scenario
    values: list[float] = []
    for ep in range(episodes):
        passive = ThresholdVector(1e9, 2e9, 3e9)
        trace = run_episode(
            scenario, provisional if provisional is not None else passive,
            objective.actions, derive_seed(seed, "map-calibration", ep), 1.0,
        )
        objective.ledger.add(1.0, "full")
        values.extend(trace.resi.tolist())
    x = np.asarray(values)
    if provisional is None:
        q = np.quantile(x, [0.5, 0.75, 0.9])
        provisional = ThresholdVector(
            float(q[0]), float(max(q[1], q[0] + min_spacing)),
            float(max(q[2], q[1] + 2 * min_spacing)),
        )
    labels = np.array([classify(v, provisional) for v in x])
    samples_by_state = {s: x[labels == s] for s in range(4)}
    return map_thresholds(samples_by_state, None, min_spacing, min_samples)


def history_to_csv(
    history: Sequence[tuple[int, float, tuple[float, float, float], float]],
    stream: TextIO,
) -> None:
    """Per-iteration trace shared by the local optimizers."""
    stream.write("iteration,cost,t1,t2,t3,n_eq\n")
    for iteration, cost, point, n_eq in history:
        stream.write(
            f"{iteration},{cost!r},{point[0]!r},{point[1]!r},{point[2]!r},{n_eq!r}\n"
        )


# ---------------------------------------------------------------------------
# Interior-point Newton


@dataclass(frozen=True)
class IpnConfig:
    """Barrier schedule and finite-difference settings.

    The starting barrier weight is a modest fraction of the unit cost scale
    so the penalty shapes feasibility without drowning a flat objective.
    """

    barrier_init: float = 0.1
    barrier_shrink: float = 10.0
    outer_rounds: int = 6
    newton_iters: int = 2
    fd_step: float = 0.05
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20


def _barrier_value(t: np.ndarray) -> float:
    g1, g2 = t[1] - t[0], t[2] - t[1]
    if g1 <= 0 or g2 <= 0:
        return math.inf
    return -(math.log(g1) + math.log(g2))


def _barrier_gradient(t: np.ndarray) -> np.ndarray:
    g1, g2 = t[1] - t[0], t[2] - t[1]
    return np.array([1.0 / g1, -1.0 / g1 + 1.0 / g2, -1.0 / g2])


def _barrier_hessian(t: np.ndarray) -> np.ndarray:
    g1, g2 = t[1] - t[0], t[2] - t[1]
    h1 = np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]) / g1**2
    h2 = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.0, -1.0, 1.0]]) / g2**2
    return h1 + h2


@dataclass
class IpnResult:
    best_point: ThresholdVector
    best_cost: float
    n_eq: float
    history: list[tuple[int, float, tuple[float, float, float], float]]


def ipn_optimize(
    objective: StochasticObjective,
    t0: ThresholdVector,
    config: IpnConfig = IpnConfig(),
    budget: float = 60.0,
    seed: int = 0,
) -> IpnResult:
    """Barrier Newton descent with central differences on the objective.

    Each Newton step spends 2n+1 = 7 objective evaluations on the stencil
    (the barrier derivatives are analytic and free) plus one per line-search
    probe, all under a per-iteration seed. The Hessian of the objective is
    diagonal (that is all the stencil supports); the barrier contributes its
    exact full Hessian, and a ridge is added until the solve is definite.
    """
    t = t0.as_array().astype(float)
    if t[1] <= t[0] or t[2] <= t[1]:
        raise ValueError("initial point must be strictly feasible")

    mu = config.barrier_init
    spent = 0.0
    best_cost = math.inf
    best_point = t.copy()
    history: list[tuple[int, float, tuple[float, float, float], float]] = []
    iteration = 0

    def phi(point: np.ndarray, j_value: float) -> float:
        return j_value + mu * _barrier_value(point)

    for _round in range(config.outer_rounds):
        for _step in range(config.newton_iters):
            if spent + 7 > budget + 1e-12:
                return IpnResult(ThresholdVector.from_array(best_point), best_cost, spent, history)
            iter_seed = derive_seed(seed, "ipn", iteration)
            j_center = objective.evaluate(t.copy(), iter_seed, 1.0)
            grad_j = np.zeros(3)
            hess_diag = np.zeros(3)
            h = config.fd_step
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                j_plus = objective.evaluate(t + e, iter_seed, 1.0)
                j_minus = objective.evaluate(t - e, iter_seed, 1.0)
                grad_j[i] = (j_plus - j_minus) / (2.0 * h)
                hess_diag[i] = (j_plus - 2.0 * j_center + j_minus) / h**2
            spent += 7.0

            if j_center < best_cost:
                best_cost = j_center
                best_point = t.copy()

            grad = grad_j + mu * _barrier_gradient(t)
            hess = np.diag(hess_diag) + mu * _barrier_hessian(t)
            ridge = 0.0
            while True:
                try:
                    direction = np.linalg.solve(hess + ridge * np.eye(3), -grad)
                    if np.min(np.linalg.eigvalsh(hess + ridge * np.eye(3))) > 0:
                        break
                except np.linalg.LinAlgError:
                    pass
                ridge = max(2.0 * ridge, 1e-6)

            phi_current = phi(t, j_center)
            slope = float(grad @ direction)
            alpha = 1.0
            accepted = False
            for _bt in range(config.max_backtracks):
                candidate = t + alpha * direction
                if candidate[1] > candidate[0] and candidate[2] > candidate[1]:
                    if spent + 1 > budget + 1e-12:
                        return IpnResult(
                            ThresholdVector.from_array(best_point), best_cost, spent, history
                        )
                    j_cand = objective.evaluate(candidate, iter_seed, 1.0)
                    spent += 1.0
                    if phi(candidate, j_cand) <= phi_current + config.armijo * alpha * slope:
                        t = candidate
                        accepted = True
                        break
                alpha *= config.backtrack
            iteration += 1
            history.append((iteration, j_center, tuple(t), spent))
            if not accepted:
                return IpnResult(ThresholdVector.from_array(best_point), best_cost, spent, history)
        mu /= config.barrier_shrink

    return IpnResult(ThresholdVector.from_array(best_point), best_cost, spent, history)


# ---------------------------------------------------------------------------
# SPSA


@dataclass(frozen=True)
class SpsaSchedule:
    """Diminishing gain and perturbation sequences."""

    a: float = 0.5
    stability: float = 10.0
    c: float = 0.2
    alpha: float = 0.602
    gamma: float = 0.101

    def __post_init__(self) -> None:
        if self.a <= 0 or self.c <= 0:
            raise ValueError("gain constants must be positive")
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0.5, 1]")
        if not 0.0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")

    def gain(self, k: int) -> float:
        return self.a / (self.stability + k + 1) ** self.alpha

    def perturbation(self, k: int) -> float:
        return self.c / (k + 1) ** self.gamma


def project_thresholds(values: np.ndarray, min_spacing: float) -> np.ndarray:
    """Feasibility projection: sort ascending, then push entries apart."""
    t = np.sort(np.asarray(values, float))
    t[1] = max(t[1], t[0] + min_spacing)
    t[2] = max(t[2], t[1] + min_spacing)
    return t


def spsa_gradient(
    objective: StochasticObjective,
    t: np.ndarray,
    c_k: float,
    delta: np.ndarray,
    seed: int,
    min_spacing: float = 0.0,
) -> np.ndarray:
    """Two-evaluation simultaneous-perturbation gradient estimate.

    Both probes are reordered (and, if ``min_spacing`` > 0, spaced) before
    evaluation so a perturbation cannot break feasibility, and share one
    seed so their noise is common-mode. The divisor uses the nominal
    perturbation.
    """
    delta = np.asarray(delta, float)
    if not np.all(np.abs(delta) == 1.0):
        raise ValueError("perturbation entries must be +/-1")
    plus = project_thresholds(t + c_k * delta, min_spacing)
    minus = project_thresholds(t - c_k * delta, min_spacing)
    j_plus = objective.evaluate(plus, seed, 1.0)
    j_minus = objective.evaluate(minus, seed, 1.0)
    return (j_plus - j_minus) / (2.0 * c_k * delta)


@dataclass
class SpsaResult:
    best_point: ThresholdVector
    best_cost: float
    n_eq: float
    history: list[tuple[int, float, tuple[float, float, float], float]]


def spsa_optimize(
    objective: StochasticObjective,
    t0: ThresholdVector,
    schedule: SpsaSchedule = SpsaSchedule(),
    budget: float = 60.0,
    seed: int = 0,
    min_spacing: float = 0.1,
    probe_every: int = 10,
) -> SpsaResult:
    """SPSA descent on the threshold triple with feasibility projection.

    The iterate sequence is not monotone under noise, so the returned point
    is the best among periodic full-fidelity probes (the final iterate when
    the budget never allowed a probe). Probes are charged to the ledger.
    """
    t = t0.as_array().astype(float)
    spent = 0.0
    best_cost = math.inf
    best_point = t.copy()
    probed = False
    history: list[tuple[int, float, tuple[float, float, float], float]] = []

    k = 0
    while spent + 2 <= budget + 1e-12:
        delta = rng_from(seed, "spsa-delta", k).choice([-1.0, 1.0], size=3)
        grad = spsa_gradient(
            objective, t, schedule.perturbation(k), delta,
            derive_seed(seed, "spsa", k), min_spacing=0.0,
        )
        spent += 2.0
        t = project_thresholds(t - schedule.gain(k) * grad, min_spacing)
        k += 1
        if k % probe_every == 0 and spent + 1 <= budget + 1e-12:
            probe = objective.evaluate(t.copy(), derive_seed(seed, "spsa-probe", k), 1.0)
            spent += 1.0
            probed = True
            if probe < best_cost:
                best_cost = probe
                best_point = t.copy()
            history.append((k, probe, tuple(t), spent))

    if not probed:
        best_point = t.copy()
    return SpsaResult(ThresholdVector.from_array(best_point), best_cost, spent, history)
