"""Moving-target defense through D-FACTS reactance perturbation.

Effectiveness metrics compare the column spaces of the measurement matrix
before (``H``) and after (``H_prime``) a perturbation: the smallest principal
angle between them and the rank of the concatenation ``[H, H_prime]``. An
attack crafted as ``a = H c`` stays stealthy after the move only if it also
lies in col(H_prime), so a trivial intersection of the two spaces (composite
rank ``2n``) makes every such attack detectable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from ._rng import substream, subseed
from .estimator import DEFAULT_CONFIDENCE, ResidualTester
from .fdi import random_stealthy_attack
from .gridcore import (
    GridCase,
    InfeasibleError,
    MeasurementSet,
    PerturbationPlan,
    apply_perturbation,
    build_measurement_matrix,
    dc_opf,
    dc_power_flow,
    dispatch_injections,
)

__all__ = [
    "PerturbationPlan", "MtdAssessment", "Completeness", "TradeoffRow",
    "spa", "composite_rank", "is_complete_mtd", "detection_probability",
    "evaluate_detection", "search_plan", "search_plan_with_history", "tradeoff_curve",
    "write_tradeoff_csv", "PeriodicPolicy", "EventTriggeredPolicy", "mtd_schedule_policy",
    "identity_plan",
]

RANK_RTOL = 1e-9
# Sines below this are floating-point noise from orthonormalising the same space twice.
_SINE_FLOOR = 1e-13


def _orthonormal_basis(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if np.linalg.matrix_rank(H) < H.shape[1]:
        raise ValueError("matrix does not have full column rank")
    Q, _ = np.linalg.qr(H)
    return Q


def spa(H, H_prime) -> float:
    """Smallest principal angle (radians) between col(H) and col(H_prime)."""
    Q1, Q2 = _orthonormal_basis(H), _orthonormal_basis(H_prime)
    if Q1.shape[0] != Q2.shape[0]:
        raise ValueError("matrices must have the same number of rows")
    if Q2.shape[1] > Q1.shape[1]:
        Q1, Q2 = Q2, Q1
    cosines = np.linalg.svd(Q1.T @ Q2, compute_uv=False)
    cos_max = min(float(cosines.max()), 1.0)
    if cos_max <= math.sqrt(0.5):
        return float(np.clip(math.acos(cos_max), 0.0, math.pi / 2))
    # arccos loses half the digits near 0; read the small angle off its sine instead.
    sines = np.linalg.svd(Q2 - Q1 @ (Q1.T @ Q2), compute_uv=False)
    s = float(sines.min())
    if s < _SINE_FLOOR:
        return 0.0
    return float(np.clip(math.asin(min(s, 1.0)), 0.0, math.pi / 2))


def composite_rank(H, H_prime) -> int:
    H, H_prime = np.asarray(H, dtype=float), np.asarray(H_prime, dtype=float)
    if H.shape[0] != H_prime.shape[0]:
        raise ValueError("matrices must have the same number of rows")
    s = np.linalg.svd(np.hstack([H, H_prime]), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


@dataclass(frozen=True)
class Completeness:
    complete: bool
    rank: int
    required: int
    reason: str

    def __bool__(self):
        return self.complete


def is_complete_mtd(H, H_prime) -> Completeness:
    """Complete MTD: col(H) and col(H_prime) intersect only in zero (rank ``[H, H'] = 2n``)."""
    H, H_prime = np.asarray(H, dtype=float), np.asarray(H_prime, dtype=float)
    m = H.shape[0]
    required = H.shape[1] + H_prime.shape[1]
    rank = composite_rank(H, H_prime)
    if m < required:
        return Completeness(False, rank, required, "insufficient measurements for completeness")
    if rank == required:
        return Completeness(True, rank, required, "column spaces intersect only at the origin")
    return Completeness(False, rank, required, f"column spaces share a {required - rank}-dimensional subspace")


# -- detection evaluation -----------------------------------------------------

def _halfwidth(prob: float, trials: int) -> float:
    return 1.96 * math.sqrt(prob * (1.0 - prob) / trials)


def detection_probability(H_attacker, H_true, sigmas, attack_magnitude: float,
                          noise_sigma=None, trials: int = 1000, seed: int = 0,
                          p: float = DEFAULT_CONFIDENCE, x_true=None) -> tuple[float, float]:
    """Fraction of stealthy-against-``H_attacker`` attacks flagged by a BDD built on ``H_true``.

    Each trial draws its attack and its noise from its own substream of
    ``seed``, so the result does not depend on evaluation order. ``noise_sigma``
    of ``None`` uses ``sigmas``; ``0`` evaluates noiselessly. Returns the
    detection rate and a 95% normal-approximation half-width.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    H_attacker = np.asarray(H_attacker, dtype=float)
    H_true = np.asarray(H_true, dtype=float)
    m = H_true.shape[0]
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (m,))
    noise = sigmas if noise_sigma is None else np.broadcast_to(np.asarray(noise_sigma, dtype=float), (m,))
    tester = ResidualTester(H_true, sigmas, p)
    z0 = np.zeros(m) if x_true is None else H_true @ np.asarray(x_true, dtype=float)

    Z = np.empty((trials, m))
    for t in range(trials):
        a = random_stealthy_attack(H_attacker, attack_magnitude, substream(seed, "attack", t)).a
        e = np.random.default_rng(substream(seed, "noise", t)).standard_normal(m) * noise
        Z[t] = z0 + a + e
    prob = float(np.mean(tester.flags(Z)))
    return prob, _halfwidth(prob, trials)


@dataclass(frozen=True)
class MtdAssessment:
    spa: float
    composite_rank: int
    complete: bool
    detection_probability: float
    trials: int
    ci_halfwidth: float
    cost_delta: float
    plan: PerturbationPlan


def operating_state(case: GridCase) -> np.ndarray:
    """Non-slack angles at the least-cost dispatch, or zeros when there is none."""
    if not case.generators:
        return np.zeros(case.n_states)
    try:
        opf = dc_opf(case)
    except InfeasibleError:
        return np.zeros(case.n_states)
    p = dispatch_injections(case, opf.dispatch)
    p[case.bus_index(case.slack_bus)] -= p.sum()
    theta = dc_power_flow(case, p).angles
    return theta[[case.bus_index(b) for b in case.state_buses]]


def opf_cost_delta(case: GridCase, perturbed: GridCase) -> float:
    if not case.generators:
        return 0.0
    if perturbed == case:
        return 0.0
    return dc_opf(perturbed).cost - dc_opf(case).cost


def evaluate_detection(case: GridCase, ms: MeasurementSet, plan: PerturbationPlan,
                       attack_magnitude: float, noise_sigma=None, trials: int = 1000,
                       seed: int = 0, p: float = DEFAULT_CONFIDENCE) -> MtdAssessment:
    """Monte Carlo detection rate of stale stealthy attacks after applying ``plan``.

    Attacks are crafted against the pre-perturbation matrix; measurements come
    from the perturbed grid, which the defender's BDD also uses.
    """
    H = build_measurement_matrix(case, ms)
    moved = apply_perturbation(case, plan)
    H2 = build_measurement_matrix(moved, ms)
    prob, hw = detection_probability(H, H2, ms.sigmas, attack_magnitude, noise_sigma, trials, seed, p,
                                     x_true=operating_state(moved))
    return MtdAssessment(
        spa=spa(H, H2),
        composite_rank=composite_rank(H, H2),
        complete=is_complete_mtd(H, H2).complete,
        detection_probability=prob,
        trials=trials,
        ci_halfwidth=hw,
        cost_delta=opf_cost_delta(case, moved),
        plan=plan,
    )


# -- plan search --------------------------------------------------------------

OBJECTIVES = ("maximize-spa", "maximize-rank")


def identity_plan(case: GridCase, bounds=(1.0, 1.0)) -> PerturbationPlan:
    lines = [ln.id for ln in case.lines if ln.dfacts and ln.in_service]
    lo, hi = bounds
    return PerturbationPlan(tuple((lid, 1.0) for lid in lines), (min(lo, 1.0), max(hi, 1.0)), "identity")


def search_plan_with_history(case: GridCase, ms: MeasurementSet, objective: str = "maximize-spa",
                             bounds: tuple[float, float] = (0.8, 1.2), iterations: int = 200,
                             seed: int = 0, start: PerturbationPlan | None = None):
    """Seeded random multistart followed by per-line coordinate ascent.

    ``iterations`` is the budget of objective evaluations. Returns the best plan,
    its objective value, and the best-so-far value after every evaluation.
    The rank objective breaks ties by SPA.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    lines = [ln.id for ln in case.lines if ln.dfacts and ln.in_service]
    if not lines:
        raise ValueError("case has no D-FACTS capable lines")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not 0 < lo <= hi:
        raise ValueError(f"invalid bounds {bounds}")
    H = build_measurement_matrix(case, ms)

    def make(f) -> PerturbationPlan:
        return PerturbationPlan(tuple((lid, float(v)) for lid, v in zip(lines, f)), (lo, hi),
                                f"{objective} [{lo:g}, {hi:g}]")

    def key(f) -> tuple[float, ...]:
        H2 = build_measurement_matrix(apply_perturbation(case, make(f)), ms)
        angle = spa(H, H2)
        return (angle,) if objective == "maximize-spa" else (float(composite_rank(H, H2)), angle)

    history: list[float] = []
    best_f, best_k = None, None
    budget = max(1, int(iterations))

    def consider(f) -> bool:
        nonlocal best_f, best_k
        k = key(f)
        improved = best_k is None or k > best_k
        if improved:
            best_f, best_k = np.array(f, dtype=float), k
        history.append(best_k[0])
        return improved

    if lo == hi:
        consider(np.full(len(lines), lo))
        return make(best_f), best_k[0], history

    rng = np.random.default_rng(seed)
    starts = []
    if start is not None:
        given = dict(start.entries)
        starts.append(np.clip([given.get(lid, 1.0) for lid in lines], lo, hi))
    n_random = max(1, budget // 4)
    starts += [rng.uniform(lo, hi, len(lines)) for _ in range(n_random)]
    for f in starts:
        if len(history) >= budget:
            break
        consider(f)
    grid = np.linspace(lo, hi, 5)

    # Coordinate ascent from the incumbent; restart from a fresh random point when stuck.
    current = best_f.copy()
    current_k = best_k
    while len(history) < budget:
        moved = False
        for i in range(len(lines)):
            for g in grid:
                if len(history) >= budget:
                    break
                if g == current[i]:
                    continue
                trial = current.copy()
                trial[i] = g
                k = key(trial)
                if k > best_k:
                    best_f, best_k = trial.copy(), k
                history.append(best_k[0])
                if k > current_k:
                    current, current_k, moved = trial, k, True
        if not moved and len(history) < budget:
            current = rng.uniform(lo, hi, len(lines))
            current_k = key(current)
            if current_k > best_k:
                best_f, best_k = current.copy(), current_k
            history.append(best_k[0])
    return make(best_f), best_k[0], history


def search_plan(case: GridCase, ms: MeasurementSet, objective: str = "maximize-spa",
                bounds: tuple[float, float] = (0.8, 1.2), iterations: int = 200, seed: int = 0,
                start: PerturbationPlan | None = None) -> PerturbationPlan:
    plan, _, _ = search_plan_with_history(case, ms, objective, bounds, iterations, seed, start)
    return plan


# -- trade-off curve ----------------------------------------------------------

@dataclass(frozen=True)
class TradeoffRow:
    deviation: float
    spa: float
    detection_probability: float
    ci_halfwidth: float
    cost_delta: float
    plan: PerturbationPlan


TRADEOFF_HEADER = ("deviation", "spa_rad", "detection_prob", "ci_halfwidth", "cost_delta")


def tradeoff_curve(case: GridCase, ms: MeasurementSet, bound_schedule: Sequence[float], trials: int = 500,
                   seed: int = 0, attack_magnitude: float = 0.02, noise_sigma=None,
                   objective: str = "maximize-spa", iterations: int = 120,
                   p: float = DEFAULT_CONFIDENCE) -> list[TradeoffRow]:
    """One row per maximum factor deviation ``d`` (bounds ``[1 - d, 1 + d]``).

    Each search is warm-started from the previous row's plan when that plan
    fits inside the new bounds, so SPA cannot decrease along a widening schedule.
    """
    if not len(bound_schedule):
        raise ValueError("bound schedule must not be empty")
    rows: list[TradeoffRow] = []
    prev: PerturbationPlan | None = None
    for k, dev in enumerate(bound_schedule):
        dev = float(dev)
        if not 0 <= dev < 1:
            raise ValueError(f"deviation {dev} must lie in [0, 1)")
        bounds = (1.0 - dev, 1.0 + dev)
        if dev == 0:
            plan = identity_plan(case)
        else:
            warm = prev if prev is not None and prev.max_deviation <= dev else None
            plan = search_plan(case, ms, objective, bounds, iterations, subseed(seed, "search", k), warm)
        a = evaluate_detection(case, ms, plan, attack_magnitude, noise_sigma, trials,
                               subseed(seed, "detect", k), p)
        rows.append(TradeoffRow(dev, a.spa, a.detection_probability, a.ci_halfwidth, a.cost_delta, plan))
        prev = plan
    return rows


def write_tradeoff_csv(rows: Iterable[TradeoffRow], stream: TextIO | None = None) -> str:
    buf = stream or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRADEOFF_HEADER)
    for r in rows:
        w.writerow([f"{r.deviation:.6g}", f"{r.spa:.12g}", f"{r.detection_probability:.6g}",
                    f"{r.ci_halfwidth:.6g}", f"{r.cost_delta:.12g}"])
    return buf.getvalue() if stream is None else ""


# -- scheduling ---------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicPolicy:
    """Proactive MTD: a perturbation every ``interval`` seconds."""

    interval: float
    plans: tuple[PerturbationPlan, ...] = ()

    mode = "periodic"

    def __post_init__(self):
        if not self.interval > 0:
            raise ValueError("interval must be positive")

    def event_times(self, duration: float, start: float = 0.0) -> list[float]:
        times, k = [], 1
        while start + k * self.interval <= duration:
            times.append(start + k * self.interval)
            k += 1
        return times

    def on_meta_alert(self, time: float) -> float | None:
        return None

    def plan_for(self, k: int) -> PerturbationPlan | None:
        return self.plans[k % len(self.plans)] if self.plans else None


@dataclass(frozen=True)
class EventTriggeredPolicy:
    """Reactive MTD: perturb ``delay`` seconds after an IDS meta-alert, then re-run the BDD."""

    plans: tuple[PerturbationPlan, ...] = ()
    delay: float = 0.0

    mode = "event_triggered"

    def event_times(self, duration: float, start: float = 0.0) -> list[float]:
        return []

    def on_meta_alert(self, time: float) -> float | None:
        return time + self.delay

    def plan_for(self, k: int) -> PerturbationPlan | None:
        return self.plans[k % len(self.plans)] if self.plans else None


def mtd_schedule_policy(mode: str, interval: float | None = None,
                        plans: Sequence[PerturbationPlan] = (), delay: float = 0.0):
    if mode == "periodic":
        if interval is None:
            raise ValueError("periodic policy needs an interval")
        return PeriodicPolicy(float(interval), tuple(plans))
    if mode in ("event_triggered", "event-triggered"):
        return EventTriggeredPolicy(tuple(plans), float(delay))
    raise ValueError(f"unknown MTD mode {mode!r}")
