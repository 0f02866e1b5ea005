"""Engineering thresholds: minimum memory cutoff, minimum repeater-chain
length to beat the repeaterless capacity, and critical link probability on
lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import curve_fit

from . import analytic, montecarlo, oracle, topology as topo
from .core import LinkModel, MemoryPolicy


class EstimatorKind(Enum):
    ORACLE = "oracle"
    MONTE_CARLO = "monte-carlo"


class PcritMethod(Enum):
    LOGISTIC_FIT = "logistic-fit"
    SEMI_ANALYTIC = "semi-analytic"


@dataclass(frozen=True)
class CutoffSearchResult:
    n_star_min: int
    target: float
    confidence_note: str = ""


def _mc_mean_trials(p: float, m: int, n_star: int,
                    plan: montecarlo.ReplicaPlan):
    chain = topo.chain(m)
    sampler = montecarlo.ConnectionTrialsSampler(
        chain, range(m), LinkModel.uniform(p, m), MemoryPolicy.finite(n_star))
    return montecarlo.estimate(sampler, plan)


def find_min_cutoff(
    p: float,
    m: int,
    tolerance: float = 0.01,
    estimator: EstimatorKind = EstimatorKind.MONTE_CARLO,
    plan: montecarlo.ReplicaPlan | None = None,
    max_replicas: int = 10**6,
    n_star_cap: int = 10**5,
) -> CutoffSearchResult:
    """Smallest cutoff n* whose E[N(M, n*)] is within ``tolerance`` of the
    infinite-memory optimum.

    E[N] is nonincreasing in n*, so the search brackets exponentially and
    then bisects.  The Monte Carlo path shares one base seed across all
    probed cutoffs (common random numbers) and doubles replicas when the
    confidence interval straddles the threshold.
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must be in (0, 1)")
    target = (1.0 + tolerance) * analytic.expected_trials_infinite_memory(p, m)

    if estimator is EstimatorKind.ORACLE:
        def below(n_star: int) -> bool:
            return oracle.exact_expected_trials(p, m, n_star) <= target
        note = "exact"
    else:
        if plan is None:
            plan = montecarlo.ReplicaPlan(total_replicas=10**5, base_seed=20240817)
        decisions = {}

        def below(n_star: int) -> bool:
            if n_star in decisions:
                return decisions[n_star]
            # Cheap analytic screen: links evolve independently, so the
            # all-live probability at trial j is exactly q_j^M, and a union
            # bound gives P[N <= n] <= sum_{j<=n} q_j^M, hence
            # E[N] >= 1 + sum_n max(0, 1 - sum_{j<=n} q_j^M).  Probes far
            # below the crossing are decided here instead of being sampled.
            horizon = 20000
            curve = oracle.link_availability_curve(p, n_star, horizon)
            hit = np.cumsum(curve**m)
            lower = 1.0 + float(np.clip(1.0 - hit, 0.0, None).sum())
            if lower > target:
                decisions[n_star] = False
                return False
            replicas = plan.total_replicas
            while True:
                probe = montecarlo.ReplicaPlan(
                    total_replicas=replicas, base_seed=plan.base_seed,
                    worker_count=plan.worker_count, block_size=plan.block_size)
                est = _mc_mean_trials(p, m, n_star, probe)
                lo, hi = est.ci_95
                if hi < target:
                    decisions[n_star] = True
                    return True
                if lo > target:
                    decisions[n_star] = False
                    return False
                if replicas >= max_replicas:
                    # undecidable at budget: fall back to the point estimate
                    decisions[n_star] = est.mean <= target
                    return decisions[n_star]
                replicas *= 2
        note = "MC decision with CI-gated doubling"

    if below(0):
        return CutoffSearchResult(0, target, note)
    hi = 1
    while not below(hi):
        hi *= 2
        if hi > n_star_cap:
            raise RuntimeError("cutoff search bracket exhausted")
    lo = hi // 2  # below(lo) is False
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if below(mid):
            hi = mid
        else:
            lo = mid
    return CutoffSearchResult(hi, target, note)


def find_min_chain_length(
    m: int,
    alpha: float = 1.0 / 22.0,
    grid_km: float = 1.0,
    l_max_km: float = 500.0,
) -> float:
    """Largest chain length (at the grid resolution) at which the protocol
    rate has not yet beaten the repeaterless capacity; beyond it, it has.

    The rate uses per-link probability exp(-alpha*L/M); the capacity uses
    end-to-end transmissivity exp(-alpha*L).
    """
    if m < 2:
        raise ValueError("M must be >= 2")

    def excess(l_km: float) -> float:
        p = math.exp(-alpha * l_km / m)
        eta = math.exp(-alpha * l_km)
        return (analytic.achievable_rate_infinite_cutoff(p, m)
                - analytic.repeaterless_capacity(eta))

    lo = grid_km
    if excess(lo) > 0:
        raise RuntimeError(f"rate already exceeds capacity at {lo} km")
    hi = lo
    while excess(hi) <= 0:
        hi += max(grid_km, 10.0)
        if hi > l_max_km:
            raise RuntimeError(f"no crossover found below {l_max_km} km")
    # bisect down to the grid, keeping excess(lo) <= 0 < excess(hi)
    while hi - lo > grid_km / 64:
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            lo = mid
        else:
            hi = mid
    # report the last grid length not yet beating the capacity
    return math.floor(lo / grid_km + 1e-9) * grid_km


@dataclass(frozen=True)
class SweepPoint:
    p: float
    mean_fraction: float
    std_error: float
    replicas: int


@dataclass(frozen=True)
class PcritResult:
    p_crit: float
    std_error: float
    sweep: tuple[SweepPoint, ...] = ()
    steepest_slope_p: float | None = None


def _lattice(kind: oracle.LatticeKind, size: int):
    if kind is oracle.LatticeKind.SQUARE:
        return topo.square_lattice(size, size)
    return topo.triangular_lattice(size, size)


def _cluster_fraction(lattice, p: float, n: int, n_star: int,
                      plan: montecarlo.ReplicaPlan):
    """Mean largest-cluster size normalized by the expected number of
    established links M*q_n(p).

    Normalizing by the established links rather than by M gives a curve that
    runs from 0 to 1 across the transition (dividing by M leaves a sloped
    upper branch ~p that biases a logistic midpoint upward).
    """
    m = lattice.edge_count
    sampler = montecarlo.LargestClusterSampler(
        lattice, LinkModel.uniform(p, m), MemoryPolicy.finite(n_star), n)
    est = montecarlo.estimate(sampler, plan)
    denom = m * oracle.link_availability(p, n_star, n)
    return est.mean / denom, est.std_error / denom, est.sample_count


def _logistic(p, midpoint, width):
    z = np.clip(-(p - midpoint) / width, -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(z))


def estimate_p_crit(
    lattice_kind: oracle.LatticeKind,
    size: int = 200,
    n: int = 10,
    n_star: int = 0,
    method: PcritMethod = PcritMethod.LOGISTIC_FIT,
    plan: montecarlo.ReplicaPlan | None = None,
    coarse_points: int = 41,
    refine_spacing: float = 0.005,
) -> PcritResult:
    """Critical link probability for the largest-cluster transition at
    trial n.

    The logistic-fit path sweeps p, estimates the normalized mean largest
    cluster per point, refines the grid around the provisional transition,
    and returns the fitted midpoint.  The semi-analytic path inverts the
    exact per-link availability against the known bond threshold.
    """
    if method is PcritMethod.SEMI_ANALYTIC:
        p_c = oracle.percolation_threshold_semi_analytic(lattice_kind, n, n_star)
        return PcritResult(p_crit=p_c, std_error=0.0)

    if size < 50:
        raise ValueError("Monte Carlo p_crit needs a lattice of at least 50x50")
    if plan is None:
        plan = montecarlo.ReplicaPlan(total_replicas=32, base_seed=7071,
                                      block_size=16)
    lattice = _lattice(lattice_kind, size)

    # The coarse sweep only needs to bracket the transition, so it runs with
    # a quarter of the replicas; the refine grid near the crossing gets the
    # full budget and dominates the fit.
    coarse_replicas = max(8, plan.total_replicas // 4)
    coarse_plan = montecarlo.ReplicaPlan(
        total_replicas=coarse_replicas, base_seed=plan.base_seed,
        worker_count=plan.worker_count,
        block_size=min(plan.block_size, coarse_replicas))

    sweep: dict[float, SweepPoint] = {}

    def measure(p: float, probe_plan=plan):
        p = round(p, 6)
        if p not in sweep:
            frac, se, reps = _cluster_fraction(lattice, p, n, n_star,
                                               probe_plan)
            sweep[p] = SweepPoint(p, frac, se, reps)
        return sweep[p]

    for p in np.linspace(0.02, 0.98, coarse_points):
        measure(float(p), coarse_plan)

    points = sorted(sweep.values(), key=lambda s: s.p)
    fracs = np.array([s.mean_fraction for s in points])
    # provisional transition: where the coarse curve crosses one half
    above = np.flatnonzero(fracs >= 0.5)
    if above.size == 0 or above[0] == 0:
        raise RuntimeError("sweep does not bracket the transition")
    p_lo = points[above[0] - 1].p
    p_hi = points[above[0]].p
    for p in np.arange(p_lo - 2 * refine_spacing, p_hi + 2 * refine_spacing,
                       refine_spacing):
        if 0.0 < p < 1.0:
            measure(float(p))

    points = sorted(sweep.values(), key=lambda s: s.p)
    xs = np.array([s.p for s in points])
    ys = np.array([s.mean_fraction for s in points])
    mid0 = 0.5 * (p_lo + p_hi)
    try:
        popt, pcov = curve_fit(_logistic, xs, ys, p0=[mid0, 0.02],
                               maxfev=20000)
    except RuntimeError as exc:
        raise RuntimeError("logistic fit failed (non-sigmoidal sweep)") from exc
    midpoint, width = popt
    if not (xs[0] < midpoint < xs[-1]) or width <= 0:
        raise RuntimeError("logistic fit failed (midpoint outside sweep)")
    se = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else 0.0
    # steepest-slope diagnostic from the finite-difference curve
    slopes = np.diff(ys) / np.diff(xs)
    steepest = float(0.5 * (xs[np.argmax(slopes)] + xs[np.argmax(slopes) + 1]))
    return PcritResult(p_crit=float(midpoint), std_error=se,
                       sweep=tuple(points), steepest_slope_p=steepest)
