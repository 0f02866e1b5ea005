"""Closed-form expressions for connection times, link fractions, and rates.

All functions assume a homogeneous link success probability.  Probability
powers go through log1p/expm1 so that regimes like p^-100 ~ 1e79 stay
representable (in log10 form where necessary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import mpmath
import numpy as np

#: Alternating binomial sums lose all float64 precision beyond this M.
ALTERNATING_SUM_MAX_M = 60


class Method(Enum):
    ALTERNATING_SUM = "alternating-sum"
    SURVIVAL_SERIES = "survival-series"


@dataclass(frozen=True)
class SeriesTolerance:
    """Truncation control for the survival-series sums."""

    tail_epsilon: float = 1e-12
    max_terms: int = 10**7

    def __post_init__(self):
        if not self.tail_epsilon > 0:
            raise ValueError("tail_epsilon must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be positive")


DEFAULT_TOLERANCE = SeriesTolerance()


class SeriesSum(NamedTuple):
    value: float
    tail_bound: float


def _check_p(p: float, allow_one: bool = True) -> None:
    hi_ok = p <= 1.0 if allow_one else p < 1.0
    if not (0.0 < p and hi_ok):
        raise ValueError(f"probability {p} out of range")


def _check_m(m: int) -> None:
    if m < 1:
        raise ValueError("M must be >= 1")


def expected_trials_no_memory(p: float, m: int) -> float:
    """E[N(M, 0)] = p^-M: without memory, every link must succeed in the
    same trial, so N is geometric with success probability p^M."""
    _check_p(p)
    _check_m(m)
    log_val = -m * math.log(p)
    if log_val > 709:  # beyond float64 range
        return math.inf
    return math.exp(log_val)


def log10_expected_trials_no_memory(p: float, m: int) -> float:
    _check_p(p)
    _check_m(m)
    return -m * math.log10(p)


def _survival_term_log(p: float, m: int, n: int) -> float:
    """log of 1 - (1 - (1-p)^(n-1))^M, i.e. P[N(M, inf) >= n]."""
    if n == 1:
        return 0.0
    log_q_pow = (n - 1) * math.log1p(-p)  # log((1-p)^(n-1))
    # 1 - (1 - q^(n-1))^M = -expm1(M * log1p(-q^(n-1)))
    inner = m * math.log1p(-math.exp(log_q_pow))
    val = -math.expm1(inner)
    return math.log(val) if val > 0 else -math.inf


def _survival_series(
    p: float, m: int, n_p: int, tol: SeriesTolerance
) -> SeriesSum:
    """Sum over n of P[all of n_p paths still unfinished before trial n]."""
    if p == 1.0:
        return SeriesSum(1.0, 0.0)
    total = 0.0
    q = 1.0 - p
    term = 1.0
    for n in range(1, tol.max_terms + 1):
        log_t = _survival_term_log(p, m, n)
        term = math.exp(n_p * log_t) if log_t > -math.inf else 0.0
        total += term
        if term < tol.tail_epsilon:
            # remaining terms are geometric with ratio q^n_p to leading
            # order; folding that tail in leaves an error far below it
            tail = term * q**n_p / (1.0 - q**n_p)
            return SeriesSum(total + tail, tail)
    raise ArithmeticError("survival series did not converge within max_terms")


def expected_trials_infinite_memory(
    p: float,
    m: int,
    method: Method = Method.SURVIVAL_SERIES,
    tolerance: SeriesTolerance = DEFAULT_TOLERANCE,
) -> float:
    """E[N(M, inf)]: expected trials until every one of M links has
    succeeded at least once (the maximum of M geometric variables)."""
    _check_p(p)
    _check_m(m)
    if m == 1:
        return 1.0 / p  # single geometric link, exact
    if method is Method.ALTERNATING_SUM:
        if m > ALTERNATING_SUM_MAX_M:
            raise ValueError(
                f"alternating sum suffers catastrophic cancellation for "
                f"M > {ALTERNATING_SUM_MAX_M}; use Method.SURVIVAL_SERIES"
            )
        # The terms cancel down by roughly log10(C(M, M/2)) ~ 0.302*M digits;
        # evaluate with that many guard digits so the float64 result is exact.
        with mpmath.workdps(25 + (3 * m) // 10):
            q = 1 - mpmath.mpf(p)
            q_pow = mpmath.mpf(1)
            total = mpmath.mpf(0)
            for k in range(1, m + 1):
                q_pow *= q
                term = mpmath.mpf(math.comb(m, k)) / (1 - q_pow)
                total += term if k % 2 else -term
            return float(total)
    return _survival_series(p, m, 1, tolerance).value


def expected_trials_infinite_memory_with_bound(
    p: float, m: int, tolerance: SeriesTolerance = DEFAULT_TOLERANCE
) -> SeriesSum:
    _check_p(p)
    _check_m(m)
    return _survival_series(p, m, 1, tolerance)


def pmf_trials_infinite_memory(p: float, m: int, n):
    """P[N(M, inf) = n] = (1-(1-p)^n)^M - (1-(1-p)^(n-1))^M.

    Vectorized over n; results are clamped to [0, 1] against rounding.
    """
    _check_p(p)
    _check_m(m)
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("n must be >= 1")
    log_q = math.log1p(-p) if p < 1.0 else -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        log_cdf_n = m * np.log1p(-np.exp(n_arr * log_q))
        log_cdf_prev = m * np.log1p(-np.exp((n_arr - 1) * log_q))
        # cdf differences cancel in the tail, survival differences at the
        # head; switch at the median of the distribution
        head = np.exp(log_cdf_n) - np.exp(log_cdf_prev)
        tail = np.expm1(log_cdf_n - log_cdf_prev) * np.exp(log_cdf_prev)
    out = np.clip(np.where(np.exp(log_cdf_n) < 0.5, head, tail), 0.0, 1.0)
    out = np.where(n_arr == 1, np.exp(log_cdf_n), out)
    return float(out) if np.isscalar(n) else out


def expected_trials_two_links_half_step(p: float, n_star: int) -> float:
    """The published two-link closed form with a finite cutoff, transcribed
    verbatim.

    Its time normalization differs from the single-trial-per-step accounting
    used everywhere else in this package (it gives 1/2 at p=1, n*=0), so it
    is exposed for reference only and excluded from cross-validation; the
    exact chain in :mod:`qlinksim.oracle` is the ground truth for E[N(2, n*)].
    """
    _check_p(p)
    if n_star < 0:
        raise ValueError("n_star must be >= 0")
    qn = (1.0 - p) ** n_star
    num = 3.0 - 2.0 * p * (1.0 - qn) - 2.0 * qn
    den = 2.0 * (2.0 - p * (1.0 - 2.0 * qn) - 2.0 * qn)
    return num / den


def expected_trials_parallel_no_memory(p: float, m: int, n_paths: int) -> float:
    """E[N(M, 0; n_P)] = 1 / (1 - (1 - p^M)^n_P): geometric in the event
    that at least one of n_P edge-disjoint M-link paths fully connects."""
    _check_p(p)
    _check_m(m)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if p == 1.0:
        return 1.0
    log_pm = m * math.log(p)
    if log_pm < -745:
        # p^M underflows; success probability is n_P * p^M to leading order
        log_val = -(math.log(n_paths) + log_pm)
        return math.exp(log_val) if log_val < 709 else math.inf
    p_succ = -math.expm1(n_paths * math.log1p(-math.exp(log_pm)))
    return 1.0 / p_succ


def pmf_trials_parallel_infinite(p: float, m: int, n_paths: int, n):
    """P[N(M, inf; n_P) = n]: telescoping difference for the minimum over
    n_P path completion times."""
    _check_p(p)
    _check_m(m)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("n must be >= 1")
    log_q = math.log1p(-p) if p < 1.0 else -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        # survival(n) = P[a single path needs >= n trials]
        surv_n = -np.expm1(m * np.log1p(-np.exp(n_arr * log_q)))
        surv_prev = -np.expm1(m * np.log1p(-np.exp((n_arr - 1) * log_q)))
    surv_prev = np.where(n_arr == 1, 1.0, surv_prev)  # survival before trial 1
    out = np.clip(surv_prev**n_paths - surv_n**n_paths, 0.0, 1.0)
    return float(out) if np.isscalar(n) else out


def expected_trials_parallel_infinite(
    p: float,
    m: int,
    n_paths: int,
    tolerance: SeriesTolerance = DEFAULT_TOLERANCE,
) -> float:
    """E[N(M, inf; n_P)]: survival series for the first of n_P edge-disjoint
    paths to have all of its links established."""
    _check_p(p)
    _check_m(m)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    return _survival_series(p, m, n_paths, tolerance).value


def expected_link_fraction_exact(p: float, n: int, n_star: int | None) -> float:
    """(1/M) E[L_n(M, n*)] = 1 - (1-p)^n, valid while no link has yet been
    reset, i.e. n <= n* + 1 (any n under an infinite cutoff)."""
    _check_p(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_star is not None:
        if n_star < 0:
            raise ValueError("n_star must be >= 0")
        if n > n_star + 1:
            raise ValueError(
                "closed form only holds for n <= n_star + 1; use the oracle's "
                "link_availability or Monte Carlo for later trials"
            )
    if p == 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-p))


def min_trials_for_fraction(fraction: float, p: float) -> int:
    """Fewest trials after which the expected established-link fraction can
    reach ``fraction``, regardless of cutoff."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    _check_p(p, allow_one=False)
    return math.ceil(math.log1p(-fraction) / math.log1p(-p))


def repeaterless_capacity(eta: float) -> float:
    """-log2(1 - eta): the two-way assisted capacity of the pure-loss
    channel with transmissivity eta, in ebits per channel use."""
    if not (0.0 < eta < 1.0):
        raise ValueError("transmissivity must be in (0, 1)")
    return -math.log2(1.0 - eta)


def achievable_rate_infinite_cutoff(
    p: float, m: int, tolerance: SeriesTolerance = DEFAULT_TOLERANCE
) -> float:
    """Best-case end-to-end rate of the repeat-until-success chain protocol,
    in ebits per channel use (each trial costs two channel uses)."""
    return 1.0 / (
        2.0 * expected_trials_infinite_memory(p, m, tolerance=tolerance)
    )
