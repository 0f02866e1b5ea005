"""Exact, non-sampled references: expected connection trials from the joint
age-vector chain, per-link availability, and semi-analytic percolation
thresholds.

These replace Monte Carlo wherever the state space is small enough, and act
as ground truth for the sampling engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

#: Known bond-percolation thresholds of the supported lattices.
SQUARE_BOND_THRESHOLD = 0.5
TRIANGULAR_BOND_THRESHOLD = 2.0 * math.sin(math.pi / 18.0)

DEFAULT_STATE_BUDGET = int(5e7)


class LatticeKind(Enum):
    SQUARE = "square"
    TRIANGULAR = "triangular"


BOND_THRESHOLDS = {
    LatticeKind.SQUARE: SQUARE_BOND_THRESHOLD,
    LatticeKind.TRIANGULAR: TRIANGULAR_BOND_THRESHOLD,
}


def _single_link_transition(p: float, n_star: int) -> np.ndarray:
    """Column-stochastic transition matrix of one link over one trial.

    States: 0 = attempting, 1 + a = live with age a, 0 <= a <= n*.
    A link at age n* is reset and re-attempts within the same trial.
    """
    k = n_star + 2
    t = np.zeros((k, k))
    # attempting, and age-n* links that reset this trial, attempt now
    for src in (0, k - 1):
        t[1, src] = p
        t[0, src] = 1.0 - p
    # surviving live links age by one
    for a in range(n_star):
        t[2 + a, 1 + a] = 1.0
    return t


@dataclass
class AgeVectorChain:
    """Joint Markov chain of M independent links with a finite cutoff.

    The state is the vector of per-link ages (or "attempting"); any state
    with all links live is absorbing, since the protocol stops at the first
    trial end where every required link is simultaneously live.
    """

    p: float
    m: int
    n_star: int
    state_budget: int = DEFAULT_STATE_BUDGET

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must be in (0, 1]")
        if self.m < 1:
            raise ValueError("M must be >= 1")
        if self.n_star < 0:
            raise ValueError("n_star must be >= 0")
        k = self.n_star + 2
        if self.m * k**self.m > self.state_budget:
            raise ValueError(
                f"state space M*(n*+2)^M = {self.m * k ** self.m} exceeds "
                f"budget {self.state_budget}"
            )

    def expected_hitting_trials(
        self, residual: float = 1e-12, max_iterations: int = 10**6
    ) -> float:
        """Expected trials until the first all-live trial end, starting from
        all links attempting.

        Solves the hitting-time equations by fixed-point iteration; the
        transition operator factorizes per link, so one sweep is a sequence
        of small per-axis matrix products instead of a dense joint matrix.
        """
        k = self.n_star + 2
        t = _single_link_transition(self.p, self.n_star)
        shape = (k,) * self.m
        # mask of transient states: at least one link attempting (digit 0)
        transient = np.zeros(shape, dtype=bool)
        for axis in range(self.m):
            sel = [slice(None)] * self.m
            sel[axis] = 0
            transient[tuple(sel)] = True

        h = np.zeros(shape)
        for _ in range(max_iterations):
            # propagate one trial backwards: (P h) then +1 on transient states
            nxt = h
            for axis in range(self.m):
                nxt = np.tensordot(t.T, np.moveaxis(nxt, axis, 0), axes=1)
                nxt = np.moveaxis(nxt, 0, axis)
            nxt = np.where(transient, 1.0 + nxt, 0.0)
            delta = np.max(np.abs(nxt - h))
            h = nxt
            if delta <= residual:
                return float(h[(0,) * self.m])
        raise ArithmeticError("hitting-time iteration did not converge")


def exact_expected_trials(
    p: float,
    m: int,
    n_star: int,
    residual: float = 1e-12,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> float:
    """E[N(M, n*)] computed exactly from the joint age-vector chain."""
    if m == 1:
        if not (0.0 < p <= 1.0):
            raise ValueError("p must be in (0, 1]")
        return 1.0 / p
    chain = AgeVectorChain(p, m, n_star, state_budget=state_budget)
    return chain.expected_hitting_trials(residual=residual)


def link_availability(p: float, n_star: int, n: int) -> float:
    """q_n: probability that a single link is live at the end of trial n,
    starting from attempting, under the finite-cutoff renewal dynamics."""
    if not (0.0 < p <= 1.0):
        raise ValueError("p must be in (0, 1]")
    if n_star < 0:
        raise ValueError("n_star must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    t = _single_link_transition(p, n_star)
    dist = np.zeros(n_star + 2)
    dist[0] = 1.0
    for _ in range(n):
        dist = t @ dist
    return float(1.0 - dist[0])


def link_availability_curve(p: float, n_star: int, n_max: int) -> np.ndarray:
    """q_1 .. q_{n_max} as an array (one forward pass)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    t = _single_link_transition(p, n_star)
    dist = np.zeros(n_star + 2)
    dist[0] = 1.0
    out = np.empty(n_max)
    for i in range(n_max):
        dist = t @ dist
        out[i] = 1.0 - dist[0]
    return out


def exact_expected_links(p: float, n_star: int, n: int, m: int) -> float:
    """E[L_n(M, n*)] = M * q_n: links evolve independently, so the expected
    live count factorizes exactly."""
    if m < 1:
        raise ValueError("M must be >= 1")
    return m * link_availability(p, n_star, n)


def percolation_threshold_semi_analytic(
    lattice_kind: LatticeKind,
    n: int,
    n_star: int,
    p_c_bond: float | None = None,
    tolerance: float = 1e-10,
) -> float:
    """Critical link probability from the product-measure picture.

    At the end of trial n every link is live independently with probability
    q_n(p), so the live-link configuration is exactly bond percolation with
    parameter q_n; the critical p solves q_n(p) = p_c_bond.
    """
    if p_c_bond is None:
        p_c_bond = BOND_THRESHOLDS[lattice_kind]
    if not (0.0 < p_c_bond < 1.0):
        raise ValueError("p_c_bond must be in (0, 1)")
    lo, hi = 0.0, 1.0
    q_hi = 1.0  # q_n(1) = 1
    if q_hi < p_c_bond:
        raise ValueError("bisection bracket failure: q_n(1) < p_c_bond")
    while hi - lo > tolerance / 4:
        mid = 0.5 * (lo + hi)
        q_mid = link_availability(mid, n_star, n)
        if abs(q_mid - p_c_bond) < tolerance:
            return mid
        if q_mid < p_c_bond:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
