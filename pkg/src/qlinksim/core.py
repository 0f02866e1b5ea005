"""Shared domain types: network topology, link probabilities, memory policy,
trial-rate conversion and per-link dynamic state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT_KM_S = 299792.458

#: Standard fiber attenuation, in 1/km.
DEFAULT_ALPHA = 1.0 / 22.0


@dataclass(frozen=True)
class Topology:
    """Undirected multigraph with dense, stable edge indices.

    Edge i refers to the same physical link in every trial of a simulation.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        for i, (u, v) in enumerate(self.edges):
            if u == v:
                raise ValueError(f"edge {i}: self-loop ({u}, {v})")
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise ValueError(f"edge {i}: node id out of range: ({u}, {v})")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_array(self) -> np.ndarray:
        """Edges as an (M, 2) integer array."""
        return np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class LinkModel:
    """Per-edge success probability for one elementary-link generation trial."""

    probabilities: tuple[float, ...]

    def __post_init__(self):
        for i, p in enumerate(self.probabilities):
            if not (0.0 < p <= 1.0):
                raise ValueError(f"edge {i}: probability {p} outside (0, 1]")

    @classmethod
    def uniform(cls, p: float, edge_count: int) -> "LinkModel":
        return cls((float(p),) * edge_count)

    @classmethod
    def from_lengths(
        cls,
        lengths_km,
        alpha: float = DEFAULT_ALPHA,
        extra_loss: float = 1.0,
        n_parallel: int = 1,
    ) -> "LinkModel":
        return cls(
            tuple(
                effective_probability(l, alpha, extra_loss, n_parallel)
                for l in lengths_km
            )
        )

    def prob_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=np.float64)

    @property
    def is_homogeneous(self) -> bool:
        return len(set(self.probabilities)) <= 1

    def homogeneous_probability(self) -> float:
        """The common success probability; rejects heterogeneous models.

        Every closed form in :mod:`qlinksim.analytic` assumes homogeneity, so
        callers on those paths must go through this accessor.
        """
        if not self.probabilities:
            raise ValueError("empty link model")
        if not self.is_homogeneous:
            raise ValueError("link probabilities are not homogeneous")
        return self.probabilities[0]


@dataclass(frozen=True)
class MemoryPolicy:
    """Memory cutoff: a link survives the trial it was established in plus
    ``cutoff`` further trials, after which it is discarded and re-attempted.

    The infinite variant is distinct from any integer cutoff so that age
    arithmetic never runs against a sentinel value.
    """

    cutoff: int | None  # None means infinite

    def __post_init__(self):
        if self.cutoff is not None and self.cutoff < 0:
            raise ValueError("cutoff must be >= 0")

    @classmethod
    def finite(cls, n_star: int) -> "MemoryPolicy":
        return cls(int(n_star))

    @classmethod
    def infinite(cls) -> "MemoryPolicy":
        return cls(None)

    @classmethod
    def from_time(cls, t_star_s: float, rate: "RateModel") -> "MemoryPolicy":
        if t_star_s < 0:
            raise ValueError("cutoff time must be >= 0")
        return cls.finite(math.floor(rate.trials_per_second * t_star_s))

    @property
    def is_infinite(self) -> bool:
        return self.cutoff is None


@dataclass(frozen=True)
class RateModel:
    """Trial repetition rate, for converting trial counts to seconds."""

    trials_per_second: float

    def __post_init__(self):
        if not self.trials_per_second > 0:
            raise ValueError("repetition rate must be positive")

    @classmethod
    def from_link_length(cls, length_km: float) -> "RateModel":
        """Rate limited by round-trip classical signalling over one link."""
        if not length_km > 0:
            raise ValueError("link length must be positive")
        return cls(SPEED_OF_LIGHT_KM_S / length_km)


def trials_to_time(n: float, rate: RateModel) -> float:
    """Seconds elapsed after ``n`` trials at the given repetition rate."""
    if n < 0:
        raise ValueError("trial count must be >= 0")
    return n / rate.trials_per_second


def effective_probability(
    length_km: float,
    alpha: float = DEFAULT_ALPHA,
    extra_loss: float = 1.0,
    n_parallel: int = 1,
) -> float:
    """Single-trial success probability of one elementary link.

    Transmission succeeds with probability ``extra_loss * exp(-alpha*length)``
    per parallel channel; with ``n_parallel`` channels the link connects when
    at least one of them does.
    """
    if length_km < 0:
        raise ValueError("length must be >= 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not (0.0 < extra_loss <= 1.0):
        raise ValueError("extra_loss must be in (0, 1]")
    if n_parallel < 1:
        raise ValueError("n_parallel must be >= 1")
    p_base = extra_loss * math.exp(-alpha * length_km)
    if n_parallel == 1:
        return p_base
    # 1 - (1 - p)^n, evaluated stably for small p
    return -math.expm1(n_parallel * math.log1p(-p_base))


@dataclass
class LinkAgeState:
    """Dynamic per-edge state for one simulation replica.

    A link established in trial j is live at the end of trials j .. j+n*,
    is reset before trial j+n*+1 and attempts again in that very trial.
    Under an infinite cutoff a live link stays live forever.
    """

    policy: MemoryPolicy
    live: np.ndarray  # bool, shape (M,)
    age: np.ndarray  # int64, shape (M,), valid only where live

    @classmethod
    def all_attempting(cls, edge_count: int, policy: MemoryPolicy) -> "LinkAgeState":
        return cls(
            policy=policy,
            live=np.zeros(edge_count, dtype=bool),
            age=np.zeros(edge_count, dtype=np.int64),
        )

    def step(self, uniforms: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """Advance one trial: reset expired links, let attempting links try,
        age the survivors.

        ``uniforms`` holds one draw per edge; an edge uses its draw only when
        it attempts this trial, which keeps couplings across cutoff values
        aligned per (trial, edge).  Returns the live mask at trial end.
        """
        if not self.policy.is_infinite:
            expired = self.live & (self.age >= self.policy.cutoff)
            self.live &= ~expired
        attempting = ~self.live
        established = attempting & (uniforms < probs)
        self.age[~attempting] += 1
        self.age[established] = 0
        self.live |= established
        return self.live


@dataclass(frozen=True)
class EstimatorResult:
    """Sample mean with its uncertainty, as produced by the Monte Carlo
    estimators."""

    mean: float
    std_error: float
    sample_count: int
    ci_95: tuple[float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")
        if self.ci_95 is None:
            half = 1.96 * self.std_error
            object.__setattr__(self, "ci_95", (self.mean - half, self.mean + half))
