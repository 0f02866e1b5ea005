"""Seeded, parallel Monte Carlo for the repeat-until-success link protocol.

Replicas are partitioned into fixed-size blocks; each block owns an
independent counter-based Philox stream derived from (base_seed, block
index).  The partition depends only on the plan, never on the worker count,
and per-block partial sums are reduced in block order, so estimates are
bit-identical for a fixed (base_seed, total_replicas, block_size) no matter
how many workers run.

Within a block, one uniform is drawn per (trial, edge, replica) whether or
not the edge attempts that trial.  This fixed layout is what makes common-
random-number couplings across cutoff values exact per (trial, edge).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import EstimatorResult, LinkAgeState, LinkModel, MemoryPolicy, Topology
from .topology import largest_cluster_edges_batch

TRIAL_CAP = 10**9
DEFAULT_BLOCK_SIZE = 4096
_MASK64 = (1 << 64) - 1


class TrialCapExceeded(RuntimeError):
    """A replica failed to finish within the hard trial cap; the parameters
    are pathological (use the analytic 1/p^M form for that regime)."""


@dataclass(frozen=True)
class ReplicaPlan:
    """How many replicas to run and how their random streams are derived."""

    total_replicas: int
    base_seed: int
    worker_count: int = 1
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.total_replicas < 1:
            raise ValueError("total_replicas must be positive")
        if self.worker_count < 1:
            raise ValueError("worker_count must be positive")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    @property
    def block_count(self) -> int:
        return -(-self.total_replicas // self.block_size)

    def block_rng(self, block_index: int) -> np.random.Generator:
        key = np.array([block_index & _MASK64, self.base_seed & _MASK64],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def block_sizes(self):
        for b in range(self.block_count):
            yield b, min(self.block_size,
                         self.total_replicas - b * self.block_size)


@dataclass
class TrialTrace:
    """Per-trial live-edge masks recorded from one replica, for audits of
    the lifetime rule."""

    live_masks: list = field(default_factory=list)

    def record(self, live: np.ndarray) -> None:
        self.live_masks.append(live.copy())

    def live_run_lengths(self, edge: int) -> list[int]:
        """Lengths of maximal live runs of one edge across recorded trials."""
        runs, current = [], 0
        for mask in self.live_masks:
            if mask[edge]:
                current += 1
            elif current:
                runs.append(current)
                current = 0
        if current:
            runs.append(current)
        return runs


class _BlockDynamics:
    """Vectorized link dynamics over a (replicas, edges) block."""

    def __init__(self, probs: np.ndarray, cutoff: int | None, size: int):
        self.probs = probs
        self.cutoff = cutoff
        self.live = np.zeros((size, probs.size), dtype=bool)
        self.age = np.zeros((size, probs.size), dtype=np.int64)

    def step(self, uniforms: np.ndarray) -> np.ndarray:
        if self.cutoff is not None:
            expired = self.live & (self.age >= self.cutoff)
            self.live &= ~expired
        attempting = ~self.live
        established = attempting & (uniforms < self.probs)
        self.age[self.live] += 1
        self.age[established] = 0
        self.live |= established
        return self.live


def _probs_and_cutoff(link_model: LinkModel, policy: MemoryPolicy):
    return link_model.prob_array(), policy.cutoff


class ConnectionTrialsSampler:
    """Trials until all required edges are simultaneously live (N(M, n*))."""

    def __init__(self, topology: Topology, required_edges,
                 link_model: LinkModel, policy: MemoryPolicy):
        required = tuple(required_edges)
        if not required:
            raise ValueError("required_edges must be nonempty")
        if len(link_model.probabilities) != topology.edge_count:
            raise ValueError("link model / topology size mismatch")
        # only the required edges influence N; drop the rest
        self.probs = link_model.prob_array()[list(required)]
        self.cutoff = policy.cutoff

    def sample_block(self, rng: np.random.Generator, size: int) -> np.ndarray:
        dyn = _BlockDynamics(self.probs, self.cutoff, size)
        result = np.zeros(size, dtype=np.int64)
        pending = np.ones(size, dtype=bool)
        trial = 0
        while pending.any():
            trial += 1
            if trial > TRIAL_CAP:
                raise TrialCapExceeded(f"no success within {TRIAL_CAP} trials")
            live = dyn.step(rng.random((size, self.probs.size)))
            done = pending & live.all(axis=1)
            result[done] = trial
            pending &= ~done
        return result


class _Reachability:
    """Fixed-point reachability from a source node over live edges,
    vectorized across replicas."""

    def __init__(self, topology: Topology):
        arr = topology.edge_array()
        src = np.concatenate([arr[:, 0], arr[:, 1]])
        dst = np.concatenate([arr[:, 1], arr[:, 0]])
        eid = np.concatenate([np.arange(arr.shape[0])] * 2)
        order = np.argsort(dst, kind="stable")
        self.src = src[order]
        self.dst_sorted = dst[order]
        self.eid = eid[order]
        self.node_count = topology.node_count
        # reduceat segment starts per destination node present in dst_sorted
        self.seg_starts = np.searchsorted(self.dst_sorted, np.arange(self.node_count))
        self.has_in = np.zeros(self.node_count, dtype=bool)
        self.has_in[np.unique(self.dst_sorted)] = True

    def connected(self, live: np.ndarray, a: int, b: int) -> np.ndarray:
        """Boolean per replica: is b reachable from a through live edges?"""
        n_rep = live.shape[0]
        reach = np.zeros((n_rep, self.node_count), dtype=bool)
        reach[:, a] = True
        while True:
            contrib = reach[:, self.src] & live[:, self.eid]
            # maximum.reduceat needs nonempty segments; pad via clip and mask
            starts = np.clip(self.seg_starts, 0, len(self.src) - 1)
            incoming = np.maximum.reduceat(contrib, starts, axis=1)
            incoming &= self.has_in
            new_reach = reach | incoming
            if np.array_equal(new_reach, reach):
                return reach[:, b]
            reach = new_reach


class PairConnectionSampler:
    """Trials until nodes a and b are joined by simultaneously live edges."""

    def __init__(self, topology: Topology, a: int, b: int,
                 link_model: LinkModel, policy: MemoryPolicy):
        if a == b:
            raise ValueError("endpoints must differ")
        if not (0 <= a < topology.node_count and 0 <= b < topology.node_count):
            raise ValueError("endpoint not in topology")
        if len(link_model.probabilities) != topology.edge_count:
            raise ValueError("link model / topology size mismatch")
        self.probs = link_model.prob_array()
        self.cutoff = policy.cutoff
        self.a, self.b = a, b
        self.reach = _Reachability(topology)

    def sample_block(self, rng: np.random.Generator, size: int) -> np.ndarray:
        dyn = _BlockDynamics(self.probs, self.cutoff, size)
        result = np.zeros(size, dtype=np.int64)
        pending = np.ones(size, dtype=bool)
        trial = 0
        while pending.any():
            trial += 1
            if trial > TRIAL_CAP:
                raise TrialCapExceeded(f"no connection within {TRIAL_CAP} trials")
            live = dyn.step(rng.random((size, self.probs.size)))
            idx = np.flatnonzero(pending)
            hit = self.reach.connected(live[idx], self.a, self.b)
            result[idx[hit]] = trial
            pending[idx[hit]] = False
        return result


class LinkCountSampler:
    """Live-link count at the end of trial n (L_n(M, n*))."""

    def __init__(self, edge_count: int, link_model: LinkModel,
                 policy: MemoryPolicy, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        if len(link_model.probabilities) != edge_count:
            raise ValueError("link model size mismatch")
        self.probs = link_model.prob_array()
        self.cutoff = policy.cutoff
        self.n = n

    def sample_block(self, rng: np.random.Generator, size: int) -> np.ndarray:
        dyn = _BlockDynamics(self.probs, self.cutoff, size)
        for _ in range(self.n):
            live = dyn.step(rng.random((size, self.probs.size)))
        return live.sum(axis=1)


class LargestClusterSampler:
    """Edge count of the largest live-edge cluster at the end of trial n."""

    def __init__(self, topology: Topology, link_model: LinkModel,
                 policy: MemoryPolicy, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        if len(link_model.probabilities) != topology.edge_count:
            raise ValueError("link model / topology size mismatch")
        self.topology = topology
        self.probs = link_model.prob_array()
        self.cutoff = policy.cutoff
        self.n = n

    def sample_block(self, rng: np.random.Generator, size: int) -> np.ndarray:
        dyn = _BlockDynamics(self.probs, self.cutoff, size)
        for _ in range(self.n):
            live = dyn.step(rng.random((size, self.probs.size)))
        return largest_cluster_edges_batch(live, self.topology)


# ---------------------------------------------------------------------------
# Scalar per-replica samplers (the reference implementations; the block
# samplers above are their vectorized equivalents).

def _run_single(topology: Topology, link_model: LinkModel, policy: MemoryPolicy,
                rng: np.random.Generator, stop, trace: TrialTrace | None):
    probs = link_model.prob_array()
    state = LinkAgeState.all_attempting(topology.edge_count, policy)
    trial = 0
    while True:
        trial += 1
        if trial > TRIAL_CAP:
            raise TrialCapExceeded(f"no success within {TRIAL_CAP} trials")
        live = state.step(rng.random(topology.edge_count), probs)
        if trace is not None:
            trace.record(live)
        if stop(trial, live):
            return trial, live


def sample_connection_trials(topology: Topology, required_edges,
                             link_model: LinkModel, policy: MemoryPolicy,
                             rng: np.random.Generator,
                             trace: TrialTrace | None = None) -> int:
    required = np.asarray(tuple(required_edges), dtype=np.int64)
    if required.size == 0:
        raise ValueError("required_edges must be nonempty")
    trial, _ = _run_single(
        topology, link_model, policy, rng,
        lambda _t, live: bool(live[required].all()), trace)
    return trial


def sample_pair_connection_trials(topology: Topology, a: int, b: int,
                                  link_model: LinkModel, policy: MemoryPolicy,
                                  rng: np.random.Generator,
                                  trace: TrialTrace | None = None) -> int:
    reach = _Reachability(topology)
    if a == b:
        raise ValueError("endpoints must differ")
    trial, _ = _run_single(
        topology, link_model, policy, rng,
        lambda _t, live: bool(reach.connected(live[None, :], a, b)[0]), trace)
    return trial


def sample_link_count(edge_count: int, link_model: LinkModel,
                      policy: MemoryPolicy, n: int,
                      rng: np.random.Generator,
                      trace: TrialTrace | None = None) -> int:
    topo = Topology(edge_count + 1, tuple((i, i + 1) for i in range(edge_count)))
    trial_stop = lambda t, _live: t >= n
    _, live = _run_single(topo, link_model, policy, rng, trial_stop, trace)
    return int(live.sum())


def sample_largest_cluster(topology: Topology, link_model: LinkModel,
                           policy: MemoryPolicy, n: int,
                           rng: np.random.Generator,
                           trace: TrialTrace | None = None) -> int:
    trial_stop = lambda t, _live: t >= n
    _, live = _run_single(topology, link_model, policy, rng, trial_stop, trace)
    return int(largest_cluster_edges_batch(live[None, :], topology)[0])


# ---------------------------------------------------------------------------

class _CallableSampler:
    def __init__(self, fn):
        self.fn = fn

    def sample_block(self, rng, size):
        return np.array([self.fn(rng) for _ in range(size)], dtype=np.float64)


def estimate(sampler, plan: ReplicaPlan, target_rel_se: float | None = None,
             samples_sink=None) -> EstimatorResult:
    """Run the replica plan and reduce to mean / standard error / 95% CI.

    ``sampler`` is either an object with ``sample_block(rng, size)`` or a
    callable ``rng -> float``.  With ``target_rel_se`` set, estimation stops
    at the first block boundary where SE/mean drops below the target.
    ``samples_sink``, when given, receives ``replica,seed,value`` CSV rows.
    """
    if not hasattr(sampler, "sample_block"):
        sampler = _CallableSampler(sampler)

    def run_block(args):
        block_index, size = args
        try:
            values = sampler.sample_block(plan.block_rng(block_index), size)
        except TrialCapExceeded as exc:
            raise TrialCapExceeded(
                f"block {block_index} (replicas from "
                f"{block_index * plan.block_size}): {exc}") from exc
        values = np.asarray(values, dtype=np.float64)
        return block_index, values

    total = 0.0
    total_sq = 0.0
    count = 0
    blocks = list(plan.block_sizes())
    if plan.worker_count == 1:
        results = map(run_block, blocks)
    else:
        executor = ThreadPoolExecutor(max_workers=plan.worker_count)
        results = executor.map(run_block, blocks)

    try:
        for block_index, values in results:
            total += float(values.sum())
            total_sq += float((values * values).sum())
            count += values.size
            if samples_sink is not None:
                start = block_index * plan.block_size
                for i, v in enumerate(values):
                    samples_sink.write(f"{start + i},{plan.base_seed},{float(v)!r}\n")
            if target_rel_se is not None and count > 1:
                mean = total / count
                var = max(0.0, (total_sq - count * mean * mean) / (count - 1))
                se = math.sqrt(var / count)
                if mean != 0 and se / abs(mean) < target_rel_se:
                    break
    finally:
        if plan.worker_count > 1:
            executor.shutdown(wait=False, cancel_futures=True)

    mean = total / count
    if count > 1:
        var = max(0.0, (total_sq - count * mean * mean) / (count - 1))
        se = math.sqrt(var / count)
    else:
        se = 0.0
    return EstimatorResult(mean=mean, std_error=se, sample_count=count)
