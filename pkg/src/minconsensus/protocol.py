"""Anchored min-consensus execution, nominal and perturbed.

The nominal protocol pins sources at 0 and iterates
``d_i <- min_j (d_j + w_ij)``; its fixed point is the shortest-distance
vector.  The perturbed run adds three simultaneous effects:

* per-pair communication delays, equal in both directions of a channel,
* asynchronous updates driven by a schedule that covers all nodes within
  a hard window of ``delta`` rounds,
* per-direction noisy edge weights, bounded around the nominal values.

A node that skips a round keeps its estimate, so the value it carries at
time ``t`` was computed with delays composed of its update age ``q`` and
the channel delay seen at that update: ``q + tau(t-1-q)``.  Traces record
enough (estimates, update flags, minimisers, composed delays) to re-derive
every step; the stochastic processes themselves are regenerated on demand
from counter-based streams, so nothing random needs to be stored.

History before time 0 is padded with the initial estimates and nominal
weights, which keeps early delayed reads well defined.
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .delaysys import CheckReport, _report
from .graphs import StructuralConstants, WeightedGraph
from .rng import DELAYS, FUZZ, INIT, NOISE, SCHEDULE, stream


# ---------------------------------------------------------------------------
# Update schedules

@dataclass(frozen=True)
class FullSchedule:
    """Every node updates every round; window bound 0."""

    @property
    def delta(self) -> int:
        return 0

    def realize(self, n: int, horizon: int, rng) -> np.ndarray:
        upd = np.ones((horizon + 1, n), dtype=bool)
        upd[0] = False
        return upd


@dataclass(frozen=True)
class GapUniformSchedule:
    """Each node draws its next-update gap uniformly from {gap_min..gap_max}.

    Mean gap (gap_min+gap_max)/2; the hard window bound is gap_max rounds,
    valid for any phase of the draws.
    """

    gap_min: int = 1
    gap_max: int = 3

    def __post_init__(self):
        if not (1 <= self.gap_min <= self.gap_max):
            raise ValueError("need 1 <= gap_min <= gap_max")

    @property
    def delta(self) -> int:
        return self.gap_max

    def realize(self, n: int, horizon: int, rng) -> np.ndarray:
        upd = np.zeros((horizon + 1, n), dtype=bool)
        if horizon == 0:
            return upd
        gaps = rng.integers(self.gap_min, self.gap_max + 1, size=(n, horizon))
        times = np.cumsum(gaps, axis=1)
        node, _ = np.nonzero(times <= horizon)
        upd[times[times <= horizon], node] = True
        return upd


@dataclass(frozen=True, eq=False)
class ExplicitSchedule:
    """Scripted schedule: boolean matrix of shape (horizon+1, nodes)."""

    matrix: np.ndarray
    window: int

    @property
    def delta(self) -> int:
        return self.window

    def realize(self, n: int, horizon: int, rng) -> np.ndarray:
        mat = np.array(self.matrix, dtype=bool)
        if mat.shape != (horizon + 1, n):
            raise ValueError(f"schedule matrix must have shape {(horizon + 1, n)}")
        mat[0] = False
        return mat


def _validate_schedule(updated: np.ndarray, delta: int) -> None:
    horizon = len(updated) - 1
    width = delta + 1
    if horizon < width:
        return
    win = np.lib.stride_tricks.sliding_window_view(updated[1:], width, axis=0)
    if not win.any(axis=2).all():
        raise ValueError(
            f"schedule violates the update-window bound: some node skips "
            f"{width} consecutive rounds (delta={delta})"
        )


# ---------------------------------------------------------------------------
# Delay processes (one draw per unordered pair per round; reciprocity is
# structural: both directions of a channel read the same draw)

@dataclass(frozen=True)
class UniformDelays:
    """tau_ij(k) uniform on {0..max_delay}."""

    max_delay: int = 0

    def __post_init__(self):
        if self.max_delay < 0:
            raise ValueError("max_delay must be nonnegative")

    def realize(self, pair_count: int, horizon: int, seed: int, trial: int) -> np.ndarray:
        if self.max_delay == 0:
            return np.zeros((horizon, pair_count), dtype=np.int16)
        out = np.empty((horizon, pair_count), dtype=np.int16)
        for k in range(horizon):
            rng = stream(seed, DELAYS, trial, k)
            out[k] = rng.integers(0, self.max_delay + 1, pair_count, dtype=np.int16)
        return out


@dataclass(frozen=True)
class ConstantDelays:
    value: int = 0

    @property
    def max_delay(self) -> int:
        return self.value

    def realize(self, pair_count, horizon, seed, trial) -> np.ndarray:
        return np.full((horizon, pair_count), self.value, dtype=np.int16)


@dataclass(frozen=True, eq=False)
class ExplicitDelays:
    """Scripted per-round, per-pair delays of shape (horizon, pairs)."""

    rounds: np.ndarray
    max_delay: int

    def realize(self, pair_count, horizon, seed, trial) -> np.ndarray:
        arr = np.asarray(self.rounds, dtype=np.int16)
        if arr.shape != (horizon, pair_count):
            raise ValueError(f"delay table must have shape {(horizon, pair_count)}")
        if arr.min(initial=0) < 0 or arr.max(initial=0) > self.max_delay:
            raise ValueError("delay entries must lie in {0..max_delay}")
        return arr


# ---------------------------------------------------------------------------
# Weight-noise processes (independent per directed edge per round)

@dataclass(frozen=True)
class UniformNoise:
    """w_ij(k) uniform on [w-amplitude, w+amplitude], clipped into (0, w_max]."""

    amplitude: float = 0.0
    w_max: float | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("noise amplitude must be nonnegative")


@dataclass(frozen=True, eq=False)
class ExplicitNoise:
    """Scripted per-round deviations of shape (horizon, directed edges)."""

    rounds: np.ndarray
    amplitude: float


class RealizedNoise:
    """Deterministic per-round weight deviations with a small cache.

    ``round(t)`` returns the deviation of every directed edge at round t;
    identical (seed, trial, t) always reproduce the same values, so checks
    can regenerate what the simulation consumed.
    """

    def __init__(self, noise, g: WeightedGraph, seed: int, trial: int):
        self._noise = noise
        self._seed = seed
        self._trial = trial
        self._w = g.dir_weight
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_cap = 512
        if isinstance(noise, UniformNoise):
            a = noise.amplitude
            w_max = noise.w_max if noise.w_max is not None else float(self._w.max()) + a
            self._lo = np.maximum(-a, -self._w)
            self._hi = np.minimum(a, w_max - self._w)
            if np.any(self._hi < self._lo):
                raise ValueError("noise interval is empty; check w_max")
        self.amplitude = float(noise.amplitude)

    def round(self, t: int) -> np.ndarray:
        dev = self._cache.get(t)
        if dev is not None:
            return dev
        if isinstance(self._noise, UniformNoise):
            if self._noise.amplitude == 0.0:
                dev = np.zeros_like(self._w)
            else:
                rng = stream(self._seed, NOISE, self._trial, t)
                dev = self._lo + rng.random(len(self._w)) * (self._hi - self._lo)
        else:
            dev = np.asarray(self._noise.rounds[t], dtype=np.float64)
            if dev.shape != self._w.shape:
                raise ValueError("noise row has wrong length")
        bad = self._w + dev <= 0
        if np.any(bad):
            if isinstance(self._noise, ExplicitNoise):
                raise ValueError(f"perturbed weight not positive at round {t}")
            dev = dev.copy()
            dev[bad] = np.finfo(np.float64).tiny - self._w[bad]
        self._cache[t] = dev
        if len(self._cache) > self._cache_cap:
            self._cache.popitem(last=False)
        return dev


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationModel:
    """Delay, schedule and weight-noise processes of a perturbed run."""

    delays: UniformDelays | ConstantDelays | ExplicitDelays = UniformDelays(0)
    schedule: FullSchedule | GapUniformSchedule | ExplicitSchedule = FullSchedule()
    noise: UniformNoise | ExplicitNoise = UniformNoise(0.0)

    @property
    def max_delay(self) -> int:
        return self.delays.max_delay

    @property
    def delta(self) -> int:
        return self.schedule.delta

    @property
    def noise_amplitude(self) -> float:
        return float(self.noise.amplitude)


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Initial estimates: nonnegative, anchored at 0 on sources."""

    kind: str = "uniform_halfdmax"
    values: np.ndarray | None = None

    @classmethod
    def explicit(cls, values) -> "InitialCondition":
        return cls(kind="explicit", values=np.asarray(values, dtype=np.float64))

    @classmethod
    def uniform_halfdmax(cls) -> "InitialCondition":
        return cls(kind="uniform_halfdmax")

    def resolve(self, g: WeightedGraph, distances: np.ndarray, seed: int, trial: int) -> np.ndarray:
        if self.kind == "explicit":
            if self.values is None:
                raise ValueError("explicit initial condition needs values")
            v = np.array(self.values, dtype=np.float64)
            if v.shape != (g.node_count,):
                raise ValueError("initial values must have one entry per node")
        elif self.kind == "uniform_halfdmax":
            rng = stream(seed, INIT, trial)
            v = rng.uniform(0.0, float(distances.max()) / 2.0, g.node_count)
        else:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        v[g.is_source] = 0.0
        if np.any(v < 0):
            raise ValueError("initial estimates must be nonnegative")
        return v


@dataclass(frozen=True, eq=False)
class TrajectoryTrace:
    """Complete record of one perturbed run.

    ``ages[t, i]`` is the number of rounds since node i last appeared in
    the schedule as of time t (0 at t=0: initialisation counts as an
    update).  ``constraining[t, i]`` is the minimiser that defined the
    current estimate of i, and ``base_delays[t, i]`` the channel delay seen
    at that defining update, so the composed delay is ``ages + base_delays``.
    """

    graph: WeightedGraph
    model: PerturbationModel
    horizon: int
    seed: int
    trial: int
    estimates: np.ndarray
    updated: np.ndarray
    ages: np.ndarray
    constraining: np.ndarray
    base_delays: np.ndarray
    input_amplitude: float
    input_sup_norm: float
    errors: np.ndarray | None = None

    @property
    def delta(self) -> int:
        return self.model.delta

    @property
    def max_delay(self) -> int:
        return self.model.max_delay

    def effective_delays(self) -> np.ndarray:
        """Composed delay q + tau per (time, node); -1 before the first update."""
        return np.where(self.base_delays >= 0, self.ages + self.base_delays, -1)

    def max_abs_error(self) -> np.ndarray:
        if self.errors is None:
            raise ValueError("trace has no error coordinates; convert it first")
        return np.max(np.abs(self.errors), axis=1)

    def realized_delays(self) -> np.ndarray:
        return self.model.delays.realize(
            self.graph.edge_count, self.horizon, self.seed, self.trial
        )

    def realized_noise(self) -> RealizedNoise:
        return RealizedNoise(self.model.noise, self.graph, self.seed, self.trial)


def step_nominal(g: WeightedGraph, estimates) -> np.ndarray:
    """One synchronous, delay-free, noise-free protocol step."""
    est = np.asarray(estimates, dtype=np.float64)
    if est.shape != (g.node_count,):
        raise ValueError("estimates must have one entry per node")
    if np.any(est < 0):
        raise ValueError("estimates must be nonnegative")
    if np.any(est[g.is_source] != 0):
        raise ValueError("source estimates must be 0")
    cand = est[g.dir_dst] + g.dir_weight
    nxt = np.minimum.reduceat(cand, g.indptr[:-1])
    return np.where(g.is_source, 0.0, nxt)


def run_nominal(g: WeightedGraph, initial, rounds: int) -> np.ndarray:
    """Iterate the nominal protocol; returns estimates indexed 0..rounds."""
    out = np.empty((rounds + 1, g.node_count))
    out[0] = np.asarray(initial, dtype=np.float64)
    for k in range(rounds):
        out[k + 1] = step_nominal(g, out[k])
    return out


def run_perturbed(
    g: WeightedGraph,
    sc: StructuralConstants,
    pm: PerturbationModel,
    init: InitialCondition,
    horizon: int,
    seed: int,
    trial: int = 0,
) -> TrajectoryTrace:
    """Run the perturbed protocol for ``horizon`` rounds.

    At each round an updating non-source node takes the min over its
    neighbours of delayed estimate plus delayed perturbed weight; everyone
    else holds.  Ties in the min go to the lowest neighbour index so the
    recorded minimiser is deterministic.
    """
    n = g.node_count
    horizon = int(horizon)
    delta, taubar = pm.delta, pm.max_delay
    if horizon < delta + taubar:
        raise ValueError(
            f"horizon must be at least delta + max_delay = {delta + taubar}"
        )
    init_vec = init.resolve(g, sc.distances, seed, trial)

    sched = pm.schedule.realize(n, horizon, stream(seed, SCHEDULE, trial))
    _validate_schedule(sched, delta)
    delay_rounds = pm.delays.realize(g.edge_count, horizon, seed, trial)
    noise = RealizedNoise(pm.noise, g, seed, trial)

    est = np.empty((horizon + 1, n))
    est[0] = init_vec
    ages = np.empty((horizon + 1, n), dtype=np.int32)
    ages[0] = 0
    constraining = np.full((horizon + 1, n), -1, dtype=np.int32)
    base_delays = np.full((horizon + 1, n), -1, dtype=np.int16)

    dsrc, ddst, dpair, dw = g.dir_src, g.dir_dst, g.dir_pair, g.dir_weight
    starts = g.indptr[:-1]
    nonsource = ~g.is_source
    tau_span = taubar + 1
    big_code = (n + 1) * tau_span
    noisy = pm.noise_amplitude > 0 or isinstance(pm.noise, ExplicitNoise)
    sup_dev = 0.0

    for k in range(horizon):
        t = k + 1
        if noisy:
            dev_k = noise.round(k)
            sup_dev = max(sup_dev, float(np.max(np.abs(dev_k))))
        tau_e = delay_rounds[k][dpair].astype(np.int64)
        read_t = np.maximum(k - tau_e, 0)
        cand = est[read_t, ddst] + dw
        if noisy:
            dev = np.zeros(len(dsrc))
            for back in range(tau_span):
                r = k - back
                if r < 0:
                    break  # padded prefix: nominal weights
                mask = tau_e == back
                if mask.any():
                    dev[mask] = noise.round(r)[mask]
            cand = cand + dev
        group_min = np.minimum.reduceat(cand, starts)
        is_min = cand == group_min[dsrc]
        code = np.where(is_min, ddst.astype(np.int64) * tau_span + tau_e, big_code)
        min_code = np.minimum.reduceat(code, starts)
        arg_dst = (min_code // tau_span).astype(np.int32)
        arg_tau = (min_code % tau_span).astype(np.int16)

        upd = sched[t] & nonsource
        row = np.where(upd, group_min, est[k])
        row[g.is_source] = 0.0
        est[t] = row
        ages[t] = np.where(sched[t], 0, ages[k] + 1)
        constraining[t] = np.where(upd, arg_dst, constraining[k])
        base_delays[t] = np.where(upd, arg_tau, base_delays[k])

    return TrajectoryTrace(
        graph=g,
        model=pm,
        horizon=horizon,
        seed=seed,
        trial=trial,
        estimates=est,
        updated=sched,
        ages=ages,
        constraining=constraining,
        base_delays=base_delays,
        input_amplitude=pm.noise_amplitude,
        input_sup_norm=sup_dev,
    )


def to_error_coordinates(
    trace: TrajectoryTrace,
    sc: StructuralConstants,
    check_consistency: bool = True,
    tol: float = 1e-9,
) -> TrajectoryTrace:
    """Populate error coordinates ``x_i(k) = estimate - distance``.

    Optionally re-derives every update from the recorded minimiser and the
    regenerated noise, confirming the trace is self-consistent.
    """
    errors = trace.estimates - sc.distances[None, :]
    if check_consistency:
        _check_minimizer_consistency(trace, sc, errors, tol)
    return dataclasses.replace(trace, errors=errors)


def _check_minimizer_consistency(trace, sc, errors, tol) -> None:
    g = trace.graph
    d = sc.distances
    noise = trace.realized_noise()
    gap = d[g.dir_dst] + g.dir_weight - d[g.dir_src]
    upd = trace.updated & ~g.is_source[None, :]
    for t in range(1, trace.horizon + 1):
        rows = np.nonzero(upd[t])[0]
        if rows.size == 0:
            continue
        jj = trace.constraining[t, rows]
        tau = trace.base_delays[t, rows].astype(np.int64)
        eid = g.dir_edge_ids(rows, jj)
        read = t - 1 - tau
        dev = np.zeros(rows.size)
        for back in np.unique(tau):
            r = t - 1 - int(back)
            if r < 0:
                continue
            mask = tau == back
            dev[mask] = noise.round(r)[eid[mask]]
        expect = errors[np.maximum(read, 0), jj] + dev + gap[eid]
        if np.any(np.abs(errors[t, rows] - expect) > tol):
            bad = int(rows[np.argmax(np.abs(errors[t, rows] - expect))])
            raise RuntimeError(
                f"trace inconsistent with recorded minimiser at t={t}, node {bad}"
            )


def check_k_boundedness(
    g: WeightedGraph,
    sc: StructuralConstants,
    pm: PerturbationModel,
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-12,
) -> CheckReport:
    """Fuzz the one-round composite map: |G(xi, mu)|_inf <= |xi|_inf + |mu|_inf.

    Each sample draws a random history window, per-edge input values, update
    ages and channel delays, applies the composed update and compares norms.
    A violating sample is reproducible from its index via the fuzz stream.
    """
    n = g.node_count
    delta, taubar = pm.delta, pm.max_delay
    depth = delta + taubar + 1
    d = sc.distances
    dsrc, ddst, dpair, dw = g.dir_src, g.dir_dst, g.dir_pair, g.dir_weight
    gap = d[ddst] + dw - d[dsrc]
    starts = g.indptr[:-1]
    slacks = np.empty(samples)
    max_ratio = 0.0
    for s in range(samples):
        rng = stream(seed, FUZZ, s)
        scale = 10.0 ** rng.uniform(-1.0, 2.0)
        xi = rng.uniform(-scale, scale, (depth, n))
        mu = rng.uniform(-scale, scale, len(dsrc))
        q = rng.integers(0, delta + 1, n)
        tau = rng.integers(0, taubar + 1, g.edge_count)
        tau_hat = q[dsrc] + tau[dpair]
        vals = xi[depth - 1 - tau_hat, ddst] + mu + gap
        out = np.minimum.reduceat(vals, starts)
        out = np.where(g.is_source, 0.0, out)
        lhs = float(np.max(np.abs(out)))
        rhs = float(np.max(np.abs(xi))) + float(np.max(np.abs(mu)))
        slacks[s] = rhs - lhs
        if rhs > 0:
            max_ratio = max(max_ratio, lhs / rhs)
    return _report(
        "k_boundedness",
        slacks,
        0,
        tol,
        {
            "samples": samples,
            "seed": seed,
            "max_ratio": max_ratio,
            "window_depth": depth,
        },
    )
