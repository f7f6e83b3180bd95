"""Small-gain certification for interconnections with linear gains.

The coupling of ``ell`` subsystems is a nonnegative matrix ``Λ`` whose
entry ``Λ[i][j]`` is the slope of the gain from subsystem ``j`` into
subsystem ``i`` (0 = no coupling).  The interconnection is certifiable iff
every directed cycle of the coupling graph has slope product < 1, which we
decide through the maximum geometric cycle mean (Karp's algorithm on
log-slopes).  A feasible system gets scalings ``σ`` from longest-path
potentials on the deflated log graph, achieving

    max_j  Λ[i][j] σ_j / σ_i  <=  kappa  <  1   for every i.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graphs import StructuralConstants

LOG_TOL = 1e-12  # strictness tolerance on log-slopes: products >= 1 are infeasible


@dataclass(frozen=True)
class GainSystem:
    """Slope matrix of an interconnection plus per-subsystem input slopes."""

    slopes: np.ndarray
    input_slopes: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.slopes, dtype=np.float64)
        u = np.asarray(self.input_slopes, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("slope matrix must be square")
        if u.shape != (s.shape[0],):
            raise ValueError("input_slopes must have one entry per subsystem")
        if not (np.all(np.isfinite(s)) and np.all(s >= 0)):
            raise ValueError("slopes must be finite and nonnegative")
        if not (np.all(np.isfinite(u)) and np.all(u >= 0)):
            raise ValueError("input slopes must be finite and nonnegative")
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "input_slopes", u)

    @property
    def size(self) -> int:
        return self.slopes.shape[0]

    def to_json(self) -> dict:
        return {
            "l": self.size,
            "slopes": self.slopes.tolist(),
            "input_slopes": self.input_slopes.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GainSystem":
        try:
            ell = int(obj["l"])
            slopes = np.asarray(obj["slopes"], dtype=np.float64)
            inp = obj.get("input_slopes", [0.0] * ell)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed gain matrix JSON: {exc}") from exc
        if slopes.shape != (ell, ell):
            raise ValueError("slope matrix shape does not match 'l'")
        return cls(slopes=slopes, input_slopes=np.asarray(inp, dtype=np.float64))


@dataclass(frozen=True)
class SmallGainCertificate:
    """Scalings and contraction achieving the small-gain inequality."""

    sigma: np.ndarray
    kappa: float
    max_cycle_geometric_mean: float

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if np.any(s <= 0):
            raise ValueError("scalings must be positive")
        if not (0.0 <= self.kappa < 1.0):
            raise ValueError("kappa must lie in [0,1)")
        object.__setattr__(self, "sigma", s)

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "kappa": float(self.kappa),
            "max_cycle_mean": float(self.max_cycle_geometric_mean),
        }


@dataclass(frozen=True)
class InfeasibleCycle:
    """Witness: a directed cycle whose slope product reaches 1."""

    cycle: tuple[int, ...]
    product: float

    def to_json(self) -> dict:
        return {"infeasible_cycle": list(self.cycle), "product": float(self.product)}


def _log_edges(slopes: np.ndarray):
    src, dst = np.nonzero(slopes > 0)
    return src, dst, np.log(slopes[src, dst])


def max_cycle_mean(slopes) -> float:
    """Maximum geometric mean over all directed cycles of the coupling graph.

    Karp's recurrence on log-slopes: with D_k(v) the best k-edge walk
    weight ending at v (any start), the max mean is
    ``max_v min_k (D_n(v) - D_k(v)) / (n - k)``.  Returns 0 for acyclic
    matrices.
    """
    a = np.asarray(slopes, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("slope matrix must be square")
    if np.any(a < 0):
        raise ValueError("slopes must be nonnegative")
    n = a.shape[0]
    src, dst, w = _log_edges(a)
    if len(w) == 0:
        return 0.0
    neg = -np.inf
    d = np.full((n + 1, n), neg)
    d[0] = 0.0
    for k in range(1, n + 1):
        relax = np.full(n, neg)
        vals = d[k - 1][src] + w
        np.maximum.at(relax, dst, vals)
        d[k] = relax
    best = neg
    for v in range(n):
        if d[n][v] == neg:
            continue
        worst = np.inf
        for k in range(n):
            if d[k][v] == neg:
                continue
            worst = min(worst, (d[n][v] - d[k][v]) / (n - k))
        best = max(best, worst)
    if best == neg:  # no node lies on a cycle
        return 0.0
    return float(np.exp(best))


def _potentials(slopes: np.ndarray, deflate_log: float) -> np.ndarray:
    """Longest-walk potentials y with  log Λ[i][j] - c + y_j - y_i <= 0."""
    n = slopes.shape[0]
    src, dst, w = _log_edges(slopes)
    b = w - deflate_log
    y = np.zeros(n)
    for _ in range(n):  # walks never improve past n-1 edges (no positive cycles)
        cand = b + y[dst]
        new = y.copy()
        np.maximum.at(new, src, cand)
        if np.allclose(new, y, rtol=0.0, atol=0.0):
            break
        y = new
    return y


def _critical_cycle(slopes: np.ndarray, mean_log: float) -> tuple[int, ...]:
    """A cycle attaining the maximum cycle mean, via the critical subgraph."""
    n = slopes.shape[0]
    y = _potentials(slopes, mean_log)
    with np.errstate(divide="ignore"):
        logs = np.where(slopes > 0, np.log(np.where(slopes > 0, slopes, 1.0)), -np.inf)
    for eps in (1e-9, 1e-6, 1e-3):
        crit = [
            [j for j in range(n)
             if slopes[i, j] > 0 and logs[i, j] - mean_log + y[j] - y[i] >= -eps]
            for i in range(n)
        ]
        cyc = _find_cycle(crit, n)
        if cyc is not None:
            return cyc
    raise RuntimeError("failed to extract a critical cycle")  # pragma: no cover


def _find_cycle(adj: list[list[int]], n: int) -> tuple[int, ...] | None:
    color = [0] * n  # 0 unseen, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(adj[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 1:
                    cycle = [nxt]
                    cur = node
                    while cur != nxt:
                        cycle.append(cur)
                        cur = parent[cur]
                    cycle.reverse()
                    return tuple(cycle)
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = node
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
    return None


def cycle_product(slopes, cycle) -> float:
    a = np.asarray(slopes, dtype=np.float64)
    nodes = list(cycle)
    prod = 1.0
    for i, j in zip(nodes, nodes[1:] + nodes[:1]):
        prod *= a[i, j]
    return float(prod)


def certify(
    gs: GainSystem, strict_paths: bool = False
) -> SmallGainCertificate | InfeasibleCycle:
    """Certify the cycle small-gain condition or return a violating cycle.

    Feasibility is strict: a cycle whose product reaches 1 (at log tolerance
    ``LOG_TOL``) is a witness of infeasibility.  ``strict_paths`` adds the
    literal open-path reading (all walk products over up to ``ell`` indices
    below 1); it is provided for comparison and not used by any check here.
    """
    slopes = gs.slopes
    mcm = max_cycle_mean(slopes)
    if mcm > 0 and np.log(mcm) >= -LOG_TOL:
        cyc = _critical_cycle(slopes, float(np.log(mcm)))
        return InfeasibleCycle(cycle=cyc, product=cycle_product(slopes, cyc))
    if strict_paths:
        witness = _strict_path_violation(slopes)
        if witness is not None:
            return witness
    deflate = np.log(mcm) if mcm > 0 else np.log(0.5)
    y = _potentials(slopes, float(deflate))
    sigma = np.exp(y)
    src, dst, _ = _log_edges(slopes)
    if len(src):
        kappa = float(np.max(slopes[src, dst] * sigma[dst] / sigma[src]))
    else:
        kappa = 0.0
    return SmallGainCertificate(sigma=sigma, kappa=kappa, max_cycle_geometric_mean=mcm)


def _strict_path_violation(slopes: np.ndarray) -> InfeasibleCycle | None:
    """Max-product walk check over 1..ell-1 edges (open-path reading)."""
    n = slopes.shape[0]
    power = slopes.copy()
    for _ in range(n - 1):
        if power.size and power.max() >= 1.0 - LOG_TOL:
            i, j = np.unravel_index(np.argmax(power), power.shape)
            return InfeasibleCycle(cycle=(int(i), int(j)), product=float(power.max()))
        power = np.max(power[:, :, None] * slopes[None, :, :], axis=1)
    return None


def composite_lyapunov(cert: SmallGainCertificate, subsystem_values) -> float:
    """Scaled max ``V = max_i V_i / σ_i`` of per-subsystem values."""
    vals = np.asarray(subsystem_values, dtype=np.float64)
    if vals.shape != cert.sigma.shape:
        raise ValueError("need one value per subsystem")
    if np.any(vals < 0):
        raise ValueError("subsystem values must be nonnegative")
    return float(np.max(vals / cert.sigma))


def consensus_gain_system(
    sc: StructuralConstants,
) -> tuple[GainSystem, SmallGainCertificate]:
    """Per-node gain data of the consensus window contraction.

    Every non-source node admits slope ``zeta`` against any node over the
    contraction window and input slope equal to the effective diameter;
    sources are uncoupled.  The identity scalings with ``kappa = zeta``
    certify this system directly.
    """
    n = len(sc.distances)
    nonsource = sc.distances > 0
    slopes = np.where(nonsource[:, None], sc.zeta, 0.0)
    input_slopes = np.where(nonsource, float(sc.effective_diameter), 0.0)
    gs = GainSystem(slopes=slopes, input_slopes=input_slopes)
    cert = SmallGainCertificate(
        sigma=np.ones(n),
        kappa=float(sc.zeta),
        max_cycle_geometric_mean=float(sc.zeta) if nonsource.any() else 0.0,
    )
    return gs, cert


def certificate_or_witness_json(result) -> str:
    return json.dumps(result.to_json())
