"""Generic discrete-time delay-system scaffolding and trajectory checkers.

Nothing in this module knows about graphs or consensus.  It provides a
history-windowed system interface plus checkers that certify, on concrete
trajectories:

* the windowed contraction inequality
  ``V(x(k+1)) <= kappa * max_{k-M <= θ <= k} V(x(θ)) + λ_u * ||u||_inf``,
* exponential envelopes ``||x(k)|| <= p ρ^k ||ξ|| + λ(||u||_inf)``,
* empirical per-subsystem gain slopes against a window maximum.

Only linear gains (slopes) are represented; the sup norm is the default
state functional.  Violations are report content, not exceptions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def sup_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(np.abs(x))) if x.size else 0.0


def _input_sup(inputs) -> float:
    """||u||_inf of an input signal given as a scalar, vector or (K, m) array."""
    if inputs is None:
        return 0.0
    if np.isscalar(inputs):
        return float(inputs)
    arr = np.asarray(inputs, dtype=np.float64)
    return float(np.max(np.abs(arr))) if arr.size else 0.0


def _norm_rows(states, norm: Callable) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    return np.array([norm(row) for row in states], dtype=np.float64)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a trajectory check.

    ``worst_slack`` is the minimum of (allowed - observed) over all checked
    indices; negative slack beyond the tolerance marks a violation.
    """

    check: str
    passed: bool
    worst_slack: float
    first_violation_k: int | None
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "worst_slack": float(self.worst_slack),
            "first_violation_k": (
                None if self.first_violation_k is None else int(self.first_violation_k)
            ),
            "params": _jsonable(self.params),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _report(name, slacks, start_k, tol, params) -> CheckReport:
    slacks = np.asarray(slacks, dtype=np.float64)
    if slacks.size == 0:
        return CheckReport(name, True, math.inf, None, params)
    worst = float(slacks.min())
    bad = np.nonzero(slacks < -tol)[0]
    first = int(start_k + bad[0]) if bad.size else None
    return CheckReport(name, first is None, worst, first, params)


@dataclass(frozen=True)
class DelaySystemSpec:
    """History-windowed transition map ``x(k+1) = G(x_[k-τ..k], u(k-d))``.

    ``transition`` receives the window as an array of shape ``(τ+1, n)``
    with the newest state last, plus the (delayed) input vector, and must
    map the all-zero window and zero input to zero.
    """

    state_dim: int
    subsystem_sizes: tuple[int, ...]
    max_state_delay: int
    input_delay: int
    input_dim: int
    transition: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        if sum(self.subsystem_sizes) != self.state_dim:
            raise ValueError("subsystem sizes must sum to the state dimension")
        if self.max_state_delay < 0 or self.input_delay < 0:
            raise ValueError("delays must be nonnegative")
        zero_win = np.zeros((self.max_state_delay + 1, self.state_dim))
        zero_u = np.zeros(self.input_dim)
        out = np.asarray(self.transition(zero_win, zero_u), dtype=np.float64)
        if sup_norm(out) > 1e-12:
            raise ValueError("transition must map the zero window and zero input to zero")


def simulate_delay_system(
    spec: DelaySystemSpec, initial_window, inputs, horizon: int
) -> np.ndarray:
    """Iterate a delay system; returns states indexed 0..horizon.

    ``initial_window`` has shape ``(τ+1, n)`` and supplies x(-τ)..x(0);
    inputs before time 0 are taken as zero.
    """
    tau, d = spec.max_state_delay, spec.input_delay
    win = np.array(initial_window, dtype=np.float64).reshape(tau + 1, spec.state_dim)
    u = np.zeros((horizon, spec.input_dim)) if inputs is None else (
        np.asarray(inputs, dtype=np.float64).reshape(-1, spec.input_dim)
    )
    if len(u) < horizon:
        raise ValueError("need one input per step")
    out = np.empty((horizon + 1, spec.state_dim))
    hist = list(win)
    out[0] = hist[-1]
    for k in range(horizon):
        uk = u[k - d] if k - d >= 0 else np.zeros(spec.input_dim)
        nxt = np.asarray(spec.transition(np.array(hist[-(tau + 1):]), uk), dtype=np.float64)
        out[k + 1] = nxt
        hist.append(nxt)
    return out


@dataclass(frozen=True)
class RazumikhinCertificate:
    """Window contraction certificate: window M, contraction kappa, input slope."""

    window: int
    contraction: float
    input_gain: float = 0.0
    norm: Callable = sup_norm
    lower_slope: float = 1.0
    upper_slope: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.contraction < 1.0):
            raise ValueError("contraction must lie in [0,1)")
        if self.window < 0:
            raise ValueError("window must be nonnegative")
        if self.input_gain < 0:
            raise ValueError("input gain slope must be nonnegative")
        if self.lower_slope <= 0 or self.upper_slope <= 0:
            raise ValueError("bound slopes must be positive")


def check_razumikhin(
    states, inputs, cert: RazumikhinCertificate, start_k: int, tol: float = 1e-12
) -> CheckReport:
    """Assert ``V(x(k+1)) <= kappa * max window V + λ_u ||u||`` for k >= start_k."""
    v = _norm_rows(states, cert.norm)
    last = len(v) - 1
    if start_k < cert.window:
        raise ValueError("start_k must be at least the window length")
    if last <= start_k:
        raise ValueError("trajectory too short for the requested start index")
    u_norm = _input_sup(inputs)
    m = cert.window
    # window maxima over [k-M, k] for k = start_k .. last-1
    width = m + 1
    sw = np.lib.stride_tricks.sliding_window_view(v, width)
    win_max = sw.max(axis=1)  # win_max[j] = max v[j .. j+M]
    ks = np.arange(start_k, last)
    rhs = cert.contraction * win_max[ks - m] + cert.input_gain * u_norm
    slacks = rhs - v[ks + 1]
    return _report(
        "razumikhin",
        slacks,
        start_k,
        tol,
        {
            "window": m,
            "contraction": cert.contraction,
            "input_gain": cert.input_gain,
            "input_norm": u_norm,
            "start_k": start_k,
            "checked": int(len(ks)),
        },
    )


@dataclass(frozen=True)
class ExpIssEnvelope:
    """Exponential envelope ``p ρ^k ||ξ|| + λ ||u||`` with linear input gain."""

    overshoot: float
    rate: float
    input_gain: float = 0.0

    def __post_init__(self):
        if self.overshoot < 1.0:
            raise ValueError("overshoot must be >= 1")
        if not (0.0 <= self.rate < 1.0):
            raise ValueError("rate must lie in [0,1)")
        if self.input_gain < 0:
            raise ValueError("input gain slope must be nonnegative")


def check_expiss_envelope(
    states,
    inputs,
    env: ExpIssEnvelope,
    initial_window: int,
    start_k: int | None = None,
    norm: Callable = sup_norm,
    tol: float = 1e-12,
) -> CheckReport:
    """Assert the envelope for all k >= start_k (default: from index 0).

    ``initial_window`` is the number of leading states forming the initial
    segment whose norm seeds the decaying term.  The report carries the
    tightest feasible overshoot for the given rate under ``tightest_p``.
    """
    v = _norm_rows(states, norm)
    if initial_window < 1 or initial_window > len(v):
        raise ValueError("initial_window must cover at least one state of the trace")
    if start_k is None:
        start_k = 0
    xi = float(v[:initial_window].max())
    u_term = env.input_gain * _input_sup(inputs)
    ks = np.arange(start_k, len(v))
    decay = env.rate ** ks.astype(np.float64)
    rhs = env.overshoot * decay * xi + u_term
    slacks = rhs - v[ks]
    excess = v[ks] - u_term
    with np.errstate(divide="ignore", invalid="ignore"):
        p_req = np.where(excess > 0, excess / (decay * xi), 0.0)
    tightest = float(max(1.0, p_req.max())) if np.all(np.isfinite(p_req)) else math.inf
    report = _report(
        "expiss_envelope",
        slacks,
        start_k,
        tol,
        {
            "overshoot": env.overshoot,
            "rate": env.rate,
            "input_gain": env.input_gain,
            "initial_norm": xi,
            "start_k": int(start_k),
            "tightest_p": tightest,
        },
    )
    return report


@dataclass(frozen=True)
class GainTable:
    """Empirical per-subsystem gain slopes keyed by (subsystem, constraining subsystem)."""

    slopes: dict
    skipped: int
    steps: int

    def max_slope(self) -> float:
        return max(self.slopes.values(), default=0.0)


def per_subsystem_gains(
    states,
    partition,
    window: int,
    input_norm: float = 0.0,
    input_slopes=1.0,
    mask=None,
) -> GainTable:
    """Smallest slopes ``a`` with ``V_i(x_i(k+1)) <= a * window max + λ_iu ||u||``.

    The window max runs over all subsystems and the last ``window+1``
    states.  Steps whose window is identically zero while the left side is
    positive cannot be explained by any slope and are counted as skipped.
    ``mask[k+1, i]`` (optional) restricts which transitions are aggregated.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    sizes = list(partition)
    if sum(sizes) != x.shape[1]:
        raise ValueError("partition must sum to the state dimension")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    ell = len(sizes)
    vi = np.stack(
        [np.max(np.abs(x[:, bounds[i]:bounds[i + 1]]), axis=1) for i in range(ell)],
        axis=1,
    )  # (K+1, ell)
    lam = np.broadcast_to(np.asarray(input_slopes, dtype=np.float64), (ell,))
    kmax = len(vi) - 1
    slopes: dict = {}
    skipped = 0
    steps = 0
    for k in range(window, kmax):
        win = vi[k - window:k + 1]
        den = float(win.max())
        j_con = int(np.unravel_index(np.argmax(win), win.shape)[1])
        for i in range(ell):
            if mask is not None and not mask[k + 1, i]:
                continue
            steps += 1
            num = vi[k + 1, i] - lam[i] * input_norm
            if num <= 0:
                slope = 0.0
            elif den <= 0:
                skipped += 1
                continue
            else:
                slope = num / den
            key = (i, j_con)
            slopes[key] = max(slopes.get(key, 0.0), slope)
    return GainTable(slopes=slopes, skipped=skipped, steps=steps)
