"""Closed-form exponential error bound for the perturbed protocol.

From the structural constants (zeta, effective diameter D) and the
perturbation extents (schedule window delta, maximum delay tau_bar) the
window length is ``M = D (delta + tau_bar) + (D - 1)`` and the bound reads

    b(k) = zeta^(k/(M+1)) * zeta^(-M/(M+1)) * |xi|_inf + gain * |u|_inf

for k >= M+1, where ``|xi|_inf`` is the sup error over the first M+1
states and ``gain = zeta^(1/(M+1)) (D-1) + D / (1-zeta)``.  The bound is
not asserted before k = M+1; earlier entries of the series merely repeat
the first asserted value for display.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delaysys import CheckReport, ExpIssEnvelope, _report
from .graphs import StructuralConstants


def window_length(diameter: int, delta: int, max_delay: int) -> int:
    """Contraction window ``M = D (delta + tau_bar) + (D - 1)``."""
    return diameter * (delta + max_delay) + (diameter - 1)


@dataclass(frozen=True)
class BoundParameters:
    zeta: float
    diameter: int
    delta: int
    max_delay: int
    window: int            # M
    rate: float            # zeta^(1/(M+1))
    overshoot: float       # zeta^(-M/(M+1))
    input_gain: float      # rate * (D-1) + D / (1 - zeta)
    input_norm_bound: float

    def __post_init__(self):
        if self.window < self.delta + self.max_delay:
            raise ValueError("window must cover the composed delay")
        if not (0.0 < self.rate < 1.0):
            raise ValueError("rate must lie in (0,1)")
        if self.overshoot < 1.0:
            raise ValueError("overshoot must be >= 1")
        if self.input_gain <= 0:
            raise ValueError("input gain must be positive")

    def envelope(self) -> ExpIssEnvelope:
        return ExpIssEnvelope(
            overshoot=self.overshoot, rate=self.rate, input_gain=self.input_gain
        )

    def floor(self) -> float:
        """Limit of b(k): the persistent input term."""
        return self.input_gain * self.input_norm_bound


def bound_params(
    sc: StructuralConstants, delta: int, max_delay: int, input_norm: float
) -> BoundParameters:
    """Evaluate all derived constants of the error bound."""
    zeta = float(sc.zeta)
    if not (0.0 < zeta < 1.0):
        raise ValueError("zeta must lie in (0,1)")
    if delta < 0 or max_delay < 0:
        raise ValueError("delta and max_delay must be nonnegative")
    if input_norm < 0:
        raise ValueError("input norm bound must be nonnegative")
    dia = int(sc.effective_diameter)
    m = window_length(dia, delta, max_delay)
    rate = zeta ** (1.0 / (m + 1))
    overshoot = zeta ** (-m / (m + 1))
    gain = rate * (dia - 1) + dia / (1.0 - zeta)
    return BoundParameters(
        zeta=zeta,
        diameter=dia,
        delta=int(delta),
        max_delay=int(max_delay),
        window=m,
        rate=rate,
        overshoot=overshoot,
        input_gain=gain,
        input_norm_bound=float(input_norm),
    )


def bound_series_from_prefix(
    bp: BoundParameters, prefix_sup: float, horizon: int
) -> np.ndarray:
    """Bound series b(0..horizon) given the sup error over states 0..M."""
    m = bp.window
    if horizon <= m:
        raise ValueError(f"horizon must exceed the window M={m}")
    k = np.arange(horizon + 1, dtype=np.float64)
    b = bp.rate ** k * bp.overshoot * prefix_sup + bp.floor()
    b[: m + 1] = b[m + 1]  # displayed only; not asserted before M+1
    return b


def bound_series(bp: BoundParameters, trace) -> np.ndarray:
    """Bound series for a trace; the initial segment supplies ``|xi|_inf``."""
    errors = _trace_errors(trace)
    prefix = float(np.max(np.abs(errors[: bp.window + 1])))
    return bound_series_from_prefix(bp, prefix, len(errors) - 1)


def verify_bound(trace, bp: BoundParameters, tol: float = 0.0) -> CheckReport:
    """Assert ``|x(k)|_inf <= b(k)`` for every k >= M+1."""
    errors = _trace_errors(trace)
    horizon = len(errors) - 1
    if horizon <= bp.window:
        raise ValueError("trace horizon must exceed the window")
    b = bound_series(bp, trace)
    sup = np.max(np.abs(errors), axis=1)
    start = bp.window + 1
    slacks = b[start:] - sup[start:]
    report = _report(
        "bound_domination",
        slacks,
        start,
        tol,
        {
            "window": bp.window,
            "rate": bp.rate,
            "overshoot": bp.overshoot,
            "input_gain": bp.input_gain,
            "input_norm_bound": bp.input_norm_bound,
            "prefix_sup": float(np.max(np.abs(errors[: bp.window + 1]))),
            "final_error": float(sup[-1]),
            "final_bound": float(b[-1]),
            "mean_slack": float(np.mean(slacks)),
        },
    )
    return report


def _trace_errors(trace) -> np.ndarray:
    errors = getattr(trace, "errors", None) if not isinstance(trace, np.ndarray) else trace
    if errors is None:
        raise ValueError("trace has no error coordinates; convert it first")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim == 1:
        errors = errors[:, None]
    return errors
