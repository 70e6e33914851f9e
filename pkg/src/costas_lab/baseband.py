"""Nonlinear baseband dynamical models of the loops.

Three fidelities, each exposing a right-hand side for the ODE engine:

* ``ClassicPhaseModel`` -- the 2-state phase-domain ODE (loop-filter
  integrator state and phase error) with the ideal-LPF assumption.
* ``DelayModel`` -- same states, but the LPFs reappear as a
  frequency-dependent phase lag inside the PD argument, which makes the
  phase-error rate implicit; the solver resolves it by damped fixed-point
  iteration with a bisection fallback.
* ``AveragedModel`` -- the slow pull-in dynamics of the beat frequency
  driven by the DC component of the asymmetric PD beat waveform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .analysis import (
    _QPSK_BEAT_CONSTANT,
    RangeError,
    lock_in_range,
    total_phase_lag,
)
from .core import LoopParams, LoopVariant, VariantTag
from .detectors import PdCharacteristic


class ImplicitSolveError(RuntimeError):
    """The delay model's implicit phase-rate equation failed to converge."""


@dataclass(frozen=True)
class ClassicPhaseModel:
    """Phase-domain model with PI loop filter, state (x_lf, theta_e)."""

    params: LoopParams
    pd: PdCharacteristic

    def rhs(self, state) -> tuple[float, float]:
        return classic_rhs(self, state)

    def equilibrium_x(self) -> float:
        """Integrator charge that cancels the detuning at lock."""
        return self.params.delta_omega0 * self.params.tau1 / self.params.k0


def classic_rhs(model: ClassicPhaseModel, state) -> tuple[float, float]:
    """Right-hand side of the classic 2-state phase model.

    x' = phi(theta_e);  theta_e' = dw0 - K0*(x/tau1 + (tau2/tau1)*phi).
    """
    x, theta_e = state
    p = model.params
    phi = model.pd.phi(theta_e)
    dx = phi
    dtheta = p.delta_omega0 - p.k0 * (x / p.tau1 + (p.tau2 / p.tau1) * phi)
    return dx, dtheta


@dataclass(frozen=True)
class DelayModel:
    """Phase model with the LPFs folded in as a phase-lag block."""

    params: LoopParams
    pd: PdCharacteristic
    max_iter: int = 50
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.params.omega3 is None:
            raise ValueError("delay model needs the LPF corner omega3")

    def rhs(self, state, prev_dtheta: float) -> tuple[float, float]:
        return delay_rhs(self, state, prev_dtheta)


def _delay_phi(model: DelayModel, theta_e: float, dtheta: float) -> float:
    lag = -math.atan(dtheta / model.params.omega3)
    return model.pd.phi(theta_e + lag)


def delay_rhs(model: DelayModel, state, prev_dtheta: float) -> tuple[float, float]:
    """Resolve the implicit phase-error rate of the delay model.

    theta_e' = dw0 - K0*(x/tau1 + (tau2/tau1)*phi(theta_e + lag(theta_e')))
    is solved for theta_e' by fixed-point iteration seeded with the
    previous step's rate; if the iteration stalls, the root is bracketed
    (the right side is bounded by the PD amplitude) and bisected.
    """
    if not math.isfinite(prev_dtheta):
        raise ImplicitSolveError("seed rate is not finite")
    x, theta_e = state
    p = model.params
    base = p.delta_omega0 - p.k0 * x / p.tau1
    gain = p.k0 * p.tau2 / p.tau1

    def g(v: float) -> float:
        return base - gain * _delay_phi(model, theta_e, v)

    v = prev_dtheta
    for _ in range(model.max_iter):
        v_next = g(v)
        if abs(v_next - v) <= model.rel_tol * max(abs(v_next), 1.0):
            return _delay_phi(model, theta_e, v_next), v_next
        v = v_next

    # amplitude bound of phi gives a hard bracket for the root of g(v) - v
    amp = 2.0 * model.pd.m * max(1.0, model.pd.m)
    lo, hi = base - gain * amp, base + gain * amp
    flo = g(lo) - lo
    fhi = g(hi) - hi
    if flo == 0.0:
        v = lo
    elif fhi == 0.0:
        v = hi
    elif flo * fhi > 0.0:
        raise ImplicitSolveError("implicit rate equation lost its bracket")
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = g(mid) - mid
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
            if hi - lo <= model.rel_tol * max(abs(hi), 1.0):
                break
        v = 0.5 * (lo + hi)
    return _delay_phi(model, theta_e, v), v


@dataclass(frozen=True)
class AveragedModel:
    """Slow pull-in model for the beat frequency delta_omega.

    Valid between the lock-in and pull-in bands; the predictor guards the
    lower end by switching to the lock-in regime instead of evaluating
    here.
    """

    params: LoopParams
    variant: LoopVariant

    @property
    def k_h(self) -> float:
        return self.params.k_h

    def rhs(self, delta_omega: float) -> float:
        return averaged_rhs(self, delta_omega)


def averaged_ud(
    variant: LoopVariant, delta_omega: float, params: LoopParams
) -> float:
    """DC component of the PD output during a beat, volts.

    Conventional loops carry the cos(phi_tot) factor that reverses
    polarity at the pull-in limit; the modified loops have no filter lag
    in the PD path, hence no cosine and no polarity reversal.
    """
    if delta_omega == 0:
        raise RangeError("averaged PD output is singular at zero beat frequency")
    p = params
    kh = p.k_h
    tag = variant.tag
    if tag is VariantTag.MODIFIED_BPSK:
        return math.pi**2 * p.kd * p.k0 * kh / (8.0 * delta_omega)
    if tag is VariantTag.MODIFIED_QPSK:
        return math.pi**2 * p.kd**2 * p.k0 * kh / (64.0 * delta_omega)
    cos_tot = math.cos(total_phase_lag(p, variant, abs(delta_omega)))
    if tag is VariantTag.CONVENTIONAL_QPSK:
        return _QPSK_BEAT_CONSTANT * p.k0 * p.kd**2 * kh * cos_tot / delta_omega
    return p.k0 * p.kd**2 * kh * cos_tot / (math.pi**2 * delta_omega)


def averaged_rhs(model: AveragedModel, delta_omega: float) -> float:
    """d(delta_omega)/dt of the averaged pull-in dynamics."""
    if delta_omega <= 0:
        raise RangeError("averaged model is defined for delta_omega > 0")
    p = model.params
    return -p.k0 * averaged_ud(model.variant, delta_omega, p) / p.tau1


def averaged_pull_in_time_numeric(
    model: AveragedModel, delta_omega0: float, n_steps: int = 20000
) -> float:
    """Integrate the averaged ODE from the initial offset down to the
    lock-in range, without the straight-line cosine approximation.

    Fourth-order fixed-step integration in the time domain would stall
    near the pull-in limit, so integrate the separated form
    dt = -d(dw)/rhs(dw) over dw with Simpson's rule instead.
    """
    dw_l = lock_in_range(model.params, model.variant)
    if delta_omega0 <= dw_l:
        raise RangeError("offset already inside the lock-in range")
    if n_steps % 2:
        n_steps += 1
    h = (delta_omega0 - dw_l) / n_steps
    total = 0.0
    for k in range(n_steps + 1):
        dw = dw_l + k * h
        w = 1.0 if k in (0, n_steps) else (4.0 if k % 2 else 2.0)
        total += w / (-averaged_rhs(model, dw))
    return total * h / 3.0
