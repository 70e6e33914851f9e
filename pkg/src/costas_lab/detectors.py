"""Phase-detector characteristics for all loop variants.

Two layers live here: the baseband nonlinearities ``phi_*`` used by the
ODE models (functions of the phase error alone), and the sample-level PD
computations used by the signal simulator (functions of the actual branch
signals).  Both are pure and stateless.

Tie-breaks are deterministic so tests are reproducible: sign(0) := +1
everywhere, the chopped-sine branch boundaries take the left-branch
limit, and arg() returns its principal value.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .core import LoopVariant, PdFlavor, VariantTag

HALF_PI = math.pi / 2.0
QUARTER_PI = math.pi / 4.0


def sign(x: float) -> float:
    """Hard limiter with sign(0) := +1."""
    return 1.0 if x >= 0.0 else -1.0


def phi_bpsk(theta_e: float, m: float = 1.0) -> float:
    """Conventional-BPSK PD characteristic (m^2/2)*sin(2*theta_e)."""
    return 0.5 * m * m * math.sin(2.0 * theta_e)


def phi_qpsk(theta_e: float, m: float = 1.0) -> float:
    """Conventional-QPSK chopped-sine PD characteristic.

    Equals 2m*sin(r) where r is theta_e reduced (pi/2)-periodically into
    (-pi/4, pi/4]; the half-open reduction realizes the left-branch-limit
    convention at the corners, where the amplitude peaks at sqrt(2)*m.
    """
    r = theta_e - HALF_PI * math.floor(theta_e / HALF_PI + 0.5)
    if r <= -QUARTER_PI:  # boundary lands on the left edge: take previous branch
        r += HALF_PI
    return 2.0 * m * math.sin(r)


def pd_conventional_bpsk(i2: float, q2: float) -> float:
    """Multiplier PD: product of the two LPF outputs."""
    return i2 * q2


def pd_conventional_qpsk(i2: float, q2: float) -> float:
    """Hard-limiter cross-product PD of the conventional QPSK loop."""
    return -q2 * sign(i2) + i2 * sign(q2)


def pd_modified_bpsk(um: complex) -> tuple[float, float]:
    """Phase-output PD of the modified BPSK loop.

    Returns (ud, data) where data = sign(Re um) is the demodulated symbol
    estimate and ud = arg(um * data), confined to (-pi/2, pi/2] because the
    data flip absorbs the pi ambiguity.  PD gain is 1.
    """
    if um == 0:
        raise ValueError("phase of zero envelope is undefined")
    data = sign(um.real)
    ud = cmath.phase(um * data)
    if ud <= -HALF_PI:  # re==0, im<0 tie: fold to the +pi/2 edge
        ud += math.pi
    return ud, data


def pd_modified_qpsk(um: complex) -> tuple[float, float, float]:
    """Phase-output PD of the modified QPSK loop.

    Returns (ud, data_i, data_q); the symbol estimates come from the sign
    blocks and ud = arg(um * (data_i - 1j*data_q)) lies in (-pi/4, pi/4].
    PD gain is 1.
    """
    if um == 0:
        raise ValueError("phase of zero envelope is undefined")
    data_i = sign(um.real)
    data_q = sign(um.imag)
    ud = cmath.phase(um * complex(data_i, -data_q))
    if ud <= -QUARTER_PI:
        ud += HALF_PI
    return ud, data_i, data_q


def pd_modified_imag(um: complex, variant: LoopVariant, m: float = 1.0) -> float:
    """Alternative modified-loop PD taken from the imaginary part.

    BPSK: ud = Im(um * data) = m*sin(theta_e), gain m.  QPSK:
    ud = Im(um * (data_i - 1j*data_q)) = 2m*sin(theta_e), gain 2m.
    The ``m`` argument is unused at run time (the amplitude rides on um)
    and documents the nominal gain only.
    """
    if variant.is_qpsk:
        data_i = sign(um.real)
        data_q = sign(um.imag)
        return (um * complex(data_i, -data_q)).imag
    data = sign(um.real)
    return (um * data).imag


@dataclass(frozen=True)
class PdCharacteristic:
    """Baseband PD nonlinearity phi(theta_e) for one variant."""

    variant: LoopVariant
    m: float = 1.0

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError(f"modulation amplitude must be > 0, got {self.m}")

    def phi(self, theta_e: float) -> float:
        if self.variant.tag is VariantTag.CONVENTIONAL_BPSK:
            return phi_bpsk(theta_e, self.m)
        if self.variant.tag is VariantTag.CONVENTIONAL_QPSK:
            return phi_qpsk(theta_e, self.m)
        # Modified loops: the PD reports the wrapped phase error directly
        # (COMPLEX_PHASE) or its sine (COMPLEX_IMAG), periodized by the
        # data-estimate folding.
        period = math.pi / 2.0 if self.variant.is_qpsk else math.pi
        r = theta_e - period * math.floor(theta_e / period + 0.5)
        if r <= -period / 2.0:
            r += period
        if self.variant.pd_flavor is PdFlavor.COMPLEX_IMAG:
            gain = 2.0 * self.m if self.variant.is_qpsk else self.m
            return gain * math.sin(r)
        return r

    @property
    def kd(self) -> float:
        """Small-signal PD gain (slope of phi at the lock point)."""
        tag, flavor = self.variant.tag, self.variant.pd_flavor
        if tag is VariantTag.CONVENTIONAL_BPSK:
            return self.m**2
        if tag is VariantTag.CONVENTIONAL_QPSK:
            return 2.0 * self.m
        if flavor is PdFlavor.COMPLEX_IMAG:
            return 2.0 * self.m if self.variant.is_qpsk else self.m
        return 1.0
