"""Closed-form transfer function of the adaptive spiking neuron.

For a constant activation ``S`` the neuron settles into periodic firing.
The map from ``S`` to the average outgoing postsynaptic current has a
closed form built from five constants derived from the neuron parameters:

    transfer(S) = max(0, h / (exp((c1*S + c2) / (c3*S + c4)) - 1) - c0 + h/2)

for ``S`` above the firing floor ``theta0 / 2`` and 0 below it. The inner
ratio is the approximate inter-spike interval divided by ``tau_eta``; the
approximation comes from a second-order small-interval expansion of the
equilibrium condition, so it is accurate at high firing rates and
progressively optimistic at low ones. ``equilibrium_isi`` solves the
un-expanded equilibrium exactly and serves as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, ParameterError
from .neuron import NeuronParams

__all__ = [
    "TransferConstants",
    "SteadyState",
    "constants_from",
    "steady_state_isi",
    "equilibrium_isi",
    "steady_state",
    "transfer_value",
    "transfer_floor",
    "transfer_derivative",
    "normalize_h",
]

# Exponent bound for the closed-form map; far outside the range reachable
# for non-negative S, where the exponent never exceeds 2*tau_gamma/(tau_gamma+tau_eta).
_EXP_GUARD = 500.0


@dataclass(frozen=True)
class TransferConstants:
    """Precomputed constants of the closed-form transfer function."""

    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    h: float


def constants_from(params: NeuronParams) -> TransferConstants:
    """Compute the transfer constants for a parameter set.

    Pure function; the constants scale linearly with ``theta0`` (c2, c4),
    with ``m_f`` (c1), and with ``h`` (c0).
    """
    tg, te = params.tau_gamma, params.tau_eta
    c1 = 2.0 * params.m_f * tg * tg
    c2 = 2.0 * params.theta0 * te * tg
    c3 = tg * (params.m_f * tg + 2.0 * (params.m_f + 1.0) * te)
    c4 = params.theta0 * te * (tg + te)
    s_floor = params.theta0 / 2.0
    c0 = params.h / math.expm1((c1 * s_floor + c2) / (c3 * s_floor + c4))
    return TransferConstants(c0=c0, c1=c1, c2=c2, c3=c3, c4=c4, h=params.h)


def steady_state_isi(params: NeuronParams, s: float) -> float:
    """Approximate inter-spike interval (ms) for constant activation ``s``.

    Second-order small-interval expansion of the firing equilibrium;
    requires ``s > theta0 / 2`` (below that the neuron does not sustain
    firing). Underestimates the true interval at low rates; see
    ``equilibrium_isi`` for the exact value.
    """
    if s <= params.theta0 / 2.0:
        raise DomainError(
            f"no sustained firing for s={s} <= theta0/2={params.theta0 / 2.0}"
        )
    tg, te = params.tau_gamma, params.tau_eta
    num = 2.0 * tg * te * (s * params.m_f * tg + params.theta0 * te)
    den = (
        s * tg * (params.m_f * tg + 2.0 * (params.m_f + 1.0) * te)
        + params.theta0 * tg * te
        + params.theta0 * te * te
    )
    return num / den


def _threshold_floor(params: NeuronParams, t: float) -> float:
    """Asymptotic pre-spike threshold for periodic firing with interval t."""
    e = math.exp(-t / params.tau_gamma)
    return params.theta0 * (1.0 - e) / (1.0 - (params.m_f + 1.0) * e)


def equilibrium_isi(params: NeuronParams, s: float) -> float:
    """Exact inter-spike interval (ms): root of the firing equilibrium.

    Solves exp(-t/tau_eta) * (2s + theta_l(t)) = 2s - theta_l(t) for the
    unique root above the threshold-floor pole at tau_gamma*ln(1 + m_f).
    """
    if s <= params.theta0 / 2.0:
        raise DomainError(
            f"no sustained firing for s={s} <= theta0/2={params.theta0 / 2.0}"
        )

    def gap(t: float) -> float:
        th = _threshold_floor(params, t)
        return math.exp(-t / params.tau_eta) * (2.0 * s + th) - (2.0 * s - th)

    lo = params.tau_gamma * math.log1p(params.m_f) * (1.0 + 1e-12) + 1e-12
    hi = 10.0 * params.tau_eta
    while gap(hi) > 0.0:
        hi *= 10.0
        if hi > 1e12:
            raise DomainError(f"equilibrium interval diverges for s={s}")
    return float(brentq(gap, lo, hi, xtol=1e-12, rtol=1e-14))


@dataclass(frozen=True)
class SteadyState:
    """Asymptotic per-spike floors of the periodic firing regime."""

    theta_l: float  # pre-spike threshold
    s_hat_l: float  # pre-spike refractory response
    i_l: float  # pre-spike outgoing current
    t_e: float  # inter-spike interval (ms)


def steady_state(params: NeuronParams, s: float) -> SteadyState:
    """Steady-state floors evaluated at the approximate interval."""
    t_e = steady_state_isi(params, s)
    theta_l = _threshold_floor(params, t_e)
    e = math.exp(-t_e / params.tau_eta)
    return SteadyState(
        theta_l=theta_l,
        s_hat_l=s - theta_l / 2.0,
        i_l=params.h * e / (1.0 - e),
        t_e=t_e,
    )


def _rate_exponent(s, consts: TransferConstants):
    return (consts.c1 * s + consts.c2) / (consts.c3 * s + consts.c4)


def transfer_value(s, consts: TransferConstants, theta0: float):
    """Average outgoing-current map; 0 at or below the firing floor.

    Accepts scalars or arrays. The exponent is clamped at a bound never
    reached for non-negative inputs, so the expression cannot overflow.
    """
    s = np.asarray(s, dtype=float)
    firing = s > theta0 / 2.0
    safe = np.where(firing, s, theta0)  # keep the exponent away from its pole
    g = np.minimum(_rate_exponent(safe, consts), _EXP_GUARD)
    raw = consts.h / np.expm1(g) - consts.c0 + consts.h / 2.0
    out = np.where(firing, np.maximum(0.0, raw), 0.0)
    return out if out.ndim else float(out)


def transfer_floor(s, consts: TransferConstants, theta0: float):
    """Lowest-current variant of the map (no half-spike offset).

    Zero exactly at the firing floor by construction of ``c0``.
    """
    s = np.asarray(s, dtype=float)
    firing = s > theta0 / 2.0
    safe = np.where(firing, s, theta0)
    g = np.minimum(_rate_exponent(safe, consts), _EXP_GUARD)
    raw = consts.h / np.expm1(g) - consts.c0
    out = np.where(firing, raw, 0.0)
    return out if out.ndim else float(out)


def transfer_derivative(s, consts: TransferConstants, theta0: float):
    """Analytic derivative of ``transfer_value``; 0 on the silent side."""
    s = np.asarray(s, dtype=float)
    firing = s > theta0 / 2.0
    safe = np.where(firing, s, theta0)
    g = np.minimum(_rate_exponent(safe, consts), _EXP_GUARD)
    den = consts.c3 * safe + consts.c4
    g_prime = (consts.c1 * consts.c4 - consts.c2 * consts.c3) / (den * den)
    e_g = np.exp(g)
    raw = -consts.h * e_g * g_prime / np.square(e_g - 1.0)
    out = np.where(firing, raw, 0.0)
    return out if out.ndim else float(out)


def normalize_h(params: NeuronParams) -> float:
    """Spike height that scales the transfer map to 1 at unit activation.

    The map is linear in ``h`` (both the main term and ``c0`` carry it),
    so the height is the reciprocal of the unit-height value at S=1.
    """
    unit = constants_from(params.with_h(1.0))
    value = transfer_value(1.0, unit, params.theta0)
    if value <= 0.0:
        raise ParameterError(
            f"cannot normalise: unit-height transfer at S=1 is {value} "
            f"(theta0={params.theta0} too large)"
        )
    return 1.0 / value
