"""Adaptive spiking neuron: state, kernels, spike condition, single-step update.

The neuron is a spike-response model with four exponential kernels:

* an incoming postsynaptic-current accumulator decaying with ``tau_beta``,
* a first-order membrane filter with time constant ``tau_phi`` (unit DC
  gain) producing the activation,
* a refractory response decaying with ``tau_eta``,
* an adaptive threshold whose excess over the resting value ``theta0``
  decays with ``tau_gamma``.

A spike is emitted when ``activation - refractory > threshold / 2``
(strict). On a spike the pre-jump threshold value is added to the
refractory response, the threshold grows by ``m_f`` times its pre-jump
value, and the outgoing current jumps by the spike height ``h``.

All state updates are exponential-Euler: each decaying variable is
multiplied by ``exp(-dt/tau)`` once per step, so the continuous kernels
are realised exactly at step boundaries. Spike effects are applied at the
end of the step in which the condition is met; at most one spike is
emitted per step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericFault, ParameterError

__all__ = [
    "NeuronParams",
    "NeuronState",
    "ConstantInputTrace",
    "decay_factor",
    "step",
    "simulate_constant",
]


def decay_factor(tau: float, dt: float) -> float:
    """Per-step multiplier exp(-dt/tau) for an exponentially decaying state.

    ``tau`` and ``dt`` are in milliseconds; ``dt`` may be zero (identity).
    """
    if tau <= 0.0:
        raise ParameterError(f"time constant must be positive, got {tau}")
    if dt < 0.0:
        raise ParameterError(f"time step must be non-negative, got {dt}")
    return math.exp(-dt / tau)


@dataclass(frozen=True)
class NeuronParams:
    """Kernel time constants and adaptation parameters of one neuron.

    Defaults follow the biologically motivated setting used throughout the
    package: tau_gamma=15 ms, tau_phi=5 ms, tau_eta=tau_beta=50 ms, and
    theta0 equal to m_f.
    """

    theta0: float = 0.1
    m_f: float = 0.1
    tau_gamma: float = 15.0
    tau_eta: float = 50.0
    tau_beta: float = 50.0
    tau_phi: float = 5.0
    h: float = 1.0

    def __post_init__(self):
        for name in ("tau_gamma", "tau_eta", "tau_beta", "tau_phi"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.theta0 <= 0.0:
            raise ParameterError(f"theta0 must be positive, got {self.theta0}")
        if self.m_f <= 0.0:
            raise ParameterError(f"m_f must be positive, got {self.m_f}")
        if self.h <= 0.0:
            raise ParameterError(f"h must be positive, got {self.h}")
        if self.tau_beta != self.tau_eta:
            # The closed-form transfer function assumes these two are equal;
            # the dynamics still run, but the analytic rate map degrades.
            warnings.warn(
                "tau_beta != tau_eta: the closed-form transfer function is "
                "derived under tau_beta == tau_eta and becomes approximate",
                stacklevel=2,
            )

    def with_h(self, h: float) -> "NeuronParams":
        return replace(self, h=h)


@dataclass
class NeuronState:
    """Per-step dynamical state of one neuron.

    ``psc`` is the outgoing postsynaptic current (this neuron's own spike
    train filtered with tau_beta); ``injected`` is the incoming current
    accumulator; ``activation`` is the membrane-filtered total input;
    ``refractory`` is the summed scaled refractory kernels; ``threshold``
    is the current adaptive threshold.
    """

    psc: float = 0.0
    injected: float = 0.0
    activation: float = 0.0
    refractory: float = 0.0
    threshold: float = 0.0
    last_spike_emitted: bool = False

    @classmethod
    def resting(cls, params: NeuronParams) -> "NeuronState":
        return cls(threshold=params.theta0)


def step(
    state: NeuronState,
    params: NeuronParams,
    input_increment: float,
    dt: float = 1.0,
) -> tuple[NeuronState, bool]:
    """Advance one neuron by one time step; returns (new state, spiked).

    ``input_increment`` is the total increment to the incoming current this
    step: the weighted sum of incoming spike heights plus any injected-
    current increment.
    """
    if dt <= 0.0:
        raise ParameterError(f"dt must be positive, got {dt}")

    a_beta = decay_factor(params.tau_beta, dt)
    a_eta = decay_factor(params.tau_eta, dt)
    a_gamma = decay_factor(params.tau_gamma, dt)
    a_phi = decay_factor(params.tau_phi, dt)

    psc = state.psc * a_beta
    injected = state.injected * a_beta + input_increment
    refractory = state.refractory * a_eta
    threshold = params.theta0 + (state.threshold - params.theta0) * a_gamma
    activation = a_phi * state.activation + (1.0 - a_phi) * injected

    spiked = activation - refractory > threshold / 2.0
    if spiked:
        refractory += threshold
        psc += params.h
        threshold += params.m_f * threshold

    new = NeuronState(
        psc=psc,
        injected=injected,
        activation=activation,
        refractory=refractory,
        threshold=threshold,
        last_spike_emitted=spiked,
    )
    if not all(
        math.isfinite(v)
        for v in (psc, injected, activation, refractory, threshold)
    ):
        raise NumericFault(f"non-finite neuron state: {new}")
    return new, spiked


@dataclass
class ConstantInputTrace:
    """Recorded time series of a constant-input run."""

    dt: float
    spike_times: np.ndarray
    time_ms: np.ndarray
    activation: np.ndarray
    refractory: np.ndarray
    threshold: np.ndarray
    psc: np.ndarray
    spikes: np.ndarray  # 0/1 per step
    smoothed_psc: np.ndarray = field(repr=False)

    def interspike_intervals(self) -> np.ndarray:
        return np.diff(self.spike_times)

    def converged_isi(self) -> float:
        """Mean inter-spike interval over the second half of the run."""
        half = self.time_ms[-1] / 2.0
        late = self.spike_times[self.spike_times >= half]
        if late.size < 2:
            raise ValueError("too few late spikes to estimate a converged ISI")
        return float(np.diff(late).mean())

    def mean_psc(self, from_ms: float = 0.0) -> float:
        return float(self.psc[self.time_ms >= from_ms].mean())

    def to_rows(self):
        """Rows (time_ms, activation, refractory, threshold, psc, spike)."""
        for i in range(self.time_ms.size):
            yield (
                self.time_ms[i],
                self.activation[i],
                self.refractory[i],
                self.threshold[i],
                self.psc[i],
                int(self.spikes[i]),
            )


def simulate_constant(
    params: NeuronParams,
    s: float,
    duration: float = 2000.0,
    dt: float = 1.0,
) -> ConstantInputTrace:
    """Drive one neuron with a constant activation ``s`` and record the run.

    The incoming current accumulator is held at exactly ``s`` every step
    (the per-step increment compensates the decay), so the membrane-
    filtered activation converges to ``s``. This brute-force trace is the
    reference against which the closed-form transfer function is checked.
    """
    if s < 0.0:
        raise ParameterError(f"constant input must be non-negative, got {s}")
    n = int(round(duration / dt))
    a_beta = decay_factor(params.tau_beta, dt)
    a_phi = decay_factor(params.tau_phi, dt)

    state = NeuronState.resting(params)
    time_ms = np.arange(n, dtype=float) * dt
    activation = np.empty(n)
    refractory = np.empty(n)
    threshold = np.empty(n)
    psc = np.empty(n)
    spikes = np.zeros(n)
    smoothed = np.empty(n)
    spike_times = []

    y = 0.0
    for i in range(n):
        increment = s - state.injected * a_beta
        state, spiked = step(state, params, increment, dt)
        if spiked:
            spike_times.append(time_ms[i])
            spikes[i] = 1.0
        activation[i] = state.activation
        refractory[i] = state.refractory
        threshold[i] = state.threshold
        psc[i] = state.psc
        y = a_phi * y + (1.0 - a_phi) * state.psc
        smoothed[i] = y

    return ConstantInputTrace(
        dt=dt,
        spike_times=np.asarray(spike_times),
        time_ms=time_ms,
        activation=activation,
        refractory=refractory,
        threshold=threshold,
        psc=psc,
        spikes=spikes,
        smoothed_psc=smoothed,
    )
