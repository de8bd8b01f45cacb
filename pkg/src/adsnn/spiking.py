"""Conversion of analog graphs into spiking networks, and the clock-driven engine.

Each transfer layer of a batch-norm-folded graph becomes an array of
adaptive spiking neurons; the preceding dense/conv layer becomes the
weighted spike-accumulation operator feeding it, with its bias added to
the post-synaptic activation rather than the accumulated current. Spikes
emitted in a step reach the next layer within the same step (no axonal
delay), so readout latency is governed by the synaptic decay constants.

A pooling layer is merged into the spiking layer that follows it: that
layer maintains a per-unit reconstruction of its presynaptic activity
(spike train filtered by the current decay and its own membrane filter),
applies the pooling operator to the reconstruction each step, and drives
its neurons from the pooled result. Max pooling therefore acts on the
instantaneous reconstructed activation.

The final layer is a non-spiking readout: it integrates incoming spikes
with a slow membrane filter and reports smoothed analog class scores.

The engine keeps all state in arrays batched over independent samples,
and the precision parameters (resting threshold, adaptation multiplier,
spike height) live in per-sample vectors so they can be overridden per
run or switched mid-run without touching the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericFault, StructuralError
from .graph import (
    AvgPool,
    Conv2D,
    Dense,
    MaxPool,
    NetworkGraph,
    SoftmaxReadout,
    Transfer,
    conv2d_forward,
    pool2d,
)
from .neuron import NeuronParams, decay_factor

__all__ = ["SpikingLayer", "SpikingNetwork", "convert_to_spiking"]


@dataclass
class SpikingLayer:
    """One converted block: optional pool, weight operator, neuron array."""

    op: Dense | Conv2D  # bias stripped; applied to spike heights
    bias: np.ndarray  # per output feature, added to the activation
    pool: tuple | None  # ("max"|"avg", k) applied to the input reconstruction
    params: NeuronParams
    in_shape: tuple  # presynaptic shape before pooling
    out_shape: tuple
    readout: bool = False

    @property
    def n_units(self) -> int:
        return int(np.prod(self.out_shape))


def _strip_bias(layer) -> tuple[Dense | Conv2D, np.ndarray]:
    if isinstance(layer, Dense):
        return Dense(layer.weights, np.zeros(layer.weights.shape[0])), layer.bias
    return (
        Conv2D(layer.kernels, np.zeros(layer.kernels.shape[0]), layer.stride, layer.padding),
        layer.bias,
    )


def convert_to_spiking(
    graph: NetworkGraph, readout_tau_phi: float = 50.0
) -> "SpikingNetwork":
    """Substitute every transfer layer of a folded graph with spiking units.

    Weight tensors are carried over unchanged (spike height scales them at
    run time). Requires batch norm to be folded first; the last transfer
    must be the readout, optionally followed by the softmax marker.
    """
    graph.validate()
    if graph.has_batchnorm():
        raise StructuralError("convert_to_spiking requires a batch-norm-folded graph")

    shapes = graph.output_shapes()
    in_shapes = [tuple(graph.input_shape)] + shapes[:-1]
    layers: list[SpikingLayer] = []
    pending_pool = None
    pending_pool_in: tuple = ()
    pending_op = None
    pending_bias = None
    pending_op_in: tuple = ()

    for i, layer in enumerate(graph.layers):
        if isinstance(layer, (Dense, Conv2D)):
            if pending_op is not None:
                raise StructuralError(
                    f"layer {i}: two weight layers without a transfer between them"
                )
            pending_op, pending_bias = _strip_bias(layer)
            pending_op_in = in_shapes[i]
        elif isinstance(layer, (MaxPool, AvgPool)):
            if pending_pool is not None or pending_op is not None:
                raise StructuralError(f"layer {i}: pooling must precede the weight layer")
            pending_pool = ("max" if isinstance(layer, MaxPool) else "avg", layer.k)
            pending_pool_in = in_shapes[i]
        elif isinstance(layer, Transfer):
            if pending_op is None:
                raise StructuralError(
                    f"layer {i}: transfer layer has no incoming weight layer "
                    "(fold the leading batch norm first)"
                )
            params = layer.params
            if layer.readout:
                params = replace(params, tau_phi=readout_tau_phi)
            layers.append(
                SpikingLayer(
                    op=pending_op,
                    bias=pending_bias,
                    pool=pending_pool,
                    params=params,
                    in_shape=pending_pool_in if pending_pool else pending_op_in,
                    out_shape=shapes[i],
                    readout=layer.readout,
                )
            )
            pending_pool = None
            pending_op = None
        elif isinstance(layer, SoftmaxReadout):
            if i != len(graph.layers) - 1:
                raise StructuralError(f"layer {i}: softmax readout must be last")
        else:
            raise StructuralError(
                f"layer {i}: cannot convert {type(layer).__name__} layer"
            )

    if pending_op is not None or pending_pool is not None:
        raise StructuralError("trailing weight or pool layer without a transfer")
    if not layers:
        raise StructuralError("graph has no transfer layers to convert")
    if not layers[-1].readout:
        raise StructuralError("last transfer layer must be flagged as the readout")
    for lay in layers[:-1]:
        if lay.readout:
            raise StructuralError("readout transfer must be the last layer")

    return SpikingNetwork(
        layers=layers,
        input_shape=tuple(graph.input_shape),
        base_params=layers[0].params,
    )


class _LayerState:
    __slots__ = ("c_in", "act", "refr", "thresh", "rec_c", "rec_y", "spikes")

    def __init__(self):
        self.c_in = None
        self.act = None
        self.refr = None
        self.thresh = None
        self.rec_c = None
        self.rec_y = None
        self.spikes = None


class SpikingNetwork:
    """A converted network plus (after ``reset``) its batched run state."""

    def __init__(self, layers, input_shape, base_params):
        self.layers: list[SpikingLayer] = layers
        self.input_shape = tuple(input_shape)
        self.base_params: NeuronParams = base_params
        self.state: list[_LayerState] | None = None
        self._decays: list[dict] | None = None
        self._drive0: np.ndarray | None = None
        self._t = 0
        self._batch = 0
        self.theta0 = None  # per-sample vectors, set by reset
        self.m_f = None
        self.h = None

    # -- structure ---------------------------------------------------------

    @property
    def n_neurons(self) -> int:
        """Total spiking units (the readout integrators do not spike)."""
        return sum(l.n_units for l in self.layers if not l.readout)

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_units

    def layer_widths(self) -> list[int]:
        return [l.n_units for l in self.layers]

    # -- state management ----------------------------------------------------

    def reset(
        self,
        batch_size: int = 1,
        params: NeuronParams | None = None,
        dt: float = 1.0,
    ) -> None:
        """Zero all state for a batch; thresholds start at theta0.

        ``params`` overrides the runtime precision (theta0, m_f, h) and the
        time constants for every layer; the readout keeps its own membrane
        time constant.
        """
        run_params = params if params is not None else self.base_params
        self._decays = []
        for lay in self.layers:
            p = run_params
            if lay.readout:
                p = replace(p, tau_phi=lay.params.tau_phi)
            self._decays.append(
                {
                    "beta": decay_factor(p.tau_beta, dt),
                    "eta": decay_factor(p.tau_eta, dt),
                    "gamma": decay_factor(p.tau_gamma, dt),
                    "phi": decay_factor(p.tau_phi, dt),
                }
            )
        b = batch_size
        self.theta0 = np.full(b, run_params.theta0)
        self.m_f = np.full(b, run_params.m_f)
        self.h = np.full(b, run_params.h)
        self.state = []
        for lay in self.layers:
            st = _LayerState()
            out = (b, *lay.out_shape)
            if lay.pool is None:
                st.c_in = np.zeros(out)
                st.act = np.zeros(out)
            else:
                st.rec_c = np.zeros((b, *lay.in_shape))
                st.rec_y = np.zeros((b, *lay.in_shape))
            if not lay.readout:
                st.refr = np.zeros(out)
                st.thresh = np.full(out, run_params.theta0)
                if lay.pool is not None:
                    st.act = None
            st.spikes = np.zeros(out)
            self.state.append(st)
        self._drive0 = None
        self._t = 0
        self._batch = b

    @property
    def is_reset(self) -> bool:
        return self.state is not None and self._t == 0

    def set_precision(self, theta0: float, m_f: float, h: float, rows=None) -> None:
        """Switch runtime precision (optionally for a subset of samples).

        Weights and accumulated state carry over; thresholds keep their
        current values and decay toward the new resting level.
        """
        if self.state is None:
            raise StructuralError("reset the network before setting precision")
        idx = slice(None) if rows is None else rows
        self.theta0[idx] = theta0
        self.m_f[idx] = m_f
        self.h[idx] = h

    # -- dynamics ------------------------------------------------------------

    def _bc(self, vec: np.ndarray, ndim: int) -> np.ndarray:
        return vec.reshape(vec.shape[0], *([1] * (ndim - 1)))

    def _apply_op(self, lay: SpikingLayer, x: np.ndarray) -> np.ndarray:
        if isinstance(lay.op, Dense):
            return x.reshape(x.shape[0], -1) @ lay.op.weights.T
        return conv2d_forward(x, lay.op)

    def _bias_bc(self, lay: SpikingLayer) -> np.ndarray:
        if len(lay.out_shape) == 3:
            return lay.bias[None, :, None, None]
        return lay.bias[None, :]

    def step_batch(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Advance every layer by one step; returns (scores, per-layer spike counts).

        ``x`` is the constant analog drive, shape (batch, *input_shape).
        Layers update in feedforward order and spikes propagate downstream
        within the same step.
        """
        if self.state is None:
            raise StructuralError("reset the network before stepping")
        prev_spikes = None
        scores = None
        counts = []
        for li, (lay, st, dec) in enumerate(zip(self.layers, self.state, self._decays)):
            if lay.pool is None:
                if li == 0:
                    if self._drive0 is None or self._drive0.shape[0] != x.shape[0]:
                        self._drive0 = self._apply_op(lay, np.asarray(x, dtype=float))
                    st.c_in = self._drive0
                else:
                    st.c_in *= dec["beta"]
                    st.c_in += self._apply_op(
                        lay, prev_spikes * self._bc(self.h, prev_spikes.ndim)
                    )
                st.act = dec["phi"] * st.act + (1.0 - dec["phi"]) * st.c_in
                s = st.act + self._bias_bc(lay)
            else:
                if li == 0:
                    raise StructuralError("first layer cannot pool spiking input")
                st.rec_c *= dec["beta"]
                st.rec_c += prev_spikes * self._bc(self.h, prev_spikes.ndim)
                st.rec_y = dec["phi"] * st.rec_y + (1.0 - dec["phi"]) * st.rec_c
                s = self._apply_op(lay, pool2d(st.rec_y, lay.pool[1], lay.pool[0]))
                s += self._bias_bc(lay)

            if lay.readout:
                scores = s
                counts.append(np.zeros(s.shape[0]))
            else:
                theta0 = self._bc(self.theta0, s.ndim)
                m_f = self._bc(self.m_f, s.ndim)
                st.refr *= dec["eta"]
                st.thresh = theta0 + (st.thresh - theta0) * dec["gamma"]
                spikes = ((s - st.refr) > st.thresh / 2.0).astype(float)
                st.refr += st.thresh * spikes
                st.thresh += m_f * st.thresh * spikes
                st.spikes = spikes
                prev_spikes = spikes
                counts.append(spikes.reshape(spikes.shape[0], -1).sum(axis=1))

        if not np.all(np.isfinite(scores)):
            raise NumericFault("non-finite readout scores; simulation aborted")
        self._t += 1
        return scores.reshape(scores.shape[0], -1), counts

    def run(
        self,
        x: np.ndarray,
        n_steps: int,
        record_rasters: bool = False,
    ):
        """Run ``n_steps`` from the current state; returns a BatchTrace."""
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise StructuralError(
                f"input shape {x.shape[1:]} does not match network input "
                f"{self.input_shape}"
            )
        b = x.shape[0]
        if self.state is None or self._batch != b:
            raise StructuralError(
                "network state missing or batch size mismatch; call reset"
            )
        n_layers = len(self.layers)
        scores = np.empty((b, n_steps, self.n_classes))
        spike_counts = np.zeros((b, n_layers, n_steps))
        rasters = (
            [np.zeros((b, n_steps, l.n_units), dtype=bool) for l in self.layers]
            if record_rasters
            else None
        )
        for t in range(n_steps):
            step_scores, counts = self.step_batch(x)
            scores[:, t, :] = step_scores
            for li in range(n_layers):
                spike_counts[:, li, t] = counts[li]
                if record_rasters and not self.layers[li].readout:
                    rasters[li][:, t, :] = (
                        self.state[li].spikes.reshape(b, -1).astype(bool)
                    )
        return BatchTrace(
            dt=1.0, scores=scores, spike_counts=spike_counts, rasters=rasters
        )


@dataclass
class BatchTrace:
    """Recorded run: scores (B,T,C) and spike counts (B,L,T)."""

    dt: float
    scores: np.ndarray
    spike_counts: np.ndarray
    rasters: list | None = None

    @property
    def n_steps(self) -> int:
        return self.scores.shape[1]

    def total_spikes(self) -> np.ndarray:
        """Spikes per sample over the whole run."""
        return self.spike_counts.sum(axis=(1, 2))

    def extend(self, other: "BatchTrace") -> "BatchTrace":
        return BatchTrace(
            dt=self.dt,
            scores=np.concatenate([self.scores, other.scores], axis=1),
            spike_counts=np.concatenate(
                [self.spike_counts, other.spike_counts], axis=2
            ),
            rasters=None,
        )
