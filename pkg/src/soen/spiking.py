"""Reference spiking model: dendrites plus somas with threshold and reset.

Dendrites (somas and refractory dendrites included) are advanced exactly as
in :mod:`soen.engine`. After each update a soma whose signal has reached
its threshold is evacuated (s <- 0), kicks its refractory dendrite by a
fixed impulse, and emits a spike that reaches its synapses after the
transmitter latency. The refractory dendrite couples back into the soma
with an inhibitory weight ``j_ref``. Each delivered spike adds an
exponentially decaying flux ``amplitude * exp(-(t - t_d)/tau)`` to the
synapse's target dendrite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels as K
from .core import (
    DEFAULT_OMEGA_C,
    DEFAULT_S_CAP,
    CouplingMatrix,
    DendriteKind,
    DendriteSpec,
    FluxDrive,
    InvariantViolation,
    NetworkState,
    SourceFunction,
    ValidationError,
    dimensionless_to_ns,
)
from .engine import Network, TraceBuffer, TraceConfig, _raise_kernel_error, compute_flux

DEFAULT_J_REF = -0.35
DEFAULT_REFRACTORY_IMPULSE = 1.0
DEFAULT_T_TX_NS = 5.0
DEFAULT_SYN_AMPLITUDE = 0.25
DEFAULT_SYN_TAU_NS = 50.0
DEFAULT_S_THRESHOLD = 0.2

_CHUNK = 20000
_MAX_EVENTS = 2_000_000


@dataclass(frozen=True)
class SomaSpec:
    """Threshold, refractory link and transmitter of one soma.

    ``soma_id`` must name a SOMA dendrite (which carries ``s_threshold``);
    ``refractory_id`` a REFRACTORY dendrite. Times are dimensionless.
    """

    soma_id: int
    refractory_id: int
    t_tx: float = DEFAULT_T_TX_NS * DEFAULT_OMEGA_C
    j_ref: float = DEFAULT_J_REF
    refractory_impulse: float = DEFAULT_REFRACTORY_IMPULSE

    def __post_init__(self):
        if not self.j_ref < 0:
            raise InvariantViolation(f"soma {self.soma_id}: j_ref must be < 0")
        if not (self.t_tx >= 0 and math.isfinite(self.t_tx)):
            raise InvariantViolation(f"soma {self.soma_id}: t_tx must be >= 0")
        if not (self.refractory_impulse > 0 and math.isfinite(self.refractory_impulse)):
            raise InvariantViolation(f"soma {self.soma_id}: refractory impulse must be > 0")


@dataclass(frozen=True)
class SynapseSpec:
    """Synapse from soma ``source`` (a dendrite id) onto dendrite ``target``."""

    source: int
    target: int
    amplitude: float = DEFAULT_SYN_AMPLITUDE
    tau: float = DEFAULT_SYN_TAU_NS * DEFAULT_OMEGA_C

    def __post_init__(self):
        if not (0 < self.amplitude <= 0.5):
            raise InvariantViolation(f"synapse amplitude must be in (0, 0.5], got {self.amplitude}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvariantViolation("synapse tau must be > 0")


@dataclass
class SpikeRecord:
    """Spike times (dimensionless, latency included) of one soma."""

    soma_id: int
    times: np.ndarray
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise InvariantViolation(f"soma {self.soma_id}: spike times must be strictly increasing")

    @property
    def count(self) -> int:
        return int(self.times.size)

    def intervals(self) -> np.ndarray:
        return np.diff(self.times)


class SpikingNetwork(Network):
    """A :class:`~soen.engine.Network` that may contain somas.

    The refractory couplings ``(soma, refractory, j_ref)`` are added to ``J``;
    an explicit entry at the same position is rejected as a duplicate.
    """

    allowed_kinds = tuple(DendriteKind)

    def __init__(self, specs: Sequence[DendriteSpec], J: CouplingMatrix,
                 sources: Mapping[str, SourceFunction], somas: Sequence[SomaSpec] = (),
                 synapses: Sequence[SynapseSpec] = (), drive: Optional[FluxDrive] = None,
                 dt: Optional[float] = None, t_end: float = 0.0, s_cap: float = DEFAULT_S_CAP):
        self.somas = list(somas)
        self.synapses = list(synapses)
        n = len(specs)
        seen = set()
        for k, soma in enumerate(self.somas):
            where = f"somas[{k}]"
            for attr, kind in (("soma_id", DendriteKind.SOMA), ("refractory_id", DendriteKind.REFRACTORY)):
                idx = getattr(soma, attr)
                if not 0 <= idx < n or specs[idx].kind is not kind:
                    raise ValidationError(f"{attr}={idx} is not a {kind.value} dendrite", f"{where}.{attr}")
            if soma.soma_id in seen:
                raise ValidationError(f"soma {soma.soma_id} declared twice", where)
            seen.add(soma.soma_id)
            th = specs[soma.soma_id].s_threshold
            if not (0 < th < 1 or th == math.inf):
                raise ValidationError(f"threshold must be in (0, 1), got {th}", f"{where}.s_threshold")
        for spec in specs:
            if spec.kind is DendriteKind.SOMA and spec.id not in seen:
                raise ValidationError(f"soma dendrite {spec.id} has no SomaSpec", "somas")
        soma_index = {s.soma_id: k for k, s in enumerate(self.somas)}
        for q, syn in enumerate(self.synapses):
            if syn.source not in soma_index:
                raise ValidationError(f"source {syn.source} is not a soma", f"synapses[{q}].source")
            if not 0 <= syn.target < n:
                raise ValidationError(f"target {syn.target} out of range", f"synapses[{q}].target")
        J_full = J.with_entries([(s.soma_id, s.refractory_id, s.j_ref) for s in self.somas])
        super().__init__(specs, J_full, sources, drive=drive, dt=dt, t_end=t_end, s_cap=s_cap)
        self.J_input = J
        self.soma_ids = np.array([s.soma_id for s in self.somas], dtype=np.int64)
        self.soma_th = np.array([self.specs[s.soma_id].s_threshold for s in self.somas], dtype=np.float64)
        self.soma_ref = np.array([s.refractory_id for s in self.somas], dtype=np.int64)
        self.soma_impulse = np.array([s.refractory_impulse for s in self.somas], dtype=np.float64)
        self.soma_tx = np.array([s.t_tx for s in self.somas], dtype=np.float64)
        self.syn_src = np.array([soma_index[s.source] for s in self.synapses], dtype=np.int64)
        self.syn_tgt = np.array([s.target for s in self.synapses], dtype=np.int64)
        self.syn_amp = np.array([s.amplitude for s in self.synapses], dtype=np.float64)
        self.syn_tau = np.array([s.tau for s in self.synapses], dtype=np.float64)
        self.syn_decay = np.exp(-self.dt / self.syn_tau)


@dataclass
class SpikingState:
    """Network state plus synaptic flux and undelivered spikes.

    ``pending[k]`` holds the (global) firing steps of soma ``k`` whose
    spikes have not reached the synapses yet.
    """

    network: NetworkState
    syn_val: np.ndarray
    pending: list

    @classmethod
    def fresh(cls, net: SpikingNetwork, network: Optional[NetworkState] = None) -> "SpikingState":
        if network is None:
            network = NetworkState.zeros(net.n, net.second_order)
            network.s_cap = net.s_cap
        return cls(network, np.zeros(len(net.synapses)),
                   [np.zeros(0, dtype=np.int64) for _ in net.somas])

    def copy(self) -> "SpikingState":
        return SpikingState(self.network.copy(), self.syn_val.copy(), [p.copy() for p in self.pending])

    @property
    def t(self) -> float:
        return self.network.t

    @property
    def s(self) -> np.ndarray:
        return self.network.s


def _coerce_state(net: SpikingNetwork, state) -> SpikingState:
    if state is None:
        return SpikingState.fresh(net)
    if isinstance(state, NetworkState):
        return SpikingState.fresh(net, state.copy())
    return state.copy()


def _simulate(net: SpikingNetwork, state, n_steps: int, ids: np.ndarray, stride: int):
    st = _coerce_state(net, state)
    ns = st.network
    if ns.s.shape != (net.n,):
        raise ValueError(f"state length {ns.s.size} != {net.n}")
    ns.check()
    s = np.ascontiguousarray(ns.s.copy())
    aux = np.zeros(net.n) if ns.aux is None else ns.aux.copy()
    syn_val = st.syn_val.copy()
    n_soma = len(net.somas)
    p_origin = int(ns.step_index)
    n_rec = n_steps // stride + 1
    rec_t = np.zeros(n_rec)
    rec_s = np.zeros((n_rec, ids.size))
    rec_phi = np.zeros((n_rec, ids.size))
    rec_t[0] = ns.t
    rec_s[0] = s[ids]
    phi0 = compute_flux(net, s, ns.t)
    if net.synapses:
        np.add.at(phi0, net.syn_tgt, syn_val)
    rec_phi[0] = phi0[ids]
    clamps = np.zeros(net.n, dtype=np.int64)
    drv = net.drive_args()
    kargs = net.kernel_args()
    pending = [np.asarray(p, dtype=np.int64) for p in st.pending]
    chunk = max(1, min(_CHUNK, _MAX_EVENTS // max(n_soma, 1)))
    all_soma, all_step = [], []
    k_drv = 0
    r = 1
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        n_pend = max((p.size for p in pending), default=0)
        cap = n_pend + m
        fire_steps = np.zeros((n_soma, cap), dtype=np.int64)
        fire_count = np.zeros(n_soma, dtype=np.int64)
        for k, p in enumerate(pending):
            fire_steps[k, :p.size] = p
            fire_count[k] = p.size
        fire_next = np.zeros(n_soma, dtype=np.int64)
        out_soma = np.zeros(max(n_soma * m, 1), dtype=np.int64)
        out_step = np.zeros(max(n_soma * m, 1), dtype=np.int64)
        steps, err, r, k_drv, n_out = K.run_spiking(
            s, aux, float(ns.t), p_origin, p_origin + done, m, stride, ids, rec_s, rec_phi, rec_t, r,
            *drv, k_drv, *kargs, net.dt, ns.s_cap, clamps,
            net.soma_ids, net.soma_th, net.soma_ref, net.soma_impulse, net.soma_tx,
            net.syn_src, net.syn_tgt, net.syn_amp, net.syn_decay, net.syn_tau, syn_val,
            fire_steps, fire_count, fire_next, out_soma, out_step, 0)
        all_soma.append(out_soma[:n_out].copy())
        all_step.append(out_step[:n_out].copy())
        if err != K.ERR_NONE:
            _raise_kernel_error(err, ns.t + (done + steps + 1) * net.dt)
            raise RuntimeError("spike queue overflow")
        pending = [fire_steps[k, fire_next[k]:fire_count[k]].copy() for k in range(n_soma)]
        done += m
    ev_soma = np.concatenate(all_soma) if all_soma else np.zeros(0, dtype=np.int64)
    ev_step = np.concatenate(all_step) if all_step else np.zeros(0, dtype=np.int64)
    final_net = NetworkState(t=ns.t + n_steps * net.dt, s=s,
                             aux=aux if ns.aux is not None else None,
                             step_index=p_origin + n_steps, s_cap=ns.s_cap)
    final = SpikingState(final_net, syn_val, pending)
    trace = TraceBuffer(ids=ids, stride=stride, t=rec_t, s=rec_s, phi=rec_phi, dt=net.dt,
                        final_state=final_net, clamp_count=int(clamps.sum()))
    return final, trace, ev_soma, ev_step


def _spike_time(net: SpikingNetwork, t0: float, p_origin: int, k: int, step):
    return t0 + (np.asarray(step) - p_origin) * net.dt + net.soma_tx[k]


def spiking_step(net: SpikingNetwork, state=None):
    """Advance one step; returns ``(new_state, spikes)``.

    ``spikes`` is a list of ``(soma_id, t_spike)`` in soma-id order, where
    ``t_spike`` includes the transmitter latency.
    """
    st = _coerce_state(net, state)
    final, _, ev_soma, ev_step = _simulate(net, st, 1, np.zeros(0, dtype=np.int64), 1)
    t0, p0 = st.network.t, st.network.step_index
    spikes = sorted((int(net.soma_ids[k]), float(_spike_time(net, t0, p0, k, p)))
                    for k, p in zip(ev_soma, ev_step))
    return final, spikes


def run_spiking(net: SpikingNetwork, s0=None, trace: Optional[TraceConfig] = None):
    """Integrate ``net`` for ``net.t_end``; returns ``(trace, spikes)``.

    ``spikes`` maps each soma id to its :class:`SpikeRecord`.
    """
    trace = TraceConfig() if trace is None else trace
    ids = trace.resolve(net.n)
    st = _coerce_state(net, s0)
    t0, p0 = st.network.t, st.network.step_index
    final, tb, ev_soma, ev_step = _simulate(net, st, net.n_steps, ids, int(trace.stride))
    tb.meta["spiking_state"] = final
    spikes = {}
    for k, soma in enumerate(net.somas):
        steps = ev_step[ev_soma == k]
        spikes[soma.soma_id] = SpikeRecord(soma.soma_id, _spike_time(net, t0, p0, k, steps), steps)
    return tb, spikes


def write_spikes_csv(spikes: Mapping[int, SpikeRecord], path, omega_c: float = DEFAULT_OMEGA_C) -> None:
    rows = []
    for sid in sorted(spikes):
        for t in spikes[sid].times:
            rows.append((sid, float(t)))
    rows.sort(key=lambda r: (r[1], r[0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["soma_id", "t_spike_dimensionless", "t_spike_ns"])
        for sid, t in rows:
            w.writerow([sid, repr(t), repr(float(dimensionless_to_ns(t, omega_c)))])
