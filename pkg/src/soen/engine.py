"""Phenomenological network integrator.

Every dendrite obeys

    ds_i/dt = gamma_i * g_i(phi_i, s_i; i_b) - s_i / tau_i,   phi = J s + phi_ext,

integrated by explicit forward Euler: the flux for step p -> p+1 is built
from s(t_p) and the drive sampled at t_{p+1}. Second-order dendrites carry an
integrated charge xi (ds/dt gets an extra ``-(omega_LC/omega_c)^2 xi`` term)
and are advanced with symplectic Euler, signal first.

There are no thresholds in this engine. A neuron is represented by a
Neuron-kind source function on its downstream dendrites.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numba
import numpy as np

from . import _kernels as K
from .core import (
    DEFAULT_OMEGA_C,
    DEFAULT_S_CAP,
    CouplingMatrix,
    DendriteKind,
    DendriteSpec,
    FluxDrive,
    NetworkState,
    NonFiniteState,
    SourceFunction,
    ValidationError,
    dimensionless_to_ns,
)

#: dt must stay below min(tau) / DT_LIMIT_FACTOR.
DT_LIMIT_FACTOR = 10.0
#: Default dt is min(tau) / DT_DEFAULT_FACTOR.
DT_DEFAULT_FACTOR = 100.0


def _is_uniform(grid: np.ndarray) -> bool:
    if grid.size < 3:
        return True
    d = np.diff(grid)
    return bool(np.max(np.abs(d - d.mean())) <= 1e-9 * d.mean())


class SourceBank:
    """Source tables flattened for the compiled kernels.

    One bilinear plane is stored per distinct ``(source_id, bias)`` pair,
    blended from the bracketing bias planes once at construction.
    """

    def __init__(self, sources: Mapping[str, SourceFunction], specs: Sequence[DendriteSpec]):
        keys: dict = {}
        tab_idx = np.empty(len(specs), dtype=np.int64)
        for n, spec in enumerate(specs):
            key = (spec.source_id, float(spec.bias))
            if key not in keys:
                keys[key] = len(keys)
            tab_idx[n] = keys[key]
        phi_parts, s_parts, val_parts, uniform = [], [], [], []
        for source_id, bias in keys:
            sf = sources[source_id]
            phi_parts.append(sf.phi_grid)
            s_parts.append(sf.s_grid)
            val_parts.append(np.ascontiguousarray(sf.plane(bias)).ravel())
            uniform += [_is_uniform(sf.phi_grid), _is_uniform(sf.s_grid)]
        self.keys = list(keys)
        self.tab_idx = tab_idx
        self.phi_flat, self.phi_off = _flatten(phi_parts)
        self.s_flat, self.s_off = _flatten(s_parts)
        self.val_flat, self.val_off = _flatten(val_parts)
        self.uniform = np.array(uniform, dtype=np.bool_)

    def arrays(self) -> tuple:
        return (self.tab_idx, self.phi_flat, self.phi_off, self.s_flat, self.s_off,
                self.val_flat, self.val_off, self.uniform)


def _flatten(parts):
    off = np.zeros(len(parts) + 1, dtype=np.int64)
    off[1:] = np.cumsum([p.size for p in parts])
    flat = np.concatenate(parts) if parts else np.zeros(0)
    return np.ascontiguousarray(flat, dtype=np.float64), off


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit value, else ``SOEN_WORKERS``, else 1."""
    if workers is None:
        workers = int(os.environ.get("SOEN_WORKERS", "1") or 1)
    if workers < 1:
        raise ValidationError("worker count must be >= 1", "workers")
    return workers


class Network:
    """Dendrites, static coupling and external drive for the phenomenological engine.

    Parameters
    ----------
    specs : sequence of DendriteSpec
        ``specs[i].id`` must equal ``i``.
    J : CouplingMatrix
    sources : mapping
        ``source_id`` -> SourceFunction.
    drive : FluxDrive, optional
    dt : float, optional
        Defaults to ``min(tau) / 100``; must satisfy ``dt < min(tau) / 10``.
    t_end : float
        Run length in dimensionless time.
    """

    allowed_kinds = (DendriteKind.FIRST_ORDER, DendriteKind.SECOND_ORDER, DendriteKind.REFRACTORY)

    def __init__(self, specs: Sequence[DendriteSpec], J: CouplingMatrix,
                 sources: Mapping[str, SourceFunction], drive: Optional[FluxDrive] = None,
                 dt: Optional[float] = None, t_end: float = 0.0, s_cap: float = DEFAULT_S_CAP):
        self.specs = list(specs)
        self.J = J
        self.sources = dict(sources)
        self.drive = FluxDrive.none() if drive is None else drive
        self.s_cap = float(s_cap)
        self.t_end = float(t_end)
        n = len(self.specs)
        for i, spec in enumerate(self.specs):
            if spec.id != i:
                raise ValidationError(f"dendrite ids must be dense and ordered; found {spec.id} at {i}",
                                      f"dendrites[{i}].id")
            if spec.kind not in self.allowed_kinds:
                raise ValidationError(f"{spec.kind.value} dendrites are not allowed in this engine",
                                      f"dendrites[{i}].kind")
            if spec.source_id not in self.sources:
                raise ValidationError(f"unknown source function {spec.source_id!r}",
                                      f"dendrites[{i}].source_id")
        if J.n != n:
            raise ValidationError(f"coupling size {J.n} != number of dendrites {n}", "couplings")
        if self.drive.n_channels and (self.drive.targets.max() >= n or self.drive.targets.min() < 0):
            raise ValidationError("drive targets a nonexistent dendrite", "drives")
        tau_min = min((s.tau for s in self.specs), default=np.inf)
        if dt is None:
            dt = tau_min / DT_DEFAULT_FACTOR if np.isfinite(tau_min) else 1.0
        dt = float(dt)
        if not (dt >= 0 and np.isfinite(dt)):
            raise ValidationError(f"dt must be finite and >= 0, got {dt}", "dt")
        if dt >= tau_min / DT_LIMIT_FACTOR:
            raise ValidationError(
                f"dt={dt} violates the stability rule dt < min(tau)/{DT_LIMIT_FACTOR:g} = "
                f"{tau_min / DT_LIMIT_FACTOR}", "dt")
        self.dt = dt
        self.bank = SourceBank(self.sources, self.specs)
        self.gamma = np.array([s.gamma for s in self.specs], dtype=np.float64)
        self.tau = np.array([s.tau for s in self.specs], dtype=np.float64)
        self.order2 = np.array([s.kind is DendriteKind.SECOND_ORDER for s in self.specs], dtype=np.bool_)
        self.omega2 = np.array([s.omega_lc_ratio ** 2 if s.kind is DendriteKind.SECOND_ORDER else 0.0
                                for s in self.specs], dtype=np.float64)

    @property
    def n(self) -> int:
        return len(self.specs)

    @property
    def second_order(self) -> bool:
        return bool(self.order2.any())

    @property
    def n_steps(self) -> int:
        if self.dt == 0.0:
            return 0
        return int(round(self.t_end / self.dt))

    def initial_state(self) -> NetworkState:
        st = NetworkState.zeros(self.n, self.second_order)
        st.s_cap = self.s_cap
        return st

    def kernel_args(self) -> tuple:
        """Coupling, per-dendrite parameters and source bank in kernel order."""
        return (self.J.indptr, self.J.indices, self.J.data, self.gamma, self.tau, self.omega2,
                self.order2) + self.bank.arrays()

    def drive_args(self) -> tuple:
        d = self.drive
        return (np.ascontiguousarray(d.times), np.ascontiguousarray(d.values),
                np.ascontiguousarray(d.targets), d.mode == "linear")


def compute_flux(net: Network, s, t: float) -> np.ndarray:
    """Flux vector ``J s + phi_ext(t)``."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (net.n,):
        raise ValueError(f"state length {s.shape} != {net.n}")
    return net.J.dot(s) + net.drive.full(net.n, t)


@dataclass
class TraceConfig:
    """Which dendrites to record (``None`` = all) and how often."""

    ids: Optional[Sequence[int]] = None
    stride: int = 1

    def resolve(self, n: int) -> np.ndarray:
        if self.stride < 1:
            raise ValidationError("trace stride must be >= 1", "trace.stride")
        ids = np.arange(n) if self.ids is None else np.array(self.ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ValidationError("trace id out of range", "trace.ids")
        return ids


@dataclass
class TraceBuffer:
    """Recorded signal and flux columns.

    Row ``r`` holds the state after step ``r * stride``; row 0 is the
    initial state, whose flux is ``J s0 + phi_ext(t0)``. For later rows the
    flux column is the flux used to produce that row's signal.
    """

    ids: np.ndarray
    stride: int
    t: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    dt: float
    final_state: Optional[NetworkState] = None
    clamp_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not (self.s.shape == self.phi.shape == (self.t.size, self.ids.size)):
            raise ValueError("trace columns must have equal lengths")

    def _col(self, dendrite_id: int) -> int:
        hits = np.flatnonzero(self.ids == dendrite_id)
        if hits.size == 0:
            raise KeyError(f"dendrite {dendrite_id} was not recorded")
        return int(hits[0])

    def signal(self, dendrite_id: int) -> np.ndarray:
        return self.s[:, self._col(dendrite_id)]

    def flux(self, dendrite_id: int) -> np.ndarray:
        return self.phi[:, self._col(dendrite_id)]

    def to_csv(self, path, omega_c: float = DEFAULT_OMEGA_C) -> None:
        header = ["t", "t_ns"] + [f"s_{i}" for i in self.ids] + [f"phi_{i}" for i in self.ids]
        t_ns = dimensionless_to_ns(self.t, omega_c)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in range(self.t.size):
                w.writerow([repr(float(self.t[r])), repr(float(t_ns[r]))]
                           + [repr(float(v)) for v in self.s[r]]
                           + [repr(float(v)) for v in self.phi[r]])


def _raise_kernel_error(err: int, t: float) -> None:
    if err == K.ERR_NONFINITE:
        raise NonFiniteState("non-finite signal; dt is too large for the stiffest dendrite", t)
    if err == K.ERR_CAP:
        raise NonFiniteState("signal exceeded the saturation guard", t)


def _prepare(net: Network, state: Optional[NetworkState]):
    st = net.initial_state() if state is None else state.copy()
    if st.s.shape != (net.n,):
        raise ValueError(f"state length {st.s.size} != {net.n}")
    st.check()
    aux = np.zeros(net.n) if st.aux is None else st.aux.copy()
    return st, np.ascontiguousarray(st.s.copy()), aux


def run(net: Network, s0: Optional[NetworkState] = None, trace: Optional[TraceConfig] = None,
        workers: Optional[int] = None, n_steps: Optional[int] = None) -> TraceBuffer:
    """Integrate ``net`` from ``s0`` (zeros by default) for ``net.t_end``.

    The result is bit-identical for any worker count.
    """
    trace = TraceConfig() if trace is None else trace
    ids = trace.resolve(net.n)
    stride = int(trace.stride)
    steps = net.n_steps if n_steps is None else int(n_steps)
    if steps < 0:
        raise ValidationError("number of steps must be >= 0", "t_end")
    st, s, aux = _prepare(net, s0)
    n_rec = steps // stride + 1
    rec_t = np.zeros(n_rec)
    rec_s = np.zeros((n_rec, ids.size))
    rec_phi = np.zeros((n_rec, ids.size))
    rec_t[0] = st.t
    rec_s[0] = s[ids]
    rec_phi[0] = compute_flux(net, s, st.t)[ids]
    clamps = np.zeros(net.n, dtype=np.int64)
    nw = resolve_workers(workers)
    if nw > 1:
        numba.set_num_threads(min(nw, numba.config.NUMBA_NUM_THREADS))
    done, err, r = K.run_network(s, aux, float(st.t), steps, stride, ids, rec_s, rec_phi, rec_t,
                                 *net.drive_args(), *net.kernel_args(), net.dt, st.s_cap, clamps, nw > 1)
    if err != K.ERR_NONE:
        _raise_kernel_error(err, st.t + (done + 1) * net.dt)
    final = NetworkState(t=st.t + steps * net.dt, s=s, aux=aux if st.aux is not None else None,
                         step_index=st.step_index + steps, s_cap=st.s_cap)
    return TraceBuffer(ids=ids, stride=stride, t=rec_t, s=rec_s, phi=rec_phi, dt=net.dt,
                       final_state=final, clamp_count=int(clamps.sum()))


def step(net: Network, state: NetworkState) -> NetworkState:
    """Advance one forward-Euler step of length ``net.dt``."""
    tb = run(net, state, TraceConfig(ids=[], stride=1), workers=1, n_steps=1)
    return tb.final_state
