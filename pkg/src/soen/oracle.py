"""Source-function generation from first principles.

Dendrite tables come from the symmetric two-junction dc SQUID in the RCSJ
model. Each junction obeys

    beta_C phi_k'' + phi_k' + sin(phi_k) = i_k,

with ``i_1 = i_sq/2 + j`` and ``i_2 = i_sq/2 - j``. The circulating current
follows from flux quantization, ``j = (2/beta_L) ((phi_2 - phi_1)/2pi - phi_a)``.
The SQUID is biased with ``i_b`` and loaded by the dendrite's integration
loop (an L/r branch). Current carried by the loop is diverted from the
SQUID, so ``i_sq = i_b - s`` and

    beta ds/dt = v - alpha s,      v = (phi_1' + phi_2') / 2.

The rate g(phi, s; i_b) is the time-averaged SQUID voltage with the loop
current pinned at s, which equals 2 pi times the phase-slip rate.

Neuron tables are built by driving a soma of the spiking model at constant
flux and averaging the downstream dendrite's rate over its synaptic flux.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from .core import (
    NonFiniteState,
    SoenError,
    SourceFunction,
    SourceKind,
    FluxDrive,
    ValidationError,
)

TWO_PI = 2.0 * math.pi

MEAS_OK = 0
MEAS_BELOW_FLOOR = 1
MEAS_NO_STEADY = 2
MEAS_NONFINITE = 3


class NoSteadyState(SoenError, RuntimeError):
    """A rate measurement did not settle within its budget."""


@dataclass(frozen=True)
class SquidCircuitParams:
    """Dimensionless SQUID and loop parameters.

    Parameters
    ----------
    beta_L : float
        SQUID loop inductance parameter 2 L I_c / Phi_0.
    beta_C : float
        Stewart-McCumber parameter of each junction (0 means overdamped).
    bias : float
        Total SQUID bias i_b in units of the single-junction I_c.
    applied_flux : float
        phi_a in units of Phi_0.
    s : float
        Integration-loop current; pinned during rate measurements and used
        as the initial value when the loop is dynamic.
    dt_jj : float
        RK4 step.
    loop_beta, loop_tau : float, optional
        Integration-loop inductance and decay time. Both ``None`` pins s.
    """

    beta_L: float = 1.0
    beta_C: float = 0.3
    bias: float = 1.7
    applied_flux: float = 0.0
    s: float = 0.0
    dt_jj: float = 0.01
    loop_beta: Optional[float] = None
    loop_tau: Optional[float] = None

    def __post_init__(self):
        if not self.dt_jj > 0:
            raise ValidationError("dt_jj must be > 0", "dt_jj")
        if not self.beta_C >= 0:
            raise ValidationError("beta_C must be >= 0", "beta_C")
        if not self.bias > 0:
            raise ValidationError("bias must be > 0", "bias")
        if not self.beta_L > 0:
            raise ValidationError("beta_L must be > 0", "beta_L")
        if (self.loop_beta is None) != (self.loop_tau is None):
            raise ValidationError("loop_beta and loop_tau must be given together", "loop_beta")
        for name in ("beta_L", "beta_C", "bias", "applied_flux", "s", "dt_jj"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError("must be finite", name)

    @property
    def dynamic_loop(self) -> bool:
        return self.loop_beta is not None


@dataclass(frozen=True)
class MeasurementBudget:
    """Adaptive window for :func:`measure_rate`.

    The first ``transient_fraction`` of each window is discarded. The window
    doubles from ``window`` up to ``max_window`` until at least ``min_slips``
    slip intervals are seen and the rates of the two halves agree to
    ``drift_tol``.
    """

    window: float = 200.0
    max_window: float = 20000.0
    min_slips: int = 8
    drift_tol: float = 0.01
    transient_fraction: float = 0.2
    static_velocity: float = 1e-8

    @property
    def floor(self) -> float:
        """Smallest rate resolvable within the budget."""
        return TWO_PI * self.min_slips / ((1.0 - self.transient_fraction) * self.max_window)


@dataclass
class RateMeasurement:
    phi: float
    s: float
    bias: float
    g_measured: float
    n_slips: int = 0
    window: float = 0.0
    wall_time: float = 0.0
    status: int = MEAS_OK


# ---------------------------------------------------------------------------
# compiled circuit integration
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _deriv(p1, v1, p2, v2, i_sq, phia, bl, bc):
    j = (2.0 / bl) * ((p2 - p1) / TWO_PI - phia)
    i1 = 0.5 * i_sq + j
    i2 = 0.5 * i_sq - j
    if bc > 0.0:
        return v1, (i1 - v1 - math.sin(p1)) / bc, v2, (i2 - v2 - math.sin(p2)) / bc
    # overdamped junctions: velocities follow the currents instantly
    return i1 - math.sin(p1), 0.0, i2 - math.sin(p2), 0.0


@njit(cache=True, inline="always")
def _velocities(p1, v1, p2, v2, i_sq, phia, bl, bc):
    if bc > 0.0:
        return v1, v2
    d1, _, d2, _ = _deriv(p1, v1, p2, v2, i_sq, phia, bl, bc)
    return d1, d2


@njit(cache=True, inline="always")
def _rk4_pinned(p1, v1, p2, v2, i_sq, phia, bl, bc, dt):
    a1, a2, a3, a4 = _deriv(p1, v1, p2, v2, i_sq, phia, bl, bc)
    h = 0.5 * dt
    b1, b2, b3, b4 = _deriv(p1 + h * a1, v1 + h * a2, p2 + h * a3, v2 + h * a4, i_sq, phia, bl, bc)
    c1, c2, c3, c4 = _deriv(p1 + h * b1, v1 + h * b2, p2 + h * b3, v2 + h * b4, i_sq, phia, bl, bc)
    d1, d2, d3, d4 = _deriv(p1 + dt * c1, v1 + dt * c2, p2 + dt * c3, v2 + dt * c4, i_sq, phia, bl, bc)
    w = dt / 6.0
    return (p1 + w * (a1 + 2.0 * b1 + 2.0 * c1 + d1),
            v1 + w * (a2 + 2.0 * b2 + 2.0 * c2 + d2),
            p2 + w * (a3 + 2.0 * b3 + 2.0 * c3 + d3),
            v2 + w * (a4 + 2.0 * b4 + 2.0 * c4 + d4))


@njit(cache=True)
def _rate_from_crossings(cross, lo, hi):
    """Rate 2 pi (n-1)/(t_last - t_first) over crossings ``cross[lo:hi]``."""
    return TWO_PI * (hi - lo - 1) / (cross[hi - 1] - cross[lo])


@njit(cache=True)
def measure_kernel(i_b, s, phia, bl, bc, dt, window, max_window, min_slips, drift_tol,
                   transient, static_v):
    """Phase-slip rate of the SQUID at fixed current ``i_b - s``.

    Returns ``(rate, status, n_slips, window_used)``.
    """
    i_sq = i_b - s
    p1 = 0.0
    v1 = 0.0
    p2 = TWO_PI * phia
    v2 = 0.0
    theta = 0.5 * (p1 + p2)
    level = theta + TWO_PI
    cap = 1 << 16
    cross = np.empty(cap)
    nc = 0
    t = 0.0
    k = 0
    W = window
    seg_start = transient * W
    seg_theta = 0.0
    seg_set = False
    vmax = 0.0
    while True:
        n_target = int(math.ceil(W / dt))
        while k < n_target:
            p1, v1, p2, v2 = _rk4_pinned(p1, v1, p2, v2, i_sq, phia, bl, bc, dt)
            k += 1
            t = k * dt
            th_new = 0.5 * (p1 + p2)
            while th_new >= level:
                if nc < cap:
                    # linear interpolation of the crossing time inside the step
                    cross[nc] = t - dt * (th_new - level) / (th_new - theta)
                    nc += 1
                level += TWO_PI
            theta = th_new
            if t >= seg_start:
                if not seg_set:
                    seg_theta = theta
                    seg_set = True
                u1, u2 = _velocities(p1, v1, p2, v2, i_sq, phia, bl, bc)
                va = max(abs(u1), abs(u2))
                if va > vmax:
                    vmax = va
        if not (math.isfinite(p1) and math.isfinite(p2) and math.isfinite(v1) and math.isfinite(v2)):
            return 0.0, MEAS_NONFINITE, 0, W
        t_cut = transient * W
        lo = 0
        while lo < nc and cross[lo] < t_cut:
            lo += 1
        n = nc - lo
        if n == 0 and vmax < static_v:
            return 0.0, MEAS_OK, 0, W
        if n >= min_slips + 1:
            rate = _rate_from_crossings(cross, lo, nc)
            mid = lo + n // 2
            r1 = _rate_from_crossings(cross, lo, mid + 1)
            r2 = _rate_from_crossings(cross, mid, nc)
            if abs(r1 - r2) <= drift_tol * rate:
                return rate, MEAS_OK, n - 1, W
        if W >= max_window or nc >= cap:
            floor = TWO_PI * min_slips / ((1.0 - transient) * max_window)
            if n >= 2:
                rate = _rate_from_crossings(cross, lo, nc)
            elif n == 1:
                rate = max((theta - seg_theta) / (t - seg_start), 0.0)
            else:
                rate = 0.0
            if rate <= floor:
                return rate, MEAS_BELOW_FLOOR, max(n - 1, 0), W
            return rate, MEAS_NO_STEADY, max(n - 1, 0), W
        # next window: the new segment [W, 2W] lies inside the kept 80%
        seg_start = W
        seg_set = False
        vmax = 0.0
        W = 2.0 * W


@njit(cache=True, parallel=True)
def _measure_grid(biases, phis, ss, bl, bc, dt, window, max_window, min_slips, drift_tol,
                  transient, static_v, rates, status):
    nb, nphi, ns = rates.shape
    total = nb * nphi * ns
    for idx in prange(total):
        b = idx // (nphi * ns)
        rem = idx - b * nphi * ns
        p = rem // ns
        q = rem - p * ns
        r, st, _, _ = measure_kernel(biases[b], ss[q], phis[p], bl, bc, dt, window, max_window,
                                     min_slips, drift_tol, transient, static_v)
        rates[b, p, q] = r
        status[b, p, q] = st


@njit(cache=True, inline="always")
def _drive_at(t, times, values, linear):
    m = times.size
    if m == 1 or t <= times[0]:
        return values[0]
    if t >= times[m - 1]:
        return values[m - 1]
    a = 0
    b = m - 1
    while b - a > 1:
        c = (a + b) >> 1
        if times[c] <= t:
            a = c
        else:
            b = c
    if not linear:
        return values[a]
    f = (t - times[a]) / (times[a + 1] - times[a])
    return values[a] + f * (values[a + 1] - values[a])


@njit(cache=True, inline="always")
def _deriv_loop(p1, v1, p2, v2, s, i_b, phia, bl, bc, lb, alpha, dynamic):
    d1, d2, d3, d4 = _deriv(p1, v1, p2, v2, i_b - s, phia, bl, bc)
    if not dynamic:
        return d1, d2, d3, d4, 0.0
    u1, u2 = _velocities(p1, v1, p2, v2, i_b - s, phia, bl, bc)
    return d1, d2, d3, d4, (0.5 * (u1 + u2) - alpha * s) / lb


@njit(cache=True)
def integrate_kernel(p1, v1, p2, v2, s, i_b, bl, bc, dt, n_steps, stride, lb, alpha, dynamic,
                     drv_times, drv_values, drv_linear, out):
    """RK4 integration of the SQUID (and loop); records every ``stride`` steps.

    ``out[r]`` = (t, phi_1, phi_2, v, j, s, phi_a). Returns the number of
    rows written, or ``-1 - r`` if the state became non-finite.
    """
    h = 0.5 * dt
    w = dt / 6.0
    r = 0
    for k in range(n_steps + 1):
        t = k * dt
        if k % stride == 0:
            pa = _drive_at(t, drv_times, drv_values, drv_linear)
            u1, u2 = _velocities(p1, v1, p2, v2, i_b - s, pa, bl, bc)
            out[r, 0] = t
            out[r, 1] = p1
            out[r, 2] = p2
            out[r, 3] = 0.5 * (u1 + u2)
            out[r, 4] = (2.0 / bl) * ((p2 - p1) / TWO_PI - pa)
            out[r, 5] = s
            out[r, 6] = pa
            if not (math.isfinite(p1) and math.isfinite(p2) and math.isfinite(s)):
                return -1 - r
            r += 1
        if k == n_steps:
            break
        pa0 = _drive_at(t, drv_times, drv_values, drv_linear)
        pah = _drive_at(t + h, drv_times, drv_values, drv_linear)
        pa1 = _drive_at(t + dt, drv_times, drv_values, drv_linear)
        a1, a2, a3, a4, a5 = _deriv_loop(p1, v1, p2, v2, s, i_b, pa0, bl, bc, lb, alpha, dynamic)
        b1, b2, b3, b4, b5 = _deriv_loop(p1 + h * a1, v1 + h * a2, p2 + h * a3, v2 + h * a4,
                                         s + h * a5, i_b, pah, bl, bc, lb, alpha, dynamic)
        c1, c2, c3, c4, c5 = _deriv_loop(p1 + h * b1, v1 + h * b2, p2 + h * b3, v2 + h * b4,
                                         s + h * b5, i_b, pah, bl, bc, lb, alpha, dynamic)
        d1, d2, d3, d4, d5 = _deriv_loop(p1 + dt * c1, v1 + dt * c2, p2 + dt * c3, v2 + dt * c4,
                                         s + dt * c5, i_b, pa1, bl, bc, lb, alpha, dynamic)
        p1 += w * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        v1 += w * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        p2 += w * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
        v2 += w * (a4 + 2.0 * b4 + 2.0 * c4 + d4)
        s += w * (a5 + 2.0 * b5 + 2.0 * c5 + d5)
    return r


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


@dataclass
class SquidTrajectory:
    """Recorded circuit trajectory.

    ``v`` is the SQUID voltage (phi_1' + phi_2')/2, ``j`` the circulating
    current and ``s`` the integration-loop current.
    """

    t: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    v: np.ndarray
    j: np.ndarray
    s: np.ndarray
    applied_flux: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return 0.5 * (self.phi1 + self.phi2)

    def slip_count(self) -> int:
        """Whole 2 pi advances of the mean phase over the trajectory."""
        return int(math.floor((self.theta[-1] - self.theta[0]) / TWO_PI))


def integrate_squid(params: SquidCircuitParams, duration: float, stride: int = 1,
                    drive: Optional[FluxDrive] = None) -> SquidTrajectory:
    """RK4 integration of the SQUID circuit for ``duration`` (dimensionless).

    ``drive`` (single channel) overrides the static ``applied_flux``. With
    ``loop_beta``/``loop_tau`` set the loop current evolves; otherwise it is
    held at ``params.s``.
    """
    if duration < 0:
        raise ValidationError("duration must be >= 0", "duration")
    if stride < 1:
        raise ValidationError("stride must be >= 1", "stride")
    if drive is None:
        times = np.array([0.0])
        values = np.array([float(params.applied_flux)])
        linear = False
    else:
        if drive.n_channels != 1:
            raise ValidationError("circuit drive must have exactly one channel", "drive")
        times = np.ascontiguousarray(drive.times)
        values = np.ascontiguousarray(drive.values[:, 0])
        linear = drive.mode == "linear"
    n_steps = int(round(duration / params.dt_jj))
    out = np.empty((n_steps // stride + 1, 7))
    dynamic = params.dynamic_loop
    lb = float(params.loop_beta) if dynamic else 1.0
    alpha = lb / float(params.loop_tau) if dynamic else 0.0
    phia0 = float(values[0])
    r = integrate_kernel(0.0, 0.0, TWO_PI * phia0, 0.0, float(params.s), float(params.bias),
                         float(params.beta_L), float(params.beta_C), float(params.dt_jj), n_steps,
                         stride, lb, alpha, dynamic, times, values, linear, out)
    if r < 0:
        raise NonFiniteState("circuit integration diverged; reduce dt_jj", float(out[-1 - r, 0]))
    out = out[:r]
    return SquidTrajectory(*(out[:, c].copy() for c in range(7)))


def measure_rate(params: SquidCircuitParams,
                 budget: MeasurementBudget = MeasurementBudget()) -> RateMeasurement:
    """Steady-state rate g at ``(applied_flux, s, bias)`` with the loop current pinned."""
    t0 = time.perf_counter()
    rate, status, n, window = measure_kernel(
        float(params.bias), float(params.s), float(params.applied_flux), float(params.beta_L),
        float(params.beta_C), float(params.dt_jj), budget.window, budget.max_window,
        budget.min_slips, budget.drift_tol, budget.transient_fraction, budget.static_velocity)
    _check_status(status, params.applied_flux, params.s, params.bias)
    return RateMeasurement(phi=float(params.applied_flux), s=float(params.s), bias=float(params.bias),
                           g_measured=float(rate), n_slips=int(n), window=float(window),
                           wall_time=time.perf_counter() - t0, status=int(status))


def _check_status(status, phi, s, bias):
    if status == MEAS_NO_STEADY:
        raise NoSteadyState(f"slip rate did not settle at phi={phi}, s={s}, bias={bias}")
    if status == MEAS_NONFINITE:
        raise NonFiniteState(f"circuit diverged at phi={phi}, s={s}, bias={bias}; reduce dt_jj")


def default_phi_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 0.5, n)


def default_s_grid(n: int = 101, s_max: float = 1.0) -> np.ndarray:
    return np.linspace(0.0, s_max, n)


def generate_dendrite_source(phi_grid: Sequence[float], s_grid: Sequence[float],
                             bias_grid: Sequence[float],
                             circuit: SquidCircuitParams = SquidCircuitParams(),
                             budget: MeasurementBudget = MeasurementBudget()) -> SourceFunction:
    """Tabulate g_d by one rate measurement per ``(bias, phi, s)`` node.

    Nodes are measured in parallel; the table does not depend on scheduling.
    """
    phis = np.array(phi_grid, dtype=np.float64)
    ss = np.array(s_grid, dtype=np.float64)
    biases = np.array(bias_grid, dtype=np.float64)
    rates = np.zeros((biases.size, phis.size, ss.size))
    status = np.zeros(rates.shape, dtype=np.int64)
    _measure_grid(biases, phis, ss, float(circuit.beta_L), float(circuit.beta_C),
                  float(circuit.dt_jj), budget.window, budget.max_window, budget.min_slips,
                  budget.drift_tol, budget.transient_fraction, budget.static_velocity,
                  rates, status)
    bad = np.argwhere(status >= MEAS_NO_STEADY)
    if bad.size:
        b, p, q = bad[0]
        _check_status(int(status[b, p, q]), phis[p], ss[q], biases[b])
    meta = {
        "source": "rcsj-dc-squid",
        "beta_L": repr(float(circuit.beta_L)),
        "beta_C": repr(float(circuit.beta_C)),
        "dt_jj": repr(float(circuit.dt_jj)),
        "window": repr(budget.window),
        "max_window": repr(budget.max_window),
        "min_slips": str(budget.min_slips),
        "drift_tol": repr(budget.drift_tol),
        "below_floor_nodes": str(int(np.count_nonzero(status == MEAS_BELOW_FLOOR))),
    }
    return SourceFunction(phis, ss, biases, rates, kind=SourceKind.DENDRITE, meta=meta)


# ---------------------------------------------------------------------------
# neuron source functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeuronSourceConfig:
    """Soma, synapse and run settings for :func:`generate_neuron_source`.

    All times are dimensionless. ``min_spikes`` counts spikes after the
    ``skip_spikes`` transient ones.
    """

    soma_bias: float = 1.7
    soma_beta: float = TWO_PI * 1e3
    soma_tau: float = 50.0 * 1e3
    s_threshold: float = 0.2
    j_ref: float = -0.35
    refractory_impulse: float = 1.0
    t_tx: float = 5.0 * 1e3
    syn_amplitude: float = 0.25
    syn_tau: float = 50.0 * 1e3
    dt: float = 50.0
    run_time: float = 4000.0 * 1e3
    max_run_time: float = 64000.0 * 1e3
    skip_spikes: int = 2
    min_spikes: int = 4

    @classmethod
    def from_ns(cls, omega_c: float, **kw) -> "NeuronSourceConfig":
        """Build from times given in nanoseconds (keys ending in ``_ns``)."""
        conv = {}
        for key, val in kw.items():
            if key.endswith("_ns"):
                conv[key[:-3]] = float(val) * omega_c
            else:
                conv[key] = val
        return cls(**conv)


def _soma_batch(phis, cfg: NeuronSourceConfig, gd: SourceFunction, i_d: float, run_time: float):
    """Drive one independent soma per flux value; record each synaptic flux."""
    from .core import CouplingMatrix, DendriteSpec, DendriteKind
    from .engine import TraceConfig
    from .spiking import SomaSpec, SpikingNetwork, SynapseSpec, run_spiking

    specs, somas, syns, targets = [], [], [], []
    for k in range(len(phis)):
        a, r, d = 3 * k, 3 * k + 1, 3 * k + 2
        specs += [
            DendriteSpec(a, DendriteKind.SOMA, cfg.soma_beta, cfg.soma_tau, cfg.soma_bias, "gd",
                         s_threshold=cfg.s_threshold),
            DendriteSpec(r, DendriteKind.REFRACTORY, cfg.soma_beta, cfg.soma_tau, cfg.soma_bias, "gd"),
            # the receiving dendrite only reports its synaptic flux; its own signal is irrelevant
            DendriteSpec(d, DendriteKind.FIRST_ORDER, cfg.soma_beta, cfg.soma_tau, i_d, "gd"),
        ]
        somas.append(SomaSpec(a, r, t_tx=cfg.t_tx, j_ref=cfg.j_ref,
                              refractory_impulse=cfg.refractory_impulse))
        syns.append(SynapseSpec(a, d, amplitude=cfg.syn_amplitude, tau=cfg.syn_tau))
        targets.append(a)
    net = SpikingNetwork(specs, CouplingMatrix(len(specs)), {"gd": gd}, somas=somas, synapses=syns,
                         drive=FluxDrive.constant(targets, list(phis)), dt=cfg.dt, t_end=run_time)
    ids = np.arange(2, len(specs), 3)
    tb, spikes = run_spiking(net, trace=TraceConfig(ids=ids, stride=1))
    return tb, [spikes[3 * k] for k in range(len(phis))]


def _phi_weights(samples: np.ndarray, phi_grid: np.ndarray) -> np.ndarray:
    """Mean linear-interpolation weights of folded flux samples on ``phi_grid``."""
    from .core import _cell, fold_flux

    kp, fp = _cell(phi_grid, fold_flux(samples))
    w = np.bincount(kp, weights=1.0 - fp, minlength=phi_grid.size)
    if phi_grid.size > 1:
        w += np.bincount(kp + 1, weights=fp, minlength=phi_grid.size)
    return w / samples.size


def generate_neuron_source(phi_grid: Sequence[float], s_grid: Sequence[float],
                           dendrite_biases: Sequence[float], gd: SourceFunction,
                           cfg: NeuronSourceConfig = NeuronSourceConfig()) -> SourceFunction:
    """Tabulate g_n(phi_n, s; i_d) for a soma biased at ``cfg.soma_bias``.

    For every flux node a soma is held at constant ``phi_n`` in the spiking
    model. Over a whole number of steady interspike intervals the synaptic
    flux phi_syn(t) on the receiving dendrite is recorded, and the rate at
    each signal value is the time average of g_d(phi_syn(t), s; i_d) with s
    pinned. The bias axis of the result is ``i_d``.
    """
    from .analysis.steady import steady_state

    phis = np.array(phi_grid, dtype=np.float64)
    ss = np.array(s_grid, dtype=np.float64)
    i_ds = np.array(dendrite_biases, dtype=np.float64)
    values = np.zeros((i_ds.size, phis.size, ss.size))
    alpha_soma = cfg.soma_beta / cfg.soma_tau
    for b, i_d in enumerate(i_ds):
        # s-interpolated columns of the receiving dendrite's table
        cols = np.stack([gd(i_d, np.full(ss.size, p), ss) for p in gd.phi_grid])
        todo = np.arange(phis.size)
        run_time = cfg.run_time
        while todo.size:
            tb, records = _soma_batch(phis[todo], cfg, gd, i_d, run_time)
            retry = []
            for c, node in enumerate(todo):
                steps = records[c].steps
                if steps.size < cfg.skip_spikes + cfg.min_spikes + 1:
                    s_ss = steady_state(gd, cfg.soma_bias, float(phis[node]), alpha_soma)
                    if s_ss < cfg.s_threshold or (steps.size == 0 and run_time >= cfg.max_run_time):
                        if s_ss >= cfg.s_threshold:
                            raise NoSteadyState(
                                f"soma never fired at phi_n={phis[node]}, i_n={cfg.soma_bias}, i_d={i_d}")
                        continue  # below the neuronal threshold: g_n = 0
                    if run_time >= cfg.max_run_time:
                        raise NoSteadyState(
                            f"too few spikes at phi_n={phis[node]}, i_n={cfg.soma_bias}, i_d={i_d}")
                    retry.append(node)
                    continue
                # spike fired at global step q reaches the synapse at the first step with
                # (p + 1 - q) dt >= t_tx, which is trace row p + 1
                lag = int(math.ceil(cfg.t_tx / cfg.dt - 1e-9))
                rows = steps[cfg.skip_spikes:] + lag
                lo, hi = int(rows[0]), int(rows[-1])
                if hi >= tb.t.size:
                    rows = rows[rows < tb.t.size]
                    hi = int(rows[-1])
                samples = tb.phi[lo:hi, c]
                values[b, node] = _phi_weights(samples, gd.phi_grid) @ cols
            todo = np.array(retry, dtype=np.int64)
            run_time *= 4.0
    meta = {
        "source": "spiking-soma",
        "soma_bias": repr(float(cfg.soma_bias)),
        "soma_beta": repr(float(cfg.soma_beta)),
        "soma_tau": repr(float(cfg.soma_tau)),
        "s_threshold": repr(float(cfg.s_threshold)),
        "j_ref": repr(float(cfg.j_ref)),
        "refractory_impulse": repr(float(cfg.refractory_impulse)),
        "t_tx": repr(float(cfg.t_tx)),
        "syn_amplitude": repr(float(cfg.syn_amplitude)),
        "syn_tau": repr(float(cfg.syn_tau)),
        "dt": repr(float(cfg.dt)),
    }
    for key, val in gd.meta.items():
        meta.setdefault(f"gd_{key}", val)
    return SourceFunction(phis, ss, i_ds, values, kind=SourceKind.NEURON, meta=meta)
