import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soen.analysis import steady_state
from soen.core import CouplingMatrix, DendriteKind, DendriteSpec, FluxDrive, InvariantViolation, ValidationError
from soen.engine import Network, TraceConfig, run, step
from soen.spiking import (
    SomaSpec,
    SpikeRecord,
    SpikingNetwork,
    SynapseSpec,
    run_spiking,
    spiking_step,
    write_spikes_csv,
)

from conftest import TWO_PI

W = 1000.0  # omega_c, dimensionless time per ns
BETA = TWO_PI * 1e3
TAU_SOMA = 50 * W
DT = 0.05 * W


def neuron(gd, phi, t_end_ns=1000.0, threshold=0.2, j_ref=-0.35, syn_tau_ns=50.0, out_tau_ns=1250.0):
    """Soma 0 (constant flux), refractory 1, synapse onto output dendrite 2."""
    specs = [
        DendriteSpec(0, DendriteKind.SOMA, BETA, TAU_SOMA, 1.7, "gd", s_threshold=threshold),
        DendriteSpec(1, DendriteKind.REFRACTORY, BETA, TAU_SOMA, 1.7, "gd"),
        DendriteSpec(2, DendriteKind.FIRST_ORDER, TWO_PI * 1e4, out_tau_ns * W, 1.7, "gd"),
    ]
    return SpikingNetwork(specs, CouplingMatrix(3), {"gd": gd}, somas=[SomaSpec(0, 1, t_tx=5 * W, j_ref=j_ref)],
                          synapses=[SynapseSpec(0, 2, amplitude=0.25, tau=syn_tau_ns * W)],
                          drive=FluxDrive.constant([0], [phi]), dt=DT, t_end=t_end_ns * W)


def somatic_threshold(gd):
    alpha = BETA / TAU_SOMA
    phis = np.linspace(0.0, 0.5, 501)
    above = [p for p in phis if steady_state(gd, 1.7, p, alpha) >= 0.2]
    return above[0]


# ---------------------------------------------------------------------------
# examples
# ---------------------------------------------------------------------------


def test_sawtooth_soma_signal(gd):
    tb, spikes = run_spiking(neuron(gd, 0.4))
    rec = spikes[0]
    assert rec.count >= 5
    s = tb.signal(0)
    fire_rows = rec.steps
    assert np.all(s[fire_rows] == 0.0)
    # ramp between spikes, never at or above threshold after an update
    assert np.all(s < 0.2)
    seg = s[fire_rows[1] + 1: fire_rows[2]]
    assert seg.max() > 0.15
    # refractory dendrite kicked at each spike
    ref = tb.signal(1)
    assert np.all(ref[fire_rows] - ref[fire_rows - 1] > 0.9)


def test_subthreshold_drive_never_fires(gd):
    phi = somatic_threshold(gd) - 0.01
    _, spikes = run_spiking(neuron(gd, phi, t_end_ns=3000.0))
    assert spikes[0].count == 0


def test_single_event_gives_one_spike(tables):
    from soen.analysis.experiments import default_experiment, run_pair
    cfg = default_experiment("single_event")
    pair = run_pair(cfg, tables)
    assert pair.n_spikes == 1


def test_periodic_train_repeater(tables):
    from soen.analysis.experiments import apply_param, default_experiment, run_pair
    cfg = default_experiment("pulse_train_periodic")
    events = cfg.inputs[0].events_ns
    assert np.allclose(np.diff(events), 100.0)
    pair = run_pair(apply_param(cfg, cfg.sweep_param, cfg.sweep_values[0]), tables)
    assert pair.n_spikes == len(events)
    # one output spike after each input event and before the next
    edges = np.append(np.array(events), np.inf) * W
    for k, t in enumerate(pair.spike_times):
        assert edges[k] < t < edges[k + 1]


def test_no_somas_matches_engine(gd):
    specs = [DendriteSpec(i, DendriteKind.FIRST_ORDER, BETA, (100 + 50 * i) * W, 1.7, "gd") for i in range(3)]
    J = CouplingMatrix(3, [(1, 0, 0.6), (2, 1, 0.5)])
    drive = FluxDrive([0], [0.0, 100 * W], [0.0, 0.45], mode="linear")
    a = run(Network(specs, J, {"gd": gd}, drive=drive, dt=DT, t_end=500 * W))
    b, spikes = run_spiking(SpikingNetwork(specs, J, {"gd": gd}, drive=drive, dt=DT, t_end=500 * W))
    assert spikes == {}
    assert np.array_equal(a.s, b.s) and np.array_equal(a.phi, b.phi)


def test_spike_latency_and_synaptic_waveform(gd):
    net = neuron(gd, 0.4, t_end_ns=300.0, syn_tau_ns=40.0)
    tb, spikes = run_spiking(net, trace=TraceConfig(ids=[2]))
    rec = spikes[0]
    assert np.allclose(rec.times, rec.steps * DT + 5 * W, rtol=0, atol=1e-9)
    t = tb.t
    phi = tb.flux(2)
    # independent superposition of delivered spikes
    expected = np.zeros_like(t)
    for ts in rec.times:
        on = t >= ts - 1e-9
        expected[on] += 0.25 * np.exp(-(t[on] - ts) / (40 * W))
    assert np.allclose(phi[1:], expected[1:], rtol=1e-9, atol=1e-12)


def test_spikes_csv(tmp_path, gd):
    _, spikes = run_spiking(neuron(gd, 0.4, t_end_ns=200.0))
    write_spikes_csv(spikes, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "soma_id,t_spike_dimensionless,t_spike_ns"
    assert len(lines) == 1 + spikes[0].count
    assert float(lines[1].split(",")[2]) == pytest.approx(spikes[0].times[0] / W)


def test_spiking_step_reports_spikes(gd):
    net = neuron(gd, 0.45)
    state, n = None, 0
    for _ in range(int(100 * W / DT)):
        state, new = spiking_step(net, state)
        n += len(new)
        for sid, t in new:
            assert sid == 0
            assert t == pytest.approx(state.t + 5 * W)
    _, spikes = run_spiking(SpikingNetwork(net.specs, net.J_input, net.sources, net.somas, net.synapses,
                                           net.drive, dt=DT, t_end=100 * W))
    assert n == spikes[0].count > 0


def test_validation():
    from conftest import zero_table
    sf = zero_table()
    specs = [DendriteSpec(0, DendriteKind.SOMA, BETA, TAU_SOMA, 1.7, "gd", s_threshold=0.2),
             DendriteSpec(1, DendriteKind.REFRACTORY, BETA, TAU_SOMA, 1.7, "gd")]
    with pytest.raises(ValidationError):
        SpikingNetwork(specs, CouplingMatrix(2), {"gd": sf})  # soma without SomaSpec
    with pytest.raises(ValidationError):
        SpikingNetwork(specs, CouplingMatrix(2), {"gd": sf}, somas=[SomaSpec(1, 0)])
    with pytest.raises(ValidationError):
        SpikingNetwork(specs, CouplingMatrix(2), {"gd": sf}, somas=[SomaSpec(0, 1)],
                       synapses=[SynapseSpec(1, 0)])
    with pytest.raises(InvariantViolation):
        SomaSpec(0, 1, j_ref=0.1)
    with pytest.raises(InvariantViolation):
        SynapseSpec(0, 1, amplitude=0.6)
    with pytest.raises(InvariantViolation):
        SpikeRecord(0, [2.0, 1.0])


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=12, deadline=None)
@given(phi=st.floats(0.2, 0.45))
def test_property_refractory_interval(gd, phi):
    _, spikes = run_spiking(neuron(gd, phi, t_end_ns=1500.0))
    isi = spikes[0].intervals()
    if isi.size:
        assert isi.min() >= 45 * W


@settings(max_examples=12, deadline=None)
@given(phi=st.floats(0.2, 0.5))
def test_property_evacuation(gd, phi):
    tb, spikes = run_spiking(neuron(gd, phi, t_end_ns=600.0), trace=TraceConfig(ids=[0]))
    assert np.all(tb.signal(0)[spikes[0].steps] == 0.0)
    assert np.all(tb.signal(0) < 0.2)


@settings(max_examples=12, deadline=None)
@given(a=st.floats(0.15, 0.5), b=st.floats(0.15, 0.5))
def test_property_spike_count_monotone_in_drive(gd, a, b):
    lo, hi = sorted((a, b))
    n_lo = run_spiking(neuron(gd, lo, t_end_ns=1000.0), trace=TraceConfig(ids=[]))[1][0].count
    n_hi = run_spiking(neuron(gd, hi, t_end_ns=1000.0), trace=TraceConfig(ids=[]))[1][0].count
    assert n_hi >= n_lo


@settings(max_examples=10, deadline=None)
@given(phi=st.floats(0.0, 0.5), n_steps=st.integers(1, 400))
def test_property_infinite_threshold_equals_engine_step(gd, phi, n_steps):
    snet = neuron(gd, phi, threshold=math.inf)
    # the same circuit as a plain network: soma as a first-order dendrite, refractory link kept in J
    specs = [DendriteSpec(0, DendriteKind.FIRST_ORDER, BETA, TAU_SOMA, 1.7, "gd")] + snet.specs[1:]
    pnet = Network(specs, snet.J, {"gd": gd}, drive=snet.drive, dt=DT)
    sstate, pstate = None, pnet.initial_state()
    for _ in range(n_steps):
        sstate, new = spiking_step(snet, sstate)
        pstate = step(pnet, pstate)
        assert new == []
        assert np.array_equal(sstate.s, pstate.s)
    assert sstate.t == pstate.t
