import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soen.analysis import (
    ExperimentConfig,
    GridMismatch,
    InputBranch,
    OutputDendrite,
    ZeroReference,
    chi_squared,
    default_experiment,
    dendrite_energy,
    inflection_count,
    is_threshold_linear,
    load_tables,
    run_comparison_experiment,
    run_pair,
    steady_state,
    transfer_curve,
)
from soen.analysis.experiments import KINDS, aperiodic_events, apply_param
from soen.core import CouplingMatrix, DendriteKind, DendriteSpec, NetworkState, SourceFunction, ValidationError
from soen.engine import Network, run

from conftest import TWO_PI, constant_table, zero_table

ALPHA_D = TWO_PI * 1e3 / 2.5e5


# ---------------------------------------------------------------------------
# chi-squared
# ---------------------------------------------------------------------------


def test_chi2_identical():
    assert chi_squared([0.1, 0.4, 0.2], [0.1, 0.4, 0.2]).chi2 == 0.0


def test_chi2_by_hand():
    assert chi_squared([1.0, 2.0], [1.0, 1.0]).chi2 == pytest.approx(0.2, rel=1e-15)


def test_chi2_zero_candidate():
    assert chi_squared([0.3, -0.1, 2.0], [0.0, 0.0, 0.0]).chi2 == 1.0


def test_chi2_not_symmetric():
    assert chi_squared([1.0, 2.0], [1.0, 1.0]).chi2 != chi_squared([1.0, 1.0], [1.0, 2.0]).chi2


def test_chi2_errors():
    with pytest.raises(ZeroReference):
        chi_squared([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(GridMismatch):
        chi_squared([1.0, 2.0], [1.0])


def test_chi2_requires_matching_grids(gd):
    spec = DendriteSpec(0, DendriteKind.FIRST_ORDER, 10.0, 100.0, 1.7, "gd")
    a = run(Network([spec], CouplingMatrix(1), {"gd": gd}, dt=1.0, t_end=10.0), NetworkState(0.0, [0.5]))
    b = run(Network([spec], CouplingMatrix(1), {"gd": gd}, dt=0.5, t_end=4.5), NetworkState(0.0, [0.5]))
    assert chi_squared(a, a).chi2 == 0.0
    with pytest.raises(GridMismatch):
        chi_squared(a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6)), min_size=1, max_size=30),
       st.floats(0.0, 2.0))
def test_property_chi2_scaling(ref, k):
    ref = np.array(ref)
    if not np.any(ref != 0):
        return
    # candidate k * ref gives (1 - k)^2 independent of ref
    assert chi_squared(ref, k * ref).chi2 == pytest.approx((1 - k) ** 2, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# steady states
# ---------------------------------------------------------------------------


def test_steady_state_below_threshold(gd):
    assert steady_state(gd, 1.7, 0.05, ALPHA_D) == 0.0


def test_steady_state_constant_rate():
    sf = constant_table(0.03)
    assert steady_state(sf, 1.7, 0.3, 0.1) == pytest.approx(0.3, rel=1e-12)


@pytest.mark.parametrize("g0,alpha", [(0.5, 0.1), (0.02, 0.05), (1.0, 3.0)])
def test_steady_state_linear_rate(g0, alpha):
    s = np.linspace(0.0, 1.0, 11)
    plane = np.outer(np.ones(3), g0 * (1.0 - s))
    sf = SourceFunction([0.0, 0.25, 0.5], s, [1.7], plane[None])
    expected = g0 / (alpha + g0)
    got = steady_state(sf, 1.7, 0.4, alpha)
    assert got == pytest.approx(expected, rel=1e-9)
    assert abs(alpha * got - g0 * (1 - got)) < 1e-9


def test_two_point_transfer_curve(gd):
    tc = transfer_curve(gd, 1.7, ALPHA_D, phi=[0.0, 0.5])
    assert tc.s_ss.shape == (2,)
    assert tc.s_ss[0] == 0.0 and tc.s_ss[1] > 0


def test_higher_bias_lower_threshold(gd):
    lo = transfer_curve(gd, 1.6, ALPHA_D).threshold()
    hi = transfer_curve(gd, 1.8, ALPHA_D).threshold()
    assert hi < lo


@pytest.mark.parametrize("bias", [1.55, 1.7, 1.85])
def test_transfer_curve_residuals(gd, bias):
    tc = transfer_curve(gd, bias, ALPHA_D)
    assert np.all(tc.residuals(gd) < 1e-9)
    for p, s in zip(tc.phi[::10], tc.s_ss[::10]):
        assert steady_state(gd, bias, p, ALPHA_D) == s


def test_dendrite_transfer_curve_is_even(gd):
    phi = np.linspace(0.0, 0.5, 51)
    up = transfer_curve(gd, 1.7, ALPHA_D, phi=phi)
    down = transfer_curve(gd, 1.7, ALPHA_D, phi=-phi)
    assert np.array_equal(up.s_ss, down.s_ss)


def test_dendrite_curve_threshold_linear(gd):
    tc = transfer_curve(gd, 1.7, ALPHA_D)
    assert is_threshold_linear(tc.phi, tc.s_ss)


def test_neuron_curve_is_sigmoid_like(tables):
    gn = tables.gn[1.7]
    tc = transfer_curve(gn, 1.7, TWO_PI * 1e4 / 1.25e6)
    assert np.all(tc.residuals(gn) < 1e-9)
    assert inflection_count(tc.s_ss) == 1


def test_inflection_count_synthetic():
    x = np.linspace(0.0, 0.5, 101)
    assert inflection_count(np.tanh((x - 0.3) * 30) + 1) == 1
    assert inflection_count(np.maximum(x - 0.2, 0.0)) == 0
    assert inflection_count(np.sin(8 * np.pi * x) + 2) > 2
    assert inflection_count(np.zeros(10)) == 0


def test_is_threshold_linear_synthetic():
    x = np.linspace(0.0, 0.5, 51)
    assert is_threshold_linear(x, np.maximum(x - 0.2, 0.0))
    assert not is_threshold_linear(x, np.tanh((x - 0.3) * 40) + 1)


@settings(max_examples=40, deadline=None)
@given(phi=st.floats(0.0, 0.5), bias=st.floats(1.55, 1.85), alpha=st.floats(1e-3, 0.2))
def test_property_steady_residual(gd, phi, bias, alpha):
    s = steady_state(gd, bias, phi, alpha)
    from soen.core import evaluate_source
    assert s >= 0
    assert abs(alpha * s - evaluate_source(gd, bias, phi, s)) < 1e-9


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


def test_energy_examples():
    spec = DendriteSpec(0, DendriteKind.FIRST_ORDER, TWO_PI * 1e3, 1.0, 1.7, "gd")
    assert dendrite_energy([0.0], [spec])[0] == 0.0
    assert dendrite_energy([0.2], [spec])[0] == pytest.approx(0.5 * TWO_PI * 1e3 * 0.04, rel=1e-15)
    assert dendrite_energy([0.2], [spec])[0] == pytest.approx(125.66, abs=5e-3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=8), st.floats(1e-3, 1e5))
def test_property_energy_nonnegative(s, beta):
    specs = [DendriteSpec(i, DendriteKind.FIRST_ORDER, beta, 1.0, 1.7, "gd") for i in range(len(s))]
    assert np.all(dendrite_energy(np.array(s), specs) >= 0)


@settings(max_examples=20, deadline=None)
@given(s0=st.floats(0.0, 1.5), tau=st.floats(10.0, 1e4))
def test_property_relaxing_energy_nonincreasing(s0, tau):
    spec = DendriteSpec(0, DendriteKind.FIRST_ORDER, 100.0, tau, 1.7, "gd")
    tb = run(Network([spec], CouplingMatrix(1), {"gd": zero_table()}, dt=tau / 50, t_end=5 * tau),
             NetworkState(0.0, [s0]))
    e = dendrite_energy(tb.s, [spec])[:, 0]
    assert np.all(np.diff(e) <= 0)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def test_defaults_round_trip():
    for kind in KINDS:
        cfg = default_experiment(kind)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_config_validation():
    branch = InputBranch(100.0, 50.0)
    out = OutputDendrite(100.0, 50.0)
    with pytest.raises(ValidationError) as exc:
        ExperimentConfig("nope", (branch,), out, sweep_values=(1.0,))
    assert exc.value.field == "kind"
    with pytest.raises(ValidationError):
        ExperimentConfig("coincidence", (branch,), out, sweep_param="delay_ns", sweep_values=(0.0,))
    with pytest.raises(ValidationError):
        ExperimentConfig("single_event", (branch,), out, sweep_values=())
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({**default_experiment("single_event").to_dict(), "colour": 1})


def test_apply_param():
    cfg = default_experiment("sequence")
    moved = apply_param(cfg, "delay_ns", -50.0)
    assert moved.inputs[0].events_ns == (400.0,)
    assert moved.inputs[1].events_ns == (350.0,)
    assert apply_param(cfg, "tau_out_ns", 7.0).output.tau_ns == 7.0
    assert apply_param(cfg, "i_n", 1.85).soma.bias == 1.85
    assert all(b.coupling == 0.1 for b in apply_param(cfg, "coupling", 0.1).inputs)


def test_aperiodic_events_seeded():
    a = aperiodic_events(3)
    assert a == aperiodic_events(3) and a != aperiodic_events(4)
    isi = np.diff(a)
    assert len(a) == 20 and np.all((isi >= 50.0) & (isi <= 1000.0))
    assert default_experiment("pulse_train_aperiodic", seed=3).inputs[0].events_ns == a


def test_missing_table_path(tmp_path):
    missing = tmp_path / "none.sf"
    with pytest.raises(ValidationError) as exc:
        load_tables(str(missing))
    assert str(missing) in str(exc.value)
    assert exc.value.field == "gd_path"


def test_neuron_table_must_match_soma(tables):
    cfg = default_experiment("single_event")
    cfg = dataclasses.replace(cfg, soma=dataclasses.replace(cfg.soma, j_ref=-0.5))
    with pytest.raises(ValidationError):
        run_pair(cfg, tables)


def test_sweep_csv(tmp_path, tables):
    cfg = dataclasses.replace(default_experiment("single_event"), sweep_values=(427.0,))
    rep = run_comparison_experiment("single_event", cfg, tables)
    rep.write_sweep_csv(tmp_path / "s.csv")
    rep.write_traces_csv(tmp_path / "t.csv", 0)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "param,value,chi2,peak_spiking,peak_phenom,n_spikes"
    fields = rows[1].split(",")
    assert fields[0] == "tau_out_ns" and float(fields[1]) == 427.0
    assert float(fields[2]) == rep.chi2[0]
    trace = (tmp_path / "t.csv").read_text().splitlines()
    assert trace[0] == "t,t_ns,s_spiking,s_phenom,phi_soma"
    assert len(trace) == 1 + rep.pairs[0].t.size


def test_bias_sweep_reports_every_bias(tables):
    rep = run_comparison_experiment("bias_sweep", tables=tables)
    assert list(rep.values) == [1.55, 1.7, 1.85]
    assert np.all(np.isfinite(rep.chi2)) and np.all(rep.chi2 >= 0)


def _inversions(x):
    return int(np.count_nonzero(np.diff(x) > 0))


@pytest.mark.parametrize("kind", ["single_event", "pulse_train_aperiodic"])
def test_tau_out_trend(tables, kind):
    rep = run_comparison_experiment(kind, tables=tables)
    assert rep.config.sweep_param == "tau_out_ns"
    assert _inversions(rep.chi2) <= 1
    assert rep.chi2[-1] < rep.chi2[0]


def test_tau_out_trend_step_response(tables):
    cfg = dataclasses.replace(default_experiment("step_response"), sweep_values=(250.0, 1250.0, 6250.0))
    rep = run_comparison_experiment("step_response", cfg, tables)
    assert _inversions(rep.chi2) <= 1


def test_tau_out_trend_periodic(tables):
    cfg = default_experiment("pulse_train_periodic")
    cfg = dataclasses.replace(cfg, sweep_param="tau_out_ns", sweep_values=(250.0, 1000.0, 4000.0))
    rep = run_comparison_experiment("pulse_train_periodic", cfg, tables)
    assert _inversions(rep.chi2) <= 1
