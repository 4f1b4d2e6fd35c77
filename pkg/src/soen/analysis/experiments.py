"""Matched spiking and phenomenological experiments on small neuron circuits.

Every experiment builds the same circuit twice. In the spiking network one
or more input dendrites couple into a soma (with its refractory dendrite)
whose spikes reach an output dendrite through a synapse. In the
phenomenological network the soma, refractory dendrite and synapse are
gone: the input dendrites couple with the same weights straight into the
output dendrite, which is driven by the neuron source function g_n. Both
networks share the input drive, dt and trace grid, so their output traces
can be compared point by point.

Configuration values are physical: times in ns, inductances as the
dimensionless beta. They are converted with ``omega_c`` when networks are
built, which keeps the dictionaries written to manifests exact.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core import (
    CouplingMatrix,
    DendriteKind,
    DendriteSpec,
    FluxDrive,
    SourceFunction,
    SourceKind,
    ValidationError,
    load_source_function,
)
from ..engine import Network, TraceConfig, run
from ..oracle import NeuronSourceConfig
from ..spiking import SomaSpec, SpikingNetwork, SynapseSpec, run_spiking
from .metrics import ZeroReference, chi_squared

TWO_PI = 2.0 * math.pi

KINDS = (
    "step_response",
    "single_event",
    "bias_sweep",
    "pulse_train_periodic",
    "pulse_train_aperiodic",
    "coincidence",
    "sequence",
)

SWEEP_PARAMS = ("tau_out_ns", "beta_out", "i_n", "i_d", "tau_in_ns", "delay_ns", "coupling")

# kinds whose sweeps legitimately contain points where the soma never fires
_DELAY_KINDS = ("coincidence", "sequence")


@dataclass(frozen=True)
class InputBranch:
    """Input dendrite feeding the soma.

    It is driven by synapse events at ``events_ns`` (each adding flux
    ``amplitude * exp(-(t - t_k)/syn_tau)``) and by a constant flux ``step``
    applied from t = 0.
    """

    beta: float
    tau_ns: float
    bias: float = 1.7
    coupling: float = 0.5
    events_ns: Tuple[float, ...] = ()
    amplitude: float = 0.25
    syn_tau_ns: float = 50.0
    step: float = 0.0


@dataclass(frozen=True)
class SomaParams:
    """Soma, refractory dendrite, transmitter and output synapse."""

    bias: float = 1.7
    beta: float = TWO_PI * 1e3
    tau_ns: float = 50.0
    s_threshold: float = 0.2
    j_ref: float = -0.35
    refractory_impulse: float = 1.0
    t_tx_ns: float = 5.0
    syn_amplitude: float = 0.25
    syn_tau_ns: float = 50.0

    def neuron_config(self, omega_c: float, dt: float) -> NeuronSourceConfig:
        return NeuronSourceConfig(
            soma_bias=self.bias, soma_beta=self.beta, soma_tau=self.tau_ns * omega_c,
            s_threshold=self.s_threshold, j_ref=self.j_ref,
            refractory_impulse=self.refractory_impulse, t_tx=self.t_tx_ns * omega_c,
            syn_amplitude=self.syn_amplitude, syn_tau=self.syn_tau_ns * omega_c, dt=dt,
        )


@dataclass(frozen=True)
class OutputDendrite:
    beta: float
    tau_ns: float
    bias: float = 1.7


@dataclass(frozen=True)
class ExperimentConfig:
    """A circuit plus a one-parameter sweep.

    ``sweep_param`` is one of :data:`SWEEP_PARAMS`; ``delay_ns`` moves the
    events of the second input relative to ``base_time_ns``. ``gd_path`` and
    ``gn_paths`` select table files; ``None`` uses the packaged tables.
    """

    kind: str
    inputs: Tuple[InputBranch, ...]
    output: OutputDendrite
    soma: SomaParams = SomaParams()
    sweep_param: str = "tau_out_ns"
    sweep_values: Tuple[float, ...] = ()
    dt_ns: float = 0.05
    t_end_ns: float = 2000.0
    base_time_ns: float = 100.0
    omega_c: float = 1000.0
    seed: Optional[int] = None
    gd_path: Optional[str] = None
    gn_paths: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}", "kind")
        if self.sweep_param not in SWEEP_PARAMS:
            raise ValidationError(f"unknown sweep parameter {self.sweep_param!r}", "sweep_param")
        if not self.inputs:
            raise ValidationError("at least one input branch is required", "inputs")
        if self.sweep_param == "delay_ns" and len(self.inputs) < 2:
            raise ValidationError("a delay sweep needs two inputs", "sweep_param")
        for name in ("dt_ns", "t_end_ns", "omega_c"):
            if not getattr(self, name) > 0:
                raise ValidationError("must be > 0", name)
        if not self.sweep_values:
            raise ValidationError("sweep needs at least one value", "sweep_values")

    @property
    def dt(self) -> float:
        return self.dt_ns * self.omega_c

    def to_dict(self) -> dict:
        """Plain nested dictionary (lists instead of tuples)."""
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown keys {sorted(extra)}", "experiment")
        try:
            inputs = tuple(_branch(b, k) for k, b in enumerate(d.pop("inputs")))
            output = OutputDendrite(**d.pop("output"))
            soma = SomaParams(**d.pop("soma", {}))
        except KeyError as exc:
            raise ValidationError("missing section", str(exc.args[0])) from None
        except TypeError as exc:
            raise ValidationError(str(exc), "experiment") from None
        for key in ("sweep_values", "gn_paths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(inputs=inputs, output=output, soma=soma, **d)


def _branch(b: Mapping, k: int) -> InputBranch:
    b = dict(b)
    if "events_ns" in b:
        b["events_ns"] = tuple(float(x) for x in b["events_ns"])
    try:
        return InputBranch(**b)
    except TypeError as exc:
        raise ValidationError(str(exc), f"inputs[{k}]") from None


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


@dataclass
class TableSet:
    """A dendrite table and neuron tables keyed by soma bias."""

    gd: SourceFunction
    gn: Dict[float, SourceFunction]
    paths: List[str] = field(default_factory=list)

    def neuron_table(self, soma_bias: float) -> SourceFunction:
        for bias, sf in self.gn.items():
            if abs(bias - soma_bias) <= 1e-9:
                return sf
        raise ValidationError(f"no neuron table for soma bias {soma_bias}; available {sorted(self.gn)}",
                              "gn_paths")


def packaged_table(name: str) -> Path:
    return Path(str(resources.files("soen") / "data" / name))


DEFAULT_GD = "gd.sf"
DEFAULT_GN = ("gn_in1.55.sf", "gn_in1.70.sf", "gn_in1.85.sf")


def load_tables(gd_path: Optional[str] = None, gn_paths: Sequence[str] = ()) -> TableSet:
    """Load tables from files, falling back to the packaged ones."""
    gd_file = Path(gd_path) if gd_path else packaged_table(DEFAULT_GD)
    gn_files = [Path(p) for p in gn_paths] or [packaged_table(n) for n in DEFAULT_GN]
    for k, p in enumerate([gd_file] + gn_files):
        if not p.is_file():
            raise ValidationError(f"source-function file not found: {p}",
                                  "gd_path" if k == 0 else f"gn_paths[{k - 1}]")
    gd = load_source_function(gd_file)
    gn = {}
    for p in gn_files:
        sf = load_source_function(p)
        if sf.kind is not SourceKind.NEURON:
            raise ValidationError(f"{p} is not a neuron table", "gn_paths")
        gn[float(sf.meta["soma_bias"])] = sf
    return TableSet(gd, gn, [str(gd_file)] + [str(p) for p in gn_files])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_neuron_table(gn: SourceFunction, soma: SomaParams, omega_c: float) -> None:
    """Refuse a neuron table built for a different soma or synapse."""
    expected = {
        "soma_bias": soma.bias,
        "soma_beta": soma.beta,
        "soma_tau": soma.tau_ns * omega_c,
        "s_threshold": soma.s_threshold,
        "j_ref": soma.j_ref,
        "refractory_impulse": soma.refractory_impulse,
        "t_tx": soma.t_tx_ns * omega_c,
        "syn_amplitude": soma.syn_amplitude,
        "syn_tau": soma.syn_tau_ns * omega_c,
    }
    for key, want in expected.items():
        if key not in gn.meta:
            raise ValidationError(f"neuron table lacks {key!r} metadata", "gn_paths")
        got = float(gn.meta[key])
        if not math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12):
            raise ValidationError(f"neuron table built with {key}={got}, circuit uses {want}", f"soma.{key}")


# ---------------------------------------------------------------------------
# circuits
# ---------------------------------------------------------------------------


def _input_drive(cfg: ExperimentConfig, n_steps: int) -> FluxDrive:
    """Flux on the input dendrites sampled on the simulation grid."""
    m = len(cfg.inputs)
    if all(not b.events_ns for b in cfg.inputs):
        return FluxDrive.constant(list(range(m)), [b.step for b in cfg.inputs])
    dt = cfg.dt
    t = np.arange(n_steps + 1) * dt
    values = np.empty((t.size, m))
    for c, b in enumerate(cfg.inputs):
        col = np.full(t.size, b.step)
        tau = b.syn_tau_ns * cfg.omega_c
        for ev in b.events_ns:
            t_ev = ev * cfg.omega_c
            on = t >= t_ev
            col[on] += b.amplitude * np.exp(-(t[on] - t_ev) / tau)
        values[:, c] = col
    # sample k covers (t_k - dt/2, t_k + dt/2], so lookups at grid times are exact
    return FluxDrive(list(range(m)), t - 0.5 * dt, values, mode="constant")


def _n_steps(cfg: ExperimentConfig) -> int:
    return int(round(cfg.t_end_ns / cfg.dt_ns))


def build_spiking_network(cfg: ExperimentConfig, gd: SourceFunction) -> Tuple[SpikingNetwork, int, int]:
    """Inputs ``0..m-1``, soma ``m``, refractory ``m+1``, output ``m+2``."""
    w = cfg.omega_c
    m = len(cfg.inputs)
    soma, ref, out = m, m + 1, m + 2
    specs = [DendriteSpec(k, DendriteKind.FIRST_ORDER, b.beta, b.tau_ns * w, b.bias, "gd")
             for k, b in enumerate(cfg.inputs)]
    sp = cfg.soma
    specs += [
        DendriteSpec(soma, DendriteKind.SOMA, sp.beta, sp.tau_ns * w, sp.bias, "gd", s_threshold=sp.s_threshold),
        DendriteSpec(ref, DendriteKind.REFRACTORY, sp.beta, sp.tau_ns * w, sp.bias, "gd"),
        DendriteSpec(out, DendriteKind.FIRST_ORDER, cfg.output.beta, cfg.output.tau_ns * w, cfg.output.bias, "gd"),
    ]
    J = CouplingMatrix(len(specs), [(soma, k, b.coupling) for k, b in enumerate(cfg.inputs)])
    somas = [SomaSpec(soma, ref, t_tx=sp.t_tx_ns * w, j_ref=sp.j_ref, refractory_impulse=sp.refractory_impulse)]
    syns = [SynapseSpec(soma, out, amplitude=sp.syn_amplitude, tau=sp.syn_tau_ns * w)]
    n_steps = _n_steps(cfg)
    net = SpikingNetwork(specs, J, {"gd": gd}, somas=somas, synapses=syns,
                         drive=_input_drive(cfg, n_steps), dt=cfg.dt, t_end=n_steps * cfg.dt)
    return net, soma, out


def build_phenomenological_network(cfg: ExperimentConfig, gd: SourceFunction,
                                   gn: SourceFunction) -> Tuple[Network, int]:
    """Inputs ``0..m-1`` coupled directly into the g_n-driven output ``m``."""
    w = cfg.omega_c
    m = len(cfg.inputs)
    specs = [DendriteSpec(k, DendriteKind.FIRST_ORDER, b.beta, b.tau_ns * w, b.bias, "gd")
             for k, b in enumerate(cfg.inputs)]
    specs.append(DendriteSpec(m, DendriteKind.FIRST_ORDER, cfg.output.beta, cfg.output.tau_ns * w,
                              cfg.output.bias, "gn"))
    J = CouplingMatrix(m + 1, [(m, k, b.coupling) for k, b in enumerate(cfg.inputs)])
    n_steps = _n_steps(cfg)
    net = Network(specs, J, {"gd": gd, "gn": gn}, drive=_input_drive(cfg, n_steps), dt=cfg.dt,
                  t_end=n_steps * cfg.dt)
    return net, m


@dataclass
class PairResult:
    """Output-dendrite traces of both models for one circuit."""

    param: float
    t: np.ndarray
    spiking: np.ndarray
    phenom: np.ndarray
    soma_flux: np.ndarray
    spike_times: np.ndarray
    chi2: float

    @property
    def peak_spiking(self) -> float:
        return float(np.max(self.spiking))

    @property
    def peak_phenom(self) -> float:
        return float(np.max(self.phenom))

    @property
    def n_spikes(self) -> int:
        return int(self.spike_times.size)


def run_pair(cfg: ExperimentConfig, tables: TableSet, param: float = float("nan"),
             allow_zero: bool = False) -> PairResult:
    """Run one circuit in both models and score the phenomenological trace.

    With ``allow_zero`` a silent spiking output yields ``chi2 = nan``
    instead of raising :class:`ZeroReference`.
    """
    gn = tables.neuron_table(cfg.soma.bias)
    _check_neuron_table(gn, cfg.soma, cfg.omega_c)
    snet, soma, s_out = build_spiking_network(cfg, tables.gd)
    pnet, p_out = build_phenomenological_network(cfg, tables.gd, gn)
    tb_s, spikes = run_spiking(snet, trace=TraceConfig(ids=[soma, s_out]))
    tb_p = run(pnet, trace=TraceConfig(ids=[p_out]))
    ref = tb_s.signal(s_out)
    cand = tb_p.signal(p_out)
    if not np.array_equal(tb_s.t, tb_p.t):
        raise AssertionError("spiking and phenomenological grids differ")
    try:
        chi2 = chi_squared(ref, cand).chi2
    except ZeroReference:
        if not allow_zero:
            raise
        chi2 = float("nan")
    return PairResult(param, tb_s.t.copy(), ref.copy(), cand.copy(), tb_s.flux(soma).copy(),
                      spikes[soma].times.copy(), chi2)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def apply_param(cfg: ExperimentConfig, name: str, value: float) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweep parameter set."""
    value = float(value)
    if name == "tau_out_ns":
        return replace(cfg, output=replace(cfg.output, tau_ns=value))
    if name == "beta_out":
        return replace(cfg, output=replace(cfg.output, beta=value))
    if name == "i_d":
        return replace(cfg, output=replace(cfg.output, bias=value))
    if name == "i_n":
        return replace(cfg, soma=replace(cfg.soma, bias=value))
    if name == "tau_in_ns":
        return replace(cfg, inputs=(replace(cfg.inputs[0], tau_ns=value),) + cfg.inputs[1:])
    if name == "coupling":
        return replace(cfg, inputs=tuple(replace(b, coupling=value) for b in cfg.inputs))
    if name == "delay_ns":
        first, second = cfg.inputs[0], cfg.inputs[1]
        first = replace(first, events_ns=(cfg.base_time_ns,))
        second = replace(second, events_ns=(cfg.base_time_ns + value,))
        return replace(cfg, inputs=(first, second) + cfg.inputs[2:])
    raise ValidationError(f"unknown sweep parameter {name!r}", "sweep_param")


@dataclass
class ExperimentReport:
    kind: str
    config: ExperimentConfig
    pairs: List[PairResult]

    @property
    def values(self) -> np.ndarray:
        return np.array([p.param for p in self.pairs])

    @property
    def chi2(self) -> np.ndarray:
        return np.array([p.chi2 for p in self.pairs])

    @property
    def peaks_spiking(self) -> np.ndarray:
        return np.array([p.peak_spiking for p in self.pairs])

    @property
    def peaks_phenom(self) -> np.ndarray:
        return np.array([p.peak_phenom for p in self.pairs])

    def write_sweep_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "value", "chi2", "peak_spiking", "peak_phenom", "n_spikes"])
            for p in self.pairs:
                w.writerow([self.config.sweep_param, repr(p.param), repr(p.chi2), repr(p.peak_spiking),
                            repr(p.peak_phenom), p.n_spikes])

    def write_traces_csv(self, path, index: int) -> None:
        p = self.pairs[index]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "t_ns", "s_spiking", "s_phenom", "phi_soma"])
            w_c = self.config.omega_c
            for k in range(p.t.size):
                w.writerow([repr(float(p.t[k])), repr(float(p.t[k] / w_c)), repr(float(p.spiking[k])),
                            repr(float(p.phenom[k])), repr(float(p.soma_flux[k]))])


def run_comparison_experiment(kind: str, config: Optional[ExperimentConfig] = None,
                              tables: Optional[TableSet] = None) -> ExperimentReport:
    """Run every sweep point of an experiment in both models.

    ``config`` defaults to :func:`default_experiment`. Points are independent
    and reduced in sweep order. For delay sweeps a silent spiking output
    gives ``chi2 = nan``; elsewhere it raises :class:`ZeroReference`.
    """
    cfg = config if config is not None else default_experiment(kind)
    if cfg.kind != kind:
        raise ValidationError(f"config is for {cfg.kind!r}, not {kind!r}", "kind")
    if tables is None:
        tables = load_tables(cfg.gd_path, cfg.gn_paths)
    allow_zero = kind in _DELAY_KINDS
    pairs = []
    for value in cfg.sweep_values:
        point = apply_param(cfg, cfg.sweep_param, value)
        pairs.append(run_pair(point, tables, param=float(value), allow_zero=allow_zero))
    return ExperimentReport(kind, cfg, pairs)


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------


def aperiodic_events(seed: int, n_events: int = 20, first_ns: float = 100.0,
                     isi_range_ns: Tuple[float, float] = (50.0, 1000.0)) -> Tuple[float, ...]:
    """Event times with intervals drawn uniformly from ``isi_range_ns``."""
    rng = np.random.default_rng(seed)
    isi = rng.uniform(isi_range_ns[0], isi_range_ns[1], n_events - 1)
    return tuple(float(x) for x in first_ns + np.concatenate([[0.0], np.cumsum(isi)]))


def default_experiment(kind: str, seed: int = 0) -> ExperimentConfig:
    """Calibrated default circuit and sweep for each experiment kind."""
    b2, b3, b4 = TWO_PI * 1e2, TWO_PI * 1e3, TWO_PI * 1e4
    if kind == "step_response":
        return ExperimentConfig(
            kind, (InputBranch(b3, 250.0, 1.7, coupling=0.7, step=0.5),),
            OutputDendrite(b4, 1250.0, 1.7), sweep_param="tau_out_ns", sweep_values=(1250.0,),
            t_end_ns=2000.0)
    if kind == "single_event":
        return ExperimentConfig(
            kind, (InputBranch(b2, 50.0, 1.7, coupling=0.646, events_ns=(100.0,), amplitude=0.5),),
            OutputDendrite(TWO_PI * 500.0, 50.0, 1.75), sweep_param="tau_out_ns",
            sweep_values=(50.0, 427.0, 6250.0), t_end_ns=5000.0)
    if kind == "bias_sweep":
        return ExperimentConfig(
            kind, (InputBranch(b2, 50.0, 1.7, coupling=0.7, events_ns=(100.0,), amplitude=0.5),),
            OutputDendrite(b2, 250.0, 1.7), sweep_param="i_n", sweep_values=(1.55, 1.7, 1.85),
            t_end_ns=1000.0)
    if kind == "pulse_train_periodic":
        events = tuple(100.0 + 100.0 * k for k in range(7))
        return ExperimentConfig(
            kind, (InputBranch(b2, 150.0, 1.7, coupling=0.6, events_ns=events, amplitude=0.5),),
            OutputDendrite(b3, 1000.0, 1.7), sweep_param="beta_out", sweep_values=(b2, b3, b4),
            t_end_ns=2000.0)
    if kind == "pulse_train_aperiodic":
        return ExperimentConfig(
            kind, (InputBranch(b3, 250.0, 1.7, coupling=0.7, events_ns=aperiodic_events(seed),
                               amplitude=0.5),),
            OutputDendrite(b3, 1250.0, 1.7), sweep_param="tau_out_ns",
            sweep_values=(50.0, 250.0, 1250.0, 6250.0), t_end_ns=12000.0, seed=seed)
    if kind == "coincidence":
        branch = InputBranch(b2, 100.0, 1.55, coupling=0.38, events_ns=(400.0,), amplitude=0.5)
        return ExperimentConfig(
            kind, (branch, branch), OutputDendrite(b2, 1000.0, 1.85), sweep_param="delay_ns",
            sweep_values=tuple(float(x) for x in range(-100, 101, 10)), t_end_ns=2000.0,
            base_time_ns=400.0)
    if kind == "sequence":
        return ExperimentConfig(
            kind, (InputBranch(b2, 250.0, 1.55, coupling=0.46, events_ns=(400.0,), amplitude=0.5),
                   InputBranch(b2, 50.0, 1.55, coupling=0.46, events_ns=(400.0,), amplitude=0.5)),
            OutputDendrite(b2, 1000.0, 1.85), sweep_param="delay_ns",
            sweep_values=tuple(float(x) for x in range(-200, 201, 25)), t_end_ns=2000.0,
            base_time_ns=400.0)
    raise ValidationError(f"unknown experiment kind {kind!r}; expected one of {KINDS}", "kind")
