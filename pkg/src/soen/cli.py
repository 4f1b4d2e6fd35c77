"""Configuration parsing, run orchestration and the ``soen`` command.

Network configs are YAML documents. Times are given in nanoseconds and
converted with ``omega_c`` at parse time; everything else is dimensionless.

.. code-block:: yaml

    omega_c: 1000.0            # rad/ns; dimensionless t = t_ns * omega_c
    engine: phenomenological   # phenomenological | spiking | both
    dt_ns: 0.05                # optional; default min(tau)/100
    t_end_ns: 1000.0
    seed: 0                    # required by stochastic drives
    sources:
      gd: {path: "packaged:gd.sf"}     # or a file path relative to the config
    dendrites:
      - {id: 0, kind: first_order, beta: 6283.185, tau_ns: 250.0, bias: 1.7, source: gd}
    couplings:                 # [target, source, J]
      - [1, 0, 0.5]
    drives:
      - {type: constant, target: 0, value: 0.3}
      - {type: step, target: 0, amplitude: 0.3, t_on_ns: 10.0, t_off_ns: 500.0}
      - {type: samples, target: 0, times_ns: [0, 100], values: [0, 0.4], mode: linear}
      - {type: events, target: 0, times_ns: [100.0], amplitude: 0.5, tau_ns: 50.0}
      - {type: events, target: 0, rate_per_us: 2.0, amplitude: 0.5, tau_ns: 50.0}
    somas:
      - {soma: 1, refractory: 2, t_tx_ns: 5.0, j_ref: -0.35, refractory_impulse: 1.0}
    synapses:
      - {source: 1, target: 3, amplitude: 0.25, tau_ns: 50.0}
    trace: {ids: null, stride: 1}

Drives on the same dendrite add. Every drive is sampled on the step grid,
so the flux seen by step ``p -> p+1`` is the drive at ``t_{p+1}``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .core import (
    DEFAULT_S_CAP,
    CouplingMatrix,
    DendriteKind,
    DendriteSpec,
    FluxDrive,
    InvariantViolation,
    ParseError,
    SoenError,
    SourceFunction,
    ValidationError,
    load_source_function,
    save_source_function,
)
from .engine import DT_DEFAULT_FACTOR, DT_LIMIT_FACTOR, Network, TraceConfig, run
from .spiking import (
    DEFAULT_J_REF,
    DEFAULT_REFRACTORY_IMPULSE,
    DEFAULT_S_THRESHOLD,
    DEFAULT_SYN_AMPLITUDE,
    DEFAULT_SYN_TAU_NS,
    DEFAULT_T_TX_NS,
    SomaSpec,
    SpikingNetwork,
    SynapseSpec,
    run_spiking,
    write_spikes_csv,
)

ENGINES = ("phenomenological", "spiking", "both")
DRIVE_TYPES = ("constant", "step", "samples", "events")
PACKAGED_PREFIX = "packaged:"
HASH_LENGTH = 16

_TOP_KEYS = ("omega_c", "engine", "dt_ns", "t_end_ns", "seed", "s_cap", "sources", "dendrites",
             "couplings", "drives", "somas", "synapses", "trace", "manifest")


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """A validated network run.

    ``resolved`` is the config with every default filled in; it is what the
    manifest records and what the config hash is computed from.
    """

    resolved: Dict[str, Any]
    engine: str
    omega_c: float
    specs: List[DendriteSpec]
    couplings: CouplingMatrix
    sources: Dict[str, SourceFunction]
    drive: FluxDrive
    somas: List[SomaSpec] = field(default_factory=list)
    synapses: List[SynapseSpec] = field(default_factory=list)
    trace: TraceConfig = field(default_factory=TraceConfig)
    dt: float = 0.0
    t_end: float = 0.0
    s_cap: float = DEFAULT_S_CAP

    @property
    def config_hash(self) -> str:
        return config_hash(self.resolved)

    def phenomenological_network(self) -> Network:
        return Network(self.specs, self.couplings, self.sources, drive=self.drive, dt=self.dt,
                       t_end=self.t_end, s_cap=self.s_cap)

    def spiking_network(self) -> SpikingNetwork:
        return SpikingNetwork(self.specs, self.couplings, self.sources, somas=self.somas,
                              synapses=self.synapses, drive=self.drive, dt=self.dt, t_end=self.t_end,
                              s_cap=self.s_cap)


def config_hash(resolved: Mapping) -> str:
    """Digest of a resolved config, independent of key order."""
    body = {k: v for k, v in resolved.items() if k != "manifest"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:HASH_LENGTH]


def _load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}".replace("\n", " ")) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return doc


def _num(d: Mapping, key: str, where: str, default=None, positive=False, required=False) -> Optional[float]:
    if key not in d or d[key] is None:
        if required:
            raise ValidationError("missing value", f"{where}{key}")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(f"expected a number, got {val!r}", f"{where}{key}")
    val = float(val)
    if not math.isfinite(val):
        raise ValidationError("must be finite", f"{where}{key}")
    if positive and not val > 0:
        raise ValidationError(f"must be > 0, got {val}", f"{where}{key}")
    return val


def _int(d: Mapping, key: str, where: str, default=None, required=False) -> Optional[int]:
    if key not in d or d[key] is None:
        if required:
            raise ValidationError("missing value", f"{where}{key}")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValidationError(f"expected an integer, got {val!r}", f"{where}{key}")
    return int(val)


def _check_keys(d, allowed: Sequence[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ValidationError("expected a mapping", where.rstrip("."))
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ValidationError(f"unknown keys {extra}", where.rstrip(".") or extra[0])


def _list(doc: Mapping, key: str) -> list:
    val = doc.get(key)
    if val is None:
        return []
    if not isinstance(val, list):
        raise ValidationError("expected a list", key)
    return val


def resolve_table_path(spec: str, base: Path) -> Path:
    """``packaged:NAME`` or a path relative to ``base``."""
    if spec.startswith(PACKAGED_PREFIX):
        from .analysis.experiments import packaged_table
        return packaged_table(spec[len(PACKAGED_PREFIX):])
    p = Path(spec)
    return p if p.is_absolute() else (base / p)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_sources(doc: Mapping, base: Path):
    raw = doc.get("sources") or {}
    if not isinstance(raw, dict) or not raw:
        raise ValidationError("at least one source function is required", "sources")
    sources, resolved = {}, {}
    for name, entry in raw.items():
        where = f"sources.{name}"
        if isinstance(entry, str):
            entry = {"path": entry}
        _check_keys(entry, ("path", "sha256"), where + ".")
        spec = entry.get("path")
        if not isinstance(spec, str):
            raise ValidationError("missing table path", f"{where}.path")
        path = resolve_table_path(spec, base)
        if not path.is_file():
            raise ValidationError(f"source-function file not found: {path}", f"{where}.path")
        digest = _file_digest(path)
        if entry.get("sha256") not in (None, digest):
            raise ValidationError(f"{path} does not match the recorded digest", f"{where}.sha256")
        try:
            sources[str(name)] = load_source_function(path)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None
        keep = spec if spec.startswith(PACKAGED_PREFIX) else str(path.resolve())
        resolved[str(name)] = {"path": keep, "sha256": digest}
    return sources, resolved


_DENDRITE_KEYS = ("id", "kind", "beta", "tau_ns", "bias", "source", "gamma", "omega_lc_ratio", "s_threshold")


def _parse_dendrites(doc: Mapping, omega_c: float):
    specs, resolved = [], []
    for i, d in enumerate(_list(doc, "dendrites")):
        where = f"dendrites[{i}]."
        _check_keys(d, _DENDRITE_KEYS, where)
        kind = d.get("kind", "first_order")
        if kind not in [k.value for k in DendriteKind]:
            raise ValidationError(f"unknown kind {kind!r}", where + "kind")
        beta = _num(d, "beta", where, required=True, positive=True)
        tau_ns = _num(d, "tau_ns", where, required=True, positive=True)
        gamma = _num(d, "gamma", where, default=1.0 / beta)
        entry = {
            "id": _int(d, "id", where, default=i),
            "kind": kind,
            "beta": beta,
            "tau_ns": tau_ns,
            "bias": _num(d, "bias", where, required=True, positive=True),
            "source": str(d.get("source", "")),
            "gamma": gamma,
            "omega_lc_ratio": _num(d, "omega_lc_ratio", where, default=0.0),
            "s_threshold": _num(d, "s_threshold", where,
                                default=DEFAULT_S_THRESHOLD if kind == "soma" else None),
        }
        if not entry["source"]:
            raise ValidationError("missing source name", where + "source")
        try:
            specs.append(DendriteSpec(entry["id"], DendriteKind(kind), beta, tau_ns * omega_c, entry["bias"],
                                      entry["source"], gamma=gamma, omega_lc_ratio=entry["omega_lc_ratio"],
                                      s_threshold=entry["s_threshold"]))
        except InvariantViolation as exc:
            raise ValidationError(str(exc), where.rstrip(".")) from None
        resolved.append(entry)
    if not specs:
        raise ValidationError("at least one dendrite is required", "dendrites")
    return specs, resolved


def _parse_couplings(doc: Mapping, n: int):
    entries = []
    for k, c in enumerate(_list(doc, "couplings")):
        where = f"couplings[{k}]"
        if not (isinstance(c, list) and len(c) == 3):
            raise ValidationError("expected [target, source, J]", where)
        i, j, w = c
        if not (isinstance(i, int) and isinstance(j, int)) or isinstance(w, bool) \
                or not isinstance(w, (int, float)):
            raise ValidationError("expected [int, int, number]", where)
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"index out of range for {n} dendrites", where)
        entries.append([int(i), int(j), float(w)])
    try:
        J = CouplingMatrix(n, [tuple(e) for e in entries])
    except (InvariantViolation, ValueError) as exc:
        raise ValidationError(str(exc), "couplings") from None
    return J, entries


def _event_times(d: Mapping, where: str, t_end_ns: float, seed: Optional[int]) -> List[float]:
    if "times_ns" in d and d["times_ns"] is not None:
        times = d["times_ns"]
        if not isinstance(times, list):
            raise ValidationError("expected a list", where + "times_ns")
        return [float(x) for x in times]
    rate = _num(d, "rate_per_us", where, required=True, positive=True)
    if seed is None:
        raise ValidationError("random event drives need a seed", "seed")
    # per-drive stream so adding a drive does not shift the others
    stream = _int(d, "stream", where, default=0)
    rng = np.random.default_rng([seed, stream])
    times, t = [], 0.0
    while True:
        t += rng.exponential(1e3 / rate)
        if t >= t_end_ns:
            return times
        times.append(float(t))


def _parse_drives(doc: Mapping, n: int, t_end_ns: float, seed: Optional[int]):
    """Resolved drive entries; random event times are drawn here and recorded."""
    resolved = []
    for k, d in enumerate(_list(doc, "drives")):
        where = f"drives[{k}]."
        if not isinstance(d, dict):
            raise ValidationError("expected a mapping", where.rstrip("."))
        kind = d.get("type")
        if kind not in DRIVE_TYPES:
            raise ValidationError(f"drive type must be one of {DRIVE_TYPES}", where + "type")
        target = _int(d, "target", where, required=True)
        if not 0 <= target < n:
            raise ValidationError(f"target {target} out of range", where + "target")
        if kind == "constant":
            _check_keys(d, ("type", "target", "value"), where)
            entry = {"value": _num(d, "value", where, required=True)}
        elif kind == "step":
            _check_keys(d, ("type", "target", "amplitude", "t_on_ns", "t_off_ns"), where)
            entry = {"amplitude": _num(d, "amplitude", where, required=True),
                     "t_on_ns": _num(d, "t_on_ns", where, default=0.0),
                     "t_off_ns": _num(d, "t_off_ns", where)}
        elif kind == "samples":
            _check_keys(d, ("type", "target", "times_ns", "values", "mode"), where)
            times, values = d.get("times_ns"), d.get("values")
            if not (isinstance(times, list) and isinstance(values, list) and len(times) == len(values) > 0):
                raise ValidationError("times_ns and values must be equal-length lists", where + "values")
            times = [float(x) for x in times]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError("times must be strictly increasing", where + "times_ns")
            mode = d.get("mode", "linear")
            if mode not in FluxDrive.MODES:
                raise ValidationError(f"mode must be one of {FluxDrive.MODES}", where + "mode")
            entry = {"times_ns": times, "values": [float(v) for v in values], "mode": mode}
        else:
            _check_keys(d, ("type", "target", "times_ns", "rate_per_us", "stream", "amplitude", "tau_ns"), where)
            entry = {"times_ns": _event_times(d, where, t_end_ns, seed),
                     "amplitude": _num(d, "amplitude", where, default=DEFAULT_SYN_AMPLITUDE),
                     "tau_ns": _num(d, "tau_ns", where, default=DEFAULT_SYN_TAU_NS, positive=True)}
        resolved.append({"type": kind, "target": target, **entry})
    return resolved


def _drive_column(d: Mapping, t_ns: np.ndarray) -> np.ndarray:
    kind = d["type"]
    if kind == "constant":
        return np.full(t_ns.size, d["value"])
    if kind == "step":
        on = t_ns >= d["t_on_ns"]
        if d["t_off_ns"] is not None:
            on &= t_ns < d["t_off_ns"]
        return np.where(on, d["amplitude"], 0.0)
    if kind == "samples":
        times, values = np.array(d["times_ns"]), np.array(d["values"])
        if d["mode"] == "linear":
            return np.interp(t_ns, times, values)
        idx = np.clip(np.searchsorted(times, t_ns, side="right") - 1, 0, None)
        return values[idx]
    col = np.zeros(t_ns.size)
    for t_ev in d["times_ns"]:
        on = t_ns >= t_ev
        col[on] += d["amplitude"] * np.exp(-(t_ns[on] - t_ev) / d["tau_ns"])
    return col


def build_drive(drives: Sequence[Mapping], n_steps: int, dt: float, omega_c: float) -> FluxDrive:
    """Sum all drives per target and sample them on the step grid."""
    if not drives:
        return FluxDrive.none()
    targets = sorted({d["target"] for d in drives})
    if all(d["type"] == "constant" for d in drives):
        vals = [sum(d["value"] for d in drives if d["target"] == t) for t in targets]
        return FluxDrive.constant(targets, vals)
    t = np.arange(n_steps + 1) * dt
    t_ns = t / omega_c
    values = np.zeros((t.size, len(targets)))
    for d in drives:
        values[:, targets.index(d["target"])] += _drive_column(d, t_ns)
    # sample k covers (t_k - dt/2, t_k + dt/2], so lookups at grid times are exact
    return FluxDrive(targets, t - 0.5 * dt, values, mode="constant")


def _parse_somas(doc: Mapping, omega_c: float):
    somas, resolved = [], []
    for k, d in enumerate(_list(doc, "somas")):
        where = f"somas[{k}]."
        _check_keys(d, ("soma", "refractory", "t_tx_ns", "j_ref", "refractory_impulse"), where)
        entry = {
            "soma": _int(d, "soma", where, required=True),
            "refractory": _int(d, "refractory", where, required=True),
            "t_tx_ns": _num(d, "t_tx_ns", where, default=DEFAULT_T_TX_NS),
            "j_ref": _num(d, "j_ref", where, default=DEFAULT_J_REF),
            "refractory_impulse": _num(d, "refractory_impulse", where, default=DEFAULT_REFRACTORY_IMPULSE),
        }
        try:
            somas.append(SomaSpec(entry["soma"], entry["refractory"], t_tx=entry["t_tx_ns"] * omega_c,
                                  j_ref=entry["j_ref"], refractory_impulse=entry["refractory_impulse"]))
        except InvariantViolation as exc:
            raise ValidationError(str(exc), where.rstrip(".")) from None
        resolved.append(entry)
    return somas, resolved


def _parse_synapses(doc: Mapping, omega_c: float):
    syns, resolved = [], []
    for k, d in enumerate(_list(doc, "synapses")):
        where = f"synapses[{k}]."
        _check_keys(d, ("source", "target", "amplitude", "tau_ns"), where)
        entry = {
            "source": _int(d, "source", where, required=True),
            "target": _int(d, "target", where, required=True),
            "amplitude": _num(d, "amplitude", where, default=DEFAULT_SYN_AMPLITUDE),
            "tau_ns": _num(d, "tau_ns", where, default=DEFAULT_SYN_TAU_NS, positive=True),
        }
        try:
            syns.append(SynapseSpec(entry["source"], entry["target"], amplitude=entry["amplitude"],
                                    tau=entry["tau_ns"] * omega_c))
        except InvariantViolation as exc:
            raise ValidationError(str(exc), where.rstrip(".")) from None
        resolved.append(entry)
    return syns, resolved


# engine field names -> config field names
_FIELD_MAP = {"dt": "dt_ns", "t_end": "t_end_ns", "workers": "workers"}


def _config_field(name: Optional[str]) -> Optional[str]:
    if name is None:
        return None
    if name in _FIELD_MAP:
        return _FIELD_MAP[name]
    return (name.replace(".source_id", ".source").replace(".soma_id", ".soma")
            .replace(".refractory_id", ".refractory"))


def parse_config_dict(doc: Mapping, base: Path = Path(".")) -> RunConfig:
    """Validate a config mapping; relative table paths resolve against ``base``."""
    _check_keys(dict(doc), _TOP_KEYS, "")
    omega_c = _num(doc, "omega_c", "", default=1000.0, positive=True)
    engine = doc.get("engine", "phenomenological")
    if engine not in ENGINES:
        raise ValidationError(f"engine must be one of {ENGINES}", "engine")
    t_end_ns = _num(doc, "t_end_ns", "", required=True)
    if t_end_ns < 0:
        raise ValidationError("must be >= 0", "t_end_ns")
    seed = _int(doc, "seed", "")
    s_cap = _num(doc, "s_cap", "", default=DEFAULT_S_CAP, positive=True)
    sources, src_resolved = _parse_sources(doc, base)
    specs, den_resolved = _parse_dendrites(doc, omega_c)
    n = len(specs)
    J, coup_resolved = _parse_couplings(doc, n)
    tau_min_ns = min(d["tau_ns"] for d in den_resolved)
    dt_ns = _num(doc, "dt_ns", "", default=tau_min_ns / DT_DEFAULT_FACTOR, positive=True)
    dt = dt_ns * omega_c
    n_steps = int(round(t_end_ns / dt_ns))
    drives = _parse_drives(doc, n, t_end_ns, seed)
    somas, soma_resolved = _parse_somas(doc, omega_c)
    syns, syn_resolved = _parse_synapses(doc, omega_c)
    if engine == "phenomenological" and (somas or syns):
        raise ValidationError("somas and synapses need the spiking engine", "engine")
    if engine == "both" and (somas or syns):
        raise ValidationError("engine 'both' compares identical networks; somas have no "
                              "phenomenological counterpart here", "engine")
    tr = doc.get("trace") or {}
    _check_keys(tr, ("ids", "stride"), "trace.")
    ids = tr.get("ids")
    if ids is not None and not (isinstance(ids, list) and all(isinstance(i, int) for i in ids)):
        raise ValidationError("expected a list of dendrite ids", "trace.ids")
    trace = TraceConfig(ids=ids, stride=_int(tr, "stride", "trace.", default=1))
    try:
        trace.resolve(n)
    except ValidationError as exc:
        raise ValidationError(exc.message, exc.field) from None
    resolved = {
        "omega_c": omega_c, "engine": engine, "dt_ns": dt_ns, "t_end_ns": t_end_ns, "seed": seed,
        "s_cap": s_cap, "sources": src_resolved, "dendrites": den_resolved, "couplings": coup_resolved,
        "drives": drives, "somas": soma_resolved, "synapses": syn_resolved,
        "trace": {"ids": ids, "stride": trace.stride},
    }
    cfg = RunConfig(resolved, engine, omega_c, specs, J, sources,
                    build_drive(drives, n_steps, dt, omega_c), somas, syns, trace,
                    dt=dt, t_end=n_steps * dt, s_cap=s_cap)
    # network construction runs the engine's own checks (dt stability, kinds, references)
    try:
        if engine == "phenomenological":
            cfg.phenomenological_network()
        else:
            cfg.spiking_network()
    except ValidationError as exc:
        raise ValidationError(exc.message, _config_field(exc.field)) from None
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a YAML network config."""
    path = Path(path)
    return parse_config_dict(_load_yaml(path), base=path.resolve().parent)


# ---------------------------------------------------------------------------
# runs and manifests
# ---------------------------------------------------------------------------


def _write_yaml(path: Path, doc: Mapping) -> None:
    path.write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100))


def _manifest_info(kind: str, outputs: Sequence[str], workers: int, **extra) -> dict:
    import numba
    info = {"command": kind, "version": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "workers": workers, "outputs": list(outputs)}
    info.update(extra)
    return info


def _run_dir(out: Path, digest: str) -> Path:
    d = Path(out) / digest
    d.mkdir(parents=True, exist_ok=True)
    return d


def execute_run(cfg: RunConfig, out: Path, workers: Optional[int] = None) -> Path:
    """Run ``cfg`` and write traces, spikes and manifest under ``out/<hash>``."""
    from .engine import resolve_workers
    nw = resolve_workers(workers)
    d = _run_dir(out, cfg.config_hash)
    outputs = []
    if cfg.engine in ("phenomenological", "both"):
        tb = run(cfg.phenomenological_network(), trace=cfg.trace, workers=nw)
        name = "trace.csv" if cfg.engine == "phenomenological" else "trace_phenomenological.csv"
        tb.to_csv(d / name, cfg.omega_c)
        outputs.append(name)
    if cfg.engine in ("spiking", "both"):
        tb, spikes = run_spiking(cfg.spiking_network(), trace=cfg.trace)
        name = "trace.csv" if cfg.engine == "spiking" else "trace_spiking.csv"
        tb.to_csv(d / name, cfg.omega_c)
        write_spikes_csv(spikes, d / "spikes.csv", cfg.omega_c)
        outputs += [name, "spikes.csv"]
    manifest = dict(cfg.resolved)
    manifest["manifest"] = _manifest_info(
        "run", outputs, nw, config_hash=cfg.config_hash, dt=cfg.dt, t_end=cfg.t_end,
        n_steps=int(round(cfg.t_end / cfg.dt)) if cfg.dt else 0,
        dt_default_factor=DT_DEFAULT_FACTOR, dt_limit_factor=DT_LIMIT_FACTOR,
        source_meta={name: dict(sf.meta) for name, sf in cfg.sources.items()})
    _write_yaml(d / "manifest.yaml", manifest)
    return d


def _deep_merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def experiment_config(kind: str, overrides: Optional[Mapping] = None):
    """Default experiment of ``kind`` with YAML-style overrides merged in."""
    from .analysis.experiments import ExperimentConfig, KINDS, default_experiment
    if kind not in KINDS:
        raise ValidationError(f"unknown experiment kind {kind!r}; expected one of {list(KINDS)}", "kind")
    over = {k: v for k, v in (overrides or {}).items() if k != "manifest"}
    if "kind" in over and over["kind"] != kind:
        raise ValidationError(f"config is for {over['kind']!r}, not {kind!r}", "kind")
    seed = over.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ValidationError("expected an integer", "seed")
    base = default_experiment(kind, seed=0 if seed is None else seed).to_dict()
    return ExperimentConfig.from_dict(_deep_merge(base, over))


def execute_experiment(kind: str, overrides: Optional[Mapping], out: Path, base: Path = Path("."),
                       workers: Optional[int] = None) -> Path:
    """Run an experiment sweep; writes sweep.csv, one traces file per point and the manifest."""
    from dataclasses import replace

    from .analysis.experiments import load_tables, run_comparison_experiment
    from .engine import resolve_workers
    nw = resolve_workers(workers)
    cfg = experiment_config(kind, overrides)
    if cfg.gd_path:
        cfg = replace(cfg, gd_path=str(resolve_table_path(cfg.gd_path, base)))
    if cfg.gn_paths:
        cfg = replace(cfg, gn_paths=tuple(str(resolve_table_path(p, base)) for p in cfg.gn_paths))
    tables = load_tables(cfg.gd_path, cfg.gn_paths)
    resolved = cfg.to_dict()
    digest = config_hash({"experiment": resolved,
                          "tables": [_file_digest(Path(p)) for p in tables.paths]})
    d = _run_dir(out, digest)
    if nw > 1:
        os.environ["SOEN_WORKERS"] = str(nw)
    report = run_comparison_experiment(kind, cfg, tables)
    outputs = ["sweep.csv"]
    report.write_sweep_csv(d / "sweep.csv")
    for k in range(len(report.pairs)):
        name = f"traces_{k:03d}.csv"
        report.write_traces_csv(d / name, k)
        outputs.append(name)
    manifest = dict(resolved)
    manifest["manifest"] = _manifest_info(
        "experiment", outputs, nw, config_hash=digest, dt=cfg.dt,
        s_cap=DEFAULT_S_CAP, dt_limit_factor=DT_LIMIT_FACTOR,
        tables={p: {"sha256": _file_digest(Path(p)), "meta": dict(sf.meta)}
                for p, sf in zip(tables.paths, [tables.gd] + list(tables.gn.values()))})
    _write_yaml(d / "manifest.yaml", manifest)
    return d


# ---------------------------------------------------------------------------
# table generation
# ---------------------------------------------------------------------------


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}", "biases") from None


def _grid(n: int, hi: float, name: str) -> np.ndarray:
    if n < 2:
        raise ValidationError("grid needs at least 2 points", name)
    return np.linspace(0.0, hi, n)


def execute_gen_sf(args) -> Path:
    from .oracle import MeasurementBudget, SquidCircuitParams, generate_dendrite_source
    circuit = SquidCircuitParams(beta_L=args.beta_l, beta_C=args.beta_c, dt_jj=args.dt_jj)
    budget = MeasurementBudget(window=args.window, max_window=args.max_window, min_slips=args.min_slips,
                               drift_tol=args.drift_tol)
    params = {"phi_n": args.phi_n, "phi_max": args.phi_max, "s_n": args.s_n, "s_max": args.s_max,
              "biases": _floats(args.biases), "beta_l": args.beta_l, "beta_c": args.beta_c,
              "dt_jj": args.dt_jj, "window": args.window, "max_window": args.max_window,
              "min_slips": args.min_slips, "drift_tol": args.drift_tol,
              "transient_fraction": budget.transient_fraction, "static_velocity": budget.static_velocity}
    sf = generate_dendrite_source(_grid(args.phi_n, args.phi_max, "phi_n"), _grid(args.s_n, args.s_max, "s_n"),
                                  params["biases"], circuit, budget)
    return _write_table("gen-sf", params, sf, args)


def execute_gen_nsf(args) -> Path:
    from .oracle import NeuronSourceConfig, generate_neuron_source
    gd_path = resolve_table_path(args.gd, Path("."))
    if not gd_path.is_file():
        raise ValidationError(f"source-function file not found: {gd_path}", "gd")
    gd = load_source_function(gd_path)
    ncfg = NeuronSourceConfig.from_ns(
        args.omega_c, soma_bias=args.soma_bias, soma_beta=args.soma_beta, soma_tau_ns=args.soma_tau_ns,
        s_threshold=args.s_threshold, j_ref=args.j_ref, refractory_impulse=args.refractory_impulse,
        t_tx_ns=args.t_tx_ns, syn_amplitude=args.syn_amplitude, syn_tau_ns=args.syn_tau_ns,
        dt_ns=args.dt_ns, run_time_ns=args.run_time_ns, max_run_time_ns=args.max_run_time_ns)
    params = {"gd": args.gd, "gd_sha256": _file_digest(gd_path), "omega_c": args.omega_c,
              "phi_n": args.phi_n, "phi_max": args.phi_max, "s_n": args.s_n, "s_max": args.s_max,
              "dendrite_biases": _floats(args.dendrite_biases),
              "neuron": {k: getattr(ncfg, k) for k in ncfg.__dataclass_fields__}}
    sf = generate_neuron_source(_grid(args.phi_n, args.phi_max, "phi_n"), _grid(args.s_n, args.s_max, "s_n"),
                                params["dendrite_biases"], gd, ncfg)
    return _write_table("gen-nsf", params, sf, args)


def _write_table(kind: str, params: dict, sf: SourceFunction, args) -> Path:
    digest = config_hash({"command": kind, **params})
    d = _run_dir(Path(args.out), digest)
    save_source_function(sf, d / args.name)
    manifest = {"parameters": params,
                "manifest": _manifest_info(kind, [args.name], 1, config_hash=digest,
                                           sha256=_file_digest(d / args.name))}
    _write_yaml(d / "manifest.yaml", manifest)
    return d


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soen", description="Superconducting optoelectronic network simulators.")
    p.add_argument("--version", action="version", version=f"soen {__version__}")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: $SOEN_WORKERS or 1); results do not depend on it")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a network config without running it")
    v.add_argument("config")
    v.add_argument("--echo", action="store_true", help="print the resolved config as YAML")

    r = sub.add_parser("run", help="run a network config (or a run manifest)")
    r.add_argument("config")
    r.add_argument("--out", default="runs", help="parent directory of the per-run directory")

    e = sub.add_parser("experiment", help="run a spiking vs phenomenological comparison sweep")
    e.add_argument("kind")
    e.add_argument("config", nargs="?", help="YAML overrides of the default experiment (or a manifest)")
    e.add_argument("--out", default="runs")

    g = sub.add_parser("gen-sf", help="tabulate a dendrite source function from the SQUID circuit")
    g.add_argument("--phi-n", type=int, default=101)
    g.add_argument("--phi-max", type=float, default=0.5)
    g.add_argument("--s-n", type=int, default=101)
    g.add_argument("--s-max", type=float, default=1.0)
    g.add_argument("--biases", default="1.55,1.6,1.65,1.7,1.75,1.8,1.85")
    g.add_argument("--beta-l", type=float, default=1.0)
    g.add_argument("--beta-c", type=float, default=0.3)
    g.add_argument("--dt-jj", type=float, default=0.01)
    g.add_argument("--window", type=float, default=200.0)
    g.add_argument("--max-window", type=float, default=20000.0)
    g.add_argument("--min-slips", type=int, default=8)
    g.add_argument("--drift-tol", type=float, default=0.01)
    g.add_argument("--name", default="gd.sf")
    g.add_argument("--out", default="runs")

    n = sub.add_parser("gen-nsf", help="tabulate a neuron source function from the spiking soma")
    n.add_argument("--gd", default=PACKAGED_PREFIX + "gd.sf")
    n.add_argument("--omega-c", type=float, default=1000.0)
    n.add_argument("--phi-n", type=int, default=101)
    n.add_argument("--phi-max", type=float, default=0.5)
    n.add_argument("--s-n", type=int, default=101)
    n.add_argument("--s-max", type=float, default=1.0)
    n.add_argument("--dendrite-biases", default="1.55,1.6,1.65,1.7,1.75,1.8,1.85")
    n.add_argument("--soma-bias", type=float, default=1.7)
    n.add_argument("--soma-beta", type=float, default=2 * math.pi * 1e3)
    n.add_argument("--soma-tau-ns", type=float, default=50.0)
    n.add_argument("--s-threshold", type=float, default=0.2)
    n.add_argument("--j-ref", type=float, default=DEFAULT_J_REF)
    n.add_argument("--refractory-impulse", type=float, default=DEFAULT_REFRACTORY_IMPULSE)
    n.add_argument("--t-tx-ns", type=float, default=DEFAULT_T_TX_NS)
    n.add_argument("--syn-amplitude", type=float, default=DEFAULT_SYN_AMPLITUDE)
    n.add_argument("--syn-tau-ns", type=float, default=DEFAULT_SYN_TAU_NS)
    n.add_argument("--dt-ns", type=float, default=0.05)
    n.add_argument("--run-time-ns", type=float, default=4000.0)
    n.add_argument("--max-run-time-ns", type=float, default=64000.0)
    n.add_argument("--name", default="gn.sf")
    n.add_argument("--out", default="runs")
    return p


def _error_line(exc: BaseException) -> str:
    message = getattr(exc, "message", None) or str(exc)
    return json.dumps({"error": type(exc).__name__, "field": getattr(exc, "field", None),
                       "message": message.replace("\n", " ")})


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the ``soen`` command; returns the exit code.

    Failures print one JSON line ``{"error", "field", "message"}`` to stderr.
    """
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        if code != 0:
            print(json.dumps({"error": "UsageError", "field": None, "message": "invalid arguments"}),
                  file=sys.stderr)
        return code
    try:
        if args.workers is not None and args.workers < 1:
            raise ValidationError("worker count must be >= 1", "workers")
        if args.command == "validate":
            cfg = parse_config(args.config)
            if args.echo:
                sys.stdout.write(yaml.safe_dump(cfg.resolved, sort_keys=False, default_flow_style=None))
            else:
                print(cfg.config_hash)
            return 0
        if args.command == "run":
            out = execute_run(parse_config(args.config), Path(args.out), args.workers)
        elif args.command == "experiment":
            over, base = {}, Path(".")
            if args.config:
                over = _load_yaml(args.config)
                base = Path(args.config).resolve().parent
            out = execute_experiment(args.kind, over, Path(args.out), base, args.workers)
        elif args.command == "gen-sf":
            out = execute_gen_sf(args)
        else:
            out = execute_gen_nsf(args)
        print(out)
        return 0
    except (SoenError, OSError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
