"""Domain types shared by every simulator module.

All state is dimensionless. Time is measured in units of 1/omega_c, where
omega_c is the characteristic junction frequency; physical nanoseconds only
appear at the I/O boundary (see :func:`ns_to_dimensionless`).

Source functions are tabulated rates g(phi, s; i_b) stored as a 3-D array
indexed ``(bias, phi, s)`` and evaluated by trilinear interpolation after
folding the flux by symmetry (phi -> |phi|) and clamping |phi| to 0.5.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

#: Characteristic junction frequency in rad/ns (I_c r_jj ~ 0.33 mV).
DEFAULT_OMEGA_C = 1000.0
#: Largest physically meaningful flux magnitude; queries beyond are clamped.
PHI_MAX = 0.5
#: Saturation guard on |s| for every dendrite.
DEFAULT_S_CAP = 2.0

FORMAT_MAGIC = "soen-sf"
FORMAT_VERSION = "v1"


class SoenError(Exception):
    """Base class for all simulator errors."""


class ParseError(SoenError, ValueError):
    pass


class InvariantViolation(SoenError, ValueError):
    pass


class BiasOutOfRange(SoenError, ValueError):
    pass


class ValidationError(SoenError, ValueError):
    """Invalid configuration; ``field`` is a dotted path to the offending value."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.message = message
        self.field = field


class NonFiniteState(SoenError, FloatingPointError):
    """Raised when an integrator produces a non-finite or runaway state."""

    def __init__(self, message: str, t: Optional[float] = None):
        super().__init__(message if t is None else f"{message} (t={t!r})")
        self.t = t


def ns_to_dimensionless(t_ns, omega_c: float = DEFAULT_OMEGA_C):
    """Convert nanoseconds to dimensionless time t' = omega_c * t."""
    return np.multiply(t_ns, omega_c) if isinstance(t_ns, np.ndarray) else t_ns * omega_c


def dimensionless_to_ns(t, omega_c: float = DEFAULT_OMEGA_C):
    return np.divide(t, omega_c) if isinstance(t, np.ndarray) else t / omega_c


# ---------------------------------------------------------------------------
# Dendrites
# ---------------------------------------------------------------------------


class DendriteKind(enum.Enum):
    FIRST_ORDER = "first_order"
    SECOND_ORDER = "second_order"
    SOMA = "soma"
    REFRACTORY = "refractory"


@dataclass(frozen=True)
class DendriteSpec:
    """Parameters of one dendrite (integration loop plus its SQUID).

    ``gamma`` defaults to ``1/beta``. ``s_threshold`` must be given exactly
    when ``kind`` is SOMA.
    """

    id: int
    kind: DendriteKind
    beta: float
    tau: float
    bias: float
    source_id: str
    gamma: Optional[float] = None
    omega_lc_ratio: float = 0.0
    s_threshold: Optional[float] = None

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, DendriteKind) else DendriteKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InvariantViolation(f"dendrite {self.id}: beta must be > 0, got {self.beta}")
        if self.gamma is None:
            object.__setattr__(self, "gamma", 1.0 / self.beta)
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvariantViolation(f"dendrite {self.id}: tau must be > 0, got {self.tau}")
        if not self.bias > 0:
            raise InvariantViolation(f"dendrite {self.id}: bias must be > 0, got {self.bias}")
        if abs(self.gamma * self.beta - 1.0) > 1e-12:
            raise InvariantViolation(f"dendrite {self.id}: gamma*beta must equal 1")
        if self.omega_lc_ratio < 0:
            raise InvariantViolation(f"dendrite {self.id}: omega_lc_ratio must be >= 0")
        if (self.s_threshold is not None) != (kind is DendriteKind.SOMA):
            raise InvariantViolation(
                f"dendrite {self.id}: s_threshold is required for somas and only for somas"
            )

    @property
    def alpha(self) -> float:
        return self.beta / self.tau


# ---------------------------------------------------------------------------
# Source functions
# ---------------------------------------------------------------------------


class SourceKind(enum.Enum):
    DENDRITE = "dendrite"
    NEURON = "neuron"


def _as_grid(name: str, values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvariantViolation(f"{name} grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(f"{name} grid has non-finite entries")
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise InvariantViolation(f"{name} grid must be strictly increasing")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SourceFunction:
    """Tabulated rate g(phi, s; i_b).

    Parameters
    ----------
    phi_grid, s_grid, bias_grid : array_like
        Strictly increasing grids. ``phi_grid`` must cover [0, 0.5].
    values : array_like, shape (len(bias_grid), len(phi_grid), len(s_grid))
        Non-negative rates (flux quanta per unit time, times 2 pi).
    kind : SourceKind
        DENDRITE tables must also be nonincreasing in s.
    meta : dict
        Free-form provenance (persisted through file comments).
    """

    phi_grid: np.ndarray
    s_grid: np.ndarray
    bias_grid: np.ndarray
    values: np.ndarray
    kind: SourceKind = SourceKind.DENDRITE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", SourceKind(self.kind))
        phi = _as_grid("phi", self.phi_grid)
        s = _as_grid("s", self.s_grid)
        bias = _as_grid("bias", self.bias_grid)
        vals = np.array(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "phi_grid", phi)
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "bias_grid", bias)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})
        self.validate()

    def validate(self) -> None:
        """Check every table invariant; raises :class:`InvariantViolation`."""
        phi, s, vals = self.phi_grid, self.s_grid, self.values
        expected = (self.bias_grid.size, phi.size, s.size)
        if vals.shape != expected:
            raise InvariantViolation(f"values shape {vals.shape} != grid shape {expected}")
        if phi[0] > 0.0 or phi[-1] < PHI_MAX:
            raise InvariantViolation("phi grid must span at least [0, 0.5]")
        if s[0] > 0.0:
            raise InvariantViolation("s grid must start at or below 0")
        if not np.all(np.isfinite(vals)):
            raise InvariantViolation("table has non-finite entries")
        if np.any(vals < 0):
            b, p, q = np.argwhere(vals < 0)[0]
            raise InvariantViolation(f"negative rate at (bias={bias_at(self, b)}, phi={phi[p]}, s={s[q]})")
        # monotonicity is only demanded on the physical branch phi in [0, 0.5]
        sub = vals[:, (phi >= 0.0) & (phi <= PHI_MAX), :]
        if sub.shape[1] > 1:
            dphi = np.diff(sub, axis=1)
            if np.any(dphi < 0):
                b, p, q = np.argwhere(dphi < 0)[0]
                raise InvariantViolation(
                    f"g decreases in phi at bias={bias_at(self, b)}, s={s[q]} (node {p})"
                )
        if self.kind is SourceKind.DENDRITE and s.size > 1:
            ds = np.diff(vals, axis=2)
            if np.any(ds > 0):
                b, p, q = np.argwhere(ds > 0)[0]
                raise InvariantViolation(
                    f"dendrite g increases in s at bias={bias_at(self, b)}, phi={phi[p]} (node {q})"
                )

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def bias_weights(self, bias: float) -> tuple:
        """Return ``(k, w)`` so the bias plane is ``(1-w)*values[k] + w*values[k+1]``."""
        grid = self.bias_grid
        tol = 1e-12 * max(1.0, abs(bias))
        if not (grid[0] - tol <= bias <= grid[-1] + tol):
            raise BiasOutOfRange(f"bias {bias} outside table hull [{grid[0]}, {grid[-1]}]")
        if grid.size == 1:
            return 0, 0.0
        k = int(np.clip(np.searchsorted(grid, bias, side="right") - 1, 0, grid.size - 2))
        w = (bias - grid[k]) / (grid[k + 1] - grid[k])
        return k, float(min(max(w, 0.0), 1.0))

    def plane(self, bias: float) -> np.ndarray:
        """The (phi, s) table at ``bias``, linearly blended between bias planes."""
        k, w = self.bias_weights(bias)
        if w == 0.0:
            return self.values[k].copy()
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def __call__(self, bias: float, phi, s):
        return evaluate_source(self, bias, phi, s)


def bias_at(sf: SourceFunction, k: int) -> float:
    return float(sf.bias_grid[k])


def _cell(grid: np.ndarray, x: np.ndarray):
    """Lower cell index and fractional position of clamped queries ``x``."""
    if grid.size == 1:
        return np.zeros(x.shape, dtype=np.intp), np.zeros(x.shape)
    x = np.clip(x, grid[0], grid[-1])
    k = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    f = (x - grid[k]) / (grid[k + 1] - grid[k])
    return k, f


def fold_flux(phi):
    """Fold flux by symmetry and clamp to the physical range [0, 0.5]."""
    return np.minimum(np.abs(phi), PHI_MAX)


def _bilinear(table: np.ndarray, phi_grid, s_grid, phi, s) -> np.ndarray:
    kp, fp = _cell(phi_grid, phi)
    ks, fs = _cell(s_grid, s)
    if phi_grid.size == 1:
        kp1 = kp
    else:
        kp1 = kp + 1
    ks1 = ks if s_grid.size == 1 else ks + 1
    g00 = table[kp, ks]
    g01 = table[kp, ks1]
    g10 = table[kp1, ks]
    g11 = table[kp1, ks1]
    lo = g00 + fs * (g01 - g00)
    hi = g10 + fs * (g11 - g10)
    return lo + fp * (hi - lo)


def evaluate_source(sf: SourceFunction, bias: float, phi, s):
    """Trilinear interpolation of g at ``(bias, phi, s)``.

    ``phi`` is folded to |phi| and clamped to 0.5; ``s`` is clamped to the
    s-grid hull. ``bias`` is never extrapolated (:class:`BiasOutOfRange`).
    Scalars in, float out; arrays broadcast.
    """
    k, w = sf.bias_weights(bias)
    phi_a, s_a = np.broadcast_arrays(np.asarray(phi, dtype=np.float64), np.asarray(s, dtype=np.float64))
    ph = fold_flux(phi_a)
    if not (np.all(np.isfinite(ph)) and np.all(np.isfinite(s_a))):
        raise ValueError("phi and s must be finite")
    out = _bilinear(sf.values[k], sf.phi_grid, sf.s_grid, ph, s_a)
    if w > 0.0:
        hi = _bilinear(sf.values[k + 1], sf.phi_grid, sf.s_grid, ph, s_a)
        out = (1.0 - w) * out + w * hi
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def max_slope(sf: SourceFunction) -> float:
    """Largest finite-difference slope of the table along phi or s."""
    v = sf.values
    slopes = [0.0]
    if sf.phi_grid.size > 1:
        slopes.append(np.max(np.abs(np.diff(v, axis=1)) / np.diff(sf.phi_grid)[None, :, None]))
    if sf.s_grid.size > 1:
        slopes.append(np.max(np.abs(np.diff(v, axis=2)) / np.diff(sf.s_grid)[None, None, :]))
    return float(max(slopes))


# ---------------------------------------------------------------------------
# Table file format
# ---------------------------------------------------------------------------
#
#   soen-sf v1 <kind>
#   bias <k> v1 ... vk
#   phi <m> ...
#   s <n> ...
#   k*m lines of n rates, row-major over (bias, phi)
#
# ``#`` starts a comment. Lines of the form ``#@ key value`` carry metadata.


def _fmt(x: float) -> str:
    return "%.17g" % x


def save_source_function(sf: SourceFunction, path) -> None:
    if min(sf.values.shape) == 0:
        raise InvariantViolation("refusing to write an empty table")
    sf.validate()
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION} {sf.kind.value}"]
    for key in sorted(sf.meta):
        value = sf.meta[key].replace("\n", " ")
        lines.append(f"#@ {key} {value}")
    for name, grid in (("bias", sf.bias_grid), ("phi", sf.phi_grid), ("s", sf.s_grid)):
        lines.append(" ".join([name, str(grid.size)] + [_fmt(v) for v in grid]))
    for plane in sf.values:
        for row in plane:
            lines.append(" ".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _parse_floats(tokens: Sequence[str], where: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


def _parse_grid(line: str, name: str, lineno: int) -> np.ndarray:
    tokens = line.split()
    if not tokens or tokens[0] != name:
        raise ParseError(f"line {lineno}: expected '{name} <count> ...'")
    try:
        count = int(tokens[1])
    except (IndexError, ValueError):
        raise ParseError(f"line {lineno}: bad {name} count") from None
    values = _parse_floats(tokens[2:], f"line {lineno}")
    if count < 1 or values.size != count:
        raise ParseError(f"line {lineno}: {name} declares {count} values, found {values.size}")
    if not np.all(np.isfinite(values)):
        raise ParseError(f"line {lineno}: non-finite {name} grid value")
    if values.size > 1 and not np.all(np.diff(values) > 0):
        raise ParseError(f"line {lineno}: {name} grid must be strictly increasing (no duplicates)")
    return values


def _content_lines(text: str) -> Iterable[tuple]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.startswith("#@"):
            yield lineno, raw, True
            continue
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line, False


def load_source_function(path) -> SourceFunction:
    """Read and validate a table written by :func:`save_source_function`."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    meta = {}
    body = []
    for lineno, line, is_meta in _content_lines(text):
        if is_meta:
            parts = line[2:].strip().split(None, 1)
            if parts:
                meta[parts[0]] = parts[1] if len(parts) > 1 else ""
        else:
            body.append((lineno, line))
    if len(body) < 4:
        raise ParseError(f"{path}: truncated header")
    lineno, header = body[0]
    head = header.split()
    if len(head) != 3 or head[0] != FORMAT_MAGIC or head[1] != FORMAT_VERSION:
        raise ParseError(f"line {lineno}: expected '{FORMAT_MAGIC} {FORMAT_VERSION} <kind>'")
    try:
        kind = SourceKind(head[2])
    except ValueError:
        raise ParseError(f"line {lineno}: unknown table kind {head[2]!r}") from None
    bias = _parse_grid(body[1][1], "bias", body[1][0])
    phi = _parse_grid(body[2][1], "phi", body[2][0])
    s = _parse_grid(body[3][1], "s", body[3][0])
    rows = body[4:]
    if len(rows) != bias.size * phi.size:
        raise ParseError(
            f"{path}: expected {bias.size * phi.size} rate rows, found {len(rows)}"
        )
    values = np.empty((bias.size, phi.size, s.size))
    for idx, (lineno, line) in enumerate(rows):
        row = _parse_floats(line.split(), f"line {lineno}")
        if row.size != s.size:
            raise ParseError(f"line {lineno}: expected {s.size} rates, found {row.size}")
        values[idx // phi.size, idx % phi.size] = row
    return SourceFunction(phi, s, bias, values, kind=kind, meta=meta)


# ---------------------------------------------------------------------------
# Coupling, state, drives
# ---------------------------------------------------------------------------


class CouplingMatrix:
    """Sparse static coupling J, stored in compressed-row form.

    ``J[i, j]`` is the flux into dendrite ``i`` per unit signal in ``j``.
    """

    def __init__(self, n: int, entries: Iterable = ()):
        self.n = int(n)
        rows, cols, vals = [], [], []
        for i, j, w in entries:
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(w))
        self._build(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                    np.array(vals, dtype=np.float64))

    @classmethod
    def from_arrays(cls, n: int, rows, cols, values) -> "CouplingMatrix":
        obj = cls.__new__(cls)
        obj.n = int(n)
        obj._build(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
                   np.asarray(values, dtype=np.float64))
        return obj

    def _build(self, rows, cols, vals):
        n = self.n
        if n < 0:
            raise InvariantViolation("coupling size must be >= 0")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise InvariantViolation("coupling index out of range")
        if not np.all(np.isfinite(vals)):
            raise InvariantViolation("coupling weights must be finite")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                k = int(np.argmax(dup))
                raise InvariantViolation(f"duplicate coupling entry ({rows[k]}, {cols[k]})")
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, rows + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.indices = cols
        self.data = vals
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @property
    def entries(self) -> list:
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return [(int(i), int(j), float(w)) for i, j, w in zip(rows, self.indices, self.data)]

    def row(self, i: int) -> tuple:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def with_entries(self, extra: Iterable) -> "CouplingMatrix":
        """A new matrix with ``extra`` entries appended (duplicates rejected)."""
        return CouplingMatrix(self.n, list(self.entries) + list(extra))

    def dot(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out = np.zeros(self.n)
        np.add.at(out, rows, self.data * s[self.indices])
        return out

    def todense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        for i, j, w in self.entries:
            dense[i, j] = w
        return dense


@dataclass
class NetworkState:
    """Mutable network state, owned by one integrator at a time.

    ``aux`` holds the integrated charge of SECOND_ORDER dendrites and is
    ``None`` for networks without any.
    """

    t: float
    s: np.ndarray
    aux: Optional[np.ndarray] = None
    step_index: int = 0
    s_cap: float = DEFAULT_S_CAP

    def __post_init__(self):
        self.s = np.array(self.s, dtype=np.float64)
        if self.aux is not None:
            self.aux = np.array(self.aux, dtype=np.float64)
            if self.aux.shape != self.s.shape:
                raise InvariantViolation("aux must match s in length")
        self.check()

    @classmethod
    def zeros(cls, n: int, second_order: bool = False, t: float = 0.0) -> "NetworkState":
        return cls(t=t, s=np.zeros(n), aux=np.zeros(n) if second_order else None)

    def check(self) -> None:
        if not np.all(np.isfinite(self.s)) or (self.aux is not None and not np.all(np.isfinite(self.aux))):
            raise NonFiniteState("non-finite signal", self.t)
        if self.s.size and np.max(np.abs(self.s)) > self.s_cap:
            raise NonFiniteState(f"signal exceeded saturation guard {self.s_cap}", self.t)

    def copy(self) -> "NetworkState":
        return NetworkState(self.t, self.s.copy(), None if self.aux is None else self.aux.copy(),
                            self.step_index, self.s_cap)


class FluxDrive:
    """External flux time series on a subset of dendrites.

    ``values[k, c]`` is the flux on dendrite ``targets[c]`` at ``times[k]``.
    ``mode`` is ``"linear"`` (piecewise-linear) or ``"constant"``
    (piecewise-constant, value of the last sample at or before t). Outside
    the sampled span the end values are held.
    """

    MODES = ("linear", "constant")

    def __init__(self, targets: Sequence[int], times, values, mode: str = "linear"):
        self.targets = np.array(targets, dtype=np.int64).reshape(-1)
        self.times = np.array(times, dtype=np.float64).reshape(-1)
        vals = np.array(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1) if self.targets.size == 1 else vals.reshape(1, -1)
        self.values = vals
        if mode not in self.MODES:
            raise InvariantViolation(f"drive mode must be one of {self.MODES}")
        self.mode = mode
        if self.times.size == 0:
            raise InvariantViolation("drive needs at least one sample")
        if self.values.shape != (self.times.size, self.targets.size):
            raise InvariantViolation(
                f"drive values shape {self.values.shape} != ({self.times.size}, {self.targets.size})"
            )
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise InvariantViolation("drive sample times must be strictly increasing")
        if len(set(self.targets.tolist())) != self.targets.size:
            raise InvariantViolation("drive targets must be unique")
        if not np.all(np.isfinite(self.values)):
            raise InvariantViolation("drive values must be finite")
        for arr in (self.targets, self.times, self.values):
            arr.setflags(write=False)

    @classmethod
    def none(cls) -> "FluxDrive":
        return cls([], [0.0], np.zeros((1, 0)), mode="constant")

    @classmethod
    def constant(cls, targets: Sequence[int], values: Sequence[float]) -> "FluxDrive":
        return cls(targets, [0.0], np.atleast_2d(np.asarray(values, dtype=np.float64)), mode="constant")

    @classmethod
    def step(cls, target: int, amplitude: float, t_on: float, t_off: Optional[float] = None,
             rise: float = 0.0) -> "FluxDrive":
        """Single-channel step from 0 to ``amplitude`` at ``t_on`` (optionally back to 0)."""
        if rise <= 0:
            times, vals = [0.0, t_on], [0.0, amplitude]
            if t_on <= 0.0:
                times, vals = [t_on], [amplitude]
            if t_off is not None:
                times.append(t_off)
                vals.append(0.0)
            return cls([target], times, np.array(vals)[:, None], mode="constant")
        times = [0.0, t_on, t_on + rise]
        vals = [0.0, 0.0, amplitude]
        if t_off is not None:
            times += [t_off, t_off + rise]
            vals += [amplitude, 0.0]
        if times[1] == 0.0:
            times, vals = times[1:], vals[1:]
        return cls([target], times, np.array(vals)[:, None], mode="linear")

    @property
    def n_channels(self) -> int:
        return int(self.targets.size)

    def sample(self, t: float) -> np.ndarray:
        """Drive values (one per channel) at time ``t``."""
        times = self.times
        if times.size == 1 or t <= times[0]:
            return self.values[0].copy()
        if t >= times[-1]:
            return self.values[-1].copy()
        k = int(np.searchsorted(times, t, side="right") - 1)
        if self.mode == "constant":
            return self.values[k].copy()
        f = (t - times[k]) / (times[k + 1] - times[k])
        return self.values[k] + f * (self.values[k + 1] - self.values[k])

    def full(self, n: int, t: float) -> np.ndarray:
        """Length-``n`` external flux vector at time ``t``."""
        out = np.zeros(n)
        if self.n_channels:
            out[self.targets] = self.sample(t)
        return out
