"""Trace comparison and energy accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import DendriteSpec, SoenError


class ZeroReference(SoenError, ValueError):
    """The reference trace is identically zero, so chi-squared is undefined."""


class GridMismatch(SoenError, ValueError):
    """Traces were recorded on different time grids."""


@dataclass
class ChiSquaredReport:
    chi2: float
    ids: tuple
    n_t: int
    dt: Optional[float] = None


def _values_and_times(trace):
    if hasattr(trace, "s") and hasattr(trace, "t"):
        return np.asarray(trace.s, dtype=np.float64), np.asarray(trace.t, dtype=np.float64)
    return np.asarray(trace, dtype=np.float64), None


def chi_squared(reference, candidate, ids: Sequence = (), dt: Optional[float] = None) -> ChiSquaredReport:
    """Normalized squared distance sum|ref - cand|^2 / sum|ref|^2.

    Arguments are arrays of equal shape or objects with ``t`` and ``s``
    attributes (such as :class:`~soen.engine.TraceBuffer`), whose time grids
    must then match exactly; traces are never resampled. The metric is not
    symmetric: it is always normalized by ``reference``.
    """
    ref, t_ref = _values_and_times(reference)
    cand, t_cand = _values_and_times(candidate)
    if ref.shape != cand.shape:
        raise GridMismatch(f"trace shapes differ: {ref.shape} vs {cand.shape}")
    if t_ref is not None and t_cand is not None and not np.array_equal(t_ref, t_cand):
        raise GridMismatch("time grids differ; run both engines with the same dt and stride")
    den = float(np.sum(ref * ref))
    if den == 0.0:
        raise ZeroReference("reference trace is identically zero")
    diff = ref - cand
    n_t = ref.shape[0] if ref.ndim else 1
    return ChiSquaredReport(float(np.sum(diff * diff)) / den, tuple(ids), int(n_t), dt)


def dendrite_energy(state, specs: Sequence[DendriteSpec]) -> np.ndarray:
    """Energy 0.5 * beta_i * s_i**2 stored in each integration loop."""
    s = np.asarray(getattr(state, "s", state), dtype=np.float64)
    beta = np.array([sp.beta for sp in specs], dtype=np.float64)
    if beta.shape != s.shape[-1:]:
        raise ValueError("one spec per dendrite is required")
    return 0.5 * beta * s * s
