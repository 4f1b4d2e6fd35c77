"""Steady states and transfer functions of a single dendrite.

With constant input flux the fixed point of ds/dt = gamma g - s/tau solves
alpha s = g(phi, s). Because g does not increase with s, the residual
h(s) = alpha s - g(phi, s) is strictly increasing and the root is unique.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import SoenError, SourceFunction, SourceKind, evaluate_source

RESIDUAL_TOL = 1e-9
DAMPING = 0.5


class NoConvergence(SoenError, RuntimeError):
    def __init__(self, message: str, bracket: tuple = (np.nan, np.nan)):
        super().__init__(f"{message}; bracket [{bracket[0]!r}, {bracket[1]!r}]")
        self.bracket = bracket


def steady_state(sf: SourceFunction, bias: float, phi: float, alpha: float,
                 max_iter: int = 200, tol: float = RESIDUAL_TOL) -> float:
    """Self-consistent signal with ``alpha * s = g(phi, s)``.

    Damped fixed-point iteration first; bisection on the monotone residual
    when the iteration does not contract.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")

    # for fixed (bias, phi) the trilinear interpolant is piecewise linear in s
    column = evaluate_source(sf, bias, phi, sf.s_grid)
    s_grid = sf.s_grid

    def g(s):
        return float(np.interp(s, s_grid, column))

    g0 = g(0.0)
    if g0 == 0.0:
        return 0.0
    s = g0 / alpha
    for _ in range(max_iter):
        r = alpha * s - g(s)
        if abs(r) < tol * 1e-3:
            return s
        s = (1.0 - DAMPING) * s + DAMPING * g(s) / alpha
    # bisection: h(0) = -g0 < 0 and h(g0/alpha) >= 0 since g(s) <= g0
    lo, hi = 0.0, g0 / alpha
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if alpha * mid - g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda x: abs(alpha * x - g(x)))
    if abs(alpha * best - g(best)) >= tol:
        raise NoConvergence(f"no steady state at phi={phi}", (lo, hi))
    return best


@dataclass
class TransferCurve:
    phi: np.ndarray
    s_ss: np.ndarray
    bias: float
    alpha: float
    kind: SourceKind

    def __post_init__(self):
        if np.any(self.s_ss < 0):
            raise ValueError("steady states must be nonnegative")
        if np.any(np.diff(self.s_ss) < -1e-12):
            raise ValueError("transfer curve must be nondecreasing in phi")

    def residuals(self, sf: SourceFunction) -> np.ndarray:
        return np.abs(self.alpha * self.s_ss - evaluate_source(sf, self.bias, self.phi, self.s_ss))

    def threshold(self) -> float:
        """Smallest sampled flux with a nonzero steady state (nan if none)."""
        nz = np.flatnonzero(self.s_ss > 0)
        return float(self.phi[nz[0]]) if nz.size else float("nan")


def transfer_curve(sf: SourceFunction, bias: float, alpha: float, n_samples: int = 101,
                   phi=None) -> TransferCurve:
    """Steady state versus flux, sampled uniformly on [0, 0.5] by default."""
    phis = np.linspace(0.0, 0.5, n_samples) if phi is None else np.asarray(phi, dtype=np.float64)
    out = np.empty(phis.size)
    for k, p in enumerate(phis):
        try:
            out[k] = steady_state(sf, bias, float(p), alpha)
        except NoConvergence as exc:
            raise NoConvergence(f"transfer curve failed at phi={p}", exc.bracket) from exc
    return TransferCurve(phis, out, float(bias), float(alpha), sf.kind)


def inflection_count(y, rel_tol: float = 0.1) -> int:
    """Sign changes of the discrete curvature of ``y`` from its onset on.

    The window starts two samples before the first nonzero value, so the
    bend where the curve leaves zero contributes its curvature. Curvatures
    smaller than ``rel_tol`` times the largest one are treated as table
    noise and ignored.
    """
    y = np.asarray(y, dtype=np.float64)
    nz = np.flatnonzero(y > 0)
    if nz.size < 2:
        return 0
    d2 = np.diff(y[max(nz[0] - 2, 0):], 2)
    if d2.size == 0:
        return 0
    big = np.max(np.abs(d2))
    signs = np.sign(d2[np.abs(d2) > rel_tol * big])
    return int(np.count_nonzero(np.diff(signs) != 0))


def is_threshold_linear(phi, s_ss, min_r2: float = 0.95) -> bool:
    """Zero up to a threshold, then increasing and close to a straight line."""
    phi = np.asarray(phi)
    s_ss = np.asarray(s_ss)
    nz = np.flatnonzero(s_ss > 0)
    if nz.size < 3 or np.any(s_ss[:nz[0]] != 0) or np.any(np.diff(s_ss[nz[0]:]) <= 0):
        return False
    x, y = phi[nz[0]:], s_ss[nz[0]:]
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    r2 = 1.0 - np.sum(resid ** 2) / np.sum((y - y.mean()) ** 2)
    return bool(r2 >= min_r2)
