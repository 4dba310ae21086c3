"""Decay rates p(t): persistency-of-excitation analysis and the xi integral.

The central objects are the sliding-window integral W(t) = int_{t-tau}^t p,
its certified lower bound epsilon, the upper bound pbar, the double integral
xi(t) = int_{t-tau}^t int_s^t p(r) dr ds (computed through the equivalent
single integral int_{t-tau}^t (r - t + tau) p(r) dr), and the infimum
function pl(h) = inf_t int_t^{t+h} p.

All quadrature is composite Simpson; minima/maxima over t are located on a
grid and polished with a bounded scalar minimizer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

SIMPSON_SUBINTERVALS = 2048
PE_SAFETY = 0.01  # 1% shrink/inflation between raw and certified values
_CHUNK_BUDGET = 4_000_000  # max scratch doubles for vectorized windows


def _rate_values(p, nodes) -> np.ndarray:
    """Evaluate a rate on an array, broadcasting constant results."""
    return np.broadcast_to(np.asarray(p(nodes), dtype=float), np.shape(nodes))


class NotPersistentlyExcitingError(RuntimeError):
    """Sampled window integral came out nonpositive for the given tau."""


@dataclass(frozen=True)
class PETriple:
    """Constants (tau, epsilon, pbar) certifying the excitation condition."""

    tau: float
    epsilon: float
    pbar: float

    def __post_init__(self):
        if min(self.tau, self.epsilon, self.pbar) <= 0:
            raise ValueError("tau, epsilon, pbar must all be positive")


@dataclass(frozen=True)
class DecayRate:
    """Nonnegative scalar rate p(t), evaluable on [-tau, infinity).

    For t < 0 a declared period folds the argument back into [0, period);
    otherwise the function is evaluated as-is, falling back to p(0) if the
    natural extension fails.
    """

    fn: Callable
    period: float | None = None
    pe: PETriple | None = None
    label: str = ""

    def __call__(self, t):
        if self.period is not None:
            t = np.mod(t, self.period)
            return self.fn(t)
        if isinstance(t, np.ndarray):
            return self.fn(t)
        if t < 0.0:
            try:
                return float(self.fn(t))
            except (ValueError, ArithmeticError):
                return float(self.fn(0.0))
        return float(self.fn(t))

    def with_pe(self, pe: PETriple) -> "DecayRate":
        return dataclasses.replace(self, pe=pe)


@dataclass(frozen=True)
class PEEstimate:
    """Raw and certified excitation constants over a sampled horizon."""

    tau: float
    epsilon: float          # raw: sampled min of the window integral
    pbar: float             # raw: sampled max of p on [-tau, horizon]
    epsilon_certified: float
    pbar_certified: float
    horizon: float
    horizon_limited: bool   # True when p has no declared period

    def triple(self, certified: bool = False) -> PETriple:
        if certified:
            return PETriple(self.tau, self.epsilon_certified, self.pbar_certified)
        return PETriple(self.tau, self.epsilon, self.pbar)


# ---------------------------------------------------------------------------
# Simpson quadrature over sliding windows

def _simpson_weights(n: int) -> np.ndarray:
    if n % 2 or n < 2:
        raise ValueError("Simpson needs an even subinterval count >= 2")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def simpson(fn: Callable, a: float, b: float, n: int = SIMPSON_SUBINTERVALS) -> float:
    """Composite Simpson integral of a vectorized callable on [a, b]."""
    if b == a:
        return 0.0
    x = np.linspace(a, b, n + 1)
    y = _rate_values(fn, x)
    return float((b - a) / n * np.dot(_simpson_weights(n), y))


def window_integral(p: DecayRate, tau: float, t: float,
                    n: int = SIMPSON_SUBINTERVALS) -> float:
    """int_{t-tau}^t p(r) dr."""
    return simpson(p, t - tau, t, n)


def window_integral_vec(p: DecayRate, tau: float, t: np.ndarray,
                        n: int = SIMPSON_SUBINTERVALS) -> np.ndarray:
    """Window integral for an array of right endpoints, chunked for memory."""
    t = np.asarray(t, dtype=float)
    offsets = np.linspace(-tau, 0.0, n + 1)
    w = _simpson_weights(n) * (tau / n)
    out = np.empty(t.shape)
    flat = t.ravel()
    step = max(1, _CHUNK_BUDGET // (n + 1))
    res = out.ravel()
    for i in range(0, flat.size, step):
        nodes = flat[i:i + step, None] + offsets[None, :]
        res[i:i + step] = _rate_values(p, nodes) @ w
    return out


def xi(p: DecayRate, tau: float, t: float, n: int = SIMPSON_SUBINTERVALS) -> float:
    """Double integral int_{t-tau}^t int_s^t p(r) dr ds.

    Computed via the single-integral identity
    xi(t) = int_{t-tau}^t (r - t + tau) p(r) dr.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.linspace(t - tau, t, n + 1)
    y = (x - t + tau) * _rate_values(p, x)
    return float(tau / n * np.dot(_simpson_weights(n), y))


def xi_vec(p: DecayRate, tau: float, t: np.ndarray,
           n: int = SIMPSON_SUBINTERVALS) -> np.ndarray:
    """Vectorized xi over an array of times."""
    t = np.asarray(t, dtype=float)
    offsets = np.linspace(-tau, 0.0, n + 1)
    w = _simpson_weights(n) * (tau / n) * (offsets + tau)
    out = np.empty(t.shape)
    flat = t.ravel()
    res = out.ravel()
    step = max(1, _CHUNK_BUDGET // (n + 1))
    for i in range(0, flat.size, step):
        nodes = flat[i:i + step, None] + offsets[None, :]
        res[i:i + step] = _rate_values(p, nodes) @ w
    return out


def xi_nested(p: DecayRate, tau: float, t: float, n: int = 256) -> float:
    """Direct nested-quadrature xi, used as an independent cross-check."""
    def inner(s_arr):
        return np.array([simpson(p, s, t, n) for s in np.atleast_1d(s_arr)])
    return simpson(inner, t - tau, t, n)


# ---------------------------------------------------------------------------
# PE constants

def _refine_min(fn: Callable[[float], float], grid: np.ndarray,
                vals: np.ndarray, k: int = 3) -> float:
    """Polish the k best grid minima with bounded Brent; return the least."""
    best = float(vals.min())
    order = np.argsort(vals)[:k]
    for j in order:
        lo = grid[max(0, j - 1)]
        hi = grid[min(len(grid) - 1, j + 1)]
        if hi <= lo:
            continue
        r = minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                            options={"xatol": 1.0e-11})
        best = min(best, float(r.fun))
    return best


def estimate_pe(p: DecayRate, tau: float, horizon: float | None = None,
                n_grid: int = 512, n_quad: int = SIMPSON_SUBINTERVALS,
                tol: float = 1.0e-9) -> PEEstimate:
    """Estimate (epsilon, pbar) for the window length tau.

    epsilon is the sampled minimum over t in [0, horizon] of the window
    integral, pbar the sampled maximum of p over [-tau, horizon]; both are
    polished locally, and certified values carry a 1% safety margin
    (epsilon shrunk, pbar inflated).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if horizon is None:
        horizon = p.period + tau if p.period is not None else 20.0 * tau
    if horizon < tau:
        raise ValueError("horizon must be at least tau")

    ts = np.linspace(0.0, horizon, n_grid)
    Ws = window_integral_vec(p, tau, ts, n_quad)
    eps = _refine_min(lambda t: window_integral(p, tau, float(t), n_quad), ts, Ws)
    if eps <= tol:
        raise NotPersistentlyExcitingError(
            f"window integral reaches {eps!r} on [0, {horizon!r}] for tau={tau!r}")

    n_p = max(4 * n_grid, 4096)
    tg = np.linspace(-tau, horizon, n_p + 1)
    pv = _rate_values(p, tg)
    pbar = -_refine_min(lambda t: -float(p(float(t))), tg, -pv)

    return PEEstimate(
        tau=tau,
        epsilon=eps,
        pbar=pbar,
        epsilon_certified=(1.0 - PE_SAFETY) * eps,
        pbar_certified=(1.0 + PE_SAFETY) * pbar,
        horizon=horizon,
        horizon_limited=p.period is None,
    )


def pe_scan(p: DecayRate, taus, horizon: float | None = None,
            n_grid: int = 256) -> list[tuple[float, float]]:
    """epsilon(tau) over a ladder of window lengths; 0 marks failures."""
    out = []
    for tau in taus:
        try:
            est = estimate_pe(p, float(tau), horizon, n_grid)
            out.append((float(tau), est.epsilon))
        except NotPersistentlyExcitingError:
            out.append((float(tau), 0.0))
    return out


def check_pe(p: DecayRate, n_samples: int = 400, horizon: float | None = None,
             tol: float = 1.0e-9) -> tuple[bool, float]:
    """Verify the attached triple by sampling; returns (ok, worst margin)."""
    if p.pe is None:
        raise ValueError("decay rate has no attached PE triple")
    tau, eps, pbar = p.pe.tau, p.pe.epsilon, p.pe.pbar
    if horizon is None:
        horizon = p.period + tau if p.period is not None else 20.0 * tau
    ts = np.linspace(0.0, horizon, n_samples)
    margins = window_integral_vec(p, tau, ts) - eps
    pg = np.linspace(-tau, horizon, 4 * n_samples)
    margins_p = pbar - _rate_values(p, pg)
    worst = float(min(margins.min(), margins_p.min()))
    return worst >= -tol, worst


def underline_p(p: DecayRate, h: float, horizon: float | None = None,
                n_grid: int = 512, n_quad: int = SIMPSON_SUBINTERVALS) -> float:
    """inf over t in [0, horizon] of int_t^{t+h} p(r) dr.

    Exact for periodic p as soon as the horizon covers a full period.
    """
    if h < 0:
        raise ValueError("h must be nonnegative")
    if h == 0.0:
        return 0.0
    if horizon is None:
        horizon = p.period if p.period is not None else 20.0 * max(h, 1.0)
    ts = np.linspace(0.0, horizon, n_grid)
    vals = window_integral_vec(p, h, ts + h, n_quad)
    return max(0.0, _refine_min(
        lambda t: window_integral(p, h, float(t) + h, n_quad), ts, vals))


def underline_p_gain(p: DecayRate, horizon: float | None = None,
                     n_grid: int = 128, probe_max: float = 50.0):
    """pl as a gain-like callable of h (used to rescale KL estimates)."""
    from .funcalc import GainFunction

    def fn(h):
        if isinstance(h, np.ndarray):
            return np.array([underline_p(p, float(v), horizon, n_grid)
                             for v in h.ravel()]).reshape(h.shape)
        return underline_p(p, float(h), horizon, n_grid)

    return GainFunction(fn, None, probe_max=probe_max,
                        label=f"pl[{p.label}]" if p.label else "pl")
