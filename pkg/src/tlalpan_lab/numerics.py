"""Shared numerical kernels: complex erfc, histogram divergences, curve fitting.

The complementary error function is evaluated through the Faddeeva function
``w(z) = exp(-z**2) erfc(-iz)``, which is well conditioned in the upper half
plane.  Two regimes are used:

* ``|z| < 8``: trapezoidal pole sum (Matta-Reichel / Chiarella-Reichel) with
  step 0.5 and the exact pole correction term, on whichever of the two node
  grids (integer or half-integer) lies farther from ``Re z``;
* ``|z| >= 8``: the Laplace continued fraction, 40 levels, evaluated bottom-up.

``erfc(z) = exp(-z**2) w(iz)`` for ``Re z >= 0`` and ``2 - erfc(-z)`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "Histogram",
    "FitResult",
    "cerfc",
    "faddeeva",
    "smooth",
    "kl_divergence",
    "symmetrized_kl",
    "MODEL_FAMILIES",
    "fit_nonlinear",
    "percentile_interval",
]

_STEP = 0.5
_NODES = np.arange(-16, 17, dtype=float)
_CF_RADIUS = 8.0
_CF_LEVELS = 40
_LOG_MAX = math.log(np.finfo(float).max)


def _faddeeva_polesum(z: np.ndarray) -> np.ndarray:
    x = z.real
    frac = np.abs(x / _STEP - np.round(x / _STEP))
    use_half = frac < 0.25
    out = np.empty_like(z)
    for half in (False, True):
        m = use_half == half
        if not m.any():
            continue
        zz = z[m]
        tn = (_NODES + 0.5 * half) * _STEP
        s = (1j * _STEP / np.pi) * (np.exp(-tn**2) / (zz[:, None] - tn)).sum(axis=1)
        q = np.exp(2j * np.pi * zz / _STEP)
        g = 2.0 * np.exp(-zz**2)
        out[m] = s + (g * q / (1.0 + q) if half else -g * q / (1.0 - q))
    return out


def _faddeeva_cf(z: np.ndarray) -> np.ndarray:
    k = np.zeros_like(z)
    for n in range(_CF_LEVELS, 0, -1):
        k = (0.5 * n) / (z - k)
    return (1j / math.sqrt(math.pi)) / (z - k)


def faddeeva(z):
    """Faddeeva function for ``Im z >= 0`` (scalar or array)."""
    arr = np.asarray(z, dtype=complex)
    if np.any(arr.imag < 0):
        raise ValueError("faddeeva is implemented for the closed upper half plane only")
    flat = arr.ravel()
    out = np.empty_like(flat)
    big = np.abs(flat) >= _CF_RADIUS
    if big.any():
        out[big] = _faddeeva_cf(flat[big])
    if (~big).any():
        out[~big] = _faddeeva_polesum(flat[~big])
    out = out.reshape(arr.shape)
    return out[()] if out.ndim == 0 else out


def cerfc(z):
    """Complementary error function of a complex argument.

    Accepts a scalar or an array.  Results whose magnitude underflows saturate to
    the asymptotic value (0 for ``Re z > 0``, 2 for ``Re z < 0``).  Results too
    large to represent (deep in the sectors around the imaginary axis, where
    ``|erfc|`` grows like ``exp(Im(z)**2)``) raise ``OverflowError``.
    """
    arr = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cerfc requires finite arguments")
    neg = arr.real < 0
    zz = np.where(neg, -arr, arr)
    w = np.asarray(faddeeva(1j * zz))
    expo = -(zz**2)
    with np.errstate(over="ignore", under="ignore"):
        direct = expo.real < 700.0
        res = np.empty_like(zz)
        res[direct] = np.exp(expo[direct]) * w[direct]
        if (~direct).any():
            logged = expo[~direct] + np.log(w[~direct])
            if np.any(logged.real > _LOG_MAX):
                raise OverflowError("erfc(z) exceeds the floating-point range")
            res[~direct] = np.exp(logged)
    res = np.where(neg, 2.0 - res, res)
    return res[()] if res.ndim == 0 else res


@dataclass(frozen=True)
class Histogram:
    """Non-negative weights over an ordered record alphabet."""

    labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(self.labels))
        if counts.ndim != 1 or len(counts) != len(self.labels):
            raise ValueError("one count per label is required")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")

    @classmethod
    def from_counts(cls, counts: Sequence[float], labels: Sequence | None = None) -> "Histogram":
        counts = np.asarray(counts, dtype=float)
        if labels is None:
            labels = range(len(counts))
        return cls(tuple(labels), counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        if self.total <= 0:
            raise ValueError("histogram is empty")
        return self.counts / self.total


def smooth(h: Histogram, pseudo_count: float = 0.5) -> Histogram:
    """Add ``pseudo_count`` to every cell (Jeffreys-style add-epsilon)."""
    if pseudo_count < 0:
        raise ValueError("pseudo_count must be non-negative")
    return Histogram(h.labels, h.counts + pseudo_count)


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """D(p || q) in nats between the normalized histograms."""
    if p.labels != q.labels:
        raise ValueError("histograms are defined over different alphabets")
    pn, qn = p.normalized(), q.normalized()
    support = pn > 0
    if np.any(qn[support] == 0):
        raise ValueError(
            "q has an empty cell where p has mass; apply smooth() to both histograms first"
        )
    val = float(np.sum(pn[support] * np.log(pn[support] / qn[support])))
    # Gibbs' inequality; clip round-off below zero
    return max(val, 0.0)


def symmetrized_kl(p: Histogram, q: Histogram) -> float:
    return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p))


# ---------------------------------------------------------------------------
# nonlinear least squares


def _power(x, a, b):
    return a * np.power(x, b)


def _stretched_exp(x, a, c, n):
    return a * np.exp(-np.power(x / c, n))


def _critical(x, a, xc, b):
    d = np.clip(x - xc, 0.0, None)
    return np.where(x > xc, a * np.power(d, b), 0.0)


@dataclass(frozen=True)
class _Family:
    func: Callable
    names: tuple
    exponent: str


MODEL_FAMILIES = {
    "power": _Family(_power, ("amplitude", "exponent"), "exponent"),
    "stretched_exp": _Family(_stretched_exp, ("amplitude", "scale", "exponent"), "exponent"),
    "critical": _Family(_critical, ("amplitude", "threshold", "exponent"), "exponent"),
}


@dataclass
class FitResult:
    params: dict
    residual_norm: float
    covariance: np.ndarray
    converged: bool
    model: str = ""
    n_points: int = 0
    extra: dict = field(default_factory=dict)

    def stderr(self, name: str) -> float:
        i = list(self.params).index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))


def _covariance(jac: np.ndarray, resid: np.ndarray, n_free: int) -> np.ndarray:
    dof = max(len(resid) - n_free, 1)
    s2 = float(resid @ resid) / dof
    cov = np.linalg.pinv(jac.T @ jac) * s2
    cov = 0.5 * (cov + cov.T)
    # project out tiny negative eigenvalues from the pseudo-inverse
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def fit_nonlinear(
    model: str,
    xs: Sequence[float],
    ys: Sequence[float],
    init: dict,
    max_nfev: int = 2000,
) -> FitResult:
    """Least-squares fit of one of ``MODEL_FAMILIES`` to ``(xs, ys)``.

    The exponent is first scanned over eight log-spaced starting values (with
    the sign of ``init``'s exponent), then every start is refined and the best
    optimum kept.  Given identical inputs the result is identical.
    """
    try:
        fam = MODEL_FAMILIES[model]
    except KeyError:
        raise ValueError(f"unknown model family {model!r}; expected one of {sorted(MODEL_FAMILIES)}")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite data")
    k = len(fam.names)
    if len(x) < k + 2:
        raise ValueError(f"need at least {k + 2} points for {k} free parameters, got {len(x)}")
    if np.ptp(x) == 0:
        raise ValueError("degenerate design: all xs are equal")
    missing = set(fam.names) - set(init)
    if missing:
        raise ValueError(f"init is missing {sorted(missing)}")

    p0 = np.array([float(init[n]) for n in fam.names])
    ie = fam.names.index(fam.exponent)
    sign = -1.0 if p0[ie] < 0 else 1.0
    starts = [p0]
    for e in np.geomspace(0.1, 10.0, 8):
        s = p0.copy()
        s[ie] = sign * e
        starts.append(s)

    def resid(p):
        with np.errstate(all="ignore"):
            r = fam.func(x, *p) - y
        return np.where(np.isfinite(r), r, 1e150)

    best = None
    for s in starts:
        try:
            sol = optimize.least_squares(resid, s, method="lm", max_nfev=max_nfev, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        except (ValueError, FloatingPointError):
            continue
        cost = float(sol.fun @ sol.fun)
        if np.isfinite(cost) and (best is None or cost < best[0]):
            best = (cost, sol)
    if best is None:
        raise RuntimeError("no starting point produced a finite objective")
    cost, sol = best
    converged = bool(sol.status > 0 and np.all(np.isfinite(sol.x)))
    return FitResult(
        params=dict(zip(fam.names, map(float, sol.x))),
        residual_norm=math.sqrt(cost),
        covariance=_covariance(sol.jac, sol.fun, k),
        converged=converged,
        model=model,
        n_points=len(x),
    )


def percentile_interval(samples: np.ndarray, level: float = 0.95, point: float | None = None):
    """Percentile bootstrap interval; widened to include ``point`` if given."""
    samples = np.asarray(samples, dtype=float)
    lo, hi = np.quantile(samples, [(1 - level) / 2, (1 + level) / 2])
    if point is not None:
        lo, hi = min(lo, point), max(hi, point)
    return float(lo), float(hi)
