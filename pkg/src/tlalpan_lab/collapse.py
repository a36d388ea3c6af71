"""Order parameters (chi, O, tau_RC, V) and the joint critical-scaling fit."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .numerics import Histogram, fit_nonlinear, percentile_interval, smooth, symmetrized_kl

__all__ = [
    "AmplificationRecord",
    "OrderParameters",
    "ScalingFit",
    "BoundaryProbe",
    "amplification_fraction",
    "record_asymmetry",
    "visibility",
    "retro_coherence_time",
    "fit_scaling",
    "predict_visibility",
    "scaling_laws",
]


@dataclass(frozen=True)
class AmplificationRecord:
    n_measured: int = 0
    n_total: int = 0
    n_detections: int | None = None
    n_heralds: int | None = None
    efficiency: float | None = None

    def __post_init__(self):
        if not 0 <= self.n_measured <= self.n_total:
            raise ValueError("need 0 <= n_measured <= n_total")
        heralded = (self.n_detections, self.n_heralds, self.efficiency)
        if any(v is not None for v in heralded):
            if any(v is None for v in heralded):
                raise ValueError("heralded mode needs n_detections, n_heralds and efficiency")
            if not 0 <= self.n_detections <= self.n_heralds:
                raise ValueError("need 0 <= n_detections <= n_heralds")
            if not 0 < self.efficiency <= 1:
                raise ValueError("efficiency must lie in (0, 1]")

    @property
    def heralded(self) -> bool:
        return self.n_heralds is not None


def amplification_fraction(r: AmplificationRecord, return_flag: bool = False):
    """chi from direct counts, or the heralded estimate N_D / (eta N_H) clamped to [0, 1].

    With ``return_flag`` the result is ``(chi, clamped)``.
    """
    if r.heralded:
        if r.n_heralds == 0:
            raise ValueError("heralded estimator needs n_heralds > 0")
        raw = r.n_detections / (r.efficiency * r.n_heralds)
    else:
        if r.n_total == 0:
            raise ValueError("amplification fraction needs n_total > 0")
        raw = r.n_measured / r.n_total
    chi = min(raw, 1.0)
    return (chi, raw > 1.0) if return_flag else chi


@dataclass(frozen=True)
class OrderParameters:
    chi: float
    O: float
    tau_rc: float
    visibility: float

    def __post_init__(self):
        vals = (self.chi, self.O, self.tau_rc, self.visibility)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("order parameters must be finite")
        if not 0 <= self.chi <= 1:
            raise ValueError("chi must lie in [0, 1]")
        if self.O < 0 or self.tau_rc < 0:
            raise ValueError("O and tau_rc must be non-negative")
        if not 0 <= self.visibility <= 1:
            raise ValueError("visibility must lie in [0, 1]")


def record_asymmetry(p_fwd: Histogram, p_bwd: Histogram, pseudo_count: float = 0.5) -> float:
    """Symmetrized KL divergence (nats) between forward and backward record histograms.

    Both histograms are smoothed with ``pseudo_count`` first; pass 0 for exact
    probability vectors.
    """
    if p_fwd.total <= 0 or p_bwd.total <= 0:
        raise ValueError("record histograms must be non-empty")
    if pseudo_count:
        p_fwd, p_bwd = smooth(p_fwd, pseudo_count), smooth(p_bwd, pseudo_count)
    return symmetrized_kl(p_fwd, p_bwd)


def visibility(pattern) -> float:
    """Fringe contrast (Imax - Imin) / (Imax + Imin)."""
    p = np.asarray(pattern, dtype=float).ravel()
    if len(p) < 2:
        raise ValueError("visibility needs at least 2 samples")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("intensities must be finite and non-negative")
    hi, lo = p.max(), p.min()
    if hi == 0:
        raise ValueError("all-zero pattern has no defined visibility")
    return float((hi - lo) / (hi + lo))


@dataclass
class BoundaryProbe:
    """Patterns recorded with and without a future boundary, one pair per boundary time."""

    tau_b: np.ndarray
    with_boundary: list
    without_boundary: list
    spacing: float = 1.0

    def __post_init__(self):
        self.tau_b = np.asarray(self.tau_b, dtype=float)
        if not (len(self.tau_b) == len(self.with_boundary) == len(self.without_boundary)):
            raise ValueError("one pattern pair per boundary time is required")

    def gaps(self) -> np.ndarray:
        return np.array(
            [
                float(np.sum(np.abs(np.asarray(a) - np.asarray(b)))) * self.spacing
                for a, b in zip(self.with_boundary, self.without_boundary)
            ]
        )


def retro_coherence_time(probe: BoundaryProbe, epsilon: float) -> float:
    """Largest boundary time whose with/without L1 gap exceeds ``epsilon`` (0 if none)."""
    if len(probe.tau_b) == 0:
        raise ValueError("empty probe family")
    gaps = probe.gaps()
    hit = gaps > epsilon
    return float(probe.tau_b[hit].max()) if hit.any() else 0.0


def predict_visibility(chi: float, v0: float, chi_c: float, nu: float) -> float:
    if chi < 0 or chi_c <= 0 or nu <= 0:
        raise ValueError("need chi >= 0, chi_c > 0, nu > 0")
    return float(v0 * math.exp(-((chi / chi_c) ** nu)))


# ---------------------------------------------------------------------------
# joint scaling fit


def scaling_laws(chi, chi_c, beta, nu, gamma, v0, a_o=1.0, a_tau=1.0, tau_max=math.inf, family="stretched_exp"):
    """Model curves (V, O, tau_RC) at ``chi``; used for synthesis and for fitting."""
    chi = np.asarray(chi, dtype=float)
    if family == "stretched_exp":
        v = v0 * np.exp(-((chi / chi_c) ** nu))
    elif family == "power":
        v = v0 * np.abs(chi - chi_c) ** nu
    else:
        raise ValueError(f"unknown visibility family {family!r}")
    above = chi > chi_c
    o = np.where(above, a_o * np.abs(chi - chi_c) ** beta, 0.0)
    with np.errstate(divide="ignore"):
        tau = np.where(chi < chi_c, np.minimum(a_tau * np.abs(chi_c - chi) ** (-gamma), tau_max), 0.0)
    return v, o, tau


@dataclass
class ScalingFit:
    chi_c: float
    beta: float
    nu: float
    gamma: float
    v0: float
    amplitudes: dict
    residuals: dict
    intervals: dict = field(default_factory=dict)
    family: str = "stretched_exp"

    PARAMS = ("chi_c", "beta", "nu", "gamma", "v0")

    def __post_init__(self):
        if not 0 < self.chi_c < 1:
            raise ValueError("fitted chi_c left (0, 1)")

    def point(self) -> dict:
        return {p: getattr(self, p) for p in self.PARAMS}

    def covers(self, truth: dict) -> bool:
        return all(self.intervals[p][0] <= truth[p] <= self.intervals[p][1] for p in self.PARAMS)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "estimates": self.point(),
            "amplitudes": self.amplitudes,
            "intervals": {k: list(v) for k, v in self.intervals.items()},
            "residuals": self.residuals,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class _Sweep:
    chi: np.ndarray
    v: np.ndarray
    o: np.ndarray
    tau: np.ndarray


def _as_sweep(sweep) -> _Sweep:
    rows = []
    for item in sweep:
        op = item[1] if isinstance(item, tuple) else item
        if isinstance(item, tuple) and abs(item[0] - op.chi) > 1e-12:
            raise ValueError("sweep chi disagrees with its order parameters")
        rows.append((op.chi, op.visibility, op.O, op.tau_rc))
    if len(rows) < 10:
        raise ValueError(f"scaling fit needs at least 10 sweep points, got {len(rows)}")
    a = np.array(sorted(rows), dtype=float)
    return _Sweep(*a.T)


def _bracket(s: _Sweep) -> tuple[float, float]:
    """Range of chi_c consistent with which points are sub- or supercritical."""
    below = (s.o == 0) | (s.tau > 0)
    above = (s.o > 0) | (s.tau == 0)
    lo_cands = np.concatenate([s.chi[s.o == 0], s.chi[s.tau > 0]])
    hi_cands = np.concatenate([s.chi[s.o > 0], s.chi[s.tau == 0]])
    if not below.any() or not above.any():
        raise ValueError("sweep lies entirely on one side of every candidate chi_c")
    # O = 0 allows chi == chi_c; tau > 0 requires chi < chi_c
    lo = float(lo_cands.max())
    hi = float(hi_cands.min())
    if not lo < hi or not 0 < hi or lo >= 1:
        raise ValueError(f"inconsistent sweep: sub- and supercritical points overlap (chi_c in [{lo}, {hi}])")
    return max(lo, 0.0), min(hi, 1.0)


class _Objective:
    def __init__(self, s: _Sweep, family: str, tau_max: float):
        self.s = s
        self.family = family
        self.iv = s.v > 0
        self.io = s.o > 0
        self.it = (s.tau > 0) & (s.tau < tau_max)
        self.n = int(self.iv.sum() + self.io.sum() + self.it.sum())

    # params: chi_c, beta, nu, gamma, log v0, log a_o, log a_tau
    def parts(self, p):
        cc, beta, nu, gamma, lv0, lao, lat = p
        s = self.s
        x = s.chi[self.iv]
        with np.errstate(all="ignore"):
            if self.family == "stretched_exp":
                rv = np.log(s.v[self.iv]) - (lv0 - (x / cc) ** nu)
            else:
                rv = np.log(s.v[self.iv]) - (lv0 + nu * np.log(np.abs(x - cc)))
            ro = np.log(s.o[self.io]) - (lao + beta * np.log(s.chi[self.io] - cc))
            rt = np.log(s.tau[self.it]) - (lat - gamma * np.log(cc - s.chi[self.it]))
        return rv, ro, rt

    def __call__(self, p):
        r = np.concatenate(self.parts(p))
        return np.where(np.isfinite(r), r, 1e6)


def _profile_start(s: _Sweep, obj: _Objective, lo: float, hi: float, family: str) -> np.ndarray:
    """Best starting point from a scan over chi_c with closed-form log-linear fits."""
    span = hi - lo
    cands = lo + span * np.linspace(0.02, 0.98, 49) if span > 0 else np.array([lo])
    # visibility law, independent of the brackets
    if family == "stretched_exp":
        xv, yv = s.chi[obj.iv], s.v[obj.iv]
        try:
            fv = fit_nonlinear("stretched_exp", xv, yv, {"amplitude": yv.max(), "scale": 0.5 * (lo + hi), "exponent": 1.0})
            v_init = (fv.params["scale"], fv.params["exponent"], math.log(max(fv.params["amplitude"], 1e-12)))
        except (ValueError, RuntimeError):
            v_init = (0.5 * (lo + hi), 1.0, 0.0)
    best = None
    for cc in cands:
        slopes = []
        for mask, sign, vals in ((obj.io, 1.0, s.o), (obj.it, -1.0, s.tau)):
            d = sign * (s.chi[mask] - cc)
            if mask.sum() >= 2 and np.all(d > 0):
                A = np.column_stack([np.ones(mask.sum()), np.log(d)])
                coef, *_ = np.linalg.lstsq(A, np.log(vals[mask]), rcond=None)
                slopes.append((coef[0], sign * coef[1]))
            else:
                slopes.append((0.0, 1.0))
        (lao, beta), (lat, gamma) = slopes
        if family == "stretched_exp":
            p = np.array([cc, beta, v_init[1], gamma, v_init[2], lao, lat])
        else:
            xv = np.abs(s.chi[obj.iv] - cc)
            A = np.column_stack([np.ones(len(xv)), np.log(np.maximum(xv, 1e-300))])
            coef, *_ = np.linalg.lstsq(A, np.log(s.v[obj.iv]), rcond=None)
            p = np.array([cc, beta, coef[1], gamma, coef[0], lao, lat])
        cost = float(np.sum(obj(p) ** 2))
        if best is None or cost < best[0]:
            best = (cost, p)
    return best[1]


def _joint_fit(s: _Sweep, family: str, tau_max: float, start: np.ndarray | None = None):
    lo, hi = _bracket(s)
    obj = _Objective(s, family, tau_max)
    if obj.n < 7:
        raise ValueError("too few positive observations to fit the three scaling laws")
    p0 = _profile_start(s, obj, lo, hi, family) if start is None else start.copy()
    eps = 1e-12 * max(hi, 1.0)
    lower = [lo, 1e-6, 1e-6, 1e-6, -np.inf, -np.inf, -np.inf]
    upper = [hi - eps, 50.0, 50.0, 50.0, np.inf, np.inf, np.inf]
    if not obj.io.any():
        lower[1], upper[1] = 1.0 - 1e-9, 1.0 + 1e-9
    if not obj.it.any():
        lower[3], upper[3] = 1.0 - 1e-9, 1.0 + 1e-9
    p0 = np.clip(p0, np.array(lower) + 1e-12, np.array(upper) - 1e-12)
    sol = optimize.least_squares(obj, p0, bounds=(lower, upper), method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
    return sol.x, obj


def fit_scaling(
    sweep: Iterable,
    family: str = "stretched_exp",
    tau_max: float = math.inf,
    n_boot: int = 200,
    level: float = 0.95,
    seed: int = 0,
    simultaneous: bool = True,
) -> ScalingFit:
    """Fit the visibility, asymmetry and coherence-time laws with a shared chi_c.

    ``sweep`` holds ``OrderParameters`` (or ``(chi, OrderParameters)`` pairs).
    Each law is fitted to the logarithm of its positive observations; zero
    observations only constrain which side of chi_c a point lies on.  Points
    with ``tau_rc`` at the cap ``tau_max`` are excluded from the tau law.

    Intervals come from a residual bootstrap with ``n_boot`` resamples.  With
    ``simultaneous`` (the default) they form a max-t band centred on the point
    estimate, holding jointly at ``level``; otherwise they are per-parameter
    percentile intervals widened to contain the point estimate.
    """
    s = _as_sweep(sweep)
    p, obj = _joint_fit(s, family, tau_max)
    rv, ro, rt = obj.parts(p)
    fit = ScalingFit(
        chi_c=float(p[0]),
        beta=float(p[1]),
        nu=float(p[2]),
        gamma=float(p[3]),
        v0=float(math.exp(p[4])),
        amplitudes={"O": float(math.exp(p[5])), "tau_rc": float(math.exp(p[6]))},
        residuals={
            "visibility": float(np.sqrt(np.sum(rv**2))),
            "O": float(np.sqrt(np.sum(ro**2))),
            "tau_rc": float(np.sqrt(np.sum(rt**2))),
        },
        family=family,
    )
    if n_boot > 0:
        fit.intervals = _bootstrap(s, obj, p, family, tau_max, n_boot, level, seed, fit, simultaneous)
    else:
        fit.intervals = {k: (v, v) for k, v in fit.point().items()}
    return fit


def _bootstrap(s, obj, p, family, tau_max, n_boot, level, seed, fit, simultaneous) -> dict:
    rv, ro, rt = obj.parts(p)
    v_fit = s.v.copy()
    o_fit = s.o.copy()
    t_fit = s.tau.copy()
    v_fit[obj.iv] = s.v[obj.iv] * np.exp(-rv)
    o_fit[obj.io] = s.o[obj.io] * np.exp(-ro)
    t_fit[obj.it] = s.tau[obj.it] * np.exp(-rt)

    def centered(r, k):
        if len(r) == 0:
            return r
        # inflate for the degrees of freedom the fit consumed
        scale = math.sqrt(len(r) / max(len(r) - k, 1))
        return (r - r.mean()) * scale

    pools = (centered(rv, 2), centered(ro, 2), centered(rt, 2))
    children = np.random.SeedSequence(seed).spawn(n_boot)
    samples = []
    for child in children:
        rng = np.random.default_rng(child)
        v, o, t = v_fit.copy(), o_fit.copy(), t_fit.copy()
        for arr, mask, pool in ((v, obj.iv, pools[0]), (o, obj.io, pools[1]), (t, obj.it, pools[2])):
            if mask.any() and len(pool):
                arr[mask] = arr[mask] * np.exp(rng.choice(pool, size=int(mask.sum())))
        # observed visibilities are bounded by 1; resamples obey the same bound
        np.minimum(v, 1.0, out=v)
        try:
            q, _ = _joint_fit(_Sweep(s.chi, v, o, t), family, tau_max, start=p)
        except ValueError:
            continue
        samples.append([q[0], q[1], q[2], q[3], math.exp(q[4])])
    samples = np.array(samples)
    point = fit.point()
    if len(samples) == 0:
        return {k: (v, v) for k, v in point.items()}
    if not simultaneous:
        return {n: percentile_interval(samples[:, j], level, point[n]) for j, n in enumerate(ScalingFit.PARAMS)}
    # max-t simultaneous band: scale each parameter's bootstrap spread by one
    # common critical value so the intervals hold jointly
    pt = np.array([point[n] for n in ScalingFit.PARAMS])
    sd = samples.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, np.finfo(float).tiny)
    crit = float(np.quantile(np.max(np.abs(samples - pt) / sd, axis=1), level))
    return {n: (float(pt[j] - crit * sd[j]), float(pt[j] + crit * sd[j])) for j, n in enumerate(ScalingFit.PARAMS)}


def sweep_to_csv(sweep: Sequence[OrderParameters], path) -> Path:
    path = Path(path)
    lines = ["chi,visibility,O,tau_rc"]
    lines += [",".join(repr(float(v)) for v in (op.chi, op.visibility, op.O, op.tau_rc)) for op in sweep]
    path.write_text("\n".join(lines) + "\n")
    return path


def sweep_from_csv(path) -> list[OrderParameters]:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    need = {"chi", "visibility", "O", "tau_rc"}
    if data.dtype.names is None or not need <= set(data.dtype.names):
        raise ValueError(f"sweep CSV must have columns {sorted(need)}")
    return [OrderParameters(float(r["chi"]), float(r["O"]), float(r["tau_rc"]), float(r["visibility"])) for r in data]
