"""One-photon-at-a-time double slit with random which-way tagging.

Each photon is tagged with probability ``chi``.  Untagged photons land
according to the two-slit Fraunhofer intensity ``env(y) cos^2(pi d y / lambda L)``;
tagged ones according to the single-slit envelope ``env(y)`` alone.  The fringe
visibility of a screen histogram is estimated by a weighted linear fit of the
counts to ``A * E_b + C * K_b`` with ``E_b`` and ``K_b`` the bin integrals of
``env`` and ``env cos(2 pi d y / lambda L)``; ``V = C / A``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import simpson

from .numerics import Histogram

__all__ = [
    "SlitGeometry",
    "TaggedEventBatch",
    "VisibilityCurve",
    "ModelComparison",
    "simulate_batch",
    "fit_visibility",
    "visibility_curve",
    "compare_models",
    "batch_rng",
]


@dataclass(frozen=True)
class SlitGeometry:
    slit_separation: float = 10.0
    slit_width: float = 2.0
    wavelength: float = 1.0
    screen_distance: float = 1e4
    screen_half_width: float | None = None
    n_bins: int = 512

    def __post_init__(self):
        for name in ("slit_separation", "slit_width", "wavelength", "screen_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.screen_half_width is not None and not self.screen_half_width > 0:
            raise ValueError("screen_half_width must be positive")
        if self.n_bins < 8:
            raise ValueError("need at least 8 screen bins")
        if self.slit_width >= self.slit_separation:
            raise ValueError("slits overlap: slit_width must be below slit_separation")
        if not self.far_field:
            raise ValueError(
                f"screen too close for the Fraunhofer model: need L > 10 d^2 / lambda = "
                f"{10 * self.slit_separation**2 / self.wavelength:g}"
            )

    @property
    def far_field(self) -> bool:
        return self.screen_distance > 10 * self.slit_separation**2 / self.wavelength

    @property
    def half_width(self) -> float:
        # default: out to the first zeros of the single-slit envelope
        if self.screen_half_width is not None:
            return self.screen_half_width
        return self.wavelength * self.screen_distance / self.slit_width

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def envelope(self, y):
        return np.sinc(self.slit_width * np.asarray(y) / (self.wavelength * self.screen_distance)) ** 2

    def phase(self, y):
        return 2 * np.pi * self.slit_separation * np.asarray(y) / (self.wavelength * self.screen_distance)

    def intensity(self, y):
        """Two-slit intensity, normalised to 1 on axis."""
        return self.envelope(y) * np.cos(0.5 * self.phase(y)) ** 2

    def bin_integrals(self, sub: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Per-bin integrals of ``env`` and ``env * cos(phase)`` (composite Simpson)."""
        e = self.edges
        frac = np.linspace(0.0, 1.0, 2 * sub + 1)
        y = e[:-1, None] + (e[1:] - e[:-1])[:, None] * frac
        env = self.envelope(y)
        E = simpson(env, x=y, axis=1)
        K = simpson(env * np.cos(self.phase(y)), x=y, axis=1)
        return E, K

    def analytic_visibility(self) -> float:
        """Visibility the fit recovers from the exact untagged bin probabilities."""
        E, K = self.bin_integrals()
        (a, c), *_ = np.linalg.lstsq(np.column_stack([E, K]), 0.5 * (E + K), rcond=None)
        return float(c / a)


@dataclass(frozen=True)
class TaggedEventBatch:
    n_events: int
    chi: float
    seed: int
    histogram: Histogram
    n_tagged: int

    def __post_init__(self):
        if not 0 <= self.n_tagged <= self.n_events:
            raise ValueError("n_tagged must lie in [0, n_events]")
        if round(self.histogram.total) != self.n_events:
            raise ValueError("histogram total differs from n_events")

    def to_csv(self, path, geometry: SlitGeometry) -> Path:
        path = Path(path)
        rows = ["bin_center,count"]
        rows += [f"{c!r},{int(n)}" for c, n in zip(geometry.centers.tolist(), self.histogram.counts)]
        path.write_text("\n".join(rows) + "\n")
        return path


def batch_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for batch ``index`` of a run seeded with ``seed``; independent of scheduling."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _bin_probabilities(g: SlitGeometry):
    E, K = g.bin_integrals()
    E = np.clip(E, 0.0, None)
    two = np.clip(E + K, 0.0, None)
    return two / two.sum(), E / E.sum()


def simulate_batch(g: SlitGeometry, chi: float, n_events: int, seed: int, index: int = 0) -> TaggedEventBatch:
    """Screen histogram of ``n_events`` photons, each tagged with probability ``chi``."""
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    if not 0 <= chi <= 1:
        raise ValueError("chi must lie in [0, 1]")
    rng = batch_rng(seed, index)
    p_two, p_env = _bin_probabilities(g)
    n_tagged = int(rng.binomial(n_events, chi))
    counts = rng.multinomial(n_events - n_tagged, p_two) + rng.multinomial(n_tagged, p_env)
    hist = Histogram.from_counts(counts, labels=range(g.n_bins))
    return TaggedEventBatch(n_events, float(chi), int(seed), hist, n_tagged)


def fit_visibility(g: SlitGeometry, counts: np.ndarray, iterations: int = 3) -> tuple[float, float]:
    """Visibility and its standard error from a screen histogram.

    Counts are modelled as ``A E_b + C K_b`` with Poisson variance equal to the
    model itself; the fit is iteratively reweighted and the error propagated
    from the fit covariance through ``V = C / A`` (delta method).
    """
    n = np.asarray(counts, dtype=float)
    if n.sum() <= 0:
        raise ValueError("empty histogram")
    E, K = g.bin_integrals()
    X = np.column_stack([E, K])
    mu = np.maximum(n, 1.0)
    for _ in range(iterations):
        w = 1.0 / mu
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        a, c = cov @ (XtW @ n)
        mu = np.maximum(X @ np.array([a, c]), 0.5)
    if a <= 0:
        raise ValueError("histogram carries no envelope signal")
    v = c / a
    grad = np.array([-c / a**2, 1.0 / a])
    se = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return float(v), se


@dataclass
class VisibilityCurve:
    chis: np.ndarray
    visibility: np.ndarray
    stderr: np.ndarray
    n_events: int
    seed: int = 0

    def __post_init__(self):
        self.chis = np.asarray(self.chis, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (len(self.chis) == len(self.visibility) == len(self.stderr)):
            raise ValueError("curve columns differ in length")

    def __len__(self):
        return len(self.chis)

    def rows(self):
        return list(zip(self.chis.tolist(), self.visibility.tolist(), self.stderr.tolist()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["chi,V,stderr"] + [f"{c!r},{v!r},{s!r}" for c, v, s in self.rows()]
        path.write_text("\n".join(lines) + "\n")
        return path


def visibility_curve(
    g: SlitGeometry,
    chis: Sequence[float],
    n_events: int,
    seed: int,
    tag_law=None,
) -> VisibilityCurve:
    """One simulated batch per chi (batch index = position in ``chis``).

    ``tag_law`` optionally maps chi to the tagging probability actually used;
    the default is the identity (the linear-mixture generative model).
    """
    chis = [float(c) for c in chis]
    if not chis:
        raise ValueError("chis must be non-empty")
    if any(not 0 <= c <= 1 for c in chis):
        raise ValueError("every chi must lie in [0, 1]")
    vis, err = [], []
    for i, c in enumerate(chis):
        p = c if tag_law is None else float(tag_law(c))
        b = simulate_batch(g, p, n_events, seed, index=i)
        v, s = fit_visibility(g, b.histogram.counts)
        vis.append(v)
        err.append(s)
    return VisibilityCurve(np.array(chis), np.array(vis), np.array(err), n_events, seed)


@dataclass
class ModelComparison:
    linear: dict
    qti: dict
    chi2: dict
    aic: dict
    delta_aic: float
    preferred: str
    n_min: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "linear": self.linear,
            "qti": self.qti,
            "chi2": self.chi2,
            "aic": self.aic,
            "delta_aic": self.delta_aic,
            "preferred": self.preferred,
            "n_min_events_per_point": self.n_min,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _linear(chi, v0):
    return v0 * (1.0 - chi)


def _qti(chi, v0, chi_c, nu):
    return v0 * np.exp(-np.power(chi / chi_c, nu))


def compare_models(curve: VisibilityCurve, fit=None) -> ModelComparison:
    """Fit the linear-mixture and threshold laws to ``curve`` and compare them.

    Both fits are weighted by the per-point standard errors.  The
    information criterion is AIC = chi^2 + 2k.  ``n_min`` is the number of
    events per point at which the two fitted curves differ by 3 sigma in
    aggregate, using the 1/sqrt(n) scaling of the standard errors.  ``fit``
    (a ``ScalingFit``) only seeds the threshold-law optimizer.
    """
    x, y, s = curve.chis, curve.visibility, curve.stderr
    if len(x) < 10:
        raise ValueError("model comparison needs at least 10 curve points")
    if np.ptp(y) == 0:
        raise ValueError("degenerate curve: all visibilities equal")
    if np.any(s <= 0):
        raise ValueError("standard errors must be positive")
    w = 1.0 / s

    # linear law: closed-form weighted least squares in v0
    basis = 1.0 - x
    v0_lin = float(np.sum(w**2 * basis * y) / np.sum(w**2 * basis**2))
    r_lin = (y - _linear(x, v0_lin)) * w

    def resid(p):
        with np.errstate(all="ignore"):
            r = (y - _qti(x, *p)) * w
        return np.where(np.isfinite(r), r, 1e6)

    starts = [(1.0, cc, nu) for cc in (0.3, 0.5, 0.7, 0.9, 1.2) for nu in (1.0, 2.0, 4.0, 8.0)]
    if fit is not None:
        starts.insert(0, (fit.v0, fit.chi_c, fit.nu))
    best = None
    for p0 in starts:
        sol = optimize.least_squares(resid, p0, bounds=([0, 1e-6, 1e-3], [np.inf, np.inf, 100.0]), method="trf")
        cost = float(sol.fun @ sol.fun)
        if best is None or cost < best[0]:
            best = (cost, sol.x)
    chi2_qti, p_qti = best
    chi2_lin = float(r_lin @ r_lin)
    aic = {"linear": chi2_lin + 2 * 1, "qti": chi2_qti + 2 * 3}
    delta = aic["linear"] - aic["qti"]
    sep = float(np.sum(((_linear(x, v0_lin) - _qti(x, *p_qti)) * w) ** 2))
    n_min = 9.0 * curve.n_events / sep if sep > 0 else math.inf
    return ModelComparison(
        linear={"v0": v0_lin},
        qti={"v0": float(p_qti[0]), "chi_c": float(p_qti[1]), "nu": float(p_qti[2])},
        chi2={"linear": chi2_lin, "qti": chi2_qti},
        aic=aic,
        delta_aic=float(delta),
        preferred="qti" if delta > 0 else "linear",
        n_min=float(n_min),
    )
