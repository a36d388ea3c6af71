"""Diffraction in time behind a suddenly opened shutter, with an advanced component.

The closed forms are evaluated with :func:`tlalpan_lab.numerics.cerfc`.  The
independent check, :func:`oracle_propagate`, integrates the free Schrodinger
equation with Crank-Nicolson time stepping on a Fourier (plane-wave) spatial
basis.  The free Hamiltonian is diagonal there, so ``n`` Crank-Nicolson steps
multiply each mode by the n-th power of its Cayley factor; the per-step phase
``2 atan(omega dt / 2)`` carries the scheme's full time-discretization error.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy.signal import find_peaks
from scipy.special import erf, expit

from .collapse import BoundaryProbe
from .numerics import cerfc

__all__ = [
    "ERFC_SIGN",
    "ShutterScenario",
    "SpaceTimeGrid",
    "WaveField",
    "ShutterSchedule",
    "TemporalProfile",
    "psi_ret",
    "psi_adv",
    "alpha",
    "psi_total",
    "temporal_profile",
    "oracle_propagate",
    "CrankNicolsonPropagator",
    "calibrate_sign",
    "boundary_probe",
]

# Sign in front of (x - v t) inside erfc.  Fixed by calibrate_sign() against the
# oracle: +1 recovers the plane wave behind the front and vacuum ahead of it.
ERFC_SIGN = 1


@dataclass(frozen=True)
class ShutterScenario:
    k: float = 1.0
    m: float = 1.0
    hbar: float = 1.0
    tau: float = math.inf
    kappa: float = 0.0
    kappa_c: float = 1.0
    alpha_width: float = 0.05

    def __post_init__(self):
        for name in ("k", "m", "hbar", "tau", "kappa_c", "alpha_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")

    @property
    def omega(self) -> float:
        return self.hbar * self.k**2 / (2 * self.m)

    @property
    def v(self) -> float:
        return self.hbar * self.k / self.m

    def with_(self, **changes) -> "ShutterScenario":
        d = asdict(self)
        d.update(changes)
        return ShutterScenario(**d)


@dataclass(frozen=True)
class SpaceTimeGrid:
    x_min: float
    x_max: float
    n_x: int
    t_min: float
    t_max: float
    n_t: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_t < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if not (self.x_max > self.x_min and self.t_max > self.t_min):
            raise ValueError("grid bounds must be increasing")

    @classmethod
    def standard(cls) -> "SpaceTimeGrid":
        """64 x 64 grid on x in [0, 40], t in (0, 20] (t starts one step after 0)."""
        return cls(0.0, 40.0, 64, 20.0 / 64, 20.0, 64)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)


@dataclass
class WaveField:
    """Complex field sampled on ``grid``; ``values[j, i]`` is at ``(t[j], x[i])``."""

    values: np.ndarray
    grid: SpaceTimeGrid
    scenario: ShutterScenario

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n_t, self.grid.n_x):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def to_csv(self, path) -> Path:
        path = Path(path)
        x, t = self.grid.x, self.grid.t
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "re", "im", "intensity"])
            for j, tj in enumerate(t):
                for i, xi in enumerate(x):
                    z = self.values[j, i]
                    w.writerow([repr(float(xi)), repr(float(tj)), repr(z.real), repr(z.imag), repr(abs(z) ** 2)])
        return path


def _moshinsky(x, t, k, m, hbar, sign=ERFC_SIGN):
    """Half-space plane wave released at t = 0; ``t`` may be negative (advanced branch)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    omega = hbar * k**2 / (2 * m)
    v = hbar * k / m
    # principal branch of sqrt(2 i hbar t / m): phase +pi/4 for t > 0, -pi/4 for t < 0
    root = np.sqrt(2 * hbar * np.abs(t) / m) * np.exp(1j * np.sign(t) * np.pi / 4)
    arg = sign * (x - v * t) / root
    return 0.5 * np.exp(1j * (k * x - omega * t)) * cerfc(arg)


def psi_ret(s: ShutterScenario, x, t, sign: int = ERFC_SIGN):
    """Retarded (standard) solution for a shutter opened at t = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("psi_ret is defined for t > 0 only")
    out = _moshinsky(x, t, s.k, s.m, s.hbar, sign)
    return out[()] if np.ndim(out) == 0 else out


def psi_adv(s: ShutterScenario, x, t, sign: int = ERFC_SIGN):
    """Advanced component set by the shutter closing at ``s.tau``; zero for t >= tau."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(x.shape, dtype=complex)
    valid = t < s.tau
    # tau = inf leaves no advanced wave on any finite grid
    if np.any(valid) and math.isfinite(s.tau):
        out[valid] = _moshinsky(x[valid], t[valid] - s.tau, s.k, s.m, s.hbar, sign)
    return out[()] if out.ndim == 0 else out


def alpha(s: ShutterScenario) -> float:
    """Weight of the advanced component: logistic drop around kappa_c."""
    w = s.alpha_width * s.kappa_c
    return float(expit(-(s.kappa - s.kappa_c) / w))


def psi_total(s: ShutterScenario, grid: SpaceTimeGrid, weight: float | None = None) -> WaveField:
    """``psi_ret + alpha * psi_adv`` on ``grid``; ``weight`` overrides ``alpha(s)``."""
    if grid.t_min <= 0:
        raise ValueError("grid must lie in t > 0")
    a = alpha(s) if weight is None else float(weight)
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    vals = psi_ret(s, X, T)
    if a != 0.0:
        vals = vals + a * psi_adv(s, X, T)
    return WaveField(vals, grid, s)


@dataclass
class TemporalProfile:
    x0: float
    times: np.ndarray
    intensity: np.ndarray
    peak_times: np.ndarray
    visibility: float

    @property
    def n_fringes(self) -> int:
        return len(self.peak_times)

    def summary(self) -> dict:
        return {
            "x0": self.x0,
            "n_fringes": self.n_fringes,
            "peak_times": [float(t) for t in self.peak_times],
            "visibility": self.visibility,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def _fringes(times: np.ndarray, intensity: np.ndarray, prominence: float = 1e-3):
    smooth = np.convolve(intensity, np.ones(3) / 3, mode="valid")
    t_mid = times[1:-1]
    peak = float(smooth.max(initial=0.0))
    if peak <= 0:
        return np.array([]), 0.0
    idx, _ = find_peaks(smooth, prominence=prominence * peak)
    if len(idx) < 2:
        vis = 0.0
    else:
        seg = smooth[idx[0] : idx[-1] + 1]
        vis = float((seg.max() - seg.min()) / (seg.max() + seg.min()))
    return t_mid[idx], vis


def temporal_profile(field: WaveField, x0: float) -> TemporalProfile:
    """Intensity versus time at the grid column nearest ``x0`` plus a fringe summary.

    Fringes are local maxima of the width-3 boxcar-smoothed series with a
    prominence of at least 1e-3 of its peak.
    """
    g = field.grid
    if g.n_t < 8:
        raise ValueError("temporal profile needs at least 8 time samples")
    if not (g.x_min <= x0 <= g.x_max):
        raise ValueError(f"x0 = {x0} lies outside the grid [{g.x_min}, {g.x_max}]")
    col = int(np.argmin(np.abs(g.x - x0)))
    series = field.intensity[:, col]
    peaks, vis = _fringes(g.t, series)
    return TemporalProfile(float(g.x[col]), g.t, series, peaks, vis)


# ---------------------------------------------------------------------------
# Crank-Nicolson oracle


@dataclass(frozen=True)
class ShutterSchedule:
    """Shutter at x = 0: closed (absorbing) before ``open_time``, blocking after ``close_time``."""

    open_time: float = 0.0
    close_time: float | None = None

    def __post_init__(self):
        if self.open_time < 0:
            raise ValueError("open_time must be >= 0")
        if self.close_time is not None and not self.close_time > self.open_time:
            raise ValueError("close_time must follow open_time")

    @classmethod
    def never_open(cls) -> "ShutterSchedule":
        return cls(open_time=math.inf)


class CrankNicolsonPropagator:
    """Crank-Nicolson stepping of the free particle on a periodic Fourier basis.

    ``psi`` is sampled on ``x = origin + j * dx``; the Cayley factor
    ``(1 - i w dt/2) / (1 + i w dt/2)`` with ``w = hbar q^2 / 2m`` is applied
    per mode, so the scheme is exactly unitary.
    """

    def __init__(self, psi0: np.ndarray, dx: float, dt: float, m: float = 1.0, hbar: float = 1.0):
        self.dx = float(dx)
        self.dt = float(dt)
        self.m = m
        self.hbar = hbar
        n = len(psi0)
        q = 2 * np.pi * sfft.fftfreq(n, self.dx)
        self.q = q
        self.omega = hbar * q**2 / (2 * m)
        self._coef = sfft.fft(np.asarray(psi0, dtype=complex), workers=-1)
        self.n_steps = 0
        self.extra = 0.0

    def cayley_phase(self, step: float) -> np.ndarray:
        return 2.0 * np.arctan(0.5 * self.omega * step)

    def phase(self, n_steps: int, remainder: float = 0.0) -> np.ndarray:
        ph = n_steps * self.cayley_phase(self.dt)
        if remainder:
            ph = ph + self.cayley_phase(remainder)
        return ph

    def step(self, n: int = 1) -> None:
        self.n_steps += int(n)

    def advance_to(self, t: float) -> None:
        n = int(math.floor(t / self.dt + 1e-9))
        self.n_steps = n
        self.extra = max(t - n * self.dt, 0.0)

    @property
    def time(self) -> float:
        return self.n_steps * self.dt + self.extra

    def state(self, shift: float = 0.0) -> np.ndarray:
        """Field at the nodes displaced by ``shift`` (spectral interpolation)."""
        c = self._coef * np.exp(-1j * self.phase(self.n_steps, self.extra))
        if shift:
            c = c * np.exp(1j * self.q * shift)
        return sfft.ifft(c, workers=-1)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.state()) ** 2) * self.dx)


def _dirichlet_evolve(right: np.ndarray, dx: float, dt: float, t: float, m: float, hbar: float) -> np.ndarray:
    """Crank-Nicolson evolution of a field vanishing at both ends (sine basis)."""
    n = len(right) + 1
    q = np.pi * np.arange(1, n) / (n * dx)
    omega = hbar * q**2 / (2 * m)
    steps = int(math.floor(t / dt + 1e-9))
    rem = max(t - steps * dt, 0.0)
    ph = steps * 2 * np.arctan(0.5 * omega * dt) + (2 * np.arctan(0.5 * omega * rem) if rem else 0.0)
    c = sfft.dst(right.real, type=1) + 1j * sfft.dst(right.imag, type=1)
    c = c * np.exp(-1j * ph)
    return sfft.idst(c.real, type=1) + 1j * sfft.idst(c.imag, type=1)


def oracle_propagate(
    s: ShutterScenario,
    grid: SpaceTimeGrid,
    schedule: ShutterSchedule = ShutterSchedule(),
    refine: int = 64,
    dt: float = 1e-6,
    taper_width: float | None = None,
) -> WaveField:
    """Numerically propagate a plane wave through the shutter and sample it on ``grid``.

    Before opening the shutter absorbs: the incident wave fills x < 0 and x > 0
    is empty.  After ``close_time`` the shutter is a hard wall for the
    transmitted part.  The incident wave is switched on through a smooth erf
    ramp far to the left, placed so it cannot reach the grid by ``t_max``.
    """
    if grid.t_min <= 0:
        raise ValueError("grid must lie in t > 0")
    required = s.m * grid.dx**2 / s.hbar
    if grid.dt > required:
        raise ValueError(
            f"time spacing {grid.dt:g} violates the stability heuristic; need dt <= m dx^2 / hbar = {required:g}"
        )
    k, m, hbar, v = s.k, s.m, s.hbar, s.v
    dx = grid.dx / refine
    width = taper_width if taper_width is not None else 10.0 / k
    t_span = grid.t_max - min(schedule.open_time, grid.t_max)
    ramp_at = -(max(0.0, -grid.x_min) + v * t_span + 8 * width)
    x_left = ramp_at - 8 * width
    q_max = math.pi / dx
    needed = (hbar * q_max / m) * t_span + (max(grid.x_max, 0.0) - x_left) + 8 * width
    n = 1 << max(10, math.ceil(math.log2(needed / dx)))
    n_left = int(math.ceil(-x_left / dx))
    x = (np.arange(n) - n_left) * dx
    origin_offset = grid.x_min - dx * math.floor(grid.x_min / dx + 1e-9)
    if origin_offset > dx - 1e-12:
        origin_offset = 0.0
    start = n_left + int(math.floor(grid.x_min / dx + 1e-9))
    cols = start + np.arange(grid.n_x) * refine

    def incident(t):
        return np.exp(1j * (k * x - s.omega * t))

    times = grid.t
    out = np.zeros((grid.n_t, grid.n_x), dtype=complex)
    x_out = grid.x
    closed_before = times < schedule.open_time
    # absorbing shutter before opening: steady incident wave on the left, vacuum right
    for j in np.where(closed_before)[0]:
        out[j] = np.where(x_out < 0, np.exp(1j * (k * x_out - s.omega * times[j])), 0.0)
    if math.isinf(schedule.open_time):
        return WaveField(out, grid, s)

    t0 = schedule.open_time
    psi0 = incident(t0) * 0.5 * (1.0 + erf((x - ramp_at) / width))
    psi0[x > 0] = 0.0
    psi0[n_left] *= 0.5
    prop = CrankNicolsonPropagator(psi0, dx, dt, m, hbar)
    close = schedule.close_time
    open_rows = np.where(~closed_before & ((times <= close) if close is not None else True))[0]
    for j in open_rows:
        prop.advance_to(times[j] - t0)
        out[j] = prop.state(origin_offset)[cols]
    if close is not None and np.any(times > close):
        prop.advance_to(close - t0)
        field_at_close = prop.state()
        right = field_at_close[n_left + 1 :]
        right[-1] = 0.0
        for j in np.where(times > close)[0]:
            evolved = np.concatenate([[0.0], _dirichlet_evolve(right[:-1], dx, dt, times[j] - close, m, hbar), [0.0]])
            full = np.where(x < 0, np.exp(1j * (k * x - s.omega * times[j])), 0.0).astype(complex)
            full[n_left:] = evolved
            if origin_offset:
                # interpolate linearly within the fine mesh
                full = full + (np.roll(full, -1) - full) * (origin_offset / dx)
            out[j] = full[cols]
    return WaveField(out, grid, s)


def calibrate_sign(s: ShutterScenario, grid: SpaceTimeGrid, oracle: WaveField | None = None) -> tuple[int, dict]:
    """Pick the erfc argument sign whose closed form best matches the oracle."""
    if oracle is None:
        oracle = oracle_propagate(s, grid)
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    errs = {}
    for sign in (1, -1):
        closed = psi_ret(s, X, T, sign=sign)
        errs[sign] = float(np.linalg.norm(closed - oracle.values) / np.linalg.norm(oracle.values))
    return min(errs, key=errs.get), errs


def boundary_probe(
    s: ShutterScenario,
    x0: float,
    taus: Sequence[float],
    times: np.ndarray,
) -> BoundaryProbe:
    """Intensity at ``x0`` with and without the future boundary, for each closing time.

    The result feeds :func:`tlalpan_lab.collapse.retro_coherence_time`.
    """
    times = np.asarray(times, dtype=float)
    with_b, without_b = [], []
    base = np.abs(psi_ret(s, x0, times)) ** 2
    a = alpha(s)
    for tau in taus:
        sc = s.with_(tau=float(tau))
        amp = psi_ret(sc, x0, times) + a * psi_adv(sc, x0, times)
        with_b.append(np.abs(amp) ** 2)
        without_b.append(base)
    spacing = float(times[1] - times[0]) if len(times) > 1 else 1.0
    return BoundaryProbe(np.asarray(taus, dtype=float), with_b, without_b, spacing)
