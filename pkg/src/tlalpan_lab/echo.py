"""Loschmidt echo on lattice billiards, and the cavity-coupled double slit.

A cavity is the set of square-lattice points ``(i h, j h)`` strictly inside a
planar shape, with the 5-point discrete Laplacian and hard walls.  The echo is

    F(t) = |<psi0| exp(+i (H + eps D) t) exp(-i H t) |psi0>|^2
         = |<exp(-i (H + eps D) t) psi0 | exp(-i H t) psi0>|^2,

so both factors are computed as forward propagations and overlapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import expm_multiply

from .twotime import PureState

__all__ = [
    "Rectangle",
    "Stadium",
    "CavityLattice",
    "EchoResult",
    "GeometryComparison",
    "CoupledSlitResult",
    "build_cavity",
    "smooth_disorder",
    "gaussian_packet",
    "propagate",
    "echo_fidelity",
    "loschmidt_echo",
    "ensemble_echo",
    "compare_geometries",
    "coupled_slit_visibility",
    "recurrences",
    "gap_ratio",
    "mean_gap_ratio",
    "EIG_LIMIT",
]

EIG_LIMIT = 3000
MIN_SITES = 100
CANVAS_HALF = 160


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("rectangle sides must be positive")

    def contains(self, x, y, tol=0.0):
        return (np.abs(x) < self.width / 2 - tol) & (np.abs(y) < self.height / 2 - tol)

    @property
    def half_extent(self):
        return self.width / 2, self.height / 2


@dataclass(frozen=True)
class Stadium:
    """Points closer than ``radius`` to a centred core rectangle.

    The core is ``straight_length`` by ``core_height``; ``core_height = 0``
    gives the Bunimovich stadium, and ``radius = 0`` gives the core rectangle
    itself.
    """

    straight_length: float
    radius: float
    core_height: float = 0.0

    def __post_init__(self):
        if min(self.straight_length, self.radius, self.core_height) < 0:
            raise ValueError("stadium dimensions must be non-negative")
        if self.radius == 0 and (self.straight_length == 0 or self.core_height == 0):
            raise ValueError("zero-radius stadium needs a core rectangle of positive area")

    def contains(self, x, y, tol=0.0):
        dx = np.abs(x) - self.straight_length / 2
        dy = np.abs(y) - self.core_height / 2
        outside = np.hypot(np.maximum(dx, 0), np.maximum(dy, 0))
        inside = np.minimum(np.maximum(dx, dy), 0)
        return outside + inside < self.radius - tol

    @property
    def half_extent(self):
        return self.straight_length / 2 + self.radius, self.core_height / 2 + self.radius


class CavityLattice:
    """Interior lattice sites of a hard-wall cavity and their tight-binding Hamiltonian."""

    def __init__(self, geometry, spacing: float, hbar: float = 1.0, mass: float = 1.0):
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        self.geometry = geometry
        self.spacing = float(spacing)
        self.hbar = hbar
        self.mass = mass
        bx, by = geometry.half_extent
        nx, ny = int(math.floor(bx / spacing)), int(math.floor(by / spacing))
        I, J = np.meshgrid(np.arange(-nx, nx + 1), np.arange(-ny, ny + 1), indexing="ij")
        keep = geometry.contains(I * spacing, J * spacing, tol=1e-9 * spacing)
        self.sites = np.column_stack([I[keep], J[keep]])
        if len(self.sites) < MIN_SITES:
            raise ValueError(
                f"spacing {spacing:g} leaves only {len(self.sites)} interior sites; at least {MIN_SITES} are required"
            )
        self.hamiltonian = _laplacian(self.sites, self.hopping)

    @property
    def hopping(self) -> float:
        return self.hbar**2 / (2 * self.mass * self.spacing**2)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def positions(self) -> np.ndarray:
        return self.sites * self.spacing

    def dense(self) -> np.ndarray:
        return self.hamiltonian.toarray()

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.dense())

    def quadrant(self) -> "CavityLattice":
        """Sites with i > 0 and j > 0: the sector odd under both reflections."""
        sub = object.__new__(CavityLattice)
        sub.__dict__.update(
            geometry=self.geometry, spacing=self.spacing, hbar=self.hbar, mass=self.mass,
        )
        keep = (self.sites[:, 0] > 0) & (self.sites[:, 1] > 0)
        sub.sites = self.sites[keep]
        sub.hamiltonian = _laplacian(sub.sites, self.hopping)
        return sub


def _laplacian(sites: np.ndarray, t0: float) -> sparse.csr_matrix:
    n = len(sites)
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(sites)}
    rows, cols = [], []
    for k, (i, j) in enumerate(sites):
        for di, dj in ((1, 0), (0, 1)):
            q = index.get((int(i) + di, int(j) + dj))
            if q is not None:
                rows += [k, q]
                cols += [q, k]
    off = sparse.csr_matrix((np.full(len(rows), -t0), (rows, cols)), shape=(n, n))
    return (sparse.identity(n, format="csr") * (4 * t0) + off).tocsr()


def build_cavity(geometry, spacing: float, hbar: float = 1.0, mass: float = 1.0) -> CavityLattice:
    return CavityLattice(geometry, spacing, hbar, mass)


def smooth_disorder(c: CavityLattice, seed: int, correlation: float = 3.0) -> np.ndarray:
    """Smooth on-site potential with zero mean and unit RMS over the cavity.

    White noise is drawn on a fixed lattice canvas around the origin and
    Gaussian filtered (correlation length in lattice spacings); each cavity
    samples it at its own sites.  Two cavities built with the same spacing
    therefore see the same field where they overlap.
    """
    half = max(CANVAS_HALF, int(np.abs(c.sites).max()) + 1)
    rng = np.random.default_rng(seed)
    canvas = ndimage.gaussian_filter(rng.standard_normal((2 * half + 1, 2 * half + 1)), correlation, mode="wrap")
    d = canvas[c.sites[:, 0] + half, c.sites[:, 1] + half]
    d = d - d.mean()
    return d / math.sqrt(float(np.mean(d**2)))


def gaussian_packet(
    c: CavityLattice,
    center: tuple[float, float] = (0.0, 0.0),
    direction: float = 0.0,
    width: float | None = None,
    momentum: float | None = None,
) -> PureState:
    """Gaussian packet; defaults are width 4 spacings, wavenumber a quarter of the band edge."""
    h = c.spacing
    width = 4 * h if width is None else width
    momentum = math.pi / (4 * h) if momentum is None else momentum
    x, y = c.positions.T
    psi = np.exp(
        -((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * width**2)
        + 1j * momentum * (math.cos(direction) * x + math.sin(direction) * y)
    )
    return PureState.normalize(psi)


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) == 0 or not np.all(np.isfinite(t)):
        raise ValueError("times must be a non-empty finite 1-D series")
    return t


def propagate(H, psi: np.ndarray, times, eig=None, hbar: float = 1.0) -> np.ndarray:
    """Rows are ``exp(-i H t / hbar) psi`` for each t.

    With ``eig = (energies, vectors)`` the eigenbasis is used; otherwise the
    action of the matrix exponential is computed directly (scipy's
    ``expm_multiply``), which never forms a dense matrix.
    """
    t = _check_times(times)
    psi = np.asarray(psi, dtype=complex)
    if eig is not None:
        e, V = eig
        c = V.T @ psi
        return (np.exp(-1j * np.outer(t, e) / hbar) * c) @ V.T
    A = -1j * sparse.csr_matrix(H) / hbar
    uniform = len(t) > 2 and np.allclose(np.diff(t), t[1] - t[0], rtol=1e-12, atol=0)
    if uniform:
        return expm_multiply(A, psi, start=t[0], stop=t[-1], num=len(t), endpoint=True)
    return np.stack([expm_multiply(A * ti, psi) for ti in t])


def _echo_amplitudes(c: CavityLattice, states, epsilon: float, times: np.ndarray, delta: np.ndarray):
    """Overlaps <exp(-i H' t) psi | exp(-i H t) psi> per time (rows) and state (columns)."""
    H1 = c.hamiltonian + epsilon * sparse.diags(delta)
    psi = np.column_stack([s.amplitudes for s in states])
    hb = c.hbar
    if c.n_sites <= EIG_LIMIT:
        e0, V0 = c.eigensystem
        e1, V1 = np.linalg.eigh(H1.toarray())
        M = V1.T @ V0
        c0, c1 = V0.T @ psi, (V1.T @ psi).conj()
        amp = np.empty((len(times), psi.shape[1]), dtype=complex)
        for k, t in enumerate(times):
            amp[k] = (c1 * np.exp(1j * e1 * t / hb)[:, None] * (M @ (c0 * np.exp(-1j * e0 * t / hb)[:, None]))).sum(0)
        drift = float(np.max(np.abs(np.linalg.norm(c0, axis=0) - 1.0)))
        return amp, drift
    amp = np.empty((len(times), psi.shape[1]), dtype=complex)
    drift = 0.0
    for j in range(psi.shape[1]):
        a = propagate(c.hamiltonian, psi[:, j], times, hbar=hb)
        b = propagate(H1, psi[:, j], times, hbar=hb)
        amp[:, j] = np.einsum("tm,tm->t", b.conj(), a)
        drift = max(drift, float(np.max(np.abs(np.linalg.norm(a, axis=1) - 1.0))))
    return amp, drift


def echo_fidelity(H, V, psi0, epsilon: float, times, hbar: float = 1.0) -> np.ndarray:
    """F(t) for dense Hermitian ``H`` and perturbation ``V`` by exact diagonalisation."""
    H = np.asarray(H, dtype=complex)
    V = np.asarray(V, dtype=complex)
    psi = np.asarray(psi0.amplitudes if isinstance(psi0, PureState) else psi0, dtype=complex)
    if H.shape != V.shape or H.shape != (len(psi), len(psi)):
        raise ValueError("dimension mismatch between H, V and psi0")
    t = _check_times(times)
    e0, U0 = np.linalg.eigh(H)
    e1, U1 = np.linalg.eigh(H + epsilon * V)
    a = (np.exp(-1j * np.outer(t, e0) / hbar) * (U0.conj().T @ psi)) @ U0.T
    b = (np.exp(-1j * np.outer(t, e1) / hbar) * (U1.conj().T @ psi)) @ U1.T
    return np.abs(np.einsum("tm,tm->t", b.conj(), a)) ** 2


@dataclass
class EchoResult:
    times: np.ndarray
    fidelity: np.ndarray
    epsilon: float
    decay_rate: float
    decay_stderr: float
    fit_window: tuple[float, float]
    norm_drift: float = 0.0

    @property
    def decays(self) -> bool:
        return bool(self.fidelity.min() < 1 - 1e-9)

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["t,fidelity"] + [f"{t!r},{f!r}" for t, f in zip(self.times.tolist(), self.fidelity.tolist())]
        path.write_text("\n".join(lines) + "\n")
        return path


def _fit_decay(times: np.ndarray, F: np.ndarray, floor: float = 0.3):
    """Early-time rate: fit log F = -rate * t (through the origin) until F first drops below ``floor``."""
    pos = times > 0
    t, f = times[pos], F[pos]
    if len(t) == 0 or f.min() >= 1 - 1e-9:
        return 0.0, 0.0, (float(times[0]), float(times[-1]))
    below = np.nonzero(f < floor)[0]
    k = int(below[0]) if len(below) else len(t)
    k = max(k, min(3, len(t)))
    tt, yy = t[:k], np.log(np.clip(f[:k], 1e-300, None))
    rate = -float(tt @ yy / (tt @ tt))
    resid = yy + rate * tt
    dof = max(k - 1, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / float(tt @ tt))
    return rate, stderr, (float(tt[0]), float(tt[-1]))


def _validate_states(c, states):
    for s in states:
        if s.dim != c.n_sites:
            raise ValueError(f"state dimension {s.dim} does not match the cavity's {c.n_sites} sites")


def loschmidt_echo(
    c: CavityLattice,
    psi0: PureState,
    epsilon: float,
    times,
    seed: int = 0,
    delta: np.ndarray | None = None,
) -> EchoResult:
    """Echo fidelity of ``psi0`` under the perturbation ``epsilon * delta``.

    ``delta`` defaults to :func:`smooth_disorder` with ``seed``.
    """
    return ensemble_echo(c, [psi0], epsilon, times, seeds=[seed], delta=delta)


def ensemble_echo(
    c: CavityLattice,
    states: Sequence[PureState],
    epsilon: float,
    times,
    seeds: Sequence[int] = (0,),
    delta: np.ndarray | None = None,
) -> EchoResult:
    """Echo fidelity averaged over initial states and disorder seeds."""
    if not epsilon >= 0:
        raise ValueError("epsilon must be non-negative")
    times = _check_times(times)
    _validate_states(c, states)
    if not states or not seeds:
        raise ValueError("need at least one state and one seed")
    total = np.zeros(len(times))
    drift = 0.0
    fields = [delta] if delta is not None else [smooth_disorder(c, s) for s in seeds]
    for d in fields:
        d = np.asarray(d, dtype=float)
        if d.shape != (c.n_sites,):
            raise ValueError("perturbation field does not match the cavity")
        amp, dr = _echo_amplitudes(c, states, epsilon, times, d)
        total += (np.abs(amp) ** 2).sum(axis=1)
        drift = max(drift, dr)
    F = np.clip(total / (len(fields) * len(states)), 0.0, None)
    rate, err, window = _fit_decay(times, F)
    return EchoResult(times, F, float(epsilon), rate, err, window, drift)


@dataclass
class GeometryComparison:
    rate_regular: float
    rate_chaotic: float
    ratio: float
    ratio_stderr: float
    faster_chaotic: bool
    no_decay: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compare_geometries(rect: EchoResult, stad: EchoResult, z: float = 2.0) -> GeometryComparison:
    """Ratio of early-time decay rates (second over first), flagged if above 1 by ``z`` errors."""
    if rect.epsilon != stad.epsilon or not np.array_equal(rect.times, stad.times):
        raise ValueError("echo runs must share epsilon and time grid")
    lo = max(rect.fit_window[0], stad.fit_window[0])
    hi = min(rect.fit_window[1], stad.fit_window[1])
    if lo >= hi:
        raise ValueError("fit windows do not overlap")
    if rect.decay_rate <= 0 or stad.decay_rate <= 0:
        return GeometryComparison(rect.decay_rate, stad.decay_rate, math.nan, math.nan, False, True)
    ratio = stad.decay_rate / rect.decay_rate
    rel = math.hypot(rect.decay_stderr / rect.decay_rate, stad.decay_stderr / stad.decay_rate)
    err = ratio * rel
    return GeometryComparison(rect.decay_rate, stad.decay_rate, ratio, err, bool(ratio - z * err > 1), False)


def recurrences(values, times, level: float = 0.5, drop: float = 0.45) -> list[float]:
    """Times at which ``values`` climbs back to ``level`` after falling below ``drop``.

    The hysteresis gap between ``drop`` and ``level`` keeps noise around a
    single crossing from being counted as a revival.
    """
    out, armed = [], False
    for v, t in zip(values, times):
        if v < drop:
            armed = True
        elif armed and v >= level:
            out.append(float(t))
            armed = False
    return out


@dataclass
class CoupledSlitResult:
    times: np.ndarray
    regular: np.ndarray
    chaotic: np.ndarray
    epsilon: float
    level: float = 0.5
    drop: float = 0.45
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("regular", "chaotic"):
            v = getattr(self, name)
            self.stats[name] = {
                "mean": float(v.mean()),
                "recurrences": recurrences(v, self.times, self.level, self.drop),
                "late_max": float(v[len(v) // 2 :].max()),
            }

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["t,V_regular,V_chaotic"] + [
            f"{t!r},{a!r},{b!r}" for t, a, b in zip(self.times.tolist(), self.regular.tolist(), self.chaotic.tolist())
        ]
        path.write_text("\n".join(lines) + "\n")
        return path


def _marker_visibility(c, markers, epsilon, times, seeds):
    vs = []
    for s in seeds:
        amp, _ = _echo_amplitudes(c, markers, epsilon, times, smooth_disorder(c, s))
        vs.append(np.abs(amp))
    return np.mean(np.concatenate(vs, axis=1), axis=1)


def coupled_slit_visibility(
    reg: CavityLattice,
    chaotic: CavityLattice,
    marker0,
    times,
    epsilon: float,
    seeds: Sequence[int] = (0,),
) -> CoupledSlitResult:
    """Which-way visibility when one slit's photon perturbs the cavity marker.

    Path A leaves the marker evolving under H, path B under H + eps D; the
    fringe visibility is ``|<marker_A(t)|marker_B(t)>|``.  ``marker0`` is one
    state valid for both cavities, or a pair ``(regular, chaotic)`` of state
    lists (one list per cavity, averaged).
    """
    times = _check_times(times)
    if not epsilon >= 0:
        raise ValueError("epsilon must be non-negative")
    if isinstance(marker0, PureState):
        m_reg = m_cha = [marker0]
    else:
        m_reg, m_cha = marker0
        m_reg = [m_reg] if isinstance(m_reg, PureState) else list(m_reg)
        m_cha = [m_cha] if isinstance(m_cha, PureState) else list(m_cha)
    _validate_states(reg, m_reg)
    _validate_states(chaotic, m_cha)
    v_reg = np.clip(_marker_visibility(reg, m_reg, epsilon, times, seeds), 0.0, 1.0)
    v_cha = np.clip(_marker_visibility(chaotic, m_cha, epsilon, times, seeds), 0.0, 1.0)
    return CoupledSlitResult(times, v_reg, v_cha, float(epsilon))


# ---------------------------------------------------------------------------
# spectral statistics


def gap_ratio(levels) -> np.ndarray:
    """Adjacent-gap ratios min(s_n, s_{n+1}) / max(s_n, s_{n+1}) of a sorted spectrum."""
    e = np.sort(np.asarray(levels, dtype=float))
    s = np.diff(e)
    a, b = s[:-1], s[1:]
    hi = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(hi > 0, np.minimum(a, b) / hi, 0.0)
    return r


def mean_gap_ratio(c: CavityLattice, fraction: float = 0.5) -> float:
    """Mean gap ratio of the doubly-odd symmetry sector, lowest ``fraction`` of its levels."""
    q = c.quadrant()
    e = np.linalg.eigvalsh(q.dense())
    n = max(int(len(e) * fraction), 3)
    return float(gap_ratio(e[:n]).mean())
