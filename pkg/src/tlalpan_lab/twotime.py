"""Pre- and post-selected (two-time) probabilities on a finite Hilbert space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "PureState",
    "Projector",
    "UnitaryMatrix",
    "IncompatibleSelectionError",
    "abl_probability",
    "abl_distribution",
    "born_probability",
    "born_distribution",
    "check_nonsignaling",
    "time_reverse",
    "computational_projectors",
]

TOL = 1e-10
MAX_DIM = 4096


class IncompatibleSelectionError(ValueError):
    """The post-selected state cannot follow the pre-selected one."""


def _check_dim(d: int) -> None:
    if d < 1 or d > MAX_DIM:
        raise ValueError(f"dimension {d} outside 1..{MAX_DIM}")


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).ravel()
        _check_dim(len(a))
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        norm = float(np.vdot(a, a).real)
        if abs(norm - 1.0) > TOL:
            raise ValueError(f"state is not normalized (norm^2 = {norm!r})")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def normalize(cls, vec) -> "PureState":
        v = np.asarray(vec, dtype=complex).ravel()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(v / n)

    @classmethod
    def basis(cls, d: int, k: int) -> "PureState":
        v = np.zeros(d, dtype=complex)
        v[k] = 1.0
        return cls(v)

    @property
    def dim(self) -> int:
        return len(self.amplitudes)


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector stored as an orthonormal basis of its range (columns)."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex)
        if b.ndim == 1:
            b = b[:, None]
        _check_dim(b.shape[0])
        gram = b.conj().T @ b
        if not np.allclose(gram, np.eye(b.shape[1]), atol=TOL, rtol=0):
            raise ValueError("projector basis is not orthonormal")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.conj().T @ v)

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T


@dataclass(frozen=True, eq=False)
class UnitaryMatrix:
    entries: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.entries, dtype=complex)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("unitary must be a square matrix")
        _check_dim(u.shape[0])
        if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=TOL, rtol=0):
            raise ValueError("matrix is not unitary")
        u.setflags(write=False)
        object.__setattr__(self, "entries", u)

    @classmethod
    def identity(cls, d: int) -> "UnitaryMatrix":
        return cls(np.eye(d, dtype=complex))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def computational_projectors(d: int) -> list[Projector]:
    eye = np.eye(d, dtype=complex)
    return [Projector(eye[:, k]) for k in range(d)]


def _validate_projectors(projectors: Sequence[Projector], d: int) -> None:
    if not projectors:
        raise ValueError("empty projector set")
    if any(p.dim != d for p in projectors):
        raise ValueError("projector dimension does not match the state")
    total = sum(p.matrix() for p in projectors)
    if not np.allclose(total, np.eye(d), atol=TOL, rtol=0):
        raise ValueError("projector set is incomplete: sum of projectors differs from identity")
    for a in range(len(projectors)):
        for b in range(a + 1, len(projectors)):
            overlap = projectors[a].basis.conj().T @ projectors[b].basis
            if np.abs(overlap).max(initial=0.0) > TOL:
                raise ValueError(f"projectors {a} and {b} are not mutually orthogonal")


def _resolve(u: UnitaryMatrix | None, d: int) -> np.ndarray:
    if u is None:
        return np.eye(d, dtype=complex)
    if u.dim != d:
        raise ValueError("unitary dimension does not match the state")
    return u.entries


def _transition_weights(i, f, projectors, u_pre, u_post) -> np.ndarray:
    d = i.dim
    if f.dim != d:
        raise ValueError("pre- and post-selected states differ in dimension")
    _validate_projectors(projectors, d)
    evolved = _resolve(u_pre, d) @ i.amplitudes
    back = _resolve(u_post, d).conj().T @ f.amplitudes
    # <f|U_post P_k U_pre|i> = <U_post^dag f| P_k |U_pre i>
    amps = np.array([np.vdot(back, p.apply(evolved)) for p in projectors])
    return np.abs(amps) ** 2


def abl_distribution(
    i: PureState,
    f: PureState,
    projectors: Sequence[Projector],
    u_pre: UnitaryMatrix | None = None,
    u_post: UnitaryMatrix | None = None,
) -> np.ndarray:
    """ABL probabilities for every outcome of the intermediate measurement."""
    w = _transition_weights(i, f, projectors, u_pre, u_post)
    denom = w.sum()
    if denom <= TOL**2:
        raise IncompatibleSelectionError(
            "incompatible pre/post-selection: every intermediate outcome has zero amplitude"
        )
    return w / denom


def abl_probability(i, f, projectors, k: int, u_pre=None, u_post=None) -> float:
    """Probability of intermediate outcome ``k`` given pre-selection ``i`` and post-selection ``f``."""
    return float(abl_distribution(i, f, projectors, u_pre, u_post)[k])


def born_distribution(i: PureState, projectors: Sequence[Projector], u: UnitaryMatrix | None = None) -> np.ndarray:
    _validate_projectors(projectors, i.dim)
    evolved = _resolve(u, i.dim) @ i.amplitudes
    return np.array([np.vdot(evolved, p.apply(evolved)).real for p in projectors])


def born_probability(i, projectors, k: int, u=None) -> float:
    return float(born_distribution(i, projectors, u)[k])


def check_nonsignaling(
    i: PureState,
    projectors: Sequence[Projector],
    final_basis: Sequence[PureState],
    u_pre: UnitaryMatrix | None = None,
    u_post: UnitaryMatrix | None = None,
) -> float:
    """Max deviation between ABL statistics marginalized over ``final_basis`` and Born statistics.

    Each final state ``f`` is weighted by its probability of occurring after the
    intermediate measurement, ``sum_j |<f|U_post P_j U_pre|i>|^2``.
    """
    d = i.dim
    if not final_basis:
        raise ValueError("empty final basis")
    fmat = np.column_stack([f.amplitudes for f in final_basis])
    if fmat.shape != (d, d) or not np.allclose(fmat.conj().T @ fmat, np.eye(d), atol=TOL, rtol=0):
        raise ValueError("final basis must be orthonormal and complete")
    marginal = np.zeros(len(projectors))
    for f in final_basis:
        w = _transition_weights(i, f, projectors, u_pre, u_post)
        p_f = w.sum()
        if p_f <= 0:
            continue
        marginal += p_f * (w / p_f)
    born = born_distribution(i, projectors, u_pre)
    return float(np.abs(marginal - born).max())


def time_reverse(s: PureState) -> PureState:
    """Antiunitary time reversal for a real Hamiltonian: complex conjugation of amplitudes."""
    return PureState(np.conj(s.amplitudes))
