"""Domain types and validation for the SIS patch model.

A model is a set of patches (each with a contact rate ``lambda`` and a
recovery rate ``gamma``) joined by a symmetric, connected mobility network.
Everything downstream assumes a :class:`ValidatedModel`, which can only be
obtained from :func:`validate`.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidAdjacency,
    NonpositiveRate,
    NotIrreducible,
    SymmetryViolation,
    UnequalDiffusion,
)


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PatchParams:
    lam: float
    gamma: float


@dataclass(frozen=True)
class Network:
    """Mobility network: ``adjacency[j, k]`` is the movement degree j -> k."""

    adjacency: np.ndarray
    nu_s: float = 0.0
    nu_i: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _frozen(np.atleast_2d(self.adjacency)))

    @property
    def ell(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    patches: tuple[PatchParams, ...]
    network: Network
    _token: object = field(default=None, repr=False)

    def __post_init__(self):
        if self._token is not _VALIDATED:
            raise TypeError("ValidatedModel must be built with patchsis.validate()")

    @property
    def ell(self) -> int:
        return len(self.patches)

    @property
    def lam(self) -> np.ndarray:
        return np.array([p.lam for p in self.patches])

    @property
    def gamma(self) -> np.ndarray:
        return np.array([p.gamma for p in self.patches])

    @property
    def adjacency(self) -> np.ndarray:
        return self.network.adjacency

    @property
    def nu_s(self) -> float:
        return self.network.nu_s

    @property
    def nu_i(self) -> float:
        return self.network.nu_i

    @property
    def equal_diffusion(self) -> bool:
        return self.nu_s == self.nu_i

    def require_equal_diffusion(self) -> float:
        if not self.equal_diffusion:
            raise UnequalDiffusion(
                f"reduction needs nu_s == nu_i (got {self.nu_s!r} and {self.nu_i!r})"
            )
        return self.nu_i

    def replace(self, *, lam=None, gamma=None, adjacency=None, nu_s=None, nu_i=None):
        """Return a re-validated copy with some parameters swapped out."""
        lam = self.lam if lam is None else np.broadcast_to(lam, (self.ell,))
        gamma = self.gamma if gamma is None else np.broadcast_to(gamma, (self.ell,))
        net = Network(
            self.adjacency if adjacency is None else adjacency,
            self.nu_s if nu_s is None else nu_s,
            self.nu_i if nu_i is None else nu_i,
        )
        return validate([PatchParams(float(l), float(g)) for l, g in zip(lam, gamma)], net)

    def __eq__(self, other):
        if not isinstance(other, ValidatedModel):
            return NotImplemented
        return (
            self.patches == other.patches
            and self.nu_s == other.nu_s
            and self.nu_i == other.nu_i
            and np.array_equal(self.adjacency, other.adjacency)
        )

    __hash__ = None


_VALIDATED = object()


@dataclass(frozen=True)
class DiscreteState:
    """Integer head counts per patch."""

    s: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", _frozen(self.s, np.int64))
        object.__setattr__(self, "i", _frozen(self.i, np.int64))

    @property
    def total(self) -> int:
        return int(self.s.sum() + self.i.sum())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.s, self.i])


@dataclass(frozen=True)
class ContinuousState:
    """Proportions per patch; ``s`` and ``i`` each have one entry per patch."""

    s: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        s = _frozen(np.atleast_1d(self.s))
        i = _frozen(np.atleast_1d(self.i))
        if s.shape != i.shape or s.ndim != 1:
            raise DimensionMismatch(f"s and i must be vectors of equal length, got {s.shape}, {i.shape}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "i", i)

    @property
    def ell(self) -> int:
        return self.s.shape[0]

    @property
    def mass(self) -> float:
        return float(self.s.sum() + self.i.sum())

    @property
    def patch_totals(self) -> np.ndarray:
        return self.s + self.i

    @property
    def prevalence(self) -> np.ndarray:
        """i_j / (s_j + i_j), with 0 for empty patches."""
        n = self.patch_totals
        return np.divide(self.i, n, out=np.zeros_like(n), where=n > 0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.s, self.i])

    @classmethod
    def from_vector(cls, z) -> "ContinuousState":
        z = np.asarray(z, dtype=float)
        ell = z.shape[0] // 2
        return cls(z[:ell], z[ell:])


@dataclass(frozen=True)
class DerivedMatrices:
    B: np.ndarray
    A_gamma: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    V: np.ndarray


def is_irreducible(adjacency) -> bool:
    """True iff the directed graph of nonzero entries is strongly connected."""
    return not _unreachable(np.asarray(adjacency))


def _reach(nonzero: np.ndarray) -> set[int]:
    seen = {0}
    queue = deque([0])
    while queue:
        j = queue.popleft()
        for k in np.flatnonzero(nonzero[j]):
            k = int(k)
            if k not in seen:
                seen.add(k)
                queue.append(k)
    return seen


def _unreachable(adjacency: np.ndarray) -> set[int]:
    ell = adjacency.shape[0]
    if ell <= 1:
        return set()
    nz = adjacency != 0
    everyone = set(range(ell))
    # forward and backward BFS from patch 0 together give strong connectivity
    missing = everyone - _reach(nz)
    if not missing:
        missing = everyone - _reach(nz.T)
    return missing


def validate(patches: Sequence[PatchParams], network: Network) -> ValidatedModel:
    """Check every structural assumption and return an immutable model.

    Raises
    ------
    DimensionMismatch
        adjacency is not square or does not match the number of patches.
    NonpositiveRate
        some ``lam`` or ``gamma`` is not a finite positive number.
    InvalidAdjacency
        negative entries, nonzero diagonal, non-finite values or negative
        diffusion coefficients.
    SymmetryViolation
        ``a[j][k] != a[k][j]`` for some pair (exact comparison).
    NotIrreducible
        the network splits into disconnected groups of patches.
    """
    patches = tuple(
        p if isinstance(p, PatchParams) else PatchParams(*p) for p in patches
    )
    a = network.adjacency
    ell = len(patches)
    if ell < 1:
        raise DimensionMismatch("a model needs at least one patch")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"adjacency must be square, got shape {a.shape}")
    if a.shape[0] != ell:
        if not (ell == 1 and a.size == 0):
            raise DimensionMismatch(
                f"{ell} patches but adjacency is {a.shape[0]}x{a.shape[1]}"
            )
        network = Network(np.zeros((1, 1)), network.nu_s, network.nu_i)
        a = network.adjacency

    for j, p in enumerate(patches):
        for name in ("lam", "gamma"):
            v = getattr(p, name)
            if not (isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(v) and v > 0):
                raise NonpositiveRate(f"patch {j}: {name} must be finite and > 0, got {v!r}", patch=j)

    for name in ("nu_s", "nu_i"):
        v = getattr(network, name)
        if not (math.isfinite(v) and v >= 0):
            raise InvalidAdjacency(f"{name} must be finite and >= 0, got {v!r}")

    if not np.all(np.isfinite(a)):
        raise InvalidAdjacency("adjacency has non-finite entries")
    neg = np.argwhere(a < 0)
    if neg.size:
        j, k = neg[0]
        raise InvalidAdjacency(f"adjacency entry a[{j}][{k}]={a[j, k]!r} is negative")
    diag = np.flatnonzero(np.diag(a))
    if diag.size:
        j = diag[0]
        raise InvalidAdjacency(f"adjacency diagonal a[{j}][{j}]={a[j, j]!r} must be 0")
    asym = np.argwhere(a != a.T)
    if asym.size:
        j, k = sorted(asym[0])
        raise SymmetryViolation(int(j), int(k), a[j, k], a[k, j])
    missing = _unreachable(a)
    if missing:
        raise NotIrreducible(missing)

    return ValidatedModel(patches, network, _token=_VALIDATED)


def make_model(lam, gamma, adjacency=None, nu_s=0.0, nu_i=0.0) -> ValidatedModel:
    """Convenience constructor from plain arrays.

    ``lam`` and ``gamma`` may be scalars (broadcast over patches when an
    adjacency is given) or sequences.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if adjacency is None:
        ell = max(lam.size, gamma.size)
        adjacency = np.zeros((ell, ell))
    adjacency = np.atleast_2d(np.asarray(adjacency, dtype=float))
    ell = adjacency.shape[0]
    if lam.size == 1:
        lam = np.full(ell, lam[0])
    if gamma.size == 1:
        gamma = np.full(ell, gamma[0])
    if lam.size != gamma.size:
        raise DimensionMismatch(f"{lam.size} contact rates but {gamma.size} recovery rates")
    patches = [PatchParams(float(l), float(g)) for l, g in zip(lam, gamma)]
    return validate(patches, Network(adjacency, float(nu_s), float(nu_i)))


def mobility_laplacian(adjacency) -> np.ndarray:
    """``d_ij = a_ij`` off the diagonal, ``d_ii = -sum_k a_ik``."""
    a = np.asarray(adjacency, dtype=float)
    d = a.copy()
    np.fill_diagonal(d, 0.0)
    d[np.diag_indices_from(d)] = -d.sum(axis=1)
    return d


def derive_matrices(model: ValidatedModel) -> DerivedMatrices:
    D = mobility_laplacian(model.adjacency)
    A_gamma = np.diag(model.gamma)
    return DerivedMatrices(
        B=_frozen(np.diag(model.lam)),
        A_gamma=_frozen(A_gamma),
        D=_frozen(D),
        Q=_frozen(D.T),
        V=_frozen(model.nu_i * D - A_gamma),
    )
