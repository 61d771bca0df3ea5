"""Spectral analysis: eigen-decomposition, gaps, torus closed forms, heat kernel.

Reversible kernels are diagonalized through the symmetrization
S = D^(1/2) P D^(-1/2) with D = diag(pi), which shares the eigenvalues
of P and has a real orthonormal eigenbasis w.r.t. the counting measure.
The eigensolver is an in-repo cyclic Jacobi (desk-scale matrices); dense
library solvers appear only as independent oracles in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional

import numpy as np

from .backend import core
from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    EigenSolverFailure,
    EvenTorusSide,
    PeriodicGraph,
)
from .kernel import Kernel, torus_neighbors

UNIT_EIGENVALUE_TOL = 1e-9

# Two-sided quadratic envelope for the 1-d torus eigenvalues
# lam_j = 1 - cos(2*pi*j/n), valid for 1 <= j <= n/2 (so 2*pi*j/n <= pi):
#   C1 * j^2/n^2 <= lam_j <= C2 * j^2/n^2
# from x^2/2 - x^4/24 <= 1 - cos(x) <= x^2/2 at x = 2*pi*j/n.
EIGENVALUE_ENVELOPE_C1 = 2.0 * math.pi**2 - math.pi**4 / 6.0
EIGENVALUE_ENVELOPE_C2 = 2.0 * math.pi**2


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (descending), counting-orthonormal eigenvectors, gaps."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, orthonormal w.r.t. counting measure
    gap_abs: float            # 1 - lambda_*
    gap_two_step: float       # 1 - lambda_*^2

    @property
    def lambda_star(self) -> float:
        return 1.0 - self.gap_abs


def decompose(k: Kernel, max_sweeps: int = 60) -> SpectralDecomposition:
    """Eigen-decompose a reversible kernel via its symmetrization."""
    sqrt_pi = np.sqrt(k.pi)
    S = (sqrt_pi[:, None] * k.P) / sqrt_pi[None, :]
    S = 0.5 * (S + S.T)
    w, V, converged = core.jacobi_eigh(S, max_sweeps)
    if not converged:
        raise EigenSolverFailure(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    if abs(w[0] - 1.0) > 1e-10:
        raise EigenSolverFailure(f"top eigenvalue {w[0]!r} is not 1")
    if np.abs(w).max() > 1.0 + 1e-10:
        raise EigenSolverFailure("eigenvalue magnitude exceeds 1")
    if w[-1] <= -1.0 + UNIT_EIGENVALUE_TOL:
        raise PeriodicGraph(f"bottom eigenvalue {w[-1]!r} pins the chain periodic")
    non_unit = w[np.abs(w - 1.0) > UNIT_EIGENVALUE_TOL]
    if non_unit.shape[0] != w.shape[0] - 1:
        raise DisconnectedGraph("eigenvalue 1 has multiplicity > 1")
    lam_star = float(np.abs(non_unit).max())
    return SpectralDecomposition(
        eigenvalues=w,
        eigenvectors=V,
        gap_abs=1.0 - lam_star,
        gap_two_step=1.0 - lam_star * lam_star,
    )


def _check_torus(d: int, n: int) -> None:
    if n % 2 == 0:
        raise EvenTorusSide(f"torus side {n} is even")
    if n < 3 or d < 1:
        raise ValueError(f"need n >= 3 odd and d >= 1, got d={d}, n={n}")


def _ell(n: int) -> np.ndarray:
    """1-d continuous-time eigenvalues 1 - cos(2*pi*k/n), k = 0..n-1."""
    return 1.0 - np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class TorusSpectrum:
    """Closed-form spectrum of the simple random walk on T_n^d."""

    d: int
    n: int
    lambda_hat: np.ndarray  # per site index x: d^-1 sum_mu (1 - cos(2 pi x_mu / n))
    gamma11: float          # 1 - cos(2 pi / n)
    gamma1d: float          # gamma11 / d
    gamma2d: float          # two-step gap, d <= 3 / d >= 4 split
    _basis: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return self.n**self.d

    def eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        """Counting-orthonormal eigenbasis (columns) and its lambda_hat values.

        Cached; size is n_sites x n_sites, so intended for desk-scale tori.
        """
        if "psi" not in self._basis:
            psi, lam = torus_eigenbasis(self.d, self.n)
            self._basis["psi"] = psi
            self._basis["lam"] = lam
        return self._basis["psi"], self._basis["lam"]


def torus_gaps(d: int, n: int) -> TorusSpectrum:
    """Closed-form spectral gaps of T_n^d (odd n)."""
    _check_torus(d, n)
    ell = _ell(n)
    lam = ell.copy()
    for _ in range(d - 1):
        lam = (ell[:, None] + lam[None, :]).ravel()
    lam /= d
    gamma11 = float(ell[1])
    if d <= 3:
        gamma2d = 1.0 - math.cos(math.pi / n) ** 2
    else:
        gamma2d = 2.0 * gamma11 / d - (gamma11 / d) ** 2
    return TorusSpectrum(
        d=d,
        n=n,
        lambda_hat=lam,
        gamma11=gamma11,
        gamma1d=gamma11 / d,
        gamma2d=gamma2d,
    )


def _basis_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(n)
    B = np.empty((n, n))
    lam = np.empty(n)
    B[:, 0] = 1.0 / math.sqrt(n)
    lam[0] = 0.0
    amp = math.sqrt(2.0 / n)
    for j in range(1, (n - 1) // 2 + 1):
        ang = 2.0 * np.pi * j * i / n
        B[:, 2 * j - 1] = amp * np.cos(ang)
        B[:, 2 * j] = amp * np.sin(ang)
        lam[2 * j - 1] = lam[2 * j] = 1.0 - math.cos(2.0 * math.pi * j / n)
    return B, lam


def torus_eigenbasis(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Real orthonormal eigenbasis of T_n^d and per-column lambda_hat.

    Columns are Kronecker products of the 1-d cosine/sine basis; the
    constant column (lambda_hat = 0) comes first.
    """
    _check_torus(d, n)
    B, lam1 = _basis_1d(n)
    psi = reduce(lambda acc, _: np.kron(B, acc), range(d - 1), B)
    lam = lam1.copy()
    for _ in range(d - 1):
        lam = (lam1[:, None] + lam[None, :]).ravel()
    lam /= d
    order = np.argsort(lam, kind="stable")
    return psi[:, order], lam[order]


def heat_kernel(d: int, n: int, t: float) -> np.ndarray:
    """Heat kernel p(t, .) of the continuous-time walk on T_n^d from the origin.

    Product form over coordinates: p(t, x) = prod_mu p1(t/d, x_mu), with
    the 1-d kernel evaluated by its cosine series. O(d n^d) per call.
    """
    _check_torus(d, n)
    if t < 0:
        raise ValueError("t must be >= 0")
    i = np.arange(n)
    ell = _ell(n)
    half = (n - 1) // 2
    p1 = np.full(n, 1.0 / n)
    for j in range(1, half + 1):
        p1 += (2.0 / n) * math.exp(-ell[j] * t / d) * np.cos(2.0 * np.pi * j * i / n)
    p = p1
    for _ in range(d - 1):
        p = (p1[:, None] * p[None, :]).ravel()
    return p


def heat_evolve(f0: np.ndarray, s: float, d: int, n: int) -> np.ndarray:
    """Evolve f0 by the heat semigroup for time s (spectral multiplication).

    s = 0 is the identity, exactly (no basis round trip).
    """
    f0 = np.asarray(f0, dtype=float)
    if f0.shape[0] != n**d:
        raise DimensionMismatch(
            f"profile has {f0.shape[0]} entries, torus has {n**d}"
        )
    if s == 0.0:
        return f0.copy()
    psi, lam = torus_eigenbasis(d, n)
    return psi @ (np.exp(-lam * s) * (psi.T @ f0))


def laplacian_of(f: np.ndarray, d: int, n: int) -> np.ndarray:
    """Discrete Laplacian on T_n^d: neighbor mean minus center, (P - I) f."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != n**d:
        raise DimensionMismatch(f"profile has {f.shape[0]} entries, expected {n**d}")
    nbr = torus_neighbors(d, n)
    return f[nbr].mean(axis=1) - f
