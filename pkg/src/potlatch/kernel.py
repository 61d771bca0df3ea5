"""Finite reversible transition kernels and the graphs they live on.

A kernel bundles a row-stochastic matrix P, its stationary vector pi,
and structural guarantees (irreducibility, aperiodicity, reversibility)
that every downstream computation relies on. Built-in graphs are the
d-dimensional discrete torus with odd side (simple random walk) and the
complete graph (uniform kernel); arbitrary reversible kernels load from
JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import (
    DisconnectedGraph,
    EvenTorusSide,
    NoConvergence,
    NonStochasticRow,
    NotReversible,
    PeriodicGraph,
    SiteCapExceeded,
)

ROW_SUM_TOL = 1e-12
REVERSIBILITY_TOL = 1e-12
DEFAULT_SITE_CAP = 10**6


@dataclass(frozen=True)
class TorusSpec:
    """Simple random walk on the d-dimensional torus with odd side n."""

    d: int
    n: int

    def validate(self, site_cap: int = DEFAULT_SITE_CAP) -> None:
        if self.d < 1:
            raise ValueError(f"torus dimension must be >= 1, got {self.d}")
        if self.n < 3:
            raise ValueError(f"torus side must be >= 3, got {self.n}")
        if self.n % 2 == 0:
            raise EvenTorusSide(
                f"torus side {self.n} is even: the walk is periodic"
            )
        if self.n**self.d > site_cap:
            raise SiteCapExceeded(
                f"torus has {self.n}**{self.d} sites, cap is {site_cap}"
            )

    @property
    def n_sites(self) -> int:
        return self.n**self.d


@dataclass(frozen=True)
class CompleteSpec:
    """Uniform kernel p_ij = 1/n on n >= 2 sites."""

    n: int

    def validate(self, site_cap: int = DEFAULT_SITE_CAP) -> None:
        if self.n < 2:
            raise ValueError(f"complete graph needs n >= 2, got {self.n}")
        if self.n > site_cap:
            raise SiteCapExceeded(f"{self.n} sites, cap is {site_cap}")

    @property
    def n_sites(self) -> int:
        return self.n


@dataclass(frozen=True)
class CustomSpec:
    """User-supplied row-stochastic matrix; pi derived when absent."""

    P: np.ndarray
    pi: Optional[np.ndarray] = None

    def validate(self, site_cap: int = DEFAULT_SITE_CAP) -> None:
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        if P.shape[0] < 2:
            raise ValueError("custom kernels need at least 2 sites")
        if P.shape[0] > site_cap:
            raise SiteCapExceeded(f"{P.shape[0]} sites, cap is {site_cap}")

    @property
    def n_sites(self) -> int:
        return np.asarray(self.P).shape[0]


GraphSpec = Union[TorusSpec, CompleteSpec, CustomSpec]


@dataclass(frozen=True, eq=False)
class Kernel:
    """Validated reversible kernel: P row-stochastic, pi P = pi, detailed balance.

    Instances are immutable (arrays are write-protected) and compared by
    identity, which lets downstream modules cache derived structures.
    """

    n_sites: int
    P: np.ndarray
    pi: np.ndarray
    pi_min: float
    pi_max: float
    graph: Optional[GraphSpec] = field(default=None, compare=False)

    @property
    def is_torus(self) -> bool:
        return isinstance(self.graph, TorusSpec)

    def torus_shape(self) -> tuple[int, int]:
        if not self.is_torus:
            raise ValueError("kernel is not a torus kernel")
        return self.graph.d, self.graph.n


def _strongly_connected(P: np.ndarray) -> bool:
    """Strong connectivity of the positive-entry digraph (Kosaraju-lite)."""
    n = P.shape[0]
    adj = P > 0.0

    def reaches_all(mat: np.ndarray) -> bool:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.nonzero(mat[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return bool(seen.all())

    return reaches_all(adj) and reaches_all(adj.T)


def _period(P: np.ndarray) -> int:
    """gcd of cycle lengths of the positive-entry digraph.

    BFS from site 0; every edge (u, v) contributes |level(u) + 1 - level(v)|
    to the gcd. Assumes strong connectivity.
    """
    n = P.shape[0]
    level = np.full(n, -1, dtype=np.int64)
    level[0] = 0
    queue = [0]
    edges = []
    while queue:
        nxt = []
        for u in queue:
            for v in np.nonzero(P[u] > 0.0)[0]:
                v = int(v)
                edges.append((u, v))
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        queue = nxt
    g = 0
    for u, v in edges:
        g = math.gcd(g, abs(int(level[u]) + 1 - int(level[v])))
        if g == 1:
            return 1
    return g


def validate_kernel(P: np.ndarray, pi: np.ndarray) -> None:
    """Check all Kernel invariants, raising the specific failure."""
    n = P.shape[0]
    row_err = np.abs(P.sum(axis=1) - 1.0)
    if row_err.max() > ROW_SUM_TOL:
        bad = int(row_err.argmax())
        raise NonStochasticRow(
            f"row {bad} sums to {P[bad].sum():.17g} (tolerance {ROW_SUM_TOL})"
        )
    if np.any(P < 0.0):
        raise NonStochasticRow("negative transition probabilities")
    if abs(pi.sum() - 1.0) > 1e-10 or np.any(pi <= 0.0):
        raise NotReversible(
            f"pi is not a strictly positive probability vector (sum {pi.sum()!r})"
        )
    flux = pi[:, None] * P
    asym = np.abs(flux - flux.T).max()
    if asym > REVERSIBILITY_TOL:
        raise NotReversible(
            f"max |pi_i p_ij - pi_j p_ji| = {asym:.3e} > {REVERSIBILITY_TOL}"
        )
    if not _strongly_connected(P):
        raise DisconnectedGraph("positive-entry digraph is not strongly connected")
    if _period(P) != 1:
        raise PeriodicGraph(f"chain has period {_period(P)}")
    if n != pi.shape[0]:
        raise NotReversible("pi length does not match P")


def _make_kernel(P: np.ndarray, pi: np.ndarray, graph: Optional[GraphSpec]) -> Kernel:
    P = np.ascontiguousarray(P, dtype=float)
    pi = np.ascontiguousarray(pi, dtype=float)
    validate_kernel(P, pi)
    P.setflags(write=False)
    pi.setflags(write=False)
    return Kernel(
        n_sites=P.shape[0],
        P=P,
        pi=pi,
        pi_min=float(pi.min()),
        pi_max=float(pi.max()),
        graph=graph,
    )


def torus_neighbors(d: int, n: int) -> np.ndarray:
    """Neighbor table of T_n^d, shape (n^d, 2d).

    Site index is x_1 + n*x_2 + ... (first coordinate fastest); columns
    alternate +e_mu, -e_mu for mu = 1..d.
    """
    size = n**d
    idx = np.arange(size, dtype=np.int64)
    nbr = np.empty((size, 2 * d), dtype=np.int64)
    stride = 1
    for mu in range(d):
        coord = (idx // stride) % n
        up = idx + ((coord + 1) % n - coord) * stride
        down = idx + ((coord - 1) % n - coord) * stride
        nbr[:, 2 * mu] = up
        nbr[:, 2 * mu + 1] = down
        stride *= n
    return nbr


def build_kernel(spec: GraphSpec, site_cap: int = DEFAULT_SITE_CAP) -> Kernel:
    """Construct and validate the kernel for a graph spec."""
    spec.validate(site_cap)
    if isinstance(spec, TorusSpec):
        size = spec.n_sites
        nbr = torus_neighbors(spec.d, spec.n)
        P = np.zeros((size, size))
        w = 1.0 / (2 * spec.d)
        for col in range(2 * spec.d):
            P[np.arange(size), nbr[:, col]] += w
        pi = np.full(size, 1.0 / size)
        return _make_kernel(P, pi, spec)
    if isinstance(spec, CompleteSpec):
        P = np.full((spec.n, spec.n), 1.0 / spec.n)
        pi = np.full(spec.n, 1.0 / spec.n)
        return _make_kernel(P, pi, spec)
    if isinstance(spec, CustomSpec):
        P = np.asarray(spec.P, dtype=float)
        if spec.pi is not None:
            pi = np.asarray(spec.pi, dtype=float)
        else:
            pi = stationary_measure(P)
        return _make_kernel(P, pi, spec)
    raise TypeError(f"unknown graph spec {spec!r}")


def stationary_measure(
    P: np.ndarray, tol: float = 1e-12, max_iter: int = 500_000
) -> np.ndarray:
    """Stationary vector pi with pi P = pi, sum pi = 1.

    Solves the bordered linear system directly; falls back to power
    iteration if the solve is singular, raising NoConvergence at the cap.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
        if np.all(np.isfinite(pi)) and np.abs(pi @ P - pi).max() <= 1e-10:
            return pi / pi.sum()
    except np.linalg.LinAlgError:
        pass
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ P
        if np.abs(nxt - pi).max() <= tol:
            return nxt / nxt.sum()
        pi = nxt
    raise NoConvergence(f"power iteration did not reach {tol} in {max_iter} steps")


def two_step_kernel(k: Kernel) -> Kernel:
    """Kernel of the two-step chain P^2; reversible w.r.t. the same pi."""
    P2 = k.P @ k.P
    return _make_kernel(P2, k.pi.copy(), None)


def load_kernel_json(source) -> Kernel:
    """Load a custom kernel from a JSON document {"n", "P", "pi"?}.

    `source` may be a path, a file object, or an already-parsed dict.
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    try:
        n = int(doc["n"])
        P = np.asarray(doc["P"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"kernel JSON needs integer 'n' and matrix 'P': {exc}")
    if P.shape != (n, n):
        raise ValueError(f"'P' has shape {P.shape}, expected ({n}, {n})")
    pi = None
    if doc.get("pi") is not None:
        pi = np.asarray(doc["pi"], dtype=float)
        if pi.shape != (n,):
            raise ValueError(f"'pi' has shape {pi.shape}, expected ({n},)")
    return build_kernel(CustomSpec(P=P, pi=pi))


def random_reversible_kernel(
    n: int, rng: np.random.Generator, zero_fraction: float = 0.0
) -> Kernel:
    """Random reversible kernel from symmetrized positive weights.

    W symmetric positive, P = row-normalized W, pi_i proportional to the
    row sums of W. `zero_fraction` optionally sparsifies off-diagonal
    weights (symmetrically) while keeping the graph connected.
    """
    W = rng.uniform(0.1, 1.0, size=(n, n))
    W = W + W.T
    if zero_fraction > 0.0:
        mask = rng.uniform(size=(n, n)) < zero_fraction
        mask = np.triu(mask, k=1)
        mask = mask | mask.T
        # keep a ring so the graph stays connected
        for i in range(n):
            mask[i, (i + 1) % n] = False
            mask[(i + 1) % n, i] = False
        W = np.where(mask, 0.0, W)
    rows = W.sum(axis=1)
    P = W / rows[:, None]
    pi = rows / rows.sum()
    return _make_kernel(P, pi, CustomSpec(P=P, pi=pi))
