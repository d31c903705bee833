"""Self-consistent Coulomb field of a weighted particle cloud.

The field of sources ``y_j`` with weights ``w_j`` is

    E(x) = sum_j w_j (x - y_j) / (|x - y_j|^2 + delta_s^2)^(3/2)

(repulsive, no ``4 pi``), evaluated either by direct summation or by a
Barnes-Hut octree. The heavy loops live in the compiled ``_core`` extension
with a NumPy fallback (see :mod:`vlasov_cutoff._backend`).

"Multi-leg" evaluation runs several particle systems that share particle
identities (the flows of different velocity cutoffs) through one tree: the
tree is built on leg 0, opening decisions are taken on leg 0, and every leg
sums its own multipoles and leaf particles at its own positions. Differences
between legs are then free of tree-topology noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _backend

__all__ = [
    "FieldMethod",
    "Direct",
    "Tree",
    "eval_legs",
    "Softening",
    "FieldSample",
    "FieldResult",
    "SingularityError",
    "as_state",
    "eval_field",
    "eval_self_field",
    "field_split",
    "lipschitz_probe",
    "LipschitzReport",
]

_LEAF_SIZE = 8
_MAX_DEPTH = 60


class SingularityError(ArithmeticError):
    """A query coincides with a source while the softening is zero."""

    def __init__(self, query: int, source: int):
        self.query = int(query)
        self.source = int(source)
        what = f"source {self.source}" if self.source >= 0 else "a tree cell centre of mass"
        super().__init__(f"query {self.query} coincides with {what} and delta_s = 0")


@dataclass(frozen=True)
class FieldMethod:
    """Summation strategy.

    ``kind`` is ``"direct"`` or ``"tree"``. For the tree, a cell is accepted
    when its distance to the query exceeds ``side / theta`` plus the offset
    of its centre of mass from its geometric centre (so ``side / distance <
    theta`` always holds), and contributes its softened monopole plus
    (``order=2``) quadrupole terms.
    """

    kind: str = "direct"
    theta: float = 0.3
    order: int = 2
    leaf_size: int = _LEAF_SIZE

    def __post_init__(self):
        if self.kind not in ("direct", "tree"):
            raise ValueError(f"unknown field method {self.kind!r}")
        if self.kind == "tree" and not 0.0 < self.theta < 1.0:
            raise ValueError("tree opening angle must lie in (0, 1)")
        if self.order not in (1, 2):
            raise ValueError("multipole order must be 1 (monopole) or 2 (quadrupole)")
        if self.leaf_size < 1:
            raise ValueError("leaf_size must be positive")

    @classmethod
    def direct(cls) -> "FieldMethod":
        return cls("direct")

    @classmethod
    def tree(cls, theta: float = 0.3, order: int = 2) -> "FieldMethod":
        return cls("tree", theta, order)


Direct = FieldMethod.direct
Tree = FieldMethod.tree


@dataclass(frozen=True)
class Softening:
    """Plummer softening length ``delta_s >= 0``."""

    delta_s: float = 0.0

    def __post_init__(self):
        if not (self.delta_s >= 0.0 and np.isfinite(self.delta_s)):
            raise ValueError("delta_s must be finite and nonnegative")

    @property
    def soft2(self) -> float:
        return float(self.delta_s) ** 2

    @classmethod
    def from_spacing(cls, spacing: float, factor: float = 0.3) -> "Softening":
        """Default softening ``factor * spacing``."""
        return cls(factor * spacing)


@dataclass(frozen=True)
class FieldSample:
    point: np.ndarray
    field: np.ndarray
    magnitude: float


@dataclass(frozen=True)
class FieldResult:
    """Field values at a batch of queries; iterates as :class:`FieldSample`."""

    points: np.ndarray
    field: np.ndarray
    potential: np.ndarray | None = None

    @property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.field, self.field))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> FieldSample:
        f = self.field[i]
        return FieldSample(self.points[i], f, float(np.sqrt(f @ f)))

    def __iter__(self) -> Iterator[FieldSample]:
        for i in range(len(self)):
            yield self[i]


def default_threads() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1)


def as_state(state) -> tuple[np.ndarray, np.ndarray]:
    """Accept an :class:`~vlasov_cutoff.phase_space.Ensemble` or ``(pos, weight)``."""
    if hasattr(state, "pos") and hasattr(state, "weight"):
        pos, w = state.pos, state.weight
    else:
        pos, w = state
    pos = np.ascontiguousarray(pos, dtype=float).reshape(-1, 3)
    w = np.ascontiguousarray(w, dtype=float).reshape(-1)
    if pos.shape[0] != w.shape[0]:
        raise ValueError("positions and weights disagree in length")
    return pos, w


def _check_bad(bad: np.ndarray) -> None:
    hit = np.nonzero(bad != -1)[0]
    if hit.size:
        q = int(hit[0])
        raise SingularityError(q, int(bad[q]))


def _tree_arrays(kern, pos0, leaf_size):
    return kern.build_octree(pos0, int(leaf_size), _MAX_DEPTH)


def eval_legs(pos: np.ndarray, w: np.ndarray, method: FieldMethod, soft: Softening,
              queries: np.ndarray | None = None, self_index: np.ndarray | None = None,
              want_potential: bool = False, threads: int | None = None,
              backend: str | None = None, qcount=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Field of ``L`` legs sharing particle identities.

    Parameters
    ----------
    pos : ndarray, shape (L, n, 3)
    w : ndarray, shape (L, n)
    queries : ndarray, shape (L, m, 3), optional
        Query points per leg; defaults to the particles themselves with the
        self interaction excluded.
    self_index : ndarray of int, shape (m,), optional
        Source index excluded for each query (``-1`` for none).
    qcount : array_like of int, shape (L,), optional
        Leg ``l`` is evaluated only at its first ``qcount[l]`` queries; the
        remaining outputs are zero.

    Returns
    -------
    field : ndarray, shape (L, m, 3)
    potential : ndarray, shape (L, m) or None
    """
    kern = _backend.get(backend)
    threads = default_threads() if threads is None else max(1, int(threads))
    pos = np.ascontiguousarray(pos, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    L, n = w.shape
    if queries is None:
        queries = pos
        if self_index is None:
            self_index = np.arange(n, dtype=np.int64)
    queries = np.ascontiguousarray(queries, dtype=float)
    m = queries.shape[1]
    if self_index is None:
        self_index = np.full(m, -1, dtype=np.int64)
    self_index = np.ascontiguousarray(self_index, dtype=np.int64)
    if not np.all(np.isfinite(queries)):
        raise ValueError("query points must be finite")
    out_e = np.zeros((L, m, 3))
    out_phi = np.zeros((L, m))
    bad = np.full(m, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out_e, (out_phi if want_potential else None)
    qcount = np.full(L, m, dtype=np.int64) if qcount is None else np.minimum(
        np.asarray(qcount, dtype=np.int64), m)
    if method.kind == "direct":
        for leg in range(L):
            c = int(qcount[leg])
            kern.direct_sum(pos[leg], w[leg], queries[leg, :c], self_index[:c], soft.soft2,
                            bool(want_potential), threads, out_e[leg, :c], out_phi[leg, :c],
                            bad[:c])
            _check_bad(bad)
    else:
        center, half, ps, pe, cf, nc, perm = _tree_arrays(kern, pos[0], method.leaf_size)
        K = half.shape[0]
        mass = np.zeros((L, K))
        com = np.zeros((L, K, 3))
        quad = np.zeros((L, K, 6))
        kern.tree_moments(center, ps, pe, cf, nc, perm, pos, w, mass, com, quad)
        if method.order == 1:
            quad[:] = 0.0
        kern.tree_eval(center, half, ps, pe, cf, nc, perm, mass, com, quad, pos, w,
                       np.ascontiguousarray(queries[0]), queries, self_index, qcount,
                       float(method.theta), soft.soft2, bool(want_potential), _MAX_DEPTH,
                       threads, out_e, out_phi, bad)
        _check_bad(bad)
    return out_e, (out_phi if want_potential else None)


def eval_field(state, queries, method: FieldMethod | None = None,
               soft: Softening | None = None, *, self_index=None,
               want_potential: bool = False, threads: int | None = None,
               backend: str | None = None) -> FieldResult:
    """Field of ``state`` at ``queries``.

    Parameters
    ----------
    state : Ensemble or (pos, weight)
    queries : array_like, shape (m, 3)
    method : FieldMethod, default direct
    soft : Softening, default zero
    self_index : array_like of int, optional
        For each query, a source index to skip (used when queries are the
        particles themselves).

    Raises
    ------
    SingularityError
        A query coincides with a source and ``delta_s == 0``.
    """
    method = method or FieldMethod.direct()
    soft = soft or Softening(0.0)
    pos, w = as_state(state)
    q = np.ascontiguousarray(queries, dtype=float).reshape(-1, 3)
    e, phi = eval_legs(pos[None], w[None], method, soft, q[None], self_index,
                       want_potential, threads, backend)
    return FieldResult(q, e[0], None if phi is None else phi[0])


def eval_self_field(state, method: FieldMethod | None = None, soft: Softening | None = None,
                    want_potential: bool = False, threads: int | None = None,
                    backend: str | None = None) -> FieldResult:
    """Field (and potential) at every particle, excluding the self interaction."""
    pos, w = as_state(state)
    return eval_field((pos, w), pos, method, soft, self_index=np.arange(pos.shape[0]),
                      want_potential=want_potential, threads=threads, backend=backend)


def field_split(state, x, a: float, r_big: float, soft: Softening | None = None
                ) -> tuple[float, float, float]:
    """Magnitude-majorant shell sums around ``x``.

    Returns ``(j1, j2, j3)`` where each is the sum of
    ``w_j / (|x - y_j|^2 + delta_s^2)`` over sources with ``|x - y| <= a``,
    ``a < |x - y| <= 3 r_big`` and ``|x - y| > 3 r_big`` respectively.
    A source exactly on a boundary radius belongs to the inner shell. A
    source at ``x`` itself is skipped when ``delta_s == 0``.
    """
    if not 0.0 < a < 1.0 <= r_big:
        raise ValueError("need 0 < a < 1 <= r_big")
    soft = soft or Softening(0.0)
    pos, w = as_state(state)
    d = pos - np.asarray(x, dtype=float).reshape(1, 3)
    r2 = np.einsum("ij,ij->i", d, d)
    r = np.sqrt(r2)
    den = r2 + soft.soft2
    ok = den > 0.0
    term = np.zeros_like(r2)
    term[ok] = w[ok] / den[ok]
    s1 = r <= a
    s3 = r > 3.0 * r_big
    s2 = ~(s1 | s3)
    return float(term[s1].sum()), float(term[s2].sum()), float(term[s3].sum())


@dataclass(frozen=True)
class LipschitzReport:
    """Quasi-Lipschitz probe output.

    ``separation``, ``difference`` and ``ratio`` are per pair (pairs with
    separation >= 1 get ``ratio = nan`` and are tallied in ``far_bound``,
    the bound ``2 ||E||_inf`` over those pairs' endpoints).
    """

    separation: np.ndarray
    difference: np.ndarray
    ratio: np.ndarray
    sup_ratio: float
    far_pairs: int
    far_bound: float


def lipschitz_probe(state, pairs: Sequence, soft: Softening | None = None,
                    method: FieldMethod | None = None) -> LipschitzReport:
    """Measure ``|E(x) - E(y)| / (|x - y| (|log|x - y|| + 1))`` over point pairs."""
    p = np.asarray(pairs, dtype=float).reshape(-1, 2, 3)
    x, y = p[:, 0], p[:, 1]
    sep = np.sqrt(np.einsum("ij,ij->i", x - y, x - y))
    if np.any(sep == 0.0):
        raise ValueError("degenerate pair with x == y")
    res = eval_field(state, np.concatenate([x, y]), method, soft)
    ex, ey = res.field[: len(p)], res.field[len(p):]
    diff = np.sqrt(np.einsum("ij,ij->i", ex - ey, ex - ey))
    near = sep < 1.0
    ratio = np.full(len(p), np.nan)
    ratio[near] = diff[near] / (sep[near] * (np.abs(np.log(sep[near])) + 1.0))
    mag = res.magnitude
    far_bound = 0.0
    if np.any(~near):
        far_bound = 2.0 * float(np.max(np.maximum(mag[: len(p)][~near], mag[len(p):][~near])))
    sup = float(np.nanmax(ratio)) if np.any(near) else 0.0
    return LipschitzReport(sep, diff, ratio, sup, int(np.sum(~near)), far_bound)
