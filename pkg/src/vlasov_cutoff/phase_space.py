"""Initial data, deterministic phase-space sampling and the velocity-cutoff hierarchy.

The initial density is ``f0(x, v) = C0 * exp(-lam |v|^2) * g(|x|)`` with a
radial spatial profile ``g``. It is sampled at phase-space cell centres on
fixed global grids, one particle per cell, with weight ``f0N(centre) * hx^3 *
hv^3`` where ``f0N = f0 * 1{|v| <= N}``.

Particles are ordered by velocity shell (shell ``n`` holds the cells with
``n - 1 < |v| <= n``), so the ensemble truncated at any cutoff ``n`` is a
prefix of the particle list. Shell membership is decided in exact integer
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

__all__ = [
    "PhysParams",
    "PowerLaw",
    "SparsePlateaus",
    "DecayProfile",
    "SamplingSpec",
    "Particle",
    "Ensemble",
    "eval_initial_density",
    "sample_ensemble",
    "apply_cutoff",
    "from_arrays",
]

EPS_MIN = 1.0 / 15.0
EPS_MAX = 1.0


@dataclass(frozen=True)
class PhysParams:
    """Physical parameters of the initial datum.

    Parameters
    ----------
    lam : float
        Gaussian velocity rate, ``exp(-lam |v|^2)``.
    c0 : float
        Amplitude ``C0``.
    epsilon : float
        Spatial decay exponent, ``1/15 < epsilon < 1``.
    c1 : float
        Lattice-decay constant bounding unit-ball masses by ``c1 |i|^-(2+eps)``.
    """

    lam: float
    c0: float
    epsilon: float
    c1: float = 1.0

    def __post_init__(self):
        for name in ("lam", "c0", "epsilon", "c1"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val!r}")
        if self.lam <= 0 or self.c0 <= 0 or self.c1 <= 0:
            raise ValueError("lam, c0 and c1 must be positive")
        check_epsilon(self.epsilon)


def check_epsilon(epsilon: float) -> float:
    """Validate ``1/15 < epsilon < 1`` and return it."""
    if not (EPS_MIN < epsilon < EPS_MAX):
        raise ValueError(f"epsilon must satisfy 1/15 < epsilon < 1, got {epsilon!r}")
    return float(epsilon)


@dataclass(frozen=True)
class PowerLaw:
    """``g(r) = c * min(1, r^-(2 + epsilon))``: bounded, continuous, non-increasing."""

    c: float
    epsilon: float
    kind: str = field(default="PowerLaw", init=False)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("PowerLaw amplitude must be positive")
        check_epsilon(self.epsilon)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.ones_like(r)
        far = r > 1.0
        out[far] = r[far] ** (-(2.0 + self.epsilon))
        return self.c * out

    @property
    def sup(self) -> float:
        return float(self.c)


@dataclass(frozen=True)
class SparsePlateaus:
    """Piecewise-constant radial profile with plateaus on sparse shells.

    ``g(r) = heights[k]`` on ``|r - centers[k]| <= radii[k]`` (the largest
    height wins on overlaps) plus an optional core ``core`` on ``r <= 1``, and
    zero elsewhere. Whether a given choice satisfies the lattice-decay
    hypothesis is checked by :func:`vlasov_cutoff.estimates.profile_lattice_audit`.
    """

    c: float
    epsilon: float
    centers: tuple = ()
    radii: tuple = ()
    heights: tuple = ()
    core: float = 1.0
    kind: str = field(default="SparsePlateaus", init=False)

    def __post_init__(self):
        check_epsilon(self.epsilon)
        if not (len(self.centers) == len(self.radii) == len(self.heights)):
            raise ValueError("centers, radii and heights must have equal length")
        if any(r <= 0 for r in self.radii) or any(h < 0 for h in self.heights):
            raise ValueError("plateau radii must be positive and heights nonnegative")
        if self.c <= 0 or self.core < 0:
            raise ValueError("amplitude must be positive and core nonnegative")

    @classmethod
    def geometric(cls, c: float, epsilon: float, first: float = 4.0, ratio: float = 2.0,
                  count: int = 4, width: float = 0.75) -> "SparsePlateaus":
        """Plateaus at ``first * ratio^k`` whose height follows ``r^-(2+eps)``."""
        centers = tuple(first * ratio ** k for k in range(count))
        heights = tuple(r ** (-(2.0 + epsilon)) for r in centers)
        return cls(c, epsilon, centers, (width,) * count, heights)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 1.0, self.core, 0.0)
        for c, w, h in zip(self.centers, self.radii, self.heights):
            out = np.where(np.abs(r - c) <= w, np.maximum(out, h), out)
        return self.c * out

    @property
    def sup(self) -> float:
        return float(self.c * max((self.core,) + tuple(self.heights)))


DecayProfile = Union[PowerLaw, SparsePlateaus]


def profile_from_dict(d: dict) -> DecayProfile:
    """Rebuild a profile from :func:`profile_to_dict` output."""
    d = dict(d)
    kind = d.pop("kind")
    if kind == "PowerLaw":
        return PowerLaw(d["c"], d["epsilon"])
    if kind == "SparsePlateaus":
        return SparsePlateaus(d["c"], d["epsilon"], tuple(d["centers"]), tuple(d["radii"]),
                              tuple(d["heights"]), d.get("core", 1.0))
    raise ValueError(f"unknown profile kind {kind!r}")


def profile_to_dict(p: DecayProfile) -> dict:
    out = {"kind": p.kind, "c": p.c, "epsilon": p.epsilon}
    if isinstance(p, SparsePlateaus):
        out.update(centers=list(p.centers), radii=list(p.radii), heights=list(p.heights),
                   core=p.core)
    return out


@dataclass(frozen=True)
class SamplingSpec:
    """Phase-space grid used by :func:`sample_ensemble`.

    Spatial cells are the cubes of side ``h_x`` centred on the lattice points
    ``k h_x`` (so the origin and, for ``h_x = 1``, every integer site carries
    a particle); a cell is kept when its centre lies in ``|x| <= r_max``. Velocity cells have centres
    ``(k + 1/2) h_v``; ``1 / h_v`` must be an integer so that every integer
    cutoff sphere is resolved by the same global grid. ``seed`` is recorded
    for reproducibility but sampling itself is deterministic.
    """

    r_max: float
    h_x: float
    h_v: float
    seed: int = 0
    weight_floor: float = 1e-16

    def __post_init__(self):
        if not (self.h_x > 0 and self.h_v > 0):
            raise ValueError("cell sizes must be positive")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if not 0 <= self.weight_floor < 1:
            raise ValueError("weight_floor must lie in [0, 1)")
        self.velocity_resolution  # validates alignment

    @property
    def velocity_resolution(self) -> int:
        """Integer ``m = 1 / h_v``; raises if the grid misses integer cutoffs."""
        m = 1.0 / self.h_v
        mi = int(round(m))
        if mi < 1 or abs(m - mi) > 1e-9 * m:
            raise ValueError(
                f"velocity grid h_v={self.h_v} does not align with integer cutoffs "
                "(1/h_v must be an integer)")
        return mi


@dataclass(frozen=True)
class Particle:
    pos: np.ndarray
    vel: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weighted particle cloud representing ``f0N``.

    Attributes
    ----------
    pos, vel : ndarray, shape (n, 3)
    weight : ndarray, shape (n,)
    shell : ndarray of int, shape (n,)
        Velocity shell of each particle (``shell - 1 < |v| <= shell``),
        non-decreasing along the particle list.
    cutoff_n : int
    params : PhysParams
    profile : DecayProfile
    sampling : SamplingSpec or None
    f_inf : float
        ``||f0||_inf = C0 * sup g``.
    """

    pos: np.ndarray
    vel: np.ndarray
    weight: np.ndarray
    shell: np.ndarray
    cutoff_n: int
    params: PhysParams
    profile: DecayProfile
    sampling: SamplingSpec | None
    f_inf: float

    def __post_init__(self):
        for name in ("pos", "vel", "weight", "shell"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        n = self.weight.shape[0]
        if self.pos.shape != (n, 3) or self.vel.shape != (n, 3) or self.shell.shape != (n,):
            raise ValueError("inconsistent particle array shapes")

    def __len__(self) -> int:
        return int(self.weight.shape[0])

    def __iter__(self) -> Iterator[Particle]:
        for i in range(len(self)):
            yield self.particle(i)

    def particle(self, i: int) -> Particle:
        return Particle(self.pos[i].copy(), self.vel[i].copy(), float(self.weight[i]))

    @property
    def particles(self) -> list[Particle]:
        return list(self)

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    def count_up_to(self, n: int) -> int:
        """Number of leading particles with shell ``<= n``."""
        return int(np.searchsorted(self.shell, n, side="right"))


def eval_initial_density(profile: DecayProfile, params: PhysParams, x, v):
    """``C0 exp(-lam |v|^2) g(|x|)``, broadcasting over leading axes of ``x`` and ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    v2 = np.sum(v * v, axis=-1)
    out = params.c0 * np.exp(-params.lam * v2) * profile(r)
    return out if out.ndim else float(out)


def _axis_centres(radius: float, h: float) -> np.ndarray:
    kmax = int(math.floor(radius / h * (1.0 + 1e-14)))
    return np.arange(-kmax, kmax + 1) * h


def spatial_centres(spec: SamplingSpec) -> np.ndarray:
    """Spatial cell centres inside the ball ``|x| <= r_max`` in lexicographic order."""
    ax = _axis_centres(spec.r_max, spec.h_x)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = np.einsum("ij,ij->i", g, g) <= spec.r_max ** 2 * (1.0 + 1e-14)
    return g[keep]


def velocity_cells(spec: SamplingSpec, cutoff_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Velocity cell centres with ``|v| <= cutoff_n`` ordered by shell.

    Returns ``(centres, shell)``. With ``m = 1/h_v`` and odd integers
    ``a = 2k + 1``, a centre lies in the ball ``|v| <= n`` exactly when
    ``a1^2 + a2^2 + a3^2 <= 4 m^2 n^2``, so membership is an integer test.
    """
    m = spec.velocity_resolution
    kmax = m * cutoff_n
    odd = np.arange(-2 * kmax + 1, 2 * kmax, 2, dtype=np.int64)
    a = np.stack(np.meshgrid(odd, odd, odd, indexing="ij"), axis=-1).reshape(-1, 3)
    s = np.einsum("ij,ij->i", a, a)
    keep = s <= 4 * m * m * cutoff_n * cutoff_n
    a, s = a[keep], s[keep]
    # smallest n with s <= 4 m^2 n^2, i.e. n = ceil(sqrt(s) / (2m))
    shell = np.array([_ceil_shell(int(si), m) for si in s], dtype=np.int64)
    order = np.lexsort((a[:, 2], a[:, 1], a[:, 0], shell))
    return a[order] / (2.0 * m), shell[order]


def _ceil_shell(s: int, m: int) -> int:
    n = math.isqrt(s) // (2 * m)
    while 4 * m * m * n * n < s:
        n += 1
    return n


def sample_ensemble(profile: DecayProfile, params: PhysParams, spec: SamplingSpec,
                    cutoff_n: int) -> Ensemble:
    """Deterministic cell-centre sampling of ``f0N``.

    Particle order is (velocity shell, velocity cell, spatial cell), so that
    raising ``cutoff_n`` only appends particles. Cells whose weight falls
    below ``spec.weight_floor`` times the largest weight are dropped; the
    largest weight sits in the lowest shell, so the threshold does not depend
    on ``cutoff_n``.
    """
    cutoff_n = int(cutoff_n)
    if cutoff_n < 1:
        raise ValueError("cutoff_n must be >= 1")
    if profile.epsilon != params.epsilon:
        raise ValueError("profile and params disagree on epsilon")
    xs = spatial_centres(spec)
    vs, shell = velocity_cells(spec, cutoff_n)
    gx = profile(np.sqrt(np.einsum("ij,ij->i", xs, xs))) * spec.h_x ** 3
    gv = params.c0 * np.exp(-params.lam * np.einsum("ij,ij->i", vs, vs)) * spec.h_v ** 3
    w = (gv[:, None] * gx[None, :]).reshape(-1)
    # the reference maximum uses the full first shell so it is cutoff independent
    wmax = float(gv.max() * gx.max()) if w.size else 0.0
    keep = (w >= spec.weight_floor * wmax) & (w > 0.0) if wmax > 0 else np.zeros(w.size, bool)
    nv, nx = vs.shape[0], xs.shape[0]
    iv = np.repeat(np.arange(nv), nx)[keep]
    ix = np.tile(np.arange(nx), nv)[keep]
    return Ensemble(
        pos=np.ascontiguousarray(xs[ix]),
        vel=np.ascontiguousarray(vs[iv]),
        weight=np.ascontiguousarray(w[keep]),
        shell=np.ascontiguousarray(shell[iv]),
        cutoff_n=cutoff_n,
        params=params,
        profile=profile,
        sampling=spec,
        f_inf=params.c0 * profile.sup,
    )


def apply_cutoff(base: Ensemble, n: int) -> Ensemble:
    """Keep exactly the particles with ``|v| <= n`` (a prefix of ``base``)."""
    n = int(n)
    if n > base.cutoff_n:
        raise ValueError(f"cannot raise the cutoff from {base.cutoff_n} to {n}")
    if n == base.cutoff_n:
        return base
    k = base.count_up_to(n)
    return Ensemble(
        pos=base.pos[:k].copy(),
        vel=base.vel[:k].copy(),
        weight=base.weight[:k].copy(),
        shell=base.shell[:k].copy(),
        cutoff_n=n,
        params=base.params,
        profile=base.profile,
        sampling=base.sampling,
        f_inf=base.f_inf,
    )


def from_arrays(pos, vel, weight, params: PhysParams, profile: DecayProfile | None = None,
                cutoff_n: int | None = None, keep_order: bool = False) -> Ensemble:
    """Build an ensemble from explicit particles (tests, synthetic states).

    Particles are reordered by velocity shell so that the prefix property of
    :func:`apply_cutoff` holds, unless ``keep_order`` is set (then
    :func:`apply_cutoff` must not be used on the result).
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    vel = np.asarray(vel, dtype=float).reshape(-1, 3)
    weight = np.asarray(weight, dtype=float).reshape(-1)
    if np.any(weight < 0) or not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        raise ValueError("weights must be nonnegative and coordinates finite")
    speed = np.sqrt(np.einsum("ij,ij->i", vel, vel))
    shell = np.ceil(speed).astype(np.int64)
    order = np.arange(shell.size) if keep_order else np.argsort(shell, kind="stable")
    if profile is None:
        profile = PowerLaw(1.0, params.epsilon)
    if cutoff_n is None:
        cutoff_n = max(1, int(shell.max())) if shell.size else 1
    if shell.size and shell.max() > cutoff_n:
        raise ValueError("particle speeds exceed cutoff_n")
    return Ensemble(pos[order].copy(), vel[order].copy(), weight[order].copy(),
                    shell[order].copy(), int(cutoff_n), params, profile, None,
                    params.c0 * profile.sup)
