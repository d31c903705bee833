"""Observables of particle states and trajectories.

Covers the smooth radial cutoff, the local (mollified) energy and its sup over
centres, shell and far-field sums, binned densities and the interpolation
bound between density and kinetic energy, lattice masses, field work along
characteristics, windowed field averages, the dyadic velocity-shell census,
exponent fits and the Gaussian velocity-tail check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .coulomb_field import FieldMethod, Softening, eval_self_field
from .dynamics import TrajectorySet

__all__ = [
    "mollifier",
    "mollifier_deriv",
    "MOLLIFIER_MAX_SLOPE",
    "EnergyReport",
    "local_energy",
    "local_energy_many",
    "particle_potentials",
    "QSupResult",
    "q_sup",
    "grid_mollified_sums",
    "shell_integral",
    "far_integral",
    "DensityGrid",
    "density_grid",
    "interpolation_constant",
    "interpolation_check",
    "lattice_masses",
    "field_work",
    "FieldWork",
    "time_average_field",
    "nested_average_check",
    "dyadic_shell_census",
    "CensusReport",
    "ExponentFit",
    "fit_exponent",
    "gaussian_tail_stat",
    "lattice_decay_fit",
]

MOLLIFIER_MAX_SLOPE = 15.0 / 8.0


# --------------------------------------------------------------------- mollifier
def mollifier(r):
    """``phi(r) = 1 - s(r - 1)`` with the quintic smoothstep ``s(u) = 6u^5 - 15u^4 + 10u^3``.

    Equal to 1 on ``[0, 1]``, 0 on ``[2, inf)``, C^2 and non-increasing with
    ``max |phi'| = 15/8``.
    """
    r = np.asarray(r, dtype=float)
    u = np.clip(r - 1.0, 0.0, 1.0)
    out = 1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    return out if out.ndim else float(out)


def mollifier_deriv(r):
    """``phi'(r) = -30 u^2 (1 - u)^2`` on ``[1, 2]`` and 0 elsewhere."""
    r = np.asarray(r, dtype=float)
    u = np.clip(r - 1.0, 0.0, 1.0)
    out = -30.0 * u * u * (1.0 - u) ** 2
    return out if out.ndim else float(out)


# ----------------------------------------------------------------- local energy
@dataclass(frozen=True)
class EnergyReport:
    mu: np.ndarray
    r: float
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def _pvw(state):
    pos = np.ascontiguousarray(state.pos if hasattr(state, "pos") else state[0], dtype=float)
    vel = np.ascontiguousarray(state.vel if hasattr(state, "vel") else state[1], dtype=float)
    w = np.ascontiguousarray(state.weight if hasattr(state, "weight") else state[2], dtype=float)
    return pos.reshape(-1, 3), vel.reshape(-1, 3), w.reshape(-1)


def particle_potentials(state, soft: Softening | None = None,
                        method: FieldMethod | None = None, threads: int | None = None):
    """Softened potential ``sum_{j != i} w_j / sqrt(|x_i - x_j|^2 + delta_s^2)`` at each particle."""
    pos, _, w = _pvw(state)
    if pos.shape[0] == 0:
        return np.zeros(0)
    res = eval_self_field((pos, w), method, soft, want_potential=True, threads=threads)
    return res.potential


def _energy_values(state, soft, method, potentials, threads):
    pos, vel, w = _pvw(state)
    if potentials is None:
        potentials = particle_potentials((pos, vel, w), soft, method, threads)
    kin = 0.5 * w * np.einsum("ij,ij->i", vel, vel)
    pot = 0.5 * w * np.asarray(potentials, dtype=float)
    return pos, np.ascontiguousarray(np.column_stack([kin, pot]))


def local_energy_many(state, mus, r: float, soft: Softening | None = None,
                      method: FieldMethod | None = None, potentials=None,
                      threads: int | None = None) -> np.ndarray:
    """Kinetic and potential local energy at every centre in ``mus``; shape (m, 2)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    pos, vals = _energy_values(state, soft, method, potentials, threads)
    mus = np.ascontiguousarray(mus, dtype=float).reshape(-1, 3)
    out = np.zeros((mus.shape[0], 2))
    if pos.shape[0] == 0 or mus.shape[0] == 0:
        return out
    kern = _backend.get()
    kern.mollified_sums(pos, vals, mus, float(r), 1 if threads is None else int(threads), out)
    return out


def local_energy(state, mu, r: float, soft: Softening | None = None,
                 method: FieldMethod | None = None, potentials=None) -> EnergyReport:
    """Mollified local energy around ``mu`` at scale ``r``.

    ``kinetic = 1/2 sum_i w_i phi(|x_i - mu| / r) |v_i|^2`` and
    ``potential = 1/2 sum_i sum_{j != i} w_i w_j phi(|x_i - mu| / r) /
    sqrt(|x_i - x_j|^2 + delta_s^2)``; the second sum runs over the whole
    state. ``state`` provides ``pos``, ``vel`` and ``weight`` (an ensemble or a
    ``(pos, vel, weight)`` tuple).

    Raises
    ------
    SingularityError
        Coincident particles with ``delta_s == 0``.
    """
    mu = np.asarray(mu, dtype=float).reshape(3)
    pos, vals = _energy_values(state, soft, method, potentials, None)
    if pos.shape[0] == 0:
        return EnergyReport(mu, float(r), 0.0, 0.0)
    d = pos - mu
    ph = mollifier(np.sqrt(np.einsum("ij,ij->i", d, d)) / r)
    k, p = ph @ vals
    return EnergyReport(mu, float(r), float(k), float(p))


@dataclass(frozen=True)
class QSupResult:
    value: float
    mu: np.ndarray
    kinetic: float
    potential: float
    spacing: float
    origin: np.ndarray
    shape: tuple


def grid_mollified_sums(pos, vals, origin, spacing: float, shape, r: float,
                        chunk: int = 65536) -> np.ndarray:
    """``sum_i phi(|x_i - mu| / r) vals_i`` at every centre of a regular grid.

    Each particle scatters onto the centres within its support radius ``2 r``,
    so the cost is ``O(n (4 r / spacing)^3)`` instead of ``O(n * grid size)``.
    Returns an array of shape ``shape + (vals.shape[1],)``.
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    vals = np.asarray(vals, dtype=float).reshape(pos.shape[0], -1)
    shape = tuple(int(c) for c in shape)
    origin = np.asarray(origin, dtype=float)
    ncell = int(np.prod(shape))
    out = np.zeros((ncell, vals.shape[1]))
    reach = int(math.ceil(2.0 * r / spacing))
    offs = np.arange(-reach, reach + 2)
    stride = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    for a in range(0, pos.shape[0], chunk):
        x = pos[a:a + chunk]
        v = vals[a:a + chunk]
        base = np.floor((x - origin) / spacing).astype(np.int64)
        for ox in offs:
            ix = base[:, 0] + ox
            dx = origin[0] + ix * spacing - x[:, 0]
            okx = (ix >= 0) & (ix < shape[0]) & (np.abs(dx) < 2.0 * r)
            for oy in offs:
                iy = base[:, 1] + oy
                dy = origin[1] + iy * spacing - x[:, 1]
                oky = okx & (iy >= 0) & (iy < shape[1]) & (np.abs(dy) < 2.0 * r)
                if not oky.any():
                    continue
                for oz in offs:
                    iz = base[:, 2] + oz
                    dz = origin[2] + iz * spacing - x[:, 2]
                    m = oky & (iz >= 0) & (iz < shape[2])
                    d2 = dx * dx + dy * dy + dz * dz
                    m &= d2 < 4.0 * r * r
                    if not m.any():
                        continue
                    ph = mollifier(np.sqrt(d2[m]) / r)
                    flat = ix[m] * stride[0] + iy[m] * stride[1] + iz[m] * stride[2]
                    for c in range(vals.shape[1]):
                        out[:, c] += np.bincount(flat, weights=ph * v[m, c], minlength=ncell)
    return out.reshape(shape + (vals.shape[1],))


def q_sup(state, r: float, mu_grid_spacing: float | None = None,
          soft: Softening | None = None, method: FieldMethod | None = None,
          potentials=None, threads: int | None = None) -> QSupResult:
    """Maximum local energy over a cubic grid of centres.

    The grid starts at the particles' bounding-box minimum minus ``2 r`` and
    extends past the maximum plus ``2 r`` with the given spacing (default
    ``r / 2``, the largest allowed). Halving the spacing keeps every old grid
    point, so the result can only grow under refinement.
    """
    spacing = 0.5 * r if mu_grid_spacing is None else float(mu_grid_spacing)
    if not 0 < spacing <= 0.5 * r * (1 + 1e-12):
        raise ValueError("grid spacing must satisfy 0 < spacing <= r / 2")
    pos, vals = _energy_values(state, soft, method, potentials, threads)
    if pos.shape[0] == 0:
        return QSupResult(0.0, np.zeros(3), 0.0, 0.0, spacing, np.zeros(3), (0, 0, 0))
    lo = pos.min(axis=0) - 2.0 * r
    hi = pos.max(axis=0) + 2.0 * r
    counts = tuple(int(c) for c in np.floor((hi - lo) / spacing).astype(int) + 1)
    grid = grid_mollified_sums(pos, vals, lo, spacing, counts, r).reshape(-1, 2)
    tot = grid.sum(axis=1)
    k = int(np.argmax(tot))
    mu = lo + spacing * np.array(np.unravel_index(k, counts), dtype=float)
    return QSupResult(float(tot[k]), mu, float(grid[k, 0]), float(grid[k, 1]), spacing, lo, counts)


# ------------------------------------------------------------- shell sums
def _dist(state, mu):
    pos = np.asarray(state.pos if hasattr(state, "pos") else state[0], dtype=float)
    w = np.asarray(state.weight if hasattr(state, "weight") else state[-1], dtype=float)
    d = pos.reshape(-1, 3) - np.asarray(mu, dtype=float).reshape(1, 3)
    return np.sqrt(np.einsum("ij,ij->i", d, d)), w.reshape(-1)


def shell_integral(state, mu, r: float) -> float:
    """``sum w_i / |x_i - mu|^2`` over particles with ``1 <= |x_i - mu| <= r``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    d, w = _dist(state, mu)
    m = (d >= 1.0) & (d <= r)
    return float(np.sum(w[m] / d[m] ** 2))


def far_integral(state, mu, r_n: float) -> float:
    """``sum w_i / |x_i - mu|^2`` over particles with ``|x_i - mu| >= 3 r_n``."""
    if r_n < 1:
        raise ValueError("r_n must be >= 1")
    d, w = _dist(state, mu)
    m = d >= 3.0 * r_n
    return float(np.sum(w[m] / d[m] ** 2))


# ------------------------------------------------------------- densities
def interpolation_constant(f_inf: float) -> float:
    """Sharp constant ``c`` in ``rho^(5/3) <= c * (1/2) int |v|^2 f dv`` given ``||f||_inf``.

    Splitting at speed ``a``: ``rho <= (4 pi / 3) ||f||_inf a^3 + k / a^2`` with
    ``k = int |v|^2 f``. The minimum over ``a`` gives
    ``rho^(5/3) <= (5/3)^(5/3) (2 pi ||f||_inf)^(2/3) k``; the factor 2 converts
    ``k`` to the half-moment.
    """
    return 2.0 * (5.0 / 3.0) ** (5.0 / 3.0) * (2.0 * math.pi * f_inf) ** (2.0 / 3.0)


@dataclass
class DensityGrid:
    """Cell-binned density on cells ``[k h, (k + 1) h)^3``.

    Attributes
    ----------
    h_rho : float
    cells : ndarray of int (c, 3)
        Occupied cell indices.
    mass : ndarray (c,)
        Summed particle weight per cell.
    kinetic : ndarray (c,)
        ``1/2 sum w |v|^2`` per cell.
    """

    h_rho: float
    cells: np.ndarray
    mass: np.ndarray
    kinetic: np.ndarray
    total_weight: float

    @property
    def rho(self) -> np.ndarray:
        return self.mass / self.h_rho ** 3

    @property
    def k_hat(self) -> np.ndarray:
        return self.kinetic / self.h_rho ** 3

    @property
    def sup_density(self) -> float:
        return float(self.rho.max()) if self.rho.size else 0.0

    @property
    def moment_53(self) -> float:
        return float(np.sum(self.rho ** (5.0 / 3.0)) * self.h_rho ** 3)


def density_grid(state, h_rho: float) -> DensityGrid:
    """Bin particle weights (and kinetic energy) into cubic cells of side ``h_rho``."""
    if not h_rho > 0:
        raise ValueError("h_rho must be positive")
    pos, vel, w = _pvw(state)
    if pos.shape[0] == 0:
        return DensityGrid(h_rho, np.zeros((0, 3), np.int64), np.zeros(0), np.zeros(0), 0.0)
    idx = np.floor(pos / h_rho).astype(np.int64)
    cells, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mass = np.bincount(inv, weights=w, minlength=cells.shape[0])
    kin = np.bincount(inv, weights=0.5 * w * np.einsum("ij,ij->i", vel, vel),
                      minlength=cells.shape[0])
    return DensityGrid(float(h_rho), cells, mass, kin, float(w.sum()))


def interpolation_check(grid: DensityGrid, f_inf: float, rtol: float = 1e-9):
    """Cells violating ``rho^(5/3) <= c_int * k_hat`` (with ``1 + rtol`` slack).

    Returns ``(violating cell indices, max ratio rho^(5/3) / (c_int k_hat))``.
    """
    c = interpolation_constant(f_inf)
    lhs = grid.rho ** (5.0 / 3.0)
    rhs = c * grid.k_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    bad = np.nonzero(lhs > rhs * (1.0 + rtol))[0]
    return grid.cells[bad], float(ratio.max()) if ratio.size else 0.0


def lattice_masses(state, sites) -> np.ndarray:
    """Particle weight within the closed unit ball around each integer site."""
    pos = np.asarray(state.pos if hasattr(state, "pos") else state[0], dtype=float).reshape(-1, 3)
    w = np.asarray(state.weight if hasattr(state, "weight") else state[-1], dtype=float).reshape(-1)
    sites = np.asarray(sites, dtype=float).reshape(-1, 3)
    if pos.shape[0] == 0 or sites.shape[0] == 0:
        return np.zeros(sites.shape[0])
    out = np.zeros((sites.shape[0], 1))
    # sharp ball indicator, so bucket particles into unit cells and scan neighbours
    cell = np.floor(pos).astype(np.int64)
    order = np.lexsort((cell[:, 2], cell[:, 1], cell[:, 0]))
    cs = cell[order]
    keys, start = np.unique(cs, axis=0, return_index=True)
    end = np.append(start[1:], cs.shape[0])
    lut = {tuple(k): (a, b) for k, a, b in zip(keys, start, end)}
    ps, ws = pos[order], w[order]
    for s_i, s in enumerate(sites):
        base = np.floor(s).astype(np.int64)
        tot = 0.0
        for dx in (-2, -1, 0, 1):
            for dy in (-2, -1, 0, 1):
                for dz in (-2, -1, 0, 1):
                    ab = lut.get((base[0] + dx, base[1] + dy, base[2] + dz))
                    if ab is None:
                        continue
                    d = ps[ab[0]:ab[1]] - s
                    m = np.einsum("ij,ij->i", d, d) <= 1.0
                    tot += float(ws[ab[0]:ab[1]][m].sum())
        out[s_i, 0] = tot
    return out[:, 0]


# ------------------------------------------------------------- along characteristics
@dataclass(frozen=True)
class FieldWork:
    """``int_0^t |E(X_i(s), s)| ds`` per particle at the snapshot times."""

    times: np.ndarray
    work: np.ndarray

    @property
    def sup_series(self) -> np.ndarray:
        return self.work.max(axis=1) if self.work.shape[1] else np.zeros(self.work.shape[0])

    @property
    def sup(self) -> float:
        return float(self.sup_series.max()) if self.work.size else 0.0


def _trapezoid_cumulative(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape[0] != y.shape[0]:
        raise ValueError("mismatched series lengths")
    inc = 0.5 * np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1)) * (y[1:] + y[:-1])
    return np.concatenate([np.zeros((1,) + y.shape[1:]), np.cumsum(inc, axis=0)])


def field_work(traj: TrajectorySet | None = None, times=None, emag=None) -> FieldWork:
    """Per-particle field work by trapezoidal accumulation.

    Either a trajectory (whose per-step accumulation is used) or explicit
    ``times`` and ``emag`` series (shape (S,) or (S, n)) are accepted.
    """
    if traj is not None:
        return FieldWork(traj.times, traj.work)
    if times is None or emag is None:
        raise ValueError("need a trajectory or explicit series")
    e = np.asarray(emag, dtype=float)
    w = _trapezoid_cumulative(times, e)
    return FieldWork(np.asarray(times, dtype=float), w if w.ndim == 2 else w[:, None])


def _window_integral(t, y, a, b):
    """Exact integral of the piecewise-linear interpolant of ``y`` over ``[a, b]``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ya = np.array([np.interp(a, t, col) for col in y.reshape(len(t), -1).T])
    yb = np.array([np.interp(b, t, col) for col in y.reshape(len(t), -1).T])
    inner = np.nonzero((t > a) & (t < b))[0]
    tt = np.concatenate([[a], t[inner], [b]])
    yy = np.concatenate([ya[None], y.reshape(len(t), -1)[inner], yb[None]])
    return np.sum(0.5 * np.diff(tt)[:, None] * (yy[1:] + yy[:-1]), axis=0)


def time_average_field(traj, window_start: float, delta: float, emag=None):
    """``(1 / delta) int_{t}^{t + delta} |E| ds`` of the recorded series.

    ``traj`` is a :class:`TrajectorySet` (per-step tracked series are used
    when available, else snapshots) or an array of times together with
    ``emag``. Returns one value per particle (a float for a 1-d series).
    """
    if isinstance(traj, TrajectorySet):
        if traj.track_emag is not None and traj.track_emag.shape[1]:
            t, y = traj.step_times, traj.track_emag
        else:
            t, y = traj.times, traj.emag
    else:
        t, y = np.asarray(traj, dtype=float), np.asarray(emag, dtype=float)
    a, b = float(window_start), float(window_start) + float(delta)
    tol = 1e-12 * max(1.0, abs(t[-1]))
    if delta <= 0 or a < t[0] - tol or b > t[-1] + tol:
        raise ValueError(f"window [{a}, {b}] outside recorded times [{t[0]}, {t[-1]}]")
    b = min(b, t[-1])
    out = _window_integral(t, y, a, b) / float(delta)
    return float(out[0]) if y.ndim == 1 else out


def nested_average_check(times, values, window_start: float, delta_prev: float, g: int,
                         rtol: float = 1e-12) -> tuple[bool, float, np.ndarray]:
    """Average over ``g * delta_prev`` equals the mean of the ``g`` sub-averages.

    Returns ``(ok, big_average, sub_averages)``; ``ok`` also certifies
    ``big_average <= max(sub_averages)``.
    """
    subs = np.array([time_average_field(times, window_start + k * delta_prev, delta_prev, values)
                     for k in range(int(g))])
    big = time_average_field(times, window_start, g * delta_prev, values)
    scale = max(1.0, float(np.max(np.abs(subs))))
    ok = (abs(big - subs.mean()) <= rtol * scale) and (big <= subs.max() + rtol * scale)
    return bool(ok), float(big), subs


# ------------------------------------------------------------- dyadic census
@dataclass
class CensusReport:
    """Velocity bands around ``v_ref``.

    ``b1`` is the weight with ``|v - v_ref| <= P^gamma``; ``band_weight[k]``
    the weight with ``alpha_{k+1} < |v - v_ref| <= alpha_k`` for
    ``k = 0..m`` and ``outside`` the weight beyond ``alpha_0 = P``.
    ``bound[k]`` is the volume bound ``f_inf * spatial_volume * (4 pi / 3)
    (alpha_k + sqrt(3) h_v / 2)^3`` when ``f_inf`` is given.
    """

    p: float
    gamma: float
    m: int
    alpha: np.ndarray
    l: np.ndarray
    b1_count: int
    b1: float
    band_count: np.ndarray
    band_weight: np.ndarray
    outside: float
    bound: np.ndarray | None = None
    violations: list = field(default_factory=list)


def shell_count(p: float, gamma: float) -> int:
    """``m = floor((1 - gamma) log2 P)``."""
    return int(math.floor((1.0 - gamma) * math.log2(p) + 1e-12))


def dyadic_radii(p: float, q: float, eta: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """``alpha_k = P / 2^k`` and ``l_k = 2^(3k) Q^(1/3) / P^(4/3 + eta)`` for ``k = 0..m+1``."""
    k = np.arange(m + 2)
    return p / 2.0 ** k, 2.0 ** (3 * k) * q ** (1.0 / 3.0) / p ** (4.0 / 3.0 + eta)


def dyadic_shell_census(velocities, v_ref, p: float, q: float, gamma: float, eta: float,
                        weights=None, f_inf: float | None = None, spatial_volume: float = 1.0,
                        h_v: float = 0.0) -> CensusReport:
    """Partition velocities into ``B1`` and dyadic bands and check the band volume bound."""
    if not (p > 1 and q > 0):
        raise ValueError("need P > 1 and Q > 0")
    v = np.asarray(velocities, dtype=float).reshape(-1, 3)
    w = np.ones(v.shape[0]) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    d = np.sqrt(np.einsum("ij,ij->i", v - np.asarray(v_ref, float), v - np.asarray(v_ref, float)))
    m = shell_count(p, gamma)
    alpha, l = dyadic_radii(p, q, eta, m)
    pg = p ** gamma
    in_b1 = d <= pg
    bc = np.zeros(m + 1, dtype=np.int64)
    bw = np.zeros(m + 1)
    for k in range(m + 1):
        sel = (~in_b1) & (d > alpha[k + 1]) & (d <= alpha[k])
        bc[k] = int(sel.sum())
        bw[k] = float(w[sel].sum())
    outside = float(w[(~in_b1) & (d > alpha[0])].sum())
    rep = CensusReport(p, gamma, m, alpha[: m + 1], l[: m + 1], int(in_b1.sum()),
                       float(w[in_b1].sum()), bc, bw, outside)
    if f_inf is not None:
        rep.bound = (f_inf * spatial_volume * (4.0 * math.pi / 3.0)
                     * (alpha[: m + 1] + math.sqrt(3.0) * h_v / 2.0) ** 3)
        rep.violations = [k for k in range(m + 1) if bw[k] > rep.bound[k] * (1 + 1e-12)]
    return rep


# ------------------------------------------------------------- fits
@dataclass(frozen=True)
class ExponentFit:
    """Least-squares line ``log y = slope * log x + intercept``."""

    slope: float
    intercept: float
    residual: float
    window: tuple
    n: int


def fit_exponent(x, y) -> ExponentFit:
    """Fit ``log y`` against ``log x`` over the positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (x > 0) & (y > 0)
    if m.sum() < 2:
        raise ValueError("need at least two positive points to fit")
    lx, ly = np.log(x[m]), np.log(y[m])
    slope, intercept = np.polyfit(lx, ly, 1)
    res = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return ExponentFit(float(slope), float(intercept), res, (float(x[m].min()), float(x[m].max())),
                       int(m.sum()))


def fit_linear(x, y) -> ExponentFit:
    """Least-squares line ``log y = slope * x + intercept`` (geometric decay in ``x``)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = y > 0
    if m.sum() < 2:
        raise ValueError("need at least two positive points to fit")
    ly = np.log(y[m])
    slope, intercept = np.polyfit(x[m], ly, 1)
    res = float(np.sqrt(np.mean((ly - (slope * x[m] + intercept)) ** 2)))
    return ExponentFit(float(slope), float(intercept), res, (float(x[m].min()), float(x[m].max())),
                       int(m.sum()))


def lattice_decay_fit(state, epsilon: float, r_min: float, r_max: float,
                      divide_log: bool = True) -> tuple[ExponentFit, np.ndarray, np.ndarray]:
    """Fit the decay of unit-ball lattice masses against ``|i|``.

    Sites are all integer points with ``r_min <= |i| <= r_max``; for each
    distinct ``|i|^2`` the largest mass is kept (the envelope). With
    ``divide_log`` the masses are divided by ``log^(3/2)(1 + |i|)`` first.
    Returns ``(fit, radii, ratio)`` where ``ratio = mass |i|^(2+eps) /
    log^(3/2)(1 + |i|)`` per distinct radius.
    """
    k = int(math.ceil(r_max))
    ax = np.arange(-k, k + 1)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    n2 = np.einsum("ij,ij->i", g, g)
    sel = (n2 >= r_min ** 2) & (n2 <= r_max ** 2) & (n2 > 0)
    g, n2 = g[sel], n2[sel]
    masses = lattice_masses(state, g)
    uniq = np.unique(n2)
    env = np.array([masses[n2 == u].max() for u in uniq])
    r = np.sqrt(uniq.astype(float))
    logf = np.log1p(r) ** 1.5
    y = env / logf if divide_log else env
    fit = fit_exponent(r, y)
    return fit, r, env * r ** (2.0 + epsilon) / logf


def gaussian_tail_stat(f0_values, v_final, lam: float, v_initial) -> tuple[float, float, float]:
    """``max_i f0_i exp(lam_bar |V_i(T)|^2)`` with ``lam_bar`` fitted from the run.

    The speed growth constant ``C_v = max_i |V_i(T)| / (|v_i| + 1)`` gives
    ``|v| >= |V| / C_v - 1`` and hence ``exp(-lam |v|^2) <= e^lam
    exp(-lam_bar |V|^2)`` with ``lam_bar = lam / (2 C_v^2)``. Returns
    ``(stat, lam_bar, c_v)``; the stat is bounded by ``C0 sup g e^lam``.
    """
    f0 = np.asarray(f0_values, dtype=float)
    vf = np.sqrt(np.einsum("ij,ij->i", np.asarray(v_final, float), np.asarray(v_final, float)))
    vi = np.sqrt(np.einsum("ij,ij->i", np.asarray(v_initial, float), np.asarray(v_initial, float)))
    c_v = float(np.max(vf / (vi + 1.0)))
    lam_bar = lam / (2.0 * c_v * c_v)
    stat = float(np.max(f0 * np.exp(lam_bar * vf ** 2)))
    return stat, lam_bar, c_v
