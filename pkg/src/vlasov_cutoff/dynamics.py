"""Characteristics of the cut-off Vlasov-Poisson flow.

Particles follow ``dX/dt = V``, ``dV/dt = E(X, t)`` with the self-consistent
field of :mod:`vlasov_cutoff.coulomb_field`. Several cutoffs of one base
ensemble can be advanced together ("legs"): every leg starts from the shared
initial points, uses the same time steps and shares one tree per step, which
makes the pointwise differences between cutoffs directly measurable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coulomb_field import FieldMethod, Softening, eval_legs
from .phase_space import Ensemble, apply_cutoff

logger = logging.getLogger(__name__)

__all__ = [
    "DtPolicy",
    "NumericalAbort",
    "StepRejected",
    "TrajectorySet",
    "CoupledRun",
    "HierarchyRun",
    "SeparationReport",
    "integrate",
    "integrate_hierarchy",
    "coupled_integrate",
    "separation_check",
    "energy",
]

DEFAULT_C_TILDE = 2.0


class NumericalAbort(RuntimeError):
    """Non-finite field or state; carries the offending particle and time."""

    def __init__(self, msg: str, particle: int | None = None, time: float | None = None):
        self.particle = particle
        self.time = time
        super().__init__(msg)


class StepRejected(NumericalAbort):
    """A particle moved farther than the allowed fraction of ``delta_s`` in one step."""


@dataclass(frozen=True)
class DtPolicy:
    """Fixed step ``dt`` with a displacement safety check.

    A step is rejected (an error is raised) when any active particle moves
    more than ``max_disp_frac * delta_s``; with ``delta_s = 0`` the check is
    disabled.
    """

    dt: float
    max_disp_frac: float = 0.25

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.max_disp_frac > 0:
            raise ValueError("max_disp_frac must be positive")

    def steps(self, t_final: float) -> tuple[int, float]:
        """Number of steps and the exact step size covering ``[0, t_final]``."""
        k = max(1, int(round(t_final / self.dt)))
        return k, t_final / k


def _as_policy(dt_policy) -> DtPolicy:
    return dt_policy if isinstance(dt_policy, DtPolicy) else DtPolicy(float(dt_policy))


@dataclass
class TrajectorySet:
    """Time-sampled characteristics of one cutoff.

    Snapshot arrays (every ``stride`` steps, plus the final step) hold the
    state of all ``n`` particles; per-step arrays hold scalar summaries and
    the series of tracked particles.

    Attributes
    ----------
    times : ndarray (S,)
        Snapshot times, ``times[0] == 0``.
    pos, vel : ndarray (S, n, 3)
    emag : ndarray (S, n)
        ``|E(X_i(t), t)|`` at the snapshots.
    work : ndarray (S, n)
        Per-particle ``int_0^t |E(X_i(s), s)| ds`` accumulated by the
        trapezoidal rule at every step.
    step_times : ndarray (K + 1,)
    max_speed : ndarray (K + 1,)
        Instantaneous ``max_i |V_i(t)|``.
    v_run : ndarray (K + 1,)
        Running maximal speed floored at ``c_tilde``.
    r_run : ndarray (K + 1,)
        ``1 + int_0^t v_run`` (trapezoidal).
    e_sup : ndarray (K + 1,)
        ``max_i |E(X_i(t), t)|``.
    track_ids : ndarray of int (k,)
    track_pos, track_vel : ndarray (K + 1, k, 3)
    track_emag : ndarray (K + 1, k)
    """

    times: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    emag: np.ndarray
    work: np.ndarray
    step_times: np.ndarray
    max_speed: np.ndarray
    v_run: np.ndarray
    r_run: np.ndarray
    e_sup: np.ndarray
    weight: np.ndarray
    cutoff_n: int
    dt: float
    stride: int
    c_tilde: float
    track_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    track_pos: np.ndarray | None = None
    track_vel: np.ndarray | None = None
    track_emag: np.ndarray | None = None
    potential: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return int(self.weight.shape[0])

    @property
    def t_final(self) -> float:
        return float(self.step_times[-1])

    def series(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(t, X, V, |E|)`` for particles ``ids`` at the finest available resolution.

        Tracked particles are resolved at every step; others at snapshots.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if self.track_pos is not None and np.all(np.isin(ids, self.track_ids)):
            col = np.searchsorted(self.track_ids, ids)
            return (self.step_times, self.track_pos[:, col], self.track_vel[:, col],
                    self.track_emag[:, col])
        return self.times, self.pos[:, ids], self.vel[:, ids], self.emag[:, ids]

    def check(self) -> None:
        """Validate the structural invariants."""
        t = self.times
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("snapshot times must start at 0 and increase strictly")
        s = t.shape[0]
        for arr in (self.pos, self.vel, self.emag, self.work):
            if arr.shape[0] != s:
                raise ValueError("series lengths differ")


@dataclass
class CoupledRun:
    """Cutoffs ``N`` and ``N + 1`` run from shared initial points.

    ``delta_series``, ``eta_series`` and ``sigma_series`` are per step
    (``times``), maxima over the ``shared_count`` particles of the
    ``N``-ensemble.
    """

    traj_lo: TrajectorySet
    traj_hi: TrajectorySet
    shared_count: int
    times: np.ndarray
    delta_series: np.ndarray
    eta_series: np.ndarray

    @property
    def sigma_series(self) -> np.ndarray:
        return np.maximum(self.delta_series, self.eta_series)

    @property
    def sigma_sup(self) -> float:
        return float(self.sigma_series.max())


@dataclass
class HierarchyRun:
    """Several cutoffs advanced together; ``coupled[n]`` pairs ``n`` with ``n + 1``."""

    cutoffs: list
    trajectories: dict
    coupled: dict


class _Legs:
    """Shared machinery for advancing ``L`` legs of one particle list."""

    def __init__(self, pos0, vel0, weights, counts, method, soft, threads, backend):
        self.L, self.n = weights.shape
        self.X = np.repeat(np.asarray(pos0, dtype=float)[None], self.L, axis=0)
        self.V = np.repeat(np.asarray(vel0, dtype=float)[None], self.L, axis=0)
        self.W = np.ascontiguousarray(weights, dtype=float)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.method = method
        self.soft = soft
        self.threads = threads
        self.backend = backend
        self.active = [slice(0, int(c)) for c in self.counts]

    def field(self, X, t, want_potential=False):
        e, phi = eval_legs(X, self.W, self.method, self.soft, want_potential=want_potential,
                           threads=self.threads, backend=self.backend, qcount=self.counts)
        for leg, sl in enumerate(self.active):
            bad = ~np.isfinite(e[leg, sl]).all(axis=1)
            if bad.any():
                pid = int(np.nonzero(bad)[0][0])
                raise NumericalAbort(f"non-finite field at particle {pid}, t={t:.6g}", pid, t)
        return e, phi


def _check_disp(legs: _Legs, step_disp, policy: DtPolicy, t: float) -> None:
    if legs.soft.delta_s == 0.0:
        return
    lim = policy.max_disp_frac * legs.soft.delta_s
    for leg, sl in enumerate(legs.active):
        d = np.sqrt(np.einsum("ij,ij->i", step_disp[leg, sl], step_disp[leg, sl]))
        if d.size and d.max() > lim:
            pid = int(np.argmax(d))
            raise StepRejected(
                f"particle {pid} moved {d[pid]:.4g} > {policy.max_disp_frac} * delta_s "
                f"in one step at t={t:.6g}; reduce dt", pid, t)


def _run(pos0, vel0, weights, counts, cutoffs, t_final, dt_policy, method, soft, stride,
         c_tilde, integrator, track, threads, backend, pairs, want_potential=False):
    """Advance all legs; returns trajectories and coupled difference series."""
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    policy = _as_policy(dt_policy)
    n_steps, dt = policy.steps(t_final)
    stride = max(1, int(stride))
    legs = _Legs(pos0, vel0, weights, counts, method, soft, threads, backend)
    L = legs.L
    track = np.unique(np.asarray([] if track is None else track, dtype=np.int64))

    snap_steps = sorted(set(range(0, n_steps + 1, stride)) | {n_steps})
    S = len(snap_steps)
    snaps = []
    for leg in range(L):
        c = int(counts[leg])
        tr = track[track < c]
        snaps.append(dict(
            pos=np.empty((S, c, 3)), vel=np.empty((S, c, 3)), emag=np.empty((S, c)),
            work=np.empty((S, c)), pot=np.empty((S, c)) if want_potential else None,
            max_speed=np.empty(n_steps + 1), e_sup=np.empty(n_steps + 1),
            track=tr, tpos=np.empty((n_steps + 1, tr.size, 3)),
            tvel=np.empty((n_steps + 1, tr.size, 3)), temag=np.empty((n_steps + 1, tr.size))))
    diffs = {p: (np.zeros(n_steps + 1), np.zeros(n_steps + 1)) for p in pairs}
    work = np.zeros((L, legs.n))
    step_times = np.arange(n_steps + 1) * dt
    step_times[-1] = t_final

    E, phi = legs.field(legs.X, 0.0, want_potential)

    def record(k, E, phi):
        emag = np.sqrt(np.einsum("lij,lij->li", E, E))
        for leg in range(L):
            s = snaps[leg]
            sl = legs.active[leg]
            sp = np.sqrt(np.einsum("ij,ij->i", legs.V[leg, sl], legs.V[leg, sl]))
            s["max_speed"][k] = sp.max() if sp.size else 0.0
            s["e_sup"][k] = emag[leg, sl].max() if sp.size else 0.0
            tr = s["track"]
            s["tpos"][k] = legs.X[leg, tr]
            s["tvel"][k] = legs.V[leg, tr]
            s["temag"][k] = emag[leg, tr]
            if k in snap_index:
                j = snap_index[k]
                s["pos"][j] = legs.X[leg, sl]
                s["vel"][j] = legs.V[leg, sl]
                s["emag"][j] = emag[leg, sl]
                s["work"][j] = work[leg, sl]
                if want_potential:
                    s["pot"][j] = phi[leg, sl]
        for (a, b), (dser, eser) in diffs.items():
            c = int(min(counts[a], counts[b]))
            dx = legs.X[a, :c] - legs.X[b, :c]
            dv = legs.V[a, :c] - legs.V[b, :c]
            dser[k] = np.sqrt(np.einsum("ij,ij->i", dx, dx).max()) if c else 0.0
            eser[k] = np.sqrt(np.einsum("ij,ij->i", dv, dv).max()) if c else 0.0
        return emag

    snap_index = {k: j for j, k in enumerate(snap_steps)}
    emag = record(0, E, phi)

    for k in range(1, n_steps + 1):
        t = step_times[k - 1]
        if integrator == "verlet":
            vh = legs.V + 0.5 * dt * E
            disp = dt * vh
            _check_disp(legs, disp, policy, t)
            legs.X = legs.X + disp
            E, phi = legs.field(legs.X, t + dt, want_potential)
            legs.V = vh + 0.5 * dt * E
        elif integrator == "rk4":
            X0, V0 = legs.X, legs.V
            k1x, k1v = V0, E
            k2x = V0 + 0.5 * dt * k1v
            k2v, _ = legs.field(X0 + 0.5 * dt * k1x, t + 0.5 * dt)
            k3x = V0 + 0.5 * dt * k2v
            k3v, _ = legs.field(X0 + 0.5 * dt * k2x, t + 0.5 * dt)
            k4x = V0 + dt * k3v
            k4v, _ = legs.field(X0 + dt * k3x, t + dt)
            disp = dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            _check_disp(legs, disp, policy, t)
            legs.X = X0 + disp
            legs.V = V0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
            E, phi = legs.field(legs.X, t + dt, want_potential)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        if not (np.all(np.isfinite(legs.X)) and np.all(np.isfinite(legs.V))):
            bad = np.nonzero(~np.isfinite(legs.X).all(axis=2) | ~np.isfinite(legs.V).all(axis=2))
            raise NumericalAbort(f"non-finite state at particle {int(bad[1][0])}",
                                 int(bad[1][0]), float(t + dt))
        new = np.sqrt(np.einsum("lij,lij->li", E, E))
        work += 0.5 * dt * (emag + new)
        emag = record(k, E, phi)

    trajs = []
    times = step_times[snap_steps]
    for leg in range(L):
        s = snaps[leg]
        c = int(counts[leg])
        vrun = np.maximum(np.maximum.accumulate(s["max_speed"]), c_tilde)
        rrun = 1.0 + np.concatenate([[0.0], np.cumsum(0.5 * dt * (vrun[1:] + vrun[:-1]))])
        trajs.append(TrajectorySet(
            times=times.copy(), pos=s["pos"], vel=s["vel"], emag=s["emag"], work=s["work"],
            step_times=step_times.copy(), max_speed=s["max_speed"], v_run=vrun, r_run=rrun,
            e_sup=s["e_sup"], weight=legs.W[leg, :c].copy(), cutoff_n=int(cutoffs[leg]),
            dt=dt, stride=stride, c_tilde=float(c_tilde), track_ids=s["track"],
            track_pos=s["tpos"], track_vel=s["tvel"], track_emag=s["temag"],
            potential=s["pot"]))
    return trajs, step_times, diffs


def integrate(ens: Ensemble, t_final: float, dt_policy, method: FieldMethod | None = None,
              soft: Softening | None = None, snapshot_stride: int = 1, *,
              c_tilde: float = DEFAULT_C_TILDE, integrator: str = "verlet",
              track: Sequence[int] | None = None, want_potential: bool = False,
              threads: int | None = None, backend: str | None = None) -> TrajectorySet:
    """Advance one ensemble with velocity Verlet (or RK4) to ``t_final``.

    Raises
    ------
    StepRejected
        ``dt`` too large for the softening length.
    NumericalAbort
        Non-finite field or state.
    """
    if len(ens) == 0:
        raise ValueError("cannot integrate an empty ensemble")
    method = method or FieldMethod.direct()
    soft = soft or Softening(0.0)
    trajs, _, _ = _run(ens.pos, ens.vel, ens.weight[None], [len(ens)], [ens.cutoff_n],
                       t_final, dt_policy, method, soft, snapshot_stride, c_tilde,
                       integrator, track, threads, backend, [], want_potential)
    return trajs[0]


def integrate_hierarchy(base: Ensemble, cutoffs: Sequence[int], t_final: float, dt_policy,
                        method: FieldMethod | None = None, soft: Softening | None = None,
                        snapshot_stride: int = 1, *, c_tilde: float = DEFAULT_C_TILDE,
                        integrator: str = "verlet", track: Sequence[int] | None = None,
                        want_potential: bool = False, threads: int | None = None,
                        backend: str | None = None) -> HierarchyRun:
    """Advance ``apply_cutoff(base, n)`` for every ``n`` in ``cutoffs`` together.

    Legs are ordered by decreasing cutoff; particles above a leg's cutoff are
    carried with zero weight and excluded from every recorded quantity. For
    each ``n`` with ``n + 1`` also in ``cutoffs`` the per-step sup gaps are
    recorded as a :class:`CoupledRun`.
    """
    cuts = sorted({int(c) for c in cutoffs}, reverse=True)
    if not cuts or cuts[0] > base.cutoff_n:
        raise ValueError("cutoffs must be nonempty and not exceed base.cutoff_n")
    method = method or FieldMethod.direct()
    soft = soft or Softening(0.0)
    top = apply_cutoff(base, cuts[0])
    counts = [top.count_up_to(c) for c in cuts]
    if counts[0] == 0:
        raise ValueError("cannot integrate an empty ensemble")
    W = np.zeros((len(cuts), counts[0]))
    for leg, c in enumerate(counts):
        W[leg, :c] = top.weight[:c]
    pairs = [(cuts.index(n + 1), cuts.index(n)) for n in cuts if n + 1 in cuts]
    trajs, step_times, diffs = _run(top.pos, top.vel, W, counts, cuts, t_final, dt_policy,
                                    method, soft, snapshot_stride, c_tilde, integrator, track,
                                    threads, backend, pairs, want_potential)
    by_cut = {c: trajs[leg] for leg, c in enumerate(cuts)}
    coupled = {}
    for (hi, lo) in pairs:
        d, e = diffs[(hi, lo)]
        coupled[cuts[lo]] = CoupledRun(trajs[lo], trajs[hi], counts[lo], step_times, d, e)
    return HierarchyRun(sorted(cuts), by_cut, coupled)


def coupled_integrate(base: Ensemble, n: int, t_final: float, dt_policy,
                      method: FieldMethod | None = None, soft: Softening | None = None,
                      snapshot_stride: int = 1, **kw) -> CoupledRun:
    """Run cutoffs ``n`` and ``n + 1`` with one time-step schedule."""
    if base.cutoff_n < n + 1:
        raise ValueError(f"base cutoff {base.cutoff_n} < n + 1 = {n + 1}")
    run = integrate_hierarchy(base, [n, n + 1], t_final, dt_policy, method, soft,
                              snapshot_stride, **kw)
    return run.coupled[int(n)]


def energy(pos, vel, weight, soft: Softening) -> float:
    """Total kinetic plus softened pair potential energy (direct sum)."""
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    w = np.asarray(weight, dtype=float)
    kin = 0.5 * float(np.sum(w * np.einsum("ij,ij->i", vel, vel)))
    d = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d) + soft.soft2
    np.fill_diagonal(r2, np.inf)
    pot = 0.5 * float(np.sum(w[:, None] * w[None, :] / np.sqrt(r2)))
    return kin + pot


@dataclass
class SeparationReport:
    """Outcome of :func:`separation_check`.

    ``violations`` lists ``(i, j, kind, margin)`` with ``kind`` one of
    ``"inf_gap"``, ``"sup_gap"`` or ``"linear_sep"``; margins are negative
    for violations. ``min_margin`` holds the smallest margin per kind over
    all checked pairs (``inf`` when a kind was never checked).
    """

    p_gamma: float
    window: tuple
    n_pairs: int
    n_fast: int
    n_slow: int
    violations: list
    min_margin: dict

    @property
    def ok(self) -> bool:
        return not self.violations


def separation_check(run: TrajectorySet, pair_ids, gamma: float, window: tuple,
                     p: float | None = None, rtol: float = 1e-12) -> SeparationReport:
    """Check velocity-gap persistence and linear separation on a time window.

    For each pair ``(i, j)``, with ``dV`` and ``dX`` the velocity and
    position differences and ``t'`` the window start:

    * if ``|dV(t')| >= P^gamma``: ``inf |dV| >= P^gamma / 2`` over the window,
      and ``|dX(t)| >= (P^gamma / 4) |t - t0|`` at every recorded ``t`` with
      ``t0`` the earliest recorded argmin of ``|dX|``;
    * if ``|dV(t')| <= P^gamma``: ``sup |dV| <= 2 P^gamma``.

    ``P`` defaults to the run's final running maximal speed.
    """
    t_start, length = float(window[0]), float(window[1])
    t_end = t_start + length
    pairs = np.asarray(pair_ids, dtype=np.int64).reshape(-1, 2)
    ids = np.unique(pairs)
    t, X, V, _ = run.series(ids)
    tol = 1e-12 * max(1.0, abs(t[-1]))
    if t_start < -tol or t_end > t[-1] + tol or length <= 0:
        raise ValueError(f"window [{t_start}, {t_end}] exceeds recorded times [0, {t[-1]}]")
    sel = np.nonzero((t >= t_start - tol) & (t <= t_end + tol))[0]
    if sel.size == 0:
        raise ValueError("no recorded times inside the window")
    tw = t[sel]
    col = {int(k): c for c, k in enumerate(ids)}
    P = float(run.v_run[-1] if p is None else p)
    pg = P ** gamma
    slack = rtol * pg
    viol = []
    mins = {"inf_gap": math.inf, "sup_gap": math.inf, "linear_sep": math.inf}
    n_fast = n_slow = 0
    for i, j in pairs:
        a, b = col[int(i)], col[int(j)]
        dv = np.linalg.norm(V[sel, a] - V[sel, b], axis=1)
        dx = np.linalg.norm(X[sel, a] - X[sel, b], axis=1)
        if dv[0] >= pg - slack:
            n_fast += 1
            m1 = float(dv.min() - 0.5 * pg)
            t0 = tw[int(np.argmin(dx))]
            m2 = float(np.min(dx - 0.25 * pg * np.abs(tw - t0)))
            mins["inf_gap"] = min(mins["inf_gap"], m1)
            mins["linear_sep"] = min(mins["linear_sep"], m2)
            if m1 < -slack:
                viol.append((int(i), int(j), "inf_gap", m1))
            if m2 < -slack:
                viol.append((int(i), int(j), "linear_sep", m2))
        if dv[0] <= pg + slack:
            n_slow += 1
            m3 = float(2.0 * pg - dv.max())
            mins["sup_gap"] = min(mins["sup_gap"], m3)
            if m3 < -slack:
                viol.append((int(i), int(j), "sup_gap", m3))
    return SeparationReport(pg, (t_start, t_end), len(pairs), n_fast, n_slow, viol, mins)
