"""Experiment pipelines shared by the command line and the acceptance suite.

The desk pipeline runs in a fixed order: validate the configuration, calibrate
the field-bound constant ``C2`` on a small sweep, integrate the cutoff
hierarchy, diagnose every snapshot, build the averaging-window schedules, run
the separation checks and fit the exponents. Results can be cached on disk
keyed by the configuration digest, since they are deterministic.
"""

from __future__ import annotations

import logging
import math
import pickle
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .coulomb_field import FieldMethod, Softening
from .diagnostics import (ExponentFit, density_grid, fit_exponent, fit_linear,
                          gaussian_tail_stat, interpolation_check, lattice_decay_fit,
                          q_sup, time_average_field)
from .dynamics import DtPolicy, TrajectorySet, integrate, integrate_hierarchy, separation_check
from .estimates import (C2Calibration, ParamBundle, Schedule, calibrate_c2, make_bundle,
                        schedule)
from .phase_space import (Ensemble, PhysParams, PowerLaw, SamplingSpec, apply_cutoff,
                          eval_initial_density, sample_ensemble)

log = logging.getLogger(__name__)

__all__ = ["SnapshotDiag", "CutoffSummary", "DeskResult", "diagnose_trajectory",
           "run_calibration", "run_desk", "DecayResult", "run_decay", "TailResult",
           "run_gaussian_tail"]


@dataclass
class SnapshotDiag:
    """Per-snapshot observables of one cutoff run."""

    time: float
    step: int
    v_run: float
    r_run: float
    e_sup: float
    q: float
    q_initial: float
    field_ratio: float
    sup_rho: float
    interp_ratio: float
    interp_violations: int


@dataclass
class CutoffSummary:
    n: int
    particles: int
    p: float
    r_final: float
    sup_work: float
    e_sup_max: float
    snapshots: list
    sigma_sup: float | None = None

    @property
    def q_max(self) -> float:
        return max(s.q for s in self.snapshots)

    @property
    def field_ratio_max(self) -> float:
        return max(s.field_ratio for s in self.snapshots)

    @property
    def interp_violations(self) -> int:
        return sum(s.interp_violations for s in self.snapshots)

    @property
    def interp_ratio_max(self) -> float:
        return max(s.interp_ratio for s in self.snapshots)

    @property
    def energy_growth(self) -> float:
        """``max_t Q(R(t), t) / Q(R(t), 0)``."""
        return max(s.q / s.q_initial for s in self.snapshots if s.q_initial > 0)


@dataclass
class DeskResult:
    config: RunConfig
    bundle: ParamBundle
    calibration: C2Calibration
    calibration_rows: list
    summaries: dict
    schedules: dict
    separation: dict
    averages: dict
    sigma: dict
    work_fit: ExponentFit | None
    sigma_fit: ExponentFit | None
    timings: dict = field(default_factory=dict)

    @property
    def cutoffs(self) -> list:
        return sorted(self.summaries)

    @property
    def later_ratio_max(self) -> float:
        return max(s.field_ratio_max for s in self.summaries.values())

    def acceptance(self) -> dict:
        """Pass/fail of the desk-level checks (``None`` when a check does not apply)."""
        cuts = self.cutoffs
        sig = [self.sigma[n] for n in cuts if n >= 4 and n in self.sigma]
        contraction = None
        if len(sig) >= 2 and self.sigma_fit is not None:
            dec = all(b < a for a, b in zip(sig, sig[1:]))
            contraction = bool(dec and self.sigma_fit.slope <= -math.log(2.0))
        work = None if self.work_fit is None else bool(0.0 < self.work_fit.slope < 0.767)
        return {
            "interpolation": all(s.interp_violations == 0 for s in self.summaries.values()),
            "field_bound": bool(np.isfinite(self.calibration.c2)
                                and self.later_ratio_max <= 1.5 * self.calibration.c2),
            "field_work_exponent": work,
            "cauchy_contraction": contraction,
            "separation": all(r.ok for reps in self.separation.values() for r in reps),
        }

    def report(self) -> dict:
        """JSON-ready summary (no timestamps, so reruns compare equal)."""
        out = {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "params": self.bundle.to_dict(),
            "c2": self.calibration.c2,
            "calibration_ratios": list(self.calibration.ratios),
            "later_ratio_max": self.later_ratio_max,
            "fits": {
                "field_work": None if self.work_fit is None else _fit_dict(self.work_fit),
                "sigma_decay": None if self.sigma_fit is None else _fit_dict(self.sigma_fit),
            },
            "cutoffs": {},
            "acceptance": self.acceptance(),
        }
        for n, s in sorted(self.summaries.items()):
            sched = self.schedules.get(n)
            out["cutoffs"][str(n)] = {
                "particles": s.particles, "P": s.p, "R_final": s.r_final,
                "sup_work": s.sup_work, "e_sup_max": s.e_sup_max, "Q_max": s.q_max,
                "energy_growth": s.energy_growth,
                "sup_rho": max(x.sup_rho for x in s.snapshots),
                "field_ratio_max": s.field_ratio_max,
                "interp_ratio_max": s.interp_ratio_max,
                "interp_violations": s.interp_violations,
                "sigma_sup": self.sigma.get(n),
                "schedule": None if sched is None else sched.to_dict(),
                "average_field_over_P_alpha": self.averages.get(n),
                "separation": [
                    {"window": list(r.window), "pairs": r.n_pairs, "fast": r.n_fast,
                     "slow": r.n_slow, "violations": len(r.violations),
                     "min_margin": {k: (None if math.isinf(v) else v)
                                    for k, v in r.min_margin.items()}}
                    for r in self.separation.get(n, [])],
            }
        return out


def _fit_dict(f: ExponentFit) -> dict:
    return {"slope": f.slope, "intercept": f.intercept, "residual": f.residual,
            "window": list(f.window), "n": f.n}


# ----------------------------------------------------------------- diagnostics
def _snapshot_steps(traj: TrajectorySet) -> np.ndarray:
    return np.searchsorted(traj.step_times, traj.times - 1e-12 * max(1.0, traj.times[-1]))


def diagnose_trajectory(traj: TrajectorySet, soft: Softening, f_inf: float, h_rho: float,
                        energy: bool = True, spacing="auto") -> list:
    """Energy, field-ratio and interpolation diagnostics at every snapshot."""
    steps = _snapshot_steps(traj)
    out = []
    st0 = (traj.pos[0], traj.vel[0], traj.weight)
    for j, k in enumerate(steps):
        state = (traj.pos[j], traj.vel[j], traj.weight)
        r = float(traj.r_run[k])
        sp = None if spacing == "auto" else float(spacing)
        if energy:
            q = q_sup(state, r, sp, soft, potentials=traj.potential[j]).value
            q0 = q_sup(st0, r, sp, soft, potentials=traj.potential[0]).value
        else:
            q = q0 = float("nan")
        v = float(traj.v_run[k])
        e = float(traj.e_sup[k])
        ratio = e / (v ** (4.0 / 3.0) * q ** (1.0 / 3.0)) if q > 0 else float("nan")
        grid = density_grid(state, h_rho)
        bad, imax = interpolation_check(grid, f_inf)
        out.append(SnapshotDiag(float(traj.times[j]), int(k), v, r, e, q, q0, ratio,
                                grid.sup_density, imax, int(bad.shape[0])))
    return out


def _policy(cfg: RunConfig) -> DtPolicy:
    return DtPolicy(cfg.dt, cfg.max_disp_frac)


def run_calibration(cfg: RunConfig, base: Ensemble) -> tuple[C2Calibration, list]:
    """Freeze ``C2`` from full-length runs of the calibration cutoffs."""
    rows = []
    for n in cfg.calibration_cutoffs:
        traj = integrate(apply_cutoff(base, n), cfg.t_final, _policy(cfg), cfg.field_method,
                         cfg.soft, cfg.snapshot_stride, c_tilde=cfg.c_tilde,
                         integrator=cfg.integrator, want_potential=True, threads=cfg.threads)
        for d in diagnose_trajectory(traj, cfg.soft, base.f_inf, cfg.resolved_h_rho,
                                     True, cfg.energy_spacing):
            rows.append((n, d.time, d.e_sup, d.v_run, d.q))
    cal = calibrate_c2([(e, v, q) for _, _, e, v, q in rows])
    return cal, rows


def _tracked_ids(cfg: RunConfig, count: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    k = min(cfg.tracked, count)
    return np.sort(rng.choice(count, size=k, replace=False)) if k else np.zeros(0, np.int64)


def _windows(t_final: float, width: float, count: int) -> list:
    if width >= t_final or count < 1:
        return [(0.0, t_final)]
    starts = np.linspace(0.0, t_final - width, count)
    return [(float(s), float(width)) for s in starts]


def _code_digest() -> str:
    """Digest of the package sources, so cached results follow code changes."""
    h = hashlib.sha256(__version__.encode())
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")) + sorted(root.glob("*.pyx")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def run_desk(cfg: RunConfig, cache_dir=None, progress: bool = False) -> DeskResult:
    """Run the full desk pipeline for ``cfg`` (cached under ``cache_dir`` if given)."""
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"desk-{cfg.hash()}-{_code_digest()}.pkl"
        if cache.exists():
            with open(cache, "rb") as fh:
                return pickle.load(fh)
    timings = {}
    t0 = time.perf_counter()
    bundle = make_bundle(cfg.epsilon, cfg.gamma, cfg.eta, cfg.delta, cfg.alpha)
    cuts = sorted(set(cfg.cutoffs))
    base = sample_ensemble(cfg.profile, cfg.params, cfg.sampling, cuts[-1] + 1)

    cal, rows = run_calibration(cfg, base)
    timings["calibration"] = time.perf_counter() - t0
    log.info("calibrated C2 = %.6g from %d snapshots", cal.c2, len(rows))

    t1 = time.perf_counter()
    legs = cuts + [cuts[-1] + 1]
    track = _tracked_ids(cfg, base.count_up_to(cuts[0]))
    run = integrate_hierarchy(base, legs, cfg.t_final, _policy(cfg), cfg.field_method,
                              cfg.soft, cfg.snapshot_stride, c_tilde=cfg.c_tilde,
                              integrator=cfg.integrator, track=track, want_potential=True,
                              threads=cfg.threads)
    timings["hierarchy"] = time.perf_counter() - t1
    log.info("hierarchy run finished in %.1f s", timings["hierarchy"])

    t2 = time.perf_counter()
    summaries, schedules, seps, avgs = {}, {}, {}, {}
    sigma = {n: run.coupled[n].sigma_sup for n in cuts if n in run.coupled}
    pairs = np.array([(a, b) for i, a in enumerate(track) for b in track[i + 1:]],
                     dtype=np.int64).reshape(-1, 2)
    for n in cuts:
        traj = run.trajectories[n]
        snaps = diagnose_trajectory(traj, cfg.soft, base.f_inf, cfg.resolved_h_rho,
                                    cfg.energy, cfg.energy_spacing)
        s = CutoffSummary(n, traj.n_particles, float(traj.v_run[-1]), float(traj.r_run[-1]),
                          float(traj.work[-1].max()), float(traj.e_sup.max()), snaps,
                          sigma.get(n))
        summaries[n] = s
        sched = schedule(s.p, s.q_max, cal.c2, bundle.gamma, bundle.delta, bundle.beta,
                         bundle.eta, t_final=cfg.t_final, c_tilde=cfg.c_tilde)
        schedules[n] = sched
        seps[n] = [separation_check(traj, pairs, bundle.gamma, w, p=s.p)
                   for w in _windows(cfg.t_final, sched.delta_1, cfg.separation_windows)]
        top = min(sched.deltas[-1], cfg.t_final)
        av = time_average_field(traj, 0.0, top)
        avgs[n] = float(np.max(av)) / s.p ** bundle.alpha
        log.info("cutoff %d: P=%.4g Q=%.4g work=%.4g", n, s.p, s.q_max, s.sup_work)
    timings["diagnostics"] = time.perf_counter() - t2

    ps = np.array([summaries[n].p for n in cuts])
    ws = np.array([summaries[n].sup_work for n in cuts])
    work_fit = fit_exponent(ps, ws) if len(cuts) >= 2 and np.ptp(ps) > 0 else None
    sn = [n for n in cuts if n >= 4 and n in sigma]
    sigma_fit = fit_linear(sn, [sigma[n] for n in sn]) if len(sn) >= 2 else None
    res = DeskResult(cfg, bundle, cal, rows, summaries, schedules, seps, avgs, sigma,
                     work_fit, sigma_fit, timings)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        with open(cache, "wb") as fh:
            pickle.dump(res, fh)
    return res


# ----------------------------------------------------------------- decay runs
@dataclass
class DecayResult:
    """Lattice-mass decay at ``t_final`` of a unit-spacing power-law ensemble."""

    epsilon: float
    fit: ExponentFit
    fit_raw: ExponentFit
    radii: np.ndarray
    ratio: np.ndarray
    particles: int

    @property
    def target(self) -> float:
        return -(2.0 + self.epsilon)


def run_decay(epsilon: float = 0.8, lam: float = 0.5, c0: float = 0.05, r_max: float = 8.0,
              cutoff: int = 1, t_final: float = 0.5, dt: float = 1.0 / 64.0,
              theta: float = 0.3, fit_range=(2.0, 7.0)) -> DecayResult:
    """Evolve a unit-spacing ensemble and fit its lattice masses against ``|i|``."""
    params = PhysParams(lam=lam, c0=c0, epsilon=epsilon)
    ens = sample_ensemble(PowerLaw(1.0, epsilon), params, SamplingSpec(r_max, 1.0, 1.0), cutoff)
    soft = Softening.from_spacing(1.0)
    traj = integrate(ens, t_final, DtPolicy(dt), FieldMethod.tree(theta), soft,
                     snapshot_stride=10 ** 9)
    state = (traj.pos[-1], traj.vel[-1], traj.weight)
    fit, radii, ratio = lattice_decay_fit(state, epsilon, *fit_range, divide_log=True)
    raw, _, _ = lattice_decay_fit(state, epsilon, *fit_range, divide_log=False)
    return DecayResult(epsilon, fit, raw, radii, ratio, len(ens))


@dataclass
class TailResult:
    """Gaussian-tail statistic at two step sizes."""

    stats: tuple
    lam_bars: tuple
    c_vs: tuple
    bound: float

    @property
    def change(self) -> float:
        a, b = self.stats
        return abs(b - a) / abs(a)


def run_gaussian_tail(cfg: RunConfig, n: int = 4) -> TailResult:
    """``max f0 exp(lam_bar |V(T)|^2)`` at ``dt`` and ``dt / 2`` for cutoff ``n``."""
    ens = sample_ensemble(cfg.profile, cfg.params, cfg.sampling, n)
    f0 = eval_initial_density(cfg.profile, cfg.params, ens.pos, ens.vel)
    stats, lbs, cvs = [], [], []
    for dt in (cfg.dt, 0.5 * cfg.dt):
        traj = integrate(ens, cfg.t_final, DtPolicy(dt, cfg.max_disp_frac), cfg.field_method,
                         cfg.soft, snapshot_stride=10 ** 9, c_tilde=cfg.c_tilde)
        s, lb, cv = gaussian_tail_stat(f0, traj.vel[-1], cfg.lam, ens.vel)
        stats.append(s)
        lbs.append(lb)
        cvs.append(cv)
    bound = cfg.c0 * cfg.profile.sup * math.exp(cfg.lam)
    return TailResult(tuple(stats), tuple(lbs), tuple(cvs), bound)
