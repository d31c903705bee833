"""Command line interface.

Subcommands: ``params``, ``sums``, ``simulate``, ``converge``, ``probe`` and
``report``. Exit codes: 0 success, 1 usage or configuration error, 2
numerical abort, 3 failed acceptance check.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .coulomb_field import SingularityError
from .dynamics import NumericalAbort

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ACCEPT = 0, 1, 2, 3

log = logging.getLogger("vlasov_cutoff")


def _bundled(name: str) -> Path | None:
    p = resources.files("vlasov_cutoff") / "configs" / f"{name}.ini"
    return Path(str(p)) if p.is_file() else None


def resolve_config(arg: str | None, args) -> RunConfig:
    """Load ``arg`` (a path or a bundled config name) and apply command-line overrides."""
    if arg is None:
        cfg = RunConfig()
    else:
        path = Path(arg)
        if not path.is_file():
            path = _bundled(arg) or path
        cfg = load_config(path)
    over = {
        "epsilon": getattr(args, "epsilon", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "method": getattr(args, "method", None),
        "theta": getattr(args, "theta", None),
        "softening": getattr(args, "softening", None),
        "gamma": getattr(args, "gamma", None),
        "eta": getattr(args, "eta", None),
        "delta": getattr(args, "delta", None),
        "out_dir": getattr(args, "out", None),
    }
    return cfg.with_overrides(**over)


def write_report(path: Path, body: dict) -> Path:
    """One ``# generated`` header line, then the JSON body with sorted keys."""
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(path, "w") as fh:
        fh.write(f"# generated {stamp}\n")
        fh.write(json.dumps(body, sort_keys=True, indent=1, default=_json_default))
        fh.write("\n")
    return path


def read_report(path) -> dict:
    with open(path) as fh:
        fh.readline()
        return json.loads(fh.read())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _num(x) -> float:
    return math.nan if x is None else float(x)


def _acceptance_lines(acc: dict) -> list[str]:
    out = []
    for k in sorted(acc):
        v = acc[k]
        state = "skip" if v is None else ("PASS" if v else "FAIL")
        out.append(f"{state:4s}  {k}")
    return out


# ----------------------------------------------------------------- commands
def cmd_params(args) -> int:
    from .estimates import Regime, make_bundle, param_ranges

    r = param_ranges(args.epsilon)
    b = make_bundle(args.epsilon, args.gamma or "auto", args.eta or "auto",
                    "auto" if args.delta is None else args.delta, args.alpha or "auto")
    print(f"epsilon = {r.epsilon}   beta = {r.beta:.6g}   regime = {r.regime}")
    if r.regime == Regime.DIRECT:
        print(f"gamma in {r.gamma}")
    else:
        print(f"delta in {r.delta}")
        print(f"gamma in {r.gamma_for(b.delta)}  (delta = {b.delta:.6g})")
    d = b.delta if r.regime == Regime.ITERATED else None
    print(f"eta in {r.eta_for(b.gamma, d)}  (gamma = {b.gamma:.6g})")
    print(f"alpha in {r.alpha}")
    print("chosen: " + json.dumps({k: v for k, v in b.to_dict().items() if v is not None},
                                  sort_keys=True))
    return EXIT_OK


def cmd_sums(args) -> int:
    from .estimates import lattice_sum_audit

    rng = np.random.default_rng(args.seed or 0)
    mus = rng.uniform(-args.mu_range, args.mu_range, size=(args.mu_samples, 3))
    rep = lattice_sum_audit(args.epsilon, args.radii, mus)
    print(f"{'R':>8s} {'S(R)':>14s} {'S/R^(1-eps)':>14s}")
    for r, s, q in rep.rows():
        print(f"{r:8.4g} {s:14.8g} {q:14.8g}")
    print(f"ratio band = {rep.band:.6g}")
    for sp in rep.split:
        print(f"mu = ({sp.mu[0]:.3f}, {sp.mu[1]:.3f}, {sp.mu[2]:.3f})  sum <= {sp.upper:.8g}"
              f"  split bound = {sp.bound:.8g}  {'ok' if sp.ok else 'VIOLATED'}")
    if args.out:
        from .io import write_columns
        write_columns(Path(args.out) / "sums.txt",
                      {"R": rep.radii, "S": rep.sums, "ratio": rep.ratios},
                      {"schema": "lattice_sums", "epsilon": rep.epsilon})
    return EXIT_OK if rep.split_ok else EXIT_ACCEPT


def _write_desk_outputs(res, out: Path) -> None:
    from .io import write_columns

    cuts = res.cutoffs
    write_columns(out / "cutoffs.txt", {
        "n": cuts,
        "particles": [res.summaries[n].particles for n in cuts],
        "P": [res.summaries[n].p for n in cuts],
        "sup_work": [res.summaries[n].sup_work for n in cuts],
        "Q_max": [res.summaries[n].q_max for n in cuts],
        "sigma_sup": [_num(res.sigma.get(n)) for n in cuts],
    }, {"schema": "desk_cutoffs", "config_hash": res.config.hash()})
    for n in cuts:
        s = res.summaries[n].snapshots
        write_columns(out / f"snapshots_n{n}.txt", {
            "t": [x.time for x in s], "V": [x.v_run for x in s], "R": [x.r_run for x in s],
            "E_sup": [x.e_sup for x in s], "Q": [x.q for x in s],
            "field_ratio": [x.field_ratio for x in s], "sup_rho": [x.sup_rho for x in s],
            "interp_ratio": [x.interp_ratio for x in s],
        }, {"schema": "desk_snapshots", "n": n, "config_hash": res.config.hash()})


def cmd_simulate(args) -> int:
    from .experiments import run_desk

    cfg = resolve_config(args.config, args)
    res = run_desk(cfg, cache_dir=args.cache)
    out = Path(cfg.out_dir)
    body = res.report()
    write_report(out / "report.json", body)
    _write_desk_outputs(res, out)
    for line in _acceptance_lines(body["acceptance"]):
        print(line)
    return EXIT_ACCEPT if any(v is False for v in body["acceptance"].values()) else EXIT_OK


def cmd_converge(args) -> int:
    from .diagnostics import fit_linear
    from .dynamics import integrate_hierarchy
    from .experiments import _policy
    from .io import write_columns
    from .phase_space import sample_ensemble

    cfg = resolve_config(args.config, args)
    cuts = sorted(set(cfg.cutoffs))
    base = sample_ensemble(cfg.profile, cfg.params, cfg.sampling, cuts[-1] + 1)
    run = integrate_hierarchy(base, cuts + [cuts[-1] + 1], cfg.t_final,
                              _policy(cfg), cfg.field_method, cfg.soft,
                              cfg.snapshot_stride, c_tilde=cfg.c_tilde,
                              integrator=cfg.integrator, threads=cfg.threads)
    rows = [(n, run.coupled[n].delta_series.max(), run.coupled[n].eta_series.max(),
             run.coupled[n].sigma_sup) for n in cuts]
    print(f"{'N':>4s} {'sup delta':>14s} {'sup eta':>14s} {'sup sigma':>14s}")
    for n, d, e, s in rows:
        print(f"{n:4d} {d:14.6e} {e:14.6e} {s:14.6e}")
    body = {"config_hash": cfg.hash(), "rows": [list(r) for r in rows]}
    fit_n = [r for r in rows if r[0] >= 4 and r[3] > 0]
    if len(fit_n) >= 2:
        f = fit_linear([r[0] for r in fit_n], [r[3] for r in fit_n])
        print(f"log sigma slope per unit N = {f.slope:.6g} (geometric bound {-math.log(2):.6g})")
        body["slope"] = f.slope
    out = Path(cfg.out_dir)
    write_columns(out / "converge.txt", {"n": [r[0] for r in rows],
                                         "delta_sup": [r[1] for r in rows],
                                         "eta_sup": [r[2] for r in rows],
                                         "sigma_sup": [r[3] for r in rows]},
                  {"schema": "converge", "config_hash": cfg.hash()})
    write_report(out / "converge.json", body)
    return EXIT_OK


def cmd_probe(args) -> int:
    from .coulomb_field import lipschitz_probe
    from .dynamics import integrate, separation_check
    from .estimates import calibrate_c2, make_bundle, schedule
    from .experiments import _policy, _tracked_ids, _windows, diagnose_trajectory
    from .phase_space import sample_ensemble

    cfg = resolve_config(args.config, args)
    n = max(cfg.cutoffs)
    ens = sample_ensemble(cfg.profile, cfg.params, cfg.sampling, n)
    rng = np.random.default_rng(cfg.seed)
    k = max(1, args.pairs or cfg.probe_pairs)
    x = ens.pos[rng.integers(0, len(ens), k)] + rng.uniform(-0.5, 0.5, (k, 3))
    d = rng.normal(size=(k, 3))
    d *= (10.0 ** rng.uniform(-3, 0, k) / np.linalg.norm(d, axis=1))[:, None]
    lip = lipschitz_probe(ens, np.stack([x, x + d], axis=1), cfg.soft, cfg.field_method)
    print(f"quasi-Lipschitz sup ratio over {k} pairs: {lip.sup_ratio:.6g}")

    bundle = make_bundle(cfg.epsilon, cfg.gamma, cfg.eta, cfg.delta, cfg.alpha)
    track = _tracked_ids(cfg, len(ens))
    traj = integrate(ens, cfg.t_final, _policy(cfg), cfg.field_method,
                     cfg.soft, cfg.snapshot_stride, c_tilde=cfg.c_tilde, track=track,
                     want_potential=True, threads=cfg.threads)
    snaps = diagnose_trajectory(traj, cfg.soft, ens.f_inf, cfg.resolved_h_rho, True,
                                cfg.energy_spacing)
    cal = calibrate_c2([(s.e_sup, s.v_run, s.q) for s in snaps])
    p = float(traj.v_run[-1])
    q = max(s.q for s in snaps)
    sched = schedule(p, q, cal.c2, bundle.gamma, bundle.delta, bundle.beta, bundle.eta,
                     t_final=cfg.t_final, c_tilde=cfg.c_tilde)
    pairs = np.array([(a, b) for i, a in enumerate(track) for b in track[i + 1:]],
                     dtype=np.int64).reshape(-1, 2)
    reps = [separation_check(traj, pairs, bundle.gamma, w, p=p)
            for w in _windows(cfg.t_final, sched.delta_1, cfg.separation_windows)]
    for r in reps:
        print(f"window [{r.window[0]:.4g}, {r.window[1]:.4g}]: {r.n_pairs} pairs, "
              f"{len(r.violations)} violations")
    body = {
        "config_hash": cfg.hash(), "cutoff": n,
        "lipschitz": {"sup_ratio": lip.sup_ratio, "far_pairs": lip.far_pairs,
                      "far_bound": lip.far_bound},
        "c2": cal.c2, "schedule": sched.to_dict(),
        "separation": [{"window": list(r.window), "pairs": r.n_pairs,
                        "violations": len(r.violations)} for r in reps],
    }
    write_report(Path(cfg.out_dir) / "probe.json", body)
    return EXIT_OK if all(r.ok for r in reps) else EXIT_ACCEPT


def cmd_report(args) -> int:
    path = Path(args.run)
    if path.is_dir():
        path = path / "report.json"
    try:
        body = read_report(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc
    acc = body.get("acceptance", {})
    for line in _acceptance_lines(acc):
        print(line)
    for n, c in sorted(body.get("cutoffs", {}).items(), key=lambda kv: int(kv[0])):
        print(f"N={n:>3s}  P={c['P']:.5g}  sup work={c['sup_work']:.5g}  "
              f"Q={c['Q_max']:.5g}  sigma={_num(c['sigma_sup']):.5g}")
    return EXIT_ACCEPT if any(v is False for v in acc.values()) else EXIT_OK


# ----------------------------------------------------------------- parser
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file or bundled config name (e.g. desk_eps08)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--method", choices=("direct", "tree"))
    p.add_argument("--theta", type=float)
    p.add_argument("--softening", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vlasov-cutoff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="admissible parameter intervals")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("sums", help="lattice-sum audit")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--radii", type=float, nargs="+", default=[4, 8, 16, 32, 64])
    p.add_argument("--mu-samples", type=int, default=10)
    p.add_argument("--mu-range", type=float, default=20.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sums)

    for name, func, hlp in (("simulate", cmd_simulate, "desk pipeline with report"),
                            ("converge", cmd_converge, "cutoff-hierarchy contraction table"),
                            ("probe", cmd_probe, "quasi-Lipschitz and separation probes")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        if name == "simulate":
            p.add_argument("--cache", help="directory for cached results")
        if name == "probe":
            p.add_argument("--pairs", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="print pass/fail lines of a finished run")
    p.add_argument("run", help="run directory or report file")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalAbort, SingularityError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
