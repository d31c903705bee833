"""Parameter calculus and lattice-sum audits.

Everything here is exponent arithmetic or exact lattice enumeration: the
admissible intervals for ``gamma``, ``eta``, ``delta`` and ``alpha`` given
``epsilon``, the averaging-window ladder, the ladder depth, the appendix
exponent conditions, lattice sums with rigorous integral tail bounds and the
calibration of the field-bound constant from measured runs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .phase_space import check_epsilon

__all__ = [
    "ParameterError",
    "Interval",
    "Regime",
    "ParamRanges",
    "param_ranges",
    "direct_regime_threshold",
    "ParamBundle",
    "make_bundle",
    "Schedule",
    "schedule",
    "ell_bar",
    "g_factor",
    "appendix_exponents",
    "appendix_ladder_check",
    "lattice_shell_counts",
    "lemma_sum",
    "lattice_tail_bound",
    "SplitSum",
    "split_sum",
    "AuditReport",
    "lattice_sum_audit",
    "ProfileAudit",
    "profile_lattice_audit",
    "velocity_tail_radius",
    "convexity_bound_check",
    "C2Calibration",
    "calibrate_c2",
]

_SQ3_2 = math.sqrt(3.0) / 2.0


class ParameterError(ValueError):
    """A parameter lies outside its admissible interval."""


@dataclass(frozen=True)
class Interval:
    """Open interval ``(lo, hi)``."""

    lo: float
    hi: float

    @property
    def nonempty(self) -> bool:
        return self.lo < self.hi

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x) -> bool:
        return self.lo < x < self.hi

    def __str__(self) -> str:
        return f"({self.lo:.5f}, {self.hi:.5f})"


class Regime:
    DIRECT = "Direct"
    ITERATED = "Iterated"


def direct_regime_threshold() -> float:
    """``beta`` at which the direct ``gamma`` window closes: ``4 beta / 3 = (2 - beta) / 4``."""
    return 6.0 / 19.0


def gamma_direct(beta: float) -> Interval:
    return Interval(4.0 * beta / 3.0, (2.0 - beta) / 4.0)


def gamma_iterated(beta: float, delta: float) -> Interval:
    return Interval(max(0.0, beta - 2.0 / 3.0 + delta), (2.0 - beta) / 4.0)


def delta_interval(beta: float) -> Interval:
    return Interval(0.0, 7.0 / 6.0 - 1.25 * beta)


def eta_interval(beta: float, gamma: float, delta: float | None = None) -> Interval:
    """``((3 + beta) / 3, 1 + gamma - beta)`` directly, or the iterated upper end with ``delta``."""
    lo = (3.0 + beta) / 3.0
    if delta is None:
        return Interval(lo, 1.0 + gamma - beta)
    return Interval(lo, 5.0 / 3.0 + gamma - 2.0 * beta / 3.0 - delta)


def alpha_interval(epsilon: float) -> Interval:
    return Interval((5.0 - epsilon) / 9.0, 2.0 / 3.0)


@dataclass(frozen=True)
class ParamRanges:
    """Admissible intervals for one ``epsilon``.

    In the direct regime ``gamma`` is a fixed interval and ``delta`` is
    ``None``; in the iterated regime ``gamma`` depends on the chosen
    ``delta`` through :meth:`gamma_for` and the ``gamma`` attribute holds its
    ``delta -> 0`` limit.
    """

    epsilon: float
    beta: float
    regime: str
    gamma: Interval
    delta: Interval | None
    alpha: Interval

    def gamma_for(self, delta: float | None = None) -> Interval:
        if self.regime == Regime.DIRECT:
            return self.gamma
        if delta is None:
            raise ParameterError("the iterated regime needs delta to fix the gamma window")
        return gamma_iterated(self.beta, delta)

    def eta_for(self, gamma: float, delta: float | None = None) -> Interval:
        if self.regime == Regime.DIRECT:
            return eta_interval(self.beta, gamma)
        if delta is None:
            raise ParameterError("the iterated regime needs delta to fix the eta window")
        return eta_interval(self.beta, gamma, delta)

    @property
    def certificates(self) -> dict:
        """Non-emptiness of each window (``eta`` evaluated at the ``gamma`` midpoint)."""
        out = {"gamma": self.gamma.nonempty, "alpha": self.alpha.nonempty}
        if self.regime == Regime.DIRECT:
            out["eta"] = self.eta_for(self.gamma.midpoint).nonempty
        else:
            d = self.delta.midpoint
            out["delta"] = self.delta.nonempty
            out["eta"] = self.eta_for(self.gamma_for(d).midpoint, d).nonempty
        return out


def param_ranges(epsilon: float) -> ParamRanges:
    """Intervals for ``(gamma, eta, delta, alpha)`` in the regime selected by ``beta = 1 - epsilon``.

    Raises
    ------
    ValueError
        Unless ``1/15 < epsilon < 1``.
    """
    epsilon = check_epsilon(epsilon)
    beta = 1.0 - epsilon
    g = gamma_direct(beta)
    if g.nonempty:
        return ParamRanges(epsilon, beta, Regime.DIRECT, g, None, alpha_interval(epsilon))
    return ParamRanges(epsilon, beta, Regime.ITERATED, gamma_iterated(beta, 0.0),
                       delta_interval(beta), alpha_interval(epsilon))


# ------------------------------------------------------------- bundles
@dataclass(frozen=True)
class ParamBundle:
    epsilon: float
    beta: float
    gamma: float
    eta: float
    delta: float
    alpha: float
    regime: str
    p_ref: float | None = None
    q_ref: float | None = None
    c2: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _check(name: str, value: float, iv: Interval):
    if value not in iv:
        raise ParameterError(f"{name}={value} outside {iv}")


def make_bundle(epsilon: float, gamma="auto", eta="auto", delta="auto", alpha="auto",
                p_ref: float | None = None, q_ref: float | None = None,
                c2: float | None = None) -> ParamBundle:
    """Resolve ``"auto"`` entries to interval midpoints and validate the rest.

    In the direct regime ``delta`` defaults to 0 (a one-rung ladder); an
    explicit ``delta`` must lie in ``[0, 7/6 - 5 beta / 4)``.
    """
    r = param_ranges(epsilon)
    beta = r.beta
    if r.regime == Regime.DIRECT:
        d = 0.0 if delta in ("auto", None) else float(delta)
        div = delta_interval(beta)
        if d != 0.0:
            _check("delta", d, div)
        g_iv = r.gamma
    else:
        d = r.delta.midpoint if delta in ("auto", None) else float(delta)
        _check("delta", d, r.delta)
        g_iv = r.gamma_for(d)
    g = g_iv.midpoint if gamma in ("auto", None) else float(gamma)
    _check("gamma", g, g_iv)
    e_iv = r.eta_for(g, d if r.regime == Regime.ITERATED else None)
    e = e_iv.midpoint if eta in ("auto", None) else float(eta)
    _check("eta", e, e_iv)
    a = r.alpha.midpoint if alpha in ("auto", None) else float(alpha)
    _check("alpha", a, r.alpha)
    return ParamBundle(r.epsilon, beta, g, e, d, a, r.regime, p_ref, q_ref, c2)


# ------------------------------------------------------------- schedule
def _frac(x) -> Fraction:
    """Exact rational from the shortest decimal representation of ``x``."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def ell_bar(beta, gamma, eta, delta, max_levels: int = 10_000) -> int:
    """Smallest integer ``l >= 1`` with ``beta - 1/3 + eta - gamma - (l - 1) delta < 2/3``.

    Inputs are converted to exact rationals through their decimal
    representation so that boundary cases are decided exactly.
    """
    b, g, e, d = (_frac(v) for v in (beta, gamma, eta, delta))
    lhs = b - Fraction(1, 3) + e - g
    if lhs < Fraction(2, 3):
        return 1
    if d <= 0:
        raise ParameterError("no finite ell_bar: delta must be positive")
    # need (l - 1) d > lhs - 2/3
    k = (lhs - Fraction(2, 3)) / d
    level = math.floor(k) + 2
    if level > max_levels:
        raise ParameterError("no finite ell_bar within the level cap")
    return int(level)


def g_factor(p: float, delta: float) -> int:
    """Integer part of ``P^delta``."""
    return int(math.floor(p ** delta))


@dataclass(frozen=True)
class Schedule:
    """Averaging windows ``Delta_l = G^(l-1) Delta`` for ``l = 1..ell_bar``."""

    delta_1: float
    g_factor: int
    deltas: tuple
    ell_bar: int
    warnings: tuple = ()

    def to_dict(self) -> dict:
        return {"delta_1": self.delta_1, "g_factor": self.g_factor,
                "deltas": list(self.deltas), "ell_bar": self.ell_bar,
                "warnings": list(self.warnings)}


def base_window(p: float, q: float, c2: float, gamma: float) -> float:
    """``Delta = 1 / (4 C2 P^(4/3 - gamma) Q^(1/3))``."""
    return 1.0 / (4.0 * c2 * p ** (4.0 / 3.0 - gamma) * q ** (1.0 / 3.0))


def schedule(p: float, q: float, c2: float, gamma: float, delta: float, beta: float,
             eta: float, t_final: float | None = None, c_tilde: float = 2.0) -> Schedule:
    """Window ladder for measured ``P`` and ``Q`` and a calibrated ``C2``.

    Raises
    ------
    ParameterError
        ``c_tilde <= 1``, ``P < c_tilde``, ``Q <= 0``, ``C2 <= 0`` or no finite
        ladder depth.
    """
    if not c_tilde > 1.0:
        raise ParameterError(f"speed floor c_tilde={c_tilde} must exceed 1")
    if not p >= c_tilde:
        raise ParameterError(f"P={p} is below the speed floor c_tilde={c_tilde}")
    if not q > 0:
        raise ParameterError("Q must be positive")
    if not c2 > 0:
        raise ParameterError("C2 must be positive")
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    lb = ell_bar(beta, gamma, eta, delta)
    d1 = base_window(p, q, c2, gamma)
    g = g_factor(p, delta)
    ds = [d1]
    for _ in range(1, lb):
        ds.append(ds[-1] * g)
    notes = []
    if t_final is not None:
        if ds[-1] >= t_final:
            notes.append(f"top window {ds[-1]:.6g} >= T={t_final:.6g}")
        if d1 > t_final / 10.0:
            notes.append(f"base window {d1:.6g} > T/10; the speed floor may be too small")
    for n in notes:
        warnings.warn(n, RuntimeWarning, stacklevel=2)
    return Schedule(d1, g, tuple(ds), lb, tuple(notes))


# ------------------------------------------------------------- appendix ladder
def appendix_exponents(beta: float, gamma: float, eta: float, delta: float, level: int):
    """Exponents of ``P`` bounding ``a_1 Delta_l``, ``a_2 Delta_l / log P`` and ``a_3 Delta_l``."""
    e1 = 4.0 * gamma / 3.0 - 4.0 / 3.0 + gamma + (level - 1) * delta
    e2 = 1.0 / 3.0 - eta + gamma + (level - 1) * delta
    e3 = 2.0 * beta / 3.0 - 5.0 / 3.0 + eta + delta
    return e1, e2, e3


def appendix_ladder_check(bundle: ParamBundle) -> list:
    """Violations ``(level, term, exponent)`` of ``exponent < gamma`` for levels ``1..ell_bar``."""
    b, g, e, d = bundle.beta, bundle.gamma, bundle.eta, bundle.delta
    out = []
    for level in range(1, ell_bar(b, g, e, d) + 1):
        for term, x in enumerate(appendix_exponents(b, g, e, d, level), start=1):
            if not x < g:
                out.append((level, term, x))
    return out


# ------------------------------------------------------------- lattice sums
def lattice_shell_counts(nmax: int) -> np.ndarray:
    """``r3[n]``: number of ``i`` in Z^3 with ``|i|^2 = n`` for ``n = 0..nmax`` (exact integers)."""
    k = int(math.isqrt(nmax))
    ax = np.arange(-k, k + 1, dtype=np.int64)
    sq = ax * ax
    r1 = np.bincount(sq, minlength=nmax + 1)[: nmax + 1]
    s2 = (sq[:, None] + sq[None, :]).ravel()
    r2 = np.bincount(s2[s2 <= nmax], minlength=nmax + 1)
    r3 = np.zeros(nmax + 1, dtype=np.int64)
    for z2 in np.nonzero(r1)[0]:
        r3[z2:] += r1[z2] * r2[: nmax + 1 - z2]
    return r3


def _norm2_bound(x: float) -> int:
    """Largest integer ``n`` with ``n <= x^2``, exactly."""
    return math.floor(_frac(x) ** 2)


def lemma_sum(epsilon: float, r: float, r3: np.ndarray | None = None) -> float:
    """``S(R) = sum_{1 < |i| <= 5R} |i|^-(2+eps)`` by integer shells."""
    nmax = _norm2_bound(5.0 * r)
    if nmax < 2:
        return 0.0
    if r3 is None or r3.shape[0] <= nmax:
        r3 = lattice_shell_counts(nmax)
    n = np.arange(2, nmax + 1)
    c = r3[2: nmax + 1]
    keep = c > 0
    return float(np.sum(c[keep] * n[keep].astype(float) ** (-(2.0 + epsilon) / 2.0)))


def lattice_tail_bound(p: float, k: float) -> float:
    """Upper bound for ``sum_{|i| > K} |i|^-p`` (``p > 3``, ``K > sqrt 3``).

    The unit cube around each such ``i`` lies in ``|x| > K - sqrt(3)/2`` and
    satisfies ``|i| >= |x| - sqrt(3)/2``, so the sum is at most
    ``4 pi int_{K - sqrt3/2}^inf r^2 (r - sqrt3/2)^-p dr``, evaluated in
    closed form.
    """
    if not p > 3:
        raise ValueError("tail bound needs p > 3")
    c = _SQ3_2
    s0 = k - 2.0 * c
    if not s0 > 0:
        raise ValueError("tail bound needs K > sqrt(3)")
    return 4.0 * math.pi * (s0 ** (3 - p) / (p - 3) + 2 * c * s0 ** (2 - p) / (p - 2)
                            + c * c * s0 ** (1 - p) / (p - 1))


def _points_within(k: float) -> np.ndarray:
    m = int(math.floor(k))
    ax = np.arange(-m, m + 1, dtype=np.int64)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    n2 = np.einsum("ij,ij->i", g, g)
    return g[n2 <= _norm2_bound(k)]


@dataclass(frozen=True)
class SplitSum:
    """Coupled sum ``sum 1 / (|mu - i|^2 |i|^(2+eps))`` over ``|i| >= 1, |mu - i| >= 1``.

    ``value`` and ``value + tail`` bound the sum from below and above;
    ``s1 = sum_{|i| >= 1} |i|^-(4+eps)`` and ``s2 = sum_{|mu - i| >= 1}
    |mu - i|^-(4+eps)`` are likewise enumerated plus tail-bounded, and ``bound = s1 + s2`` dominates the coupled sum term by
    term on the two halves ``|mu - i| >= |i|`` and ``|mu - i| < |i|``.
    """

    mu: tuple
    value: float
    tail: float
    part_far: float
    part_near: float
    s1: float
    s2: float
    radius: float

    @property
    def upper(self) -> float:
        return self.value + self.tail

    @property
    def bound(self) -> float:
        return self.s1 + self.s2

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.upper) and self.upper <= self.bound)


def split_sum(epsilon: float, mu, margin: float = 24.0) -> SplitSum:
    """Enumerate the coupled lattice sum over ``|i| <= |mu| + margin`` with a tail bound."""
    mu = np.asarray(mu, dtype=float).reshape(3)
    p = 4.0 + epsilon
    nm = float(np.linalg.norm(mu))
    k = nm + margin
    pts = _points_within(k)
    ip = pts.astype(float)
    ni = np.sqrt(np.einsum("ij,ij->i", ip, ip))
    dm = np.sqrt(np.einsum("ij,ij->i", ip - mu, ip - mu))
    ok = (ni >= 1.0) & (dm >= 1.0)
    terms = np.zeros_like(ni)
    terms[ok] = 1.0 / (dm[ok] ** 2 * ni[ok] ** (2.0 + epsilon))
    far = ok & (dm >= ni)
    near = ok & (dm < ni)
    # beyond |i| > K: |mu - i| >= |i| (1 - |mu| / K)
    shrink = 1.0 - nm / k
    t_base = lattice_tail_bound(p, k)
    tail = t_base / shrink ** 2
    s1 = float(np.sum(ni[ni >= 1.0] ** -p)) + t_base
    s2 = float(np.sum(dm[dm >= 1.0] ** -p)) + t_base / shrink ** p
    return SplitSum(tuple(float(x) for x in mu), float(terms.sum()), float(tail),
                    float(terms[far].sum()), float(terms[near].sum()), s1, s2, float(k))


@dataclass
class AuditReport:
    """Lemma sums ``S(R)``, their ratios to ``R^(1-eps)`` and split-sum checks."""

    epsilon: float
    radii: np.ndarray
    sums: np.ndarray
    ratios: np.ndarray
    split: list = field(default_factory=list)

    @property
    def band(self) -> float:
        r = self.ratios[self.ratios > 0]
        return float(r.max() / r.min()) if r.size else 1.0

    @property
    def split_ok(self) -> bool:
        return all(s.ok for s in self.split)

    def rows(self) -> list:
        return [(float(r), float(s), float(q)) for r, s, q in zip(self.radii, self.sums, self.ratios)]


def lattice_sum_audit(epsilon: float, radii: Sequence[float] = (4, 8, 16, 32, 64),
                      mu_samples: Sequence = ()) -> AuditReport:
    """Audit ``S(R) <= C R^(1-eps)`` on ``radii`` and the split bound at ``mu_samples``."""
    epsilon = check_epsilon(epsilon)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    nmax = max(_norm2_bound(5.0 * float(r)) for r in radii)
    r3 = lattice_shell_counts(max(nmax, 2))
    sums = np.array([lemma_sum(epsilon, float(r), r3) for r in radii])
    ratios = sums / radii ** (1.0 - epsilon)
    split = [split_sum(epsilon, m) for m in mu_samples]
    return AuditReport(epsilon, radii, sums, ratios, split)


# ------------------------------------------------------------- profile audit
def _ball_mass(g: Callable, d: float, breaks: Sequence[float] = ()) -> float:
    """``int_{|x - i| <= 1} g(|x|) dx`` for ``|i| = d >= 1`` by radial quadrature.

    The sphere of radius ``r`` meets the unit ball around ``i`` in a cap of
    area ``pi r (1 - (r - d)^2) / d``.
    """
    lo, hi = max(d - 1.0, 0.0), d + 1.0
    pts = sorted(b for b in breaks if lo < b < hi)

    def integrand(r):
        return float(g(np.array([r]))[0]) * math.pi * r * (1.0 - (r - d) ** 2) / d

    val, _ = integrate.quad(integrand, lo, hi, points=pts or None, limit=200)
    return val


@dataclass(frozen=True)
class ProfileAudit:
    """Unit-ball spatial masses of a radial profile against ``|i|^-(2+eps)``.

    ``ratios[k] = mass(d_k) d_k^(2+eps)`` over the distinct lattice norms
    ``d_k`` in ``[1, r_max]``; ``c1`` is their maximum. ``ok`` requires the
    maximum over the outer half of the range not to exceed the overall
    maximum over the inner half (no growth) and, when given, ``c1 <= c1_max``.
    """

    norms: np.ndarray
    masses: np.ndarray
    ratios: np.ndarray
    c1: float
    ok: bool


def profile_lattice_audit(profile, r_max: float = 32.0, c1_max: float | None = None) -> ProfileAudit:
    """Lattice-decay audit of a radial profile ``g`` (spatial mass only)."""
    eps = profile.epsilon
    nmax = _norm2_bound(r_max)
    r3 = lattice_shell_counts(nmax)
    ns = np.array([n for n in range(1, nmax + 1) if r3[n] > 0])
    d = np.sqrt(ns.astype(float))
    breaks = [1.0]
    for c, w in zip(getattr(profile, "centers", ()), getattr(profile, "radii", ())):
        breaks += [c - w, c + w]
    masses = np.array([_ball_mass(profile, float(x), breaks) for x in d])
    ratios = masses * d ** (2.0 + eps)
    c1 = float(ratios.max())
    inner = ratios[d <= 0.5 * r_max]
    outer = ratios[d > 0.5 * r_max]
    ok = bool(outer.size == 0 or inner.size == 0 or outer.max() <= inner.max() * (1 + 1e-9))
    if c1_max is not None:
        ok = ok and c1 <= c1_max
    return ProfileAudit(d, masses, ratios, c1, ok)


# ------------------------------------------------------------- misc bounds
def velocity_tail_radius(epsilon: float, lambda_bar: float, site_norm: float) -> float:
    """``a_i = sqrt(2 (2 + eps) log|i| / lambda_bar)``."""
    if not site_norm > 1:
        raise ValueError("site norm must exceed 1")
    if not lambda_bar > 0:
        raise ValueError("lambda_bar must be positive")
    return math.sqrt(2.0 * (2.0 + epsilon) * math.log(site_norm) / lambda_bar)


def convexity_bound_check(samples) -> list:
    """Samples ``(r, a)`` in the open unit square violating ``r(|log r| + 1) <= r |log a| + a``."""
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    r, a = s[:, 0], s[:, 1]
    if np.any((r <= 0) | (r >= 1) | (a <= 0) | (a >= 1)):
        raise ValueError("samples must lie in the open unit square")
    lhs = r * (np.abs(np.log(r)) + 1.0)
    rhs = r * np.abs(np.log(a)) + a
    bad = lhs > rhs * (1.0 + 1e-12)
    return [(float(x), float(y)) for x, y in s[bad]]


# ------------------------------------------------------------- field constant
@dataclass(frozen=True)
class C2Calibration:
    """Measured ``C2 = max ||E||_inf / (V^(4/3) Q^(1/3))`` over a calibration suite."""

    c2: float
    ratios: tuple

    def ratio(self, e_sup: float, v: float, q: float) -> float:
        return e_sup / (v ** (4.0 / 3.0) * q ** (1.0 / 3.0))

    def check(self, e_sup: float, v: float, q: float, slack: float = 1.5) -> bool:
        """True when a later run stays below ``slack * C2``."""
        return self.ratio(e_sup, v, q) <= slack * self.c2


def calibrate_c2(samples) -> C2Calibration:
    """Freeze ``C2`` from ``(e_sup, V, Q)`` triples."""
    rat = []
    for e_sup, v, q in samples:
        if not (v > 0 and q > 0):
            raise ValueError("speed scale and energy must be positive")
        rat.append(float(e_sup) / (float(v) ** (4.0 / 3.0) * float(q) ** (1.0 / 3.0)))
    if not rat or not np.all(np.isfinite(rat)):
        raise ValueError("calibration produced no finite ratio")
    return C2Calibration(float(max(rat)), tuple(rat))
