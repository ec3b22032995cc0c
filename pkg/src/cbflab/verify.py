"""Checkers that turn identities, inequalities and energy balances into reports.

Every checker is a deterministic function of (seed, grid, params): random
fields come from seeds drawn with ``numpy.random.SeedSequence(seed)``.
Equalities are judged by relative residual, one-sided inequalities by the
largest violation ``lhs - rhs``, and empirical constants only by their
stability across two resolutions.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import (
    CBFParams,
    ControlModel,
    ControlSignal,
    SCHEME_ORDER,
    Trajectory,
    integrate,
)
from .operators import (
    advection,
    convective_B,
    convective_b,
    damped_enstrophy,
    damping_C,
    gronwall_rate,
    torus_identity_terms,
    weighted_l2,
)
from .spectral import (
    SpectralField,
    TorusGrid,
    grad_norm,
    grid_mean,
    h_norm,
    inner,
    ipa_apply,
    leray_project,
    lp_norm,
    product_size,
    random_field,
    stokes_apply,
    stokes_norm,
    v_norm,
)

EQ_TOL = 1e-8
QUAD_TOL = 1e-6
SPECTRAL_TOL = 1e-10
SLACK = 1e-10
STABILITY_RATIO = 10.0

IDENTITY_CHECKS = (
    "skew_symmetry",
    "skew_zero",
    "c_duality",
    "torus_identity",
    "projection_idempotence",
    "projection_self_adjoint",
    "projection_divergence",
    "parseval",
    "stokes_gradient",
)
INEQUALITY_CHECKS = (
    "bilinear_estimate",
    "convective_stokes_estimate",
    "damping_monotonicity",
    "interpolation",
    "agmon_constant",
    "sobolev_damping_constant",
)


@dataclass
class EstimateReport:
    name: str
    kind: str  # equality | one-sided | empirical | order | monotone | skipped
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    passed: bool
    hard: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("lhs", "rhs", "residual", "tolerance"):
            setattr(self, key, float(getattr(self, key)))
        self.passed = bool(self.passed)
        self.hard = bool(self.hard)

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True, allow_nan=False)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_jsonl(reports: Iterable[EstimateReport], path: str | Path):
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def summary_table(reports: Sequence[EstimateReport]) -> str:
    rows = [("check", "kind", "residual", "tolerance", "status")]
    for r in reports:
        if r.kind == "skipped":
            status = "SKIP"
        elif r.passed:
            status = "ok"
        else:
            status = "FAIL" if r.hard else "warn"
        rows.append((r.name, r.kind, f"{r.residual:.3e}", f"{r.tolerance:.1e}", status))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def failures(reports: Sequence[EstimateReport]) -> list[str]:
    return [r.name for r in reports if r.hard and not r.passed]


def sample_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def _meta(grid: TorusGrid, params: CBFParams | None, seed: int | None, n_samples: int | None, **extra) -> dict:
    out = {"dim": grid.dim, "n": grid.n, "seed": seed, "n_samples": n_samples}
    if params is not None:
        out["params"] = params.as_dict()
    out.update(extra)
    return out


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def _equality(name, pairs, tol, meta) -> EstimateReport:
    """Worst relative residual over (lhs, rhs) pairs."""
    worst = (0.0, 0.0, 0.0)
    for a, b in pairs:
        res = _rel(a, b)
        if res >= worst[2]:
            worst = (a, b, res)
    return EstimateReport(name, "equality", worst[0], worst[1], worst[2], tol, worst[2] <= tol, metadata=meta)


def _one_sided(name, pairs, slack, meta) -> EstimateReport:
    """lhs <= rhs + slack for every pair; residual is the largest lhs - rhs."""
    worst = None
    for a, b in pairs:
        if worst is None or a - b > worst[0] - worst[1]:
            worst = (a, b)
    if worst is None:
        worst = (0.0, 0.0)
    res = worst[0] - worst[1]
    return EstimateReport(name, "one-sided", worst[0], worst[1], res, slack, res <= slack, metadata=meta)


def _skipped(name, reason, meta) -> EstimateReport:
    meta = dict(meta, reason=reason)
    return EstimateReport(name, "skipped", 0.0, 0.0, 0.0, 0.0, True, hard=False, metadata=meta)


def _triples(grid, seeds, k):
    for i in range(0, len(seeds), k):
        yield [random_field(grid, s) for s in seeds[i : i + k]]


def check_identity_suite(grid: TorusGrid, params: CBFParams, n_samples: int = 200, seed: int = 0) -> list[EstimateReport]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    r = params.r
    meta = _meta(grid, params, seed, n_samples)
    seeds = sample_seeds(seed, 3 * n_samples)
    skew, skew0, dual, torus = [], [], [], []
    idem, selfadj, div, pars, stokes = [], [], [], [], []
    m = product_size(grid.n, r)
    for u, v, w in _triples(grid, seeds, 3):
        skew.append((convective_b(u, v, w), -convective_b(u, w, v)))
        adv = advection(u, v)
        # Cauchy-Schwarz scale for b(u, v, v)
        skew0.append((abs(inner(adv, v)) / max(h_norm(adv) * h_norm(v), 1e-300), 0.0))
        dual.append((inner(damping_C(u, r), u), lp_norm(u, r + 1, m=m) ** (r + 1)))
        if r >= 3:
            lhs, first, second = torus_identity_terms(u, r)
            torus.append((lhs, first + second))
    # projection checks use non-solenoidal inputs
    for s_u, s_v in zip(seeds[0::3], seeds[1::3]):
        u = random_field(grid, s_u, solenoidal=False)
        v = random_field(grid, s_v, solenoidal=False)
        pu = leray_project(u)
        idem.append((h_norm(leray_project(pu) - pu) / max(h_norm(pu), 1e-300), 0.0))
        selfadj.append(((inner(pu, v) - inner(u, leray_project(v))) / (h_norm(u) * h_norm(v)), 0.0))
        div.append((pu.divergence_residual(), 0.0))
        pars.append((grid_mean(np.sum(u.samples() ** 2, axis=0)), h_norm(u) ** 2))
        du = u.gradient_samples(grid.n)
        stokes.append((h_norm(stokes_apply(u, 0.5)) ** 2, grid_mean(np.sum(du * du, axis=(0, 1)))))

    def absolute(name, vals, tol):
        worst = max(abs(a) for a, _ in vals)
        return EstimateReport(name, "equality", worst, 0.0, worst, tol, worst <= tol, metadata=meta)

    exact_r = float(r).is_integer() and int(r) % 2 == 1
    reports = [
        _equality("skew_symmetry", skew, SPECTRAL_TOL, meta),
        absolute("skew_zero", skew0, SPECTRAL_TOL),
        _equality("c_duality", dual, EQ_TOL if float(r).is_integer() else QUAD_TOL, meta),
    ]
    if r >= 3:
        reports.append(_equality("torus_identity", torus, EQ_TOL if exact_r else QUAD_TOL, meta))
    else:
        reports.append(_skipped("torus_identity", "requires r >= 3", meta))
    reports += [
        absolute("projection_idempotence", idem, 1e-12),
        absolute("projection_self_adjoint", selfadj, SPECTRAL_TOL),
        absolute("projection_divergence", div, 1e-12),
        _equality("parseval", pars, SPECTRAL_TOL, meta),
        _equality("stokes_gradient", stokes, SPECTRAL_TOL, meta),
    ]
    return reports


def _empirical(name, ratios_n, ratios_2n, meta) -> EstimateReport:
    """Report the empirical constant; pass if it is stable across two resolutions."""
    c1, c2 = max(ratios_n), max(ratios_2n)
    spread = max(c1, c2) / max(min(c1, c2), 1e-300)
    meta = dict(meta, constant_n=c1, constant_2n=c2)
    return EstimateReport(name, "empirical", c1, c2, spread, STABILITY_RATIO, spread <= STABILITY_RATIO,
                          hard=False, metadata=meta)


def agmon_ratio(u: SpectralField) -> float:
    d = u.grid.dim
    return lp_norm(u, np.inf) / (h_norm(u) ** (1 - d / 4) * h_norm(ipa_apply(u)) ** (d / 4))


def sobolev_damping_ratio(u: SpectralField, r: float) -> float:
    num = lp_norm(u, 3 * (r + 1)) ** (r + 1)
    return num / (damped_enstrophy(u, r) + lp_norm(u, r + 1) ** (r + 1))


def check_inequality_suite(grid: TorusGrid, params: CBFParams, n_samples: int = 100, seed: int = 0,
                           empirical_samples: int | None = None) -> list[EstimateReport]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mu, beta, r = params.mu, params.beta, params.r
    meta = _meta(grid, params, seed, n_samples)
    seeds = sample_seeds(seed + 1, 2 * n_samples)
    pairs = list(zip(seeds[0::2], seeds[1::2]))
    reports = []

    if r > 3 and beta > 0:
        rho = gronwall_rate(mu, beta, r)
        est, est3 = [], []
        for su, sv in pairs:
            u, v = random_field(grid, su), random_field(grid, sv)
            w = u - v
            lhs = abs(inner(convective_B(u) - convective_B(v), w))
            rhs = (0.5 * mu * grad_norm(w) ** 2 + 0.25 * beta * weighted_l2(v, w, (r - 1) / 2)
                   + rho * h_norm(w) ** 2)
            est.append((lhs, rhs))
            lhs3 = abs(inner(convective_B(u), stokes_apply(u, 1)))
            rhs3 = (0.5 * mu * h_norm(stokes_apply(u, 1)) ** 2 + 0.25 * beta * damped_enstrophy(u, r)
                    + rho * grad_norm(u) ** 2)
            est3.append((lhs3, rhs3))
        rmeta = dict(meta, rho=rho)
        reports.append(_one_sided("bilinear_estimate", est, SLACK, rmeta))
        reports.append(_one_sided("convective_stokes_estimate", est3, SLACK, rmeta))
    else:
        reason = "requires r > 3 and beta > 0 (Gronwall rate undefined)"
        reports.append(_skipped("bilinear_estimate", reason, meta))
        reports.append(_skipped("convective_stokes_estimate", reason, meta))

    # monotonicity: both sides on the same quadrature grid
    m = product_size(grid.n, r)
    mono = []
    for su, sv in pairs:
        u, v = random_field(grid, su), random_field(grid, sv)
        lhs = inner(damping_C(u, r, m=m) - damping_C(v, r, m=m), u - v)
        mono.append((2.0 ** (1 - r) * lp_norm(u - v, r + 1, m=m) ** (r + 1), lhs))
    reports.append(_one_sided("damping_monotonicity", mono, SLACK, meta))

    interp = []
    for s in seeds[:n_samples]:
        u = random_field(grid, s, mean_zero=True)
        interp.append((stokes_norm(u, 1), stokes_norm(u, 0.5) ** 0.5 * stokes_norm(u, 1.5) ** 0.5))
    reports.append(_one_sided("interpolation", interp, SLACK, meta))

    k = n_samples if empirical_samples is None else empirical_samples
    fine = TorusGrid(grid.dim, 2 * grid.n, grid.pad_factor)
    emp_seeds = sample_seeds(seed + 2, k)
    cut = grid.n / 3.0
    base = [random_field(grid, s, cutoff=cut) for s in emp_seeds]
    refined = [random_field(fine, s, cutoff=cut) for s in emp_seeds]
    emeta = dict(meta, empirical_samples=k)
    reports.append(_empirical("agmon_constant", [agmon_ratio(u) for u in base],
                              [agmon_ratio(u) for u in refined], emeta))
    reports.append(_empirical("sobolev_damping_constant", [sobolev_damping_ratio(u, r) for u in base],
                              [sobolev_damping_ratio(u, r) for u in refined], emeta))
    return reports


def _balance_scale(traj: Trajectory, kind: str) -> float:
    d = traj.diagnostics
    key = {"weak": "grad2", "strong": "az2", "da": "a32"}[kind]
    return float(np.max(np.abs(d[key]))) * traj.params.mu + float(np.max(np.abs(d["h2"])))


def check_energy_estimates(traj: Trajectory, params: CBFParams, model: ControlModel,
                           balance_tol: float = 1e-2) -> list[EstimateReport]:
    """Balance residuals, torus-identity consistency and integral finiteness for one trajectory.

    ``balance_tol`` bounds the RMS step residual relative to the dissipation
    scale mu * max ||.||^2 + max ||Z||_H^2.  The order of the residual is
    checked separately by balance_convergence.
    """
    if not traj.step_residuals:
        raise ValueError("trajectory carries no diagnostics; integrate with diagnostics='basic' or higher")
    g = traj.states[0].grid
    meta = _meta(g, params, None, None, dt=traj.dt, scheme=traj.scheme, steps=len(traj.times) - 1)
    reports = []
    for kind in ("weak", "strong", "da"):
        name = f"{kind}_balance"
        if kind not in traj.step_residuals:
            reports.append(_skipped(name, f"diagnostics level lacks {kind} terms", meta))
            continue
        res = traj.step_residuals[kind]
        rms = float(np.sqrt(np.mean(res**2))) if res.size else 0.0
        scale = _balance_scale(traj, kind)
        rel = rms / scale if scale > 0 else rms
        reports.append(EstimateReport(name, "equality", rms, 0.0, rel, balance_tol, rel <= balance_tol,
                                      metadata=dict(meta, max_abs=float(np.max(np.abs(res))) if res.size else 0.0)))
    d = traj.diagnostics
    if "cAz_torus" in d and params.beta > 0 and params.r >= 3:
        exact_r = float(params.r).is_integer() and int(params.r) % 2 == 1
        pairs = list(zip(d["cAz"], d["cAz_torus"]))
        reports.append(_equality("strong_balance_torus_substitution", pairs, EQ_TOL if exact_r else QUAD_TOL, meta))
    else:
        reports.append(_skipped("strong_balance_torus_substitution", "needs strong diagnostics with r >= 3", meta))

    finite = all(math.isfinite(v) for v in traj.integrals.values())
    reports.append(EstimateReport("integrals_finite", "monotone", float(len(traj.integrals)), 0.0,
                                  0.0 if finite else 1.0, 0.0, finite, metadata=dict(meta, integrals=traj.integrals)))
    worst = 0.0
    for key in ("grad2", "lr1", "l3r1", "az2", "a32", "damped_enstrophy"):
        if key in d:
            cum = traj.cumulative(key)
            worst = max(worst, float(np.max(-np.diff(cum), initial=0.0)))
    reports.append(EstimateReport("integrals_monotone_in_T", "monotone", worst, 0.0, worst, 0.0, worst <= 0.0,
                                  metadata=meta))
    h = np.sqrt(d["h2"])
    if _zero_forcing(model, traj):
        inc = np.diff(h)
        nonzero = h[:-1] > 0
        strict = bool(np.all(inc[nonzero] < 0)) and bool(np.all(inc[~nonzero] <= 0))
        worst = float(np.max(inc, initial=0.0))
        reports.append(EstimateReport("energy_nonincreasing", "monotone", worst, 0.0, worst, 0.0, strict,
                                      metadata=meta))
    else:
        reports.append(_skipped("energy_nonincreasing", "forcing is nonzero", meta))
    return reports


def _zero_forcing(model: ControlModel, traj: Trajectory) -> bool:
    return all(h_norm(model.f(t, a)) == 0.0 for t, a in zip(traj.times[:-1], traj.labels))


def balance_convergence(z0: SpectralField, signal: ControlSignal, params: CBFParams, model: ControlModel,
                        dts: Sequence[float], scheme: str = "imex-rk2", diagnostics: str = "strong"
                        ) -> tuple[list[EstimateReport], list[Trajectory]]:
    """Observed order of the RMS balance residuals under successive dt refinements.

    Passes when every consecutive order is at least the scheme order minus 0.1,
    or when all residuals vanish identically.
    """
    trajs = [integrate(z0, signal, None, None, dt, params, model, scheme=scheme, diagnostics=diagnostics)
             for dt in dts]
    target = SCHEME_ORDER[scheme] - 0.1
    reports = []
    for kind in ("weak", "strong", "da"):
        if kind not in trajs[0].step_residuals:
            reports.append(_skipped(f"{kind}_balance_order", f"diagnostics level {diagnostics!r} lacks {kind} terms",
                                    _meta(z0.grid, params, None, None, dts=list(dts))))
            continue
        rms = [float(np.sqrt(np.mean(tr.step_residuals[kind] ** 2))) for tr in trajs]
        meta = _meta(z0.grid, params, None, None, dts=list(dts), rms=rms, scheme=scheme)
        if all(v == 0.0 for v in rms):
            reports.append(EstimateReport(f"{kind}_balance_order", "order", math.inf, target, 0.0, target, True,
                                          metadata=meta))
            continue
        orders = [math.log(a / b) / math.log(d0 / d1) if b > 0 else math.inf
                  for a, b, d0, d1 in zip(rms, rms[1:], dts, dts[1:])]
        worst = min(orders)
        meta["orders"] = orders
        reports.append(EstimateReport(f"{kind}_balance_order", "order", worst, target, worst, target,
                                      worst >= target, metadata=meta))
    return reports, trajs


def self_convergence_order(z0: SpectralField, signal: ControlSignal, params: CBFParams, model: ControlModel,
                           dt: float, scheme: str = "imex-rk2") -> float:
    """log2 of successive final-state differences at dt, dt/2, dt/4."""
    finals = [integrate(z0, signal, None, None, h, params, model, scheme=scheme, diagnostics="none",
                        keep_states=False).final for h in (dt, dt / 2, dt / 4)]
    e1 = h_norm(finals[0] - finals[1])
    e2 = h_norm(finals[1] - finals[2])
    return math.log2(e1 / e2)


def check_continuous_dependence(z1: SpectralField, z2: SpectralField, signal: ControlSignal, params: CBFParams,
                                model: ControlModel, t: float | None = None, T: float | None = None,
                                dt: float = 1e-3, scheme: str = "imex-rk2") -> EstimateReport:
    """Gronwall envelope (r > 3) or monotone decay (r = 3, 2 beta mu >= 1) of ||Z1 - Z2||_H^2."""
    if not (params.r > 3 or params.critical_ok) or params.beta <= 0:
        raise ValueError(f"continuous-dependence check needs r > 3 or r = 3 with 2 beta mu >= 1; "
                         f"got r={params.r}, 2 beta mu={2 * params.beta * params.mu:g}")
    tr1 = integrate(z1, signal, t, T, dt, params, model, scheme=scheme, diagnostics="none")
    tr2 = integrate(z2, signal, t, T, dt, params, model, scheme=scheme, diagnostics="none")
    diff2 = np.array([h_norm(a - b) ** 2 for a, b in zip(tr1.states, tr2.states)])
    s = tr1.times - tr1.times[0]
    meta = _meta(z1.grid, params, None, None, dt=dt, scheme=scheme, steps=len(s) - 1)
    if params.r > 3:
        rho = gronwall_rate(params.mu, params.beta, params.r)
        env = diff2[0] * np.exp(2 * rho * s)
        excess = diff2 - env
        i = int(np.argmax(excess))
        scale = diff2[0] if diff2[0] > 0 else 1.0
        res = float(excess[i] / scale)
        return EstimateReport("continuous_dependence_envelope", "one-sided", float(diff2[i]), float(env[i]), res,
                              SLACK, res <= SLACK, metadata=dict(meta, rho=rho, initial=float(diff2[0])))
    norms_ = np.sqrt(diff2)
    inc = float(np.max(np.diff(norms_), initial=0.0))
    scale = norms_[0] if norms_[0] > 0 else 1.0
    res = inc / scale
    return EstimateReport("continuous_dependence_monotone", "monotone", inc, 0.0, res, 1e-12, res <= 1e-12,
                          metadata=dict(meta, initial=float(norms_[0])))


def dependence_suite(grid: TorusGrid, params: CBFParams, model: ControlModel, signal: ControlSignal,
                     n_pairs: int = 100, seed: int = 0, perturbation: float = 1e-4, dt: float = 1e-3
                     ) -> EstimateReport:
    """Worst case of check_continuous_dependence over seeded (z, z + perturbation * unit field) pairs."""
    seeds = sample_seeds(seed + 3, 2 * n_pairs)
    worst = None
    for sb, sp in zip(seeds[0::2], seeds[1::2]):
        z = random_field(grid, sb)
        z2 = z + random_field(grid, sp, norm=perturbation)
        rep = check_continuous_dependence(z, z2, signal, params, model, dt=dt)
        if worst is None or rep.residual > worst.residual:
            worst = rep
    worst.metadata.update(n_pairs=n_pairs, seed=seed, perturbation=perturbation)
    return worst


def lipschitz_in_time(z: SpectralField, params: CBFParams, model: ControlModel, a: int = 0,
                      offsets: Sequence[float] = (0.004, 0.008, 0.016, 0.032), dt: float = 5e-4,
                      t: float = 0.0) -> EstimateReport:
    """Log-log slope of ||Z(s) - z||_H^2 against s - t; at least 0.95 for linear-in-time scaling."""
    T = t + max(offsets)
    tr = integrate(z, ControlSignal((t, T), (a,)), None, None, dt, params, model, diagnostics="none")
    vals = []
    for off in offsets:
        i = int(round(off / dt))
        vals.append(h_norm(tr.states[i] - z) ** 2)
    slope = float(np.polyfit(np.log(offsets), np.log(vals), 1)[0])
    meta = _meta(z.grid, params, None, None, offsets=list(offsets), values=vals, dt=dt)
    return EstimateReport("lipschitz_in_time", "order", slope, 0.95, slope, 0.95, slope >= 0.95, metadata=meta)


def v_continuity(z: SpectralField, params: CBFParams, model: ControlModel, a: int = 0,
                 offsets: Sequence[float] = (0.02, 0.01, 0.005), dt: float = 5e-4, t: float = 0.0
                 ) -> EstimateReport:
    """||Z(s) - z||_V^2 must decrease strictly along the shrinking offsets."""
    T = t + max(offsets)
    tr = integrate(z, ControlSignal((t, T), (a,)), None, None, dt, params, model, diagnostics="none")
    vals = [v_norm(tr.states[int(round(off / dt))] - z) ** 2 for off in offsets]
    inc = float(max(b - a_ for a_, b in zip(vals, vals[1:])))
    meta = _meta(z.grid, params, None, None, offsets=list(offsets), values=vals, dt=dt)
    return EstimateReport("v_continuity", "monotone", inc, 0.0, inc, 0.0, inc < 0, metadata=meta)
