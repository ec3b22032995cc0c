"""Acceptance criteria AC1-AC11.

Each test prints one ``[PASS]`` or ``[FAIL]`` line with the measured
quantity, its threshold and the wall time, then asserts the same condition.
Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
when output capture is on.
"""
import json
import math
import time

import numpy as np
import pytest

from cbflab.cli import main as cli_main
from cbflab.control import (
    CostSpec,
    continuity_profile,
    dpp_residual,
    dpp_residual_fresh,
    growth_profile,
    value_bruteforce,
)
from cbflab.dynamics import CBFParams, ControlModel, ControlSignal, integrate
from cbflab.operators import convective_B, damping_C, gateaux_C
from cbflab.spectral import TorusGrid, h_norm, random_field
from cbflab.testing import convective_B_oracle, damping_C_oracle
from cbflab.verify import (
    balance_convergence,
    check_energy_estimates,
    check_identity_suite,
    check_inequality_suite,
    dependence_suite,
    sample_seeds,
    write_jsonl,
)


@pytest.fixture
def emit(capsys):
    def _emit(tag, ok, detail, elapsed=None, bound=None):
        timing = ""
        if elapsed is not None:
            timing = f"  [{elapsed:.1f}s" + (f" <= {bound:g}s]" if bound is not None else "]")
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}{timing}")
    return _emit


def test_ac1_identity_suite(emit):
    g = TorusGrid(2, 32)
    t0 = time.perf_counter()
    reps = {r.name: r for r in check_identity_suite(g, CBFParams(mu=0.05, beta=10.0, r=3.0), n_samples=200, seed=7)}
    elapsed = time.perf_counter() - t0
    names = ("skew_symmetry", "c_duality", "torus_identity", "projection_idempotence", "projection_self_adjoint")
    worst = max(reps[n].residual for n in names)
    ok = all(reps[n].passed and reps[n].kind == "equality" for n in names) and worst <= 1e-8 and elapsed <= 60
    emit("AC1 identity suite", ok, f"max relative residual {worst:.2e} <= 1e-8 over {len(names)} checks",
         elapsed, 60)
    assert ok


def test_ac2_oracle_equivalence(emit):
    g = TorusGrid(2, 8)
    t0 = time.perf_counter()
    worst = 0.0
    for s1, s2 in zip(sample_seeds(2, 5), sample_seeds(3, 5)):
        u, v = random_field(g, s1), random_field(g, s2)
        ref = convective_B_oracle(u, v)
        worst = max(worst, h_norm(convective_B(u, v) - ref) / h_norm(ref))
        for r in (3.0, 5.0):
            ref = damping_C_oracle(u, r)
            worst = max(worst, h_norm(damping_C(u, r) - ref) / h_norm(ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed <= 30
    emit("AC2 oracle equivalence", ok, f"max relative deviation of B, C(r=3,5) {worst:.2e} <= 1e-10", elapsed, 30)
    assert ok


@pytest.mark.parametrize("mu, beta, r, rho", [(1.0, 1.0, 4.0, 8 / 27), (0.1, 10.0, 5.0, 2.5)])
def test_ac3_inequality_suite(emit, mu, beta, r, rho):
    g = TorusGrid(2, 32)
    p = CBFParams(mu=mu, beta=beta, r=r)
    t0 = time.perf_counter()
    reps = {x.name: x for x in check_inequality_suite(g, p, n_samples=100, seed=7)}
    elapsed = time.perf_counter() - t0
    names = ("bilinear_estimate", "convective_stokes_estimate", "damping_monotonicity", "interpolation")
    worst = max(reps[n].residual for n in names)
    # rho by hand: (r-3)/(2 mu (r-1)) * (4/(beta mu (r-1)))^(2/(r-3))
    ok = (all(reps[n].kind == "one-sided" and reps[n].passed for n in names) and worst <= 1e-10
          and math.isclose(p.rho, rho, rel_tol=1e-14) and elapsed <= 60)
    emit(f"AC3 inequalities (mu={mu:g}, beta={beta:g}, r={r:g})", ok,
         f"rho={p.rho:.6f}, max(lhs - rhs) {worst:.2e} <= 1e-10 slack", elapsed, 60)
    assert ok


def test_ac4_energy_balances(emit):
    g = TorusGrid(2, 32)
    p = CBFParams(mu=0.05, beta=10.0, r=3.0)
    model = ControlModel.zero(g)
    z0 = random_field(g, 7, norm=0.5)
    t0 = time.perf_counter()
    orders, trajs = balance_convergence(z0, ControlSignal((0.0, 0.2), (0,)), p, model, [2e-3, 1e-3, 5e-4],
                                        diagnostics="strong")
    elapsed = time.perf_counter() - t0
    by = {r.name: r for r in orders}
    decay = all({r.name: r for r in check_energy_estimates(tr, p, model)}["energy_nonincreasing"].passed
                for tr in trajs)
    weak, strong = by["weak_balance_order"].lhs, by["strong_balance_order"].lhs
    ok = weak >= 1.9 and strong >= 1.9 and decay and elapsed <= 120
    emit("AC4 energy balances", ok, f"orders weak={weak:.3f} strong={strong:.3f} >= 1.9, "
         f"||Z||_H strictly decreasing={decay}", elapsed, 120)
    assert ok


def test_ac5_continuous_dependence(emit):
    g = TorusGrid(2, 32)
    p = CBFParams(mu=1.0, beta=1.0, r=4.0)
    model = ControlModel.random(g, 1, seed=7)
    t0 = time.perf_counter()
    worst = dependence_suite(g, p, model, ControlSignal((0.0, 0.1), (0,)), n_pairs=100, seed=7,
                             perturbation=1e-4, dt=1e-3)
    elapsed = time.perf_counter() - t0
    ok = worst.passed and math.isclose(p.rho, 8 / 27, rel_tol=1e-14) and elapsed <= 180
    emit("AC5 continuous dependence", ok, f"rho=8/27, worst envelope excess {worst.residual:.2e} <= 1e-10 "
         f"over 100 pairs", elapsed, 180)
    assert ok


def test_ac6_linear_exactness(emit):
    import warnings

    g = TorusGrid(2, 32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = CBFParams(mu=0.05, beta=0.0, r=3.0, convection=False)
    z0 = random_field(g, 7)
    dt, steps = 1e-3, 100
    traj = integrate(z0, ControlSignal((0.0, dt * steps), (0,)), None, None, dt, p, ControlModel.zero(g))
    exact = np.exp(-p.mu * 4 * np.pi**2 * g.k2 * traj.times[-1]) * z0.coeffs
    err = float(np.max(np.abs(traj.final.coeffs - exact)))
    ok = err <= 1e-10 and len(traj.times) == steps + 1
    emit("AC6 linear exactness", ok, f"max modewise error after {steps} steps {err:.2e} <= 1e-10")
    assert ok


def test_ac7_da_balance(emit):
    g = TorusGrid(3, 16)
    p = CBFParams(mu=0.05, beta=1.0, r=5.0, dim=3)
    model = ControlModel.random(g, 2, seed=3, amplitude=0.5)
    z0 = random_field(g, 7)
    t0 = time.perf_counter()
    orders, trajs = balance_convergence(z0, ControlSignal((0.0, 0.05), (0,)), p, model, [2e-3, 1e-3, 5e-4],
                                        diagnostics="da")
    elapsed = time.perf_counter() - t0
    by = {r.name: r for r in orders}
    energy = {r.name: r for r in check_energy_estimates(trajs[-1], p, model)}
    da = by["da_balance_order"].lhs
    bounded = energy["integrals_finite"].passed and energy["integrals_monotone_in_T"].passed
    ok = by["da_balance_order"].passed and bounded and elapsed <= 120
    emit("AC7 D(A) balance", ok, f"A^2 pairing residual order {da:.3f} >= 1.9, integrals finite and "
         f"monotone={bounded}", elapsed, 120)
    assert ok


@pytest.fixture(scope="module")
def dpp_tree():
    g = TorusGrid(2, 16)
    p = CBFParams(mu=0.1, beta=1.0, r=4.0)
    model = ControlModel.random(g, 2, seed=11, amplitude=5.0)
    t0 = time.perf_counter()
    _, _, tree = value_bruteforce(0.0, random_field(g, 7), 3, p, model, CostSpec(), 0.06, 1e-3)
    return tree, time.perf_counter() - t0


def test_ac8_dpp(emit, dpp_tree):
    tree, build = dpp_tree
    t0 = time.perf_counter()
    cached = [dpp_residual(tree, eta) for eta in (1, 2)]
    fresh = [dpp_residual_fresh(tree, eta) for eta in (1, 2)]
    elapsed = build + time.perf_counter() - t0
    ok = max(cached) <= 1e-12 and max(fresh) <= 1e-9 and elapsed <= 120
    emit("AC8 dynamic programming", ok, f"tree residual {max(cached):.1e} <= 1e-12, "
         f"recomputed {max(fresh):.1e} <= 1e-9 (K=2, M=3)", elapsed, 120)
    assert ok


def test_ac9_value_regularity(emit, dpp_tree):
    tree, _ = dpp_tree
    t0 = time.perf_counter()
    mags, dv = continuity_profile(tree)
    scales, ratios = growth_profile(tree, scales=(1.0, 1.25, 1.5, 1.75, 2.0))
    elapsed = time.perf_counter() - t0
    monotone = len(mags) == 20 and bool(np.all(np.diff(dv) > 0))
    spread = float(ratios.max() / ratios.min())
    ok = monotone and spread <= 10
    emit("AC9 value regularity", ok, f"Delta V monotone over 20 magnitudes={monotone}, "
         f"growth-ratio spread {spread:.2f} <= 10", elapsed)
    assert ok


def test_ac10_gateaux(emit):
    g = TorusGrid(2, 16)
    eps = (1e-3, 1e-4, 1e-5)
    t0 = time.perf_counter()
    worst = math.inf
    for r in (3.0, 4.0, 5.0):
        for s in sample_seeds(10 + int(r), 50):
            u, y = random_field(g, s), random_field(g, s + 1)
            cu, dc = damping_C(u, r), gateaux_C(u, y, r)
            errs = [h_norm((damping_C(u + y * e, r) - cu) / e - dc) for e in eps]
            worst = min(worst, *(math.log10(a / b) for a, b in zip(errs, errs[1:])))
    elapsed = time.perf_counter() - t0
    ok = worst >= 0.9
    emit("AC10 Gateaux derivative", ok, f"min finite-difference order {worst:.3f} >= 0.9 "
         "(50 samples x r=3,4,5)", elapsed)
    assert ok


def test_ac11_determinism(emit, tmp_path):
    g = TorusGrid(2, 16)
    p = CBFParams(mu=0.05, beta=10.0, r=3.0)
    blobs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        write_jsonl(check_identity_suite(g, p, n_samples=20, seed=7), d / "identities.jsonl")
        write_jsonl(check_inequality_suite(g, CBFParams(mu=1.0, beta=1.0, r=4.0), n_samples=20, seed=7),
                    d / "inequalities.jsonl")
        _, _, tree = value_bruteforce(0.0, random_field(g, 7), 2, CBFParams(mu=0.1, beta=1.0, r=4.0),
                                      ControlModel.random(g, 2, seed=11), CostSpec(), 0.04, 1e-3)
        tree.write_json(d / "tree.json")
        code = cli_main(["verify", "--seed", "7", "--suite", "identities", "--out", str(d / "cli"), "--quiet"])
        assert code == 0
        blobs.append([(d / f).read_bytes() for f in
                      ("identities.jsonl", "inequalities.jsonl", "tree.json", "cli/reports_identities.jsonl")])
    same = blobs[0] == blobs[1]
    emit("AC11 determinism", same, f"{len(blobs[0])} report files byte-identical across two seeded runs={same}")
    assert same
