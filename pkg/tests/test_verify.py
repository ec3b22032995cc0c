import json
import math

import numpy as np
import pytest

from cbflab.dynamics import CBFParams, ControlModel, ControlSignal, integrate
from cbflab.spectral import TorusGrid, random_field
from cbflab.verify import (
    IDENTITY_CHECKS,
    INEQUALITY_CHECKS,
    EstimateReport,
    balance_convergence,
    check_continuous_dependence,
    check_energy_estimates,
    check_identity_suite,
    check_inequality_suite,
    dependence_suite,
    failures,
    lipschitz_in_time,
    sample_seeds,
    self_convergence_order,
    summary_table,
    v_continuity,
    write_jsonl,
)


@pytest.fixture
def params4():
    return CBFParams(mu=1.0, beta=1.0, r=4.0)


def test_report_json_is_stable():
    rep = EstimateReport("x", "equality", 1, 2.0, math.inf, 1e-8, False, metadata={"b": 1, "a": np.float64(2)})
    data = json.loads(rep.to_json())
    assert list(data) == sorted(data)
    assert data["residual"] == "inf"
    assert data["metadata"] == {"a": 2.0, "b": 1}
    assert isinstance(rep.lhs, float)


def test_jsonl_and_summary(tmp_path):
    reps = [EstimateReport("a", "equality", 0, 0, 0, 1, True), EstimateReport("b", "one-sided", 2, 1, 1, 0, False)]
    path = tmp_path / "r.jsonl"
    write_jsonl(reps, path)
    assert [json.loads(x)["name"] for x in path.read_text().splitlines()] == ["a", "b"]
    assert failures(reps) == ["b"]
    table = summary_table(reps)
    assert "FAIL" in table and "a" in table


def test_seeds_deterministic():
    assert sample_seeds(3, 5) == sample_seeds(3, 5)
    assert sample_seeds(3, 5) != sample_seeds(4, 5)


class TestIdentitySuite:
    def test_all_pass(self, g16, params4):
        reps = check_identity_suite(g16, params4, n_samples=20, seed=1)
        assert [r.name for r in reps] == list(IDENTITY_CHECKS)
        assert failures(reps) == []
        assert all(r.residual <= r.tolerance for r in reps)

    def test_deterministic(self, g16, params4):
        a = [r.to_json() for r in check_identity_suite(g16, params4, n_samples=5, seed=2)]
        b = [r.to_json() for r in check_identity_suite(g16, params4, n_samples=5, seed=2)]
        assert a == b

    def test_torus_skipped_below_three(self, g16):
        with pytest.warns(Warning):
            p = CBFParams(mu=1.0, beta=1.0, r=2.5)
        rep = {r.name: r for r in check_identity_suite(g16, p, n_samples=3)}["torus_identity"]
        assert rep.passed and rep.kind == "skipped"

    def test_three_dimensional(self, g3d):
        p = CBFParams(mu=1.0, beta=1.0, r=3.0, dim=3)
        assert failures(check_identity_suite(g3d, p, n_samples=3)) == []


class TestInequalitySuite:
    def test_all_pass(self, g16, params4):
        reps = check_inequality_suite(g16, params4, n_samples=10, seed=0, empirical_samples=10)
        assert [r.name for r in reps] == list(INEQUALITY_CHECKS)
        assert failures(reps) == []
        emp = [r for r in reps if not r.hard]
        assert {r.name for r in emp} == {"agmon_constant", "sobolev_damping_constant"}

    def test_estimates_skipped_at_r3(self, g16):
        p = CBFParams(mu=1.0, beta=1.0, r=3.0)
        reps = {r.name: r for r in check_inequality_suite(g16, p, n_samples=3, empirical_samples=3)}
        assert reps["bilinear_estimate"].kind == "skipped"
        assert reps["damping_monotonicity"].kind != "skipped"


class TestEnergy:
    def test_unforced_trajectory(self, g16):
        p = CBFParams(mu=0.05, beta=10.0, r=3.0)
        sig = ControlSignal.uniform(0.0, 0.1, [0])
        traj = integrate(random_field(g16, 7, norm=0.5), sig, None, None, 1e-3, p, ControlModel.zero(g16),
                         diagnostics="strong")
        reps = {r.name: r for r in check_energy_estimates(traj, p, ControlModel.zero(g16))}
        assert reps["weak_balance"].passed and reps["strong_balance"].passed
        assert reps["da_balance"].kind == "skipped"
        assert reps["strong_balance_torus_substitution"].passed
        assert reps["energy_nonincreasing"].passed
        assert reps["integrals_monotone_in_T"].passed

    def test_forced_skips_monotonicity(self, g16):
        p = CBFParams(mu=0.05, beta=10.0, r=3.0)
        m = ControlModel.random(g16, 1, seed=2)
        traj = integrate(random_field(g16, 7), ControlSignal.uniform(0.0, 0.02, [0]), None, None, 1e-3, p, m)
        reps = {r.name: r for r in check_energy_estimates(traj, p, m)}
        assert reps["energy_nonincreasing"].kind == "skipped"

    def test_requires_diagnostics(self, g16, params4):
        traj = integrate(random_field(g16, 7), ControlSignal.uniform(0.0, 0.01, [0]), None, None, 1e-3, params4,
                         ControlModel.zero(g16), diagnostics="none")
        with pytest.raises(ValueError):
            check_energy_estimates(traj, params4, ControlModel.zero(g16))

    def test_euler_balance_is_first_order(self, g16):
        p = CBFParams(mu=0.05, beta=10.0, r=3.0)
        reps, _ = balance_convergence(random_field(g16, 7, norm=0.5), ControlSignal.uniform(0.0, 0.1, [0]), p,
                                      ControlModel.random(g16, 1, seed=1), [2e-3, 1e-3], scheme="imex-euler",
                                      diagnostics="basic")
        weak = reps[0]
        assert weak.name == "weak_balance_order" and weak.passed
        assert 0.9 <= weak.lhs <= 1.3
        assert reps[1].kind == "skipped"

    def test_self_convergence(self, g16, params4):
        order = self_convergence_order(random_field(g16, 1), ControlSignal.uniform(0.0, 0.04, [0]), params4,
                                       ControlModel.random(g16, 1, seed=1), 2e-3)
        assert abs(order - 2.0) < 0.15


class TestDependence:
    def test_envelope(self, g16, params4):
        z = random_field(g16, 1)
        rep = check_continuous_dependence(z, z + random_field(g16, 2, norm=1e-4),
                                          ControlSignal.uniform(0.0, 0.05, [0]), params4,
                                          ControlModel.random(g16, 1, seed=3))
        assert rep.name == "continuous_dependence_envelope" and rep.passed

    def test_critical_monotone(self, g16):
        p = CBFParams(mu=0.05, beta=10.0, r=3.0)
        z = random_field(g16, 1)
        rep = check_continuous_dependence(z, z + random_field(g16, 2, norm=1e-4),
                                          ControlSignal.uniform(0.0, 0.05, [0]), p, ControlModel.zero(g16))
        assert rep.name == "continuous_dependence_monotone" and rep.passed

    def test_outside_regime(self, g16):
        with pytest.warns(Warning):
            p = CBFParams(mu=0.05, beta=1.0, r=3.0)
        z = random_field(g16, 1)
        with pytest.raises(ValueError, match="r > 3"):
            check_continuous_dependence(z, z, ControlSignal.uniform(0.0, 0.01, [0]), p, ControlModel.zero(g16))

    def test_suite_worst_case(self, g16, params4):
        rep = dependence_suite(g16, params4, ControlModel.zero(g16), ControlSignal.uniform(0.0, 0.02, [0]),
                               n_pairs=3)
        assert rep.passed
        assert rep.metadata["n_pairs"] == 3


class TestTimeRegularity:
    def test_lipschitz(self, g16, params4):
        rep = lipschitz_in_time(random_field(g16, 4), params4, ControlModel.random(g16, 1, seed=2))
        assert rep.passed

    def test_v_continuity(self, g16, params4):
        rep = v_continuity(random_field(g16, 4), params4, ControlModel.random(g16, 1, seed=2))
        assert rep.passed
        vals = rep.metadata["values"]
        assert vals[0] > vals[1] > vals[2]
