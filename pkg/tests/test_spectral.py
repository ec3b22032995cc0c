from fractions import Fraction

import numpy as np
import pytest

from cbflab.spectral import (
    PhysicalField,
    SpectralField,
    TorusGrid,
    grad_norm,
    grid_mean,
    h_norm,
    inner,
    inverse_transform,
    ipa_apply,
    ipa_solve,
    leray_project,
    lp_norm,
    norms,
    product_size,
    quadrature_size,
    random_field,
    read_snapshot,
    stokes_apply,
    transform,
    v_norm,
    write_norms_csv,
    write_snapshot,
)

from conftest import TWO_PI, sine_x, taylor_green


class TestGrid:
    def test_rejects_odd_or_small_n(self):
        with pytest.raises(ValueError):
            TorusGrid(2, 15)
        with pytest.raises(ValueError):
            TorusGrid(2, 6)

    def test_rejects_bad_dim_and_pad(self):
        with pytest.raises(ValueError):
            TorusGrid(4, 16)
        with pytest.raises(ValueError):
            TorusGrid(2, 16, Fraction(5, 4))
        with pytest.raises(ValueError):
            TorusGrid(2, 10, Fraction(7, 4))

    def test_padded_size(self):
        assert TorusGrid(2, 32).padded_n == 48
        assert TorusGrid(3, 16, Fraction(2)).padded_n == 32

    def test_quadrature_sizes(self):
        assert quadrature_size(16, degree=4) == 32
        assert quadrature_size(16, degree=6) == 48
        assert quadrature_size(16, factor=2) == 32
        assert product_size(16, 3) == 32
        assert product_size(16, 5) == 48
        assert product_size(16, 4.5) == 32


class TestTransforms:
    def test_single_mode_has_two_coefficients(self, g16):
        u = sine_x(g16)
        nz = np.argwhere(np.abs(u.coeffs) > 1e-14)
        assert len(nz) == 2
        modes = {tuple(int(g16.k[i][tuple(idx[1:])]) for i in range(2)) for idx in nz}
        assert modes == {(1, 0), (-1, 0)}

    def test_round_trip(self, g16):
        rng = np.random.default_rng(3)
        u = random_field(g16, 3, solenoidal=False)
        back = transform(inverse_transform(u))
        assert np.max(np.abs(back.coeffs - u.coeffs)) <= 1e-12 * np.max(np.abs(u.coeffs))
        raw = rng.standard_normal((2, 16, 16))
        again = inverse_transform(transform(PhysicalField(g16, raw))).samples
        assert np.max(np.abs(again - raw)) <= 1e-12 * np.max(np.abs(raw))

    def test_parseval(self, g32):
        u = random_field(g32, 11, solenoidal=False)
        physical = grid_mean(np.sum(inverse_transform(u).samples ** 2, axis=0))
        assert physical == pytest.approx(h_norm(u) ** 2, rel=1e-12)

    def test_shape_mismatch(self, g16):
        with pytest.raises(ValueError):
            PhysicalField(g16, np.zeros((2, 8, 8)))
        with pytest.raises(ValueError):
            SpectralField(g16, np.zeros((3, 16, 16), dtype=complex))

    def test_hermitian(self, g16):
        assert random_field(g16, 1).hermitian_residual() < 1e-15


class TestProjection:
    def test_gradient_is_annihilated(self, g16):
        # grad sin(2 pi x1) = (2 pi cos 2 pi x1, 0)
        grad = SpectralField.from_function(g16, [lambda x, y: TWO_PI * np.cos(TWO_PI * x), lambda x, y: 0 * x])
        assert h_norm(leray_project(grad)) < 1e-13

    def test_taylor_green_unchanged(self, g16):
        u = taylor_green(g16)
        assert h_norm(leray_project(u) - u) < 1e-14

    def test_constant_unchanged(self, g3d):
        c = SpectralField.from_function(g3d, [lambda *x: 0 * x[0] + 1.5, lambda *x: 0 * x[0] - 2.0,
                                             lambda *x: 0 * x[0] + 0.25])
        assert h_norm(leray_project(c) - c) == 0.0

    def test_idempotent_and_self_adjoint(self, g32):
        u = random_field(g32, 1, solenoidal=False)
        v = random_field(g32, 2, solenoidal=False)
        pu = leray_project(u)
        assert h_norm(leray_project(pu) - pu) <= 1e-14
        assert abs(inner(pu, v) - inner(u, leray_project(v))) <= 1e-14
        assert pu.divergence_residual() <= 1e-12

    def test_accepts_physical(self, g16):
        u = taylor_green(g16)
        assert h_norm(leray_project(inverse_transform(u)) - u) < 1e-13


class TestStokes:
    def test_eigenfunction(self, g16):
        u = SpectralField.from_function(g16, [lambda x, y: np.sin(TWO_PI * y), lambda x, y: 0 * x])
        assert h_norm(stokes_apply(u, 1) - u * (4 * np.pi**2)) < 1e-11

    def test_constant_in_kernel(self, g16):
        c = SpectralField.from_function(g16, [lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x + 3.0])
        assert h_norm(stokes_apply(c, 1)) == 0.0
        assert h_norm(stokes_apply(c, 0.5)) == 0.0

    def test_half_power_matches_gradient(self, g32):
        u = random_field(g32, 5)
        du = u.gradient_samples(32)
        direct = np.sqrt(grid_mean(np.sum(du * du, axis=(0, 1))))
        assert h_norm(stokes_apply(u, 0.5)) == pytest.approx(direct, rel=1e-12)

    def test_powers_compose(self, g16):
        u = random_field(g16, 5)
        assert h_norm(stokes_apply(stokes_apply(u, 0.5), 1.5) - stokes_apply(u, 2)) <= 1e-10 * h_norm(stokes_apply(u, 2))

    def test_ipa_inverse(self, g32):
        c = SpectralField.from_function(g32, [lambda x, y: 0 * x + 2.0, lambda x, y: 0 * x])
        assert h_norm(ipa_solve(c) - c) == 0.0
        u = sine_x(g32)
        assert h_norm(ipa_solve(u) - u / (1 + 4 * np.pi**2)) < 1e-15
        w = random_field(g32, 9)
        assert h_norm(ipa_apply(ipa_solve(w)) - w) <= 1e-12 * h_norm(w)
        assert h_norm(ipa_solve(ipa_apply(w)) - w) <= 1e-12 * h_norm(w)


class TestNorms:
    def test_closed_form_sine(self, g16):
        u = sine_x(g16)
        # int sin^2 = 1/2, int |grad|^2 = 4 pi^2 / 2, int sin^4 = 3/8
        assert h_norm(u) ** 2 == pytest.approx(0.5, rel=1e-14)
        assert grad_norm(u) ** 2 == pytest.approx(2 * np.pi**2, rel=1e-14)
        assert lp_norm(u, 4) ** 4 == pytest.approx(3 / 8, rel=1e-14)
        assert lp_norm(u, np.inf) == pytest.approx(1.0, rel=1e-12)

    def test_zero_field(self, g16):
        rep = norms(SpectralField.zeros(g16), [3, 4])
        assert all(v == 0.0 for v in rep.row().values())

    def test_l2_matches_h(self, g32):
        u = random_field(g32, 4)
        assert lp_norm(u, 2) == pytest.approx(h_norm(u), rel=1e-10)

    def test_report_consistency(self, g32):
        u = random_field(g32, 4)
        rep = norms(u, [3, 4.5])
        assert rep.v_norm**2 == pytest.approx(rep.h_norm**2 + rep.grad_norm**2, rel=1e-12)
        assert rep.v_norm == v_norm(u)
        assert min(rep.row().values()) >= 0
        assert set(rep.row()) >= {"l3_norm", "l4.5_norm"}

    def test_lp_rejects_small_p(self, g16):
        with pytest.raises(ValueError):
            lp_norm(sine_x(g16), 0.5)

    def test_norms_csv(self, g16, tmp_path):
        path = tmp_path / "n.csv"
        write_norms_csv([norms(sine_x(g16))], path, times=[0.0])
        head, row = path.read_text().splitlines()
        assert head.startswith("time,h_norm,v_norm")
        assert float(row.split(",")[1]) == pytest.approx(np.sqrt(0.5))


class TestRandomFields:
    def test_seeded(self, g16):
        assert np.array_equal(random_field(g16, 8).coeffs, random_field(g16, 8).coeffs)
        assert not np.array_equal(random_field(g16, 8).coeffs, random_field(g16, 9).coeffs)

    def test_truncation_and_normalisation(self, g32):
        u = random_field(g32, 8, norm=2.0)
        assert h_norm(u) == pytest.approx(2.0)
        assert np.all(np.abs(u.coeffs[:, g32.k2 > (32 / 3) ** 2]) == 0)
        assert u.divergence_residual() < 1e-12

    def test_mean_zero(self, g16):
        u = random_field(g16, 3, mean_zero=True)
        assert np.all(u.coeffs[:, 0, 0] == 0)


def test_snapshot_round_trip(g3d, tmp_path):
    u = random_field(g3d, 2)
    path = tmp_path / "snap.bin"
    write_snapshot(u, path)
    raw = path.read_bytes()
    assert np.frombuffer(raw[:12], "<i4").tolist() == [3, 8, 3]
    assert len(raw) == 12 + 3 * 8**3 * 16
    back = read_snapshot(path)
    assert np.array_equal(back.coeffs, u.coeffs)


def test_snapshot_truncated(g16, tmp_path):
    path = tmp_path / "bad.bin"
    write_snapshot(random_field(g16, 2), path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError):
        read_snapshot(path)
