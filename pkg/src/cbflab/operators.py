"""Convective and Forchheimer nonlinearities on the torus.

All products are formed on padded grids large enough that pairing the result
with a resolved field is an exact quadrature whenever the integrand is a
polynomial (B always; C for odd integer r).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    SpectralField,
    from_grid,
    grid_mean,
    inner,
    leray_project,
    product_size,
    quadrature_size,
    stokes_apply,
)


@dataclass(frozen=True)
class AbsorptionExponent:
    r: float

    def __post_init__(self):
        if not np.isfinite(self.r) or self.r < 1:
            raise ValueError(f"absorption exponent must be >= 1, got {self.r}")

    @property
    def is_integer(self) -> bool:
        return float(self.r).is_integer()

    def __float__(self) -> float:
        return float(self.r)


def _r(r) -> float:
    return float(AbsorptionExponent(float(r)).r)


def _same_grid(*fields: SpectralField):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")


def advection(u: SpectralField, v: SpectralField, m: int | None = None) -> SpectralField:
    """Unprojected (u . grad) v, truncated to resolved modes."""
    _same_grid(u, v)
    g = u.grid
    m = g.padded_n if m is None else m
    us = u.samples(m)
    dv = v.gradient_samples(m)
    adv = np.einsum("j...,ij...->i...", us, dv)
    return SpectralField(g, from_grid(adv, g.n, g.dim))


def convective_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """Trilinear form b(u, v, w) = int (u . grad) v . w."""
    _same_grid(u, v, w)
    return inner(advection(u, v), w)


def convective_B(u: SpectralField, v: SpectralField | None = None) -> SpectralField:
    """B(u, v) = P[(u . grad) v];  B(u) = B(u, u)."""
    v = u if v is None else v
    return leray_project(advection(u, v))


def damping_samples(us: np.ndarray, r: float) -> np.ndarray:
    """Pointwise |u|^(r-1) u for samples of shape (d, ...)."""
    if r == 1:
        return us.copy()
    mag2 = np.sum(us * us, axis=0)
    return mag2 ** ((r - 1.0) / 2.0) * us


def damping_C(u: SpectralField, r: float | AbsorptionExponent, m: int | None = None) -> SpectralField:
    """C(u) = P(|u|^(r-1) u)."""
    r = _r(r)
    g = u.grid
    m = product_size(g.n, r) if m is None else m
    out = damping_samples(u.samples(m), r)
    return leray_project(SpectralField(g, from_grid(out, g.n, g.dim)))


def gateaux_C(u: SpectralField, y: SpectralField, r: float | AbsorptionExponent,
              m: int | None = None) -> SpectralField:
    """Gateaux derivative C'(u) y.

    r = 1 gives P(y); otherwise P(|u|^(r-1) y) + (r-1) P(u |u|^(r-3) (u . y)),
    where for 1 < r < 3 points with u = 0 contribute nothing.
    """
    _same_grid(u, y)
    r = _r(r)
    g = u.grid
    if r == 1:
        return leray_project(y)
    m = product_size(g.n, r) if m is None else m
    us = u.samples(m)
    ys = y.samples(m)
    mag2 = np.sum(us * us, axis=0)
    udoty = np.sum(us * ys, axis=0)
    if r >= 3:
        low = mag2 ** ((r - 3.0) / 2.0)
    else:
        safe = np.where(mag2 > 0, mag2, 1.0)
        low = np.where(mag2 > 0, safe ** ((r - 3.0) / 2.0), 0.0)
    out = mag2 ** ((r - 1.0) / 2.0) * ys + (r - 1.0) * low * udoty * us
    return leray_project(SpectralField(g, from_grid(out, g.n, g.dim)))


def weighted_l2(weight_field: SpectralField, u: SpectralField, power: float, m: int | None = None) -> float:
    """|| |w|^power u ||_H^2 by quadrature."""
    g = u.grid
    m = quadrature_size(g.n, factor=2.0) if m is None else m
    ws = weight_field.samples(m)
    us = u.samples(m)
    return grid_mean(np.sum(ws * ws, axis=0) ** power * np.sum(us * us, axis=0))


def damped_enstrophy(u: SpectralField, r: float, m: int | None = None) -> float:
    """|| |u|^((r-1)/2) grad u ||_H^2."""
    g = u.grid
    if m is None:
        odd = float(r).is_integer() and int(r) % 2 == 1
        m = quadrature_size(g.n, degree=r + 1) if odd else quadrature_size(g.n, factor=2.0)
    us = u.samples(m)
    du = u.gradient_samples(m)
    mag2 = np.sum(us * us, axis=0)
    return grid_mean(mag2 ** ((r - 1.0) / 2.0) * np.sum(du * du, axis=(0, 1)))


def _torus_grid(n: int, r: float) -> int:
    return quadrature_size(n, degree=r + 1) if (r.is_integer() and int(r) % 2) else quadrature_size(n, factor=4.0)


def torus_rhs_terms(u: SpectralField, r: float, m: int | None = None) -> tuple[float, float]:
    """|| |u|^((r-1)/2) grad u ||^2 and 4 (r-1)/(r+1)^2 || grad |u|^((r+1)/2) ||^2 by quadrature."""
    r = _r(r)
    if r < 3:
        raise ValueError("torus identity terms need r >= 3")
    m = _torus_grid(u.grid.n, r) if m is None else m
    us = u.samples(m)
    du = u.gradient_samples(m)  # du[i, j] = d u_i / d x_j
    mag2 = np.sum(us * us, axis=0)
    first = grid_mean(mag2 ** ((r - 1.0) / 2.0) * np.sum(du * du, axis=(0, 1)))
    # grad |u|^((r+1)/2) = (r+1)/2 |u|^((r-3)/2) sum_i u_i grad u_i
    grad_mag = np.einsum("i...,ij...->j...", us, du)
    grad_pow = 0.5 * (r + 1.0) * mag2 ** ((r - 3.0) / 4.0) * grad_mag
    second = 4.0 * (r - 1.0) / (r + 1.0) ** 2 * grid_mean(np.sum(grad_pow * grad_pow, axis=0))
    return first, second


def torus_identity_terms(u: SpectralField, r: float, m: int | None = None) -> tuple[float, float, float]:
    """Both sides of (C(u), Au) = || |u|^((r-1)/2) grad u ||^2 + 4 (r-1)/(r+1)^2 || grad |u|^((r+1)/2) ||^2.

    Returns ``(lhs, first, second)``; the left side is the spectral pairing of
    C(u) with Au, the right-hand terms are physical quadratures of the
    chain-rule expansions.  r >= 3 is required for the second term.
    """
    r = _r(r)
    m = _torus_grid(u.grid.n, r) if m is None else m
    first, second = torus_rhs_terms(u, r, m)
    lhs = inner(damping_C(u, r, m=m), stokes_apply(u, 1))
    return lhs, first, second


def gronwall_rate(mu: float, beta: float, r: float) -> float:
    """rho = (r-3)/(2 mu (r-1)) * [4/(beta mu (r-1))]^(2/(r-3)), defined for r > 3."""
    if r <= 3:
        raise ValueError(f"the Gronwall rate needs r > 3, got {r}")
    return (r - 3.0) / (2.0 * mu * (r - 1.0)) * (4.0 / (beta * mu * (r - 1.0))) ** (2.0 / (r - 3.0))
