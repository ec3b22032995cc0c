"""Slow reference implementations used to cross-check the FFT code paths.

Nothing here calls an FFT: fields are evaluated by explicit Fourier sums and
products are either summed pointwise and integrated back by explicit
quadrature (damping) or convolved mode by mode (convection).
"""
from __future__ import annotations

import numpy as np

from .spectral import SpectralField, TorusGrid

MAX_ORACLE_N = 16


def _guard(grid: TorusGrid):
    if grid.n > MAX_ORACLE_N:
        raise ValueError(f"oracle limited to n <= {MAX_ORACLE_N}, got n={grid.n}")


def _modes(grid: TorusGrid) -> np.ndarray:
    half = grid.n // 2
    k1 = np.arange(-half + 1, half)
    mesh = np.meshgrid(*([k1] * grid.dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _flat_index(grid: TorusGrid, modes: np.ndarray) -> tuple:
    return tuple(np.mod(modes[:, i], grid.n) for i in range(grid.dim))


def _project(modes: np.ndarray, vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    for idx, k in enumerate(modes):
        kk = float(k @ k)
        if kk > 0:
            out[:, idx] -= k * (k @ vec[:, idx]) / kk
    return out


def _scatter(grid: TorusGrid, modes: np.ndarray, vec: np.ndarray) -> SpectralField:
    coeffs = np.zeros((grid.dim,) + grid.shape, dtype=complex)
    idx = _flat_index(grid, modes)
    for i in range(grid.dim):
        coeffs[(i,) + idx] = vec[i]
    return SpectralField(grid, coeffs)


def _gather(u: SpectralField, modes: np.ndarray) -> np.ndarray:
    idx = _flat_index(u.grid, modes)
    return np.stack([u.coeffs[(i,) + idx] for i in range(u.grid.dim)])


def evaluate_direct(u: SpectralField, m: int) -> np.ndarray:
    """Samples of u on an m^d grid by explicit summation of the Fourier series."""
    g = u.grid
    modes = _modes(g)
    vec = _gather(u, modes)
    x1 = np.arange(m) / m
    pts = np.stack([p.ravel() for p in np.meshgrid(*([x1] * g.dim), indexing="ij")], axis=1)
    out = np.zeros((g.dim, pts.shape[0]))
    for idx, k in enumerate(modes):
        phase = np.exp(2j * np.pi * (pts @ k))
        out += np.real(vec[:, idx, None] * phase[None, :])
    return out.reshape((g.dim,) + (m,) * g.dim)


def damping_C_oracle(u: SpectralField, r: float, oversample: int = 4) -> SpectralField:
    """P(|u|^(r-1) u) via pointwise products on an oversampled grid and explicit quadrature."""
    g = u.grid
    _guard(g)
    m = oversample * g.n
    us = evaluate_direct(u, m)
    mag = np.sqrt(np.sum(us**2, axis=0))
    prod = mag ** (r - 1.0) * us
    modes = _modes(g)
    x1 = np.arange(m) / m
    pts = np.stack([p.ravel() for p in np.meshgrid(*([x1] * g.dim), indexing="ij")], axis=1)
    flat = prod.reshape(g.dim, -1)
    vec = np.zeros((g.dim, modes.shape[0]), dtype=complex)
    for idx, k in enumerate(modes):
        phase = np.exp(-2j * np.pi * (pts @ k))
        vec[:, idx] = flat @ phase / pts.shape[0]
    return _scatter(g, modes, _project(modes, vec))


def convective_B_oracle(u: SpectralField, v: SpectralField) -> SpectralField:
    """P[(u . grad) v] by explicit convolution of Fourier coefficients."""
    g = u.grid
    _guard(g)
    modes = _modes(g)
    uh = _gather(u, modes)
    vh = _gather(v, modes)
    half = g.n // 2
    lookup = {tuple(k): i for i, k in enumerate(modes)}
    out = np.zeros((g.dim, modes.shape[0]), dtype=complex)
    # (u.grad v)_i(m) = sum_{p+q=m} sum_j u_j(p) 2 pi i q_j v_i(q)
    for ip, p in enumerate(modes):
        for iq, q in enumerate(modes):
            mk = p + q
            if np.any(np.abs(mk) >= half):
                continue
            coef = 2j * np.pi * np.dot(uh[:, ip], q)
            out[:, lookup[tuple(mk)]] += coef * vh[:, iq]
    return _scatter(g, modes, _project(modes, out))


def convective_b_oracle(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) from the explicit convolution, unprojected."""
    g = u.grid
    _guard(g)
    modes = _modes(g)
    uh, vh, wh = _gather(u, modes), _gather(v, modes), _gather(w, modes)
    total = 0.0 + 0.0j
    lookup = {tuple(k): i for i, k in enumerate(modes)}
    half = g.n // 2
    for ip, p in enumerate(modes):
        for iq, q in enumerate(modes):
            mk = p + q
            if np.any(np.abs(mk) >= half):
                continue
            coef = 2j * np.pi * np.dot(uh[:, ip], q)
            total += coef * np.dot(vh[:, iq], np.conj(wh[:, lookup[tuple(mk)]]))
    return float(total.real)
