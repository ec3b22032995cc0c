"""Torus geometry, Fourier representation, Leray projection and Stokes multipliers.

Fields live on the unit-period torus T^d = (R/Z)^d.  A vector field is stored by
its Fourier coefficients u_k normalised so that

    u(x) = sum_k u_k exp(2 pi i k.x),     ||u||_H^2 = sum_k |u_k|^2,

which makes the Stokes operator the multiplier 4 pi^2 |k|^2.  Coefficient arrays
have shape ``(d, n, ..., n)`` in numpy FFT ordering.

Nonlinear products are formed on padded collocation grids.  Padding keeps only
the resolved modes |k_i| < n/2; the Nyquist plane is dropped there and in every
odd (derivative) multiplier, so products and derivatives stay real.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sp_fft

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int
    pad_factor: Fraction = Fraction(3, 2)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        pad = Fraction(self.pad_factor).limit_denominator(1000)
        object.__setattr__(self, "pad_factor", pad)
        if pad < Fraction(3, 2):
            raise ValueError(f"pad_factor must be >= 3/2, got {pad}")
        if (pad * self.n).denominator != 1:
            raise ValueError(f"pad_factor * n must be integral, got {pad * self.n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def npoints(self) -> int:
        return self.n**self.dim

    @property
    def padded_n(self) -> int:
        return int(self.pad_factor * self.n)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Integer wavevector components, each broadcast to ``shape``."""
        k1 = np.fft.fftfreq(self.n, 1.0 / self.n)
        return tuple(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(ki**2 for ki in self.k)

    @cached_property
    def resolved(self) -> np.ndarray:
        """Mask of modes with every |k_i| < n/2 (Nyquist excluded)."""
        half = self.n // 2
        mask = np.ones(self.shape, dtype=bool)
        for ki in self.k:
            mask &= np.abs(ki) < half
        return mask

    @cached_property
    def ik(self) -> tuple[np.ndarray, ...]:
        """Spectral derivative multipliers 2 pi i k_j with the Nyquist plane zeroed."""
        return tuple(np.where(self.resolved, 1j * TWO_PI * ki, 0.0) for ki in self.k)

    @cached_property
    def stokes_eigenvalues(self) -> np.ndarray:
        return 4.0 * np.pi**2 * self.k2

    def points(self, m: int | None = None) -> tuple[np.ndarray, ...]:
        m = self.n if m is None else m
        x1 = np.arange(m) / m
        return tuple(np.meshgrid(*([x1] * self.dim), indexing="ij"))


def quadrature_size(n: int, degree: float | None = None, factor: float | None = None) -> int:
    """Even collocation size for integrating products of resolved fields.

    A polynomial integrand of total degree ``degree`` in fields with |k_i| < n/2
    is integrated exactly by the returned grid.  Without a polynomial degree the
    grid is ``factor`` (default 2) times finer than ``n``.
    """
    if degree is not None:
        m = math.ceil(degree * n / 2)
        m = max(m, n)
    else:
        m = math.ceil((2.0 if factor is None else factor) * n)
    return m + (m % 2)


def product_size(n: int, r: float) -> int:
    """Grid for the damping product |u|^(r-1) u and its pairing with a field."""
    if float(r).is_integer():
        return quadrature_size(n, degree=max(int(r) + 1, 3))
    return quadrature_size(n, factor=2.0)


@lru_cache(maxsize=64)
def _pad_index(n: int, m: int, dim: int):
    """Index maps between resolved base-grid modes and a real-FFT half spectrum on m^d."""
    k1 = np.fft.fftfreq(n, 1.0 / n).astype(int)
    keep = np.nonzero(np.abs(k1) < n // 2)[0]
    target = np.mod(k1[keep], m)
    pos = np.arange(n // 2)
    src = (slice(None),) + np.ix_(*([keep] * (dim - 1) + [pos]))
    dst = (slice(None),) + np.ix_(*([target] * (dim - 1) + [pos]))
    return src, dst


def to_grid(coeffs: np.ndarray, n: int, m: int, dim: int) -> np.ndarray:
    """Real samples on an m^d grid of a (possibly scalar-stacked) coefficient array.

    Coefficients are assumed Hermitian, so only the half spectrum is used.
    """
    src, dst = _pad_index(n, m, dim)
    lead = coeffs.shape[: coeffs.ndim - dim]
    half = (m,) * (dim - 1) + (m // 2 + 1,)
    big = np.zeros(lead + half, dtype=complex)
    big.reshape((-1,) + half)[dst] = coeffs.reshape((-1,) + (n,) * dim)[src]
    axes = tuple(range(-dim, 0))
    return sp_fft.irfftn(big, s=(m,) * dim, axes=axes) * m**dim


def _negate_axes(a: np.ndarray, axes) -> np.ndarray:
    for ax in axes:
        a = np.roll(np.flip(a, axis=ax), 1, axis=ax)
    return a


def from_grid(samples: np.ndarray, n: int, dim: int) -> np.ndarray:
    """Resolved base-grid coefficients of real samples given on a finer m^d grid."""
    m = samples.shape[-1]
    src, dst = _pad_index(n, m, dim)
    axes = tuple(range(-dim, 0))
    big = sp_fft.rfftn(samples, axes=axes) / m**dim
    lead = samples.shape[: samples.ndim - dim]
    out = np.zeros(lead + (n,) * dim, dtype=complex)
    half = (m,) * (dim - 1) + (m // 2 + 1,)
    flat = out.reshape((-1,) + (n,) * dim)
    flat[src] = big.reshape((-1,) + half)[dst]
    # negative last-axis modes from Hermitian symmetry
    mirror = np.conj(_negate_axes(flat[..., 1 : n // 2], range(1, dim)))
    flat[..., n // 2 + 1 :] = mirror[..., ::-1]
    return out


def grid_mean(samples: np.ndarray) -> float:
    """Quadrature of a periodic integrand sampled on a uniform grid (unit volume)."""
    return float(np.mean(samples))


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: TorusGrid
    coeffs: np.ndarray
    solenoidal: bool = False

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.shape
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match grid {expected}")
        self.coeffs.setflags(write=False)

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape, dtype=complex), solenoidal=True)

    @classmethod
    def from_function(cls, grid: TorusGrid, funcs, solenoidal: bool = False) -> "SpectralField":
        """Sample component callables ``f_i(*x)`` on the base grid and transform."""
        x = grid.points()
        samples = np.stack([np.broadcast_to(f(*x), grid.shape) for f in funcs]).astype(float)
        out = transform(PhysicalField(grid, samples))
        return SpectralField(grid, out.coeffs, solenoidal)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.solenoidal and other.solenoidal)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.solenoidal and other.solenoidal)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar, self.solenoidal)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs / scalar, self.solenoidal)

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs, self.solenoidal)

    def multiplier(self, values: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * values, self.solenoidal)

    def divergence_residual(self) -> float:
        """max_k |k . u_k| relative to ||u||_H."""
        div = sum(ki * c for ki, c in zip(self.grid.k, self.coeffs))
        scale = h_norm(self)
        top = float(np.max(np.abs(div)))
        return top / scale if scale > 0 else top

    def hermitian_residual(self) -> float:
        flipped = self.coeffs
        for ax in range(1, self.grid.dim + 1):
            flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
        return float(np.max(np.abs(self.coeffs - np.conj(flipped))))

    def samples(self, m: int | None = None) -> np.ndarray:
        """Real samples on an m^d grid (resolved modes only)."""
        m = self.grid.n if m is None else m
        return to_grid(self.coeffs, self.grid.n, m, self.grid.dim)

    def gradient_samples(self, m: int) -> np.ndarray:
        """Samples of du_i/dx_j with shape (d, d, m, ...)."""
        g = np.stack([self.coeffs * ikj for ikj in self.grid.ik], axis=1)
        return to_grid(g, self.grid.n, m, self.grid.dim)


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: TorusGrid
    samples: np.ndarray

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.shape
        if self.samples.shape != expected:
            raise ValueError(f"sample shape {self.samples.shape} does not match grid {expected}")


def transform(field: PhysicalField) -> SpectralField:
    g = field.grid
    axes = tuple(range(1, g.dim + 1))
    coeffs = np.fft.fftn(np.asarray(field.samples, dtype=float), axes=axes) / g.npoints
    return SpectralField(g, coeffs)


def inverse_transform(field: SpectralField) -> PhysicalField:
    g = field.grid
    axes = tuple(range(1, g.dim + 1))
    samples = np.fft.ifftn(field.coeffs, axes=axes).real * g.npoints
    return PhysicalField(g, samples)


def _as_spectral(u: SpectralField | PhysicalField) -> SpectralField:
    if isinstance(u, PhysicalField):
        return transform(u)
    return u


def leray_project(u: SpectralField | PhysicalField) -> SpectralField:
    """Helmholtz-Hodge projection; the k = 0 mode passes through unchanged."""
    u = _as_spectral(u)
    g = u.grid
    k2 = np.where(g.k2 == 0, 1.0, g.k2)
    kdotu = sum(ki * c for ki, c in zip(g.k, u.coeffs))
    coeffs = np.stack([c - ki * kdotu / k2 for ki, c in zip(g.k, u.coeffs)])
    return SpectralField(g, coeffs, solenoidal=True)


def stokes_apply(u: SpectralField, power: float = 1) -> SpectralField:
    """Apply A^power, A = -Laplacian = multiplier 4 pi^2 |k|^2."""
    lam = u.grid.stokes_eigenvalues
    if power == 1:
        mult = lam
    else:
        mult = np.where(lam > 0, lam ** float(power), 0.0)
    return u.multiplier(mult)


def ipa_apply(u: SpectralField) -> SpectralField:
    return u.multiplier(1.0 + u.grid.stokes_eigenvalues)


def ipa_solve(u: SpectralField) -> SpectralField:
    """Apply (I + A)^{-1}."""
    return u.multiplier(1.0 / (1.0 + u.grid.stokes_eigenvalues))


def inner(u: SpectralField, v: SpectralField) -> float:
    """H inner product via Parseval."""
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return float(np.real(np.vdot(v.coeffs, u.coeffs)))


def h_norm(u: SpectralField) -> float:
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))


def grad_norm(u: SpectralField) -> float:
    return float(np.sqrt(np.sum(u.grid.stokes_eigenvalues * np.abs(u.coeffs) ** 2)))


def v_norm(u: SpectralField) -> float:
    return float(np.sqrt(np.sum((1.0 + u.grid.stokes_eigenvalues) * np.abs(u.coeffs) ** 2)))


def stokes_norm(u: SpectralField, power: float) -> float:
    """||A^power u||_H."""
    lam = u.grid.stokes_eigenvalues
    w = np.where(lam > 0, lam ** (2.0 * power), 0.0)
    return float(np.sqrt(np.sum(w * np.abs(u.coeffs) ** 2)))


def lp_norm(u: SpectralField, p: float, m: int | None = None) -> float:
    """||u||_{L^p} by quadrature of |u|^p on a padded grid."""
    if p == np.inf:
        m = quadrature_size(u.grid.n, factor=2.0) if m is None else m
        return float(np.max(np.sqrt(np.sum(u.samples(m) ** 2, axis=0))))
    if p < 1:
        raise ValueError(f"L^p exponent must be >= 1, got {p}")
    if m is None:
        # exact quadrature for low even powers; beyond degree 8 the grid gets too large
        even = float(p).is_integer() and int(p) % 2 == 0 and p <= 8
        m = quadrature_size(u.grid.n, degree=p) if even else quadrature_size(u.grid.n, factor=2.0)
    mag2 = np.sum(u.samples(m) ** 2, axis=0)
    return grid_mean(mag2 ** (p / 2.0)) ** (1.0 / p)


@dataclass(frozen=True)
class NormReport:
    h_norm: float
    v_norm: float
    grad_norm: float
    da_norm: float
    linf_norm: float
    lp_norms: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {
            "h_norm": self.h_norm,
            "v_norm": self.v_norm,
            "grad_norm": self.grad_norm,
            "da_norm": self.da_norm,
            "linf_norm": self.linf_norm,
        }
        for p, val in sorted(self.lp_norms.items()):
            out[f"l{p:g}_norm"] = val
        return out


def norms(u: SpectralField, lp_exponents: Iterable[float] = ()) -> NormReport:
    return NormReport(
        h_norm=h_norm(u),
        v_norm=v_norm(u),
        grad_norm=grad_norm(u),
        da_norm=h_norm(ipa_apply(u)),
        linf_norm=lp_norm(u, np.inf),
        lp_norms={float(p): lp_norm(u, p) for p in lp_exponents},
    )


def write_norms_csv(reports: Sequence[NormReport], path: str | Path, times: Sequence[float] | None = None):
    rows = [r.row() for r in reports]
    cols = list(rows[0]) if rows else []
    lines = [",".join((["time"] if times is not None else []) + cols)]
    for i, row in enumerate(rows):
        vals = [repr(float(row[c])) for c in cols]
        if times is not None:
            vals.insert(0, repr(float(times[i])))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def random_field(
    grid: TorusGrid,
    seed: int | np.random.Generator,
    slope: float = 3.0,
    cutoff: float | None = None,
    norm: float | None = 1.0,
    solenoidal: bool = True,
    mean_zero: bool = False,
) -> SpectralField:
    """Seeded Gaussian field with spectrum |k|^-slope, truncated to |k| <= cutoff (default n/3)."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.dim,) + grid.shape)
    coeffs = transform(PhysicalField(grid, noise)).coeffs
    kk = np.sqrt(grid.k2)
    cutoff = grid.n / 3.0 if cutoff is None else cutoff
    amp = np.where(kk > 0, np.where(kk > 0, kk, 1.0) ** (-slope), 1.0)
    amp = np.where(kk <= cutoff, amp, 0.0)
    if mean_zero:
        amp = np.where(kk > 0, amp, 0.0)
    u = SpectralField(grid, coeffs * amp)
    if solenoidal:
        u = leray_project(u)
    if norm is not None:
        h = h_norm(u)
        if h > 0:
            u = u * (norm / h)
    return u


# Snapshot layout: little-endian int32 (dim, n, components), then complex128
# coefficients as interleaved (re, im) float64 pairs in C order of (d, n, ..., n).
_HEADER = struct.Struct("<iii")


def write_snapshot(u: SpectralField, path: str | Path):
    g = u.grid
    body = np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes()
    Path(path).write_bytes(_HEADER.pack(g.dim, g.n, g.dim) + body)


def read_snapshot(path: str | Path, pad_factor: Fraction = Fraction(3, 2)) -> SpectralField:
    raw = Path(path).read_bytes()
    dim, n, comps = _HEADER.unpack_from(raw)
    grid = TorusGrid(dim, n, pad_factor)
    expected = comps * n**dim * 16
    if len(raw) - _HEADER.size != expected:
        raise ValueError(f"snapshot {path}: expected {expected} payload bytes, got {len(raw) - _HEADER.size}")
    coeffs = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape((comps,) + (n,) * dim)
    return SpectralField(grid, coeffs.astype(complex))
