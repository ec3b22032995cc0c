"""Time integration of the projected controlled CBF system

    dZ/ds = -mu A Z - alpha Z - B(Z) - beta C(Z) + f(s, a(s)),   Z(t) = z.

The diagonal part -(mu A + alpha) is advanced by its exact exponential; the
convective and damping terms are explicit.  ``imex-rk2`` is the
integrating-factor Heun scheme, ``imex-euler`` its first-order sibling.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .operators import AbsorptionExponent, damping_samples, gronwall_rate, torus_rhs_terms
from .spectral import (
    SpectralField,
    TorusGrid,
    from_grid,
    grad_norm,
    h_norm,
    inner,
    leray_project,
    lp_norm,
    product_size,
    quadrature_size,
    stokes_apply,
    stokes_norm,
    v_norm,
    write_snapshot,
)

SCHEMES = ("imex-euler", "imex-rk2")
SCHEME_ORDER = {"imex-euler": 1, "imex-rk2": 2}
DIAGNOSTIC_LEVELS = ("none", "basic", "strong", "da")


class RegimeWarning(UserWarning):
    """Parameters fall outside the regimes where well-posedness results are known."""


class BlowUpError(RuntimeError):
    def __init__(self, message: str, last_time: float, last_state: SpectralField):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state


@dataclass(frozen=True)
class CBFParams:
    mu: float
    beta: float
    r: float
    dim: int = 2
    alpha: float = 0.0
    convection: bool = True

    def __post_init__(self):
        AbsorptionExponent(self.r)
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        for msg in self.regime_issues():
            warnings.warn(msg, RegimeWarning, stacklevel=3)

    @property
    def critical_ok(self) -> bool:
        return self.r == 3 and 2.0 * self.beta * self.mu >= 1.0

    @property
    def comparison_regime(self) -> bool:
        """r > 3 with any mu, beta; or r = 3 with 2 beta mu >= 1."""
        return self.r > 3 or self.critical_ok

    @property
    def existence_regime(self) -> bool:
        if self.critical_ok:
            return True
        if self.dim == 2:
            return self.r > 3
        return 3 < self.r <= 5

    def regime_issues(self) -> list[str]:
        issues = []
        if self.beta == 0:
            issues.append("beta = 0: damping disabled, no well-posedness guarantee from the damping term")
        if not self.comparison_regime:
            issues.append(f"r={self.r}, 2*beta*mu={2 * self.beta * self.mu:g}: outside the uniqueness regime "
                          "(need r > 3, or r = 3 with 2 beta mu >= 1)")
        elif not self.existence_regime:
            issues.append(f"d=3, r={self.r}: viscosity-solution existence needs r in (3, 5]")
        return issues

    @property
    def rho(self) -> float | None:
        return gronwall_rate(self.mu, self.beta, self.r) if self.r > 3 and self.beta > 0 else None

    def as_dict(self) -> dict:
        return {"mu": self.mu, "alpha": self.alpha, "beta": self.beta, "r": self.r,
                "dim": self.dim, "convection": self.convection}


@dataclass(frozen=True, eq=False)
class ControlModel:
    """Finite control set with a forcing map (t, a) -> f(t, a) in V."""

    grid: TorusGrid
    labels: tuple[str, ...]
    forcing: Callable[[float, int], SpectralField]
    _constant: tuple[SpectralField, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.labels:
            raise ValueError("control set is empty")

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def constant(cls, grid: TorusGrid, fields: Sequence[SpectralField], labels: Sequence[str] | None = None):
        projected = tuple(leray_project(f) for f in fields)
        labels = tuple(labels) if labels is not None else tuple(f"a{i}" for i in range(len(fields)))
        if len(labels) != len(projected):
            raise ValueError("one label per forcing field")
        return cls(grid, labels, lambda t, a: projected[a], projected)

    @classmethod
    def zero(cls, grid: TorusGrid, size: int = 1):
        return cls.constant(grid, [SpectralField.zeros(grid)] * size)

    @classmethod
    def random(cls, grid: TorusGrid, size: int, seed: int, amplitude: float = 1.0, slope: float = 3.0):
        """Controls a_i pushing along seeded random solenoidal fields; a_0 = -a_1 when size >= 2."""
        from .spectral import random_field

        base = [random_field(grid, seed + 1000 + i, slope=slope, norm=amplitude) for i in range(size)]
        if size >= 2:
            base[1] = -base[0]
        return cls.constant(grid, base)

    def f(self, t: float, a: int) -> SpectralField:
        if self._constant is not None:
            return self._constant[a]
        return leray_project(self.forcing(t, a))

    def sup_v_norm(self, times: Sequence[float]) -> float:
        return max(v_norm(self.f(t, a)) for t in times for a in range(self.size))

    def continuity_modulus(self, times: Sequence[float]) -> float:
        """Largest ||f(t', a) - f(t, a)||_V over consecutive sample times."""
        out = 0.0
        for a in range(self.size):
            prev = None
            for t in times:
                cur = self.f(t, a)
                if prev is not None:
                    out = max(out, v_norm(cur - prev))
                prev = cur
        return out


@dataclass(frozen=True)
class ControlSignal:
    breakpoints: tuple[float, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "labels", tuple(int(a) for a in self.labels))
        if len(bp) != len(self.labels) + 1:
            raise ValueError("need one label per interval")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(a < 0 for a in self.labels):
            raise ValueError("labels must be non-negative indices")

    @classmethod
    def uniform(cls, t: float, T: float, labels: Sequence[int]):
        m = len(labels)
        bp = [t + (T - t) * j / m for j in range(m)] + [T]
        return cls(tuple(bp), tuple(labels))

    @property
    def t(self) -> float:
        return self.breakpoints[0]

    @property
    def T(self) -> float:
        return self.breakpoints[-1]

    def label_at(self, s: float) -> int:
        j = int(np.searchsorted(self.breakpoints, s, side="right")) - 1
        return self.labels[min(max(j, 0), len(self.labels) - 1)]

    def validate_for(self, model: ControlModel):
        bad = [a for a in self.labels if a >= model.size]
        if bad:
            raise ValueError(f"control labels {bad} not in a control set of size {model.size}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[SpectralField]
    labels: tuple[int, ...]
    segments: list[tuple[int, int]]
    diagnostics: dict[str, np.ndarray]
    step_residuals: dict[str, np.ndarray]
    integrals: dict[str, float]
    params: CBFParams
    scheme: str
    dt: float

    @property
    def final(self) -> SpectralField:
        return self.states[-1]

    @property
    def order(self) -> int:
        return SCHEME_ORDER[self.scheme]

    def cumulative(self, key: str) -> np.ndarray:
        """Running trapezoidal integral of a node diagnostic from the start time."""
        return cumulative_trapezoid(self.diagnostics[key], self.times, initial=0.0)

    def to_csv(self, path: str | Path, header: dict | None = None):
        """Columns: time, ||Z||_H, ||Z||_V, ||Z||_{L^{r+1}}, weak energy-balance residual."""
        weak = self.step_residuals.get("weak")
        with open(path, "w", newline="") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}={val}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "h_norm", "v_norm", "lr1_norm", "energy_residual"])
            d = self.diagnostics
            for i, t in enumerate(self.times):
                res = "" if weak is None or i == 0 else repr(float(weak[i - 1]))
                w.writerow([repr(float(t)), repr(float(np.sqrt(d["h2"][i]))), repr(float(np.sqrt(d["v2"][i]))),
                            repr(float(d["lr1"][i] ** (1.0 / (self.params.r + 1)))), res])


def _check_grid(z: SpectralField, params: CBFParams, model: ControlModel | None = None):
    if z.grid.dim != params.dim:
        raise ValueError(f"state lives in {z.grid.dim}D, params say {params.dim}D")
    if model is not None and model.grid != z.grid:
        raise ValueError("control model and state live on different grids")


def nonlinear_terms(z: SpectralField, params: CBFParams) -> tuple[SpectralField, SpectralField]:
    """(B(z), C(z)), each formed on its own dealiasing grid."""
    g = z.grid
    zero = np.zeros_like(z.coeffs)
    if params.convection:
        m = g.padded_n
        adv = np.einsum("j...,ij...->i...", z.samples(m), z.gradient_samples(m))
        bz = leray_project(SpectralField(g, from_grid(adv, g.n, g.dim)))
    else:
        bz = SpectralField(g, zero, True)
    if params.beta > 0:
        m = product_size(g.n, params.r)
        cz = leray_project(SpectralField(g, from_grid(damping_samples(z.samples(m), params.r), g.n, g.dim)))
    else:
        cz = SpectralField(g, zero, True)
    return bz, cz


def _linear_rate(grid: TorusGrid, params: CBFParams) -> np.ndarray:
    return params.mu * grid.stokes_eigenvalues + params.alpha


def rhs(z: SpectralField, t: float, a: int, params: CBFParams, model: ControlModel) -> SpectralField:
    """-mu A z - alpha z - B(z) - beta C(z) + f(t, a)."""
    _check_grid(z, params, model)
    bz, cz = nonlinear_terms(z, params)
    coeffs = (-_linear_rate(z.grid, params) * z.coeffs - bz.coeffs - params.beta * cz.coeffs
              + model.f(t, a).coeffs)
    return SpectralField(z.grid, coeffs, solenoidal=True)


def _explicit(z, t, a, params, model, terms=None):
    bz, cz = nonlinear_terms(z, params) if terms is None else terms
    return -bz.coeffs - params.beta * cz.coeffs + model.f(t, a).coeffs


def step(z: SpectralField, t: float, dt: float, a: int, params: CBFParams, model: ControlModel,
         scheme: str = "imex-rk2", terms=None) -> SpectralField:
    """One integrating-factor step; ``terms`` may carry precomputed (B(z), C(z))."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    _check_grid(z, params, model)
    decay = np.exp(-_linear_rate(z.grid, params) * dt)
    n0 = _explicit(z, t, a, params, model, terms)
    if scheme == "imex-euler":
        out = decay * (z.coeffs + dt * n0)
    else:
        pred = SpectralField(z.grid, decay * (z.coeffs + dt * n0), True)
        n1 = _explicit(pred, t + dt, a, params, model)
        out = decay * z.coeffs + 0.5 * dt * (decay * n0 + n1)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(f"non-finite state after step at t={t + dt:g}; reduce dt", t, z)
    return SpectralField(z.grid, out, solenoidal=True)


def _node_terms(z: SpectralField, t: float, a: int, params: CBFParams, model: ControlModel,
                level: str, terms) -> dict:
    r = params.r
    f = model.f(t, a)
    out = {
        "h2": h_norm(z) ** 2,
        "grad2": grad_norm(z) ** 2,
        "fz": inner(f, z),
        "f_v2": v_norm(f) ** 2,
        "f_h2": h_norm(f) ** 2,
    }
    out["v2"] = out["h2"] + out["grad2"]
    bz, cz = terms
    # (C(z), z) is the padded quadrature of |z|^(r+1) on the damping grid
    out["lr1"] = inner(cz, z) if params.beta > 0 else lp_norm(z, r + 1) ** (r + 1)
    out["l3r1"] = lp_norm(z, 3 * (r + 1), m=quadrature_size(z.grid.n, factor=2.0)) ** (r + 1)
    if level in ("strong", "da"):
        az = stokes_apply(z, 1)
        out["az2"] = h_norm(az) ** 2
        out["bAz"] = inner(bz, az)
        out["cAz"] = inner(cz, az) if params.beta > 0 else 0.0
        out["fAz"] = inner(f, az)
        if r >= 3 and params.beta > 0:
            first, second = torus_rhs_terms(z, r)
            out["cAz_torus"] = first + second
            out["damped_enstrophy"] = first
        else:
            out["cAz_torus"] = out["cAz"]
            out["damped_enstrophy"] = float("nan")
    if level == "da":
        a2z = stokes_apply(z, 2)
        out["a32"] = stokes_norm(z, 1.5) ** 2
        out["bA2z"] = inner(bz, a2z)
        out["cA2z"] = inner(cz, a2z) if params.beta > 0 else 0.0
        out["fA2z"] = inner(f, a2z)
    return out


def _balance_density(nt: dict, params: CBFParams, kind: str) -> float:
    mu, al, be = params.mu, params.alpha, params.beta
    if kind == "weak":
        return 2 * mu * nt["grad2"] + 2 * al * nt["h2"] + 2 * be * nt["lr1"] - 2 * nt["fz"]
    if kind == "strong":
        return mu * nt["az2"] + al * nt["grad2"] + nt["bAz"] + be * nt["cAz"] - nt["fAz"]
    return mu * nt["a32"] + al * nt["az2"] + nt["bA2z"] + be * nt["cA2z"] - nt["fA2z"]


_BALANCE_ENERGY = {"weak": ("h2", 1.0), "strong": ("grad2", 0.5), "da": ("az2", 0.5)}


def _check_divisible(signal: ControlSignal, dt: float) -> list[int]:
    counts = []
    for t0, t1 in zip(signal.breakpoints, signal.breakpoints[1:]):
        m = (t1 - t0) / dt
        k = int(round(m))
        if k < 1 or abs(m - k) > 1e-9 * max(1.0, m):
            raise ValueError(f"dt={dt:g} does not divide control interval [{t0:g}, {t1:g}]")
        counts.append(k)
    return counts


def integrate(z0: SpectralField, signal: ControlSignal, t: float | None, T: float | None, dt: float,
              params: CBFParams, model: ControlModel, scheme: str = "imex-rk2", diagnostics: str = "basic",
              snapshot_times: Sequence[float] = (), snapshot_dir: str | Path | None = None,
              keep_states: bool = True) -> Trajectory:
    """Integrate over the signal's breakpoints with per-step diagnostics.

    Raises BlowUpError (carrying the last valid time and state) on non-finite values.
    """
    if diagnostics not in DIAGNOSTIC_LEVELS:
        raise ValueError(f"diagnostics must be one of {DIAGNOSTIC_LEVELS}")
    if t is not None and not math.isclose(t, signal.t, abs_tol=1e-12):
        raise ValueError(f"signal starts at {signal.t}, expected t={t}")
    if T is not None and not math.isclose(T, signal.T, abs_tol=1e-12):
        raise ValueError(f"signal ends at {signal.T}, expected T={T}")
    _check_grid(z0, params, model)
    signal.validate_for(model)
    counts = _check_divisible(signal, dt)

    times = [signal.t]
    states = [z0]
    labels = []
    segments = []
    nodes: list[dict] = []
    residuals: dict[str, list[float]] = {k: [] for k in ("weak", "strong", "da")}
    kinds = {"none": (), "basic": ("weak",), "strong": ("weak", "strong"), "da": ("weak", "strong", "da")}[diagnostics]
    pending_snaps = sorted(snapshot_times)

    z = z0
    terms = nonlinear_terms(z, params)
    node_idx = 0
    for j, (a, m) in enumerate(zip(signal.labels, counts)):
        t0, t1 = signal.breakpoints[j], signal.breakpoints[j + 1]
        h = (t1 - t0) / m
        start = node_idx
        nt0 = _node_terms(z, t0, a, params, model, diagnostics, terms) if kinds else None
        if j == 0 and nt0 is not None:
            nodes.append(nt0)
        for i in range(m):
            s0 = t0 + i * h
            s1 = t1 if i == m - 1 else t0 + (i + 1) * h
            # overflow surfaces as BlowUpError, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    z_new = step(z, s0, h, a, params, model, scheme, terms=terms)
                except BlowUpError as err:
                    raise BlowUpError(f"blow-up at t={s1:g}, last valid time {s0:g}", s0, z) from err
                terms = nonlinear_terms(z_new, params)
                nt1 = _node_terms(z_new, s1, a, params, model, diagnostics, terms) if kinds else None
            if kinds:
                for kind in kinds:
                    key, scale = _BALANCE_ENERGY[kind]
                    res = scale * (nt1[key] - nt0[key]) / h + 0.5 * (
                        _balance_density(nt0, params, kind) + _balance_density(nt1, params, kind))
                    residuals[kind].append(res)
                nodes.append(nt1)
                nt0 = nt1
            z = z_new
            times.append(s1)
            labels.append(a)
            node_idx += 1
            if keep_states:
                states.append(z)
            else:
                states[-1:] = [z]
            while pending_snaps and pending_snaps[0] <= s1 + 1e-12:
                ts = pending_snaps.pop(0)
                if snapshot_dir is not None:
                    write_snapshot(z, Path(snapshot_dir) / f"snapshot_t{ts:.6f}.bin")
        segments.append((start, node_idx))

    times_arr = np.array(times)
    diag = {}
    if nodes:
        for key in nodes[0]:
            diag[key] = np.array([nt[key] for nt in nodes])
    integrals = {}
    if nodes:
        def trap(key):
            return float(np.trapezoid(diag[key], times_arr))
        integrals = {
            "grad2": trap("grad2"),
            "lr1": trap("lr1"),
            "l3r1": trap("l3r1"),
            "f_v2": trap("f_v2"),
            "f_h2": trap("f_h2"),
            "sup_h2": float(np.max(diag["h2"])),
        }
        if diagnostics in ("strong", "da"):
            integrals["az2"] = trap("az2")
            integrals["damped_enstrophy"] = trap("damped_enstrophy")
            integrals["sup_grad2"] = float(np.max(diag["grad2"]))
        if diagnostics == "da":
            integrals["a32"] = trap("a32")
            integrals["sup_az2"] = float(np.max(diag["az2"]))
    return Trajectory(
        times=times_arr,
        states=states,
        labels=tuple(labels),
        segments=segments,
        diagnostics=diag,
        step_residuals={k: np.array(v) for k, v in residuals.items() if k in kinds},
        integrals=integrals,
        params=params,
        scheme=scheme,
        dt=dt,
    )
