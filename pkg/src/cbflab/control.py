"""Cost functional, Hamiltonian, brute-force value function and HJB diagnostics.

Controls are piecewise constant on fixed breakpoints.  The value function of
a state at time ``s`` is the minimum over all label sequences on the remaining
breakpoints, found by exhaustive enumeration; the evaluation tree is kept so
the Bellman recursion can be audited node by node.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .dynamics import CBFParams, ControlModel, ControlSignal, Trajectory, integrate, nonlinear_terms
from .spectral import SpectralField, grad_norm, h_norm, inner, ipa_apply, random_field, stokes_apply, v_norm

MAX_SIGNALS = 10_000


class BudgetError(ValueError):
    def __init__(self, K: int, M: int):
        super().__init__(f"enumeration budget exceeded: K={K} controls, M={M} slices gives "
                         f"K^M={K ** M} > {MAX_SIGNALS}")
        self.K, self.M = K, M


@dataclass(frozen=True)
class CostSpec:
    """Running cost L(z, a) and terminal cost g(z); both time independent."""

    running: str = "enstrophy"  # enstrophy | enstrophy+penalty | custom
    terminal: str = "h"  # h | v | none | custom
    penalty: tuple[float, ...] = ()
    growth_k: float = 2.0
    running_fn: Callable[[SpectralField, int], float] | None = None
    terminal_fn: Callable[[SpectralField], float] | None = None

    def __post_init__(self):
        if self.running not in ("enstrophy", "enstrophy+penalty", "custom"):
            raise ValueError(f"unknown running cost {self.running!r}")
        if self.terminal not in ("h", "v", "none", "custom"):
            raise ValueError(f"unknown terminal cost {self.terminal!r}")
        if self.running == "custom" and self.running_fn is None:
            raise ValueError("custom running cost needs running_fn")
        if self.terminal == "custom" and self.terminal_fn is None:
            raise ValueError("custom terminal cost needs terminal_fn")

    def L(self, z: SpectralField, a: int) -> float:
        if self.running == "custom":
            return float(self.running_fn(z, a))
        out = grad_norm(z) ** 2
        if self.running == "enstrophy+penalty":
            out += self.penalty[a]
        return out

    def g(self, z: SpectralField) -> float:
        if self.terminal == "h":
            return h_norm(z) ** 2
        if self.terminal == "v":
            return v_norm(z) ** 2
        if self.terminal == "none":
            return 0.0
        return float(self.terminal_fn(z))

    def as_dict(self) -> dict:
        return {"running": self.running, "terminal": self.terminal, "penalty": list(self.penalty),
                "growth_k": self.growth_k}


def running_cost(traj: Trajectory, spec: CostSpec) -> list[float]:
    """Simpson quadrature of L over each control interval of the trajectory."""
    if len(traj.states) != len(traj.times):
        raise ValueError("running cost needs every state; integrate with keep_states=True")
    out = []
    for (i0, i1), a in zip(traj.segments, _segment_labels(traj)):
        vals = [spec.L(z, a) for z in traj.states[i0 : i1 + 1]]
        x = traj.times[i0 : i1 + 1]
        out.append(float(simpson(vals, x=x)) if len(vals) > 2 else float(np.trapezoid(vals, x)))
    return out


def _segment_labels(traj: Trajectory) -> list[int]:
    return [traj.labels[i0] for i0, _ in traj.segments]


def cost_eval(traj: Trajectory, signal: ControlSignal, spec: CostSpec) -> float:
    """int_t^T L(Z(s), a(s)) ds + g(Z(T))."""
    if not (math.isclose(traj.times[0], signal.t, abs_tol=1e-12) and math.isclose(traj.times[-1], signal.T, abs_tol=1e-12)):
        raise ValueError(f"trajectory spans [{traj.times[0]}, {traj.times[-1]}], "
                         f"signal spans [{signal.t}, {signal.T}]")
    return math.fsum(running_cost(traj, spec)) + spec.g(traj.final)


def hamiltonian(t: float, z: SpectralField, p: SpectralField, model: ControlModel, spec: CostSpec) -> tuple[float, int]:
    """min over a of (f(t, a), p)_H + L(z, a); ties go to the lowest index."""
    if model.size == 0:
        raise ValueError("empty control set")
    best, arg = math.inf, -1
    for a in range(model.size):
        val = inner(model.f(t, a), p) + spec.L(z, a)
        if val < best:
            best, arg = val, a
    return best, arg


def vnorm_gradient(z: SpectralField) -> SpectralField:
    """Frechet derivative of ||z||_V^2, namely 2 (I + A) z."""
    return ipa_apply(z) * 2.0


@dataclass(frozen=True)
class SolveContext:
    params: CBFParams
    model: ControlModel
    spec: CostSpec
    dt: float
    scheme: str = "imex-rk2"

    def run(self, z: SpectralField, t0: float, t1: float, a: int) -> Trajectory:
        return integrate(z, ControlSignal((t0, t1), (a,)), None, None, self.dt, self.params, self.model,
                         scheme=self.scheme, diagnostics="none")


@dataclass(eq=False)
class ValueNode:
    slice_index: int
    time: float
    state: SpectralField
    path: tuple[int, ...]
    cost_to_go: float = math.nan
    best_control: int | None = None
    stage_costs: list[float] = field(default_factory=list)
    children: list["ValueNode"] = field(default_factory=list)


@dataclass(eq=False)
class ValueTree:
    root: ValueNode
    breakpoints: tuple[float, ...]
    context: SolveContext

    @property
    def M(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def value(self) -> float:
        return self.root.cost_to_go

    def nodes_at(self, depth: int) -> list[tuple[float, ValueNode]]:
        """(accumulated stage cost from the root, node) for every node at ``depth``."""
        level = [(0.0, self.root)]
        for _ in range(depth):
            nxt = []
            for acc, node in level:
                for c, child in zip(node.stage_costs, node.children):
                    nxt.append((acc + c, child))
            level = nxt
        return level

    def optimal_signal(self) -> ControlSignal:
        node, labels = self.root, []
        while node.children:
            labels.append(node.best_control)
            node = node.children[node.best_control]
        return ControlSignal(self.breakpoints, tuple(labels))

    def to_json(self) -> str:
        rows = []
        for depth in range(self.M + 1):
            for acc, node in self.nodes_at(depth):
                rows.append({"slice": node.slice_index, "time": node.time, "path": list(node.path),
                             "cost_to_go": node.cost_to_go, "path_cost": acc,
                             "best_control": node.best_control, "stage_costs": node.stage_costs})
        doc = {"breakpoints": list(self.breakpoints), "value": self.value, "nodes": rows,
               "params": self.context.params.as_dict(), "cost": self.context.spec.as_dict(),
               "dt": self.context.dt, "scheme": self.context.scheme}
        return json.dumps(doc, sort_keys=True, indent=1)

    def write_json(self, path: str | Path):
        Path(path).write_text(self.to_json() + "\n")


def write_signal_csv(signal: ControlSignal, path: str | Path, header: dict | None = None):
    with open(path, "w", newline="") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["breakpoint", "label"])
        for b, a in zip(signal.breakpoints, list(signal.labels) + [""]):
            w.writerow([repr(float(b)), a])


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CBF_THREADS", "1")))
    except ValueError:
        return 1


def _solve(node: ValueNode, bps: Sequence[float], ctx: SolveContext) -> ValueNode:
    j = node.slice_index
    if j == len(bps) - 1:
        node.cost_to_go = ctx.spec.g(node.state)
        return node
    best, arg = math.inf, None
    for a in range(ctx.model.size):
        child, stage = _expand(node, a, bps, ctx)
        node.children.append(child)
        node.stage_costs.append(stage)
        total = stage + child.cost_to_go
        if total < best:
            best, arg = total, a
    node.cost_to_go, node.best_control = best, arg
    return node


def _expand(node: ValueNode, a: int, bps: Sequence[float], ctx: SolveContext) -> tuple[ValueNode, float]:
    j = node.slice_index
    tr = ctx.run(node.state, bps[j], bps[j + 1], a)
    stage = running_cost(tr, ctx.spec)[0]
    child = ValueNode(j + 1, bps[j + 1], tr.final, node.path + (a,))
    return _solve(child, bps, ctx), stage


def value_on_breakpoints(z0: SpectralField, breakpoints: Sequence[float], ctx: SolveContext,
                         workers: int | None = None) -> ValueTree:
    """Exhaustive minimisation over label sequences on the given breakpoints."""
    bps = tuple(float(b) for b in breakpoints)
    K, M = ctx.model.size, len(bps) - 1
    if M < 1:
        raise ValueError("need at least one slice")
    if K**M > MAX_SIGNALS:
        raise BudgetError(K, M)
    ControlSignal(bps, (0,) * M)  # validates ordering
    root = ValueNode(0, bps[0], z0, ())
    workers = thread_count() if workers is None else workers
    if workers > 1 and K > 1:
        with ThreadPoolExecutor(max_workers=min(workers, K)) as pool:
            results = list(pool.map(lambda a: _expand(root, a, bps, ctx), range(K)))
    else:
        results = [_expand(root, a, bps, ctx) for a in range(K)]
    best, arg = math.inf, None
    for a, (child, stage) in enumerate(results):
        root.children.append(child)
        root.stage_costs.append(stage)
        if stage + child.cost_to_go < best:
            best, arg = stage + child.cost_to_go, a
    root.cost_to_go, root.best_control = best, arg
    return ValueTree(root, bps, ctx)


def value_bruteforce(t: float, z0: SpectralField, M: int, params: CBFParams, model: ControlModel, spec: CostSpec,
                     T: float, dt: float, scheme: str = "imex-rk2", workers: int | None = None
                     ) -> tuple[float, ControlSignal, ValueTree]:
    """Discrete value function over piecewise-constant controls on M uniform slices of [t, T]."""
    if model.size**M > MAX_SIGNALS:
        raise BudgetError(model.size, M)
    bps = ControlSignal.uniform(t, T, [0] * M).breakpoints
    tree = value_on_breakpoints(z0, bps, SolveContext(params, model, spec, dt, scheme), workers)
    return tree.value, tree.optimal_signal(), tree


def _check_eta(tree: ValueTree, eta: int):
    if not 1 <= eta <= tree.M - 1:
        raise IndexError(f"interior slice index must lie in 1..{tree.M - 1}, got {eta}")


def _relative(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def dpp_residual(tree: ValueTree, eta: int) -> float:
    """|V(t, z) - min over depth-eta nodes of (path cost + V(eta, Z(eta)))|, relative."""
    _check_eta(tree, eta)
    best = min(acc + node.cost_to_go for acc, node in tree.nodes_at(eta))
    return _relative(tree.value, best)


def dpp_residual_fresh(tree: ValueTree, eta: int) -> float:
    """Same split, but every prefix and every tail value is recomputed from scratch."""
    _check_eta(tree, eta)
    ctx, bps = tree.context, tree.breakpoints
    z0 = tree.root.state
    K = ctx.model.size
    best = math.inf
    for prefix in np.ndindex(*([K] * eta)):
        sig = ControlSignal(bps[: eta + 1], tuple(int(a) for a in prefix))
        tr = integrate(z0, sig, None, None, ctx.dt, ctx.params, ctx.model, scheme=ctx.scheme, diagnostics="none")
        stage = math.fsum(running_cost(tr, ctx.spec))
        tail = value_on_breakpoints(tr.final, bps[eta:], ctx, workers=1).value
        best = min(best, stage + tail)
    return _relative(tree.value, best)


def _poly(coeffs: Sequence[float], t: float) -> float:
    return float(sum(c * t**i for i, c in enumerate(coeffs)))


def _dpoly(coeffs: Sequence[float], t: float) -> float:
    return float(sum(i * c * t ** (i - 1) for i, c in enumerate(coeffs) if i > 0))


@dataclass(frozen=True, eq=False)
class TestFunction:
    """psi(t, z) = sign * [phi(t, z) + delta(t) ||z||_V^2].

    ``phi`` is given by value, time-derivative and gradient callables; the
    default quadratic form is q0(t) + (q1(t), z)_H + q2(t) ||z||_H^2 with
    polynomial coefficients.  ``delta`` holds polynomial coefficients of a
    positive function.
    """

    __test__ = False  # not a pytest class

    phi: Callable[[float, SpectralField], float]
    phi_t: Callable[[float, SpectralField], float]
    phi_grad: Callable[[float, SpectralField], SpectralField]
    delta: tuple[float, ...] = (1e-3,)
    sign: float = 1.0

    @classmethod
    def quadratic(cls, q0: Sequence[float] = (0.0,), q1: SpectralField | None = None,
                  q1_poly: Sequence[float] = (1.0,), q2: Sequence[float] = (0.0,), delta: Sequence[float] = (1e-3,)):
        def phi(t, z):
            lin = _poly(q1_poly, t) * inner(q1, z) if q1 is not None else 0.0
            return _poly(q0, t) + lin + _poly(q2, t) * h_norm(z) ** 2

        def phi_t(t, z):
            lin = _dpoly(q1_poly, t) * inner(q1, z) if q1 is not None else 0.0
            return _dpoly(q0, t) + lin + _dpoly(q2, t) * h_norm(z) ** 2

        def phi_grad(t, z):
            out = z * (2.0 * _poly(q2, t))
            return out + q1 * _poly(q1_poly, t) if q1 is not None else out

        return cls(phi, phi_t, phi_grad, tuple(delta))

    @classmethod
    def affine(cls, s: float, z_ref: SpectralField, slope_t: float, slope_z: SpectralField,
               delta: Sequence[float] = (1e-10,)):
        """phi(t, z) = slope_t (t - s) + (slope_z, z - z_ref)."""
        return cls(lambda t, z: slope_t * (t - s) + inner(slope_z, z - z_ref),
                   lambda t, z: slope_t,
                   lambda t, z: slope_z,
                   tuple(delta))

    def negated(self) -> "TestFunction":
        return TestFunction(self.phi, self.phi_t, self.phi_grad, self.delta, -self.sign)

    def delta_at(self, t: float) -> float:
        return _poly(self.delta, t)

    def __call__(self, t: float, z: SpectralField) -> float:
        return self.sign * (self.phi(t, z) + self.delta_at(t) * v_norm(z) ** 2)

    def time_derivative(self, t: float, z: SpectralField) -> float:
        return self.sign * (self.phi_t(t, z) + _dpoly(self.delta, t) * v_norm(z) ** 2)

    def gradient(self, t: float, z: SpectralField) -> SpectralField:
        return (self.phi_grad(t, z) + vnorm_gradient(z) * self.delta_at(t)) * self.sign


def _drift(z: SpectralField, params: CBFParams) -> SpectralField:
    """mu A z + alpha z + B(z) + beta C(z)."""
    bz, cz = nonlinear_terms(z, params)
    return stokes_apply(z, 1) * params.mu + z * params.alpha + bz + cz * params.beta


def supersolution_residual(t: float, z: SpectralField, psi: TestFunction, params: CBFParams,
                           model: ControlModel, spec: CostSpec) -> float:
    """-psi_t + (drift(z), D psi) + F(t, z, -D psi); expected <= 0 where V + psi is minimal."""
    dpsi = psi.gradient(t, z)
    value, _ = hamiltonian(t, z, -dpsi, model, spec)
    return -psi.time_derivative(t, z) + inner(_drift(z, params), dpsi) + value


def subsolution_residual(t: float, z: SpectralField, psi: TestFunction, params: CBFParams,
                         model: ControlModel, spec: CostSpec) -> float:
    """psi_t - (drift(z), D psi) + F(t, z, D psi); expected >= 0 where V - psi is maximal."""
    dpsi = psi.gradient(t, z)
    value, _ = hamiltonian(t, z, dpsi, model, spec)
    return psi.time_derivative(t, z) - inner(_drift(z, params), dpsi) + value


@dataclass
class HJBSample:
    time: float
    residual: float
    direct: float
    running_cost: float
    directional: list[float]


def hjb_diagnostic(tree: ValueTree, fraction: float = 0.5) -> list[HJBSample]:
    """Supersolution residual along the optimal trajectory at one interior time per slice.

    At time s inside slice j the value function is recomputed on the
    breakpoints (s, tau_{j+1}, ..., T).  One-sided second-order differences
    with h = dt give D_a ~ d/dh V(s + h, Z_a(s + h)); an affine test function whose time and
    state slopes reproduce every D_a (least squares in span{f_a, drift}) then
    makes the supersolution residual equal min_a [D_a + L(z, a)].
    """
    ctx, bps = tree.context, tree.breakpoints
    sig = tree.optimal_signal()
    full = integrate(tree.root.state, sig, None, None, ctx.dt, ctx.params, ctx.model, scheme=ctx.scheme,
                     diagnostics="none")
    out = []
    h = ctx.dt
    for j, (i0, i1) in enumerate(full.segments):
        i = i0 + int(round(fraction * (i1 - i0)))
        if i <= i0 or i >= i1 - 2:
            raise ValueError("slices too short for an interior sample; reduce dt")
        s, z = float(full.times[i]), full.states[i]
        rest = (s,) + bps[j + 1 :]
        v0 = value_on_breakpoints(z, rest, ctx, workers=1).value
        dirs, Ls = [], []
        for a in range(ctx.model.size):
            tr = ctx.run(z, s, s + 2 * h, a)
            v1, v2 = (value_on_breakpoints(tr.states[q], (float(tr.times[q]),) + bps[j + 1 :], ctx, workers=1).value
                      for q in (1, 2))
            # second-order one-sided difference
            dirs.append((-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * h))
            Ls.append(ctx.spec.L(z, a))
        direct = min(d + l for d, l in zip(dirs, Ls))
        psi = _fitted_test_function(s, z, dirs, ctx)
        res = supersolution_residual(s, z, psi, ctx.params, ctx.model, ctx.spec)
        out.append(HJBSample(s, res, direct, min(Ls), dirs))
    return out


def _fitted_test_function(s: float, z: SpectralField, dirs: Sequence[float], ctx: SolveContext) -> TestFunction:
    """Affine psi with -psi_t = g_t, -D phi = G such that g_t + (f_a - drift, G) = D_a for every a."""
    drift = _drift(z, ctx.params)
    forcings = [ctx.model.f(s, a) for a in range(ctx.model.size)]
    basis = forcings + [drift]
    rows = [[1.0] + [inner(f - drift, e) for e in basis] for f in forcings]
    coef, *_ = np.linalg.lstsq(np.array(rows), np.array(dirs), rcond=None)
    G = SpectralField.zeros(z.grid)
    for c, e in zip(coef[1:], basis):
        G = G + e * float(c)
    return TestFunction.affine(s, z, -float(coef[0]), -G, delta=(1e-12,))


def continuity_profile(tree: ValueTree, magnitudes: Sequence[float] | None = None, directions: int = 2,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """max over seeded unit directions e of |V(t, z + h e) - V(t, z)| for each magnitude h."""
    mags = np.logspace(-5, -2, 20) if magnitudes is None else np.asarray(magnitudes, dtype=float)
    z, ctx = tree.root.state, tree.context
    es = [random_field(z.grid, seed + 17 * i) for i in range(directions)]
    dv = []
    for h in mags:
        dv.append(max(abs(value_on_breakpoints(z + e * float(h), tree.breakpoints, ctx, workers=1).value - tree.value)
                      for e in es))
    return mags, np.array(dv)


def growth_profile(tree: ValueTree, scales: Sequence[float] = (1.0, 1.25, 1.5, 1.75, 2.0)) -> tuple[np.ndarray, np.ndarray]:
    """|V(t, lam z)| / (1 + ||lam z||_V^k) over a state-magnitude sweep."""
    z, ctx = tree.root.state, tree.context
    k = ctx.spec.growth_k
    ratios = []
    for lam in scales:
        zz = z * float(lam)
        v = value_on_breakpoints(zz, tree.breakpoints, ctx, workers=1).value
        ratios.append(abs(v) / (1.0 + v_norm(zz) ** k))
    return np.asarray(scales, dtype=float), np.array(ratios)
