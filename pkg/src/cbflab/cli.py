"""Command-line front end: ``cbflab {simulate,verify,value,dpp,sweep} --config FILE``.

Exit codes: 0 success, 1 a hard check failed, 2 usage or configuration
error, 3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import copy
import csv
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import control, verify
from .dynamics import BlowUpError, CBFParams, ControlModel, ControlSignal, RegimeWarning, integrate
from .spectral import SpectralField, TorusGrid, h_norm, lp_norm, random_field, v_norm

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3

DEFAULTS = {
    "seed": None,
    "out": "cbf_out",
    "grid": {"dim": 2, "n": 32, "pad": "3/2"},
    "params": {"mu": 0.05, "alpha": 0.0, "beta": 10.0, "r": 3.0, "convection": True},
    "model": {"controls": 2, "amplitude": 1.0, "slope": 3.0},
    "initial": {"kind": "random", "norm": 1.0, "slope": 3.0},
    "cost": {"running": "enstrophy", "terminal": "h", "penalty": [], "growth_k": 2.0},
    "time": {"t": 0.0, "T": 0.5, "dt": 1e-3, "scheme": "imex-rk2"},
    "simulate": {"labels": [0], "diagnostics": "basic", "snapshots": []},
    "verify": {"identity_samples": 200, "inequality_samples": 100, "empirical_samples": 100,
               "dependence_pairs": 20, "perturbation": 1e-4, "dependence_T": 0.1,
               "dts": [2e-3, 1e-3, 5e-4], "energy_T": 0.2, "energy_diagnostics": "strong"},
    "value": {"slices": 3},
    "dpp": {"tree_tol": 1e-12, "fresh_tol": 1e-9},
    "sweep": {"param": "beta", "values": [1.0, 5.0, 10.0]},
}

SUITES = ("identities", "inequalities", "energy", "dependence", "all")


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}{key}' must be a mapping")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> dict:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {p}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if cfg["seed"] is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    return cfg


def header(cfg: dict) -> dict:
    """Every resolved setting except the output location, for self-describing files."""
    return {k: v for k, v in flatten(cfg).items() if k != "out"}


def flatten(cfg: dict, prefix: str = "") -> dict:
    out = {}
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, dict):
            out.update(flatten(val, f"{prefix}{key}."))
        else:
            out[f"{prefix}{key}"] = val
    return out


class Experiment:
    """Objects built from a resolved config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        g, p = cfg["grid"], cfg["params"]
        try:
            self.grid = TorusGrid(int(g["dim"]), int(g["n"]), Fraction(str(g["pad"])))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RegimeWarning)
                self.params = CBFParams(mu=float(p["mu"]), beta=float(p["beta"]), r=float(p["r"]),
                                        dim=self.grid.dim, alpha=float(p["alpha"]), convection=bool(p["convection"]))
            self.regime_warnings = [str(w.message) for w in caught]
            for msg in self.regime_warnings:
                print(f"warning: {msg}", file=sys.stderr)
            m = cfg["model"]
            self.model = ControlModel.random(self.grid, int(m["controls"]), cfg["seed"], float(m["amplitude"]),
                                             float(m["slope"]))
            c = cfg["cost"]
            self.spec = control.CostSpec(running=c["running"], terminal=c["terminal"],
                                         penalty=tuple(float(x) for x in c["penalty"]),
                                         growth_k=float(c["growth_k"]))
            if c["running"] == "enstrophy+penalty" and len(c["penalty"]) != self.model.size:
                raise ConfigError("cost.penalty needs one entry per control")
            tm = cfg["time"]
            self.t, self.T, self.dt, self.scheme = float(tm["t"]), float(tm["T"]), float(tm["dt"]), tm["scheme"]
            self.z0 = self._initial(cfg["initial"])
        except (ValueError, TypeError, KeyError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from err

    def _initial(self, spec: dict) -> SpectralField:
        kind = spec["kind"]
        if kind == "zero":
            return SpectralField.zeros(self.grid)
        if kind == "random":
            return random_field(self.grid, self.cfg["seed"], slope=float(spec["slope"]), norm=float(spec["norm"]))
        if kind == "taylor-green":
            if self.grid.dim != 2:
                raise ConfigError("taylor-green initial data is two-dimensional")
            s, c, tp = np.sin, np.cos, 2 * np.pi
            z = SpectralField.from_function(self.grid, [lambda x, y: s(tp * x) * c(tp * y),
                                                        lambda x, y: -c(tp * x) * s(tp * y)], solenoidal=True)
            return z * (float(spec["norm"]) / h_norm(z))
        raise ConfigError(f"unknown initial kind {kind!r}; use random, zero or taylor-green")

    def signal(self, labels) -> ControlSignal:
        labels = [int(a) for a in labels]
        sig = ControlSignal.uniform(self.t, self.T, labels)
        sig.validate_for(self.model)
        return sig


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {out}: {err}") from err
    return out


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def cmd_simulate(cfg: dict, args) -> int:
    exp = Experiment(cfg)
    out = _out_dir(cfg)
    sc = cfg["simulate"]
    sig = exp.signal(sc["labels"])
    snaps = [float(x) for x in sc["snapshots"]]
    traj = integrate(exp.z0, sig, exp.t, exp.T, exp.dt, exp.params, exp.model, scheme=exp.scheme,
                     diagnostics=sc["diagnostics"] if sc["diagnostics"] != "none" else "basic",
                     snapshot_times=snaps, snapshot_dir=out)
    traj.to_csv(out / "trajectory.csv", header=header(cfg))
    z = traj.final
    weak = traj.step_residuals.get("weak")
    _say(args, f"t={traj.times[-1]:g}  ||Z||_H={h_norm(z):.6e}  ||Z||_V={v_norm(z):.6e}  "
               f"||Z||_L{exp.params.r + 1:g}={lp_norm(z, exp.params.r + 1):.6e}",
         f"max |energy residual| = {float(np.max(np.abs(weak))) if weak is not None and weak.size else 0.0:.3e}",
         f"wrote {out / 'trajectory.csv'}")
    return EXIT_OK


def _suite_reports(exp: Experiment, suite: str) -> list[verify.EstimateReport]:
    vc, seed = exp.cfg["verify"], exp.cfg["seed"]
    reports = []
    if suite in ("identities", "all"):
        reports += verify.check_identity_suite(exp.grid, exp.params, int(vc["identity_samples"]), seed)
    if suite in ("inequalities", "all"):
        reports += verify.check_inequality_suite(exp.grid, exp.params, int(vc["inequality_samples"]), seed,
                                                 empirical_samples=int(vc["empirical_samples"]))
    if suite in ("energy", "all"):
        sig = ControlSignal((exp.t, exp.t + float(vc["energy_T"])), (0,))
        zero = ControlModel.zero(exp.grid)
        dts = [float(x) for x in vc["dts"]]
        orders, trajs = verify.balance_convergence(exp.z0, sig, exp.params, zero, dts, exp.scheme,
                                                   vc["energy_diagnostics"])
        reports += orders
        reports += verify.check_energy_estimates(trajs[-1], exp.params, zero)
    if suite in ("dependence", "all"):
        meta = {"dim": exp.grid.dim, "n": exp.grid.n, "seed": seed, "params": exp.params.as_dict()}
        if exp.params.beta > 0 and (exp.params.r > 3 or exp.params.critical_ok):
            sig = ControlSignal((exp.t, exp.t + float(vc["dependence_T"])), (0,))
            reports.append(verify.dependence_suite(exp.grid, exp.params, exp.model, sig, int(vc["dependence_pairs"]),
                                                   seed, float(vc["perturbation"]), exp.dt))
        else:
            reports.append(verify.EstimateReport("continuous_dependence", "skipped", 0, 0, 0, 0, True, hard=False,
                                                 metadata=dict(meta, reason="needs r > 3, or r = 3 with 2 beta mu >= 1")))
    return reports


def cmd_verify(cfg: dict, args) -> int:
    suite = args.suite or "all"
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    exp = Experiment(cfg)
    out = _out_dir(cfg)
    reports = _suite_reports(exp, suite)
    path = out / f"reports_{suite}.jsonl"
    verify.write_jsonl(reports, path)
    _say(args, verify.summary_table(reports), f"wrote {len(reports)} reports to {path}")
    for r in reports:
        if r.kind == "skipped":
            _say(args, f"skipped {r.name}: {r.metadata.get('reason', '')}")
        elif not r.passed and not r.hard:
            print(f"warning: empirical check {r.name} unstable (spread {r.residual:.3g})", file=sys.stderr)
    bad = verify.failures(reports)
    if bad:
        print("failed checks: " + ", ".join(bad), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _value(exp: Experiment, args):
    M = int(exp.cfg["value"]["slices"])
    return control.value_bruteforce(exp.t, exp.z0, M, exp.params, exp.model, exp.spec, exp.T, exp.dt, exp.scheme)


def cmd_value(cfg: dict, args) -> int:
    exp = Experiment(cfg)
    out = _out_dir(cfg)
    value, sig, tree = _value(exp, args)
    tree.write_json(out / "value_tree.json")
    control.write_signal_csv(sig, out / "optimal_signal.csv", header=header(cfg))
    _say(args, f"V(t, z0) = {value:.12e}", f"optimal labels: {list(sig.labels)}",
         f"wrote {out / 'value_tree.json'} and {out / 'optimal_signal.csv'}")
    return EXIT_OK


def cmd_dpp(cfg: dict, args) -> int:
    exp = Experiment(cfg)
    out = _out_dir(cfg)
    value, sig, tree = _value(exp, args)
    tree.write_json(out / "value_tree.json")
    control.write_signal_csv(sig, out / "optimal_signal.csv", header=header(cfg))
    tol_tree, tol_fresh = float(cfg["dpp"]["tree_tol"]), float(cfg["dpp"]["fresh_tol"])
    rows, ok = [], True
    for eta in range(1, tree.M):
        a, b = control.dpp_residual(tree, eta), control.dpp_residual_fresh(tree, eta)
        ok &= a <= tol_tree and b <= tol_fresh
        rows.append((eta, tree.breakpoints[eta], a, b))
    with open(out / "dpp.csv", "w", newline="") as fh:
        for key, val in header(cfg).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "time", "tree_residual", "fresh_residual"])
        for eta, t, a, b in rows:
            w.writerow([eta, repr(t), repr(a), repr(b)])
    _say(args, f"V(t, z0) = {value:.12e}", *(f"eta={e} tree={a:.3e} fresh={b:.3e}" for e, _, a, b in rows),
         f"wrote {out / 'dpp.csv'}")
    if not rows:
        _say(args, "no interior slices (slices = 1)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(cfg: dict, args) -> int:
    sw = cfg["sweep"]
    name = sw["param"]
    if name not in DEFAULTS["params"]:
        raise ConfigError(f"sweep.param must be one of {sorted(DEFAULTS['params'])}")
    out = _out_dir(cfg)
    rows = []
    for val in sw["values"]:
        sub = copy.deepcopy(cfg)
        sub["params"][name] = val
        exp = Experiment(sub)
        sig = exp.signal(cfg["simulate"]["labels"])
        traj = integrate(exp.z0, sig, exp.t, exp.T, exp.dt, exp.params, exp.model, scheme=exp.scheme)
        weak = traj.step_residuals["weak"]
        rows.append((val, h_norm(traj.final), v_norm(traj.final), float(np.max(np.abs(weak)))))
    with open(out / "sweep.csv", "w", newline="") as fh:
        for key, v in header(cfg).items():
            fh.write(f"# {key}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name, "final_h_norm", "final_v_norm", "max_energy_residual"])
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    _say(args, *(f"{name}={r[0]}  ||Z(T)||_H={r[1]:.6e}" for r in rows), f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "value": cmd_value, "dpp": cmd_dpp, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbflab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML experiment file")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--suite", help=f"verify suite: {', '.join(SUITES)}")
    ap.add_argument("--quiet", action="store_true", help="suppress the stdout summary")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except control.BudgetError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as err:
        print(f"blow-up: {err} (last valid time {err.last_time:g})", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
