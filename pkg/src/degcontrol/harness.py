"""Scenario configuration, presets, and reproducible experiment runs.

A ScenarioConfig is a nested plain dictionary with defaults for every
field; one config plus a seed fully determines a run.  run_scenario
dispatches on the experiment kind, writes CSV files for curves and a
JSON report for scalars, and returns a RunRecord whose hash covers the
canonical config so that identical (config, seed) pairs reproduce
identical outputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .carleman import (CarlemanParams, CarlemanWeights, empirical_carleman,
                       empirical_observability)
from .geometry import ControlGeometry
from .grids import TrajectoryField
from .nash import (GameSpec, convexity_margin, evaluate_functional,
                   fit_mu_star, functional_gradient, make_default_targets,
                   nash_fixed_point)
from .nullcontrol import (HUMSolver, LinearControlProblem, NewtonFailureError,
                          solve_linear_null_control,
                          solve_nonlinear_null_control,
                          verify_additional_estimates)
from .semilinear import SemilinearF
from .solvers import (CylinderProblem, StepFailureError, SweepFailureError,
                      dump_trajectory_csv, energy_diagnostics,
                      solve_forward_semilinear)

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioConfig",
    "RunRecord",
    "ConfigError",
    "default_config",
    "validate_config",
    "preset",
    "list_presets",
    "run_scenario",
    "emit_plot_data",
]

SCHEMA_VERSION = 1

KINDS = ("forward", "nash", "convexity", "observability", "linear-control",
         "nonlinear-control", "diagnostics")

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "geometry": {
        "alpha": 0.5,
        "b_exp": 2.0,
        "family": "affine",
        "l0": 1.0,
        "k": 0.25,
        "w": 1.0,
        "T": 1.0,
    },
    "grid": {"N": 64, "gamma": 2.0, "M": 128},
    "game": {
        "windows": {
            "O": [0.3, 0.5],
            "O1": [0.55, 0.7],
            "O2": [0.75, 0.9],
            "Od": [0.4, 0.6],
        },
        "alpha1": 1.0,
        "alpha2": 1.0,
        "mu1": 5.0,
        "mu2": 5.0,
        "target_amplitude": 1.0,
        "jacobian_weighting": True,
    },
    "nonlinearity": {"label": "sinusoidal", "kappa1": 2.0, "kappa2": 2.0},
    "carleman": {
        "s": 2.0,
        "lam": None,
        "alpha_p": 0.35,
        "beta_p": 0.45,
        "m_floor": None,
        "cap_ratio": 1e3,
    },
    "solver": {
        "picard_tol": 1e-10,
        "max_sweeps": 300,
        "newton_tol": 1e-9,
        "newton_max": 10,
        "tol_terminal": 1e-6,
    },
    "experiment": {
        "kind": "forward",
        "y0_amplitude": 0.01,
        "y0_mode": "sine",
        "h_amplitude": 0.0,
        "samples": 20,
        "scale_factors": [1.0],
        "mu_grid": [1.0, 5.0, 25.0, 125.0],
        "refine": False,
        "budget_limit": None,
        "study": None,
    },
}


class ConfigError(ValueError):
    """Raised when a scenario config fails validation; carries all issues."""

    def __init__(self, issues):
        super().__init__("invalid config:\n  " + "\n  ".join(issues))
        self.issues = list(issues)


def default_config() -> dict:
    return copy.deepcopy(_DEFAULTS)


def _merge(base: dict, override: dict, path: str, issues: list) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            issues.append(f"unknown field {here}")
            continue
        if isinstance(base[key], dict) and not here.endswith("windows"):
            if not isinstance(val, dict):
                issues.append(f"{here}: expected a section, got {type(val).__name__}")
                continue
            out[key] = _merge(base[key], val, here, issues)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ScenarioConfig:
    """Nested configuration with defaults for every field."""

    data: dict = field(default_factory=default_config)

    @classmethod
    def from_dict(cls, overrides: dict) -> "ScenarioConfig":
        issues: list = []
        merged = _merge(_DEFAULTS, overrides, "", issues)
        if issues:
            raise ConfigError(issues)
        return cls(data=merged)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.data, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def canonical_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __getitem__(self, key):
        return self.data[key]


def validate_config(config: ScenarioConfig | dict) -> list:
    """Returns the full list of offending fields (empty means valid)."""
    if isinstance(config, ScenarioConfig):
        cfg = config.data
    else:
        issues: list = []
        cfg = _merge(_DEFAULTS, config, "", issues)
        if issues:
            return issues
    issues = []
    g = cfg["geometry"]
    if not 0.0 < g["alpha"] < 1.0:
        issues.append("geometry.alpha: weak degeneracy requires 0 < alpha < 1")
    if g["T"] <= 0:
        issues.append("geometry.T: must be positive")
    if g["family"] not in ("constant", "affine", "exponential", "sinusoidal"):
        issues.append(f"geometry.family: unknown family {g['family']!r}")
    if g["l0"] < 1.0:
        issues.append("geometry.l0: domain scale must satisfy l(t) >= 1")
    grid = cfg["grid"]
    if not 8 <= int(grid["N"]) <= 1024:
        issues.append("grid.N: supported range is [8, 1024]")
    if not 8 <= int(grid["M"]) <= 4096:
        issues.append("grid.M: supported range is [8, 4096]")
    if grid["gamma"] < 1.0:
        issues.append("grid.gamma: grading exponent must be >= 1")
    game = cfg["game"]
    wins = game["windows"]
    window_issues = []
    for name in ("O", "O1", "O2", "Od"):
        if name not in wins:
            window_issues.append(f"game.windows.{name}: missing")
            continue
        a, b = wins[name]
        if not (0.0 < a < b < 1.0):
            window_issues.append(
                f"game.windows.{name}: must satisfy 0 < a < b < 1")
    issues.extend(window_issues)
    if not window_issues:
        try:
            ControlGeometry(O=tuple(wins["O"]), O1=tuple(wins["O1"]),
                            O2=tuple(wins["O2"]), Od=tuple(wins["Od"]))
        except ValueError as exc:
            issues.append(f"game.windows: {exc}")
    for name in ("alpha1", "alpha2", "mu1", "mu2"):
        if game[name] <= 0:
            issues.append(f"game.{name}: must be positive")
    nl = cfg["nonlinearity"]
    if nl["label"] not in ("sinusoidal", "zero"):
        issues.append(f"nonlinearity.label: unknown label {nl['label']!r}")
    car = cfg["carleman"]
    if car["s"] <= 0:
        issues.append("carleman.s: must be positive")
    if not (0.0 < car["alpha_p"] < car["beta_p"] < 1.0):
        issues.append("carleman: need 0 < alpha_p < beta_p < 1")
    if car["cap_ratio"] < 10.0:
        issues.append("carleman.cap_ratio: must be at least 10")
    exp = cfg["experiment"]
    if exp["kind"] not in KINDS:
        issues.append(
            f"experiment.kind: {exp['kind']!r} not one of {', '.join(KINDS)}")
    if exp["samples"] < 1:
        issues.append("experiment.samples: must be at least 1")
    return issues


_PRESETS = {
    "theorem1-small-data": {
        "experiment": {"kind": "nonlinear-control", "y0_amplitude": 0.01,
                       "scale_factors": [1.0, 3.0, 300.0]},
    },
    "prop2-mu-sweep": {
        "experiment": {"kind": "convexity",
                       "mu_grid": [1.0, 5.0, 25.0, 125.0]},
    },
    "observability-baseline": {
        "experiment": {"kind": "observability", "samples": 20},
    },
    "mms-convergence": {
        "experiment": {"kind": "diagnostics", "study": "mms-convergence"},
    },
}
_PRESET_ALIASES = {"small-sine": "theorem1-small-data"}


def list_presets() -> list:
    return sorted(_PRESETS)


def preset(name: str) -> ScenarioConfig:
    key = _PRESET_ALIASES.get(name, name)
    if key not in _PRESETS:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return ScenarioConfig.from_dict(copy.deepcopy(_PRESETS[key]))


@dataclass
class RunRecord:
    """Everything needed to reproduce and audit one scenario run."""

    config_hash: str
    seed: int
    kind: str
    timings: dict
    report: dict
    outputs: list
    deterministic: bool = True

    def to_json(self, path=None) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "kind": self.kind,
            "deterministic": self.deterministic,
            "timings": self.timings,
            "report": self.report,
            "outputs": self.outputs,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _build_F(cfg: dict) -> SemilinearF:
    nl = cfg["nonlinearity"]
    if nl["label"] == "zero":
        return SemilinearF.zero()
    return SemilinearF.sinusoidal(nl["kappa1"], nl["kappa2"])


def _build_problem(cfg: dict) -> CylinderProblem:
    g, grid, game = cfg["geometry"], cfg["grid"], cfg["game"]
    wins = game["windows"]
    windows = ControlGeometry(O=tuple(wins["O"]), O1=tuple(wins["O1"]),
                              O2=tuple(wins["O2"]), Od=tuple(wins["Od"]))
    return CylinderProblem.default(
        N=int(grid["N"]), M=int(grid["M"]), alpha=g["alpha"], T=g["T"],
        gamma=grid["gamma"], b_exp=g["b_exp"], family=g["family"],
        k=g["k"], windows=windows, F=_build_F(cfg))


def _build_weights(cfg: dict, prob: CylinderProblem) -> CarlemanWeights:
    car = cfg["carleman"]
    params = CarlemanParams(s=car["s"], lam=car["lam"],
                            alpha_p=car["alpha_p"], beta_p=car["beta_p"],
                            m_floor=car["m_floor"],
                            cap_ratio=car["cap_ratio"])
    return CarlemanWeights(params, prob.deg, prob.grid, prob.mesh)


def _build_game(cfg: dict, prob: CylinderProblem,
                weights: CarlemanWeights | None = None) -> GameSpec:
    g = cfg["game"]
    game = GameSpec(alpha1=g["alpha1"], alpha2=g["alpha2"],
                    mu1=g["mu1"], mu2=g["mu2"],
                    jacobian_weighting=g["jacobian_weighting"])
    if g["target_amplitude"] != 0.0:
        game.target1, game.target2 = make_default_targets(
            prob, weights=weights, amplitude=g["target_amplitude"])
    return game


def _initial_data(cfg: dict, prob: CylinderProblem,
                  rng: np.random.Generator) -> np.ndarray:
    exp = cfg["experiment"]
    x = prob.grid.nodes
    if exp["y0_mode"] == "sine":
        y0 = exp["y0_amplitude"] * np.sin(np.pi * x)
    elif exp["y0_mode"] == "random":
        modes = np.arange(1, 6)
        coeff = rng.standard_normal(modes.size) / modes
        y0 = exp["y0_amplitude"] * (
            np.sin(np.pi * np.outer(x, modes)) @ coeff)
    else:
        raise ConfigError([f"experiment.y0_mode: unknown {exp['y0_mode']!r}"])
    y0[0] = y0[-1] = 0.0
    return y0


def _write_csv(path: Path, header: str, rows: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", header=header,
               comments="")


def run_scenario(config: ScenarioConfig | dict, out_dir, seed: int = 0,
                 deterministic: bool = True) -> RunRecord:
    """Runs one experiment, writes its artifacts, returns the record."""
    if not isinstance(config, ScenarioConfig):
        config = ScenarioConfig.from_dict(config)
    issues = validate_config(config)
    if issues:
        raise ConfigError(issues)
    cfg = config.data
    kind = cfg["experiment"]["kind"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    timings: dict = {}
    outputs: list = []
    t_start = time.perf_counter()
    runner = _RUNNERS[kind if cfg["experiment"]["study"] is None
                      else cfg["experiment"]["study"]]
    report = runner(cfg, out, rng, outputs, timings)
    timings["total_s"] = round(time.perf_counter() - t_start, 3)
    record = RunRecord(config_hash=config.canonical_hash(), seed=seed,
                       kind=kind, timings=timings, report=report,
                       outputs=outputs, deterministic=deterministic)
    record.to_json(out / "report.json")
    outputs.append("report.json")
    config.to_json(out / "config.json")
    return record


def _run_forward(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    y0 = _initial_data(cfg, prob, rng)
    h = None
    if cfg["experiment"]["h_amplitude"] != 0.0:
        h = prob.new_field()
        h.values[:] = (cfg["experiment"]["h_amplitude"]
                       * np.sin(np.pi * prob.grid.nodes)[None, :])
    y = solve_forward_semilinear(prob, y0, h=h)
    dump_trajectory_csv(y, out / "state.csv")
    outputs.append("state.csv")
    diag = energy_diagnostics(prob, {"y": y})
    return {
        "y0_l2": prob.grid.norm(y0),
        "terminal_l2": prob.grid.norm(y.values[-1]),
        "l2q": y.l2q_norm(),
        "sup_l2": diag.sup_l2["y"],
        "grad_energy": diag.grad_energy["y"],
    }


def _run_nash(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    game = _build_game(cfg, prob, weights)
    y0 = _initial_data(cfg, prob, rng)
    h = prob.new_field()
    h.values[:] = (cfg["experiment"]["h_amplitude"]
                   * np.sin(np.pi * prob.grid.nodes)[None, :])
    sol = nash_fixed_point(prob, game, h, y0)
    for name in ("v1", "v2"):
        dump_trajectory_csv(getattr(sol, name), out / f"{name}.csv")
        outputs.append(f"{name}.csv")
    J1 = evaluate_functional(prob, game, 1, sol.y, sol.v1)
    J2 = evaluate_functional(prob, game, 2, sol.y, sol.v2)
    # J-landscape along a probe line through the equilibrium
    eps_grid = np.linspace(-0.5, 0.5, 21)
    probe = sol.v1.copy()
    vals = []
    for eps in eps_grid:
        v1 = sol.v1.copy()
        v1.values = (1.0 + eps) * probe.values
        y = solve_forward_semilinear(prob, y0, h=h, v1=v1, v2=sol.v2)
        vals.append(evaluate_functional(prob, game, 1, y, v1))
    _write_csv(out / "j_landscape.csv", "eps,J1",
               np.column_stack([eps_grid, vals]))
    outputs.append("j_landscape.csv")
    return {
        "sweeps": len(sol.history),
        "residuals": sol.residuals,
        "J1": J1,
        "J2": J2,
    }


def _run_convexity(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    game = _build_game(cfg, prob, weights)
    y0 = _initial_data(cfg, prob, rng)
    h = prob.new_field()
    margins = []
    for mu in cfg["experiment"]["mu_grid"]:
        game.mu1 = game.mu2 = float(mu)
        state = nash_fixed_point(prob, game, h, y0)
        m = convexity_margin(prob, game, state, probes=4, rng=rng)
        margins.append((mu, m["margin"], m["certified"]))
    fit = fit_mu_star(prob, game, h, y0, rng=rng)
    _write_csv(out / "margins.csv", "mu,margin,certified",
               np.array([(a, b, float(c)) for a, b, c in margins]))
    outputs.append("margins.csv")
    return {
        "mu_grid": [m[0] for m in margins],
        "margins": [m[1] for m in margins],
        "certified": [bool(m[2]) for m in margins],
        "mu_star": fit["mu_star"],
    }


def _run_observability(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    game = _build_game(cfg, prob, weights)
    n = cfg["experiment"]["samples"]
    obs = empirical_observability(prob, weights, samples=n, rng=rng,
                                  mus=game.mus, alphas=game.alphas)
    car = empirical_carleman(prob, weights, samples=n, rng=rng,
                             mus=game.mus, alphas=game.alphas)
    _write_csv(out / "ratios.csv", "observability,carleman",
               np.column_stack([obs["ratios"], car["ratios"]]))
    outputs.append("ratios.csv")
    return {
        "observability_max_ratio": obs["max_ratio"],
        "carleman_max_ratio": car["max_ratio"],
        "lambda": weights.lam,
        "comp_pesos_ok": weights.identity_report()["comp_pesos_ok"],
    }


def _run_linear_control(cfg, out, rng, outputs, timings):
    cfg = copy.deepcopy(cfg)
    cfg["nonlinearity"]["label"] = "zero"
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    game = _build_game(cfg, prob, weights)
    y0 = _initial_data(cfg, prob, rng)
    lcp = LinearControlProblem(prob, weights, game, y0)
    limit = cfg["experiment"]["budget_limit"]
    triple = solve_linear_null_control(
        lcp, budget_limit=np.inf if limit is None else float(limit))
    est = verify_additional_estimates(lcp, triple)
    dump_trajectory_csv(triple.y, out / "state.csv")
    dump_trajectory_csv(triple.h, out / "leader.csv")
    outputs.extend(["state.csv", "leader.csv"])
    return {
        "terminal_l2": triple.terminal_norm,
        "y0_l2": prob.grid.norm(y0),
        "budget_constant": triple.budget_constant,
        "budget_exceeded": triple.budget_exceeded,
        "kappa0": triple.kappa0,
        "reconstruction": triple.residuals,
        "additional_estimates": {k: est[k] for k in
                                 ("C_prop5", "C_prop6", "all_finite")},
    }


def _run_nonlinear_control(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    game = _build_game(cfg, prob, weights)
    sv = cfg["solver"]
    base_y0 = _initial_data(cfg, prob, rng)
    hum = HUMSolver(prob, weights, game)
    results = {}
    for factor in cfg["experiment"]["scale_factors"]:
        try:
            triple, history = solve_nonlinear_null_control(
                prob, weights, game, factor * base_y0,
                tol_z=sv["newton_tol"], tol_terminal=sv["tol_terminal"],
                max_newton=int(sv["newton_max"]), hum=hum)
        except (NewtonFailureError, StepFailureError, SweepFailureError) as exc:
            results[str(factor)] = {"converged": False,
                                    "failure": type(exc).__name__}
            continue
        wt = game.time_weight(prob)
        v1 = triple.p1.copy()
        v1.values *= -prob.indicator("O1")[None, :] / (game.mu1 * wt[:, None])
        v2 = triple.p2.copy()
        v2.values *= -prob.indicator("O2")[None, :] / (game.mu2 * wt[:, None])
        qeq = []
        for i, v in ((1, v1), (2, v2)):
            r = functional_gradient(prob, game, i, triple.h, v1, v2,
                                    factor * base_y0)
            qeq.append(float(np.max(np.abs(r.values))
                             / (1.0 + np.max(np.abs(v.values)))))
        results[str(factor)] = {
            "converged": True,
            "newton_steps": len(history),
            "terminal_l2": triple.terminal_norm,
            "quasi_equilibrium_residuals": qeq,
            "budget_constant": triple.budget_constant,
        }
        if factor == 1.0:
            dump_trajectory_csv(triple.y, out / "state.csv")
            dump_trajectory_csv(triple.h, out / "leader.csv")
            outputs.extend(["state.csv", "leader.csv"])
    return {"scales": results}


def _run_diagnostics(cfg, out, rng, outputs, timings):
    prob = _build_problem(cfg)
    weights = _build_weights(cfg, prob)
    report = weights.identity_report()
    weights.to_csv(out / "weights.csv")
    outputs.append("weights.csv")
    y0 = _initial_data(cfg, prob, rng)
    y = solve_forward_semilinear(prob, y0)
    diag = energy_diagnostics(prob, {"y": y})
    return {
        "weight_identities": {k: report[k] for k in
                              ("identity_log_rel", "comp_pesos_ok",
                               "lambda", "zeta0")},
        "sup_l2": diag.sup_l2["y"],
        "grad_energy": diag.grad_energy["y"],
    }


def _run_mms(cfg, out, rng, outputs, timings):
    """Manufactured-solution refinement study; reports both slopes."""
    from .mms import space_order_study, time_order_study
    tstudy = time_order_study()
    sstudy = space_order_study()
    _write_csv(out / "mms_time.csv", "M,error",
               np.column_stack([tstudy["M"], tstudy["errors"]]))
    _write_csv(out / "mms_space.csv", "N,error",
               np.column_stack([sstudy["N"], sstudy["errors"]]))
    outputs.extend(["mms_time.csv", "mms_space.csv"])
    return {"time_slope": tstudy["slope"], "space_slope": sstudy["slope"]}


_RUNNERS = {
    "forward": _run_forward,
    "nash": _run_nash,
    "convexity": _run_convexity,
    "observability": _run_observability,
    "linear-control": _run_linear_control,
    "nonlinear-control": _run_nonlinear_control,
    "diagnostics": _run_diagnostics,
    "mms-convergence": _run_mms,
}


def emit_plot_data(record: RunRecord, out_dir) -> list:
    """Writes plot-ready CSV bundles for a finished run.

    Curve files produced during the run are already CSV; this adds a
    scalar summary table so plotting tools need no JSON parsing.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def flatten(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                flatten(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(obj, (list, tuple)):
            for i, v in enumerate(obj):
                flatten(f"{prefix}[{i}]", v)
        elif isinstance(obj, (int, float, bool, np.floating, np.integer)):
            rows.append((prefix, float(obj)))

    flatten("", record.report)
    path = out / "summary.csv"
    with open(path, "w") as fh:
        fh.write("quantity,value\n")
        for name, val in rows:
            fh.write(f"{name},{val!r}\n")
    return [str(path)]
