"""Command-line front end.

One JSON config file drives each run; the command dispatches to the library,
writes a result JSON that embeds the fully resolved config and seed, emits
CSV artifacts, and renders figures next to them. Exit codes: 0 success,
1 estimation failure, 2 configuration error.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .model import Dataset, SearchSpace, SolveStatus, read_matrix_csv
from .optim import SolverConfig
from .estimator import (BcdConfig, MiqpForm, bcd, default_search_space,
                        estimate_exact, estimate_miqp)
from .inference import (BootstrapConfig, FactorMode, HypothesisSpec, WeightDist,
                        bootstrap_lr, linearity_test, sup_q)
from .pca import estimate_factors
from .selection import SelectionConfig, default_lambda, select_factors
from .simulate import (DgpConfig, DriftConfig, McScenario, drift_function,
                       finalize_study, generate_dgp, run_bootstrap_size_study,
                       run_linearity_study, run_monte_carlo)

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main"]

THREADS_ENV = "FACTORREGIME_THREADS"


class ConfigError(ValueError):
    """Configuration file violates the schema; message names the field path."""


@dataclass
class RunConfig:
    command: str
    payload: dict
    seed: int
    threads: int
    out: str


# ---------------------------------------------------------------------------
# schema validation
# ---------------------------------------------------------------------------

def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_kind(key: str, v, kind: str):
    if kind == "int":
        if not (isinstance(v, int) and not isinstance(v, bool)):
            raise ConfigError(f"{key}: expected integer, got {v!r}")
    elif kind == "num":
        if not _is_num(v):
            raise ConfigError(f"{key}: expected number, got {v!r}")
    elif kind == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{key}: expected string, got {v!r}")
    elif kind == "bool":
        if not isinstance(v, bool):
            raise ConfigError(f"{key}: expected boolean, got {v!r}")
    elif kind == "list":
        if not isinstance(v, list):
            raise ConfigError(f"{key}: expected list, got {v!r}")
    elif kind == "path":
        if not isinstance(v, str):
            raise ConfigError(f"{key}: expected file path, got {v!r}")
        if not Path(v).exists():
            raise ConfigError(f"{key}: file does not exist: {v}")
    return v


def _validate(payload, schema: dict, path: str = "") -> dict:
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for key in payload:
        if key not in schema:
            raise ConfigError(f"unknown key '{path}{key}'")
    out = {}
    for key, spec in schema.items():
        kind, required, default = spec[0], spec[1], spec[2]
        check = spec[3] if len(spec) > 3 else None
        full = f"{path}{key}"
        if key not in payload or payload[key] is None:
            if required:
                raise ConfigError(f"missing required key '{full}'")
            out[key] = default
            continue
        v = payload[key]
        if isinstance(kind, dict):
            out[key] = _validate(v, kind, full + ".")
            continue
        _check_kind(full, v, kind)
        if check is not None and not check(v):
            raise ConfigError(f"{full}: value {v!r} outside the documented range")
        out[key] = v
    return out


_SOLVER = {
    "time_limit": ("num", False, 60.0, lambda v: v > 0),
    "gap_tol": ("num", False, 1e-6, lambda v: v > 0),
    "node_limit": ("int", False, 200_000, lambda v: v > 0),
    "relaxation_tol": ("num", False, 1e-9, lambda v: v > 0),
    "relaxation_max_iter": ("int", False, 20_000, lambda v: v > 0),
}

_SPACE = {
    "alpha_lo": ("list", False, None),
    "alpha_hi": ("list", False, None),
    "gamma2_lo": ("list", False, None),
    "gamma2_hi": ("list", False, None),
    "gamma2_bound": ("num", False, 10.0, lambda v: v > 0),
    "tau1": ("num", False, 0.05, lambda v: 0 < v < 1),
    "tau2": ("num", False, 0.95, lambda v: 0 < v < 1),
    "eps_strict": ("num", False, 1e-6, lambda v: v > 0),
}

_DATA = {
    "y_csv": ("path", True, None),
    "x_csv": ("path", True, None),
    "factors_csv": ("path", False, None),
    "panel_csv": ("path", False, None),
    "n_factors": ("int", False, None, lambda v: v >= 1),
}

_DGP = {
    "T": ("int", False, 200, lambda v: v >= 2),
    "N": ("int", False, 200, lambda v: v >= 1),
    "K": ("int", False, 3, lambda v: v >= 1),
    "d_x": ("int", False, 2, lambda v: v >= 1),
    "beta0": ("list", False, None),
    "delta0": ("list", False, None),
    "phi0": ("list", False, None),
    "rho_x": ("num", False, 0.5, lambda v: abs(v) < 1),
    "rho_g": ("list", False, None),
    "rho_e": ("list", False, None),
    "sigma_eps": ("num", False, 0.5, lambda v: v > 0),
    "loading_scale": ("num", False, None, lambda v: v > 0),
    "seed": ("int", False, 0),
}

_BOOT = {
    "B": ("int", False, 199, lambda v: v >= 1),
    "k": ("int", False, 2, lambda v: v >= 1),
    "weights": ("str", False, "rademacher", lambda v: v in ("rademacher", "normal")),
    "factor_mode": ("str", False, "known",
                    lambda v: v in ("known", "pca", "gaussian")),
    "level": ("num", False, 0.05, lambda v: 0 < v < 1),
    "c_thresh": ("num", False, 0.5, lambda v: v >= 0),
}

_SCHEMAS: dict[str, dict] = {
    "simulate": {"dgp": (_DGP, False, {k: s[2] for k, s in _DGP.items()})},
    "estimate": {
        **_DATA,
        "method": ("str", False, "auto",
                   lambda v: v in ("auto", "exact", "miqp", "bcd")),
        "form": ("str", False, "alternative", lambda v: v in ("basic", "alternative")),
        "space": (_SPACE, False, {k: s[2] for k, s in _SPACE.items()}),
        "solver": (_SOLVER, False, {k: s[2] for k, s in _SOLVER.items()}),
        "bcd": ({"max_time_1": ("num", False, 60.0, lambda v: v > 0),
                 "max_time_2": ("num", False, 10.0, lambda v: v > 0),
                 "max_outer_iter": ("int", False, 50, lambda v: v > 0)},
                False, {"max_time_1": 60.0, "max_time_2": 10.0, "max_outer_iter": 50}),
    },
    "bootstrap": {
        **_DATA,
        "hypothesis": ({"R": ("list", True, None), "r": ("list", True, None),
                        "label": ("str", False, "")}, True, None),
        "bootstrap": (_BOOT, False, {k: s[2] for k, s in _BOOT.items()}),
        "space": (_SPACE, False, {k: s[2] for k, s in _SPACE.items()}),
        "solver": (_SOLVER, False, {k: s[2] for k, s in _SOLVER.items()}),
        "dump_draws": ("bool", False, False),
    },
    "test-linearity": {
        **_DATA,
        "B": ("int", True, None, lambda v: v >= 1),
        "weights": ("str", False, "rademacher", lambda v: v in ("rademacher", "normal")),
        "space": (_SPACE, False, {k: s[2] for k, s in _SPACE.items()}),
        "solver": (_SOLVER, False, {k: s[2] for k, s in _SOLVER.items()}),
    },
    "select-factors": {
        **_DATA,
        "selection": ({"lambda": ("num", False, None, lambda v: v >= 0),
                       "p_lo": ("int", False, 0, lambda v: v >= 0),
                       "p_hi": ("int", False, None, lambda v: v >= 0),
                       "candidates": ("list", False, None)},
                      False, {"lambda": None, "p_lo": 0, "p_hi": None, "candidates": None}),
        "space": (_SPACE, False, {k: s[2] for k, s in _SPACE.items()}),
        "solver": (_SOLVER, False, {k: s[2] for k, s in _SOLVER.items()}),
    },
    "montecarlo": {
        "scenario": ("str", True, None,
                     lambda v: v in ("oracle", "observed-no-selection",
                                     "observed-selection", "unobserved",
                                     "bootstrap-known", "bootstrap-estimated",
                                     "linearity")),
        "dgp": (_DGP, False, {k: s[2] for k, s in _DGP.items()}),
        "reps": ("int", False, 100, lambda v: v >= 1),
        "bootstrap": (_BOOT, False, {k: s[2] for k, s in _BOOT.items()}),
        "B": ("int", False, 199, lambda v: v >= 1),
        "gamma2_bound": ("num", False, 10.0, lambda v: v > 0),
        "solver": (_SOLVER, False, {k: s[2] for k, s in _SOLVER.items()}),
    },
    "drift": {
        "omegas": ("list", True, None),
        "g_grid": ("list", False, None),
        "g_lo": ("num", False, -2.0),
        "g_hi": ("num", False, 2.0),
        "g_n": ("int", False, 41, lambda v: v >= 2),
        "mc_draws": ("int", False, 200_000, lambda v: v >= 1),
        "sigma_h": ("num", False, 1.0, lambda v: v > 0),
        "density_q": ("str", False, "std-normal",
                      lambda v: v in ("std-normal", "uniform")),
        "seed": ("int", False, 0),
    },
}

_TOP = {"command", "seed", "threads", "out"}


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    The file must name its command; unknown keys anywhere are rejected and
    defaults are filled so the returned payload is fully resolved.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    command = raw.get("command")
    if command not in _SCHEMAS:
        raise ConfigError(f"command must be one of {sorted(_SCHEMAS)}, got {command!r}")
    payload = {k: v for k, v in raw.items() if k not in _TOP}
    resolved = _validate(payload, _SCHEMAS[command])
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected integer")
    threads = raw.get("threads", int(os.environ.get(THREADS_ENV, "1")))
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads: expected positive integer")
    out = raw.get("out", ".")
    return RunConfig(command, resolved, seed, threads, out)


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------

def _load_dataset(pl: dict):
    y = read_matrix_csv(pl["y_csv"]).ravel()
    X = read_matrix_csv(pl["x_csv"])
    factors = read_matrix_csv(pl["factors_csv"]) if pl["factors_csv"] else None
    panel = read_matrix_csv(pl["panel_csv"]) if pl["panel_csv"] else None
    ds = Dataset(y, X, factors=factors, panel=panel)
    fe = None
    if factors is None:
        if pl["n_factors"] is None:
            raise ConfigError("n_factors is required when only a panel is supplied")
        fe = estimate_factors(panel, pl["n_factors"])
        F = fe.F_full
    else:
        F = ds.factors
    return ds, F, fe


def _build_space(pl: dict, ds: Dataset, F) -> SearchSpace:
    sp = pl["space"]
    k = F.shape[1] - 1
    if sp["alpha_lo"] is not None and sp["alpha_hi"] is not None:
        alo = np.asarray(sp["alpha_lo"], dtype=float)
        ahi = np.asarray(sp["alpha_hi"], dtype=float)
    else:
        base = default_search_space(ds, F, sp["gamma2_bound"], sp["tau1"], sp["tau2"])
        alo, ahi = base.alpha_lo, base.alpha_hi
    glo = (np.asarray(sp["gamma2_lo"], dtype=float) if sp["gamma2_lo"] is not None
           else -sp["gamma2_bound"] * np.ones(k))
    ghi = (np.asarray(sp["gamma2_hi"], dtype=float) if sp["gamma2_hi"] is not None
           else sp["gamma2_bound"] * np.ones(k))
    return SearchSpace(alo, ahi, glo, ghi, sp["tau1"], sp["tau2"], sp["eps_strict"])


def _solver_cfg(pl: dict, seed: int) -> SolverConfig:
    s = pl["solver"]
    return SolverConfig(time_limit=s["time_limit"], gap_tol=s["gap_tol"],
                        node_limit=s["node_limit"],
                        relaxation_tol=s["relaxation_tol"],
                        relaxation_max_iter=s["relaxation_max_iter"], seed=seed)


def _dgp_cfg(pl: dict, seed: int) -> DgpConfig:
    d = dict(pl["dgp"])
    K, d_x = d["K"], d["d_x"]
    if d["beta0"] is None:
        d["beta0"] = [1.0] * d_x
    if d["delta0"] is None:
        d["delta0"] = [1.0] * d_x
    if d["phi0"] is None:
        base = [1.0, 2.0 / 3.0, 0.0, 2.0 / 3.0]
        d["phi0"] = base if K == 3 else [1.0] + [2.0 / 3.0] * K
    d["seed"] = seed if seed else d["seed"]
    return DgpConfig(**d)


_WEIGHTS = {"rademacher": WeightDist.RADEMACHER, "normal": WeightDist.STD_NORMAL}
_MODES = {"known": FactorMode.KNOWN, "pca": FactorMode.PCA_REESTIMATE,
          "gaussian": FactorMode.GAUSSIAN_PERTURB}


def _write_result(out_dir: Path, cfg: RunConfig, body: dict) -> None:
    doc = {"command": cfg.command, "seed": cfg.seed, "threads": cfg.threads,
           "config": cfg.payload, **body}
    with open(out_dir / "result.json", "w") as fh:
        json.dump(doc, fh, indent=2)


def _write_matrix(path: Path, M, header: str | None = None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    np.savetxt(path, M, delimiter=",", header=header or "", comments="")


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _run_simulate(cfg: RunConfig, out_dir: Path) -> int:
    dgp = finalize_study(_dgp_cfg(cfg.payload, cfg.seed))
    rng = np.random.default_rng(np.random.SeedSequence(dgp.seed, spawn_key=(0,)))
    ds, g1, d_true, params, Lam = generate_dgp(dgp, rng)
    _write_matrix(out_dir / "y.csv", ds.y[:, None])
    _write_matrix(out_dir / "x.csv", ds.X)
    _write_matrix(out_dir / "factors.csv", ds.factors)
    _write_matrix(out_dir / "panel.csv", ds.panel)
    _write_matrix(out_dir / "d_true.csv", d_true[:, None])
    _write_result(out_dir, cfg, {"T": ds.T, "N": ds.panel.shape[1],
                                 "files": ["y.csv", "x.csv", "factors.csv",
                                           "panel.csv", "d_true.csv"]})
    return 0


def _run_estimate(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    ds, F, fe = _load_dataset(pl)
    space = _build_space(pl, ds, F)
    scfg = _solver_cfg(pl, cfg.seed)
    method = pl["method"]
    if method == "auto":
        method = "exact" if F.shape[1] - 1 <= 3 else "bcd"
    form = MiqpForm.BASIC if pl["form"] == "basic" else MiqpForm.ALTERNATIVE
    if method == "exact":
        res = estimate_exact(ds, F, space)
    elif method == "miqp":
        res = estimate_miqp(ds, F, space, form, scfg)
    else:
        b = pl["bcd"]
        res = bcd(ds, F, space, BcdConfig(b["max_time_1"], b["max_time_2"],
                                          b["max_outer_iter"]), scfg)
    _write_matrix(out_dir / "d.csv", np.asarray(res.d, dtype=float)[:, None])
    _write_result(out_dir, cfg, {"result": res.to_dict(), "method": method,
                                 "estimated_factors": fe is not None})
    return 1 if res.status is SolveStatus.INFEASIBLE else 0


def _run_bootstrap(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    ds, F, fe = _load_dataset(pl)
    space = _build_space(pl, ds, F)
    scfg = _solver_cfg(pl, cfg.seed)
    hyp = HypothesisSpec(np.asarray(pl["hypothesis"]["R"], dtype=float),
                         np.asarray(pl["hypothesis"]["r"], dtype=float),
                         pl["hypothesis"]["label"])
    b = pl["bootstrap"]
    mode = _MODES[b["factor_mode"]]
    bcfg = BootstrapConfig(B=b["B"], k=b["k"], weight_dist=_WEIGHTS[b["weights"]],
                           factor_mode=mode, seed=cfg.seed, level=b["level"])
    factors = fe if (mode is not FactorMode.KNOWN and fe is not None) else F
    if mode is not FactorMode.KNOWN and fe is None:
        raise ConfigError("bootstrap.factor_mode: regenerated modes need panel input")
    from .inference import lr_statistic
    cv, p, draws = bootstrap_lr(ds, factors, space, hyp, bcfg, scfg,
                                c_thresh=b["c_thresh"])
    lr_obs = lr_statistic(ds, F, space, hyp, solver_cfg=scfg)
    if pl["dump_draws"]:
        _write_matrix(out_dir / "lr_draws.csv", np.asarray(draws)[:, None])
    from .plots import plot_lr_draws
    plot_lr_draws(draws, lr_obs, cv, out_dir / "lr_bootstrap.png")
    _write_result(out_dir, cfg, {"lr": lr_obs, "cv": cv, "p_value": p,
                                 "reject": bool(p <= b["level"]),
                                 "draws": len(draws)})
    return 0


def _run_linearity(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    ds, F, fe = _load_dataset(pl)
    space = _build_space(pl, ds, F)
    p = linearity_test(ds, F, space, pl["B"],
                       np.random.default_rng(cfg.seed),
                       weight_dist=_WEIGHTS[pl["weights"]])
    stat = sup_q(ds, F, space)
    _write_result(out_dir, cfg, {"sup_q": stat, "p_value": p, "B": pl["B"]})
    return 0


def _run_select(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    ds, F, fe = _load_dataset(pl)
    space = _build_space(pl, ds, F)
    scfg = _solver_cfg(pl, cfg.seed)
    k = F.shape[1] - 1
    s = pl["selection"]
    cand = s["candidates"] if s["candidates"] is not None else list(range(max(k - 1, 0)))
    pilot = estimate_exact(ds, F, space) if k <= 3 else bcd(ds, F, space, solver_cfg=scfg)
    lam = s["lambda"] if s["lambda"] is not None else default_lambda(ds, pilot)
    sel = SelectionConfig(lam, s["p_lo"],
                          s["p_hi"] if s["p_hi"] is not None else len(cand),
                          [int(c) for c in cand])
    active, res = select_factors(ds, F, space, sel, scfg, pilot=pilot)
    _write_matrix(out_dir / "d.csv", np.asarray(res.d, dtype=float)[:, None])
    _write_result(out_dir, cfg, {"active_set": sorted(int(a) for a in active),
                                 "lambda": lam, "result": res.to_dict()})
    return 1 if res.status is SolveStatus.INFEASIBLE else 0


def _run_montecarlo(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    dgp = _dgp_cfg(pl, cfg.seed)
    scenario = pl["scenario"]
    b = pl["bootstrap"]
    if scenario in ("bootstrap-known", "bootstrap-estimated"):
        mode = FactorMode.KNOWN if scenario.endswith("known") else FactorMode.PCA_REESTIMATE
        bcfg = BootstrapConfig(B=b["B"], k=b["k"], weight_dist=_WEIGHTS[b["weights"]],
                               factor_mode=mode, seed=cfg.seed, level=b["level"])
        report = run_bootstrap_size_study(mode, dgp, pl["reps"], bcfg,
                                          threads=cfg.threads,
                                          gamma2_bound=pl["gamma2_bound"])
    elif scenario == "linearity":
        report = run_linearity_study(dgp, pl["reps"], pl["B"], threads=cfg.threads,
                                     gamma2_bound=pl["gamma2_bound"])
    else:
        name = {"oracle": McScenario.ORACLE,
                "observed-no-selection": McScenario.OBSERVED_NO_SELECTION,
                "observed-selection": McScenario.OBSERVED_SELECTION,
                "unobserved": McScenario.UNOBSERVED}[scenario]
        report = run_monte_carlo(name, dgp, pl["reps"],
                                 solver_cfg=_solver_cfg(pl, cfg.seed),
                                 threads=cfg.threads,
                                 gamma2_bound=pl["gamma2_bound"])
    report.to_csv(out_dir / "mc_report.csv")
    from .plots import plot_mc_report
    plot_mc_report(report, out_dir / "mc_report.png")
    _write_result(out_dir, cfg, {"report": report.to_dict()})
    return 0


def _run_drift(cfg: RunConfig, out_dir: Path) -> int:
    pl = cfg.payload
    if pl["g_grid"] is not None:
        grid = np.asarray(pl["g_grid"], dtype=float)
    else:
        grid = np.linspace(pl["g_lo"], pl["g_hi"], pl["g_n"])
    curves = []
    for om in pl["omegas"]:
        if isinstance(om, str):
            if om != "inf":
                raise ConfigError(f"omegas: bad entry {om!r} (use numbers or 'inf')")
            om = np.inf
        elif not _is_num(om):
            raise ConfigError(f"omegas: bad entry {om!r}")
        dc = DriftConfig(float(om), grid, pl["mc_draws"], pl["sigma_h"],
                         pl["density_q"], pl["seed"] or cfg.seed)
        curves.append(drift_function(dc))
    with open(out_dir / "drift.csv", "w") as fh:
        fh.write("omega,g,A,mc_se\n")
        for c in curves:
            for row in c.to_rows():
                fh.write(f"{row['omega']},{row['g']},{row['A']},{row['mc_se']}\n")
    from .plots import plot_drift
    plot_drift(curves, out_dir / "drift.png")
    _write_result(out_dir, cfg, {"curves": [
        {"omega": ("inf" if np.isinf(c.omega) else c.omega),
         "g": c.g.tolist(), "A": c.A.tolist(), "mc_se": c.mc_se.tolist()}
        for c in curves]})
    return 0


_DISPATCH = {
    "simulate": _run_simulate,
    "estimate": _run_estimate,
    "bootstrap": _run_bootstrap,
    "test-linearity": _run_linearity,
    "select-factors": _run_select,
    "montecarlo": _run_montecarlo,
    "drift": _run_drift,
}


def run(cfg: RunConfig) -> int:
    """Dispatch a validated run configuration; returns the process exit code."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return _DISPATCH[cfg.command](cfg, out_dir)
    except ConfigError:
        raise
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__,
                                     "message": str(exc)}) + "\n")
        return 1


def _execute(command: str, config: str, seed: int | None, threads: int | None,
             out: str | None) -> int:
    try:
        cfg = parse_config(config)
        if cfg.command != command:
            raise ConfigError(f"config file declares command {cfg.command!r}, "
                              f"but {command!r} was invoked")
        if seed is not None:
            cfg.seed = seed
        if threads is not None:
            cfg.threads = threads
        if out is not None:
            cfg.out = out
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "message": str(exc)}) + "\n")
        return 2
    return run(cfg)


def _make_command(name: str):
    @click.command(name=name)
    @click.option("--config", required=True, type=click.Path(), help="JSON run configuration.")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @click.option("--threads", type=int, default=None,
                  help=f"Worker count (default: config, then ${THREADS_ENV}, then 1).")
    @click.option("--out", type=click.Path(), default=None, help="Output directory.")
    def _cmd(config, seed, threads, out):
        sys.exit(_execute(name, config, seed, threads, out))

    return _cmd


@click.group()
def main():
    """Two-regime regression with factor-driven switching."""


for _name in _DISPATCH:
    main.add_command(_make_command(_name))


if __name__ == "__main__":
    main()
