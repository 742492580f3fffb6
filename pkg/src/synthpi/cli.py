"""Command-line entry point: ``synthpi {fit,pi,mc,qclp-solve}``.

Settings come from three layers, later ones winning: built-in defaults, a
flat ``key = value`` file given by ``--config``, then command-line flags.

Exit codes:

* 0: success
* 2: bad input (missing file, schema, data, configuration or usage error)
* 3: a numerical routine failed to converge
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, SynthPIError, UsageError

LOGGER = logging.getLogger("synthpi")

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3
SAMPLE = "@sample"
SAMPLE_SCHEMA = {"treated_unit": "treated", "treatment_period": "31"}


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """Resolved settings for one invocation (only the keys a command uses matter)."""

    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def dump(self) -> str:
        lines = [f"command = {self.command}"]
        for key in sorted(self.values):
            if key in ("config", "config_dump"):
                continue
            value = self.values[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys accept dashes or underscores."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip().strip('"').strip("'")
    return out


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _floats(text) -> list[float]:
    try:
        return [float(s) for s in _list(text)]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def resolve(parser: argparse.ArgumentParser, args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and explicit flags for the chosen subcommand."""
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}  # noqa: SLF001
    values = dict(args._declared[args.command])
    explicit = {k: v for k, v in vars(args).items() if k not in ("_declared", "command")}
    cfg_path = explicit.get("config")
    if cfg_path:
        for key, raw in read_config_file(cfg_path).items():
            if key not in actions:
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            values[key] = _convert(actions[key], raw)
    for key, value in explicit.items():
        if key in actions and value is not None:
            values[key] = value
    return RunConfig(args.command, values)


def _convert(action: argparse.Action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):  # noqa: SLF001
        return _bool(raw)
    if action.type is None:
        return raw
    try:
        return action.type(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for {action.dest}") from None


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat key = value settings file (flags override it)")
    p.add_argument("--config-dump", action="store_true", default=None, help="print the resolved settings and exit")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--input", default=None, help=f"long-format panel CSV, or {SAMPLE} for the bundled example")
    g.add_argument("--design", default=None, help="design JSON (instead of --input)")
    g.add_argument("--treated-unit", default=None)
    g.add_argument("--treatment-period", default=None, help="first post-treatment period")
    g.add_argument("--T0", type=int, default=None, help="number of pre-treatment periods")
    g.add_argument("--features", type=_list, default=None, help="comma-separated feature labels")
    g.add_argument("--wide", action="store_true", default=None, help="input has one column per feature")
    g.add_argument("--fill", default="none", choices=("none", "locf"), help="missing-cell policy")
    g.add_argument("--unit-col", default="unit")
    g.add_argument("--period-col", default="period")
    g.add_argument("--feature-col", default="feature")
    g.add_argument("--value-col", default="value")
    g.add_argument("--intercept", action="store_true", default=None, help="one intercept per equation")
    g.add_argument("--regime", default="iid", choices=("iid", "weakly_dependent", "cointegration"))
    g.add_argument("--constraint", default="simplex", help='e.g. simplex, "l1 Q=1", unconstrained')
    g.add_argument("--standardize", action="store_true", default=None, help="scale each feature by its sd")
    g.add_argument("--design-out", default=None, help="also write the design JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthpi",
        description="Synthetic control predictions with conditional prediction intervals.",
        epilog="exit codes: 0 success, 2 input/configuration error, 3 convergence failure",
    )
    parser.add_argument("--version", action="version", version=f"synthpi {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("fit", help="estimate synthetic control weights")
    _common(p)
    _data_flags(p)
    p.add_argument("--out", default="fit.json")

    p = subs.add_parser("pi", help="prediction intervals for post-treatment periods")
    _common(p)
    _data_flags(p)
    p.add_argument("--alpha1", type=float, default=0.05, help="in-sample level (default 0.05)")
    p.add_argument("--alpha2", type=float, default=0.05, help="out-of-sample level; 0 gives in-sample only")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--sigma-method", default="plugin_diag",
                   choices=("plugin_diag", "hc_iid", "long_run", "cointegration_plugin"))
    p.add_argument("--bandwidth", type=int, default=None, help="long-run variance bandwidth")
    p.add_argument("--mean-degree", type=int, default=1, choices=(0, 1, 2, 3))
    p.add_argument("--rho", default="auto", help="auto or a number")
    p.add_argument("--approaches", type=_list, default=["subg", "locscale", "qreg"],
                   help="comma list of subg, poly:k, locscale, qreg")
    p.add_argument("--sensitivity", type=_floats, default=None,
                   help="comma list of scale factors for the subgaussian bound, e.g. 0.25,0.5,1,1.5,2")
    p.add_argument("--periods", type=_list, default=None, help="post periods to report (default all)")
    p.add_argument("--out-dir", default=".")

    p = subs.add_parser("mc", help="Monte Carlo coverage study")
    _common(p)
    p.add_argument("--rho", type=float, default=0.0, choices=(0.0, 0.5, 1.0))
    p.add_argument("--misspec", action="store_true", default=None)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--methods", type=_list, default=["subg"],
                   help="comma list, e.g. subg,subg@0,locscale,qreg,insample,oracle")
    p.add_argument("--mode", default="fixed", choices=("fixed", "redrawn"))
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--T0", type=int, default=100)
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--shifts", type=_floats, default=[-1.0, -0.5, 0.0, 0.5, 1.0])
    p.add_argument("--out", default="table.csv")

    p = subs.add_parser("qclp-solve", help="solve one stored conic problem (debugging)")
    _common(p)
    p.add_argument("--problem", default=None, help="problem JSON")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default=None, help="write the solution here instead of stdout")

    # remember declared defaults, then blank them so explicit flags are detectable
    declared = {}
    for name, sub in subs.choices.items():
        declared[name] = {}
        for action in sub._actions:  # noqa: SLF001
            if action.dest != "help":
                declared[name][action.dest] = action.default
                action.default = None
    parser.set_defaults(_declared=declared)
    return parser


# ------------------------------------------------------------------ commands


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True) + "\n"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _panel_and_design(cfg: RunConfig):
    from .constraints import parse_constraint
    from .panel import SCDesign, build_design, load_panel

    if cfg.design and cfg.input:
        raise UsageError("give either --design or --input, not both")
    if cfg.design:
        return None, SCDesign.load(_existing(cfg.design))
    if not cfg.input:
        raise UsageError("an --input panel or a --design file is required")
    schema = {"unit": cfg.unit_col, "period": cfg.period_col, "feature": cfg.feature_col,
              "value": cfg.value_col, "wide": bool(cfg.wide), "fill": cfg.fill}
    path = cfg.input
    if path == SAMPLE:
        path = sample_path()
        schema.update({k: v for k, v in SAMPLE_SCHEMA.items()})
    if cfg.treated_unit is not None:
        schema["treated_unit"] = cfg.treated_unit
    if cfg.T0 is not None:
        schema.pop("treatment_period", None)
        schema["T0"] = cfg.T0
    elif cfg.treatment_period is not None:
        schema["treatment_period"] = cfg.treatment_period
    if cfg.features:
        schema["features"] = cfg.features
    panel = load_panel(path, schema)
    design = build_design(panel, cfg.features, bool(cfg.intercept), cfg.regime,
                          parse_constraint(cfg.constraint), standardize=bool(cfg.standardize))
    if cfg.design_out:
        design.dump(cfg.design_out)
    return panel, design


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        from .errors import DataError

        raise DataError(f"input file not found: {p}")
    return p


def sample_path() -> Path:
    return Path(str(resources.files("synthpi") / "data" / "sample_panel.csv"))


def cmd_fit(cfg: RunConfig) -> int:
    from .fit import fit

    _, design = _panel_and_design(cfg)
    fitted = fit(design)
    payload = {"donors": list(design.donor_ids), "constraint": design.constraint.to_string(),
               "regime": design.regime, **fitted.to_dict()}
    _write_json(cfg.out, payload)
    LOGGER.info("wrote %s", cfg.out)
    return EXIT_OK


def _out_of_sample_rows(cfg, fitted, regs, support, X, alpha2):
    """``{label: [OutSampleResult per period]}`` for each approach and sensitivity factor."""
    from .outsample import bound_subgaussian, fit_residual_model, out_of_sample_bound, parse_approach

    rows = {}
    if alpha2 == 0:
        return rows
    model = None
    if any(parse_approach(a)[0] != "quantile_reg" for a in cfg.approaches) or cfg.sensitivity:
        model = fit_residual_model(fitted.residuals, regs, cfg.mean_degree)
    for approach in cfg.approaches:
        rows[approach] = [out_of_sample_bound(approach, fitted.residuals, regs, x[support], alpha2,
                                              cfg.mean_degree, model=model) for x in X]
    for factor in cfg.sensitivity or ():
        res = []
        for x in X:
            xr = None if model.n_regressors == 0 else x[support].reshape(1, -1)
            res.append(bound_subgaussian(float(model.mean(xr)[0]), float(model.sd(xr)[0]) * factor, alpha2))
        rows[f"subg*{factor:g}"] = res
    return rows


def cmd_pi(cfg: RunConfig) -> int:
    from .constraints import build_delta_star
    from .fit import fit
    from .insample import conditional_mean_residuals, estimate_sigma, rho_rule, simulate_many
    from .intervals import Bounds, assemble_counterfactual, assemble_tau
    from .panel import build_predictor

    alpha1, alpha2 = cfg.alpha1, cfg.alpha2
    if not 0 <= alpha2 < 1 or alpha1 + alpha2 >= 1:
        raise UsageError(f"alpha1={alpha1} and alpha2={alpha2} must satisfy 0 <= alpha2 and alpha1 + alpha2 < 1")
    panel, design = _panel_and_design(cfg)
    if panel is None:
        raise UsageError("pi needs the panel (--input) to read post-treatment predictors")
    fitted = fit(design)
    periods = cfg.periods or [str(p) for p in panel.periods[panel.T0:]]
    preds = [build_predictor(panel, design, _match_period(panel, p)) for p in periods]
    if not preds:
        raise UsageError("the panel has no post-treatment periods")

    rho = rho_rule(fitted.residuals, design.B, design.regime, design.T0) if cfg.rho == "auto" else float(cfg.rho)
    delta_star = build_delta_star(fitted.beta_hat, design.D, design.J, design.constraint, rho)
    support = np.flatnonzero(delta_star.beta_star[: design.J] != 0)
    regs = design.B[:, support] if support.size else None
    mean = conditional_mean_residuals(fitted.residuals, regs, cfg.mean_degree, groups=design.equation)
    sigma = estimate_sigma(design, fitted, fitted.residuals - mean, cfg.sigma_method, cfg.bandwidth)
    P = np.vstack([p.p for p in preds])
    M1_L, M1_U, dropped, _, _ = simulate_many(fitted.Q_hat, sigma.Sigma, delta_star, P, alpha1, cfg.draws, cfg.seed)

    X = np.vstack([p.x for p in preds])
    oos = _out_of_sample_rows(cfg, fitted, regs, support, X, alpha2)
    records, table = [], []
    for i, pv in enumerate(preds):
        y_hat = float(pv.p @ fitted.beta_hat)
        b1 = Bounds(float(M1_L[i]), float(M1_U[i]), alpha1, "insample")
        entry = {"period": _period_text(pv.period), "point": y_hat, "observed": pv.y1_observed,
                 "insample": {"M1_L": b1.lower, "M1_U": b1.upper, "rho": rho, "sigma_method": sigma.method,
                              "draws": cfg.draws, "dropped": dropped},
                 "intervals": []}
        sections = [("insample", Bounds(0.0, 0.0, 0.0, "insample"))]
        sections += [(label, Bounds(res[i].M2_L, res[i].M2_U, alpha2, label)) for label, res in oos.items()]
        for label, b2 in sections:
            cf = assemble_counterfactual(y_hat, b1, b2)
            rec = {"approach": label, "M2_L": b2.lower, "M2_U": b2.upper, **cf.to_dict()}
            if pv.y1_observed is not None:
                tau = assemble_tau(pv.y1_observed - y_hat, b1, b2)
                rec["tau"] = {"point": float(tau.point), "lower": float(tau.lower), "upper": float(tau.upper)}
            entry["intervals"].append(rec)
            table.append([entry["period"], repr(cf.point), repr(float(cf.lower)), repr(float(cf.upper)),
                          repr(float(b1.alpha)), repr(float(b2.alpha)), label])
        records.append(entry)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "intervals.json", {"alpha1": alpha1, "alpha2": alpha2, "seed": cfg.seed,
                                         "weights": dict(zip(design.donor_ids, fitted.w_hat.tolist())),
                                         "periods": records})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["period", "point", "lower", "upper", "alpha1", "alpha2", "approach"])
    writer.writerows(table)
    (out / "intervals.csv").write_text(buf.getvalue(), encoding="utf-8")
    return EXIT_OK


def _match_period(panel, text):
    for p in panel.periods:
        if str(p) == str(text) or _period_text(p) == str(text):
            return p
    raise UsageError(f"period {text!r} not in panel")


def _period_text(p) -> str:
    if isinstance(p, float) and p.is_integer():
        return str(int(p))
    return str(p)


def cmd_mc(cfg: RunConfig) -> int:
    from .montecarlo import DGPSpec, run_coverage

    spec = DGPSpec(rho=cfg.rho, T0=cfg.T0, N=cfg.N, misspecified=bool(cfg.misspec),
                   eval_shifts=tuple(cfg.shifts), conditioning="fixed_design" if cfg.mode == "fixed" else "redrawn")
    table = run_coverage(spec, cfg.methods, cfg.reps, cfg.seed, cfg.threads, cfg.draws, cfg.alpha)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(cfg.out)
    return EXIT_OK


def cmd_qclp(cfg: RunConfig) -> int:
    from .qclp import ConicProblem, solve

    if not cfg.problem:
        raise UsageError("--problem is required")
    problem = ConicProblem.load(_existing(cfg.problem))
    sol = solve(problem, cfg.tol)
    text = json.dumps(sol.to_dict(), indent=2) + "\n"
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "pi": cmd_pi, "mc": cmd_mc, "qclp-solve": cmd_qclp}


# ------------------------------------------------------------------ main


def _module_tag(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(frames):
        path = Path(frame.filename)
        if path.parent.name == "synthpi":
            return path.stem.lstrip("_")
    return "cli"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(parser, args)
        logging.basicConfig(level=str(cfg.log_level).upper(), format="%(levelname)s %(name)s: %(message)s")
        if cfg.config_dump:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        if cfg.threads:
            import numba

            numba.set_num_threads(min(int(cfg.threads), numba.config.NUMBA_NUM_THREADS))
        return COMMANDS[cfg.command](cfg)
    except ConvergenceError as exc:
        print(f"synthpi: error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (SynthPIError, OSError, json.JSONDecodeError) as exc:
        print(f"synthpi: error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
