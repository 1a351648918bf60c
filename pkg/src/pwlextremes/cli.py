"""Command-line pipeline: simulate, transform, threshold, fit, bound, extrapolate,
diagnose and study.

Every subcommand takes an optional JSON config (``--config``), flag overrides
(``--set key=value`` with a JSON value, plus a few named flags) and an output
directory, and writes ``manifest.json`` there with the resolved config, its
hash and library versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .data import (DISTRIBUTIONS, LAPLACE_GAUSSIAN, CopulaSpec, read_csv, simulate,
                   to_exponential_margins, to_laplace_margins, write_csv, write_transforms)
from .diagnostics import (chi_model, export_limit_set, pp_qq_data, return_curve, write_chi,
                          write_limit_set, write_ppqq, write_return_curve)
from .fitting import ExceedanceSample, FitConfig, FittedModel, bound, fit, select_lambda
from .sampling import ExtremalRegion, default_sampler, estimate_probability
from .simplex import LaplaceMesh, make_regular_mesh, make_sparse_mesh
from .study import REGIONS, StudyConfig, run_study, write_rows
from .threshold import ThresholdModel, check_score, write_score_table

log = logging.getLogger("pwlextremes")

COMMANDS = ("simulate", "transform", "threshold", "fit", "bound", "extrapolate", "diagnose",
            "study")

_pos = {"type": "number", "exclusiveMinimum": 0}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_region = {"type": "object", "additionalProperties": False, "required": ["lower", "upper"],
           "properties": {"lower": {"type": "array", "items": {"type": "number"}},
                          "upper": {"type": "array",
                                    "items": {"anyOf": [{"type": "number"},
                                                        {"const": "inf"}]}}}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "data": {"type": "string"},
        "out": {"type": "string"},
        "model": {"type": "string"},
        "distribution": {"enum": [*DISTRIBUTIONS, "laplace_gaussian"]},
        "family": {"enum": ["logistic", "inverted_logistic", "gaussian", "asymmetric_logistic"]},
        "params": {"type": "object"},
        "alpha": _prob,
        "rho": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
        "dim": {"type": "integer", "minimum": 2},
        "n": {"type": "integer", "minimum": 10},
        "margins": {"enum": ["exponential", "laplace"]},
        "margin_quantile": _prob,
        "tau": _prob,
        "h_r": _pos,
        "h_w": _pos,
        "kernel": {"enum": ["gaussian", "epanechnikov"]},
        "h_w_grid": {"type": "array", "items": _pos, "minItems": 1},
        "cv_folds": {"type": "integer", "minimum": 2},
        "mesh": {"type": "object", "additionalProperties": False,
                 "properties": {"kind": {"enum": ["regular", "sparse", "laplace"]},
                                "resolution": {"type": "integer", "minimum": 3},
                                "refine": {"type": "boolean"}}},
        "ss": {"enum": ["SS1", "SS2", "SS3", "SS4", "SS5", "SS6"]},
        "mode": {"enum": ["radial", "angular", "joint"]},
        "bounded": {"type": "boolean"},
        "angles": {"enum": ["empirical", "model"]},
        "lam": {"type": ["number", "null"], "minimum": 0},
        "angular_lam": {"type": "number", "minimum": 0},
        "lam_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "maxfev": {"type": "integer", "minimum": 100},
        "n_star": {"type": "integer", "minimum": 1},
        "regions": {"type": "array", "items": _region},
        "sampler": {"enum": ["empirical", "mcmc"]},
        "proposal": {"enum": ["uniform", "beta", "dirichlet"]},
        "burn_in": {"type": "integer", "minimum": 0},
        "return_periods": {"type": "array", "items": {"type": "number", "minimum": 1}},
        "chi_sets": {"type": "array",
                     "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                               "minItems": 2}},
        "chi_u": {"type": "array", "items": _prob},
        "distributions": {"type": "array", "items": {"enum": list(DISTRIBUTIONS)}, "minItems": 1},
        "labels": {"type": "array",
                   "items": {"enum": ["SS1", "SS2", "SS3", "SS4", "SS5", "SS6"]}, "minItems": 1},
        "replications": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "truth_mc": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "seed": 0, "out": ".", "n": 5000, "margins": "exponential", "margin_quantile": 0.95,
    "tau": 0.95, "h_r": 0.05, "h_w": 0.05, "kernel": "gaussian", "cv_folds": 5,
    "ss": "SS4", "n_star": 50_000, "return_periods": [50, 100], "chi_u": [0.95, 0.99],
    "distributions": ["I"], "labels": ["SS4"], "replications": 20, "workers": 1, "truth_mc": 0,
    "burn_in": 1000,
}


class ConfigError(ValueError):
    pass


# --- config ----------------------------------------------------------------

def _key_line(text, path):
    """1-based line of the innermost key of ``path`` found in the raw JSON text."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(json.dumps(key), pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def validate(cfg, text=None, source="<flags>"):
    """Schema check; errors name the offending key and its line in ``text``."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msgs = []
        for e in errors:
            path = list(e.absolute_path)
            if e.validator == "additionalProperties":
                extra = [k for k in e.instance if k not in e.schema.get("properties", {})]
                path = path + extra[:1]
            where = f"{source}:{_key_line(text, path)}" if text else source
            msgs.append(f"{where}: {'/'.join(map(str, path)) or '<root>'}: {e.message}")
        raise ConfigError("\n".join(msgs))
    if cfg.get("mode") == "angular" and cfg.get("bounded"):
        line = f"{source}:{_key_line(text, ['bounded'])}" if text else source
        raise ConfigError(f"{line}: bounded: the angular model cannot be bounded")


def load_config(path):
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None
    validate(cfg, text, str(path))
    return cfg


def resolve(args):
    cfg = load_config(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            cfg[key] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key] = value
    for key in ("data", "out", "model", "seed", "n", "distribution", "family", "alpha", "ss",
                "mode", "bounded", "lam", "tau", "workers", "replications", "labels",
                "distributions", "n_star"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    validate(cfg)
    return {**DEFAULTS, **cfg}


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out, command, cfg, outputs):
    manifest = {
        "subcommand": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {"pwlextremes": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(str(Path(o).name) for o in outputs),
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")


# --- shared builders ---------------------------------------------------------------

def copula_from_config(cfg):
    if "distribution" in cfg:
        if cfg["distribution"] == "laplace_gaussian":
            return LAPLACE_GAUSSIAN
        return DISTRIBUTIONS[cfg["distribution"]]
    _require(cfg, "family")
    params = dict(cfg.get("params", {}))
    for k in ("alpha", "rho"):
        if k in cfg:
            params[k] = cfg[k]
    if "sets" in params:
        params["sets"] = [tuple(s) for s in params["sets"]]
    return CopulaSpec(cfg["family"], params, cfg.get("dim", 2), cfg["margins"])


def mesh_from_config(cfg, d):
    spec = cfg.get("mesh", {})
    kind = spec.get("kind", "laplace" if cfg["margins"] == "laplace" else
                    ("regular" if d <= 3 else "sparse"))
    if kind == "laplace":
        return LaplaceMesh.regular(spec.get("resolution", 15))
    if kind == "sparse":
        return make_sparse_mesh(d, spec.get("refine", False))
    return make_regular_mesh(d, spec.get("resolution", 11 if d == 2 else 6))


def fit_config(cfg):
    kw = {k: cfg[k] for k in ("lam", "angular_lam", "restarts", "maxfev") if k in cfg}
    if any(k in cfg for k in ("mode", "bounded", "angles")):
        return FitConfig(mode=cfg.get("mode", "radial"), bounded=cfg.get("bounded", False),
                         angles=cfg.get("angles", "empirical"), **kw)
    return FitConfig.from_label(cfg["ss"], **kw)


def read_data(cfg):
    _require(cfg, "data")
    x, names = read_csv(cfg["data"])
    return x, names


def threshold_from_config(cfg, x):
    from .fitting import decompose
    r, w = decompose(x, cfg["margins"] == "laplace")
    return ThresholdModel(r, w, cfg["tau"], cfg["h_r"], cfg["h_w"], cfg["kernel"])


def load_model(cfg):
    """Fitted model plus its data; the threshold is refitted from stored settings."""
    _require(cfg, "model")
    obj = json.loads(Path(cfg["model"]).read_text())
    x, _ = read_data(cfg)
    th_cfg = {**cfg, **(obj.get("threshold") or {})}
    if "laplace_angles" in obj["mesh"]:
        th_cfg["margins"] = "laplace"
    th = threshold_from_config(th_cfg, x)
    ex = ExceedanceSample.from_data(x, th, "laplace_angles" in obj["mesh"])
    model = FittedModel.from_dict(obj, ex, th)
    return model, x


def regions_from_config(cfg, d):
    if "regions" not in cfg:
        return REGIONS.get(d, [])
    return [ExtremalRegion(r["lower"], [np.inf if u == "inf" else u for u in r["upper"]])
            for r in cfg["regions"]]


def _sampler(cfg, model, seed):
    return default_sampler(model, cfg.get("sampler"), cfg.get("proposal"), seed=seed,
                           burn_in=cfg["burn_in"])


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(cfg, out):
    spec = copula_from_config(cfg)
    ds = simulate(spec, cfg["n"], cfg["seed"])
    path = out / "data.csv"
    write_csv(path, ds.x, [f"x{j + 1}" for j in range(spec.dim)])
    (out / "copula.json").write_text(json.dumps(spec.to_dict(), indent=1, default=list))
    return [path, out / "copula.json"]


def cmd_transform(cfg, out):
    raw, names = read_data(cfg)
    fn = to_laplace_margins if cfg["margins"] == "laplace" else to_exponential_margins
    ds = fn(raw, cfg["margin_quantile"], names)
    path = out / "data.csv"
    write_csv(path, ds.x, names)
    side = out / "data.transform.json"
    write_transforms(side, ds.transforms)
    return [path, side]


def cmd_threshold(cfg, out):
    from .fitting import decompose
    x, _ = read_data(cfg)
    laplace = cfg["margins"] == "laplace"
    r, w = decompose(x, laplace)
    outputs = []
    if "h_w_grid" in cfg:
        table, best = check_score(r, w, cfg["tau"], cfg["cv_folds"], tuple(cfg["h_w_grid"]),
                                  seed=cfg["seed"], h_r=cfg["h_r"], kernel=cfg["kernel"])
        write_score_table(out / "threshold_cv.csv", table)
        outputs.append(out / "threshold_cv.csv")
        cfg = {**cfg, "h_w": best}
    th = ThresholdModel(r, w, cfg["tau"], cfg["h_r"], cfg["h_w"], cfg["kernel"])
    mask = th.exceedance_mask()
    info = {"tau": th.tau, "h_r": th.h_r, "h_w": th.h_w, "kernel": th.kernel,
            "exceedances": int(mask.sum()), "fraction": float(mask.mean())}
    (out / "threshold.json").write_text(json.dumps(info, indent=1))
    from .diagnostics import default_angle_grid
    grid = default_angle_grid(x.shape[1], laplace, 200 if laplace or x.shape[1] == 2 else None)
    th.write_curve(out / "threshold_curve.csv", grid)
    write_csv(out / "exceedances.csv", x[mask], [f"x{j + 1}" for j in range(x.shape[1])])
    return outputs + [out / "threshold.json", out / "threshold_curve.csv", out / "exceedances.csv"]


def cmd_fit(cfg, out):
    x, _ = read_data(cfg)
    th = threshold_from_config(cfg, x)
    mesh = mesh_from_config(cfg, x.shape[1])
    ex = ExceedanceSample.from_data(x, th, mesh.laplace)
    fc = fit_config(cfg)
    outputs = []
    if "lam_grid" in cfg:
        best, table = select_lambda(fc, ex, mesh, th, grid=tuple(cfg["lam_grid"]), seed=cfg["seed"])
        write_score_table(out / "lambda_cv.csv", {k: float(np.mean(v)) for k, v in table.items()},
                          "lambda")
        outputs.append(out / "lambda_cv.csv")
        fc = replace(fc, lam=best)
    model = fit(fc, ex, mesh, th)
    (out / "model.json").write_text(model.to_json())
    return outputs + [out / "model.json"]


def cmd_bound(cfg, out):
    model, _ = load_model(cfg)
    if model.config.mode == "angular":
        raise ConfigError("the angular model cannot be bounded")
    model = bound(model)
    model = replace(model, config=replace(model.config, bounded=True))
    (out / "model.json").write_text(model.to_json())
    return [out / "model.json"]


def cmd_extrapolate(cfg, out):
    model, _ = load_model(cfg)
    rng = np.random.default_rng(cfg["seed"])
    sampler = _sampler(cfg, model, rng)
    regions = regions_from_config(cfg, model.mesh.dim)
    if not regions:
        raise ConfigError("no regions given and no default regions for this dimension")
    est = estimate_probability(model, sampler, regions, cfg["n_star"], rng)
    report = {"estimates": [e.to_dict() for e in est], "acceptance": sampler.acceptance}
    (out / "probabilities.json").write_text(json.dumps(report, indent=1))
    return [out / "probabilities.json"]


def cmd_diagnose(cfg, out):
    model, x = load_model(cfg)
    outputs = []
    if model.radial_gauge is not None:
        write_ppqq(out / "ppqq.csv", pp_qq_data(model))
        outputs.append(out / "ppqq.csv")
        for T in cfg["return_periods"]:
            path = out / f"return_curve_T{T:g}.csv"
            write_return_curve(path, return_curve(model, T))
            outputs.append(path)
    gauges = {"radial": model.radial_gauge, "angular": model.angular_gauge}
    for name, g in gauges.items():
        if g is None:
            continue
        for key, (w, r) in export_limit_set(g).items():
            path = out / f"limit_set_{name}_{key}.csv"
            write_limit_set(path, w, r)
            outputs.append(path)
    if "chi_sets" in cfg and model.radial_gauge is not None and not model.laplace:
        rng = np.random.default_rng(cfg["seed"])
        interp = model.threshold.interpolator()
        for C in cfg["chi_sets"]:
            chi = chi_model(model, _sampler(cfg, model, rng), C, cfg["chi_u"], cfg["n_star"],
                            rng, data=x, threshold_fn=interp)
            path = out / f"chi_{'_'.join(str(c + 1) for c in C)}.csv"
            write_chi(path, chi)
            outputs.append(path)
    return outputs


def _study_regions(cfg):
    """Config regions keyed by their dimension; defaults cover the rest."""
    out = {}
    for reg in regions_from_config(cfg, None) if "regions" in cfg else []:
        out.setdefault(reg.dim, []).append(reg)
    return out


def cmd_study(cfg, out):
    sc = StudyConfig(tuple(cfg["distributions"]), tuple(cfg["labels"]), cfg["replications"],
                     cfg["n"], cfg["n_star"], cfg["tau"], cfg["h_r"], cfg["h_w"], cfg["seed"],
                     cfg["workers"], cfg["truth_mc"], _study_regions(cfg))
    rows, summary = run_study(sc)
    write_rows(out / "study_estimates.csv", rows)
    box = {}
    for row in rows:
        key = (row["distribution"], row["ss"], row["replication"])
        box.setdefault(key, {"distribution": key[0], "ss": key[1], "replication": key[2]})
        box[key][f"log_error_B{row['region']}"] = row["log_error"]
    write_rows(out / "study_boxplot.csv", list(box.values()))
    write_rows(out / "study_summary.csv", summary)
    (out / "study_summary.json").write_text(json.dumps(summary, indent=1))
    return [out / f for f in ("study_estimates.csv", "study_boxplot.csv", "study_summary.csv",
                              "study_summary.json")]


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser():
    p = argparse.ArgumentParser(prog="pwlextremes", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a dataset from a named distribution or copula family",
        "transform": "semiparametric transform of raw data to exponential or Laplace margins",
        "threshold": "KDE quantile threshold, optional CV bandwidth choice, exceedances",
        "fit": "fit a piecewise-linear gauge (SS label or mode/bounded), optional lambda CV",
        "bound": "apply the bounding iteration to a fitted radial or joint model",
        "extrapolate": "estimate probabilities of extremal regions",
        "diagnose": "PP/QQ data, return curves, limit sets and chi estimates",
        "study": "replicated probability-estimation study with RMSE summary",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (value parsed as JSON)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
        if name != "simulate" and name != "study":
            s.add_argument("--data", help="input CSV")
        if name in ("bound", "extrapolate", "diagnose"):
            s.add_argument("--model", help="model JSON from fit")
        if name in ("simulate", "study"):
            s.add_argument("--n", type=int, help="sample size")
        if name == "simulate":
            s.add_argument("--distribution", help="named distribution I-VII or laplace_gaussian")
            s.add_argument("--family")
            s.add_argument("--alpha", type=float)
        if name in ("threshold", "fit"):
            s.add_argument("--tau", type=float)
        if name == "fit":
            s.add_argument("--ss", help="fit configuration label SS1-SS6")
            s.add_argument("--mode", choices=["radial", "angular", "joint"])
            s.add_argument("--bounded", action="store_const", const=True)
            s.add_argument("--lam", type=float)
        if name in ("extrapolate", "diagnose", "study"):
            s.add_argument("--n-star", dest="n_star", type=int)
        if name == "study":
            s.add_argument("--workers", type=int, help="worker processes")
            s.add_argument("--replications", type=int)
            s.add_argument("--distributions", nargs="+")
            s.add_argument("--labels", nargs="+")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, outputs)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, FloatingPointError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
