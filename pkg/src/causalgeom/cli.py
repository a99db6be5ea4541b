"""Config-driven experiment runner.

Reads a declarative YAML config (or a previously written manifest.json),
evaluates the requested effective-information computation over an optional
parameter sweep, and writes ``results.csv`` plus ``manifest.json`` into the
output directory. Reruns with the same config and seed are byte-identical.

Exit codes: 0 success, 2 config error, 3 numeric error (the failing grid
point is named on standard error).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import pathlib
import sys
import typing as tp

import numpy as np
import yaml

from . import __version__
from .ei import (
    _LN2,
    EIReport,
    MonteCarloSpec,
    ei_exact_mc,
    ei_exact_quadrature,
    ei_geometric,
)
from .errors import CausalGeomError, InvalidConfigError, UseMonteCarloError
from .geometry import causal_eigenvalues
from .manifold import SweepSpec, coarse_grained_ei, crossover_scan
from .models import (
    ChainModel,
    DecayConfounderConfig,
    TwoSpeciesConfig,
    antidiagonal_submanifold,
    binary_switch_model,
    decay_confounder_metrics,
    diagonal_submanifold,
    dimmer_family,
    dimmer_model,
    linear_profile,
    power_profile,
    two_species_model,
    weber_noise,
    weber_optimal_profile,
)

SCHEMA_VERSION = 1

_SUBMANIFOLDS = {
    "diagonal": (diagonal_submanifold, "subA"),
    "antidiagonal": (antidiagonal_submanifold, "subB"),
}


# ---------------------------------------------------------------------------
# model registry
# ---------------------------------------------------------------------------


class ModelEntry(tp.NamedTuple):
    build: tp.Callable[[dict], tp.Any]
    defaults: dict
    description: str


def _build_dimmer(p: dict) -> ChainModel:
    kind = p["profile"]
    if kind == "linear":
        profile = linear_profile()
    elif kind == "power":
        profile = power_profile(float(p["exponent"]))
    else:
        raise InvalidConfigError(f"unknown dimmer profile {kind!r} (linear or power)")
    return dimmer_model(profile, float(p["epsilon"]), float(p["delta"]))


def _build_family(p: dict) -> ChainModel:
    return dimmer_family(float(p["a"]), float(p["epsilon"]), float(p["delta"]))


def _build_weber(p: dict) -> ChainModel:
    noise = weber_noise(float(p["epsilon0"]), floor=float(p["floor"]))
    return dimmer_model(weber_optimal_profile(float(p["r"])), noise, float(p["delta"]))


def _build_binary(p: dict) -> ChainModel:
    return binary_switch_model(float(p["epsilon"]), float(p["delta"]))


def _build_two_species(p: dict) -> ChainModel:
    cfg = TwoSpeciesConfig(
        epsilon=float(p["epsilon"]),
        delta=float(p["delta"]),
        delta_t=float(p["delta_t"]),
        n_points=int(p["n_points"]),
        matrix=np.asarray(p["matrix"], dtype=float),
    )
    return two_species_model(cfg)


def _build_decay(p: dict):
    cfg = DecayConfounderConfig(
        sigma_t=float(p["sigma_t"]),
        sigma_x=float(p["sigma_x"]),
        alpha=float(p["alpha"]),
        x_hat=float(p["x_hat"]),
    )
    return decay_confounder_metrics(cfg)


MODELS: dict[str, ModelEntry] = {
    "dimmer": ModelEntry(
        _build_dimmer,
        {"epsilon": 0.03, "delta": 0.03, "profile": "linear", "exponent": 2.0},
        "one-dimensional response profile with constant output noise",
    ),
    "dimmer-family": ModelEntry(
        _build_family,
        {"a": 0.0, "epsilon": 0.03, "delta": 0.03},
        "exponential-family response profile indexed by a (a=0 is linear)",
    ),
    "dimmer-weber": ModelEntry(
        _build_weber,
        {"r": 0.1, "epsilon0": 0.03, "delta": 0.003, "floor": 1e-3},
        "optimal profile for output noise proportional to the output level",
    ),
    "binary-switch": ModelEntry(
        _build_binary,
        {"epsilon": 1e-4, "delta": 1e-4},
        "two-point intervention set on the linear response",
    ),
    "two-species": ModelEntry(
        _build_two_species,
        {
            "epsilon": 1e-2,
            "delta": 1e-2,
            "delta_t": 1.0,
            "n_points": 3,
            "matrix": [[1.0, 0.0], [0.0, 1.0]],
        },
        "sum of two exponential decays sampled at N time points",
    ),
    "decay-confounder": ModelEntry(
        _build_decay,
        {"sigma_t": 0.05, "sigma_x": 1.0, "alpha": 1.0, "x_hat": 1.0},
        "confounded decay estimate; compares causal and statistical metrics",
    ),
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema_version",
    "model",
    "models",
    "computation",
    "estimator",
    "sweep",
    "submanifolds",
    "theta",
    "output",
    "seed",
    "units",
    "threads",
    "plot",
}
_COMPUTATIONS = ("ei-exact", "ei-geom", "ei-both", "eigen", "crossover-scan")


def _load_config(path: str) -> dict:
    p = pathlib.Path(path)
    if not p.is_file():
        raise InvalidConfigError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        doc = json.loads(text)
        if isinstance(doc, dict) and "config" in doc:  # a manifest round-trip
            doc = doc["config"]
    else:
        doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise InvalidConfigError("config must be a mapping of keys to values")
    return doc


def _resolve_model(entry: dict) -> dict:
    if not isinstance(entry, dict) or "name" not in entry:
        raise InvalidConfigError("each model needs at least a 'name' key")
    name = entry["name"]
    if name not in MODELS:
        known = ", ".join(sorted(MODELS))
        raise InvalidConfigError(f"unknown model {name!r}; built-in models: {known}")
    params = dict(MODELS[name].defaults)
    for key, value in entry.items():
        if key == "name":
            continue
        if key not in params:
            raise InvalidConfigError(f"model {name!r} has no parameter {key!r}")
        default = params[key]
        try:
            if isinstance(default, bool) or isinstance(value, bool):
                raise TypeError("boolean is not a valid parameter value")
            if isinstance(default, int):
                params[key] = int(value)
            elif isinstance(default, float):
                params[key] = float(value)
            else:
                params[key] = value
        except (TypeError, ValueError) as exc:
            raise InvalidConfigError(f"model parameter {key}={value!r}: {exc}") from exc
    return {"name": name, **params}


def _resolve_config(doc: dict) -> dict:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidConfigError(
            f"config schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}"
        )
    if ("model" in doc) == ("models" in doc):
        raise InvalidConfigError("config needs exactly one of 'model' or 'models'")
    models = [_resolve_model(m) for m in (doc.get("models") or [doc["model"]])]

    computation = doc.get("computation")
    if computation not in _COMPUTATIONS:
        raise InvalidConfigError(
            f"computation must be one of {', '.join(_COMPUTATIONS)}; got {computation!r}"
        )
    if len(models) > 1 and computation != "crossover-scan":
        raise InvalidConfigError("multiple models are only supported for crossover-scan")

    estimator = doc.get("estimator", "geometric" if _has_metrics(models) else "exact")
    if estimator not in ("exact", "geometric"):
        raise InvalidConfigError("estimator must be 'exact' or 'geometric'")

    units = doc.get("units", "bits")
    if units not in ("bits", "nats"):
        raise InvalidConfigError("units must be 'bits' or 'nats'")

    sweep = doc.get("sweep")
    if sweep is not None:
        required = {"variable", "from", "to", "steps"}
        if not isinstance(sweep, dict) or not required <= set(sweep):
            raise InvalidConfigError("sweep needs keys variable, from, to, steps")
        extra = set(sweep) - required - {"log", "tie"}
        if extra:
            raise InvalidConfigError(f"unknown sweep keys: {sorted(extra)}")
        if int(sweep["steps"]) < 2:
            raise InvalidConfigError("sweep steps must be at least 2")
        sweep = {
            "variable": str(sweep["variable"]),
            "from": float(sweep["from"]),
            "to": float(sweep["to"]),
            "steps": int(sweep["steps"]),
            "log": bool(sweep.get("log", False)),
            "tie": [str(t) for t in sweep.get("tie", [])],
        }
        for var in [sweep["variable"], *sweep["tie"]]:
            ok = any(var in m or var == "theta" for m in models)
            if not ok:
                raise InvalidConfigError(f"sweep variable {var!r} is not a model parameter")

    subs = [str(s) for s in doc.get("submanifolds", [])]
    for s in subs:
        if s not in _SUBMANIFOLDS:
            raise InvalidConfigError(
                f"unknown submanifold {s!r}; available: {', '.join(_SUBMANIFOLDS)}"
            )
    if computation == "crossover-scan" and sweep is None:
        raise InvalidConfigError("crossover-scan requires a sweep")

    theta = doc.get("theta")
    if theta is not None:
        theta = [float(t) for t in np.atleast_1d(theta)]

    return {
        "schema_version": SCHEMA_VERSION,
        "models": models,
        "computation": computation,
        "estimator": estimator,
        "sweep": sweep,
        "submanifolds": subs,
        "theta": theta,
        "output": doc.get("output"),
        "seed": int(doc.get("seed") or 0),
        "units": units,
        "threads": int(doc["threads"]) if doc.get("threads") is not None else None,
        "plot": bool(doc.get("plot", False)),
    }


def _has_metrics(models: list[dict]) -> bool:
    return all(m["name"] not in ("binary-switch", "decay-confounder") for m in models)


def _thread_count(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("CG_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidConfigError(f"CG_THREADS must be an integer, got {env!r}") from exc
    if cfg["threads"] is not None:
        return max(1, cfg["threads"])
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _instantiate(model_cfg: dict, overrides: dict) -> tp.Any:
    params = {**model_cfg, **{k: v for k, v in overrides.items() if k in model_cfg}}
    return MODELS[model_cfg["name"]].build(params)


def _exact_report(model: ChainModel, seed: int, in_sweep: bool) -> EIReport:
    try:
        return ei_exact_quadrature(
            model.x_set, model.ch_xt, model.ch_ty, check_convergence=not in_sweep
        )
    except UseMonteCarloError:
        return ei_exact_mc(model.x_set, model.ch_xt, model.ch_ty, MonteCarloSpec(seed=seed))


def _to_units(nats: float, units: str) -> float:
    return nats if units == "nats" else nats / _LN2


def _curves(cfg: dict) -> list[tuple[str, tp.Callable[[dict], float]]]:
    """Labeled curve evaluators taking a sweep-override dict to nats."""
    seed = cfg["seed"]
    estimator = cfg["estimator"]
    in_sweep = cfg["sweep"] is not None
    multi = len(cfg["models"]) > 1 or bool(cfg["submanifolds"])
    curves: list[tuple[str, tp.Callable[[dict], float]]] = []
    for model_cfg in cfg["models"]:
        if multi:
            label = "2d" if model_cfg["name"] == "two-species" else model_cfg["name"].replace("-", "_")
        else:
            label = ""

        def full(overrides: dict, mc=model_cfg) -> float:
            model = _instantiate(mc, overrides)
            if estimator == "exact":
                return _exact_report(model, seed, in_sweep).nats
            return ei_geometric(model.g, model.h, model.theta_domain).nats

        curves.append((label, full))
    base = cfg["models"][0]
    for name in cfg["submanifolds"]:
        factory, label = _SUBMANIFOLDS[name]

        def part(overrides: dict, f=factory) -> float:
            model = _instantiate(base, overrides)
            return coarse_grained_ei(model, f()).nats

        curves.append((label, part))
    return curves


def _eigen_row(cfg: dict, overrides: dict) -> list[float]:
    model = _instantiate(cfg["models"][0], overrides)
    if cfg["models"][0]["name"] == "decay-confounder":
        theta = float(overrides.get("theta", cfg["theta"][0] if cfg["theta"] else 0.5))
        h_caus = float(model.h_caus(theta)[0, 0])
        h_stat = float(model.h_stat(theta)[0, 0])
        return [theta, h_caus, h_stat, float(model.h_stat_series(theta))]
    if not cfg["theta"]:
        raise InvalidConfigError("eigen computation needs a theta point")
    theta = np.asarray(cfg["theta"], dtype=float)
    report = causal_eigenvalues(model.g, model.h, theta)
    return list(report.eigenvalues)


def _eigen_header(cfg: dict) -> list[str]:
    if cfg["models"][0]["name"] == "decay-confounder":
        return ["theta", "h_caus", "h_stat", "h_stat_series"]
    return [f"lambda_{i + 1}" for i in range(len(cfg["theta"]))]


def _evaluate(cfg: dict, threads: int) -> tuple[list[str], list[list], list[str]]:
    """Returns (header, rows, crossing comment lines)."""
    units = cfg["units"]
    computation = cfg["computation"]
    sweep = cfg["sweep"]
    suffix = f"_{units}"

    if computation == "eigen":
        if sweep is None:
            return _eigen_header(cfg), [_eigen_row(cfg, {})], []
        values = SweepSpec.from_range(
            sweep["variable"], sweep["from"], sweep["to"], sweep["steps"], log=sweep["log"]
        ).values
        rows = _parallel(
            lambda v: _eigen_row(cfg, _overrides(sweep, v)), values, threads
        )
        header = _eigen_header(cfg)
        if sweep["variable"] != "theta":
            header = [sweep["variable"]] + header
            rows = [[v] + r for v, r in zip(values, rows)]
        return header, rows, []

    curves = _curves(cfg)
    if computation == "ei-both":
        single = cfg["models"][0]
        seed, in_sweep = cfg["seed"], sweep is not None

        def both(overrides: dict) -> list[float]:
            model = _instantiate(single, overrides)
            exact = _exact_report(model, seed, in_sweep).nats
            geom = ei_geometric(model.g, model.h, model.theta_domain).nats
            return [_to_units(exact, units), _to_units(geom, units)]

        header = [f"ei_exact{suffix}", f"ei_geom{suffix}"]
        evaluate: tp.Callable[[dict], list[float]] = both
    else:
        header = [f"ei_{label}{suffix}" if label else f"ei{suffix}" for label, _ in curves]

        def evaluate(overrides: dict) -> list[float]:
            return [_to_units(fn(overrides), units) for _, fn in curves]

    if sweep is None:
        return header, [evaluate({})], []

    values = SweepSpec.from_range(
        sweep["variable"], sweep["from"], sweep["to"], sweep["steps"], log=sweep["log"]
    ).values
    if computation == "crossover-scan":
        spec = SweepSpec(variable=sweep["variable"], values=values, log=sweep["log"])
        models = [(label or "ei", _curve_as_report(fn, sweep)) for label, fn in curves]
        scan = crossover_scan(models, spec)
        rows = []
        for i, v in enumerate(values):
            cells = [
                _to_units(rep.nats, units) if (rep := scan.curves[label][i]) is not None else float("nan")
                for label, _ in models
            ]
            rows.append([float(v)] + cells)
        comments = [
            f"#crossing,{c.first},{c.second},{c.value:.17g},{c.bracket[0]:.17g},{c.bracket[1]:.17g}"
            for c in scan.crossings
        ]
        header = [sweep["variable"]] + [
            f"ei_{label}{suffix}" if label != "ei" else f"ei{suffix}" for label, _ in models
        ]
        return header, rows, comments

    rows = _parallel(lambda v: evaluate(_overrides(sweep, v)), values, threads)
    return [sweep["variable"]] + header, [[float(v)] + r for v, r in zip(values, rows)], []


def _overrides(sweep: dict, value: float) -> dict:
    out = {sweep["variable"]: value}
    for tied in sweep["tie"]:
        out[tied] = value
    return out


def _curve_as_report(fn: tp.Callable[[dict], float], sweep: dict) -> tp.Callable[[float], EIReport]:
    def wrapped(value: float) -> EIReport:
        return EIReport.build(fn(_overrides(sweep, value)), "scan", "scan")

    return wrapped


def _parallel(fn: tp.Callable[[float], list], values: np.ndarray, threads: int) -> list[list]:
    """Evaluate per sweep value, assembling results in grid order."""

    def guarded(v: float) -> list:
        try:
            return fn(v)
        except CausalGeomError as exc:
            raise type(exc)(f"at grid point {v:.17g}: {exc}") from exc

    points = [float(v) for v in values]
    if threads <= 1 or len(points) <= 1:
        return [guarded(v) for v in points]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(guarded, v) for v in points]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def _write_results(path: pathlib.Path, header: list[str], rows: list[list], comments: list[str]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_format_cell(c) for c in row) for row in rows]
    lines += comments
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _write_manifest(path: pathlib.Path, cfg: dict) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_plot(path: pathlib.Path, header: list[str], rows: list[list], log_x: bool) -> None:
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plot requested but matplotlib is not installed; skipping", file=sys.stderr)
        return
    data = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    if data.shape[1] == 1:
        ax.plot(data[:, 0], marker="o")
        ax.set_ylabel(header[0])
    else:
        for k in range(1, data.shape[1]):
            ax.plot(data[:, 0], data[:, k], marker=".", label=header[k])
        ax.set_xlabel(header[0])
        ax.legend()
        if log_x:
            ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    doc = _load_config(args.config)
    for key in ("output", "seed", "units", "estimator"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if args.plot:
        doc["plot"] = True
    try:
        cfg = _resolve_config(doc)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(str(exc)) from exc
    if not cfg["output"]:
        raise InvalidConfigError("no output directory (config key 'output' or --output)")
    threads = _thread_count(args.threads, cfg)

    out_dir = pathlib.Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows, comments = _evaluate(cfg, threads)
    _write_results(out_dir / "results.csv", header, rows, comments)
    _write_manifest(out_dir / "manifest.json", cfg)
    if cfg["plot"]:
        _write_plot(out_dir / "plot.svg", header, rows, bool(cfg["sweep"] and cfg["sweep"]["log"]))
    print(out_dir / "results.csv")
    return 0


def _cmd_list_models(args: argparse.Namespace) -> int:
    if args.as_json:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "models": [
                {"name": name, "params": entry.defaults, "description": entry.description}
                for name, entry in sorted(MODELS.items())
            ],
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    width = max(len(name) for name in MODELS)
    for name, entry in sorted(MODELS.items()):
        params = " ".join(f"{k}={v}" for k, v in entry.defaults.items())
        print(f"{name:<{width}}  {entry.description}")
        print(f"{'':<{width}}  parameters: {params}")
    return 0


def _cmd_eigen(args: argparse.Namespace) -> int:
    params: dict = {}
    for item in args.param or []:
        if "=" not in item:
            raise InvalidConfigError(f"--param expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        params[key] = yaml.safe_load(raw)
    model_cfg = _resolve_model({"name": args.model, **params})
    theta = [float(t) for t in args.theta.split(",")]
    cfg = {"models": [model_cfg], "theta": theta}
    row = _eigen_row(cfg, {"theta": theta[0]} if args.model == "decay-confounder" else {})
    header = _eigen_header(cfg)
    for name, value in zip(header, row):
        print(f"{name} {value:.17g}")
    return 0


def main(argv: tp.Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalgeom",
        description="effective information and causal geometry experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config and write results.csv + manifest.json")
    p_run.add_argument("config", help="YAML config or a previously written manifest.json")
    p_run.add_argument("--output", help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, help="Monte Carlo seed (overrides config)")
    p_run.add_argument("--threads", type=int, help="worker threads (overrides CG_THREADS and config)")
    p_run.add_argument("--units", choices=("bits", "nats"), help="report units (overrides config)")
    p_run.add_argument("--estimator", choices=("exact", "geometric"), help="EI estimator for curves")
    p_run.add_argument("--plot", action="store_true", help="also write plot.svg (needs matplotlib)")

    p_list = sub.add_parser("list-models", help="list built-in models")
    p_list.add_argument("--json", action="store_true", dest="as_json", help="machine-readable listing")

    p_eigen = sub.add_parser("eigen", help="print causal eigenvalues at a parameter point")
    p_eigen.add_argument("--model", required=True)
    p_eigen.add_argument("--theta", required=True, help="comma-separated parameter point")
    p_eigen.add_argument("--param", action="append", help="model parameter as key=value (repeatable)")

    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "list-models": _cmd_list_models, "eigen": _cmd_eigen}
    try:
        return handlers[args.command](args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CausalGeomError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
