"""Command-line front end.

    python -m torusendo run experiment.cfg
    python -m torusendo compare a.json b.json
    python -m torusendo perturb perturb.cfg

Configs are line-oriented ``key = value`` files; ``#`` starts a comment.
Each run writes ``<output_dir>/<name>.json`` (a summary that embeds the
resolved config) and, for most kinds, ``<name>.csv``. The environment
variable ``TORUSENDO_OUTPUT_DIR`` overrides ``output_dir``.

Exit codes: 0 success, 2 config error, 3 capacity error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .errors import CapacityError, ConfigError, NumericalError, PreconditionError, TorusEndoError
from .maps import parse_map

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ENV = "TORUSENDO_OUTPUT_DIR"
SCHEMA_VERSION = 1
REQUIRED = object()


# -- value parsers ------------------------------------------------------------


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _float(text: str) -> float:
    v = float(text)
    if not np.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _point(text: str) -> list:
    parts = [float(t) for t in text.replace(" ", "").split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'x, y', got {text!r}")
    return parts


def _points(text: str) -> list:
    return [_point(p) for p in text.split(";") if p.strip()]


def _ints(text: str) -> list:
    return [_int(t) for t in text.split(",") if t.strip()]


def _matrix(text: str) -> list:
    rows = [[_int(v) for v in r.split(",")] for r in text.split(";")]
    if len(rows) != 2 or any(len(r) != 2 for r in rows):
        raise ValueError(f"expected 'a,b;c,d', got {text!r}")
    return rows


def _weighting(text: str) -> str:
    if text not in ("bernoulli", "jacobian"):
        raise ValueError(f"weighting must be bernoulli or jacobian, got {text!r}")
    return text


def _str(text: str) -> str:
    return text


COMMON = {
    "kind": (_str, REQUIRED),
    "name": (_str, None),
    "output_dir": (_str, "."),
    "threads": (_int, 0),
}

CURVE_KEYS = {
    "curve_center": (_point, REQUIRED),
    "curve_direction": (_point, [1.0, 0.0]),
    "curve_half_length": (_float, REQUIRED),
}

KINDS = {
    "c-estimate": {
        "map": (_str, REQUIRED),
        "N": (_int, REQUIRED),
        "spatial_grid": (_int, 8),
        "direction_grid": (_int, 64),
        "sequence": (_ints, []),
        "node_cap": (_int, 2_000_000),
        "r_minus_n": (_int, None),
    },
    "r-minus": {
        "map": (_str, REQUIRED),
        "n": (_int, REQUIRED),
        "spatial_grid": (_int, 32),
    },
    "backward-measure": {
        "map": (_str, REQUIRED),
        "n": (_int, REQUIRED),
        "trials": (_int, 1),
        "starts": (_points, REQUIRED),
        "weighting": (_weighting, "bernoulli"),
        "bins": (_int, 32),
        "seed": (_int, REQUIRED),
    },
    "perturb": {
        "E": (_matrix, REQUIRED),
        "eps": (_float, REQUIRED),
        "p": (_float, None),
        "delta": (_float, None),
        "samples": (_int, 1000),
        "quadrature": (_int, 1024),
        "seed": (_int, 0),
    },
    "lyapunov": {
        "map": (_str, REQUIRED),
        "n": (_int, REQUIRED),
        "start": (_point, REQUIRED),
        "burn_in": (_int, 64),
    },
    "density": {
        "map": (_str, REQUIRED),
        "N": (_int, REQUIRED),
        "probe_grid": (_int, 64),
        "samples": (_int, 256),
        "point_cap": (_int, 10_000_000),
        **CURVE_KEYS,
    },
    "geotimes": {
        "map": (_str, REQUIRED),
        "n_max": (_int, REQUIRED),
        "n_words": (_int, REQUIRED),
        "alpha": (_float, REQUIRED),
        "eps": (_float, REQUIRED),
        "ladder_depth": (_int, 20),
        "samples": (_int, 256),
        "seed": (_int, REQUIRED),
        **CURVE_KEYS,
    },
    "cone-check": {
        "map": (_str, REQUIRED),
        "N": (_int, REQUIRED),
        "point": (_point, REQUIRED),
        "direction": (_point, REQUIRED),
        "n_dirs": (_int, 64),
        "m_grid": (_int, 128),
    },
    "tree-identity": {
        "map": (_str, REQUIRED),
        "n": (_int, REQUIRED),
        "m": (_int, REQUIRED),
        "cases": (_int, 50),
        "seed": (_int, REQUIRED),
    },
}

STOCHASTIC = ("backward-measure", "geotimes", "tree-identity")


# -- config -------------------------------------------------------------------


def read_config(text: str) -> dict:
    """Raw ``key -> string`` pairs; later duplicates are an error."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw: dict) -> dict:
    """Apply types and defaults; every error names the offending key."""
    kind = raw.get("kind")
    if kind is None:
        raise ConfigError("missing required key 'kind'")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {sorted(KINDS)}")
    table = {**COMMON, **KINDS[kind]}
    unknown = sorted(set(raw) - set(table))
    if unknown:
        raise ConfigError(f"unknown keys for kind {kind!r}: {unknown}")
    out = {}
    for key, (parse, default) in table.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: {exc}") from exc
        elif default is REQUIRED:
            why = " (stochastic kinds need an explicit seed)" if key == "seed" else ""
            raise ConfigError(f"missing required key {key!r}{why}")
        else:
            out[key] = default
    if out["name"] is None:
        out["name"] = kind
    if out["threads"] < 0:
        raise ConfigError("key 'threads': must be >= 0 (0 = auto)")
    if "map" in out:
        try:
            out["map"] = parse_map(out["map"]).describe()
        except ValueError as exc:
            raise ConfigError(f"key 'map': {exc}") from exc
    env = os.environ.get(OUTPUT_ENV)
    if env:
        out["output_dir"] = env
    return out


# -- experiments --------------------------------------------------------------


def _curve(cfg):
    from .curves import segment

    return segment(cfg["curve_center"], cfg["curve_direction"], cfg["curve_half_length"])


def _run_c_estimate(cfg, f, csv_path):
    from .expansion import C_estimate

    rep = C_estimate(
        f,
        cfg["N"],
        m_spatial=cfg["spatial_grid"],
        m_dir=cfg["direction_grid"],
        sequence=cfg["sequence"],
        node_cap=cfg["node_cap"],
        r_minus_n=cfg["r_minus_n"],
    )
    rep.to_csv(csv_path)
    return rep.summary()


def _run_r_minus(cfg, f, csv_path):
    from .expansion import R_minus_estimate

    return {"R_minus_est": R_minus_estimate(f, cfg["n"], cfg["spatial_grid"]), "n": cfg["n"]}


def _run_backward_measure(cfg, f, csv_path):
    from .measures import EmpiricalMeasure, empirical_backward_measure, measure_distance_l1, noise_floor

    mu = empirical_backward_measure(
        f, cfg["starts"], cfg["n"], trials=cfg["trials"], weighting=cfg["weighting"], m=cfg["bins"], seed=cfg["seed"]
    )
    mu.to_csv(csv_path)
    return {
        "bins": mu.m,
        "total": mu.total,
        "counts": mu.counts.tolist(),
        "l1_to_uniform": measure_distance_l1(mu, EmpiricalMeasure.uniform(mu.m)),
        "noise_floor": noise_floor(mu.m, mu.total),
    }


def _run_perturb(cfg, f, csv_path):
    from .perturbation import check_conservative_1d, check_conservative_2d, folding_entropy_leb, make_g_epsilon

    g = make_g_epsilon(cfg["E"], cfg["eps"], p=cfg["p"], delta=cfg["delta"])
    rng = np.random.default_rng(cfg["seed"])
    r1 = check_conservative_1d(g.circle, rng.random(cfg["samples"]))
    r2 = check_conservative_2d(g, rng.random((cfg["samples"], 2)))
    F, err = folding_entropy_leb(g, m=cfg["quadrature"], seed=cfg["seed"])
    log_d = float(np.log(g.degree))
    return {
        "map_id": g.describe(),
        "tau1": g.tau1,
        "tau2": g.tau2,
        "detU": g.U.det,
        "detV": g.V.det,
        "max_residual_1d": r1,
        "max_residual_2d": r2,
        "folding_entropy": F,
        "folding_entropy_err": err,
        "log_d": log_d,
        "gap": log_d - F,
    }


def _run_lyapunov(cfg, f, csv_path):
    from .measures import forward_lyapunov

    est = forward_lyapunov(f, cfg["start"], cfg["n"], burn_in=cfg["burn_in"])
    return {
        "chi_plus": est.chi_plus,
        "chi_minus": est.chi_minus,
        "log_det_avg": est.log_det_avg,
        "n": est.n,
    }


def _run_density(cfg, f, csv_path):
    from .curves import preimage_density

    radii = preimage_density(
        f, _curve(cfg), cfg["N"], m_probe=cfg["probe_grid"], samples=cfg["samples"], point_cap=cfg["point_cap"]
    )
    with open(csv_path, "w") as fh:
        fh.write("n,covering_radius\n")
        for n, r in enumerate(radii):
            fh.write(f"{n},{r!r}\n")
    return {"radii": radii, "radius_N": radii[-1], "radius_0": radii[0]}


def _run_geotimes(cfg, f, csv_path):
    from .curves import geometric_time_density

    res = geometric_time_density(
        f,
        _curve(cfg),
        cfg["n_max"],
        cfg["n_words"],
        cfg["alpha"],
        cfg["eps"],
        seed=cfg["seed"],
        m=cfg["samples"],
        ladder_depth=cfg["ladder_depth"],
    )
    with open(csv_path, "w") as fh:
        fh.write("word_index,density\n")
        for i, v in enumerate(res["densities"]):
            fh.write(f"{i},{v!r}\n")
    return res


def _run_cone_check(cfg, f, csv_path):
    from .expansion import cone_invariance_check

    return cone_invariance_check(f, cfg["point"], cfg["direction"], cfg["N"], n_dirs=cfg["n_dirs"], m_grid=cfg["m_grid"])


def _run_tree_identity(cfg, f, csv_path):
    from .expansion import verify_tree_identity

    rng = np.random.default_rng(cfg["seed"])
    xs = rng.random((cfg["cases"], 2))
    th = rng.uniform(0.0, 2 * np.pi, cfg["cases"])
    res = [
        verify_tree_identity(f, x, (np.cos(t), np.sin(t)), cfg["n"], cfg["m"]) for x, t in zip(xs, th)
    ]
    with open(csv_path, "w") as fh:
        fh.write("x,y,theta,residual\n")
        for x, t, r in zip(xs, th, res):
            fh.write(f"{x[0]!r},{x[1]!r},{t!r},{r!r}\n")
    return {"max_residual": float(max(res)), "cases": cfg["cases"]}


RUNNERS = {
    "c-estimate": _run_c_estimate,
    "r-minus": _run_r_minus,
    "backward-measure": _run_backward_measure,
    "perturb": _run_perturb,
    "lyapunov": _run_lyapunov,
    "density": _run_density,
    "geotimes": _run_geotimes,
    "cone-check": _run_cone_check,
    "tree-identity": _run_tree_identity,
}

WRITES_CSV = {"c-estimate", "backward-measure", "density", "geotimes", "tree-identity"}

# required result fields per kind; the full field list is in the README
RESULT_FIELDS = {
    "c-estimate": ["C_est", "max_value", "N", "map_id", "sequence"],
    "r-minus": ["R_minus_est", "n"],
    "backward-measure": ["bins", "total", "counts", "l1_to_uniform", "noise_floor"],
    "perturb": ["tau1", "tau2", "detU", "detV", "max_residual_1d", "max_residual_2d", "folding_entropy", "log_d", "gap"],
    "lyapunov": ["chi_plus", "chi_minus", "log_det_avg", "n"],
    "density": ["radii", "radius_0", "radius_N"],
    "geotimes": ["densities", "beta_hat", "mean"],
    "cone-check": ["lambda", "epsilon", "K", "Df_sup", "applicable", "passed"],
    "tree-identity": ["max_residual", "cases"],
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "config", "seed", "results", "artifacts"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": sorted(KINDS)},
        "config": {"type": "object", "required": ["kind", "name", "output_dir", "threads"]},
        "seed": {"type": ["integer", "null"]},
        "results": {"type": "object"},
        "artifacts": {"type": "array", "items": {"type": "string"}},
    },
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": kind}}},
            "then": {"properties": {"results": {"required": fields}}},
        }
        for kind, fields in RESULT_FIELDS.items()
    ],
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def run_experiment(cfg: dict) -> dict:
    """Run a resolved config, write its artifacts and return the summary."""
    kind = cfg["kind"]
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{cfg['name']}.csv"
    f = parse_map(cfg["map"]) if "map" in cfg else None
    results = RUNNERS[kind](cfg, f, csv_path)
    artifacts = [csv_path.name] if kind in WRITES_CSV else []
    summary = _jsonable(
        {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "config": cfg,
            "seed": cfg.get("seed"),
            "results": results,
            "artifacts": artifacts,
        }
    )
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    with open(out_dir / f"{cfg['name']}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _guarded(fn):
    """Run ``fn`` and translate failures to exit codes with a one-line diagnostic."""
    try:
        return fn()
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (NumericalError, PreconditionError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TorusEndoError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_run(path: str, require_kind: str | None = None) -> int:
    def go():
        cfg = resolve_config(read_config(Path(path).read_text()))
        if require_kind is not None and cfg["kind"] != require_kind:
            raise ConfigError(f"expected kind = {require_kind}, got {cfg['kind']!r}")
        summary = run_experiment(cfg)
        print(f"{cfg['kind']}: wrote {Path(cfg['output_dir']) / (cfg['name'] + '.json')}")
        if cfg["kind"] == "perturb":
            print(json.dumps({k: summary["results"][k] for k in RESULT_FIELDS["perturb"]}, sort_keys=True))
        return EXIT_OK

    return _guarded(go)


def compare_summaries(a: dict, b: dict, factor: float = 3.0) -> dict:
    from .measures import EmpiricalMeasure, compare_measures

    for s in (a, b):
        if s.get("kind") != "backward-measure":
            raise ConfigError("compare needs two backward-measure summaries")
    mu = EmpiricalMeasure(np.array(a["results"]["counts"]))
    nu = EmpiricalMeasure(np.array(b["results"]["counts"]))
    if mu.m != nu.m:
        raise ConfigError(f"bin grids differ: {mu.m}x{mu.m} vs {nu.m}x{nu.m}")
    out = compare_measures(mu, nu, factor)
    out["noise_floor_a"] = a["results"]["noise_floor"]
    out["noise_floor_b"] = b["results"]["noise_floor"]
    return out


def cmd_compare(path_a: str, path_b: str) -> int:
    def go():
        a = json.loads(Path(path_a).read_text())
        b = json.loads(Path(path_b).read_text())
        print(json.dumps(compare_summaries(a, b), indent=2, sort_keys=True))
        return EXIT_OK

    return _guarded(go)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torusendo", description="Experiments on expanding-on-average torus self-covers.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    c = sub.add_parser("compare", help="compare two backward-measure summaries")
    c.add_argument("a")
    c.add_argument("b")
    q = sub.add_parser("perturb", help="run a config of kind perturb and print its report")
    q.add_argument("config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "perturb":
        return cmd_run(args.config, require_kind="perturb")
    return cmd_compare(args.a, args.b)


if __name__ == "__main__":
    sys.exit(main())
