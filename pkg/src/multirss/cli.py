"""Command-line front end.

    multirss COMMAND [--config PATH] [--seed U64] [--workers N]
                     [--out PATH] [--format {json,csv}] [--param KEY=JSON ...]

A config file is strict JSON with keys ``command``, ``params``,
``master_seed``, ``output_path``, ``format`` and ``workers``; flags override
it.  Unknown keys anywhere are rejected before any work starts.

Exit codes: 0 success, 1 a verdict fell outside its bounds (or a claim
check found violations), 2 configuration error, 3 I/O error, 4 the
computation itself failed (guards, budgets, family construction).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import bounds, experiments, nne, sampler, search, walks
from .core import InvalidParams, ProblemParams, derive_seed
from .family import FamilyBuildError, build_family

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_IO, EXIT_COMPUTE = 0, 1, 2, 3, 4
CONFIG_KEYS = ("command", "params", "master_seed", "output_path", "format", "workers")
_REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# Parameter defaults per command; _REQUIRED marks mandatory keys.
DEFAULTS = {
    "sample": {
        "n": _REQUIRED, "d": _REQUIRED, "distribution": "standard_normal", "v": None, "sigma": 1.0,
        "p": 1.0, "outlier": ["uniform_box", 1.0], "quantize_delta": None, "matrix_out": None,
    },
    "bounds": {"d": _REQUIRED, "alpha": _REQUIRED, "epsilon": _REQUIRED, "n": None, "log2_family_size": None, "C_const": bounds.DEFAULT_C},
    "solve": {"matrix": _REQUIRED, "z": _REQUIRED, "epsilon": _REQUIRED, "engine": "auto", "cardinality": None, "index_base": 0},
    "cover": {
        "epsilon": _REQUIRED, "matrix": None, "n": None, "d": None, "engine": "auto",
        "range_halfwidth": 1.0, "budget": 100000,
    },
    "moments": {"d": 1, "n": 729, "alpha": 1 / 6, "epsilon": 0.5, "family_size": 64, "z": None, "trials": 100000},
    "joint": {"d": 1, "n": 729, "alpha": 1 / 6, "epsilon": 0.5, "intersection": None, "z": None, "trials": 1000000},
    "sweep": {
        "axis": "n", "grid": _REQUIRED, "base": {"d": 1, "n": 4, "alpha": 0.25, "epsilon": 0.25},
        "trials": 200, "experiment": "coverage", "engine": "auto",
    },
    "claims": {"draws": 10000, "quadrature_points": 16, "claims": list(experiments.CLAIM_IDS)},
    "nne-demo": {"n": 20, "l": 1, "d": 2, "epsilon": 0.3, "engine": "mim", "target": None, "inputs": None},
    "walk": {"d": 1, "steps": 16, "dedup_cell": 0.0, "targets": None, "budget": walks.DEFAULT_BUDGET},
}
COMMANDS = tuple(DEFAULTS)


def resolve_params(command: str, given: dict) -> dict:
    if command not in DEFAULTS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    if not isinstance(given, dict):
        raise ConfigError("params", "must be a JSON object")
    spec = DEFAULTS[command]
    for key in given:
        if key not in spec:
            raise ConfigError(f"params.{key}", f"unknown parameter for {command}")
    out = {}
    for key, default in spec.items():
        if key in given:
            out[key] = given[key]
        elif default is _REQUIRED:
            raise ConfigError(f"params.{key}", "required parameter is missing")
        else:
            out[key] = default
    return out


def _num(params, key, kind=float):
    v = params[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"params.{key}", f"expected an integer, got {v!r}")
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"params.{key}", f"expected a number, got {v!r}")
    return float(v)


def _problem(p, prefix="params") -> ProblemParams:
    try:
        return ProblemParams(p["d"], p["n"], float(p["epsilon"]), float(p["alpha"]))
    except InvalidParams as e:
        raise ConfigError(f"{prefix}.{e.field}", str(e)) from e
    except (TypeError, KeyError) as e:
        raise ConfigError(prefix, str(e)) from e


def _vector(v, d, field):
    if v is None:
        return np.zeros(d)
    a = np.asarray(v, dtype=float).ravel()
    if a.size == 1 and d > 1:
        a = np.full(d, float(a[0]))
    if a.shape != (d,):
        raise ConfigError(field, f"expected a vector of length {d}")
    return a


def _load_matrix(path):
    try:
        return sampler.load(path)
    except OSError as e:
        raise _IOFailure(str(e)) from e


class _IOFailure(Exception):
    pass


class _ComputeFailure(Exception):
    pass


# -- commands: each returns (result dict, csv text, verdict_failed) ---------------------


def cmd_sample(p, seed, workers):
    n, d = _num(p, "n", int), _num(p, "d", int)
    kind = p["distribution"]
    try:
        if kind == "standard_normal":
            m = sampler.sample_standard_normal(n, d, seed)
        elif kind == "affine_normal":
            m = sampler.sample_affine_normal(n, d, p["v"], _num(p, "sigma"), seed)
        elif kind == "containment":
            spec = sampler.ContainmentSpec(_num(p, "p"), tuple(_vector(p["v"], d, "params.v")), _num(p, "sigma"), tuple(p["outlier"]))
            m = sampler.sample_containment(n, d, spec, seed)
        else:
            raise ConfigError("params.distribution", f"unknown distribution {kind!r}")
        if p["quantize_delta"] is not None:
            m = sampler.quantize(m, _num(p, "quantize_delta"))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("params", str(e)) from e
    if p["matrix_out"]:
        path = p["matrix_out"]
        if path.endswith(".csv"):
            _atomic_write(path, sampler.to_csv(m).encode())
        else:
            _atomic_write(path, sampler.to_bytes(m))
    result = {"n": m.n, "d": m.d, "seed": m.seed, "tag": m.tag.as_dict(), "values": m.values.tolist()}
    return result, sampler.to_csv(m), False


def cmd_bounds(p, seed, workers):
    d, a, eps = _num(p, "d", int), _num(p, "alpha"), _num(p, "epsilon")
    n = p["n"]
    if n is None:
        try:
            n = bounds.required_n_single(d, a, eps)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError("params", str(e)) from e
    params = _problem({"d": d, "n": n, "alpha": a, "epsilon": eps})
    L = None if p["log2_family_size"] is None else _num(p, "log2_family_size")
    rep = bounds.bound_report(params, L, _num(p, "C_const"))
    result = rep.as_dict()
    lines = ["name,value,scale"] + [f"{k},{v.value!r},{v.scale}" for k, v in rep.entries.items()]
    return result, "\n".join(lines) + "\n", False


def _search_dict(res, base):
    out = res.as_dict()
    out["subset"] = [i + base for i in res.subset]
    out["index_base"] = base
    return out


def cmd_solve(p, seed, workers):
    m = _load_matrix(p["matrix"])
    z = _vector(p["z"], m.d, "params.z")
    base = p["index_base"]
    if base not in (0, 1):
        raise ConfigError("params.index_base", "must be 0 or 1")
    if p["engine"] not in ("auto", "exhaustive", "mim"):
        raise ConfigError("params.engine", f"unknown engine {p['engine']!r}")
    try:
        res = search.search(m, z, _num(p, "epsilon"), p["engine"], p["cardinality"])
    except search.SearchGuardError as e:
        raise _ComputeFailure(str(e)) from e
    out = _search_dict(res, base)
    csv_text = "found,subset,error,achieved\n" + f"{res.found},{' '.join(map(str, out['subset']))},{res.error!r},{' '.join(map(repr, res.achieved))}\n"
    return out, csv_text, False


def cmd_cover(p, seed, workers):
    if p["matrix"] is not None:
        m = _load_matrix(p["matrix"])
    else:
        if p["n"] is None or p["d"] is None:
            raise ConfigError("params.matrix", "give a matrix path or both n and d")
        m = sampler.sample_standard_normal(_num(p, "n", int), _num(p, "d", int), seed)
    try:
        rep = search.cover_grid(m, _num(p, "epsilon"), p["engine"], _num(p, "range_halfwidth"), _num(p, "budget", int))
    except search.CoverageBudgetError as e:
        raise _ComputeFailure(str(e)) from e
    except search.SearchGuardError as e:
        raise _ComputeFailure(str(e)) from e
    return rep.as_dict(with_points=True), rep.points_csv(), False


def _failed(summaries):
    return any(s.verdict in ("above_upper", "below_lower") for s in summaries)


def cmd_moments(p, seed, workers):
    params = _problem(p)
    try:
        fam = build_family(params.n, params.alpha, _num(p, "family_size", int), derive_seed(seed, 0))
    except FamilyBuildError as e:
        raise _ComputeFailure(str(e)) from e
    z = _vector(p["z"], params.d, "params.z")
    mean, var = experiments.estimate_moments(params, fam, z, _num(p, "trials", int), derive_seed(seed, 1), workers)
    res = {"summaries": [mean.as_dict(), var.as_dict()], "family_build_stats": fam.build_stats}
    return res, experiments.summaries_to_csv([mean, var]), _failed([mean, var])


def cmd_joint(p, seed, workers):
    params = _problem(p)
    z = _vector(p["z"], params.d, "params.z")
    ks = [params.intersection_cap, params.tightness_intersection] if p["intersection"] is None else [_num(p, "intersection", int)]
    ks = sorted(set(ks))
    try:
        out = [
            experiments.estimate_joint_prob(params.d, params.n, params.alpha, params.epsilon, k, z, _num(p, "trials", int), derive_seed(seed, i), workers)
            for i, k in enumerate(ks)
        ]
    except ValueError as e:
        raise ConfigError("params.intersection", str(e)) from e
    return {"summaries": [s.as_dict() for s in out]}, experiments.summaries_to_csv(out), _failed(out)


def cmd_sweep(p, seed, workers):
    base = p["base"]
    if not isinstance(base, dict) or set(base) - {"d", "n", "alpha", "epsilon"}:
        raise ConfigError("params.base", "must hold exactly d, n, alpha, epsilon")
    params = _problem(base, "params.base")
    if p["axis"] not in experiments.SWEEP_AXES:
        raise ConfigError("params.axis", f"unknown axis {p['axis']!r}")
    if not isinstance(p["grid"], list) or not p["grid"]:
        raise ConfigError("params.grid", "must be a nonempty list")
    try:
        out = experiments.sweep(p["axis"], p["grid"], params, _num(p, "trials", int), seed, p["experiment"], p["engine"], workers)
    except InvalidParams as e:
        raise ConfigError(f"params.grid ({e.field})", str(e)) from e
    except (search.CoverageBudgetError, search.SearchGuardError) as e:
        raise _ComputeFailure(str(e)) from e
    return {"summaries": [s.as_dict() for s in out]}, experiments.summaries_to_csv(out), _failed(out)


def cmd_claims(p, seed, workers):
    try:
        reps = experiments.verify_appendix_claims(_num(p, "draws", int), seed, _num(p, "quadrature_points", int), p["claims"], workers)
    except ValueError as e:
        raise ConfigError("params.claims", str(e)) from e
    lines = ["claim_id,draws,violations,worst_margin"] + [f"{r.claim_id},{r.draws},{r.violations},{r.worst_margin!r}" for r in reps]
    return {"claims": [r.as_dict() for r in reps]}, "\n".join(lines) + "\n", any(r.violations for r in reps)


def cmd_nne_demo(p, seed, workers):
    n, l, d = _num(p, "n", int), _num(p, "l", int), _num(p, "d", int)
    bank = nne.sample_genes(n, l, d, derive_seed(seed, 0))
    if p["target"] is None:
        target = nne.random_target(l, d, derive_seed(seed, 1))
    else:
        try:
            target = nne.NetTensor(l, d, np.asarray(p["target"], dtype=float))
        except ValueError as e:
            raise ConfigError("params.target", str(e)) from e
    try:
        res = nne.find_genotype(bank, target, _num(p, "epsilon"), p["engine"])
    except ValueError as e:
        raise ConfigError("params.target", str(e)) from e
    approx = nne.genotype_tensor(bank, res.genotype)
    if p["inputs"] is None:
        ys = np.random.Generator(np.random.PCG64(derive_seed(seed, 2))).uniform(-1, 1, (3, d))
    else:
        ys = np.atleast_2d(np.asarray(p["inputs"], dtype=float))
    rows = []
    for y in ys:
        ft, fx = nne.forward(target, y), nne.forward(approx, y)
        rows.append({
            "input": y.tolist(), "target_output": ft.tolist(), "genotype_output": fx.tolist(),
            "difference": float(np.max(np.abs(ft - fx))), "bound": nne.forward_error_bound(target, approx, y),
        })
    result = {
        "found": res.found, "genotype": list(res.genotype.bits), "max_entry_error": res.max_entry_error,
        "tolerance": 2 * _num(p, "epsilon"), "forward": rows,
    }
    lines = ["input,difference,bound"] + [f"{' '.join(map(repr, r['input']))},{r['difference']!r},{r['bound']!r}" for r in rows]
    return result, "\n".join(lines) + "\n", False


def cmd_walk(p, seed, workers):
    d = _num(p, "d", int)
    targets = None if p["targets"] is None else np.atleast_2d(np.asarray(p["targets"], dtype=float))
    try:
        traj = walks.run_walk(d, _num(p, "steps", int), seed, _num(p, "dedup_cell"), targets, _num(p, "budget", int))
    except walks.FrontierBudgetError as e:
        raise _ComputeFailure(str(e)) from e
    except ValueError as e:
        raise ConfigError("params", str(e)) from e
    return traj.as_dict(), traj.to_csv(), False


HANDLERS = {
    "sample": cmd_sample, "bounds": cmd_bounds, "solve": cmd_solve, "cover": cmd_cover,
    "moments": cmd_moments, "joint": cmd_joint, "sweep": cmd_sweep, "claims": cmd_claims,
    "nne-demo": cmd_nne_demo, "walk": cmd_walk,
}


# -- plumbing ----------------------------------------------------------------------------


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise _IOFailure(f"cannot write {path}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multirss", description="Multidimensional random subset sum experiments.")
    ap.add_argument("command", nargs="?", help=f"one of: {', '.join(COMMANDS)}")
    ap.add_argument("--config", help="strict JSON run configuration")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    ap.add_argument("--out", help="output path (default: stdout)")
    ap.add_argument("--format", choices=("json", "csv"), help="output format (default: json)")
    ap.add_argument("--param", action="append", default=[], metavar="KEY=JSON", help="set one parameter")
    return ap


def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as e:
            raise _IOFailure(f"cannot read config {args.config}: {e}") from e
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e}") from e
        if not isinstance(cfg, dict):
            raise ConfigError("config", "top level must be an object")
        for key in cfg:
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown configuration key")
    params = dict(cfg.get("params", {}))
    for item in args.param:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError("--param", f"expected KEY=JSON, got {item!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    command = args.command or cfg.get("command")
    if command is None:
        raise ConfigError("command", "no command given")
    if args.command and cfg.get("command") and args.command != cfg["command"]:
        raise ConfigError("command", f"flag says {args.command!r} but config says {cfg['command']!r}")
    seed = args.seed if args.seed is not None else cfg.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("master_seed", "must be an unsigned 64-bit integer")
    workers = args.workers if args.workers is not None else cfg.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    fmt = args.format or cfg.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("format", "must be json or csv")
    return {
        "command": command,
        "params": resolve_params(command, params),
        "master_seed": seed,
        "output_path": args.out or cfg.get("output_path"),
        "format": fmt,
        "workers": workers,
    }


def run(config: dict) -> int:
    """Execute a resolved configuration, write its output, and return the exit status."""
    t0 = time.perf_counter()
    result, csv_text, failed = HANDLERS[config["command"]](config["params"], config["master_seed"], config["workers"])
    elapsed = time.perf_counter() - t0
    echo = {k: config[k] for k in ("command", "params", "master_seed", "format")}
    if config["format"] == "json":
        doc = {"config": echo, "result": _jsonable(_strip_timing(result)), "timing": {"wall_time": elapsed}}
        data = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    else:
        data = ("# config: " + json.dumps(_jsonable(echo), sort_keys=True) + "\n" + csv_text).encode()
    if config["output_path"]:
        _atomic_write(config["output_path"], data)
    else:
        sys.stdout.write(data.decode())
        sys.stdout.flush()
    return EXIT_VERDICT if failed else EXIT_OK


def _fail(code: int, message: str, field=None) -> int:
    err = {"error": message, "exit_code": code}
    if field is not None:
        err["field"] = field
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        return run(config)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e), e.field)
    except InvalidParams as e:
        return _fail(EXIT_CONFIG, str(e), f"params.{e.field}")
    except _IOFailure as e:
        return _fail(EXIT_IO, str(e))
    except (_ComputeFailure, FamilyBuildError, search.SearchGuardError, walks.FrontierBudgetError) as e:
        return _fail(EXIT_COMPUTE, str(e))
    except ValueError as e:
        # parameter values rejected deep inside a module
        return _fail(EXIT_CONFIG, str(e), "params")


if __name__ == "__main__":
    sys.exit(main())
