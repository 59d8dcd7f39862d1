"""Command-line front end for the benchmark driver.

Example::

    multiadapt --problem reaction-diffusion-1d --method mcg cg --tol 1e-4 5e-5 --out runs/rd
"""

from __future__ import annotations

import argparse
import sys

from .bench import BenchmarkCase, format_table, run_benchmark
from .errors import ConfigurationError
from .problems import PROBLEM_KINDS

DESK = {
    "reaction-diffusion-1d": {"N": 100, "L": 5.0},
    "wave-1d-refined": {"n_base": 40, "refine_ratio": 16},
}
FULL_SCALE = {
    "reaction-diffusion-1d": {"N": 1000, "L": 5.0},
    "wave-1d-refined": {"n_base": 160, "refine_ratio": 16},
}
DEFAULT_KMAX = {"reaction-diffusion-1d": 1e-3}


def build_parser():
    p = argparse.ArgumentParser(prog="multiadapt", description="Run multi-adaptive Galerkin benchmarks.")
    p.add_argument("--config", help="file of key=value lines mirroring the long options")
    p.add_argument("--problem", choices=sorted(PROBLEM_KINDS))
    p.add_argument("--method", nargs="+", choices=["mcg", "mdg", "cg", "dg"])
    p.add_argument("--order", type=int, help="polynomial order q (default 1 for cG, 0 for dG)")
    p.add_argument("--mode", choices=["adaptive", "fixed"])
    p.add_argument("--tol", type=float, nargs="+")
    p.add_argument("--theta", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--end-time", type=float)
    p.add_argument("--mesh-n", type=int, nargs="+", help="mesh points (list runs a size sweep)")
    p.add_argument("--domain-length", type=float, nargs="+")
    p.add_argument("--refine-ratio", type=int)
    p.add_argument("--snapshot-times", type=float, nargs="+")
    p.add_argument("--reference", choices=["radau", "mono", "none"])
    p.add_argument("--out")
    p.add_argument("--trace", action="store_true", default=None, help="dump sub-slab trees as JSON lines")
    p.add_argument("--seed", type=int)
    p.add_argument("--paper-scale", action="store_true", default=None)
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="write 0 for wall times so that output is byte-reproducible")
    return p


DEFAULTS = {
    "method": ["mcg", "cg"], "mode": "adaptive", "tol": [1e-4], "theta": 0.5, "out": "bench-out",
    "trace": False, "seed": 0, "paper_scale": False, "deterministic": False, "reference": "radau",
}


def read_config(path, parser):
    """Parse a key=value file into option values (keys use the long option names)."""
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            dest = key.lstrip("-").replace("-", "_")
            action = actions.get(dest)
            if action is None or dest == "config":
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            if action.nargs == 0:
                values[dest] = raw.lower() in ("1", "true", "yes", "on")
                continue
            items = raw.replace(",", " ").split()
            conv = action.type or str
            try:
                parsed = [conv(v) for v in items]
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad value for {key}") from None
            if action.choices is not None and any(v not in action.choices for v in parsed):
                raise ConfigurationError(f"{path}:{lineno}: invalid choice for {key}")
            values[dest] = parsed if action.nargs == "+" else parsed[0]
    return values


def resolve(args, parser):
    opts = dict(DEFAULTS)
    if args.config:
        opts.update(read_config(args.config, parser))
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return opts


def case_from_options(opts):
    if not opts.get("problem"):
        raise ConfigurationError("--problem is required")
    problem = opts["problem"]
    params = dict((FULL_SCALE if opts["paper_scale"] else DESK).get(problem, {}))
    if opts.get("end_time") is not None:
        params["T"] = opts["end_time"]
    if opts.get("refine_ratio") is not None:
        if problem != "wave-1d-refined":
            raise ConfigurationError("--refine-ratio applies to wave-1d-refined only")
        params["refine_ratio"] = opts["refine_ratio"]
    sizes = []
    mesh, lengths = opts.get("mesh_n"), opts.get("domain_length")
    if mesh or lengths:
        if problem not in DESK:
            raise ConfigurationError("--mesh-n/--domain-length apply to mesh problems only")
        size_key, len_key = ("N", "L") if problem == "reaction-diffusion-1d" else ("n_base", "length")
        mesh = mesh or [params.get(size_key)]
        lengths = lengths or [params.get(len_key, 1.0)]
        if len(mesh) > 1 and len(lengths) > 1 and len(mesh) != len(lengths):
            raise ConfigurationError("--mesh-n and --domain-length lists must have equal length")
        n = max(len(mesh), len(lengths))
        sizes = [(mesh[min(i, len(mesh) - 1)], lengths[min(i, len(lengths) - 1)]) for i in range(n)]
    methods = []
    for m in opts["method"]:
        q = opts.get("order")
        methods.append((m, q if q is not None else (1 if m.endswith("cg") else 0)))
    return BenchmarkCase(
        problem=problem, parameters=params, methods=methods, mode=opts["mode"], tols=list(opts["tol"]),
        sizes=sizes, out=opts["out"], theta=opts["theta"],
        k_max=opts.get("kmax", DEFAULT_KMAX.get(problem)), snapshot_times=opts.get("snapshot_times"),
        reference=opts["reference"], trace=opts["trace"], deterministic=opts["deterministic"],
        seed=opts["seed"],
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        case = case_from_options(resolve(args, parser))
    except (ConfigurationError, OSError) as exc:
        parser.error(str(exc))
    try:
        rows = run_benchmark(case, log=lambda msg: print(msg, file=sys.stderr))
    except ConfigurationError as exc:
        print(f"multiadapt: error: {exc}", file=sys.stderr)
        return 2
    print(format_table(rows))
    return 0 if all(r.converged for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
