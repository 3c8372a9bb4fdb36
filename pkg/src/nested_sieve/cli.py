"""Command-line front end.

Exit codes: 0 success, 1 statistical checks failed (``verify-all``, ``clt``),
2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import Optional

import numpy as np

from . import __version__, acceptance, limit_gauss
from .clt_harness import CONFIG_SCHEMA, ExperimentConfig, parse_count, run_experiment
from .env_stickbreak import environment_from_config, parse_w_law
from .errors import NestedSieveError
from .occupancy_tree import k_matrix_csv, rho_counts, run_occupancy
from .prw_branching import PerturbedWalkLaw
from .renewal_calc import Grid, lorden_check, renewal_table
from .seeding import chunk_rng, default_threads, fan_out

logger = logging.getLogger("nested_sieve")


class UsageError(NestedSieveError):
    pass


def _env_arg(text: str):
    text = text.strip()
    if text.startswith("{"):
        try:
            return environment_from_config(json.loads(text))
        except json.JSONDecodeError as exc:
            raise UsageError(f"--env is not valid JSON: {exc}") from None
    if text.lower() in ("gem01", "uniform"):
        return environment_from_config("gem01")
    raise UsageError(f"unknown environment {text!r}; use gem01 or a JSON object")


def _law_arg(text: str) -> PerturbedWalkLaw:
    text = text.strip().lower()
    if text == "uniform":
        return PerturbedWalkLaw.from_w(parse_w_law("uniform"))
    if text.startswith("beta:"):
        try:
            a, b = (float(x) for x in text[5:].split(","))
        except ValueError:
            raise UsageError("beta law must look like beta:a,b") from None
        return PerturbedWalkLaw.from_w(parse_w_law({"beta": [a, b]}))
    raise UsageError(f"unknown law {text!r}; use uniform or beta:a,b")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text: str, output: Optional[str]):
    if output:
        try:
            with open(output, "w", encoding="utf-8") as fh:
                fh.write(text if text.endswith("\n") else text + "\n")
        except OSError as exc:
            raise UsageError(f"cannot write {output}: {exc.strerror}") from None
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _mean_se_list(matrix: np.ndarray) -> list:
    R = matrix.shape[0]
    sd = matrix.std(axis=0, ddof=1) if R > 1 else np.full(matrix.shape[1], np.nan)
    return [
        {"j": j + 1, "mean": float(matrix[:, j].mean()), "se": float(sd[j] / math.sqrt(R)) if R > 1 else None}
        for j in range(matrix.shape[1])
    ]


# ----------------------------------------------------------------------------
# subcommands


def _simulate_one(n, env, J, seed, index):
    run = run_occupancy(n, env, J, chunk_rng(seed, index))
    return [s.to_record(n, seed) | {"replica": index} for s in run.stats]


def cmd_simulate(args) -> int:
    n = parse_count(args.n)
    env = _env_arg(args.env)
    if args.replicas < 1 or args.J < 1:
        raise UsageError("--replicas and --J must be positive")
    recs = fan_out(_simulate_one, [(n, env, args.J, args.seed, i) for i in range(args.replicas)], args.threads)
    K = np.array([[g["K"] for g in r] for r in recs], dtype=np.int64)
    if args.format == "csv":
        _emit(k_matrix_csv(K), args.output)
    elif args.format == "text":
        lines = [f"n={n} env={json.dumps(env.to_config())} replicas={args.replicas} seed={args.seed}"]
        for s in _mean_se_list(K):
            se = f"{s['se']:.4g}" if s["se"] is not None else "n/a"
            lines.append(f"  K_n({s['j']}) mean {s['mean']:.6g} +/- {se} (SE)")
        _emit("\n".join(lines), args.output)
    else:
        doc = {
            "n": n,
            "seed": args.seed,
            "env": env.to_config(),
            "replicas": [{"replica": i, "generations": r} for i, r in enumerate(recs)],
            "summary": _mean_se_list(K),
        }
        _emit(json.dumps(doc, sort_keys=True), args.output)
    return 0


def cmd_rho(args) -> int:
    env = _env_arg(args.env)
    if args.log_t is not None:
        t = math.exp(args.log_t)
    else:
        try:
            t = float(args.t)
        except ValueError:
            raise UsageError(f"--t must be a number, got {args.t!r}") from None
    R = rho_counts(env, args.j, t, args.replicas, args.seed, threads=args.threads)
    if args.format == "csv":
        _emit(k_matrix_csv(R).replace("K_", "rho_"), args.output)
    else:
        summary = _mean_se_list(R)
        if args.format == "text":
            lines = [f"t={t:.6g} (log t={math.log(t):.6g}) replicas={args.replicas} seed={args.seed}"]
            lines += [f"  rho_{s['j']}(t) mean {s['mean']:.6g} +/- {s['se']:.4g} (SE)" for s in summary]
            _emit("\n".join(lines), args.output)
        else:
            doc = {"t": t, "log_t": math.log(t), "seed": args.seed, "env": env.to_config(), "replicas": args.replicas, "summary": summary}
            _emit(json.dumps(doc, sort_keys=True), args.output)
    return 0


def cmd_renewal(args) -> int:
    law = _law_arg(args.law)
    tab = renewal_table(law, Grid(args.h, args.tmax), j_max=args.jmax)
    if args.format == "json":
        doc = json.loads(tab.constants_json())
        doc["lorden"] = lorden_check(tab)
        _emit(json.dumps(doc, indent=2, sort_keys=True), args.output)
    else:
        _emit(tab.to_csv(), args.output)
    return 0


def cmd_limit_sample(args) -> int:
    if args.generations:
        family = limit_gauss.FixedGen(tuple(int(x) for x in _floats(args.generations)))
    else:
        family = limit_gauss.Intermediate(tuple(_floats(args.points)), referee=args.referee)
    if args.format == "json":
        _emit(limit_gauss.covariance_json(family), args.output)
        return 0
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    if args.pathwise:
        if not isinstance(family, limit_gauss.Intermediate) or family.referee:
            raise UsageError("--pathwise is only available for plain intermediate points")
        samples = limit_gauss.pathwise_samples(family.points, rng, args.count, step=args.step)
    else:
        samples = limit_gauss.sample_limit_vector(family, rng, args.count)
    if args.format == "text":
        cov = np.atleast_2d(np.cov(samples.T))
        target = limit_gauss.cov_matrix(family)
        lines = [f"{args.count} samples, empirical vs target covariance"]
        for a in range(cov.shape[0]):
            for b in range(a, cov.shape[0]):
                se = limit_gauss.covariance_se(samples[:, a], samples[:, b])
                lines.append(f"  [{a},{b}] {cov[a, b]:.6g} +/- {se:.3g} (SE)  target {target[a, b]:.6g}")
        _emit("\n".join(lines), args.output)
    else:
        _emit(limit_gauss.samples_csv(samples, family), args.output)
    return 0


def cmd_clt(args) -> int:
    if args.print_schema:
        _emit(json.dumps(CONFIG_SCHEMA, indent=2), args.output)
        return 0
    if not args.config:
        raise UsageError("clt needs --config (or --print-schema)")
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.replicas is not None:
        data["replicas"] = args.replicas
    data["threads"] = args.threads
    cfg = ExperimentConfig.from_dict(data)
    report = run_experiment(cfg)
    if args.samples:
        _emit(report.samples_csv(), args.samples)
    if args.format == "text":
        _emit(report.summary_text(), args.output)
    elif args.format == "csv":
        _emit(report.samples_csv(), args.output)
    else:
        _emit(report.to_json(include_runtime=args.runtime), args.output)
    return 0 if report.passed else 1


def cmd_verify_all(args) -> int:
    only = {int(x) for x in _floats(args.only)} if args.only else None
    results = acceptance.run_all(args.profile, threads=args.threads, seed=args.seed, only=only, echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nested-sieve", description="Nested occupancy scheme in a stick-breaking environment.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: $NESTED_SIEVE_THREADS or CPU count)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, formats, default):
        sp.add_argument("--format", choices=formats, default=default)
        sp.add_argument("--output", "-o", help="write to this file instead of stdout")

    s = sub.add_parser("simulate", help="throw n balls into the nested scheme")
    s.add_argument("--n", required=True, help="ball count, scientific notation allowed (1e9)")
    s.add_argument("--env", default="gem01", help="gem01 or a JSON environment object")
    s.add_argument("--J", type=int, default=3, help="number of generations")
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    common(s, ["json", "csv", "text"], "json")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rho", help="threshold counts rho_j(t) of the weight tree")
    s.add_argument("--env", default="gem01")
    s.add_argument("--j", type=int, default=2)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--t", help="threshold t > 1")
    g.add_argument("--log-t", type=float, help="log of the threshold")
    s.add_argument("--replicas", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    common(s, ["json", "csv", "text"], "json")
    s.set_defaults(func=cmd_rho)

    s = sub.add_parser("renewal", help="tabulate U, V, Vbar and V_j")
    s.add_argument("--law", default="uniform", help="uniform or beta:a,b")
    s.add_argument("--h", type=float, default=0.01)
    s.add_argument("--tmax", type=float, default=100.0)
    s.add_argument("--jmax", type=int, default=4)
    common(s, ["csv", "json"], "csv")
    s.set_defaults(func=cmd_renewal)

    s = sub.add_parser("limit-sample", help="sample the Gaussian limit vectors")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--points", default="1,2", help="evaluation points u of R(u)")
    g.add_argument("--generations", help="fixed generation indices, e.g. 1,2,3")
    s.add_argument("--count", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--referee", action="store_true", help="use u^(1/2) R(u)")
    s.add_argument("--pathwise", action="store_true", help="discretized Brownian oracle instead of Cholesky")
    s.add_argument("--step", type=float, default=1e-3)
    common(s, ["csv", "json", "text"], "csv")
    s.set_defaults(func=cmd_limit_sample)

    s = sub.add_parser("clt", help="run a replicated experiment from a JSON config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--samples", help="also write normalized samples as CSV to this file")
    s.add_argument("--runtime", action="store_true", help="include runtime in the JSON report")
    s.add_argument("--print-schema", action="store_true")
    common(s, ["json", "text", "csv"], "json")
    s.set_defaults(func=cmd_clt)

    s = sub.add_parser("verify-all", help="run the acceptance suite")
    s.add_argument("--profile", choices=sorted(acceptance.PROFILES), default="desk")
    s.add_argument("--only", help="comma-separated criterion numbers")
    s.add_argument("--seed", type=int, default=acceptance.ACCEPTANCE_SEED)
    s.set_defaults(func=cmd_verify_all)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = default_threads()
        elif args.threads < 1:
            raise UsageError("--threads must be positive")
        return args.func(args)
    except (NestedSieveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
