"""Command-line entry point: ``beamsec {solve,sweep,convergence,verify,bench} --config cfg.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import scenarios as sc
from .errors import BeamsecError, ConfigError, ConvergenceError
from .rates import secrecy_rates

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

RATE_COLUMNS = ["snr_db", "k", "R_k", "C_ub_k", "C_mc_k", "R_sec_lb", "R_sec_mc", "se_R_k", "se_C_mc_k",
                "se_R_sec_lb", "se_R_sec_mc", "R_sec_lb_de", "power_k"]

log = logging.getLogger("beamsec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamsec", description="Beam-domain secrecy power allocation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="scenario configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the Monte-Carlo seed from the config")
    common.add_argument("--out-dir", type=Path, help="output directory (default: outputs.dir or ./out)")
    common.add_argument("--workers", type=int, default=1, help="parallel SNR points (default 1)")
    common.add_argument("--format", choices=("csv", "json"), help="artifact format (default: outputs.format or csv)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("solve", parents=[common], help="solve at each SNR and report per-user rates and allocation")
    sub.add_parser("sweep", parents=[common], help="secrecy rates versus SNR")
    sub.add_parser("convergence", parents=[common], help="outer, inner and fixed-point traces")
    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", action="append", choices=("lemma1", "theorem1", "theorem2", "oracle", "single_user"),
                   help="restrict to these suites (repeatable)")
    sub.add_parser("bench", parents=[common], help="per-iteration time over a (K, M) grid")
    return parser


def _load(args) -> sc.ScenarioConfig:
    cfg = sc.ScenarioConfig.from_file(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative", path="seed")
        cfg.seed = args.seed
        cfg.raw = {**cfg.raw, "seed": args.seed}
    if args.workers < 1:
        raise ConfigError("workers must be >= 1", path="workers")
    return cfg


def _solve(cfg, out_dir, fmt, workers) -> int:
    omegas, omega_eve = cfg.couplings()
    rows, allocs = [], {}
    failed = False
    for snr in cfg.snr_grid:
        P = sc.snr_to_power(snr)
        t0 = time.perf_counter()
        try:
            res = sc.cccp_solve(omegas, omega_eve, cfg.solver_config(P))
        except ConvergenceError as exc:
            log.error("solve at %.2f dB failed: %s", snr, exc)
            failed = True
            continue
        rep = secrecy_rates(res.alloc, omegas, omega_eve, cfg.mc_samples, cfg.seed, eve_mc=cfg.eve_mc)
        for k, row in enumerate(rep.csv_rows(snr_db=float(snr))):
            row.update(R_sec_lb_de=res.lower_bound, power_k=float(res.alloc[k].sum()))
            rows.append(row)
        allocs[str(snr)] = {"alloc": res.alloc.tolist(), "iterations": res.iterations,
                            "converged": res.converged, "kkt_residual_max": res.kkt.max_residual,
                            "mu": float(res.mu), "solve_seconds": time.perf_counter() - t0}
    sc.write_artifact(cfg, "rates", rows, RATE_COLUMNS, out_dir, fmt, workers)
    (Path(out_dir) / f"{cfg.outputs.get('prefix', '')}allocations.json").write_text(
        json.dumps(allocs, indent=2) + "\n")
    return EXIT_SOLVER if failed else EXIT_OK


def run(args) -> int:
    cfg = _load(args)
    out_dir = args.out_dir or Path(cfg.outputs.get("dir", "out"))
    fmt = args.format or cfg.outputs.get("format", "csv")
    if args.verb == "solve":
        return _solve(cfg, out_dir, fmt, args.workers)
    if args.verb == "sweep":
        rows = sc.run_sweep(cfg, workers=args.workers)
        path = sc.write_artifact(cfg, "sweep", rows, sc.SWEEP_COLUMNS, out_dir, fmt, args.workers)
        log.info("wrote %s", path)
        return EXIT_SOLVER if any(r["status"] != "ok" for r in rows) else EXIT_OK
    if args.verb == "convergence":
        rows = sc.run_convergence(cfg, workers=args.workers)
        sc.write_artifact(cfg, "convergence", rows, sc.CONVERGENCE_COLUMNS, out_dir, fmt, args.workers)
        return EXIT_OK
    if args.verb == "verify":
        report = sc.run_verify(cfg, suites=args.suite)
        sc.validate(report, "verify_report.schema.json")
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / f"{cfg.outputs.get('prefix', '')}verify.json"
        path.write_text(json.dumps(report, indent=2, default=sc._json_default) + "\n")
        for name, res in report["suites"].items():
            print(f"{name}: {'PASS' if res['passed'] else 'FAIL'}")
        return EXIT_OK if report["passed"] else EXIT_VERIFY
    if args.verb == "bench":
        rows = sc.bench_complexity(cfg)
        slope = sc.fit_loglog_slope([r["KM"] for r in rows], [r["seconds_per_iteration"] for r in rows]) \
            if len({r["KM"] for r in rows}) > 1 else None
        sc.write_artifact(cfg, "bench", rows, sc.BENCH_COLUMNS, out_dir, fmt, args.workers,
                          extra={"loglog_slope": slope})
        if slope is not None:
            print(f"log-log slope of time per iteration vs K*M: {slope:.3f}")
        return EXIT_OK
    raise AssertionError(args.verb)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BeamsecError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
