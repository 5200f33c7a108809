"""Configuration-driven experiments: SNR sweeps, convergence traces, verification suites, timing.

SNR is the total transmit power over unit noise, ``snr_db = 10 log10(P)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .channel import (STREAM_CHECK, CouplingProfile, SystemDims, check_user_couplings, load_couplings, substream,
                      synth_coupling)
from .detequiv import de_fixed_point, de_terms
from .errors import BeamsecError, ConfigError, ConvergenceError
from .optimizer import SolverConfig, cccp_solve, initial_allocation, single_user_water_filling, iwfa, Surrogate
from .rates import interference_covs, secrecy_rates
from .theory import (lemma1_check, lemma1_exact, oracle_projected_gradient, theorem1_rotation_test,
                     theorem2_excluded_beams)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

VERIFY_DEFAULTS = {
    "lemma1_samples": 1_000_000,
    "rotation_trials": 50,
    "rotation_samples": 2000,
    "rotation_M": 8,
    "rotation_K": 2,
    "rotation_level": 0.95,
    "exclusion_instances": 20,
    "exclusion_M": 32,
    "exclusion_K": 4,
    "exclusion_snr_db": 10.0,
    "oracle_instances": 20,
    "oracle_iters": 100_000,
    "oracle_tol": 1e-3,
}

BENCH_DEFAULTS = {
    "grid": [[k, m] for k in (2, 4, 8) for m in (32, 64, 128, 256)],
    "snr_db": 10.0,
    "repeats": 1,
}

SWEEP_COLUMNS = ["snr_db", "P", "status", "R_sec_mc", "se_R_sec_mc", "R_sec_lb_mc", "se_R_sec_lb_mc",
                 "R_sec_lb_de", "R_sum_mc", "C_eve_mc_sum", "C_eve_ub_sum", "relative_gap", "cccp_iterations", "converged", "kkt_residual_max",
                 "power_used", "mu", "diagnostic", "solve_seconds"]
CONVERGENCE_COLUMNS = ["snr_db", "loop", "outer", "iteration", "value", "kkt_residual_max", "power_used", "mu",
                       "wall_time"]
BENCH_COLUMNS = ["K", "M", "KM", "repeat", "iterations", "converged", "iwfa_sweeps", "seconds_per_iteration",
                 "total_seconds"]
ROW_SCHEMAS = {"sweep": "sweep_rows.schema.json", "convergence": "convergence_rows.schema.json",
               "bench": "bench_rows.schema.json", "rates": "rate_rows.schema.json"}
# Columns carrying wall-clock measurements; excluded from reproducibility comparisons.
TIMING_COLUMNS = {"solve_seconds", "wall_time", "seconds_per_iteration", "total_seconds"}


def load_schema(name: str) -> dict:
    with resources.files("beamsec.schemas").joinpath(name).open() as fh:
        return json.load(fh)


def validate(doc, schema_name: str) -> None:
    """Raise :class:`ConfigError` naming the first offending field."""
    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(err.message, path=path)


@dataclass
class ScenarioConfig:
    dims: SystemDims
    coupling: dict
    snr_grid: list
    solver: dict = field(default_factory=dict)
    mc_samples: int = 2000
    eve_mc: bool = True
    seed: int = 0
    outputs: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ScenarioConfig":
        validate(doc, "config.schema.json")
        d = doc["dims"]
        try:
            dims = SystemDims(M=d["M"], K=d["K"], N_r=d["N_r"], N_e=d["N_e"])
        except BeamsecError as exc:
            raise ConfigError(str(exc), path="dims") from exc
        for i, v in enumerate(doc["snr_grid"]):
            if not math.isfinite(v):
                raise ConfigError("SNR values must be finite", path=f"snr_grid.{i}")
        solver = dict(doc.get("solver", {}))
        if solver.get("beams", 1) > dims.M:
            raise ConfigError(f"beams must be <= M={dims.M}", path="solver.beams")
        return cls(dims=dims, coupling=dict(doc["coupling"]), snr_grid=list(doc["snr_grid"]), solver=solver,
                   mc_samples=int(doc.get("mc_samples", 2000)), eve_mc=bool(doc.get("eve_mc", True)),
                   seed=int(doc.get("seed", 0)), outputs=dict(doc.get("outputs", {})),
                   verify={**VERIFY_DEFAULTS, **doc.get("verify", {})},
                   bench={**BENCH_DEFAULTS, **doc.get("bench", {})}, raw=doc,
                   base_dir=Path(base_dir) if base_dir is not None else Path.cwd())

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def solver_config(self, P: float) -> SolverConfig:
        return SolverConfig(P=P, **self.solver)

    def couplings(self, dims: Optional[SystemDims] = None) -> tuple[np.ndarray, np.ndarray]:
        dims = dims or self.dims
        if "file" in self.coupling:
            path = Path(self.coupling["file"])
            if not path.is_absolute():
                path = self.base_dir / path
            try:
                validate(json.loads(path.read_text()), "coupling.schema.json")
                omegas, omega_eve = load_couplings(path)
            except FileNotFoundError as exc:
                raise ConfigError(f"coupling file not found: {path}", path="coupling.file") from exc
            expected = (dims.K, dims.N_r, dims.M)
            if omegas.shape != expected or omega_eve.shape != (dims.N_e, dims.M):
                raise ConfigError(f"coupling file shapes {omegas.shape}/{omega_eve.shape} do not match dims",
                                  path="coupling.file")
            return omegas, omega_eve
        profile = CouplingProfile(kind=self.coupling["kind"], params=dict(self.coupling.get("params", {})),
                                  seed=int(self.coupling.get("seed", self.seed)))
        return synth_coupling(dims, profile)


def snr_to_power(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def _finite_or_raise(row: dict, keys) -> None:
    bad = [k for k in keys if isinstance(row.get(k), float) and not math.isfinite(row[k])]
    if bad:
        raise FloatingPointError(f"non-finite values in {', '.join(bad)}")


def _run_jobs(fn, jobs, workers: int):
    """Map ``fn`` over ``jobs`` preserving order; a bounded thread pool when ``workers > 1``."""
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# Sweep


def sweep_point(cfg: ScenarioConfig, omegas, omega_eve, snr_db: float, keep: Optional[dict] = None) -> dict:
    P = snr_to_power(snr_db)
    row: dict[str, Any] = {c: None for c in SWEEP_COLUMNS}
    row.update(snr_db=float(snr_db), P=P)
    t0 = time.perf_counter()
    try:
        res = cccp_solve(omegas, omega_eve, cfg.solver_config(P))
        if keep is not None:
            keep[float(snr_db)] = res
        rep = secrecy_rates(res.alloc, omegas, omega_eve, cfg.mc_samples, cfg.seed, eve_mc=cfg.eve_mc)
        gap = None
        if cfg.eve_mc and rep.secrecy_sum_rate_mc > 0:
            gap = (rep.secrecy_sum_rate_mc - rep.secrecy_sum_rate_lb) / rep.secrecy_sum_rate_mc
        row.update(
            status="ok",
            R_sec_mc=rep.secrecy_sum_rate_mc, se_R_sec_mc=rep.secrecy_sum_rate_mc_se,
            R_sec_lb_mc=rep.secrecy_sum_rate_lb, se_R_sec_lb_mc=rep.secrecy_sum_rate_lb_se,
            R_sec_lb_de=res.lower_bound, relative_gap=gap,
            R_sum_mc=float(rep.per_user_rate.sum()), C_eve_ub_sum=float(rep.per_user_eve_bound.sum()),
            C_eve_mc_sum=None if rep.per_user_eve_mc is None else float(rep.per_user_eve_mc.sum()),
            cccp_iterations=res.iterations, converged=res.converged,
            kkt_residual_max=res.kkt.max_residual, power_used=float(res.alloc.sum()), mu=float(res.mu),
        )
        _finite_or_raise(row, SWEEP_COLUMNS)
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("sweep point %.2f dB failed: %s", snr_db, exc)
        base = {"snr_db": row["snr_db"], "P": P}
        row = {c: None for c in SWEEP_COLUMNS}
        row.update(base, status="error", diagnostic=f"{type(exc).__name__}: {exc}")
    row["solve_seconds"] = time.perf_counter() - t0
    return row


def run_sweep(cfg: ScenarioConfig, workers: int = 1, keep: Optional[dict] = None) -> list[dict]:
    """One row per SNR point: Monte-Carlo and deterministic-equivalent secrecy rates at the solver's allocation.

    All points use the same Monte-Carlo seed (common random numbers across SNR).
    Failed points keep their row with ``status = "error"`` and a diagnostic.
    ``keep``, when given, receives the solver result of each point keyed by SNR.
    """
    omegas, omega_eve = cfg.couplings()
    return _run_jobs(lambda s: sweep_point(cfg, omegas, omega_eve, s, keep), cfg.snr_grid, workers)


# ---------------------------------------------------------------------------
# Convergence traces


def convergence_point(cfg: ScenarioConfig, omegas, omega_eve, snr_db: float) -> list[dict]:
    P = snr_to_power(snr_db)
    scfg = cfg.solver_config(P)
    rows = []

    def add(loop, outer, it, value, kkt=None, power=None, mu=None, wall=None):
        rows.append({"snr_db": float(snr_db), "loop": loop, "outer": outer, "iteration": it, "value": value,
                     "kkt_residual_max": kkt, "power_used": power, "mu": mu, "wall_time": wall})

    # fixed-point residuals of the first deterministic-equivalent solve (at the starting allocation)
    alloc0 = initial_allocation(omegas, omega_eve, scfg)
    t0 = time.perf_counter()
    de_fixed_point(omegas, alloc0, interference_covs(alloc0, omegas), xi1=scfg.xi1, max_iter=scfg.max_de_iter,
                   trace=lambda it, r: add("de-fixed-point", 0, it, float(r), wall=time.perf_counter() - t0))

    res = cccp_solve(omegas, omega_eve, scfg)
    for row, itrace in zip(res.trace, res.iwfa_traces):
        add("cccp", 0, row["iteration"], row["objective_bits"], row["kkt_residual_max"], row["power_used"],
            float(row["mu"]), row["wall_time"])
        for t, c in enumerate(itrace):
            add("iwfa", row["iteration"], t, float(c))
    return rows


def run_convergence(cfg: ScenarioConfig, workers: int = 1) -> list[dict]:
    """Traces of the outer loop, the inner loop (per outer iteration) and the fixed point, per SNR.

    ``loop = cccp`` rows hold the deterministic-equivalent objective after outer
    iteration 1..L; ``loop = iwfa`` rows hold the surrogate value after sweep
    0..T of outer iteration ``outer``; ``loop = de-fixed-point`` rows hold
    the fixed-point residual at the starting allocation.
    """
    omegas, omega_eve = cfg.couplings()
    per_point = _run_jobs(lambda s: convergence_point(cfg, omegas, omega_eve, s), cfg.snr_grid, workers)
    return [r for rows in per_point for r in rows]


# ---------------------------------------------------------------------------
# Verification suites


def exclusion_instance(rng: np.random.Generator, M: int, K: int, N_e: int = 1):
    """Random single-antenna instance where the eavesdropper matches or beats users on some beams.

    Each user gets a few beams where the eavesdropper's gain is set exactly
    equal to the user's (boundary case) and a few where it is larger.
    """
    omegas = rng.exponential(size=(K, 1, M)) * (rng.uniform(size=(K, 1, M)) < 0.6) + 1e-3
    omega_eve = rng.exponential(size=(N_e, M)) * 0.5 / N_e
    eve_gain = omega_eve.sum(axis=0)
    for k in range(K):
        ties = rng.choice(M, size=2, replace=False)
        eve_gain[ties] = omegas[k, 0, ties]
        strong = rng.choice(M, size=3, replace=False)
        eve_gain[strong] = np.maximum(eve_gain[strong], 1.5 * omegas[k, 0, strong])
    # spread the adjusted beam gains evenly over the eavesdropper's antennas
    omega_eve = np.repeat(eve_gain[None, :] / N_e, N_e, axis=0)
    return omegas, omega_eve


def small_instance(rng: np.random.Generator, index: int):
    """Instance with ``K * M <= 8`` for the oracle comparison; shapes cycle through a fixed list."""
    K, M, N_r, N_e = [(2, 4, 2, 2), (1, 8, 2, 2), (2, 3, 1, 2), (4, 2, 2, 1), (1, 4, 1, 1)][index % 5]
    omegas = rng.exponential(size=(K, N_r, M)) + 0.05
    omega_eve = rng.exponential(size=(N_e, M)) * 0.5
    P = 10.0 ** rng.uniform(-1.0, 1.3)
    return omegas, omega_eve, P


def verify_lemma1(v: dict, seed: int) -> dict:
    n = int(v["lemma1_samples"])
    families = {
        "exponential": (lambda r, s: r.exponential(1.0, s), 1.0, 1.0, 1.0),
        "uniform": (lambda r, s: r.uniform(0.0, 4.0, s), 2.0, 0.5, 2.0),
        "lognormal": (lambda r, s: r.lognormal(0.0, 0.75, s), 1.0, 2.0, math.exp(0.75 ** 2 / 2)),
    }
    out = {}
    for i, (name, (sampler, a, b, mean)) in enumerate(families.items()):
        chk = lemma1_check(sampler, a, b, n, substream(seed, STREAM_CHECK, 100 + i), mean=mean)
        out[name] = {"lhs": chk.lhs, "rhs": chk.rhs, "se": chk.se, "passed": bool(chk.holds)}
    two = lemma1_exact([0.0, 2.0], [0.5, 0.5], 1.0, 1.0)
    out["two_point_exact"] = {"lhs": two.lhs, "rhs": two.rhs, "passed": bool(two.holds)}
    deg = lemma1_exact([1.7], [1.0], 0.3, 2.0)
    out["degenerate_exact"] = {"lhs": deg.lhs, "rhs": deg.rhs, "passed": abs(deg.lhs - deg.rhs) <= 1e-12}
    return {"passed": all(c["passed"] for c in out.values()), "cases": out}


def verify_theorem1(v: dict, seed: int) -> dict:
    dims = SystemDims(M=int(v["rotation_M"]), K=int(v["rotation_K"]), N_r=2, N_e=2)
    omegas, omega_eve = synth_coupling(dims, CouplingProfile("exponential-cluster", {"width": 1.0}, seed=seed))
    res = cccp_solve(omegas, omega_eve, SolverConfig(P=snr_to_power(10.0), beams=min(16, dims.M)))
    rep = theorem1_rotation_test(omegas, omega_eve, res.alloc, trials=int(v["rotation_trials"]), seed=seed,
                                 samples=int(v["rotation_samples"]), level=float(v["rotation_level"]))
    return rep.to_dict()


def verify_theorem2(v: dict, seed: int) -> dict:
    P = snr_to_power(float(v["exclusion_snr_db"]))
    cases = []
    for i in range(int(v["exclusion_instances"])):
        omegas, omega_eve = exclusion_instance(substream(seed, STREAM_CHECK, 200, i), int(v["exclusion_M"]),
                                               int(v["exclusion_K"]))
        excl = theorem2_excluded_beams(omegas, omega_eve)
        # the uniform start puts power on excluded beams, so the solver has to remove it
        for init in ("strongest", "uniform"):
            res = cccp_solve(omegas, omega_eve, SolverConfig(P=P, init=init))
            power = excl.excluded_power(res.alloc)
            cases.append({"instance": i, "init": init, "excluded_pairs": len(excl.excluded),
                          "excluded_power": power, "passed": power <= 1e-6 * P})
    return {"passed": all(c["passed"] for c in cases), "max_excluded_power_fraction":
            max(c["excluded_power"] for c in cases) / P, "cases": cases}


def oracle_case(index: int, seed: int, iters: int) -> dict:
    omegas, omega_eve, P = small_instance(substream(seed, STREAM_CHECK, 300, index), index)
    res = cccp_solve(omegas, omega_eve, SolverConfig(P=P))
    solver_value = res.surrogate.value(res.alloc)
    orc = oracle_projected_gradient(res.surrogate.value, res.alloc.shape, P, iters=iters)
    scale = max(abs(orc.value), 1e-12)
    return {"instance": index, "K": int(omegas.shape[0]), "M": int(omegas.shape[2]), "P": P,
            "solver": solver_value, "oracle": orc.value, "relative_gap": (orc.value - solver_value) / scale}


def verify_oracle(v: dict, seed: int) -> dict:
    t0 = time.perf_counter()
    cases = [oracle_case(i, seed, int(v["oracle_iters"])) for i in range(int(v["oracle_instances"]))]
    tol = float(v["oracle_tol"])
    for c in cases:
        c["passed"] = abs(c["relative_gap"]) <= tol
    return {"passed": all(c["passed"] for c in cases), "seconds": time.perf_counter() - t0,
            "max_abs_relative_gap": max(abs(c["relative_gap"]) for c in cases), "cases": cases}


def verify_single_user(seed: int, instances: int = 10) -> dict:
    """Single-user inner solve against the closed-form water level."""
    cases = []
    for i in range(instances):
        rng = substream(seed, STREAM_CHECK, 400, i)
        M = int(rng.integers(2, 17))
        omegas = rng.exponential(size=(1, 2, M)) + 0.01
        omega_eve = rng.exponential(size=(2, M))
        P = 10.0 ** rng.uniform(-1, 1.5)
        scfg = SolverConfig(P=P, init="uniform")
        x0 = initial_allocation(omegas, omega_eve, scfg)
        surr = Surrogate.at(x0, de_terms(x0, omegas, omega_eve), omegas, omega_eve)
        out = iwfa(surr, x0, P, scfg)
        ref, _ = single_user_water_filling(surr.gamma[0], surr.delta[0], P)
        err = float(np.abs(out.alloc[0] - ref).max())
        cases.append({"instance": i, "M": M, "P": P, "max_abs_error": err, "passed": err <= 1e-8})
    return {"passed": all(c["passed"] for c in cases), "cases": cases}


def run_verify(cfg: ScenarioConfig, suites=None) -> dict:
    """Run the verification suites; the report validates against ``verify_report.schema.json``."""
    v = cfg.verify
    runners = {
        "lemma1": lambda: verify_lemma1(v, cfg.seed),
        "theorem1": lambda: verify_theorem1(v, cfg.seed),
        "theorem2": lambda: verify_theorem2(v, cfg.seed),
        "oracle": lambda: verify_oracle(v, cfg.seed),
        "single_user": lambda: verify_single_user(cfg.seed),
    }
    chosen = list(runners) if suites is None else list(suites)
    report = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.config_hash(), "suites": {}}
    for name in chosen:
        t0 = time.perf_counter()
        try:
            result = runners[name]()
        except BeamsecError as exc:
            result = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        result["seconds"] = time.perf_counter() - t0
        report["suites"][name] = result
    report["failed"] = [n for n, r in report["suites"].items() if not r["passed"]]
    report["passed"] = not report["failed"]
    return report


# ---------------------------------------------------------------------------
# Timing


def bench_complexity(cfg: ScenarioConfig) -> list[dict]:
    """Wall time per outer iteration over a grid of ``(K, M)``; dims N_r, N_e come from the config."""
    b = cfg.bench
    P = snr_to_power(float(b["snr_db"]))
    rows = []
    for K, M in b["grid"]:
        dims = SystemDims(M=int(M), K=int(K), N_r=cfg.dims.N_r, N_e=cfg.dims.N_e)
        omegas, omega_eve = cfg.couplings(dims)
        scfg = SolverConfig(P=P, **{**cfg.solver, "beams": min(cfg.solver.get("beams", 16), dims.M)})
        for rep in range(int(b["repeats"])):
            t0 = time.perf_counter()
            res = cccp_solve(omegas, omega_eve, scfg)
            total = time.perf_counter() - t0
            rows.append({"K": dims.K, "M": dims.M, "KM": dims.K * dims.M, "repeat": rep,
                         "iterations": res.iterations, "converged": res.converged,
                         "iwfa_sweeps": int(sum(r["iwfa_sweeps"] for r in res.trace)),
                         "seconds_per_iteration": total / res.iterations, "total_seconds": total})
    return rows


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# Output


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_value(row.get(k)) for k in columns})
    return buf.getvalue()


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_artifact(cfg: ScenarioConfig, name: str, rows, columns: Optional[list[str]], out_dir, fmt: str = "csv",
                   workers: int = 1, extra: Optional[dict] = None) -> Path:
    """Write ``rows`` as CSV (or JSON) plus a ``.meta.json`` sidecar; returns the data path."""
    plain = json.loads(json.dumps(rows, default=_json_default))
    if name in ROW_SCHEMAS:
        validate(plain, ROW_SCHEMAS[name])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg.outputs.get("prefix", "")
    stem = f"{prefix}{name}"
    if fmt == "csv" and columns is not None:
        path = out_dir / f"{stem}.csv"
        path.write_text(rows_to_csv(rows, columns))
    else:
        path = out_dir / f"{stem}.json"
        path.write_text(json.dumps(plain, indent=2) + "\n")
    meta = {"schema_version": SCHEMA_VERSION, "artifact": name, "format": path.suffix[1:],
            "config_hash": cfg.config_hash(), "seed": cfg.seed, "workers": workers, "config": cfg.raw}
    if extra:
        meta.update(extra)
    meta = json.loads(json.dumps(meta, default=_json_default))
    validate(meta, "sidecar.schema.json")
    (out_dir / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
