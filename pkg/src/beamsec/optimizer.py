"""Beam-domain power allocation: CCCP outer loop with an iterative water-filling inner solver.

Each outer iteration linearizes the (convex) penalty part of the secrecy
objective at the current allocation, replaces the ergodic rate by its
deterministic equivalent with frozen ``gamma``/``gamma_tilde``, and maximizes
the resulting concave surrogate over ``{x >= 0, sum(x) <= P}`` by Jacobi-style
water-filling sweeps.

Internally everything is in nats; reported objectives are in bits.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import beam_gains, check_coupling, check_user_couplings
from .detequiv import DETerms, de_terms
from .errors import ConfigError, ConvergenceError, DimensionError
from .rates import LOG2E, check_allocation, eve_cov, interference_covs

log = logging.getLogger(__name__)

INIT_STRATEGIES = ("strongest", "uniform", "custom")

# Relative size below which a coordinate headed to zero is set to zero.
SNAP = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, iteration caps and initialization for :func:`cccp_solve`.

    ``xi4`` defaults to ``1e-6 * P`` when left as None. ``log_base`` only
    affects how objectives are reported in traces (2 = bits).
    """

    P: float = 1.0
    xi1: float = 1e-10
    xi2: float = 1e-4
    xi3: float = 1e-9
    xi4: Optional[float] = None
    xi5: float = 1e-6
    kkt_tol: float = 1e-7
    max_cccp: int = 50
    max_iwfa: int = 200
    max_newton: int = 50
    max_de_iter: int = 10_000
    max_mu_iter: int = 200
    mu_rule_steps: int = 2
    init: str = "strongest"
    beams: int = 16
    init_alloc: Optional[np.ndarray] = None
    fast_path: bool = True
    line_search: bool = True
    log_base: float = 2.0

    def __post_init__(self):
        for name in ("xi1", "xi2", "xi3", "xi5", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError("tolerance must be positive", path=f"solver.{name}")
        if self.xi4 is not None and not self.xi4 > 0:
            raise ConfigError("tolerance must be positive", path="solver.xi4")
        for name in ("max_cccp", "max_iwfa", "max_newton", "max_de_iter", "max_mu_iter", "beams"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", path=f"solver.{name}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INIT_STRATEGIES}", path="solver.init")
        if self.init == "custom" and self.init_alloc is None:
            raise ConfigError("custom init needs init_alloc", path="solver.init_alloc")
        if not (np.isfinite(self.P) and self.P >= 0):
            raise ConfigError("P must be finite and nonnegative", path="solver.P")
        if not self.log_base > 1:
            raise ConfigError("log_base must exceed 1", path="solver.log_base")

    @property
    def power_tol(self) -> float:
        return self.xi4 if self.xi4 is not None else 1e-6 * self.P

    @property
    def newton_digits(self) -> int:
        """Newton precision in decimal digits, ``g`` in the ``O(L K M log g)`` cost estimate."""
        return max(1, int(round(-np.log10(self.xi3))))

    def report_units(self, bits):
        """Convert a value in bits to the configured reporting base."""
        return bits * np.log(2.0) / np.log(self.log_base)


# ---------------------------------------------------------------------------
# Surrogate problem


def delta_matrices(alloc_prev, omegas, omega_eve) -> np.ndarray:
    """Gradient of ``sum_l (log det Kbar_l + log det Kbar_eve,l)`` w.r.t. each user's beam powers.

    Returns a ``(K, M)`` array (nats per unit power). Row ``k``:

        sum_{l != k} sum_j omega_l[j, :] / Kbar_l[j]  +  sum_j omega_eve[j, :] / Kbar_eve,k[j]
    """
    alloc = check_allocation(alloc_prev)
    omegas = np.asarray(omegas, dtype=float)
    kbar = interference_covs(alloc, omegas)
    per_user = np.einsum("ljm,lj->lm", omegas, 1.0 / kbar)
    cross = per_user.sum(axis=0)[None, :] - per_user
    keve = eve_cov(alloc, omega_eve)
    eve = (1.0 / keve) @ np.asarray(omega_eve, dtype=float)
    return cross + eve


@dataclass
class Surrogate:
    """The concave program solved inside one outer iteration.

    ``gamma (K, M)`` and ``gamma_tilde (K, N_r)`` are frozen at the current
    allocation and ``delta (K, M)`` is the linearized penalty gradient.
    """

    gamma: np.ndarray
    gamma_tilde: np.ndarray
    delta: np.ndarray
    omegas: np.ndarray

    @classmethod
    def at(cls, alloc, terms: DETerms, omegas, omega_eve) -> "Surrogate":
        return cls(gamma=np.asarray(terms.states.gamma), gamma_tilde=np.asarray(terms.states.gamma_tilde),
                   delta=delta_matrices(alloc, omegas, omega_eve), omegas=np.asarray(omegas, dtype=float))

    @property
    def shape(self):
        return self.gamma.shape

    def _kbar(self, x):
        others = x.sum(axis=-2, keepdims=True) - x
        return 1.0 + np.einsum("knm,...km->...kn", self.omegas, others)

    def value_nats(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-2]
        flat = x.reshape(lead + (-1,))
        own = np.log1p(self.gamma.ravel() * flat).sum(axis=-1) - flat @ self.delta.ravel()
        inter = np.log((self.gamma_tilde + self._kbar(x)).reshape(lead + (-1,))).sum(axis=-1)
        return own + inter

    def value(self, x):
        """Surrogate objective in bits; broadcasts over leading axes of ``x``."""
        out = self.value_nats(x) * LOG2E
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, x) -> np.ndarray:
        """Exact gradient (nats) at ``x``, all coordinates evaluated jointly."""
        x = np.asarray(x, dtype=float)
        denom = self.gamma_tilde + self._kbar(x)
        c = np.einsum("ljm,lj->lm", self.omegas, 1.0 / denom)
        cross = c.sum(axis=0)[None, :] - c
        return self.gamma / (1.0 + self.gamma * x) - self.delta + cross

    def jacobi_residual(self, x_frozen) -> Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]:
        """Return ``f(y, mu) -> (rho, rho')`` for every coordinate with the others frozen.

        Coordinate ``(k, m)`` sees its own trial value ``y[k, m]`` while every
        other coordinate stays at ``x_frozen``.
        """
        x_frozen = np.asarray(x_frozen, dtype=float)
        K = x_frozen.shape[0]
        base = self.gamma_tilde + self._kbar(x_frozen)               # (K, N)
        om = self.omegas                                            # (K, N, M)
        mask = (1.0 - np.eye(K))[:, :, None, None]                  # l != k
        gamma, delta = self.gamma, self.delta

        def f(y, mu):
            diff = y - x_frozen                                     # (K, M), indexed by k
            denom = base[None, :, :, None] + om[None] * diff[:, None, None, :]  # (k, l, j, m)
            inv = mask / denom
            t1 = om[None] * inv
            rho = gamma / (1.0 + gamma * y) - delta - mu + t1.sum(axis=(1, 2))
            drho = -(gamma / (1.0 + gamma * y)) ** 2 - (t1 * t1).sum(axis=(1, 2))
            return rho, drho

        return f


def surrogate_objective(x, surrogate: Surrogate) -> float:
    """Bits value of the inner surrogate at allocation ``x``."""
    return surrogate.value(check_allocation(x))


def water_fill_residual(x: float, k: int, m: int, gamma, gamma_tilde, delta, mu: float, x_all,
                        omegas) -> tuple[float, float]:
    """Stationarity residual of coordinate ``(k, m)`` at trial power ``x`` and its derivative.

    Other coordinates are read from ``x_all``. Written with explicit loops so it
    can serve as an independent check of the vectorized sweep.
    """
    gamma = np.asarray(gamma, float)
    gamma_tilde = np.asarray(gamma_tilde, float)
    omegas = np.asarray(omegas, float)
    x_all = np.asarray(x_all, float)
    K, N, M = omegas.shape
    g = gamma[k, m]
    rho = g / (1.0 + g * x) - delta[k, m] - mu
    drho = -(g / (1.0 + g * x)) ** 2
    for l in range(K):
        if l == k:
            continue
        for j in range(N):
            s = gamma_tilde[l, j] + 1.0 + omegas[l, j, m] * x
            for lp in range(K):
                if lp == l:
                    continue
                for mp in range(M):
                    if (lp, mp) == (k, m):
                        continue
                    s += omegas[l, j, mp] * x_all[lp, mp]
            rho += omegas[l, j, m] / s
            drho -= (omegas[l, j, m] / s) ** 2
    return float(rho), float(drho)


def newton_root(func, x0, xi3: float = 1e-9, max_iter: int = 50, upper=None, saturate: bool = False):
    """Root of a strictly decreasing function on ``[0, upper]`` by safeguarded Newton.

    ``func(x) -> (f, f')`` is applied elementwise to an array (or scalar) of
    independent problems. Nonpositive roots clamp to 0. Iterates are clipped to
    ``[0, upper]``; elements still moving after ``max_iter`` steps finish by
    bisection on ``[0, upper]``. With ``saturate=True`` an element whose
    function is still positive at ``upper`` returns ``upper``; otherwise that
    case (no bracket) raises.
    """
    scalar = np.ndim(x0) == 0
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    hi = np.full(x.shape, np.inf if upper is None else upper, dtype=float)
    hi = np.broadcast_to(hi, x.shape)
    x = np.clip(x, 0.0, hi)

    f0, _ = func(np.zeros_like(x))
    f0 = np.atleast_1d(f0)
    done = f0 <= 0
    x[done] = 0.0
    active = ~done
    if not saturate and np.all(np.isfinite(hi)):
        f_hi = np.atleast_1d(func(hi.copy())[0])
        if np.any(active & (f_hi > 0)):
            raise ConvergenceError("no root in [0, upper]")
    for _ in range(max_iter):
        if not active.any():
            break
        f, df = func(x)
        f, df = np.atleast_1d(f), np.atleast_1d(df)
        df = np.minimum(df, -np.finfo(float).tiny)
        new = np.clip(x - f / df, 0.0, hi)
        moved = np.abs(new - x)
        x = np.where(active, new, x)
        active &= moved > xi3 * np.maximum(1.0, np.abs(x))
    if active.any():
        if not np.all(np.isfinite(hi[active])):
            raise ConvergenceError("Newton did not converge and no bracket is available",
                                   iterations=max_iter)
        lo = np.zeros_like(x)
        top = hi.copy()
        f_top, _ = func(top)
        beyond = active & (np.atleast_1d(f_top) > 0)
        if beyond.any() and not saturate:
            raise ConvergenceError("no root in [0, upper]", iterations=max_iter)
        x = np.where(beyond, top, x)
        active &= ~beyond
        for _ in range(200):
            if not active.any():
                break
            mid = 0.5 * (lo + top)
            fm, _ = func(np.where(active, mid, x))
            fm = np.atleast_1d(fm)
            lo = np.where(active & (fm > 0), mid, lo)
            top = np.where(active & (fm <= 0), mid, top)
            x = np.where(active, 0.5 * (lo + top), x)
            active &= (top - lo) > xi3 * np.maximum(1.0, x)
    return float(x[0]) if scalar else x


# ---------------------------------------------------------------------------
# Inner solver


@dataclass
class KKTReport:
    """Worst violations of the optimality conditions at an allocation."""

    stationarity: float      # max |rho| over active coordinates
    inactive: float          # max positive rho over zero coordinates
    slackness: float         # |mu * (sum x - P)|
    mu: float
    power: float

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.inactive)


def kkt_report(surrogate: Surrogate, x, mu: float, P: float) -> KKTReport:
    x = np.asarray(x, dtype=float)
    rho = surrogate.gradient(x) - mu
    active = x > 0
    stat = float(np.abs(rho[active]).max()) if active.any() else 0.0
    inact = float(np.clip(rho[~active], 0, None).max()) if (~active).any() else 0.0
    return KKTReport(stationarity=stat, inactive=inact, slackness=abs(mu * (x.sum() - P)),
                     mu=float(mu), power=float(x.sum()))


@dataclass
class WaterLevel:
    xbar: np.ndarray
    mu: float
    evaluations: int
    rule_sufficed: bool


def water_level(surrogate: Surrogate, x_frozen, P: float, cfg: SolverConfig) -> WaterLevel:
    """Per-coordinate water-filling against a frozen point plus the multiplier search.

    Finds ``mu >= 0`` with either ``mu = 0`` and total power within budget, or
    total power within tolerance below ``P``. A few increments of the classical
    rule ``dmu = min |rho(x + (P - p)/M) - rho(x)|`` are tried first, then a
    bracketed Newton/bisection search on ``p(mu)`` finishes the job.
    """
    x_frozen = np.asarray(x_frozen, dtype=float)
    M = x_frozen.shape[1]
    f = surrogate.jacobi_residual(x_frozen)
    cap = 2.0 * P
    evals = 0

    def solve(mu, warm):
        nonlocal evals
        evals += 1
        return newton_root(lambda y: f(y, mu), warm, xi3=cfg.xi3, max_iter=cfg.max_newton,
                           upper=cap, saturate=True)

    # Tighter than xi4: a power deficit d can cost mu*d/(K M) of surrogate value
    # in an averaged step, which must stay below the monotonicity slack.
    target = min(cfg.power_tol, 1e-10 * P)

    def done(mu, p):
        return p <= P * (1 + 1e-12) and (P - p) * max(1.0, mu) <= target

    xbar = solve(0.0, x_frozen)
    p = xbar.sum()
    if p <= P:
        return WaterLevel(xbar, 0.0, evals, False)

    g0, _ = f(np.zeros_like(x_frozen), 0.0)
    lo_mu, lo_p, lo_x = 0.0, p, xbar
    hi_mu, hi_p, hi_x = float(max(g0.max(), 0.0)), 0.0, np.zeros_like(xbar)

    mu = 0.0
    for _ in range(cfg.mu_rule_steps):
        act = xbar > 0
        if not act.any():
            break
        shifted = np.clip(xbar + (P - p) / M, 0.0, None)
        dmu = np.abs(f(shifted, mu)[0] - f(xbar, mu)[0])[act].min()
        if not (dmu > 0 and np.isfinite(dmu)) or mu + dmu >= hi_mu:
            break
        mu += dmu
        xbar = solve(mu, xbar)
        p = xbar.sum()
        if done(mu, p):
            log.debug("multiplier increment rule reached tolerance on its own")
            return WaterLevel(xbar, mu, evals, True)
        if p > P:
            lo_mu, lo_p, lo_x = mu, p, xbar
        else:
            hi_mu, hi_p, hi_x = mu, p, xbar
            break

    def power_slope(mu, xbar):
        # dp/dmu = sum over interior coordinates of 1/rho'(xbar), from rho(xbar; mu) = 0
        interior = (xbar > 0) & (xbar < cap)
        if not interior.any():
            return 0.0
        return float(np.sum(1.0 / f(xbar, mu)[1][interior]))

    # Safeguarded Newton on log p(mu) = log P inside the bracket (p behaves
    # roughly like 1/mu, which plain Newton approaches only linearly). Points
    # leaving the bracket are replaced by bisection, geometric when it is wide.
    for _ in range(cfg.max_mu_iter):
        slope = power_slope(mu, xbar)
        aim = P - 0.5 * target / max(1.0, mu)
        cand = mu - np.log(p / aim) * p / slope if slope < 0 and p > 0 else np.nan
        if not (lo_mu < cand < hi_mu):
            cand = np.sqrt(lo_mu * hi_mu) if lo_mu > 0 and hi_mu > 4 * lo_mu else 0.5 * (lo_mu + hi_mu)
        mu = cand
        xbar = solve(mu, xbar)
        p = xbar.sum()
        if p > P:
            lo_mu, lo_p, lo_x = mu, p, xbar
        else:
            hi_mu, hi_p, hi_x = mu, p, xbar
            if done(mu, p):
                return WaterLevel(xbar, mu, evals, False)
        if hi_mu - lo_mu <= 1e-15 * max(1.0, hi_mu):
            break
    raise ConvergenceError("water-level search failed to meet the power tolerance",
                           residual=abs(P - hi_p), iterations=cfg.max_mu_iter,
                           context={"mu_lo": lo_mu, "mu_hi": hi_mu, "P": P})


@dataclass
class IwfaResult:
    alloc: np.ndarray
    mu: float
    objective_trace: list            # surrogate value (bits) at X^(0), X^(1), ...
    fast_path: list                  # per sweep: whether the full water-filling point was taken
    sweeps: int
    converged: bool
    kkt: KKTReport
    rule_sufficed: int = 0


def _segment_argmax(surrogate: Surrogate, x, d, t_min: float) -> float:
    """Maximizer of the surrogate along ``x + t d`` for ``t`` in ``[t_min, 1]``.

    The surrogate is concave, so its slope along the segment is decreasing and
    the maximizer is found by bisection on the slope.
    """
    def slope(t):
        return float(np.sum(surrogate.gradient(x + t * d) * d))

    if slope(t_min) <= 0:
        return t_min
    if slope(1.0) >= 0:
        return 1.0
    lo, hi = t_min, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12:
            break
    return lo


def iwfa(surrogate: Surrogate, x0, P: float, cfg: SolverConfig) -> IwfaResult:
    """Maximize the surrogate by iterative water-filling sweeps.

    Every sweep solves all per-coordinate water-filling equations against the
    frozen current point. The result replaces the point outright when that
    raises the surrogate (and ``cfg.fast_path``). Otherwise the point moves
    ``1/(K M)`` of the way towards it, which never lowers the surrogate, or
    with ``cfg.line_search`` to the best point on the segment between
    ``1/(K M)`` and the full step.
    Stops once the surrogate changes by at most ``xi5`` bits and the KKT
    residual is below ``kkt_tol``.
    """
    x = check_allocation(x0, P=P).copy()
    n = x.size
    c = surrogate.value(x)
    trace = [c]
    fast = []
    mu = 0.0
    rule_hits = 0
    converged = False
    report = kkt_report(surrogate, x, 0.0, P)
    for t in range(1, cfg.max_iwfa + 1):
        wl = water_level(surrogate, x, P, cfg)
        mu = wl.mu
        rule_hits += wl.rule_sufficed
        total = wl.xbar.sum()
        if mu > 0 and total > 0:
            # the power search stops within tolerance of P; near the optimum that
            # shortfall costs more (mu per unit) than the remaining ascent gains
            wl.xbar = wl.xbar * (P / total)
        c_bar = surrogate.value(wl.xbar)
        if cfg.line_search:
            step = _segment_argmax(surrogate, x, wl.xbar - x, 1.0 / n)
        elif cfg.fast_path and c_bar >= c:
            step = 1.0
        else:
            step = 1.0 / n
        x_new = wl.xbar if step == 1.0 else x + step * (wl.xbar - x)
        # Partial steps only shrink coordinates whose target is 0 geometrically;
        # dropping them once negligible is itself an ascent move (rho <= 0 there).
        x_new = np.where((wl.xbar == 0) & (x_new <= SNAP * P), 0.0, x_new)
        c_new = surrogate.value(x_new)
        noise = 1e-13 * (1.0 + abs(c))   # roundoff of a surrogate evaluation
        if step == 1.0 and c_new < c - noise:
            # full step rejected by value even though the slope test allowed it
            x_new = x + (wl.xbar - x) / n
            c_new = surrogate.value(x_new)
            step = 1.0 / n
        if c_new < c - noise:
            # Within the power tolerance the averaged step can lose mu*(P - sum xbar)/(K M);
            # that only happens at a fixed point, so stay put and stop.
            fast.append(False)
            trace.append(c)
            report = kkt_report(surrogate, x, mu, P)
            converged = report.max_residual <= cfg.kkt_tol
            break
        fast.append(step == 1.0)
        if c_new < c - 1e-9:
            log.warning("surrogate decreased by %.3e in sweep %d", c - c_new, t)
        x, c_prev, c = x_new, c, c_new
        trace.append(c)
        report = kkt_report(surrogate, x, mu, P)
        if abs(c - c_prev) <= cfg.xi5 and report.max_residual <= cfg.kkt_tol:
            converged = True
            break
    if not converged:
        log.info("IWFA stopped at the sweep cap (%d) with KKT residual %.3e", cfg.max_iwfa, report.max_residual)
    return IwfaResult(alloc=x, mu=mu, objective_trace=trace, fast_path=fast, sweeps=len(fast),
                      converged=converged, kkt=report, rule_sufficed=rule_hits)


# ---------------------------------------------------------------------------
# Outer loop


def initial_allocation(omegas, omega_eve, cfg: SolverConfig) -> np.ndarray:
    """Starting point of the outer loop.

    ``strongest``: each user takes its ``min(B, M)`` beams with the largest
    positive margin ``beam_gain_k - beam_gain_eve`` (ties by beam index); the
    budget is split equally over all chosen (user, beam) pairs. When no beam has
    a positive margin the sign requirement is dropped.
    """
    K, _, M = omegas.shape
    P = cfg.P
    if cfg.init == "uniform":
        return np.full((K, M), P / (K * M))
    if cfg.init == "custom":
        alloc = check_allocation(cfg.init_alloc, P=P, M=M)
        if alloc.shape != (K, M):
            raise ConfigError(f"init_alloc has shape {alloc.shape}, expected {(K, M)}", path="solver.init_alloc")
        return alloc.copy()
    B = min(cfg.beams, M)
    margin = beam_gains(omegas) - beam_gains(omega_eve)[None, :]
    chosen = np.zeros((K, M), dtype=bool)
    for k in range(K):
        order = np.argsort(-margin[k], kind="stable")[:B]
        chosen[k, order] = True
    positive = chosen & (margin > 0)
    if positive.any():
        chosen = positive
    return chosen * (P / chosen.sum())


@dataclass
class SolveResult:
    alloc: np.ndarray
    objective: float                 # unclamped DE objective (bits)
    lower_bound: float               # clamped DE secrecy lower bound (bits)
    trace: list                      # one dict per outer iteration
    iwfa_traces: list                # surrogate traces of each inner solve
    iterations: int
    converged: bool
    kkt: KKTReport
    mu: float
    initial_objective: float
    surrogate: Surrogate
    terms: DETerms = field(repr=False)


def cccp_solve(omegas, omega_eve, config: SolverConfig) -> SolveResult:
    """Maximize the deterministic-equivalent secrecy lower bound over beam powers.

    Stops when the objective changes by at most ``xi2`` bits after a full
    (un-damped) step, or after ``max_cccp`` iterations. If the inner solution
    would lower the true objective the step is halved until it does not, since
    the surrogate is only tangent to it, not a minorant.
    """
    omegas = check_user_couplings(omegas)
    K, N, M = omegas.shape
    omega_eve = check_coupling(omega_eve, cols=M)
    cfg = config
    if not cfg.P > 0:
        raise ConfigError("cccp_solve needs P > 0", path="solver.P")
    if cfg.beams > M and cfg.init == "strongest":
        log.debug("beam budget %d exceeds M=%d; using all beams", cfg.beams, M)

    x = initial_allocation(omegas, omega_eve, cfg)
    terms = de_terms(x, omegas, omega_eve, xi1=cfg.xi1, max_iter=cfg.max_de_iter)
    f = terms.objective
    f0 = f
    rows = []
    iwfa_traces = []
    converged = False
    surr = None
    inner = None
    i = 0
    for i in range(1, cfg.max_cccp + 1):
        t0 = time.perf_counter()
        surr = Surrogate.at(x, terms, omegas, omega_eve)
        try:
            inner = iwfa(surr, x, cfg.P, cfg)
        except ConvergenceError as exc:
            exc.context["cccp_iteration"] = i
            raise
        iwfa_traces.append(inner.objective_trace)
        cand = inner.alloc
        new_terms = de_terms(cand, omegas, omega_eve, xi1=cfg.xi1, max_iter=cfg.max_de_iter)
        step = 1.0
        while new_terms.objective < f and step > 2.0 ** -30:
            step *= 0.5
            cand = x + step * (inner.alloc - x)
            new_terms = de_terms(cand, omegas, omega_eve, xi1=cfg.xi1, max_iter=cfg.max_de_iter)
        stalled = new_terms.objective < f
        if stalled:
            cand, new_terms = x, terms
        f_new = new_terms.objective
        rows.append({
            "iteration": i,
            "objective_bits": f_new,
            "lower_bound_bits": new_terms.lower_bound,
            "kkt_residual_max": inner.kkt.max_residual,
            "power_used": float(cand.sum()),
            "mu": inner.mu,
            "iwfa_sweeps": inner.sweeps,
            "step": 0.0 if stalled else step,
            "wall_time": time.perf_counter() - t0,
        })
        change = abs(f_new - f)
        x, terms, f = cand, new_terms, f_new
        if stalled or (step == 1.0 and change <= cfg.xi2):
            converged = True
            break
    if not converged:
        log.info("CCCP reached the iteration cap (%d)", cfg.max_cccp)
    return SolveResult(alloc=x, objective=f, lower_bound=terms.lower_bound, trace=rows,
                       iwfa_traces=iwfa_traces, iterations=i, converged=converged, kkt=inner.kkt,
                       mu=inner.mu, initial_objective=f0, surrogate=surr, terms=terms)


def single_user_water_filling(gamma, delta, P: float, tol: float = 1e-14) -> tuple[np.ndarray, float]:
    """Single-user water-filling ``[(delta + mu)^-1 - gamma^-1]^+`` with the budget met.

    Used as an independent reference for the ``K = 1`` inner solve: ``mu = 0``
    when the unconstrained levels fit the budget, else ``mu`` is found by
    bisection on the total power.
    """
    gamma = np.asarray(gamma, dtype=float)
    delta = np.asarray(delta, dtype=float)

    def levels(mu):
        with np.errstate(divide="ignore"):
            inv_g = np.where(gamma > 0, 1.0 / np.where(gamma > 0, gamma, 1.0), np.inf)
            inv_d = np.where(delta + mu > 0, 1.0 / np.where(delta + mu > 0, delta + mu, 1.0), np.inf)
        return np.clip(inv_d - inv_g, 0, None)

    if np.all(delta > 0):
        lv = levels(0.0)
        if np.all(np.isfinite(lv)) and lv.sum() <= P:
            return lv, 0.0
    lo, hi = 0.0, float(np.max(gamma)) + 1.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if levels(mid).sum() > P:
            lo = mid
        else:
            hi = mid
    return levels(hi), hi
