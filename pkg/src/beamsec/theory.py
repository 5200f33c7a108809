"""Executable checks of the structural results and an independent optimization oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import unitary_group

from .channel import (STREAM_CHECK, STREAM_ROTATION, beam_gains, check_coupling, check_user_couplings,
                      sample_beam_channel, substream)
from .errors import DimensionError, ScopeError
from .rates import LOG2E, check_allocation


# ---------------------------------------------------------------------------
# Beam exclusion for single-antenna users


@dataclass
class ExclusionReport:
    """User/beam pairs where the eavesdropper's beam gain is at least the user's."""

    excluded: frozenset
    margins: np.ndarray      # (K, M): user beam gain minus eavesdropper beam gain

    @property
    def mask(self) -> np.ndarray:
        return self.margins <= 0

    def excluded_power(self, alloc) -> float:
        return float(np.asarray(alloc, dtype=float)[self.mask].sum())


def theorem2_excluded_beams(omegas, omega_eve) -> ExclusionReport:
    """Pairs ``(k, m)`` whose optimal power is zero when every user has one antenna.

    Raises
    ------
    ScopeError
        If users have more than one receive antenna.
    """
    omegas = check_user_couplings(omegas)
    if omegas.shape[1] != 1:
        raise ScopeError(f"beam exclusion is only established for N_r = 1, got N_r = {omegas.shape[1]}")
    omega_eve = check_coupling(omega_eve, cols=omegas.shape[2])
    margins = beam_gains(omegas) - beam_gains(omega_eve)[None, :]
    ks, ms = np.nonzero(margins <= 0)
    return ExclusionReport(excluded=frozenset(zip(ks.tolist(), ms.tolist())), margins=margins)


# ---------------------------------------------------------------------------
# Lemma: E[x/(a+bx)] <= E[mean(x)/(a+bx)]


@dataclass
class InequalityCheck:
    lhs: float
    rhs: float
    se: float
    holds: bool


def lemma1_check(sampler: Callable[[np.random.Generator, int], np.ndarray], a: float, b: float,
                 samples: int, rng: np.random.Generator, mean: Optional[float] = None) -> InequalityCheck:
    """Monte-Carlo check of ``E[x/(a+bx)] <= E[xbar/(a+bx)]`` for a positive variable.

    ``sampler(rng, n)`` draws ``n`` values. ``xbar`` is the true mean when given,
    else the sample mean. Both sides share the samples; the standard error is
    that of the paired difference, and ``holds`` allows 3 of them.
    """
    if not (a > 0 and b > 0):
        raise ValueError("need a > 0 and b > 0")
    x = np.asarray(sampler(rng, samples), dtype=float)
    if np.any(x < 0):
        raise ValueError("sampler must return nonnegative values")
    xbar = float(x.mean()) if mean is None else float(mean)
    w = 1.0 / (a + b * x)
    lhs_s, rhs_s = x * w, xbar * w
    diff = lhs_s - rhs_s
    se = float(diff.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    lhs, rhs = float(lhs_s.mean()), float(rhs_s.mean())
    return InequalityCheck(lhs=lhs, rhs=rhs, se=se, holds=lhs <= rhs + 3.0 * se)


def lemma1_exact(values, probs, a: float, b: float) -> InequalityCheck:
    """Both sides of the inequality by enumeration of a discrete distribution."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise ValueError("probs must be a distribution over values")
    xbar = float(probs @ values)
    w = 1.0 / (a + b * values)
    lhs = float(probs @ (values * w))
    rhs = float(probs @ (xbar * w))
    return InequalityCheck(lhs=lhs, rhs=rhs, se=0.0, holds=lhs <= rhs + 1e-15 * max(1.0, abs(rhs)))


# ---------------------------------------------------------------------------
# Beam-domain optimality of the input covariance


def _logdet_hermitian(A):
    sign, val = np.linalg.slogdet(A)
    return val


def _expected_cov(omega, Q):
    # E[G Q G^H] for G with independent CN(0, omega) entries depends on diag(Q) only.
    return omega @ np.real(np.diagonal(Q, axis1=-2, axis2=-1))


def secrecy_lb_general(Qs, omegas, omega_eve, channels) -> np.ndarray:
    """Per-sample secrecy lower-bound terms for arbitrary beam-domain covariances.

    ``Qs`` is ``(K, M, M)`` Hermitian PSD, ``channels`` a list of ``(S, N_r, M)``
    sample stacks (one per user). Returns ``(S, K)`` values in bits of
    ``log2 det(I + K_k^{-1} G Q_k G^H) - log2 det(I + E[G_eve Q_k G_eve^H])``;
    the clamp is applied by the caller after averaging.
    """
    K = len(Qs)
    out = []
    for k in range(K):
        interf = sum(_expected_cov(omegas[k], Qs[i]) for i in range(K) if i != k)
        kbar = 1.0 + (interf if K > 1 else 0.0)
        G = channels[k] / np.sqrt(kbar)[:, None]
        A = np.eye(G.shape[1]) + G @ Qs[k] @ np.conj(np.swapaxes(G, -1, -2))
        r = _logdet_hermitian(A) * LOG2E
        c = np.log2(1.0 + _expected_cov(omega_eve, Qs[k])).sum()
        out.append(r - c)
    return np.stack(out, axis=1)


@dataclass
class RotationTrial:
    diag_value: float
    rotated_value: float
    nulled_value: float
    se: float                 # SE of the paired difference diag - rotated
    se_nulled: float          # SE of the paired difference nulled - rotated

    @property
    def diag_wins(self) -> bool:
        return self.diag_value >= self.rotated_value - 3.0 * self.se

    @property
    def nulled_wins(self) -> bool:
        return self.nulled_value >= self.rotated_value - 3.0 * self.se_nulled


@dataclass
class RotationReport:
    trials: list = field(default_factory=list)
    level: float = 0.95

    @property
    def win_rate(self) -> float:
        return float(np.mean([t.diag_wins for t in self.trials])) if self.trials else float("nan")

    @property
    def nulled_win_rate(self) -> float:
        return float(np.mean([t.nulled_wins for t in self.trials])) if self.trials else float("nan")

    @property
    def passed(self) -> bool:
        return self.win_rate >= self.level

    def to_dict(self) -> dict:
        return {"trials": len(self.trials), "win_rate": self.win_rate,
                "nulled_win_rate": self.nulled_win_rate, "level": self.level, "passed": self.passed,
                "min_margin": min((t.diag_value - t.rotated_value for t in self.trials), default=None)}


def _clamped_mean(terms):
    """Clamped secrecy sum and the SE of its per-sample version (positive users only)."""
    means = terms.mean(axis=0)
    pos = means > 0
    per_sample = terms[:, pos].sum(axis=1)
    return float(np.clip(means, 0, None).sum()), per_sample


def theorem1_rotation_test(omegas, omega_eve, alloc, trials: int = 50, seed: int = 0, samples: int = 2000,
                           rotations=None, level: float = 0.95) -> RotationReport:
    """Compare the beam-domain input ``diag(alloc_k)`` against rotated inputs ``W diag(alloc_k) W^H``.

    Each trial draws a Haar unitary ``W`` (shared by all users, from substream
    ``(seed, ROTATION, trial)``) unless ``rotations`` supplies the matrices. All
    three configurations (diagonal, rotated, and the rotated one with its
    off-diagonal entries nulled) are scored on the same channel samples, so the
    standard errors are those of paired differences. The diagonal input should
    win or tie in at least ``level`` of the trials; the nulled variant, which is
    the argument's intermediate step, is reported alongside.
    """
    omegas = check_user_couplings(omegas)
    K, N, M = omegas.shape
    omega_eve = check_coupling(omega_eve, cols=M)
    alloc = check_allocation(alloc, M=M)
    if alloc.shape[0] != K:
        raise DimensionError(f"allocation has {alloc.shape[0]} users, couplings have {K}")

    channels = [sample_beam_channel(omegas[k], substream(seed, STREAM_CHECK, k), size=samples) for k in range(K)]
    diag_Q = np.stack([np.diag(a).astype(complex) for a in alloc])
    base_terms = secrecy_lb_general(diag_Q, omegas, omega_eve, channels)
    report = RotationReport(level=level)
    for t in range(trials):
        if rotations is not None:
            W = np.asarray(rotations[t], dtype=complex)
        else:
            W = unitary_group.rvs(M, random_state=substream(seed, STREAM_ROTATION, t))
        rot_Q = np.stack([W @ q @ W.conj().T for q in diag_Q])
        null_Q = np.stack([np.diag(np.real(np.diagonal(q))).astype(complex) for q in rot_Q])
        rot_terms = secrecy_lb_general(rot_Q, omegas, omega_eve, channels)
        null_terms = secrecy_lb_general(null_Q, omegas, omega_eve, channels)
        d_val, d_s = _clamped_mean(base_terms)
        r_val, r_s = _clamped_mean(rot_terms)
        n_val, n_s = _clamped_mean(null_terms)
        report.trials.append(RotationTrial(
            diag_value=d_val, rotated_value=r_val, nulled_value=n_val,
            se=float(np.std(d_s - r_s, ddof=1) / np.sqrt(samples)),
            se_nulled=float(np.std(n_s - r_s, ddof=1) / np.sqrt(samples)),
        ))
    return report


# ---------------------------------------------------------------------------
# Projected-gradient oracle


def project_capped_simplex(v, P: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) <= P}`` (any array shape)."""
    v = np.asarray(v, dtype=float)
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= P:
        return clipped
    u = np.sort(v, axis=None)[::-1]
    css = np.cumsum(u) - P
    rho = np.count_nonzero(u * np.arange(1, u.size + 1) > css) - 1
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@dataclass
class OracleResult:
    alloc: np.ndarray
    value: float
    iterations: int


def oracle_projected_gradient(objective: Callable[[np.ndarray], np.ndarray], shape, P: float,
                              iters: int = 100_000, x0=None, alpha0: Optional[float] = None,
                              batched: bool = True) -> OracleResult:
    """Projected gradient ascent with central finite-difference gradients.

    Steps are ``alpha0 / sqrt(t + 1)`` with ``alpha0 = 0.5 P / |g_0|`` by
    default; the best iterate seen is returned. ``objective`` maps an array of
    ``shape`` to a scalar; with ``batched`` it must also accept a stack with
    one extra leading axis and return one value per slice, which lets a whole
    gradient be evaluated in one call. Deterministic given its inputs.
    """
    shape = tuple(shape)
    n = int(np.prod(shape))
    if P <= 0:
        return OracleResult(np.zeros(shape), float(objective(np.zeros(shape))), 0)
    x = np.full(shape, P / n) if x0 is None else project_capped_simplex(x0, P)
    # rows: x, x + h_i e_i, x - h_i e_i
    signs = np.concatenate([np.zeros((1, n)), np.eye(n), -np.eye(n)])
    pts = np.empty((2 * n + 1, n))

    def probe(x):
        flat = x.ravel()
        h = 1e-6 * (1.0 + np.abs(flat))
        np.multiply(signs, h, out=pts)
        np.add(pts, flat, out=pts)
        stack = pts.reshape((2 * n + 1,) + shape)
        if batched:
            vals = np.asarray(objective(stack), dtype=float)
        else:
            vals = np.array([objective(p) for p in stack], dtype=float)
        g = (vals[1:n + 1] - vals[n + 1:]) / (2.0 * h)
        return float(vals[0]), g.reshape(shape)

    f, g = probe(x)
    best_x, best_f = x.copy(), f
    if alpha0 is None:
        gn = np.linalg.norm(g)
        alpha0 = 0.5 * P / gn if gn > 0 else 0.0
    t = 0
    for t in range(iters):
        x = project_capped_simplex(x + alpha0 / np.sqrt(t + 1.0) * g, P)
        f, g = probe(x)
        if f > best_f:
            best_x, best_f = x.copy(), f
    return OracleResult(alloc=best_x, value=best_f, iterations=t + 1)
