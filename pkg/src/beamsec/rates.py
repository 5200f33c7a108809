"""Covariance terms and Monte-Carlo estimators of the secrecy sum-rate.

All public rates are in bits per channel use. An allocation is a ``(K, M)``
array whose row ``k`` holds the beam powers of user ``k``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .channel import STREAM_EVE, STREAM_USER, check_coupling, sample_beam_channel, substream
from .errors import DimensionError

LOG2E = 1.0 / np.log(2.0)

# Samples per substream block; fixes the mapping from sample index to stream.
MC_BLOCK = 1000


def check_allocation(alloc, P: float | None = None, M: int | None = None) -> np.ndarray:
    """Validate a ``(K, M)`` beam-power allocation, optionally against a budget."""
    alloc = np.atleast_2d(np.asarray(alloc, dtype=float))
    if alloc.ndim != 2:
        raise DimensionError(f"allocation must be (K, M), got shape {alloc.shape}")
    if M is not None and alloc.shape[1] != M:
        raise DimensionError(f"allocation has {alloc.shape[1]} beams, expected {M}")
    if not np.all(np.isfinite(alloc)) or np.any(alloc < 0):
        raise DimensionError("beam powers must be finite and nonnegative")
    if P is not None and alloc.sum() > P * (1 + 1e-9) + 1e-300:
        raise DimensionError(f"allocation uses {alloc.sum():.6g} > budget P={P:.6g}")
    return alloc


def interference_cov(alloc, k: int, omega_k) -> np.ndarray:
    """Diagonal of ``I + sum_{i != k} E[G_k Lambda_i G_k^H]`` for user ``k``."""
    alloc = check_allocation(alloc)
    K = alloc.shape[0]
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range for K={K}")
    omega_k = check_coupling(omega_k, cols=alloc.shape[1])
    others = alloc.sum(axis=0) - alloc[k]
    return 1.0 + omega_k @ others


def interference_covs(alloc, omegas) -> np.ndarray:
    """Stacked :func:`interference_cov` for every user, shape ``(K, N_r)``."""
    alloc = np.asarray(alloc, dtype=float)
    others = alloc.sum(axis=0)[None, :] - alloc
    return 1.0 + np.einsum("knm,km->kn", omegas, others)


def eve_cov(alloc_k, omega_eve) -> np.ndarray:
    """Diagonal of ``I + E[G_eve Lambda_k G_eve^H]``."""
    alloc_k = np.asarray(alloc_k, dtype=float)
    omega_eve = check_coupling(omega_eve, cols=alloc_k.shape[-1])
    return 1.0 + alloc_k @ omega_eve.T


def eve_rate_upper_bound(alloc_k, omega_eve) -> float:
    """Jensen upper bound ``log2 det(I + E[G_eve Lambda_k G_eve^H])`` on the eavesdropper rate."""
    return float(np.log2(eve_cov(alloc_k, omega_eve)).sum())


def _blocked_samples(omega, rng_or_seed, key, samples):
    """Yield channel sample blocks.

    A Generator is consumed sequentially. An integer seed maps block ``b`` to
    substream ``(seed, *key, b)`` so blocks can be drawn independently.
    """
    n_blocks = -(-samples // MC_BLOCK)
    for b in range(n_blocks):
        n = min(MC_BLOCK, samples - b * MC_BLOCK)
        if isinstance(rng_or_seed, np.random.Generator):
            rng = rng_or_seed
        else:
            rng = substream(rng_or_seed, *key, b)
        yield sample_beam_channel(omega, rng, size=n)


def _logdet_gain(G, power, noise_diag=None):
    """Per-sample ``log det(I + N^{-1} G diag(power) G^H)`` in nats."""
    # Whitening by the diagonal noise keeps the matrix Hermitian PD.
    if noise_diag is not None:
        G = G / np.sqrt(noise_diag)[:, None]
    A = np.einsum("snm,m,spm->snp", G, power, G.conj())
    n = A.shape[-1]
    A = A + np.eye(n)
    sign, logdet = np.linalg.slogdet(A)
    return logdet


def _mean_se(values):
    values = np.asarray(values)
    if values.size < 2:
        return float(values.mean()), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def user_rate_mc(alloc, k: int, omega_k, samples: int, rng, *, return_samples=False):
    """Monte-Carlo estimate of ``E[log2 det(I + Kbar_k^{-1} G_k Lambda_k G_k^H)]``.

    ``rng`` is a Generator or an integer seed (blocked substreams keyed by user).
    Returns ``(estimate, std_error)``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    alloc = check_allocation(alloc)
    kbar = interference_cov(alloc, k, omega_k)
    power = alloc[k]
    if not np.any(power > 0):
        vals = np.zeros(samples)
    else:
        vals = np.concatenate([
            _logdet_gain(G, power, kbar) * LOG2E
            for G in _blocked_samples(np.asarray(omega_k, float), rng, (STREAM_USER, k), samples)
        ])
    est = _mean_se(vals)
    return (*est, vals) if return_samples else est


def eve_rate_mc(alloc_k, omega_eve, samples: int, rng, *, return_samples=False):
    """Monte-Carlo estimate of the eavesdropper's ergodic rate ``E[log2 det(I + G_eve Lambda_k G_eve^H)]``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    power = np.asarray(alloc_k, dtype=float)
    omega_eve = check_coupling(omega_eve, cols=power.shape[-1])
    if not np.any(power > 0):
        vals = np.zeros(samples)
    else:
        vals = np.concatenate([
            _logdet_gain(G, power) * LOG2E
            for G in _blocked_samples(omega_eve, rng, (STREAM_EVE,), samples)
        ])
    est = _mean_se(vals)
    return (*est, vals) if return_samples else est


@dataclass
class RateReport:
    """Per-user rates and the assembled secrecy sum-rates (bits/channel use)."""

    per_user_rate: np.ndarray
    per_user_rate_se: np.ndarray
    per_user_eve_bound: np.ndarray
    secrecy_sum_rate_lb: float
    secrecy_sum_rate_lb_se: float
    per_user_eve_mc: Optional[np.ndarray] = None
    per_user_eve_mc_se: Optional[np.ndarray] = None
    secrecy_sum_rate_mc: Optional[float] = None
    secrecy_sum_rate_mc_se: Optional[float] = None

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    def csv_rows(self, snr_db: float | None = None) -> list[dict]:
        """One row per user with columns snr_db, k, R_k, C_ub_k, C_mc_k, R_sec_lb, R_sec_mc, se_*."""
        rows = []
        for k in range(len(self.per_user_rate)):
            rows.append({
                "snr_db": snr_db,
                "k": k,
                "R_k": float(self.per_user_rate[k]),
                "C_ub_k": float(self.per_user_eve_bound[k]),
                "C_mc_k": None if self.per_user_eve_mc is None else float(self.per_user_eve_mc[k]),
                "R_sec_lb": self.secrecy_sum_rate_lb,
                "R_sec_mc": self.secrecy_sum_rate_mc,
                "se_R_k": float(self.per_user_rate_se[k]),
                "se_C_mc_k": None if self.per_user_eve_mc_se is None else float(self.per_user_eve_mc_se[k]),
                "se_R_sec_lb": self.secrecy_sum_rate_lb_se,
                "se_R_sec_mc": self.secrecy_sum_rate_mc_se,
            })
        return rows


def secrecy_rates(alloc, omegas, omega_eve, samples: int, seed: int, *, eve_mc: bool = True) -> RateReport:
    """Estimate ``R_sec = sum_k [R_k - C_k]^+`` and ``R_sec,lb = sum_k [R_k - C_k,ub]^+``.

    User ``k`` draws from substreams ``(seed, USER, k, block)``; the eavesdropper's
    samples come from ``(seed, EVE, block)`` and are shared by all users (the
    eavesdropper has one physical channel). Standard errors of the clamped sums
    add the per-user variances of the terms that are positive.
    """
    alloc = check_allocation(alloc)
    omegas = np.asarray(omegas, dtype=float)
    K = alloc.shape[0]
    if omegas.shape[0] != K:
        raise DimensionError(f"{omegas.shape[0]} coupling matrices for {K} users")

    R = np.empty(K)
    R_se = np.empty(K)
    C_ub = np.empty(K)
    for k in range(K):
        R[k], R_se[k] = user_rate_mc(alloc, k, omegas[k], samples, seed)
        C_ub[k] = eve_rate_upper_bound(alloc[k], omega_eve)
    lb_terms = R - C_ub
    pos = lb_terms > 0
    report = RateReport(
        per_user_rate=R,
        per_user_rate_se=R_se,
        per_user_eve_bound=C_ub,
        secrecy_sum_rate_lb=float(np.clip(lb_terms, 0, None).sum()),
        secrecy_sum_rate_lb_se=float(np.sqrt(np.sum(R_se[pos] ** 2))),
    )
    if eve_mc:
        C = np.empty(K)
        C_se = np.empty(K)
        for k in range(K):
            C[k], C_se[k] = eve_rate_mc(alloc[k], omega_eve, samples, seed)
        terms = R - C
        pos = terms > 0
        report.per_user_eve_mc = C
        report.per_user_eve_mc_se = C_se
        report.secrecy_sum_rate_mc = float(np.clip(terms, 0, None).sum())
        report.secrecy_sum_rate_mc_se = float(np.sqrt(np.sum(R_se[pos] ** 2 + C_se[pos] ** 2)))
    return report
