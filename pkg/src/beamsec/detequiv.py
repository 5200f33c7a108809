"""Deterministic equivalent of the ergodic rate term and of the secrecy lower bound.

For the jointly-correlated beam-domain model every matrix in the fixed-point
system is diagonal, so all quantities are stored as vectors:

    phi_tilde = 1 + eta_tilde(lam / phi) / kbar          (receive side, N_r)
    phi       = 1 + eta(1 / (phi_tilde * kbar)) * lam    (beam side, M)
    gamma       = eta(1 / (phi_tilde * kbar))
    gamma_tilde = eta_tilde(lam / phi)

and the approximation of ``E[log det(Kbar + G Lambda G^H)]`` is

    sum log(1 + gamma*lam) + sum log(gamma_tilde + kbar) - sum(1 - 1/phi_tilde).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, DimensionError
from .rates import LOG2E, check_allocation, eve_cov, interference_covs

DEFAULT_XI1 = 1e-10
DEFAULT_MAX_ITER = 10_000
# Damping kicks in after this many iterations without a new best residual.
STALL_WINDOW = 50


def eta(omega, x_tilde) -> np.ndarray:
    """Beam-side map: ``[eta(X~)]_m = sum_n omega[n, m] * x~[n]``."""
    omega = np.asarray(omega, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    if x_tilde.shape[-1] != omega.shape[-2]:
        raise DimensionError(f"receive diagonal has length {x_tilde.shape[-1]}, omega has {omega.shape[-2]} rows")
    return np.einsum("...nm,...n->...m", omega, x_tilde)


def eta_tilde(omega, x) -> np.ndarray:
    """Receive-side map: ``[eta~(X)]_n = sum_m omega[n, m] * x[m]``."""
    omega = np.asarray(omega, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != omega.shape[-1]:
        raise DimensionError(f"beam diagonal has length {x.shape[-1]}, omega has {omega.shape[-1]} columns")
    return np.einsum("...nm,...m->...n", omega, x)


@dataclass
class DEState:
    """Converged fixed point; arrays carry an optional leading user axis."""

    gamma: np.ndarray
    gamma_tilde: np.ndarray
    phi_de: np.ndarray
    phi_tilde_de: np.ndarray
    residual: float
    iterations: int

    def __getitem__(self, k) -> "DEState":
        return DEState(self.gamma[k], self.gamma_tilde[k], self.phi_de[k], self.phi_tilde_de[k],
                       self.residual, self.iterations)


def _complete(omega, lam, kbar, phi_tilde):
    gamma = eta(omega, 1.0 / (phi_tilde * kbar))
    phi = 1.0 + gamma * lam
    gamma_tilde = eta_tilde(omega, lam / phi)
    return gamma, phi, gamma_tilde


def de_fixed_point(omega_k, lambda_k, kbar_k, xi1: float = DEFAULT_XI1, max_iter: int = DEFAULT_MAX_ITER,
                   trace: Optional[Callable[[int, float], None]] = None) -> DEState:
    """Solve the coupled fixed-point system for one user, or for a stack of users.

    Shapes: ``omega_k (..., N_r, M)``, ``lambda_k (..., M)``, ``kbar_k (..., N_r)``.
    Starts from ``phi_tilde = 1`` and iterates until the largest change of
    ``phi_tilde`` is at most ``xi1``. ``trace(iteration, residual)`` is called
    once per iteration when given.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach the tolerance.
    """
    omega = np.asarray(omega_k, dtype=float)
    lam = np.asarray(lambda_k, dtype=float)
    kbar = np.asarray(kbar_k, dtype=float)
    if xi1 <= 0:
        raise ValueError("xi1 must be positive")
    if np.any(lam < 0) or np.any(kbar < 1 - 1e-12):
        raise ValueError("need lambda >= 0 and kbar >= 1")

    phi_tilde = np.ones(kbar.shape)
    best = np.inf
    since_best = 0
    damped = False
    residual = np.inf
    for it in range(1, max_iter + 1):
        gamma, phi, gamma_tilde = _complete(omega, lam, kbar, phi_tilde)
        new = 1.0 + gamma_tilde / kbar
        residual = float(np.max(np.abs(new - phi_tilde))) if new.size else 0.0
        if damped:
            new = 0.5 * (new + phi_tilde)
        phi_tilde = new
        if trace is not None:
            trace(it, residual)
        if residual <= xi1:
            break
        if residual < best:
            best, since_best = residual, 0
        else:
            since_best += 1
            if since_best >= STALL_WINDOW:
                damped = True
    else:
        raise ConvergenceError("deterministic-equivalent fixed point did not converge",
                               residual=residual, iterations=max_iter)

    gamma, phi, gamma_tilde = _complete(omega, lam, kbar, phi_tilde)
    return DEState(gamma=gamma, gamma_tilde=gamma_tilde, phi_de=phi, phi_tilde_de=phi_tilde,
                   residual=residual, iterations=it)


def fixed_point_residual(omega_k, lambda_k, kbar_k, state: DEState) -> float:
    """Largest violation of the fixed-point equations when ``state`` is substituted back."""
    lam = np.asarray(lambda_k, dtype=float)
    kbar = np.asarray(kbar_k, dtype=float)
    g = eta(omega_k, 1.0 / (state.phi_tilde_de * kbar))
    gt = eta_tilde(omega_k, lam / state.phi_de)
    errs = [
        np.abs(state.phi_tilde_de - (1.0 + gt / kbar)),
        np.abs(state.phi_de - (1.0 + g * lam)),
        np.abs(state.gamma - g),
        np.abs(state.gamma_tilde - gt),
    ]
    return float(max(e.max() for e in errs if e.size))


def de_user_rate(state: DEState, lambda_k, kbar_k) -> np.ndarray | float:
    """Deterministic equivalent of ``E[log2 det(Kbar_k + G_k Lambda_k G_k^H)]``.

    Vectorized over a leading user axis when ``state`` holds a stack.
    """
    lam = np.asarray(lambda_k, dtype=float)
    kbar = np.asarray(kbar_k, dtype=float)
    nats = (np.log1p(state.gamma * lam).sum(axis=-1)
            + np.log(state.gamma_tilde + kbar).sum(axis=-1)
            - (1.0 - 1.0 / state.phi_tilde_de).sum(axis=-1))
    out = nats * LOG2E
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class DETerms:
    """Per-user pieces of the deterministic-equivalent objective, in bits."""

    r1: np.ndarray          # DE of E[log2 det(Kbar_k + G_k Lambda_k G_k^H)]
    r2: np.ndarray          # log2 det Kbar_k + log2 det Kbar_eve,k
    kbar: np.ndarray        # (K, N_r)
    states: DEState         # stacked over users

    @property
    def terms(self) -> np.ndarray:
        return self.r1 - self.r2

    @property
    def objective(self) -> float:
        """Unclamped sum, the quantity the solver maximizes."""
        return float(self.terms.sum())

    @property
    def lower_bound(self) -> float:
        """Clamped sum ``sum_k [R1_k - R2_k]^+``."""
        return float(np.clip(self.terms, 0, None).sum())


def de_terms(alloc, omegas, omega_eve, xi1: float = DEFAULT_XI1, max_iter: int = DEFAULT_MAX_ITER) -> DETerms:
    """Evaluate the deterministic-equivalent pieces for every user at ``alloc``."""
    alloc = check_allocation(alloc)
    omegas = np.asarray(omegas, dtype=float)
    if omegas.shape[0] != alloc.shape[0] or omegas.shape[2] != alloc.shape[1]:
        raise DimensionError(f"couplings {omegas.shape} do not match allocation {alloc.shape}")
    kbar = interference_covs(alloc, omegas)
    states = de_fixed_point(omegas, alloc, kbar, xi1=xi1, max_iter=max_iter)
    r1 = de_user_rate(states, alloc, kbar)
    r2 = (np.log(kbar).sum(axis=1) + np.log(eve_cov(alloc, omega_eve)).sum(axis=1)) * LOG2E
    return DETerms(r1=np.atleast_1d(r1), r2=r2, kbar=kbar, states=states)


def de_secrecy_lower_bound(alloc, omegas, omega_eve, xi1: float = DEFAULT_XI1,
                           max_iter: int = DEFAULT_MAX_ITER) -> tuple[float, np.ndarray]:
    """Deterministic equivalent of the secrecy sum-rate lower bound, in bits.

    Returns the clamped sum and the unclamped per-user terms ``R1_k - R2_k``.
    """
    t = de_terms(alloc, omegas, omega_eve, xi1=xi1, max_iter=max_iter)
    return t.lower_bound, t.terms
