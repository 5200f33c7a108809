"""Beam-domain channel model.

Channels are represented directly in the beam domain: for a terminal with
coupling matrix ``omega`` (rows = receive antennas, columns = BS beams) a
realization ``G`` has independent entries ``G[n, m] ~ CN(0, omega[n, m])``.
Receive-side unitaries are never materialized since every rate computed in
this package is invariant under them.

User coupling matrices are stacked into one ``(K, N_r, M)`` array; the
eavesdropper's is a separate ``(N_e, M)`` array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

# Substream tags. A stream is addressed by (seed, tag, *indices) so serial and
# parallel runs draw identical numbers for the same logical quantity.
STREAM_PROFILE = 0
STREAM_USER = 1
STREAM_EVE = 2
STREAM_ROTATION = 3
STREAM_CHECK = 4

PROFILE_KINDS = ("uniform", "exponential-cluster", "sparse-beams")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the logical stream ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SystemDims:
    """System dimensions and total power budget (unit noise variance)."""

    M: int
    K: int
    N_r: int
    N_e: int
    P: float = 1.0

    def __post_init__(self):
        for name in ("M", "K", "N_r", "N_e"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")
        if not np.isfinite(self.P) or self.P < 0:
            raise DimensionError(f"P must be finite and nonnegative, got {self.P!r}")


def check_coupling(omega, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate a coupling matrix and return it as a float array."""
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2:
        raise DimensionError(f"coupling matrix must be 2-D, got shape {omega.shape}")
    if rows is not None and omega.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {omega.shape[0]}")
    if cols is not None and omega.shape[1] != cols:
        raise DimensionError(f"expected {cols} columns, got {omega.shape[1]}")
    if not np.all(np.isfinite(omega)) or np.any(omega < 0):
        raise DimensionError("coupling entries must be finite and nonnegative")
    return omega


def check_user_couplings(omegas, dims: SystemDims | None = None) -> np.ndarray:
    """Validate and stack per-user coupling matrices into ``(K, N_r, M)``."""
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim == 2:
        omegas = omegas[None]
    if omegas.ndim != 3:
        raise DimensionError(f"user couplings must be (K, N_r, M), got shape {omegas.shape}")
    for om in omegas:
        check_coupling(om)
    if dims is not None and omegas.shape != (dims.K, dims.N_r, dims.M):
        raise DimensionError(
            f"user couplings have shape {omegas.shape}, dims require {(dims.K, dims.N_r, dims.M)}"
        )
    return omegas


def dft_basis(M: int) -> np.ndarray:
    """Unitary DFT matrix, ``V[a, b] = exp(-2j*pi*a*b/M) / sqrt(M)``."""
    if int(M) != M or M < 1:
        raise DimensionError(f"M must be a positive integer, got {M!r}")
    M = int(M)
    idx = np.arange(M)
    # Reduce a*b mod M before scaling so the phase stays accurate for large M.
    phase = (np.outer(idx, idx) % M) * (-2.0 * np.pi / M)
    return np.exp(1j * phase) / np.sqrt(M)


def beam_gains(omega) -> np.ndarray:
    """Diagonal of the beam-domain transmit correlation: column sums of ``omega``.

    Works on a single ``(rows, M)`` matrix or a stack ``(..., rows, M)``.
    """
    return np.asarray(omega, dtype=float).sum(axis=-2)


def sample_beam_channel(omega, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw beam-domain channel realizations with ``G[n, m] ~ CN(0, omega[n, m])``.

    Returns shape ``omega.shape`` when ``size`` is None, else ``(size, *omega.shape)``.
    Entries with zero variance are exactly zero.
    """
    omega = np.asarray(omega, dtype=float)
    shape = omega.shape if size is None else (int(size), *omega.shape)
    z = rng.standard_normal(shape + (2,))
    scale = np.sqrt(omega / 2.0)
    return (z[..., 0] + 1j * z[..., 1]) * scale


@dataclass(frozen=True)
class CouplingProfile:
    """Recipe for synthetic coupling matrices.

    kinds
        ``uniform``: every entry equal.
        ``exponential-cluster``: each terminal sees a cluster of beams around a
        centre with exponentially decaying gain (circular beam distance),
        per-antenna random weights and multiplicative jitter.
        ``sparse-beams``: nonzero gains only on a beam support set.

    Recognised ``params``:
        exponential-cluster: ``width`` (beams, default ``max(1, M/32)``),
        ``floor`` (default 1e-3), ``jitter`` (default 0.5), ``centers``
        (per-user list, random if absent), ``eve_center`` (random if absent),
        ``eve_gain`` (default 1).
        sparse-beams: ``support`` (beam list shared by users) or
        ``support_size`` (random per terminal), ``eve_support``,
        ``eve_support_size``, ``eve_gain``.
        uniform: ``eve_gain``.
    """

    kind: str = "exponential-cluster"
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}",
                              path="coupling.kind")
        for key, value in self.params.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                raise ConfigError("profile parameters must be nonnegative", path=f"coupling.params.{key}")


def _normalize(omega: np.ndarray, rows: int, M: int) -> np.ndarray:
    total = omega.sum()
    if total <= 0:
        return np.zeros_like(omega)
    return omega * (rows * M / total)


def _cluster_matrix(rng, rows, M, center, width, floor, jitter):
    m = np.arange(M)
    dist = np.abs(m - center)
    dist = np.minimum(dist, M - dist)
    profile = np.exp(-dist / max(width, 1e-12)) + floor
    row_w = rng.exponential(size=rows) + 0.1
    noise = 1.0 + jitter * (rng.uniform(size=(rows, M)) - 0.5) * 2.0 if jitter > 0 else 1.0
    return _normalize(np.outer(row_w, profile) * noise, rows, M)


def _sparse_matrix(rng, rows, M, support):
    omega = np.zeros((rows, M))
    support = np.asarray(sorted(set(int(s) for s in support)), dtype=int)
    if support.size and (support.min() < 0 or support.max() >= M):
        raise ConfigError(f"support indices must lie in [0, {M})", path="coupling.params.support")
    omega[:, support] = rng.exponential(size=(rows, support.size)) + 0.1
    return _normalize(omega, rows, M)


def synth_coupling(dims: SystemDims, profile: CouplingProfile) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize user and eavesdropper coupling matrices.

    Each terminal is normalized to average unit entry, i.e. the entries of a
    ``rows x M`` matrix sum to ``rows * M`` (the eavesdropper's are then scaled by
    ``eve_gain``). Deterministic given ``profile.seed``.

    Returns
    -------
    omegas : ndarray, shape (K, N_r, M)
    omega_eve : ndarray, shape (N_e, M)
    """
    M, K, Nr, Ne = dims.M, dims.K, dims.N_r, dims.N_e
    p = dict(profile.params)
    eve_gain = float(p.get("eve_gain", 1.0))
    rng = substream(profile.seed, STREAM_PROFILE)

    if profile.kind == "uniform":
        omegas = np.ones((K, Nr, M))
        omega_eve = np.ones((Ne, M))
    elif profile.kind == "exponential-cluster":
        width = float(p.get("width", max(1.0, M / 32)))
        floor = float(p.get("floor", 1e-3))
        jitter = float(p.get("jitter", 0.5))
        if jitter > 1:
            raise ConfigError("jitter must lie in [0, 1]", path="coupling.params.jitter")
        centers = p.get("centers")
        if centers is None:
            centers = rng.uniform(0, M, size=K)
        elif len(centers) != K:
            raise ConfigError(f"need {K} centers, got {len(centers)}", path="coupling.params.centers")
        eve_center = p.get("eve_center")
        if eve_center is None:
            eve_center = rng.uniform(0, M)
        omegas = np.stack([_cluster_matrix(rng, Nr, M, c, width, floor, jitter) for c in centers])
        omega_eve = _cluster_matrix(rng, Ne, M, eve_center, width, floor, jitter)
    else:
        support = p.get("support")
        size = int(p.get("support_size", max(1, M // 8)))
        if support is None and size > M:
            raise ConfigError(f"support_size must be <= M={M}", path="coupling.params.support_size")
        mats = []
        for _ in range(K):
            s = support if support is not None else rng.choice(M, size=size, replace=False)
            mats.append(_sparse_matrix(rng, Nr, M, s))
        omegas = np.stack(mats)
        eve_support = p.get("eve_support")
        eve_size = int(p.get("eve_support_size", size))
        if eve_support is None:
            if eve_size > M:
                raise ConfigError(f"eve_support_size must be <= M={M}",
                                  path="coupling.params.eve_support_size")
            eve_support = rng.choice(M, size=eve_size, replace=False)
        omega_eve = _sparse_matrix(rng, Ne, M, eve_support)

    return omegas, omega_eve * eve_gain


def coupling_to_json(omega) -> dict:
    """Serialize one coupling matrix as ``{rows, cols, entries}`` (row-major)."""
    omega = check_coupling(omega)
    return {"rows": int(omega.shape[0]), "cols": int(omega.shape[1]),
            "entries": [float(v) for v in omega.ravel()]}


def coupling_from_json(obj: dict) -> np.ndarray:
    """Inverse of :func:`coupling_to_json`, with validation."""
    try:
        rows, cols, entries = int(obj["rows"]), int(obj["cols"]), obj["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed coupling matrix: {exc}") from exc
    if len(entries) != rows * cols:
        raise ConfigError(f"expected {rows * cols} entries, got {len(entries)}", path="entries")
    try:
        return check_coupling(np.asarray(entries, dtype=float).reshape(rows, cols))
    except DimensionError as exc:
        raise ConfigError(str(exc), path="entries") from exc


def save_couplings(path, omegas, omega_eve) -> None:
    """Write user and eavesdropper couplings to a JSON file."""
    doc = {"users": [coupling_to_json(om) for om in omegas], "eve": coupling_to_json(omega_eve)}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_couplings(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a file written by :func:`save_couplings`."""
    with open(path) as fh:
        doc = json.load(fh)
    users: Sequence[dict] = doc.get("users") or []
    if not users or "eve" not in doc:
        raise ConfigError("coupling file needs non-empty 'users' and an 'eve' matrix")
    omegas = [coupling_from_json(u) for u in users]
    if len({om.shape for om in omegas}) != 1:
        raise ConfigError("all user coupling matrices must share a shape", path="users")
    omega_eve = coupling_from_json(doc["eve"])
    if omega_eve.shape[1] != omegas[0].shape[1]:
        raise ConfigError("eavesdropper matrix has a different beam count", path="eve.cols")
    return np.stack(omegas), omega_eve
