"""Transmit-covariance design: spectral efficiency, capacity-achieving
water-filling, projection onto the trace/rank-constrained PSD cone,
projected gradient ascent on cluster sum rates, the eigenbeam water-filling
heuristic, Lloyd clustering, and mixture-clustered codebooks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gmm import _hermitianize, log_responsibilities_from_channel

_LN2 = float(np.log(2.0))
_MAGIC = b"CBKX"
_VERSION = 1


@dataclass
class TransmitCovariance:
    """Hermitian PSD transmit covariance; `degenerate` marks the zero entry
    returned for an all-zero channel."""

    Q: np.ndarray
    degenerate: bool = False

    @property
    def n_tx(self):
        return self.Q.shape[0]


def check_feasible(q, rho, max_rank, tol=1e-9):
    """True when trace(Q) <= rho + tol, min eig >= -tol/10 and at most
    `max_rank` eigenvalues exceed tol/10."""
    w = np.linalg.eigvalsh(_hermitianize(q))
    if w.sum() > rho + tol:
        return False
    if w.min() < -1e-10:
        return False
    return int(np.sum(w > 1e-10)) <= max_rank


@dataclass(frozen=True)
class PgdOptions:
    step: float = 1.0
    max_iter: int = 150
    rel_tol: float = 1e-7
    backtrack: float = 0.5

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("initial step must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class Codebook:
    entries: list
    bits: int
    rho: float
    noise_var: float
    design_trace: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if len(self.entries) != 2**self.bits:
            raise ValueError("codebook size must equal 2**bits")

    def __len__(self):
        return len(self.entries)

    def stacked(self):
        return np.stack([e.Q for e in self.entries])


def spectral_efficiency(h, q, noise_var):
    """r(H, Q) = log2 det(I + H Q H^H / noise_var), in bits."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    r = h.shape[0]
    x = np.eye(r) + (h @ q @ h.conj().T) / noise_var
    _, logdet = np.linalg.slogdet(x)
    return max(float(logdet) / _LN2, 0.0)


def rates_single_entry(hs, q, noise_var):
    """Rates of one transmit covariance against a (M, r, t) channel stack."""
    r = hs.shape[1]
    x = np.eye(r) + (hs @ q @ hs.conj().transpose(0, 2, 1)) / noise_var
    _, logdet = np.linalg.slogdet(x)
    return np.maximum(logdet / _LN2, 0.0)


def rate_matrix(hs, entries, noise_var):
    """Rates of every codebook entry for every channel, shape (M, K)."""
    out = np.empty((hs.shape[0], len(entries)))
    for k, e in enumerate(entries):
        out[:, k] = rates_single_entry(hs, e.Q, noise_var)
    return out


def water_levels(gains, budget):
    """Exact water-filling power allocation: maximize sum log2(1 + g_i p_i)
    subject to p >= 0, sum p = budget. Returns powers in the input order."""
    gains = np.asarray(gains, dtype=float)
    powers = np.zeros_like(gains)
    active = gains > 0
    if not active.any() or budget <= 0:
        return powers
    idx = np.nonzero(active)[0]
    order = idx[np.argsort(gains[idx])[::-1]]
    inv = 1.0 / gains[order]
    for k in range(order.size, 0, -1):
        level = (budget + inv[:k].sum()) / k
        if level >= inv[k - 1]:
            powers[order[:k]] = level - inv[:k]
            break
    return powers


def waterfill_optimal(h, rho, noise_var):
    """Capacity-achieving transmit covariance on the right singular vectors of H.

    An all-zero channel yields the zero matrix flagged degenerate (every Q
    gives rate zero there)."""
    n_tx = h.shape[1]
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    if not np.any(s > 0):
        return TransmitCovariance(np.zeros((n_tx, n_tx), np.complex128), degenerate=True)
    p = water_levels(s**2 / noise_var, rho)
    v = vh.conj().T
    q = _hermitianize((v * p) @ v.conj().T)
    return TransmitCovariance(q)


def _project_simplex(vals, total):
    """Euclidean projection onto {x >= 0, sum x = total}."""
    a = np.sort(vals)[::-1]
    theta = (np.cumsum(a) - total) / np.arange(1, a.size + 1)
    k = np.nonzero(a > theta)[0].max()
    return np.maximum(vals - theta[k], 0.0)


def project_feasible(m, rho, max_rank):
    """Project a Hermitian matrix onto {Q PSD, trace(Q) <= rho, rank(Q) <= max_rank}.

    Eigenvalues beyond the max_rank largest are zeroed, negatives clipped,
    and the surviving spectrum is projected onto the scaled simplex when its
    sum exceeds rho."""
    a = _hermitianize(np.asarray(m, dtype=np.complex128))
    w, v = np.linalg.eigh(a)
    keep = np.zeros_like(w, dtype=bool)
    keep[np.argsort(w)[::-1][:max_rank]] = True
    w = np.where(keep, w, 0.0)
    w = np.maximum(w, 0.0)
    if w.sum() > rho:
        kept = w[keep]
        w[keep] = _project_simplex(kept, rho)
    q = _hermitianize((v * w) @ v.conj().T)
    return TransmitCovariance(q)


def _mean_rate(hs, q, noise_var):
    return float(np.mean(rates_single_entry(hs, q, noise_var)))


def sum_rate_gradient(hs, q, noise_var):
    """Euclidean gradient of the mean rate:
    (1 / (M ln2 noise_var)) sum_i H_i^H (I + H_i Q H_i^H / noise_var)^-1 H_i."""
    r = hs.shape[1]
    x = np.eye(r) + (hs @ q @ hs.conj().transpose(0, 2, 1)) / noise_var
    xi = np.linalg.inv(x)
    hh = hs.conj().transpose(0, 2, 1)
    g = np.mean(hh @ xi @ hs, axis=0) / (_LN2 * noise_var)
    return _hermitianize(g)


def _as_stack(cluster):
    if isinstance(cluster, np.ndarray):
        hs = cluster
    else:
        hs = np.stack([getattr(c, "H", c) for c in cluster])
    if hs.ndim != 3 or hs.shape[0] == 0:
        raise ValueError("cluster must contain at least one channel matrix")
    return hs


def default_entry(n_tx, rho, n_rx):
    """Feasible isotropic starting point / placeholder for empty clusters."""
    return project_feasible((rho / n_tx) * np.eye(n_tx), rho, n_rx)


def pgd_sum_rate(cluster, rho, noise_var, n_rx, opts=None, q_init=None, return_trace=False):
    """Maximize the cluster mean rate by projected gradient ascent.

    Backtracking halves the step until the projected step does not decrease
    the objective, so the accepted objective sequence is nondecreasing. The
    step is allowed to grow again between iterations."""
    opts = opts or PgdOptions()
    hs = _as_stack(cluster)
    n_tx = hs.shape[2]
    q = q_init.Q.copy() if q_init is not None else default_entry(n_tx, rho, n_rx).Q
    f = _mean_rate(hs, q, noise_var)
    trace = [f]
    step = opts.step
    for it in range(opts.max_iter):
        grad = sum_rate_gradient(hs, q, noise_var)
        if it > 0:
            step = step / opts.backtrack
        accepted = False
        while step > 1e-14:
            cand = project_feasible(q + step * grad, rho, n_rx).Q
            fc = _mean_rate(hs, cand, noise_var)
            if fc >= f:
                accepted = True
                break
            step *= opts.backtrack
        if not accepted:
            break
        gain = fc - f
        q, f = cand, fc
        trace.append(f)
        if gain <= opts.rel_tol * max(abs(f), 1e-12):
            break
    entry = TransmitCovariance(q)
    if return_trace:
        return entry, trace
    return entry


def lau_update(cluster, rho, noise_var, n_rx):
    """Heuristic codebook update: water-fill over the dominant eigenvectors of
    the cluster mean of H^H H."""
    hs = _as_stack(cluster)
    s = _hermitianize(np.mean(hs.conj().transpose(0, 2, 1) @ hs, axis=0))
    w, v = np.linalg.eigh(s)
    order = np.argsort(w)[::-1][:n_rx]
    gains = np.maximum(w[order], 0.0) / noise_var
    if not np.any(gains > 0):
        return TransmitCovariance(np.zeros_like(s), degenerate=True)
    p = water_levels(gains, rho)
    vs = v[:, order]
    return TransmitCovariance(_hermitianize((vs * p) @ vs.conj().T))


def _bits_for(k):
    bits = int(k).bit_length() - 1
    if 2**bits != k:
        raise ValueError(f"codebook size {k} is not a power of two")
    return bits


def _update_entry(hs, idx, rho, noise_var, n_rx, update, opts, warm):
    if update == "pgd":
        return pgd_sum_rate(hs[idx], rho, noise_var, n_rx, opts, q_init=warm)
    if update == "lau":
        return lau_update(hs[idx], rho, noise_var, n_rx)
    raise ValueError(f"unknown update method {update!r}")


def lloyd_fit(
    data,
    k,
    rho,
    noise_var,
    n_rx,
    update="pgd",
    opts=None,
    seed=0,
    max_outer=50,
    rel_tol=1e-4,
):
    """Alternating rate-based assignment and per-cluster updates, starting from
    a seeded random partition. PGD updates warm-start from the previous entry;
    the mean best-entry rate per outer iteration is recorded on the result."""
    hs = data.h if hasattr(data, "h") else _as_stack(data)
    m, _, n_tx = hs.shape
    if k > m:
        raise ValueError(f"cannot form {k} clusters from {m} samples")
    bits = _bits_for(k)
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, k, size=m)
    entries = [None] * k
    trace = []
    prev = None
    for _ in range(max_outer):
        for j in range(k):
            idx = assign == j
            if not idx.any():
                entries[j] = default_entry(n_tx, rho, n_rx)
            else:
                entries[j] = _update_entry(
                    hs, idx, rho, noise_var, n_rx, update, opts, entries[j]
                )
        rates = rate_matrix(hs, entries, noise_var)
        best = rates.max(axis=1)
        obj = float(best.mean())
        trace.append(obj)
        new_assign = rates.argmax(axis=1)
        empty = [j for j in range(k) if not np.any(new_assign == j)]
        if empty:
            worst_first = np.argsort(best)
            for j, sample in zip(empty, worst_first):
                new_assign[sample] = j
        if prev is not None and abs(obj - prev) <= rel_tol * max(abs(prev), 1e-12):
            break
        prev = obj
        assign = new_assign
    return Codebook(entries, bits, float(rho), float(noise_var), design_trace=trace)


def gmm_codebook(model, data, rho, noise_var, n_rx, update="pgd", opts=None):
    """One codebook entry per mixture component, designed from the training
    samples whose posterior puts that component first (ties to the lowest
    index). Empty clusters fall back to the isotropic feasible entry."""
    hs = data.h if hasattr(data, "h") else _as_stack(data)
    if hs.shape[0] == 0:
        raise ValueError("empty training data")
    vectors = data.vectors if hasattr(data, "vectors") else vec_stack(hs)
    if vectors.shape[1] != model.dim:
        raise ValueError("training data dimension does not match the model")
    bits = _bits_for(model.n_components)
    assign = np.argmax(log_responsibilities_from_channel(model, vectors), axis=1)
    n_tx = hs.shape[2]
    entries = []
    for j in range(model.n_components):
        idx = assign == j
        if not idx.any():
            entries.append(default_entry(n_tx, rho, n_rx))
        else:
            entries.append(
                _update_entry(hs, idx, rho, noise_var, n_rx, update, opts, None)
            )
    return Codebook(entries, bits, float(rho), float(noise_var))


def vec_stack(hs):
    m, r, c = hs.shape
    return hs.transpose(0, 2, 1).reshape(m, r * c)


_CB_HEADER = struct.Struct("<4sIIIdd")


def save_codebook(cb, path):
    path = Path(path)
    stacked = cb.stacked()
    with open(path, "wb") as f:
        f.write(
            _CB_HEADER.pack(
                _MAGIC, _VERSION, cb.bits, stacked.shape[1], cb.rho, cb.noise_var
            )
        )
        f.write(stacked.tobytes(order="C"))


def load_codebook(path):
    raw = Path(path).read_bytes()
    magic, version, bits, n_tx, rho, noise_var = _CB_HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"not a codebook file: {path}")
    if version != _VERSION:
        raise ValueError(f"unsupported codebook version {version}")
    k = 2**bits
    q = np.frombuffer(
        raw, np.complex128, k * n_tx * n_tx, _CB_HEADER.size
    ).reshape(k, n_tx, n_tx)
    entries = [TransmitCovariance(q[i].copy()) for i in range(k)]
    return Codebook(entries, bits, rho, noise_var)
