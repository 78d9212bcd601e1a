"""Complex Gaussian mixture models: density evaluation, EM fitting, and the
Kronecker-structured two-stage construction.

All densities are circularly-symmetric complex Gaussians evaluated in the
log domain; mixture posteriors are normalized with log-sum-exp.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .scenario import Orientation

_LOG_PI = float(np.log(np.pi))
_MAGIC = b"GMMX"
_VERSION = 1
_HERMITIAN_RTOL = 1e-12


def _hermitianize(c):
    return 0.5 * (c + c.conj().T)


class ComplexGaussian:
    """One mixture component with precomputed Cholesky factor, inverse and log-det."""

    def __init__(self, mean, cov):
        mean = np.ascontiguousarray(mean, dtype=np.complex128)
        cov = np.ascontiguousarray(cov, dtype=np.complex128)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean/covariance dimensions do not match")
        scale = np.linalg.norm(cov)
        if np.linalg.norm(cov - cov.conj().T) > _HERMITIAN_RTOL * max(scale, 1e-300):
            raise ValueError("covariance is not Hermitian")
        self.mean = mean
        self.cov = cov
        # raises LinAlgError for singular covariances (possible when fitted
        # with zero diagonal loading)
        self.chol = np.linalg.cholesky(cov)
        self.log_det = float(2.0 * np.sum(np.log(np.diag(self.chol).real)))
        eye = np.eye(mean.size, dtype=np.complex128)
        inv = solve_triangular(
            self.chol.conj().T, solve_triangular(self.chol, eye, lower=True), lower=False
        )
        self.cov_inverse = _hermitianize(inv)

    @property
    def dim(self):
        return self.mean.size


def log_density(g, h):
    """log N_C(h; mean, cov) = -(h-mu)^H C^-1 (h-mu) - N log(pi) - log det C."""
    h = np.asarray(h, dtype=np.complex128)
    squeeze = h.ndim == 1
    d = np.atleast_2d(h) - g.mean
    z = solve_triangular(g.chol, d.T, lower=True)
    quad = np.sum(z.real**2 + z.imag**2, axis=0)
    out = -(quad + g.dim * _LOG_PI + g.log_det)
    return float(out[0]) if squeeze else out.reshape(h.shape[:-1])


@dataclass(frozen=True)
class KroneckerStructure:
    k_tx: int
    k_rx: int
    n_tx: int
    n_rx: int
    tx_covs: tuple
    rx_covs: tuple


class GmmModel:
    """Mixture of K complex Gaussians; weights live on the simplex."""

    def __init__(self, weights, components, structure="full", kron=None):
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size != len(components):
            raise ValueError("one weight per component required")
        total = weights.sum()
        if np.any(weights < 0) or total <= 0:
            raise ValueError("weights must be nonnegative with positive mass")
        # renormalize only when off the simplex, so reloading a stored model
        # reproduces its weights bit-exactly
        self.weights = weights if abs(total - 1.0) <= 1e-12 else weights / total
        self.components = list(components)
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share one dimension")
        if structure not in ("full", "kronecker"):
            raise ValueError(f"unknown structure {structure!r}")
        if structure == "kronecker" and kron is None:
            raise ValueError("kronecker structure requires factor matrices")
        self.structure = structure
        self.kron = kron
        self.loglik_trace = None
        self.stage_traces = None

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim


def log_densities(model, x):
    """Per-component log densities for a batch x of shape (..., N)."""
    x = np.asarray(x, dtype=np.complex128)
    flat = np.atleast_2d(x.reshape(-1, x.shape[-1]))
    out = np.empty((flat.shape[0], model.n_components))
    for k, comp in enumerate(model.components):
        z = solve_triangular(comp.chol, (flat - comp.mean).T, lower=True)
        quad = np.sum(z.real**2 + z.imag**2, axis=0)
        out[:, k] = -(quad + comp.dim * _LOG_PI + comp.log_det)
    return out.reshape(x.shape[:-1] + (model.n_components,))


def log_responsibilities_from_channel(model, h):
    logp = log_densities(model, h) + np.log(model.weights)
    return logp - logsumexp(logp, axis=-1, keepdims=True)


def responsibilities_from_channel(model, h):
    """Posterior component probabilities p(k | h); sums to one along the last axis."""
    r = np.exp(log_responsibilities_from_channel(model, h))
    return r / r.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    rel_tol: float = 1e-6
    reg_eps: float = 1e-6
    seed: int = 0
    init: str = "random_responsibility"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.reg_eps < 0:
            raise ValueError("reg_eps must be nonnegative")
        if self.init not in ("random_responsibility", "kmeans_like"):
            raise ValueError(f"unknown init scheme {self.init!r}")


def _initial_responsibilities(x, k, opts, rng):
    m = x.shape[0]
    if opts.init == "random_responsibility":
        r = rng.random((m, k))
        return r / r.sum(axis=1, keepdims=True)
    centers = x[rng.choice(m, size=k, replace=False)]
    d2 = np.sum(np.abs(x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    r = np.zeros((m, k))
    r[np.arange(m), np.argmin(d2, axis=1)] = 1.0
    return r


def _m_step(x, r, opts, zero_mean, global_cov, floor, sample_ll=None):
    m, n = x.shape
    counts = r.sum(axis=0)
    weights = np.empty(counts.size)
    means = np.zeros((counts.size, n), dtype=np.complex128)
    covs = np.empty((counts.size, n, n), dtype=np.complex128)
    worst = None
    for k in range(counts.size):
        if counts[k] < 1.0:
            # collapsed component: re-seed at the worst-likelihood sample
            # (at init, before any likelihood exists, at the least-claimed one)
            if worst is None:
                if sample_ll is not None:
                    worst = int(np.argmin(sample_ll))
                else:
                    worst = int(np.argmin(r.max(axis=1)))
            weights[k] = 1.0 / m
            if not zero_mean:
                means[k] = x[worst]
            covs[k] = global_cov
            continue
        weights[k] = counts[k] / m
        if not zero_mean:
            means[k] = (r[:, k] @ x) / counts[k]
        d = x - means[k]
        c = ((r[:, k][:, None] * d).T @ d.conj()) / counts[k]
        covs[k] = floor_eigenvalues(_hermitianize(c), floor)
    weights = weights / weights.sum()
    return weights, means, covs


def floor_eigenvalues(cov, floor):
    """Q-maximizing covariance over {C >= floor*I}: clip eigenvalues from below.

    A fixed floor keeps the feasible family identical across EM iterations, so
    the log-likelihood trace is nondecreasing up to rounding (additive diagonal
    loading is not the constrained maximizer and produces measurable dips)."""
    if floor <= 0:
        return cov
    w, v = np.linalg.eigh(cov)
    if w[0] >= floor:
        return cov
    return _hermitianize((v * np.maximum(w, floor)) @ v.conj().T)


def fit_em(x, k, opts=None, zero_mean=False):
    """Fit a K-component mixture to an (M, N) complex sample array via EM.

    The per-iteration total log-likelihood trace is stored on the returned
    model; it is nondecreasing up to regularization-level slack.
    """
    opts = opts or FitOptions()
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError("expected an (M, N) sample array")
    m, n = x.shape
    if n == 0:
        raise ValueError("empty sample dimension")
    if k < 1 or k > m:
        raise ValueError(f"component count {k} must lie in [1, {m}]")
    rng = np.random.default_rng(opts.seed)
    raw_global = _hermitianize((x.T @ x.conj()) / m)
    # one fit-constant regularization level, scaled by the data power
    floor = opts.reg_eps * raw_global.trace().real / n
    global_cov = floor_eigenvalues(raw_global, max(floor, 1e-10))

    r = _initial_responsibilities(x, k, opts, rng)
    weights, means, covs = _m_step(x, r, opts, zero_mean, global_cov, floor)
    model = GmmModel(weights, [ComplexGaussian(mu, c) for mu, c in zip(means, covs)])

    trace = []
    prev = -np.inf
    for it in range(opts.max_iter):
        logp = log_densities(model, x) + np.log(model.weights)
        lse = logsumexp(logp, axis=1)
        ll = float(lse.sum())
        trace.append(ll)
        if it > 0 and ll - prev <= opts.rel_tol * abs(prev):
            break
        prev = ll
        r = np.exp(logp - lse[:, None])
        weights, means, covs = _m_step(
            x, r, opts, zero_mean, global_cov, floor, sample_ll=lse
        )
        model = GmmModel(
            weights, [ComplexGaussian(mu, c) for mu, c in zip(means, covs)]
        )
    model.loglik_trace = np.asarray(trace)
    return model


def fit_kronecker(data, k_tx, k_rx, opts=None):
    """Two-stage Kronecker mixture: fit transmit-side and receive-side mixtures
    on the rows and columns of the channel matrices, then combine every factor
    pair into a zero-mean component with covariance kron(C_tx, C_rx).
    """
    if k_tx < 1 or k_rx < 1:
        raise ValueError("factor component counts must be positive")
    if len(data) == 0:
        raise ValueError("empty dataset")
    h = data.h
    if data.orientation is Orientation.DL:
        rows_are_tx_vectors = True
    else:
        rows_are_tx_vectors = False
    mm, r, c = h.shape
    if rows_are_tx_vectors:
        x_tx = h.reshape(mm * r, c)
        x_rx = h.transpose(0, 2, 1).reshape(mm * c, r)
        n_tx, n_rx = c, r
    else:
        x_tx = h.transpose(0, 2, 1).reshape(mm * c, r)
        x_rx = h.reshape(mm * r, c)
        n_tx, n_rx = r, c

    opts = opts or FitOptions()
    tx_model = fit_em(x_tx, k_tx, opts, zero_mean=True)
    rx_model = fit_em(x_rx, k_rx, replace(opts, seed=opts.seed + 1), zero_mean=True)

    weights = np.empty(k_tx * k_rx)
    comps = []
    zero = np.zeros(n_tx * n_rx, dtype=np.complex128)
    for i in range(k_tx):
        for j in range(k_rx):
            weights[i * k_rx + j] = tx_model.weights[i] * rx_model.weights[j]
            comps.append(
                ComplexGaussian(
                    zero,
                    np.kron(tx_model.components[i].cov, rx_model.components[j].cov),
                )
            )
    kron = KroneckerStructure(
        k_tx,
        k_rx,
        n_tx,
        n_rx,
        tuple(g.cov for g in tx_model.components),
        tuple(g.cov for g in rx_model.components),
    )
    model = GmmModel(weights, comps, structure="kronecker", kron=kron)
    model.stage_traces = {
        "tx": tx_model.loglik_trace,
        "rx": rx_model.loglik_trace,
    }
    return model


def count_covariance_parameters(model):
    """Number of covariance parameters, counting Hermitian symmetry once."""
    if model.structure == "full":
        n = model.dim
        return model.n_components * n * (n + 1) // 2
    k = model.kron
    return (
        k.k_rx * k.n_rx * (k.n_rx + 1) // 2 + k.k_tx * k.n_tx * (k.n_tx + 1) // 2
    )


_FULL_HEADER = struct.Struct("<4sIBII")
_KRON_HEADER = struct.Struct("<4sIBIIII")


def save_model(model, path):
    path = Path(path)
    with open(path, "wb") as f:
        if model.structure == "full":
            k, n = model.n_components, model.dim
            f.write(_FULL_HEADER.pack(_MAGIC, _VERSION, 0, k, n))
            f.write(model.weights.tobytes())
            means = np.stack([g.mean for g in model.components])
            covs = np.stack([g.cov for g in model.components])
            f.write(means.tobytes())
            f.write(covs.tobytes())
        else:
            ks = model.kron
            f.write(
                _KRON_HEADER.pack(
                    _MAGIC, _VERSION, 1, ks.k_tx, ks.n_tx, ks.k_rx, ks.n_rx
                )
            )
            f.write(model.weights.tobytes())
            f.write(np.stack(ks.tx_covs).tobytes())
            f.write(np.stack(ks.rx_covs).tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    magic, version, tag = struct.unpack_from("<4sIB", raw)
    if magic != _MAGIC:
        raise ValueError(f"not a mixture model file: {path}")
    if version != _VERSION:
        raise ValueError(f"unsupported model version {version}")
    if tag == 0:
        _, _, _, k, n = _FULL_HEADER.unpack_from(raw)
        off = _FULL_HEADER.size
        weights = np.frombuffer(raw, np.float64, k, off)
        off += k * 8
        means = np.frombuffer(raw, np.complex128, k * n, off).reshape(k, n)
        off += k * n * 16
        covs = np.frombuffer(raw, np.complex128, k * n * n, off).reshape(k, n, n)
        comps = [ComplexGaussian(means[i].copy(), covs[i].copy()) for i in range(k)]
        return GmmModel(weights.copy(), comps)
    _, _, _, k_tx, n_tx, k_rx, n_rx = _KRON_HEADER.unpack_from(raw)
    off = _KRON_HEADER.size
    k = k_tx * k_rx
    weights = np.frombuffer(raw, np.float64, k, off)
    off += k * 8
    tx = np.frombuffer(raw, np.complex128, k_tx * n_tx * n_tx, off).reshape(
        k_tx, n_tx, n_tx
    )
    off += tx.size * 16
    rx = np.frombuffer(raw, np.complex128, k_rx * n_rx * n_rx, off).reshape(
        k_rx, n_rx, n_rx
    )
    zero = np.zeros(n_tx * n_rx, dtype=np.complex128)
    comps = [
        ComplexGaussian(zero, np.kron(tx[i], rx[j]))
        for i in range(k_tx)
        for j in range(k_rx)
    ]
    kron = KroneckerStructure(
        k_tx,
        k_rx,
        n_tx,
        n_rx,
        tuple(tx[i].copy() for i in range(k_tx)),
        tuple(rx[j].copy() for j in range(k_rx)),
    )
    return GmmModel(weights.copy(), comps, structure="kronecker", kron=kron)
