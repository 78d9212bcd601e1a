"""Pilot observation models and channel estimators.

Observations are y = A vec(H) + n with A = P^T kron I_rx and circularly
symmetric noise. Estimators: mixture conditional mean (a responsibility
weighted bank of per-component LMMSE filters), plain sample-covariance
LMMSE, and genie-assisted orthogonal matching pursuit on an oversampled
DFT dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import dft, solve_triangular
from scipy.special import logsumexp

from .gmm import _hermitianize

_LOG_PI = float(np.log(np.pi))


def vec(h):
    """Column-major vectorization."""
    return np.asarray(h).reshape(-1, order="F")


def unvec(v, n_rx, n_tx):
    return np.asarray(v).reshape((n_rx, n_tx), order="F")


def vec_batch(h):
    m, r, c = h.shape
    return h.transpose(0, 2, 1).reshape(m, r * c)


def unvec_batch(v, n_rx, n_tx):
    return v.reshape(-1, n_tx, n_rx).transpose(0, 2, 1)


@dataclass(frozen=True)
class PilotMatrix:
    P: np.ndarray
    rho: float


def build_pilot_matrix(n_tx_h, n_tx_v, n_p, rho):
    """Pilot columns from the 2D-DFT matrix kron(F_h, F_v), rescaled to norm^2 = rho.

    For n_p < N_tx the columns are picked with a fixed stride floor(N_tx/n_p),
    spreading the pilots evenly over the DFT beams.
    """
    n_tx = n_tx_h * n_tx_v
    if not 1 <= n_p <= n_tx:
        raise ValueError(f"pilot count {n_p} out of range [1, {n_tx}]")
    if rho <= 0:
        raise ValueError("power budget must be positive")
    full = np.kron(dft(n_tx_h), dft(n_tx_v))
    cols = np.arange(n_p) * (n_tx // n_p)
    p = full[:, cols] * np.sqrt(rho / n_tx)
    return PilotMatrix(np.ascontiguousarray(p), float(rho))


@dataclass(frozen=True)
class _ComponentFilter:
    proj_mean: np.ndarray
    chol_s: np.ndarray
    log_det_s: float
    gain: np.ndarray  # W_k, maps observations back to channel space
    bias: np.ndarray  # b_k = mu_k - W_k A mu_k


class ObservationModel:
    """Stacked pilot observation operator with optional per-component filters."""

    def __init__(self, pilot, n_rx, noise_var):
        if n_rx < 1:
            raise ValueError("receive antenna count must be positive")
        if noise_var < 0:
            raise ValueError("noise variance must be nonnegative")
        self.pilot = pilot
        self.n_rx = int(n_rx)
        self.noise_var = float(noise_var)
        self.A = np.kron(pilot.P.T, np.eye(n_rx))
        self.filters = None
        self._bound_model = None

    @property
    def n_obs(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.A.shape[1]

    def bind(self, model):
        """Precompute projected means, innovation Cholesky factors and LMMSE
        gains for every component of `model`."""
        if model.dim != self.dim:
            raise ValueError("model dimension does not match the observation operator")
        eye = self.noise_var * np.eye(self.n_obs)
        filters = []
        a_h = self.A.conj().T
        for comp in model.components:
            b = self.A @ comp.cov
            s = _hermitianize(b @ a_h + eye)
            chol_s = np.linalg.cholesky(s)
            log_det_s = float(2.0 * np.sum(np.log(np.diag(chol_s).real)))
            gain = solve_triangular(
                chol_s.conj().T,
                solve_triangular(chol_s, b, lower=True),
                lower=False,
            ).conj().T
            proj_mean = self.A @ comp.mean
            bias = comp.mean - gain @ proj_mean
            filters.append(_ComponentFilter(proj_mean, chol_s, log_det_s, gain, bias))
        self.filters = filters
        self._bound_model = model
        return self

    def _require_bound(self, model):
        if self.filters is None or self._bound_model is not model:
            raise ValueError("observation model is not bound to this mixture model")


def observe(om, channel, seed):
    """y = A vec(H) + n with seeded circularly symmetric noise of variance noise_var."""
    h = getattr(channel, "H", channel)
    if h.shape != (om.n_rx, om.pilot.P.shape[0]):
        raise ValueError("channel dimensions do not match the observation model")
    y = vec(h @ om.pilot.P)
    rng = np.random.default_rng(seed)
    return y + draw_noise(om, rng, 1)[0]


def draw_noise(om, rng, count):
    scale = np.sqrt(om.noise_var / 2.0)
    return scale * (
        rng.standard_normal((count, om.n_obs)) + 1j * rng.standard_normal((count, om.n_obs))
    )


def log_responsibilities_from_observation(model, om, y):
    om._require_bound(model)
    y = np.asarray(y, dtype=np.complex128)
    flat = np.atleast_2d(y.reshape(-1, y.shape[-1]))
    logp = np.empty((flat.shape[0], model.n_components))
    for k, f in enumerate(om.filters):
        z = solve_triangular(f.chol_s, (flat - f.proj_mean).T, lower=True)
        quad = np.sum(z.real**2 + z.imag**2, axis=0)
        logp[:, k] = -(quad + om.n_obs * _LOG_PI + f.log_det_s)
    logp += np.log(model.weights)
    out = logp - logsumexp(logp, axis=1, keepdims=True)
    return out.reshape(y.shape[:-1] + (model.n_components,))


def responsibilities_from_observation(model, om, y):
    """Posterior component probabilities p(k | y), evaluated in the log domain."""
    r = np.exp(log_responsibilities_from_observation(model, om, y))
    return r / r.sum(axis=-1, keepdims=True)


def estimate_gmm(model, om, y):
    """Responsibility-weighted sum of per-component LMMSE estimates."""
    om._require_bound(model)
    y = np.asarray(y, dtype=np.complex128)
    squeeze = y.ndim == 1
    flat = np.atleast_2d(y.reshape(-1, y.shape[-1]))
    resp = responsibilities_from_observation(model, om, flat)
    est = np.zeros((flat.shape[0], om.dim), dtype=np.complex128)
    for k, f in enumerate(om.filters):
        est += resp[:, k][:, None] * (flat @ f.gain.T + f.bias)
    if squeeze:
        return est[0]
    return est.reshape(y.shape[:-1] + (om.dim,))


def sample_covariance(data):
    """Second-moment matrix (1/M) sum h h^H of the vectorized samples."""
    x = data.vectors if hasattr(data, "vectors") else np.asarray(data, np.complex128)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a nonempty (M, N) sample array")
    return _hermitianize((x.T @ x.conj()) / x.shape[0])


def scov_filter(c_s, om):
    """LMMSE gain C_s A^H (A C_s A^H + noise_var I)^-1 for reuse across samples."""
    b = om.A @ c_s
    s = _hermitianize(b @ om.A.conj().T + om.noise_var * np.eye(om.n_obs))
    chol_s = np.linalg.cholesky(s)  # LinAlgError: singular at zero noise
    return solve_triangular(
        chol_s.conj().T, solve_triangular(chol_s, b, lower=True), lower=False
    ).conj().T


def estimate_scov(c_s, om, y):
    """Sample-covariance LMMSE estimate of the vectorized channel."""
    w = scov_filter(c_s, om)
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        return w @ y
    return y @ w.T


@dataclass(frozen=True)
class Dictionary:
    D: np.ndarray
    oversampling: tuple


def _oversampled_dft(n, o):
    m = np.arange(n)[:, None]
    k = np.arange(n * o)[None, :]
    return np.exp(-2j * np.pi * m * k / (n * o)) / np.sqrt(n)


def build_dictionary(n_rx, n_tx_h, n_tx_v, oversampling=(2, 2, 2)):
    """Sparse-representation dictionary from oversampled DFT factors.

    Factor order follows the column-major channel vectorization (transmit
    factors first), so single-path channels align with single atoms. Columns
    have unit norm.
    """
    o_rx, o_h, o_v = oversampling
    if min(o_rx, o_h, o_v) < 1:
        raise ValueError("oversampling factors must be at least 1")
    d = np.kron(
        np.kron(_oversampled_dft(n_tx_h, o_h), _oversampled_dft(n_tx_v, o_v)),
        _oversampled_dft(n_rx, o_rx),
    )
    return Dictionary(np.ascontiguousarray(d), (o_rx, o_h, o_v))


class OmpGenieEstimator:
    """Orthogonal matching pursuit on the effective sensing matrix A D, with the
    sparsity order chosen by comparing every intermediate estimate against the
    true channel (an upper bound on what any order-selection rule can do)."""

    def __init__(self, dictionary, om, s_max):
        if s_max < 1:
            raise ValueError("maximum sparsity order must be at least 1")
        self.dictionary = dictionary
        self.phi = om.A @ dictionary.D
        norms = np.linalg.norm(self.phi, axis=0)
        self.norms = np.where(norms > 0, norms, 1.0)
        self.s_cap = int(min(s_max, np.linalg.matrix_rank(self.phi)))

    def estimate(self, y, true_h, return_residuals=False):
        n_dim = self.dictionary.D.shape[0]
        best = np.zeros(n_dim, dtype=np.complex128)
        best_err = float(np.linalg.norm(true_h) ** 2)
        support = []
        residual = y.astype(np.complex128)
        y_norm = float(np.linalg.norm(y))
        residual_norms = []
        for _ in range(self.s_cap):
            corr = np.abs(self.phi.conj().T @ residual) / self.norms
            if support:
                corr[support] = -1.0
            j = int(np.argmax(corr))
            if corr[j] <= 1e-14:
                break
            support.append(j)
            sub = self.phi[:, support]
            t, *_ = np.linalg.lstsq(sub, y, rcond=None)
            residual = y - sub @ t
            residual_norms.append(float(np.linalg.norm(residual)))
            h_s = self.dictionary.D[:, support] @ t
            err = float(np.linalg.norm(h_s - true_h) ** 2)
            if err < best_err:
                best, best_err = h_s, err
            if residual_norms[-1] <= 1e-12 * max(y_norm, 1.0):
                break
        if return_residuals:
            return best, residual_norms
        return best


def estimate_omp_genie(dictionary, om, y, true_h, s_max):
    """One-shot genie-assisted OMP estimate; see OmpGenieEstimator for reuse."""
    return OmpGenieEstimator(dictionary, om, s_max).estimate(y, true_h)
