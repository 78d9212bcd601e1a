"""Online feedback index selection, baseline transmit strategies, and the
normalized spectral efficiency evaluation producing cCDF tables.

One noise realization is drawn per evaluation sample and shared by every
strategy in the cell, so strategy comparisons are paired.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import estimation
from .codebook import (
    TransmitCovariance,
    rate_matrix,
    rates_single_entry,
    spectral_efficiency,
    waterfill_optimal,
)
from .estimation import (
    OmpGenieEstimator,
    estimate_gmm,
    log_responsibilities_from_observation,
    scov_filter,
)
from .gmm import log_responsibilities_from_channel

log = logging.getLogger(__name__)


class FeedbackMethod(Enum):
    FROM_OBSERVATION = "from_observation"
    FROM_CHANNEL = "from_channel"
    EXHAUSTIVE_RATE = "exhaustive_rate"
    EXHAUSTIVE_RATE_ESTIMATED = "exhaustive_rate_estimated_csi"


@dataclass(frozen=True)
class FeedbackDecision:
    index: int
    method: FeedbackMethod


def select_from_observation(model, om, y):
    """Index of the component with the highest posterior given y; ties to the
    lowest index."""
    logr = log_responsibilities_from_observation(model, om, y)
    return FeedbackDecision(int(np.argmax(logr)), FeedbackMethod.FROM_OBSERVATION)


def select_from_channel(model, h):
    logr = log_responsibilities_from_channel(model, h)
    return FeedbackDecision(int(np.argmax(logr)), FeedbackMethod.FROM_CHANNEL)


def select_exhaustive(cb, h, noise_var):
    """Rate-maximizing codebook index for a known channel; ties to the lowest
    index."""
    if len(cb) == 0:
        raise ValueError("empty codebook")
    rates = rate_matrix(h[None], cb.entries, noise_var)[0]
    return FeedbackDecision(int(np.argmax(rates)), FeedbackMethod.EXHAUSTIVE_RATE)


def baseline_uniform(n_tx, rho):
    """Isotropic covariance (rho / N_tx) I; deliberately full rank."""
    return TransmitCovariance((rho / n_tx) * np.eye(n_tx, dtype=np.complex128))


def baseline_uniform_eigenspace(h, rho, n_rx):
    """Equal power rho / N_rx on the N_rx dominant right singular vectors."""
    if not np.any(np.abs(h) > 0):
        raise ValueError("zero channel has no eigenspace")
    _, _, vh = np.linalg.svd(h, full_matrices=True)
    v = vh[:n_rx].conj().T
    q = (rho / n_rx) * (v @ v.conj().T)
    return TransmitCovariance(0.5 * (q + q.conj().T))


@dataclass(frozen=True)
class NseRecord:
    link_id: int
    strategy: str
    nse: float
    rate: float
    optimal_rate: float


@dataclass(frozen=True)
class Strategy:
    label: str
    kind: str
    codebook: object = None
    estimator: str = None


_BASELINES = {
    "optimal": "optimal",
    "uni_pow_cov": "uniform_cov",
    "uni_pow_eigsp": "uniform_eigsp",
}
_SOURCES = ("obs", "csi", "est_gmm", "est_scov", "est_omp")


def strategy_tokens():
    toks = list(_BASELINES)
    for family in ("gmm", "lloyd"):
        for update in ("pgd", "lau"):
            sources = ("obs", "csi") if family == "gmm" else ("csi", "est_gmm", "est_scov", "est_omp")
            toks += [f"{family}_{update}_{src}" for src in sources]
    return toks


def make_strategy(token, codebooks=None):
    """Resolve a strategy token like 'gmm_pgd_obs' or 'lloyd_pgd_est_scov'.

    `codebooks` maps (family, update) to a Codebook for the tokens that need
    one."""
    if token in _BASELINES:
        return Strategy(token, _BASELINES[token])
    parts = token.split("_", 2)
    if len(parts) == 3:
        family, update, source = parts
        if family in ("gmm", "lloyd") and update in ("pgd", "lau") and source in _SOURCES:
            if family == "gmm" and source.startswith("est"):
                raise ValueError(f"estimated-CSI selection is exhaustive-only: {token}")
            if family == "lloyd" and source == "obs":
                raise ValueError(f"observation-posterior selection needs a mixture codebook: {token}")
            cb = (codebooks or {}).get((family, update))
            if cb is None:
                raise ValueError(f"no ({family}, {update}) codebook available for {token}")
            kind = {
                "obs": "mixture_obs",
                "csi": "mixture_csi" if family == "gmm" else "exhaustive_csi",
            }.get(source, "exhaustive_est")
            est = source[4:] if source.startswith("est_") else None
            return Strategy(token, kind, codebook=cb, estimator=est)
    raise ValueError(f"unknown strategy token {token!r}")


def _rates_of_selected(hs, entries, idx, noise_var):
    rates = np.empty(hs.shape[0])
    for k in np.unique(idx):
        mask = idx == k
        rates[mask] = rates_single_entry(hs[mask], entries[k].Q, noise_var)
    return rates


def evaluate_strategies(
    dl_eval,
    cb,
    model,
    om,
    strategies,
    seed,
    sample_cov=None,
    dictionary=None,
    omp_s_max=None,
):
    """Per-sample decision -> transmit covariance -> rate -> nSE for every
    strategy. Rates (and the water-filling normalizer) use the design noise
    variance of `cb`; observations use om.noise_var, which may differ.

    Returns records ordered by link id, then by the given strategy order."""
    hs = dl_eval.h
    ids = dl_eval.link_ids
    m, n_rx_dim, n_tx = hs.shape
    rate_nv = cb.noise_var
    rho = cb.rho

    opt_rates = np.array(
        [spectral_efficiency(h, waterfill_optimal(h, rho, rate_nv).Q, rate_nv) for h in hs]
    )
    valid = opt_rates > 0
    dropped = int(m - valid.sum())
    if dropped:
        log.warning("excluded %d samples with zero optimal rate from evaluation", dropped)
        hs, ids, opt_rates = hs[valid], ids[valid], opt_rates[valid]
        m = hs.shape[0]

    needs_y = any(s.kind in ("mixture_obs", "exhaustive_est") for s in strategies)
    y = None
    if needs_y:
        rng = np.random.default_rng(seed)
        hp = hs @ om.pilot.P
        y = hp.transpose(0, 2, 1).reshape(m, -1) + estimation.draw_noise(om, rng, m)

    vectors = hs.transpose(0, 2, 1).reshape(m, -1)
    rate_columns = {}
    for strat in strategies:
        entries = strat.codebook.entries if strat.codebook is not None else cb.entries
        if strat.kind == "optimal":
            rates = opt_rates.copy()
        elif strat.kind == "uniform_cov":
            rates = rates_single_entry(hs, baseline_uniform(n_tx, rho).Q, rate_nv)
        elif strat.kind == "uniform_eigsp":
            qs = np.stack(
                [baseline_uniform_eigenspace(h, rho, n_rx_dim).Q for h in hs]
            )
            x = np.eye(n_rx_dim) + (hs @ qs @ hs.conj().transpose(0, 2, 1)) / rate_nv
            rates = np.maximum(np.linalg.slogdet(x)[1] / np.log(2.0), 0.0)
        elif strat.kind == "mixture_obs":
            idx = np.argmax(log_responsibilities_from_observation(model, om, y), axis=1)
            rates = _rates_of_selected(hs, entries, idx, rate_nv)
        elif strat.kind == "mixture_csi":
            idx = np.argmax(log_responsibilities_from_channel(model, vectors), axis=1)
            rates = _rates_of_selected(hs, entries, idx, rate_nv)
        elif strat.kind == "exhaustive_csi":
            idx = np.argmax(rate_matrix(hs, entries, rate_nv), axis=1)
            rates = _rates_of_selected(hs, entries, idx, rate_nv)
        elif strat.kind == "exhaustive_est":
            est = _estimate_batch(strat.estimator, model, om, y, vectors, sample_cov, dictionary, omp_s_max)
            h_est = est.reshape(m, n_tx, n_rx_dim).transpose(0, 2, 1)
            idx = np.argmax(rate_matrix(h_est, entries, rate_nv), axis=1)
            rates = _rates_of_selected(hs, entries, idx, rate_nv)
        else:
            raise ValueError(f"unknown strategy kind {strat.kind!r}")
        rate_columns[strat.label] = rates

    records = []
    for i in range(m):
        for strat in strategies:
            rate = float(rate_columns[strat.label][i])
            records.append(
                NseRecord(
                    int(ids[i]), strat.label, rate / float(opt_rates[i]), rate, float(opt_rates[i])
                )
            )
    return records


def _estimate_batch(kind, model, om, y, true_vectors, sample_cov, dictionary, omp_s_max):
    if kind == "gmm":
        return estimate_gmm(model, om, y)
    if kind == "scov":
        if sample_cov is None:
            raise ValueError("sample covariance estimator requested without a matrix")
        return y @ scov_filter(sample_cov, om).T
    if kind == "omp":
        if dictionary is None:
            raise ValueError("sparse estimator requested without a dictionary")
        s_max = omp_s_max or om.n_obs
        solver = OmpGenieEstimator(dictionary, om, s_max)
        return np.stack(
            [solver.estimate(y[i], true_vectors[i]) for i in range(y.shape[0])]
        )
    raise ValueError(f"unknown estimator {kind!r}")


@dataclass(frozen=True)
class CcdfTable:
    grid: np.ndarray
    values: dict  # strategy label -> P(nSE > s) on the grid


def ccdf(records, grid):
    """Empirical complementary CDF of nSE per strategy over the given grid."""
    if not records:
        raise ValueError("no records to summarize")
    grid = np.asarray(grid, dtype=float)
    labels = []
    per_label = {}
    for rec in records:
        if rec.strategy not in per_label:
            labels.append(rec.strategy)
            per_label[rec.strategy] = []
        per_label[rec.strategy].append(rec.nse)
    values = {}
    for label in labels:
        nse = np.asarray(per_label[label])
        values[label] = (nse[:, None] > grid[None, :]).mean(axis=0)
    return CcdfTable(grid, values)


def exceed_fraction(records, label, threshold):
    nse = np.asarray([r.nse for r in records if r.strategy == label])
    if nse.size == 0:
        raise ValueError(f"no records for strategy {label!r}")
    return float(np.mean(nse > threshold))


def mean_nse(records, label):
    nse = np.asarray([r.nse for r in records if r.strategy == label])
    if nse.size == 0:
        raise ValueError(f"no records for strategy {label!r}")
    return float(nse.mean())


def write_ccdf_table(table, path):
    """Text table: header row, threshold column s, one column per strategy,
    12 significant digits."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["s"] + list(table.values))
        for i, s in enumerate(table.grid):
            writer.writerow(
                [f"{s:.12g}"] + [f"{table.values[lab][i]:.12g}" for lab in table.values]
            )


def read_ccdf_table(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    values = {lab: data[:, j + 1] for j, lab in enumerate(header[1:])}
    return CcdfTable(data[:, 0], values)


def write_records(records, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["link_id", "strategy", "nse", "rate", "optimal_rate"])
        for r in records:
            writer.writerow(
                [r.link_id, r.strategy, f"{r.nse:.12g}", f"{r.rate:.12g}", f"{r.optimal_rate:.12g}"]
            )


def read_records(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return [
        NseRecord(int(r[0]), r[1], float(r[2]), float(r[3]), float(r[4]))
        for r in rows[1:]
    ]
