"""Parametric multipath scenario with paired uplink/downlink channel datasets.

Each link is a sum of plane-wave paths between a rectangular transmit array
and a linear receive array. Both directions of a link share the path angles
and delays; the per-path complex gains and the carrier-dependent delay
phases are drawn independently, so instantaneous reciprocity is broken
while the spatial structure is preserved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

_MAGIC = b"CHDS"
_VERSION = 1

# link geometry priors: mean azimuth over a 120 degree sector, mild elevation
_SECTOR_HALF = np.pi / 3
_ELEVATION_HALF = np.pi / 12


class Orientation(Enum):
    UL = 0
    DL = 1


def steering_ula(angle, n):
    """Response of an n-element half-wavelength ULA; entry m is exp(j*pi*m*sin(angle))."""
    if n < 1:
        raise ValueError("antenna count must be positive")
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def steering_ura(azimuth, elevation, n_h, n_v):
    """URA response: Kronecker product of the horizontal and vertical ULA factors."""
    if n_h < 1 or n_v < 1:
        raise ValueError("antenna counts must be positive")
    horizontal = np.exp(
        1j * np.pi * np.arange(n_h) * np.sin(azimuth) * np.cos(elevation)
    )
    return np.kron(horizontal, steering_ula(elevation, n_v))


@dataclass(frozen=True)
class ScenarioConfig:
    n_tx_v: int
    n_tx_h: int
    n_rx: int
    f_ul: float
    f_dl: float
    n_paths: int
    angle_spread: float
    delay_spread: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if min(self.n_tx_v, self.n_tx_h, self.n_rx) < 1:
            raise ValueError("antenna counts must be positive")
        if self.n_paths < 1:
            raise ValueError("at least one propagation path is required")
        if self.f_ul == self.f_dl:
            raise ValueError("duplex operation requires distinct carrier frequencies")
        if self.n_samples < 1:
            raise ValueError("dataset size must be positive")
        if self.angle_spread < 0 or self.delay_spread <= 0:
            raise ValueError("spreads must be positive")

    @property
    def n_tx(self):
        return self.n_tx_v * self.n_tx_h


@dataclass(frozen=True)
class ChannelSample:
    H: np.ndarray
    link_id: int


class ChannelDataset:
    """Stack of per-link channel matrices sharing one orientation.

    Datasets are immutable after creation; `h` has shape (count, rows, cols)
    with rows x cols = N_tx x N_rx for UL and N_rx x N_tx for DL.
    """

    def __init__(self, h, link_ids, orientation, normalized=False, scale=1.0):
        h = np.ascontiguousarray(h, dtype=np.complex128)
        if h.ndim != 3:
            raise ValueError("expected a (count, rows, cols) channel stack")
        link_ids = np.ascontiguousarray(link_ids, dtype=np.int64)
        if link_ids.shape != (h.shape[0],):
            raise ValueError("one link id per sample required")
        self.h = h
        self.link_ids = link_ids
        self.orientation = orientation
        self.normalized = bool(normalized)
        self.scale = float(scale)

    def __len__(self):
        return self.h.shape[0]

    def __getitem__(self, i):
        return ChannelSample(self.h[i], int(self.link_ids[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def shape(self):
        return self.h.shape[1:]

    @property
    def vectors(self):
        """Column-major vectorization of every sample, shape (count, rows*cols)."""
        m, r, c = self.h.shape
        return self.h.transpose(0, 2, 1).reshape(m, r * c)

    def mean_vector_energy(self):
        return float(np.mean(np.sum(np.abs(self.h) ** 2, axis=(1, 2))))


def _link_rngs(config, link_id):
    """Three derived generators per link: shared geometry, UL gains, DL gains."""
    streams = [
        np.random.SeedSequence(entropy=config.seed, spawn_key=(link_id, tap))
        for tap in range(3)
    ]
    return tuple(np.random.default_rng(s) for s in streams)


@dataclass(frozen=True)
class LinkGeometry:
    azimuth: np.ndarray
    elevation: np.ndarray
    aoa: np.ndarray
    delay: np.ndarray
    power: np.ndarray


def _draw_geometry(rng, config):
    ell = config.n_paths
    # transmit side: paths concentrate around a per-link mean direction
    mean_az = rng.uniform(-_SECTOR_HALF, _SECTOR_HALF)
    mean_el = rng.uniform(-_ELEVATION_HALF, _ELEVATION_HALF)
    azimuth = mean_az + rng.laplace(0.0, config.angle_spread, ell)
    elevation = mean_el + rng.laplace(0.0, config.angle_spread, ell)
    # receive side: rich local scattering, one independent arrival per path
    aoa = rng.uniform(-np.pi / 2, np.pi / 2, ell)
    delay = rng.exponential(config.delay_spread, ell)
    power = np.exp(-delay / config.delay_spread)
    power = power / power.sum()
    return LinkGeometry(azimuth, elevation, aoa, delay, power)


def link_geometry(config, link_id):
    """Angle/delay draws shared by the UL and DL realizations of one link."""
    geom_rng, _, _ = _link_rngs(config, link_id)
    return _draw_geometry(geom_rng, config)


def _draw_gains(rng, power):
    z = rng.standard_normal(power.size) + 1j * rng.standard_normal(power.size)
    return np.sqrt(power / 2.0) * z


def _link_channel(geom, gains, f_c, config, downlink):
    a_tx = np.stack(
        [
            steering_ura(az, el, config.n_tx_h, config.n_tx_v)
            for az, el in zip(geom.azimuth, geom.elevation)
        ]
    )
    a_rx = np.stack([steering_ula(th, config.n_rx) for th in geom.aoa])
    coeff = gains * np.exp(-2j * np.pi * f_c * geom.delay)
    if downlink:
        return np.einsum("l,li,lj->ij", coeff, a_rx, a_tx.conj())
    return np.einsum("l,li,lj->ij", coeff, a_tx, a_rx.conj())


def generate_paired_dataset(config):
    """Generate UL and DL datasets of `config.n_samples` links with shared geometry.

    UL samples are N_tx x N_rx, DL samples are N_rx x N_tx. Both datasets are
    normalized so the empirical mean of ||vec(H)||^2 equals N_tx * N_rx.
    """
    m = config.n_samples
    ul = np.empty((m, config.n_tx, config.n_rx), dtype=np.complex128)
    dl = np.empty((m, config.n_rx, config.n_tx), dtype=np.complex128)
    for i in range(m):
        geom_rng, ul_rng, dl_rng = _link_rngs(config, i)
        geom = _draw_geometry(geom_rng, config)
        ul[i] = _link_channel(
            geom, _draw_gains(ul_rng, geom.power), config.f_ul, config, downlink=False
        )
        dl[i] = _link_channel(
            geom, _draw_gains(dl_rng, geom.power), config.f_dl, config, downlink=True
        )
    ids = np.arange(m, dtype=np.int64)
    target = float(config.n_tx * config.n_rx)

    def _normalized(h, orientation):
        scale = np.sqrt(target / np.mean(np.sum(np.abs(h) ** 2, axis=(1, 2))))
        return ChannelDataset(h * scale, ids, orientation, normalized=True, scale=scale)

    return _normalized(ul, Orientation.UL), _normalized(dl, Orientation.DL)


def emulate_downlink(ds):
    """Plain transpose of every sample (no conjugation) with the orientation flipped."""
    flipped = Orientation.DL if ds.orientation is Orientation.UL else Orientation.UL
    return ChannelDataset(
        ds.h.transpose(0, 2, 1),
        ds.link_ids,
        flipped,
        normalized=ds.normalized,
        scale=ds.scale,
    )


def split_dataset(ds, n_train):
    """Disjoint order-preserving split into (train, eval) with |train| = n_train."""
    if n_train < 0 or n_train > len(ds):
        raise ValueError(f"cannot take {n_train} training samples from {len(ds)}")

    def _part(sl):
        return ChannelDataset(
            ds.h[sl], ds.link_ids[sl], ds.orientation, ds.normalized, ds.scale
        )

    return _part(slice(0, n_train)), _part(slice(n_train, len(ds)))


_HEADER = struct.Struct("<4sIIIQBBHIdd")  # magic, version, rows, cols, count,
# orientation, normalized, pad16, pad32, scale, reserved


def save_dataset(ds, path):
    """Binary dataset file: fixed header, then row-major interleaved re/im float64."""
    path = Path(path)
    m, rows, cols = ds.h.shape
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        rows,
        cols,
        m,
        ds.orientation.value,
        int(ds.normalized),
        0,
        0,
        ds.scale,
        0.0,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(ds.h.tobytes(order="C"))
        f.write(ds.link_ids.tobytes(order="C"))


def load_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"truncated dataset file: {path}")
    magic, version, rows, cols, m, orient, normalized, _, _, scale, _ = _HEADER.unpack_from(
        raw
    )
    if magic != _MAGIC:
        raise ValueError(f"not a channel dataset file: {path}")
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    off = _HEADER.size
    n_complex = m * rows * cols
    h = np.frombuffer(raw, dtype=np.complex128, count=n_complex, offset=off)
    off += n_complex * 16
    ids = np.frombuffer(raw, dtype=np.int64, count=m, offset=off)
    return ChannelDataset(
        h.reshape(m, rows, cols).copy(),
        ids.copy(),
        Orientation(orient),
        normalized=bool(normalized),
        scale=scale,
    )
