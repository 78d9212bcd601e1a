import numpy as np
import pytest

from precodelab import ChannelDataset, ComplexGaussian, GmmModel, Orientation, ScenarioConfig


def make_scenario(**overrides):
    base = dict(
        n_tx_v=2,
        n_tx_h=2,
        n_rx=2,
        f_ul=2.53e9,
        f_dl=2.73e9,
        n_paths=4,
        angle_spread=0.08,
        delay_spread=1e-7,
        n_samples=100,
        seed=1234,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def random_psd(rng, n, jitter=1e-3):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    c = a @ a.conj().T / n
    return 0.5 * (c + c.conj().T) + jitter * np.eye(n)


def random_model(rng, n, k, mean_scale=1.0):
    weights = rng.random(k) + 0.1
    comps = [
        ComplexGaussian(
            mean_scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
            random_psd(rng, n),
        )
        for _ in range(k)
    ]
    return GmmModel(weights, comps)


def sample_from_model(model, m, rng):
    """Draws from the mixture itself, for in-model consistency checks."""
    out = np.empty((m, model.dim), dtype=np.complex128)
    picks = rng.choice(model.n_components, size=m, p=model.weights)
    for i, k in enumerate(picks):
        comp = model.components[k]
        z = (rng.standard_normal(model.dim) + 1j * rng.standard_normal(model.dim)) / np.sqrt(2)
        out[i] = comp.mean + comp.chol @ z
    return out


def dataset_from_array(h, orientation=Orientation.DL):
    return ChannelDataset(h, np.arange(h.shape[0]), orientation)


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)
