import numpy as np
import pytest

from precodelab import (
    FitOptions,
    GmmModel,
    ObservationModel,
    baseline_uniform,
    baseline_uniform_eigenspace,
    build_pilot_matrix,
    ccdf,
    evaluate_strategies,
    fit_em,
    gmm_codebook,
    select_exhaustive,
    select_from_channel,
    select_from_observation,
    spectral_efficiency,
    waterfill_optimal,
)
from precodelab.codebook import Codebook, TransmitCovariance, lloyd_fit, rate_matrix
from precodelab.feedback import (
    FeedbackMethod,
    NseRecord,
    Strategy,
    exceed_fraction,
    make_strategy,
    mean_nse,
    read_ccdf_table,
    read_records,
    strategy_tokens,
    write_ccdf_table,
    write_records,
)
from precodelab.scenario import ChannelDataset, Orientation

from conftest import dataset_from_array, random_model, sample_from_model


def _random_channels(rng, m, r, t):
    return (rng.standard_normal((m, r, t)) + 1j * rng.standard_normal((m, r, t))) / np.sqrt(2)


def _random_codebook(rng, k, n_tx, rho=1.0, noise_var=1.0, n_rx=2):
    from precodelab import project_feasible

    entries = [
        project_feasible(
            rng.standard_normal((n_tx, n_tx)) + 1j * rng.standard_normal((n_tx, n_tx)),
            rho,
            n_rx,
        )
        for _ in range(k)
    ]
    bits = k.bit_length() - 1
    return Codebook(entries, bits, rho, noise_var)


class TestSelection:
    def test_single_component_selects_zero(self, rng):
        model = random_model(rng, 4, 1)
        pilot = build_pilot_matrix(4, 1, 4, 1.0)
        om = ObservationModel(pilot, 1, 1.0).bind(model)
        y = rng.standard_normal(4) + 0j
        d = select_from_observation(model, om, y)
        assert d.index == 0 and d.method is FeedbackMethod.FROM_OBSERVATION
        d = select_from_channel(model, y)
        assert d.index == 0 and d.method is FeedbackMethod.FROM_CHANNEL

    def test_weight_scaling_leaves_index_unchanged(self, rng):
        base = random_model(rng, 3, 4)
        scaled = GmmModel(base.weights * 7.3, base.components)
        pilot = build_pilot_matrix(3, 1, 2, 1.0)
        om_a = ObservationModel(pilot, 1, 0.5).bind(base)
        om_b = ObservationModel(pilot, 1, 0.5).bind(scaled)
        for _ in range(20):
            h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            y = om_a.A @ h
            assert (
                select_from_observation(base, om_a, y).index
                == select_from_observation(scaled, om_b, y).index
            )
            assert (
                select_from_channel(base, h).index
                == select_from_channel(scaled, h).index
            )

    def test_channel_at_separated_mean_selects_that_component(self, rng):
        from precodelab import ComplexGaussian

        means = 20.0 * np.eye(3, dtype=complex)
        comps = [ComplexGaussian(means[j], np.eye(3)) for j in range(3)]
        model = GmmModel(np.full(3, 1 / 3), comps)
        for j in range(3):
            assert select_from_channel(model, means[j]).index == j

    def test_matches_posterior_argmax(self, rng):
        from precodelab import responsibilities_from_observation

        model = random_model(rng, 4, 5)
        pilot = build_pilot_matrix(2, 2, 3, 1.0)
        om = ObservationModel(pilot, 1, 0.7).bind(model)
        y = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        r = responsibilities_from_observation(model, om, y)
        assert select_from_observation(model, om, y).index == int(np.argmax(r))

    def test_consistency_limit_full_pilots_low_noise(self, rng):
        model = random_model(rng, 4, 3)
        pilot = build_pilot_matrix(4, 1, 4, 1.0)
        om = ObservationModel(pilot, 1, 1e-12).bind(model)
        h = sample_from_model(model, 300, rng)
        y = h @ om.A.T
        agree = sum(
            select_from_observation(model, om, y[i]).index
            == select_from_channel(model, h[i]).index
            for i in range(300)
        )
        assert agree >= 0.99 * 300


class TestSelectExhaustive:
    def test_codebook_containing_optimum_selects_it(self, rng):
        h = _random_channels(rng, 1, 2, 3)[0]
        wf = waterfill_optimal(h, 1.0, 1.0)
        cb = _random_codebook(rng, 4, 3)
        cb.entries[2] = wf
        d = select_exhaustive(cb, h, 1.0)
        rates = rate_matrix(h[None], cb.entries, 1.0)[0]
        assert rates[d.index] >= rates.max() - 1e-12
        assert d.method is FeedbackMethod.EXHAUSTIVE_RATE

    def test_identical_entries_tie_to_zero(self, rng):
        h = _random_channels(rng, 1, 2, 3)[0]
        entry = TransmitCovariance(np.eye(3, dtype=complex) / 3)
        cb = Codebook([entry, entry], 1, 1.0, 1.0)
        assert select_exhaustive(cb, h, 1.0).index == 0

    def test_matches_linear_scan(self, rng):
        h = _random_channels(rng, 1, 2, 4)[0]
        cb = _random_codebook(rng, 8, 4)
        d = select_exhaustive(cb, h, 1.0)
        scan = [spectral_efficiency(h, e.Q, 1.0) for e in cb.entries]
        assert d.index == int(np.argmax(scan))

    def test_empty_codebook_rejected(self, rng):
        h = _random_channels(rng, 1, 2, 2)[0]
        cb = Codebook([TransmitCovariance(np.eye(2, dtype=complex))], 0, 1.0, 1.0)
        cb.entries = []
        with pytest.raises(ValueError):
            select_exhaustive(cb, h, 1.0)


class TestBaselines:
    def test_uniform_matches_published_form(self):
        q = baseline_uniform(4, 1.0).Q
        np.testing.assert_allclose(q, 0.25 * np.eye(4), atol=1e-15)
        assert np.trace(q).real == pytest.approx(1.0)
        # deliberately full rank: all eigenvalues positive
        assert np.all(np.linalg.eigvalsh(q) > 0)

    def test_eigenspace_scalar_channel(self):
        q = baseline_uniform_eigenspace(np.array([[0.7 + 0.2j]]), 1.0, 1).Q
        assert q[0, 0] == pytest.approx(1.0)

    def test_eigenspace_trace_and_rank(self, rng):
        h = _random_channels(rng, 1, 2, 5)[0]
        q = baseline_uniform_eigenspace(h, 1.3, 2).Q
        assert np.trace(q).real == pytest.approx(1.3, rel=1e-10)
        w = np.linalg.eigvalsh(q)
        assert np.sum(w > 1e-10) <= 2

    def test_zero_channel_rejected(self):
        with pytest.raises(ValueError):
            baseline_uniform_eigenspace(np.zeros((2, 3), dtype=complex), 1.0, 2)


def _eval_setup(rng, m=60, n_tx_h=2, n_tx_v=2, n_rx=2, k=4, noise_var=1.0, n_p=2):
    n_tx = n_tx_h * n_tx_v
    h = _random_channels(rng, m + 100, n_rx, n_tx)
    train = dataset_from_array(h[m:])
    eval_ds = dataset_from_array(h[:m])
    model = fit_em(train.vectors, k, FitOptions(seed=0, max_iter=20))
    cb = gmm_codebook(model, train, 1.0, noise_var, n_rx, "lau", None)
    cb_lloyd = lloyd_fit(train, k, 1.0, noise_var, n_rx, "lau", None, seed=1, max_outer=6)
    pilot = build_pilot_matrix(n_tx_h, n_tx_v, n_p, 1.0)
    om = ObservationModel(pilot, n_rx, noise_var).bind(model)
    from precodelab import sample_covariance

    return eval_ds, model, cb, cb_lloyd, om, sample_covariance(train)


class TestEvaluateStrategies:
    def test_optimal_strategy_normalizes_to_one(self, rng):
        eval_ds, model, cb, _, om, _ = _eval_setup(rng)
        recs = evaluate_strategies(
            eval_ds, cb, model, om, [make_strategy("optimal")], seed=0
        )
        assert all(abs(r.nse - 1.0) <= 1e-9 for r in recs)

    def test_uniform_strategy_bounded(self, rng):
        eval_ds, model, cb, _, om, _ = _eval_setup(rng)
        recs = evaluate_strategies(
            eval_ds, cb, model, om, [make_strategy("uni_pow_cov")], seed=0
        )
        assert all(0.0 < r.nse <= 1.0 for r in recs)

    def test_every_strategy_respects_nse_bound(self, rng):
        eval_ds, model, cb, cb_lloyd, om, cs = _eval_setup(rng)
        cbs = {("gmm", "lau"): cb, ("lloyd", "lau"): cb_lloyd}
        toks = [
            "optimal",
            "uni_pow_cov",
            "uni_pow_eigsp",
            "gmm_lau_obs",
            "gmm_lau_csi",
            "lloyd_lau_csi",
            "lloyd_lau_est_gmm",
            "lloyd_lau_est_scov",
        ]
        strategies = [make_strategy(t, cbs) for t in toks]
        recs = evaluate_strategies(
            eval_ds, cb, model, om, strategies, seed=5, sample_cov=cs
        )
        assert len(recs) == len(eval_ds) * len(toks)
        assert all(r.nse <= 1.0 + 1e-9 for r in recs)
        assert all(r.nse >= 0.0 for r in recs)

    def test_same_seed_reproduces_records(self, rng):
        eval_ds, model, cb, _, om, _ = _eval_setup(rng)
        strategies = [make_strategy("gmm_lau_obs", {("gmm", "lau"): cb})]
        a = evaluate_strategies(eval_ds, cb, model, om, strategies, seed=9)
        b = evaluate_strategies(eval_ds, cb, model, om, strategies, seed=9)
        assert a == b

    def test_noise_is_paired_across_strategies(self, rng):
        # the same strategy under two labels must see identical noise draws
        eval_ds, model, cb, _, om, _ = _eval_setup(rng)
        s1 = Strategy("first", "mixture_obs", codebook=cb)
        s2 = Strategy("second", "mixture_obs", codebook=cb)
        recs = evaluate_strategies(eval_ds, cb, model, om, [s1, s2], seed=4)
        first = [r.nse for r in recs if r.strategy == "first"]
        second = [r.nse for r in recs if r.strategy == "second"]
        assert first == second

    def test_exhaustive_dominates_fixed_index(self, rng):
        eval_ds, model, cb, cb_lloyd, om, _ = _eval_setup(rng)
        strategies = [make_strategy("lloyd_lau_csi", {("lloyd", "lau"): cb_lloyd})]
        recs = evaluate_strategies(eval_ds, cb_lloyd, model, om, strategies, seed=2)
        exhaustive_mean = np.mean([r.rate for r in recs])
        hs = eval_ds.h
        for k in range(len(cb_lloyd)):
            fixed = rate_matrix(hs, [cb_lloyd.entries[k]], cb_lloyd.noise_var).mean()
            assert exhaustive_mean >= fixed - 1e-12

    def test_records_ordered_by_link_then_strategy(self, rng):
        eval_ds, model, cb, _, om, _ = _eval_setup(rng, m=10)
        strategies = [make_strategy("optimal"), make_strategy("uni_pow_cov")]
        recs = evaluate_strategies(eval_ds, cb, model, om, strategies, seed=0)
        labels = [r.strategy for r in recs[:4]]
        assert labels == ["optimal", "uni_pow_cov", "optimal", "uni_pow_cov"]
        assert [r.link_id for r in recs[:4]] == [0, 0, 1, 1]


class TestStrategyTokens:
    def test_known_tokens_parse(self, rng):
        cbs = {(f, u): _random_codebook(rng, 4, 4) for f in ("gmm", "lloyd") for u in ("pgd", "lau")}
        for tok in strategy_tokens():
            s = make_strategy(tok, cbs)
            assert s.label == tok

    def test_unknown_token_rejected(self):
        with pytest.raises(ValueError):
            make_strategy("lloyd_pgd_obs")
        with pytest.raises(ValueError):
            make_strategy("gmm_pgd_est_scov")
        with pytest.raises(ValueError):
            make_strategy("banana")

    def test_missing_codebook_rejected(self):
        with pytest.raises(ValueError, match="codebook"):
            make_strategy("gmm_pgd_obs", {})


class TestCcdf:
    def test_point_mass(self):
        recs = [NseRecord(i, "a", 0.7, 1.0, 1.4) for i in range(10)]
        table = ccdf(recs, [0.5, 0.9])
        np.testing.assert_array_equal(table.values["a"], [1.0, 0.0])

    def test_nonincreasing_along_grid(self, rng):
        recs = [
            NseRecord(i, "a", float(v), 1.0, 1.0)
            for i, v in enumerate(rng.random(200))
        ]
        table = ccdf(recs, np.linspace(0, 1, 64))
        assert np.all(np.diff(table.values["a"]) <= 0)

    def test_counting_oracle(self):
        recs = [NseRecord(i, "a", 0.1 * (i + 1), 1.0, 1.0) for i in range(10)]
        table = ccdf(recs, [0.55])
        assert table.values["a"][0] == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ccdf([], [0.5])


class TestTables:
    def test_ccdf_file_round_trip(self, tmp_path, rng):
        recs = [
            NseRecord(i, lab, float(rng.random()), 1.0, 1.0)
            for i in range(50)
            for lab in ("optimal", "uni_pow_cov")
        ]
        table = ccdf(recs, np.linspace(0, 1, 16))
        path = tmp_path / "t.csv"
        write_ccdf_table(table, path)
        loaded = read_ccdf_table(path)
        assert list(loaded.values) == ["optimal", "uni_pow_cov"]
        np.testing.assert_allclose(loaded.grid, table.grid, atol=1e-12)
        for lab in table.values:
            np.testing.assert_allclose(loaded.values[lab], table.values[lab], atol=1e-12)
        header = path.read_text().splitlines()[0]
        assert header == "s,optimal,uni_pow_cov"

    def test_records_file_round_trip(self, tmp_path):
        recs = [NseRecord(3, "x", 0.123456789012345, 1.5, 2.0)]
        path = tmp_path / "r.csv"
        write_records(recs, path)
        loaded = read_records(path)
        assert loaded[0].link_id == 3
        assert loaded[0].strategy == "x"
        assert loaded[0].nse == pytest.approx(0.123456789012345, rel=1e-11)

    def test_summary_helpers(self):
        recs = [NseRecord(0, "a", 0.5, 1, 2), NseRecord(1, "a", 0.9, 1, 2)]
        assert mean_nse(recs, "a") == pytest.approx(0.7)
        assert exceed_fraction(recs, "a", 0.8) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            mean_nse(recs, "b")


def test_zero_optimal_rate_samples_are_excluded(rng, caplog):
    h = _random_channels(rng, 6, 2, 4)
    h[2] = 0.0  # degenerate link
    eval_ds = ChannelDataset(h, np.arange(6), Orientation.DL)
    model = random_model(rng, 8, 2, mean_scale=0.0)
    cb = _random_codebook(rng, 2, 4)
    pilot = build_pilot_matrix(2, 2, 2, 1.0)
    om = ObservationModel(pilot, 2, 1.0).bind(model)
    import logging

    with caplog.at_level(logging.WARNING):
        recs = evaluate_strategies(
            eval_ds, cb, model, om, [make_strategy("optimal")], seed=0
        )
    assert len(recs) == 5
    assert all(r.link_id != 2 for r in recs)
    assert any("zero optimal rate" in m for m in caplog.messages)
