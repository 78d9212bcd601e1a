"""Pipeline CLI: generate | fit | build-codebook | evaluate | report.

Every stage reads its inputs from files recorded in the run manifest and
writes its outputs next to them, so stages can run in separate processes.
Exit codes: 0 success, 2 config error, 3 missing artifact, 4 integrity
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import codebook as cbk
from . import estimation, feedback, gmm, report, scenario
from .config import ConfigError, derive_seed, load_run_config
from .manifest import IntegrityError, MissingArtifactError, RunManifest

log = logging.getLogger("precodelab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INTEGRITY = 4

_DATASET_FILES = ("ul_train.chd", "ul_eval.chd", "dl_train.chd", "dl_eval.chd")
_MODEL_FILE = "gmm.gmmx"


def _noise_var(rho, snr_db):
    return rho / 10.0 ** (snr_db / 10.0)


def _codebook_name(family, update, snr_db):
    return f"cb_{family}_{update}_snr{snr_db:g}dB.cbk"


def _cell_name(kind, snr_db, n_p):
    return f"{kind}_snr{snr_db:g}dB_np{n_p}.csv"


def cmd_generate(cfg):
    out = cfg.artifact_dir
    out.mkdir(parents=True, exist_ok=True)
    ul, dl = scenario.generate_paired_dataset(cfg.scenario)
    ul_train, ul_eval = scenario.split_dataset(ul, cfg.n_train)
    dl_train, dl_eval = scenario.split_dataset(dl, cfg.n_train)
    parts = dict(
        zip(_DATASET_FILES, (ul_train, ul_eval, dl_train, dl_eval))
    )
    files = []
    for name, ds in parts.items():
        path = out / name
        scenario.save_dataset(ds, path)
        files.append(path)
    manifest = RunManifest.load(out)
    manifest.record_stage("generate", files, cfg.config_hash)
    log.info("wrote %d dataset files to %s", len(files), out)
    return EXIT_OK


def cmd_fit(cfg):
    out = cfg.artifact_dir
    manifest = RunManifest.load(out)
    manifest.verify_stage("generate")
    ul_train = scenario.load_dataset(out / "ul_train.chd")
    emulated = scenario.emulate_downlink(ul_train)
    if cfg.fit.structure == "full":
        model = gmm.fit_em(emulated.vectors, cfg.fit.k, cfg.fit.options)
        traces = {"gmm_loglik.txt": model.loglik_trace}
    else:
        model = gmm.fit_kronecker(emulated, cfg.fit.k_tx, cfg.fit.k_rx, cfg.fit.options)
        traces = {
            "gmm_loglik_tx.txt": model.stage_traces["tx"],
            "gmm_loglik_rx.txt": model.stage_traces["rx"],
        }
    model_path = out / _MODEL_FILE
    gmm.save_model(model, model_path)
    files = [model_path]
    for name, trace in traces.items():
        path = out / name
        path.write_text("".join(f"{v:.12g}\n" for v in trace))
        files.append(path)
    manifest.record_stage("fit", files, cfg.config_hash)
    log.info("fitted %d-component %s mixture", model.n_components, model.structure)
    return EXIT_OK


def cmd_build_codebook(cfg):
    out = cfg.artifact_dir
    manifest = RunManifest.load(out)
    manifest.verify_stage("generate")
    manifest.verify_stage("fit")
    train = scenario.emulate_downlink(scenario.load_dataset(out / "ul_train.chd"))
    model = gmm.load_model(out / _MODEL_FILE)
    spec = cfg.codebook
    n_rx = cfg.scenario.n_rx
    files = []
    for snr_db in cfg.eval.snr_db:
        noise_var = _noise_var(spec.rho, snr_db)
        for family in spec.families:
            for update in spec.updates:
                if family == "gmm":
                    built = cbk.gmm_codebook(
                        model, train, spec.rho, noise_var, n_rx, update, spec.pgd
                    )
                else:
                    built = cbk.lloyd_fit(
                        train,
                        2**spec.bits,
                        spec.rho,
                        noise_var,
                        n_rx,
                        update,
                        spec.pgd,
                        seed=derive_seed(cfg.seed, f"codebook:{family}_{update}_snr{snr_db:g}"),
                        max_outer=spec.lloyd_max_outer,
                        rel_tol=spec.lloyd_rel_tol,
                    )
                path = out / _codebook_name(family, update, snr_db)
                cbk.save_codebook(built, path)
                files.append(path)
                log.info("built %s", path.name)
    manifest.record_stage("codebook", files, cfg.config_hash)
    return EXIT_OK


def cmd_evaluate(cfg):
    out = cfg.artifact_dir
    manifest = RunManifest.load(out)
    manifest.verify_stage("generate")
    manifest.verify_stage("fit")
    manifest.verify_stage("codebook")
    dl_eval = scenario.load_dataset(out / "dl_eval.chd")
    model = gmm.load_model(out / _MODEL_FILE)
    spec = cfg.eval
    rho = cfg.codebook.rho
    sc = cfg.scenario

    needs_scov = any(t.endswith("est_scov") for t in spec.strategies)
    needs_omp = any(t.endswith("est_omp") for t in spec.strategies)
    sample_cov = None
    if needs_scov:
        train = scenario.emulate_downlink(scenario.load_dataset(out / "ul_train.chd"))
        sample_cov = estimation.sample_covariance(train)
    dictionary = None
    if needs_omp:
        dictionary = estimation.build_dictionary(
            sc.n_rx, sc.n_tx_h, sc.n_tx_v, spec.omp_oversampling
        )

    files = []
    grid = np.linspace(0.0, 1.0, spec.ccdf_grid)
    sweep = {snr_db: {} for snr_db in spec.snr_db}
    for snr_db in spec.snr_db:
        cell_noise = _noise_var(rho, snr_db)
        codebooks = {
            (family, update): cbk.load_codebook(
                out / _codebook_name(family, update, snr_db)
            )
            for family in cfg.codebook.families
            for update in cfg.codebook.updates
        }
        default_cb = codebooks.get(("gmm", "pgd")) or next(iter(codebooks.values()))
        strategies = [feedback.make_strategy(t, codebooks) for t in spec.strategies]
        for n_p in spec.n_p:
            pilot = estimation.build_pilot_matrix(sc.n_tx_h, sc.n_tx_v, n_p, rho)
            decision_noise = (
                spec.decision_noise_var if spec.decision_noise_var > 0 else cell_noise
            )
            om = estimation.ObservationModel(pilot, sc.n_rx, decision_noise).bind(model)
            records = feedback.evaluate_strategies(
                dl_eval,
                default_cb,
                model,
                om,
                strategies,
                seed=derive_seed(cfg.seed, f"eval-noise:snr{snr_db:g}:np{n_p}"),
                sample_cov=sample_cov,
                dictionary=dictionary,
                omp_s_max=spec.omp_s_max or None,
            )
            rec_path = out / _cell_name("records", snr_db, n_p)
            feedback.write_records(records, rec_path)
            table = feedback.ccdf(records, grid)
            ccdf_path = out / _cell_name("ccdf", snr_db, n_p)
            feedback.write_ccdf_table(table, ccdf_path)
            files += [rec_path, ccdf_path]
            for tok in spec.strategies:
                sweep[snr_db].setdefault(tok, []).append(
                    feedback.exceed_fraction(records, tok, spec.sweep_threshold)
                )
            log.info("evaluated cell snr=%gdB n_p=%d", snr_db, n_p)
        sweep_path = out / f"sweep_nse{spec.sweep_threshold:g}_snr{snr_db:g}dB.csv"
        with open(sweep_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["n_p"] + list(spec.strategies))
            for i, n_p in enumerate(spec.n_p):
                writer.writerow(
                    [n_p] + [f"{sweep[snr_db][tok][i]:.12g}" for tok in spec.strategies]
                )
        files.append(sweep_path)
    manifest.record_stage("evaluate", files, cfg.config_hash)
    return EXIT_OK


def cmd_report(cfg):
    out = cfg.artifact_dir
    manifest = RunManifest.load(out)
    manifest.verify_stage("evaluate")
    spec = cfg.eval
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    files = []
    for snr_db in spec.snr_db:
        for n_p in spec.n_p:
            records = feedback.read_records(out / _cell_name("records", snr_db, n_p))
            print(f"cell snr={snr_db:g} dB, n_p={n_p}:")
            for tok in spec.strategies:
                mean = feedback.mean_nse(records, tok)
                frac = feedback.exceed_fraction(records, tok, spec.sweep_threshold)
                print(
                    f"  {tok:<22s} mean nSE = {mean:8.5f}   "
                    f"P(nSE>{spec.sweep_threshold:g}) = {frac:8.5f}"
                )
            table = feedback.read_ccdf_table(out / _cell_name("ccdf", snr_db, n_p))
            fig_path = fig_dir / f"ccdf_snr{snr_db:g}dB_np{n_p}.png"
            report.render_ccdf_figure(
                table, fig_path, f"cCDF of nSE @ {snr_db:g} dB, {n_p} pilots"
            )
            files.append(fig_path)
        sweep_path = out / f"sweep_nse{spec.sweep_threshold:g}_snr{snr_db:g}dB.csv"
        with open(sweep_path, newline="") as f:
            rows = list(csv.reader(f))
        labels = rows[0][1:]
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        per_strategy = {lab: data[:, j + 1] for j, lab in enumerate(labels)}
        fig_path = fig_dir / f"sweep_snr{snr_db:g}dB.png"
        report.render_sweep_figure(
            data[:, 0].astype(int),
            per_strategy,
            spec.sweep_threshold,
            fig_path,
            f"P(nSE > {spec.sweep_threshold:g}) over pilots @ {snr_db:g} dB",
        )
        files.append(fig_path)
    manifest.record_stage("report", files, cfg.config_hash)
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "build-codebook": cmd_build_codebook,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="precodelab",
        description="Limited-feedback precoding laboratory pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args.config, seed_override=args.seed)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except IntegrityError as exc:
        print(f"integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
