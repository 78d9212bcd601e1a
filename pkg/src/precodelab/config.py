"""Run configuration: a flat sectioned key-value file with strict validation.

Unknown sections or keys are hard errors so a typo cannot silently change an
experiment. The master seed feeds per-stage sub-seeds through fixed labeled
hashing, keeping stage reruns stable under unrelated config edits.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .codebook import PgdOptions
from .feedback import strategy_tokens
from .gmm import FitOptions
from .scenario import ScenarioConfig


class ConfigError(Exception):
    pass


def derive_seed(master_seed, label):
    """64-bit sub-seed from the master seed and a stage label."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _parse_list(text, conv):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return [conv(t) for t in items]


@dataclass(frozen=True)
class FitSpec:
    structure: str
    k: int
    k_tx: int
    k_rx: int
    options: FitOptions


@dataclass(frozen=True)
class CodebookSpec:
    bits: int
    rho: float
    families: tuple
    updates: tuple
    pgd: PgdOptions
    lloyd_max_outer: int
    lloyd_rel_tol: float


@dataclass(frozen=True)
class EvalSpec:
    snr_db: tuple
    n_p: tuple
    strategies: tuple
    ccdf_grid: int
    sweep_threshold: float
    decision_noise_var: float  # <= 0 means: use the cell noise variance
    omp_oversampling: tuple
    omp_s_max: int  # 0 means: number of observations


@dataclass(frozen=True)
class RunConfig:
    seed: int
    artifact_dir: Path
    scenario: ScenarioConfig
    n_train: int
    fit: FitSpec
    codebook: CodebookSpec
    eval: EvalSpec
    config_hash: str = field(default="", compare=False)


_SCHEMA = {
    "run": {"seed", "artifact_dir"},
    "scenario": {
        "n_tx_h",
        "n_tx_v",
        "n_rx",
        "f_ul_hz",
        "f_dl_hz",
        "n_paths",
        "angle_spread_rad",
        "delay_spread_s",
        "n_samples",
        "n_train",
    },
    "fit": {"structure", "k", "k_tx", "k_rx", "max_iter", "rel_tol", "reg_eps", "init"},
    "codebook": {
        "bits",
        "rho",
        "families",
        "updates",
        "pgd_step",
        "pgd_max_iter",
        "pgd_rel_tol",
        "pgd_backtrack",
        "lloyd_max_outer",
        "lloyd_rel_tol",
    },
    "eval": {
        "snr_db",
        "n_p",
        "strategies",
        "ccdf_grid",
        "sweep_threshold",
        "decision_noise_var",
        "omp_oversampling",
        "omp_s_max",
    },
}


def _check_schema(parser):
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
    for required in ("run", "scenario", "fit", "codebook", "eval"):
        if required not in parser:
            raise ConfigError(f"missing config section [{required}]")


def load_run_config(path, seed_override=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    _check_schema(parser)
    try:
        return _build(parser, path, seed_override)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _build(parser, path, seed_override):
    run = parser["run"]
    seed = int(run["seed"]) if seed_override is None else int(seed_override)
    artifact_dir = Path(run["artifact_dir"])

    sc = parser["scenario"]
    scenario = ScenarioConfig(
        n_tx_v=int(sc["n_tx_v"]),
        n_tx_h=int(sc["n_tx_h"]),
        n_rx=int(sc["n_rx"]),
        f_ul=float(sc["f_ul_hz"]),
        f_dl=float(sc["f_dl_hz"]),
        n_paths=int(sc["n_paths"]),
        angle_spread=float(sc["angle_spread_rad"]),
        delay_spread=float(sc["delay_spread_s"]),
        n_samples=int(sc["n_samples"]),
        seed=derive_seed(seed, "scenario"),
    )
    n_train = int(sc["n_train"])
    if not 0 < n_train < scenario.n_samples:
        raise ValueError("n_train must leave a nonempty evaluation split")

    ft = parser["fit"]
    structure = ft.get("structure", "full")
    if structure not in ("full", "kronecker"):
        raise ValueError(f"unknown fit structure {structure!r}")
    options = FitOptions(
        max_iter=int(ft.get("max_iter", 100)),
        rel_tol=float(ft.get("rel_tol", 1e-6)),
        reg_eps=float(ft.get("reg_eps", 1e-6)),
        seed=derive_seed(seed, "fit"),
        init=ft.get("init", "random_responsibility"),
    )
    if structure == "full":
        if "k" not in ft:
            raise ValueError("full structure requires fit.k")
        k, k_tx, k_rx = int(ft["k"]), 0, 0
    else:
        if "k_tx" not in ft or "k_rx" not in ft:
            raise ValueError("kronecker structure requires fit.k_tx and fit.k_rx")
        k_tx, k_rx = int(ft["k_tx"]), int(ft["k_rx"])
        k = k_tx * k_rx
    fit = FitSpec(structure, k, k_tx, k_rx, options)

    cbs = parser["codebook"]
    bits = int(cbs["bits"])
    if 2**bits != k:
        raise ValueError(f"2**bits = {2 ** bits} must equal the mixture size K = {k}")
    families = tuple(_parse_list(cbs.get("families", "gmm,lloyd"), str))
    updates = tuple(_parse_list(cbs.get("updates", "pgd,lau"), str))
    for fam in families:
        if fam not in ("gmm", "lloyd"):
            raise ValueError(f"unknown codebook family {fam!r}")
    for upd in updates:
        if upd not in ("pgd", "lau"):
            raise ValueError(f"unknown codebook update {upd!r}")
    codebook = CodebookSpec(
        bits=bits,
        rho=float(cbs.get("rho", 1.0)),
        families=families,
        updates=updates,
        pgd=PgdOptions(
            step=float(cbs.get("pgd_step", 1.0)),
            max_iter=int(cbs.get("pgd_max_iter", 75)),
            rel_tol=float(cbs.get("pgd_rel_tol", 1e-6)),
            backtrack=float(cbs.get("pgd_backtrack", 0.5)),
        ),
        lloyd_max_outer=int(cbs.get("lloyd_max_outer", 50)),
        lloyd_rel_tol=float(cbs.get("lloyd_rel_tol", 1e-4)),
    )

    ev = parser["eval"]
    snr_db = tuple(_parse_list(ev["snr_db"], float))
    n_p = tuple(_parse_list(ev["n_p"], int))
    for pilots in n_p:
        if not 1 <= pilots <= scenario.n_tx:
            raise ValueError(f"pilot count {pilots} out of range [1, {scenario.n_tx}]")
    strategies = tuple(_parse_list(ev["strategies"], str))
    known = set(strategy_tokens())
    for tok in strategies:
        if tok not in known:
            raise ValueError(f"unknown strategy token {tok!r}")
        parts = tok.split("_", 2)
        if parts[0] in ("gmm", "lloyd"):
            family, update = parts[0], parts[1]
            if family not in families or update not in updates:
                raise ValueError(
                    f"strategy {tok!r} needs the ({family}, {update}) codebook, "
                    "which is not configured for building"
                )
    oversampling = tuple(_parse_list(ev.get("omp_oversampling", "2,2,2"), int))
    if len(oversampling) != 3:
        raise ValueError("omp_oversampling needs three factors (rx, tx_h, tx_v)")
    evaluation = EvalSpec(
        snr_db=snr_db,
        n_p=n_p,
        strategies=strategies,
        ccdf_grid=int(ev.get("ccdf_grid", 512)),
        sweep_threshold=float(ev.get("sweep_threshold", 0.8)),
        decision_noise_var=float(ev.get("decision_noise_var", -1.0)),
        omp_oversampling=oversampling,
        omp_s_max=int(ev.get("omp_s_max", 0)),
    )
    if evaluation.ccdf_grid < 2:
        raise ValueError("ccdf_grid must be at least 2")

    config_hash = hashlib.sha256(
        path.read_bytes() + f"|seed={seed}".encode()
    ).hexdigest()
    return RunConfig(
        seed=seed,
        artifact_dir=artifact_dir,
        scenario=scenario,
        n_train=n_train,
        fit=fit,
        codebook=codebook,
        eval=evaluation,
        config_hash=config_hash,
    )
