"""Run configuration for the command-line pipeline (YAML)."""
from __future__ import annotations

from dataclasses import dataclass, replace
from importlib.resources import files
from pathlib import Path

import numpy as np
import yaml

from .ratings import RatingDataError, RatingScale

__all__ = ["RunConfig", "load_config", "default_config_path"]


def default_config_path() -> Path:
    return Path(str(files("ratingxva") / "data" / "fitch.yaml"))


def _inf(x):
    if isinstance(x, str) and x.strip().lower() in ("inf", "+inf", "infinity"):
        return np.inf
    return x


@dataclass(frozen=True)
class RunConfig:
    scale: RatingScale
    matrix_files: tuple
    pd_file: Path
    thresholds_file: Path
    seed: int
    model_file: Path | None = None
    m_p: float = 1.0
    m_q: float = 1.0
    h_bounds: tuple = (1e-2, 1e2)
    max_iter: int = 2000
    decimals: int = 6
    measure: str = "Q"
    sim_paths: int = 10000
    dump_paths: int = 20
    lr_paths: int = 100000
    lr_rating: int = 2
    xva_paths: int = 10000
    lgd_b: float = 0.6
    lgd_c: float = 0.6
    bank_rating: int = 0
    cpty_rating: int = 2
    postings_per_year: int = 365
    maturity: float = 1.0
    v0: float = 0.0
    n_flows: int = 24
    vol_scale: float = 1e7
    regimes: tuple = ("uncollateralized", "rating-triggers", "perfect")
    dump_trajectories: int = 5
    xva_predefault: bool = True
    predefault_paths: int = 10000
    fan_paths: int = 50
    fan_rating: int = 2
    checks: bool = True
    pd_tol: float = 1e-3
    p_matrix_tol: float = 1e-3
    repair_tol: float = 1e-3
    sim_tol: float = 1.5e-2


def _path(base: Path, p):
    p = Path(p)
    return p if p.is_absolute() else (base / p)


def load_config(path=None, seed=None, paths=None, measure=None, regime=None) -> RunConfig:
    """Read a YAML run configuration; command-line flags override its values.

    File references are resolved relative to the configuration file. The
    seed must come from the file or the ``seed`` argument.
    """
    path = default_config_path() if path is None else Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise RatingDataError(f"{path}: config file not found") from None
    except yaml.YAMLError as exc:
        raise RatingDataError(f"{path}: invalid YAML ({exc})") from None
    base = path.parent
    data = raw.get("data", {})
    try:
        scale = RatingScale(tuple(data["ratings"]))
        matrices = []
        for item in data["matrices"]:
            if isinstance(item, dict):
                matrices.append((_path(base, item["file"]), float(item["horizon"])))
            else:
                matrices.append(_path(base, item))
        pd_file = _path(base, data["pd"])
        thresholds = _path(base, data["thresholds"])
    except KeyError as exc:
        raise RatingDataError(f"{path}: missing data entry {exc}") from None

    cal = raw.get("calibration", {})
    sim = raw.get("simulation", {})
    xva = raw.get("xva", {})
    pre = raw.get("predefault", {})
    rep = raw.get("report", {})
    chk = raw.get("checks", {})
    seed = raw.get("seed") if seed is None else seed
    if seed is None:
        raise RatingDataError(f"{path}: no seed given (set 'seed' or pass --seed)")
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise RatingDataError("seed must be an unsigned 64-bit integer")

    def rating(x, default):
        return scale.index(x) if x is not None else default

    cfg = RunConfig(
        scale=scale,
        matrix_files=tuple(matrices),
        pd_file=pd_file,
        thresholds_file=thresholds,
        seed=seed,
        model_file=_path(base, raw["model"]) if raw.get("model") else None,
        m_p=float(_inf(cal.get("m_p", 1.0))),
        m_q=float(cal.get("m_q", 1.0)),
        h_bounds=tuple(float(x) for x in cal.get("h_bounds", (1e-2, 1e2))),
        max_iter=int(cal.get("max_iter", 2000)),
        decimals=int(raw.get("decimals", 6)),
        measure=str(sim.get("measure", "Q")).upper(),
        sim_paths=int(sim.get("paths", 10000)),
        dump_paths=int(sim.get("dump_paths", 20)),
        lr_paths=int(sim.get("lr_paths", 100000)),
        lr_rating=rating(sim.get("lr_rating"), 2),
        xva_paths=int(xva.get("paths", 10000)),
        lgd_b=float(xva.get("lgd_bank", 0.6)),
        lgd_c=float(xva.get("lgd_cpty", 0.6)),
        bank_rating=rating(xva.get("bank_rating"), 0),
        cpty_rating=rating(xva.get("cpty_rating"), 2),
        postings_per_year=int(xva.get("postings_per_year", 365)),
        maturity=float(xva.get("maturity", 1.0)),
        v0=float(xva.get("v0", 0.0)),
        n_flows=int(xva.get("n_flows", 24)),
        vol_scale=float(xva.get("vol_scale", 1e7)),
        regimes=tuple(xva.get("regimes", RunConfig.regimes)),
        dump_trajectories=int(xva.get("dump_trajectories", 5)),
        xva_predefault=bool(xva.get("predefault", True)),
        predefault_paths=int(pre.get("paths", 10000)),
        fan_paths=int(rep.get("fan_paths", 50)),
        fan_rating=rating(rep.get("fan_rating"), 2),
        checks=bool(chk.get("enabled", True)),
        pd_tol=float(chk.get("pd_tol", 1e-3)),
        p_matrix_tol=float(chk.get("p_matrix_tol", 1e-3)),
        repair_tol=float(chk.get("repair_tol", 1e-3)),
        sim_tol=float(chk.get("sim_tol", 1.5e-2)),
    )
    over = {}
    if paths is not None:
        if paths < 1:
            raise RatingDataError("--paths must be at least 1")
        over.update(sim_paths=paths, xva_paths=paths, predefault_paths=paths,
                    lr_paths=paths)
    if measure is not None:
        over["measure"] = measure.upper()
    if regime is not None:
        over["regimes"] = (regime,)
    cfg = replace(cfg, **over)
    if cfg.measure not in ("P", "Q"):
        raise RatingDataError(f"measure must be P or Q, got {cfg.measure!r}")
    bad = [r for r in cfg.regimes if r not in RunConfig.regimes]
    if bad:
        raise RatingDataError(f"unknown regime(s) {bad}; choose from {list(RunConfig.regimes)}")
    return cfg
