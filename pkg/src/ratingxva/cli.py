"""Command-line pipeline: adjust, extract, calibrate, simulate, xva, predefault, report.

Every subcommand writes CSV files plus a ``<command>.txt`` summary under
``--out`` and exits with 0 when all enabled checks pass, 1 when a check
fails and 2 on bad input.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import figures
from .calibration import (
    CalibrationError,
    CalibrationOptions,
    CalibrationWeights,
    adjust_matrix,
    calibrate_piecewise,
    degenerate_columns,
    extract_piecewise_generators,
    load_model,
    save_model,
)
from .config import RunConfig, load_config
from .matfun import MatrixFunctionError
from .ratings import (
    ROW_SUM_TOL,
    DefaultCurve,
    RatingDataError,
    load_market_data,
    read_matrix_csv,
    write_matrix_csv,
    write_pd_csv,
)
from .simulation import (
    empirical_transition_matrix,
    likelihood_ratios,
    simulate_blocks,
    simulate_paths,
    states_at,
    write_paths_csv,
)
from .xva import (
    PERFECT,
    RATING_TRIGGERS,
    REGIMES,
    UNCOLLATERALIZED,
    CollateralAgreement,
    PortfolioModel,
    XvaConfig,
    collateral_account_path,
    default_times,
    estimate_xva,
    pre_default_distribution,
    pre_default_shares,
    read_thresholds_csv,
    simulate_portfolio,
    STREAM_BANK,
    STREAM_CPTY,
    write_trajectories_csv,
)

log = logging.getLogger("ratingxva")

# stream bases keep the per-rating blocks of different commands apart
STREAM_SIM = {"P": 0, "Q": 100}
STREAM_LR = 300
STREAM_PRE = {"P": 400, "Q": 500}
STREAM_FAN = {"P": 600, "Q": 700}


def tenor_tag(t) -> str:
    months = t * 12
    if abs(months - round(months)) < 1e-9:
        return f"{int(round(months))}m"
    return f"{t:g}y"


class Run:
    """Output directory, summary lines and check bookkeeping of one command."""

    def __init__(self, cfg: RunConfig, out, command):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.lines = []
        self.failed = []

    def say(self, msg=""):
        self.lines.append(msg)
        print(msg)

    def check(self, name, ok, detail=""):
        ok = bool(ok)
        self.say(f"check {name}: {'pass' if ok else 'FAIL'}{'  ' + detail if detail else ''}")
        if not ok:
            self.failed.append(name)

    def path(self, name) -> Path:
        return self.out / name

    def finish(self) -> int:
        self.path(f"{self.command}.txt").write_text("\n".join(self.lines) + "\n")
        if self.cfg.checks and self.failed:
            print(f"{len(self.failed)} check(s) failed: {', '.join(self.failed)}", file=sys.stderr)
            return 1
        return 0


def _fmt(x) -> str:
    return repr(float(x))


def write_generators_csv(path, generators, schedule, scale):
    bp = schedule.breakpoints
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "t_start", "t_end", "from", "to", "rate"])
        for k, g in enumerate(generators):
            e = g.entries
            for i in range(scale.size):
                for j in range(scale.size):
                    w.writerow([k, _fmt(bp[k]), _fmt(bp[k + 1]), scale.labels[i],
                                scale.labels[j], _fmt(e[i, j])])


def _market(cfg: RunConfig):
    mats, curve, schedule = load_market_data(cfg.matrix_files, cfg.pd_file, cfg.scale)
    return mats, [adjust_matrix(m) for m in mats], curve, schedule


def _calibrate(cfg: RunConfig):
    _, adjusted, curve, schedule = _market(cfg)
    weights = CalibrationWeights(m_p=cfg.m_p, m_q=cfg.m_q)
    opts = CalibrationOptions(h_bounds=cfg.h_bounds, max_iter=cfg.max_iter)
    model = calibrate_piecewise(adjusted, curve, schedule, weights, opts)
    return model, adjusted, curve


def _model(cfg: RunConfig):
    if cfg.model_file is not None:
        model, _ = load_model(cfg.model_file)
        return model
    return _calibrate(cfg)[0]


# --- subcommands --------------------------------------------------------------

def cmd_adjust(cfg: RunConfig, out) -> int:
    run = Run(cfg, out, "adjust")
    for item in cfg.matrix_files:
        src, horizon = item if isinstance(item, tuple) else (item, None)
        market = read_matrix_csv(src, cfg.scale, horizon)
        adj = adjust_matrix(market)
        dst = run.path(f"adjusted_{Path(src).stem}.csv")
        write_matrix_csv(dst, adj, cfg.scale, cfg.decimals)
        wd = market.withdrawal
        run.say(f"{Path(src).name}: horizon {market.horizon:g}y, withdrawal "
                + " ".join(f"{x:.6f}" for x in wd) + f" -> {dst.name}")
        run.check(f"row sums {Path(src).stem}",
                  np.all(np.abs(adj.entries.sum(axis=1) - 1) <= ROW_SUM_TOL))
    return run.finish()


def cmd_extract(cfg: RunConfig, out) -> int:
    run = Run(cfg, out, "extract")
    _, adjusted, _, schedule = _market(cfg)
    residuals = []
    gens = extract_piecewise_generators(adjusted, schedule, residuals)
    write_generators_csv(run.path("generators_historical.csv"), gens, schedule, cfg.scale)
    for k, (g, r) in enumerate(zip(gens, residuals)):
        run.say(f"interval {k} [{schedule.breakpoints[k]:.6g}, {schedule.breakpoints[k + 1]:.6g}]:"
                f" repair residual {r:.3e}, max exit rate {g.exit_rates.max():.6g}")
    # informational: the quotient P(0, T_{k-1})^{-1} R_k of later intervals is
    # further from embeddable, the calibration residual is the one checked
    run.say(f"max extraction repair residual {max(residuals):.3e}")
    for k, g in enumerate(gens):
        run.check(f"generator {k} valid", np.all(np.abs(g.entries.sum(axis=1)) <= 1e-10))
    return run.finish()


def cmd_calibrate(cfg: RunConfig, out) -> int:
    run = Run(cfg, out, "calibrate")
    model, adjusted, curve = _calibrate(cfg)
    schedule = model.schedule
    save_model(run.path("model.json"), model, cfg.scale)
    write_generators_csv(run.path("generators_P.csv"), model.gen_p, schedule, cfg.scale)
    write_generators_csv(run.path("generators_Q.csv"), model.gen_q, schedule, cfg.scale)
    write_generators_csv(run.path("generators_historical.csv"), model.historical, schedule,
                         cfg.scale)
    with run.path("h.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", *cfg.scale.labels])
        for k, h in enumerate(model.h):
            w.writerow([k, *(_fmt(x) for x in h.values)])
    with run.path("calibration_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "t_start", "t_end", "objective", "pd_error", "max_pd_residual",
                    "generator_residual", "matrix_error", "repair_residual", "iterations"])
        for r in model.report:
            w.writerow([r.interval, _fmt(schedule.breakpoints[r.interval]),
                        _fmt(schedule.breakpoints[r.interval + 1]), _fmt(r.objective),
                        _fmt(r.pd_error), _fmt(np.abs(r.pd_residual).max()),
                        _fmt(r.generator_residual), _fmt(r.matrix_error),
                        _fmt(r.repair_residual), r.n_iter])
    pd_rows = []
    for k, t in enumerate(schedule.breakpoints[1:]):
        tag = tenor_tag(t)
        q = model.evolution("Q", 0.0, t)
        p = model.evolution("P", 0.0, t)
        write_matrix_csv(run.path(f"q_matrix_{tag}.csv"), q, cfg.scale, cfg.decimals)
        write_matrix_csv(run.path(f"p_matrix_{tag}.csv"), p, cfg.scale, cfg.decimals)
        pd_rows.append(q.entries[:, -1])
        r = model.report[k]
        run.say(f"interval {k} ({tag}): h = " + " ".join(f"{x:.6g}" for x in r.h)
                + f"; max PD residual {np.abs(r.pd_residual).max():.3e}; "
                f"repair {r.repair_residual:.3e}; {r.n_iter} iterations")
    write_pd_csv(run.path("pd_model.csv"), DefaultCurve(schedule.breakpoints[1:],
                                                        np.array(pd_rows)),
                 cfg.scale, cfg.decimals)
    max_pd = max(float(np.abs(r.pd_residual).max()) for r in model.report)
    run.check("Q default probabilities", max_pd <= cfg.pd_tol, f"max {max_pd:.3e} <= {cfg.pd_tol:g}")
    p1 = model.evolution("P", 0.0, schedule.breakpoints[1]).entries
    dev = float(np.abs(p1 - adjusted[0].entries).mean())
    run.check("P first-interval matrix", dev <= cfg.p_matrix_tol,
              f"mean abs {dev:.3e} <= {cfg.p_matrix_tol:g}")
    rep = max(r.repair_residual for r in model.report)
    run.check("repair residual", rep <= cfg.repair_tol, f"max {rep:.3e} <= {cfg.repair_tol:g}")
    q_end = model.evolution("Q", 0.0, schedule.horizon)
    zero = degenerate_columns(q_end)
    if zero:
        msg = ("warning: degenerate Q matrix at horizon, zero columns "
               + ", ".join(cfg.scale.labels[j] for j in zero))
        run.say(msg)
        log.warning(msg)
    return run.finish()


def cmd_simulate(cfg: RunConfig, out) -> int:
    run = Run(cfg, out, "simulate")
    model = _model(cfg)
    m = cfg.measure
    k = model.size
    blocks = simulate_blocks(model, m, cfg.sim_paths, cfg.seed, ratings=range(k - 1),
                             stream_base=STREAM_SIM[m])
    dump = [p for i in range(k - 1) for p in blocks[i][:cfg.dump_paths]]
    write_paths_csv(run.path(f"paths_{m}.csv"), dump, cfg.scale)
    with run.path(f"simulation_{m}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tenor", "mean_abs_error", "max_abs_error"])
        worst = 0.0
        for t in model.schedule.breakpoints[1:]:
            emp = empirical_transition_matrix(blocks, t)
            ref = model.evolution(m, 0.0, t).entries
            err = np.abs(emp.entries - ref)
            worst = max(worst, float(err.mean()))
            write_matrix_csv(run.path(f"empirical_{m}_{tenor_tag(t)}.csv"), emp, cfg.scale,
                             cfg.decimals)
            w.writerow([_fmt(t), _fmt(err.mean()), _fmt(err.max())])
            run.say(f"{tenor_tag(t)}: mean abs error {err.mean():.3e} ({cfg.sim_paths} paths per rating)")
    run.check(f"empirical matrices under {m}", worst <= cfg.sim_tol,
              f"max mean abs {worst:.3e} <= {cfg.sim_tol:g}")
    if m == "P":
        paths = simulate_paths(model, "P", cfg.lr_rating, cfg.lr_paths, cfg.seed, stream=STREAM_LR)
        lr = likelihood_ratios(paths, model)
        mean = float(lr.mean())
        se = float(lr.std(ddof=1) / np.sqrt(lr.size)) if lr.size > 1 else float("nan")
        run.say(f"likelihood ratio from {cfg.scale.labels[cfg.lr_rating]}: mean {mean:.6f}, "
                f"se {se:.2e} ({lr.size} paths)")
        if lr.size > 1:
            run.check("likelihood ratio mean", abs(mean - 1) <= 3 * se,
                      f"|mean - 1| = {abs(mean - 1):.2e} <= 3 se")
    return run.finish()


def _agreements(cfg: RunConfig):
    bank, cpty = read_thresholds_csv(cfg.thresholds_file, cfg.scale)
    return [CollateralAgreement.for_regime(r, bank, cpty) for r in cfg.regimes]


def _portfolio_model(cfg: RunConfig):
    return PortfolioModel(cfg.v0, cfg.n_flows, cfg.vol_scale, cfg.maturity, cfg.postings_per_year)


def _xva_config(cfg: RunConfig):
    return XvaConfig(cfg.lgd_b, cfg.lgd_c, cfg.xva_paths, cfg.seed, cfg.bank_rating,
                     cfg.cpty_rating)


def _pre_default(cfg: RunConfig, model, measures=("P", "Q")):
    k = model.size
    out = {}
    for m in measures:
        blocks = simulate_blocks(model, m, cfg.predefault_paths, cfg.seed, ratings=range(k - 1),
                                 stream_base=STREAM_PRE[m])
        out[m] = pre_default_distribution(blocks, k)
    return out


def _write_pre_default(run: Run, hists, scale):
    for m, h in hists.items():
        with run.path(f"predefault_{m}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start/pre-default", *scale.labels])
            for i in range(scale.size):
                w.writerow([scale.labels[i], *(_fmt(x) for x in h[i])])
    with run.path("predefault_shares.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["measure", *scale.labels])
        for m, h in hists.items():
            w.writerow([m, *(_fmt(x) for x in pre_default_shares(h))])


def _check_pre_default(run: Run, hists, scale):
    c = scale.size - 2
    if "P" in hists:
        sp = pre_default_shares(hists["P"])
        run.say("P pre-default shares: " + " ".join(f"{x:.4f}" for x in sp))
        run.check("P pre-default argmax", int(np.argmax(sp)) == c,
                  f"argmax {scale.labels[int(np.argmax(sp))]}")
    if "Q" in hists:
        sq = pre_default_shares(hists["Q"])
        run.say("Q pre-default shares: " + " ".join(f"{x:.4f}" for x in sq))
    if "P" in hists and "Q" in hists:
        run.check("Q share at worst rating below P", sq[c] < sp[c], f"{sq[c]:.4f} < {sp[c]:.4f}")
        run.check("Q share from top three above P", sq[:3].sum() > sp[:3].sum(),
                  f"{sq[:3].sum():.4f} > {sp[:3].sum():.4f}")


def cmd_xva(cfg: RunConfig, out) -> int:
    run = Run(cfg, out, "xva")
    model = _model(cfg)
    pm = _portfolio_model(cfg)
    xcfg = _xva_config(cfg)
    agrs = _agreements(cfg)
    portfolio = simulate_portfolio(pm, xcfg.n_paths, xcfg.seed)
    report = estimate_xva(model, pm, agrs, xcfg, portfolio=portfolio)
    with run.path("xva_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime", "cdva", "se_cdva", "ccva", "se_ccva", "cbva", "se_cbva",
                    "bank_defaults", "cpty_defaults", "paths"])
        for r in report.regimes.values():
            w.writerow([r.regime, _fmt(r.cdva), _fmt(r.se_cdva), _fmt(r.ccva), _fmt(r.se_ccva),
                        _fmt(r.cbva), _fmt(r.se_cbva), r.n_bank_defaults, r.n_cpty_defaults,
                        report.n_paths])
    for r in report.regimes.values():
        se = ("undefined (single path)" if np.isnan(r.se_ccva)
              else f"se {r.se_cdva:.3e} / {r.se_ccva:.3e}")
        run.say(f"{r.regime}: CDVA {r.cdva:.4e}  CCVA {r.ccva:.4e}  CBVA {r.cbva:.4e}  {se}")
    run.check("CBVA identity", report.identity_holds())
    if all(r in report.regimes for r in REGIMES):
        run.check("regime ordering", report.ordering_holds(),
                  "perfect < rating-triggers < uncollateralized")
    if PERFECT in report.regimes and UNCOLLATERALIZED in report.regimes:
        p, u = report[PERFECT], report[UNCOLLATERALIZED]
        run.check("perfect CCVA positive and below uncollateralized", 0 < p.ccva < u.ccva)
    n_dump = min(cfg.dump_trajectories, xcfg.n_paths)
    if n_dump > 0:
        bank = simulate_paths(model, "Q", xcfg.bank_rating, n_dump, xcfg.seed,
                              stream=STREAM_BANK)
        cpty = simulate_paths(model, "Q", xcfg.cpty_rating, n_dump, xcfg.seed,
                              stream=STREAM_CPTY)
        grid = portfolio.grid
        rb, rc = states_at(bank, grid), states_at(cpty, grid)
        values = portfolio.values[:n_dump]
        for agr in agrs:
            coll = collateral_account_path(values, rb, rc, agr)
            write_trajectories_csv(run.path(f"trajectories_{agr.regime}.csv"), grid, values,
                                   coll, rb, rc, agr, cfg.scale)
    if cfg.xva_predefault:
        hists = _pre_default(cfg, model)
        _write_pre_default(run, hists, cfg.scale)
        _check_pre_default(run, hists, cfg.scale)
    return run.finish()


def cmd_predefault(cfg: RunConfig, out, measures=("P", "Q")) -> int:
    run = Run(cfg, out, "predefault")
    model = _model(cfg)
    hists = _pre_default(cfg, model, measures)
    _write_pre_default(run, hists, cfg.scale)
    _check_pre_default(run, hists, cfg.scale)
    return run.finish()


def cmd_report(cfg: RunConfig, out) -> int:
    """Figure data as tidy CSV and the matching PNG renderings."""
    run = Run(cfg, out, "report")
    model = _model(cfg)
    scale = cfg.scale
    fans = {m: simulate_paths(model, m, cfg.fan_rating, cfg.fan_paths, cfg.seed,
                              stream=STREAM_FAN[m] + cfg.fan_rating) for m in ("P", "Q")}
    with run.path("rating_fan.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["measure", "path", "time", "state"])
        for m, paths in fans.items():
            for n, p in enumerate(paths):
                w.writerow([m, n, "0.0", scale.labels[p.initial]])
                for t, s in zip(p.times.tolist(), p.states.tolist()):
                    w.writerow([m, n, repr(t), scale.labels[s]])
    figures.rating_fan(run.path("fig_rating_fan.png"), fans, scale)
    run.say(f"rating fan: {cfg.fan_paths} paths from {scale.labels[cfg.fan_rating]} per measure")

    # one scenario of the rating-trigger agreement; prefer one with a default
    pm = _portfolio_model(cfg)
    n_look = min(cfg.xva_paths, 200)
    portfolio = simulate_portfolio(pm, n_look, cfg.seed)
    bank = simulate_paths(model, "Q", cfg.bank_rating, n_look, cfg.seed, stream=STREAM_BANK)
    cpty = simulate_paths(model, "Q", cfg.cpty_rating, n_look, cfg.seed, stream=STREAM_CPTY)
    tau = np.minimum(default_times(bank), default_times(cpty))
    hit = np.flatnonzero(tau < pm.maturity)
    n = int(hit[0]) if hit.size else 0
    bank_thr, cpty_thr = read_thresholds_csv(cfg.thresholds_file, scale)
    agr = CollateralAgreement(bank_thr, cpty_thr, RATING_TRIGGERS)
    grid = portfolio.grid
    rb = states_at([bank[n]], grid)[0]
    rc = states_at([cpty[n]], grid)[0]
    coll = collateral_account_path(portfolio.values[n], rb, rc, agr)
    with run.path("collateral_panels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value", "collateral", "bank_rating", "cpty_rating",
                    "bank_threshold", "cpty_threshold"])
        for j, t in enumerate(grid):
            w.writerow([_fmt(t), _fmt(portfolio.values[n, j]), _fmt(coll[j]),
                        scale.labels[rb[j]], scale.labels[rc[j]],
                        _fmt(agr.bank[rb[j]]), _fmt(agr.cpty[rc[j]])])
    figures.collateral_panels(run.path("fig_collateral.png"), grid, portfolio.values[n], coll,
                              rb, rc, agr.bank[rb], agr.cpty[rc], scale)
    run.say(f"collateral panels: scenario {n}"
            + (f", default at {tau[n]:.4f}y" if tau[n] < pm.maturity else ", no default"))

    hists = _pre_default(cfg, model)
    _write_pre_default(run, hists, scale)
    figures.pre_default_bars(run.path("fig_predefault.png"), hists, scale)
    _check_pre_default(run, hists, scale)
    return run.finish()


COMMANDS = {
    "adjust": cmd_adjust,
    "extract": cmd_extract,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "xva": cmd_xva,
    "predefault": cmd_predefault,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratingxva", description="Rating-migration calibration and collateralised XVA.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "adjust": "redistribute withdrawal mass of the market matrices",
        "extract": "historical generators per interval",
        "calibrate": "fit the risk-neutral measure change and write the model",
        "simulate": "rating paths and empirical transition matrices",
        "xva": "CDVA, CCVA and CBVA for each collateral regime",
        "predefault": "distribution of the rating before default",
        "report": "figure data and PNG figures",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, default=None,
                       help="YAML run configuration (default: bundled Fitch fixtures)")
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--regime", choices=REGIMES, default=None)
        p.add_argument("--measure", choices=("P", "Q", "p", "q"), default=None)
        p.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, paths=args.paths,
                          measure=args.measure, regime=args.regime)
        if args.command == "predefault" and args.measure is not None:
            return cmd_predefault(cfg, args.out, (cfg.measure,))
        return COMMANDS[args.command](cfg, args.out)
    except (RatingDataError, CalibrationError, MatrixFunctionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
