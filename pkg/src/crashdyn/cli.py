"""Command-line front end: ingest, estimate, fit, simulate, omori, synth, pipeline.

Every command is deterministic given its arguments and seed; reruns emit
byte-identical files.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure (non-convergence under --strict).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import density, ingest, kramers_moyal, omori, simulate, surfaces, synth
from .errors import CrashdynError, DataError, UsageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None


def _load_params(model: str, path):
    cls = {
        surfaces.POTENTIAL: surfaces.PotentialParams,
        surfaces.DIFFUSION: surfaces.DiffusionParams,
        surfaces.INDEX: surfaces.IndexFitParams,
    }[model]
    doc = _load_json(path)
    doc = doc.get("params", doc)  # accept both bare params and fit output docs
    return surfaces.params_from_dict(cls, doc)


def _binning_from(args, cfg: dict) -> density.BinningSpec:
    section = cfg.get("binning", {})
    return density.BinningSpec(
        x_min=args.x_min if args.x_min is not None else section.get("x_min", -0.35),
        x_max=args.x_max if args.x_max is not None else section.get("x_max", 0.35),
        n_bins=args.bins if args.bins is not None else section.get("n_bins", 24),
    )


def _config_of(args) -> dict:
    return _load_json(args.config) if getattr(args, "config", None) else {}


def _figures_dir(out_dir: Path) -> Path:
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    return fig_dir


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    series, calendar = ingest.load_prices_with_calendar(args.prices)
    if args.crash_date not in calendar:
        raise DataError(
            f"crash date {args.crash_date} is not a trading day in {args.prices}"
        )
    crash_day = calendar.index(args.crash_date)
    ensemble = ingest.compute_returns(series, crash_day)
    ingest.write_ensemble_csv(ensemble, args.out)
    print(f"wrote {args.out}: {ensemble.n_assets} assets, days "
          f"{int(ensemble.t_axis[0])}..{int(ensemble.t_axis[-1])}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synth.OuSpec(
        theta=args.theta, D=args.noise, n_assets=args.assets,
        n_days=args.days, dt=args.dt, seed=args.seed or 0,
    )
    ensemble = synth.generate_ou(spec)
    ingest.write_ensemble_csv(ensemble, args.out)
    print(f"wrote {args.out}: {ensemble.n_assets} assets x {len(ensemble.t_axis)} days")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config_of(args)
    ensemble = ingest.read_ensemble_csv(args.ensemble)
    binning = _binning_from(args, cfg)
    field = kramers_moyal.estimate_coefficients(
        ensemble, binning, min_count=args.min_count
    )
    field = kramers_moyal.reconstruct_potential(field)
    kramers_moyal.write_field_csv(field, args.out)
    print(f"wrote {args.out}: {len(field.t_axis)} days x {binning.n_bins} bins, "
          f"{int(field.supported.sum())} supported cells")
    if args.densities:
        _write_one_point_densities(ensemble, binning, args.densities)
        print(f"wrote {args.densities}")
    return EXIT_OK


def _write_one_point_densities(ensemble, binning, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "x_bin_center", "density"))
        for t in ensemble.t_axis:
            try:
                grid = density.one_point(ensemble, int(t), binning)
            except DataError:
                continue
            for c, v in zip(binning.centers, grid.values):
                writer.writerow((int(t), repr(float(c)), repr(float(v))))


def _read_fit_data(path, model: str):
    path = Path(path)
    if not path.exists():
        raise DataError(f"fit data not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no rows")
        want = ("x", "t", "value") if model == surfaces.POTENTIAL else ("t", "value")
        if tuple(h.strip() for h in header) != want:
            raise DataError(f"{path}: expected header {','.join(want)}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad number") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows)
    if model == surfaces.POTENTIAL:
        return data[:, :2], data[:, 2]
    return data[:, 0], data[:, 1]


_DEFAULT_PARAMS = {
    surfaces.POTENTIAL: surfaces.OCT87_POTENTIAL,
    surfaces.DIFFUSION: surfaces.OCT87_DIFFUSION,
    surfaces.INDEX: surfaces.OCT87_INDEX_FIT,
}


def cmd_fit(args) -> int:
    coords, values = _read_fit_data(args.data, args.model)
    init = _load_params(args.model, args.init) if args.init else _DEFAULT_PARAMS[args.model]
    report = surfaces.fit(
        args.model, coords, values, init.as_vector(),
        tol=args.tol, max_iter=args.max_iter, t_floor=args.t_floor,
    )
    cls = type(init)
    fitted = cls.from_vector(report.params)
    _write_json({"params": surfaces.params_to_dict(fitted), "report": report.to_dict()}, args.out)
    print(f"wrote {args.out}: residual={report.residual_sum:.6g} "
          f"converged={report.converged} iterations={report.iterations}")
    if args.strict and not report.converged:
        print("fit did not converge (strict mode)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _sim_config(args, cfg: dict) -> simulate.SimConfig:
    section = cfg.get("sim", {})

    def pick(flag, key, default):
        return flag if flag is not None else section.get(key, default)

    return simulate.SimConfig(
        t_start=pick(args.t_start, "t_start", 0.0),
        t_end=pick(args.t_end, "t_end", 25.0),
        substeps_per_day=pick(args.substeps, "substeps_per_day", 50),
        n_accepted_target=pick(args.target, "n_accepted_target", 150),
        decline_threshold=pick(args.decline_threshold, "decline_threshold", 0.25),
        max_attempts=pick(args.max_attempts, "max_attempts", 20_000),
        seed=args.seed if args.seed is not None else cfg.get("seed", 0),
        x0=pick(args.x0, "x0", 0.0),
        s0=pick(args.s0, "s0", 1.0),
    )


class _StrictNonConvergence(CrashdynError):
    pass


def _run_simulation(pparams, dparams, config, out_dir: Path, *,
                    dump_trajectories: bool, figures: bool, strict: bool):
    result = simulate.simulate_index(
        pparams, dparams, config, keep_trajectories=dump_trajectories
    )
    simulate.write_index_csv(result, out_dir / "index.csv")
    _write_json(
        {
            "params": surfaces.params_to_dict(result.fit_params),
            "report": result.fit_report.to_dict(),
            "n_accepted": result.n_accepted,
            "n_attempted": result.n_attempted,
            "n_aborted": result.n_aborted,
            "acceptance_rate": result.acceptance_rate,
            "partial": result.partial,
        },
        out_dir / "index_fit.json",
    )
    if dump_trajectories:
        simulate.write_trajectories_csv(result, out_dir / "trajectories.csv")
    if figures:
        from . import figures as figmod

        figmod.save_index_figure(result, _figures_dir(out_dir) / "index.png")
    if result.partial:
        print(f"warning: only {result.n_accepted} of {config.n_accepted_target} "
              f"trajectories accepted in {result.n_attempted} attempts", file=sys.stderr)
    if strict and not result.fit_report.converged:
        raise _StrictNonConvergence("index fit did not converge")
    return result


def cmd_simulate(args) -> int:
    cfg = _config_of(args)
    pparams = (
        _load_params(surfaces.POTENTIAL, args.potential)
        if args.potential else surfaces.OCT87_POTENTIAL
    )
    dparams = (
        _load_params(surfaces.DIFFUSION, args.diffusion)
        if args.diffusion else surfaces.OCT87_DIFFUSION
    )
    config = _sim_config(args, cfg)
    out_dir = Path(args.out_dir or cfg.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = _run_simulation(
            pparams, dparams, config, out_dir,
            dump_trajectories=args.dump_trajectories,
            figures=not args.no_figures, strict=args.strict,
        )
    except _StrictNonConvergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {out_dir}/index.csv: {result.n_accepted} accepted of "
          f"{result.n_attempted} attempts, omega={result.fit_params.omega:.4g}")
    return EXIT_OK


def _read_trajectories(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    by_traj: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != simulate.TRAJECTORY_HEADER:
            raise DataError(f"{path}: expected header {','.join(simulate.TRAJECTORY_HEADER)}")
        for line_no, rec in enumerate(reader, start=2):
            try:
                traj, t, x, s = int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{line_no}: bad row") from None
            by_traj.setdefault(traj, []).append((t, x, s))
    if not by_traj:
        raise DataError(f"{path}: no rows")
    times = None
    states, levels = [], []
    for traj in sorted(by_traj):
        rows = sorted(by_traj[traj])
        ts = np.array([r[0] for r in rows])
        if times is None:
            times = ts
        elif ts.shape != times.shape or np.any(ts != times):
            raise DataError(f"{path}: trajectory {traj} has a different time grid")
        states.append([r[1] for r in rows])
        levels.append([r[2] for r in rows])
    return times, np.asarray(states), np.asarray(levels)


def _omori_outputs(stats: omori.OmoriEnsemble, out_dir: Path, figures: bool) -> None:
    for m in stats.multiples:
        omori.write_counts_csv(
            stats.times, stats.mean_counts[m], out_dir / f"omori_counts_{m:g}sigma.csv"
        )
    omori.write_summary_json(stats, out_dir / "omori_summary.json")
    if figures:
        from . import figures as figmod

        figmod.save_omori_figure(stats, _figures_dir(out_dir) / "omori.png")


def cmd_omori(args) -> int:
    times, states, levels = _read_trajectories(args.returns)
    returns = np.diff(states, axis=1)
    return_times = times[1:].astype(int)
    if args.sigma is not None:
        sigma = args.sigma
    else:
        mean_level = levels.mean(axis=0)
        sigma = omori.return_std(np.diff(np.log(mean_level)))
    stats = omori.ensemble_statistics(
        returns, return_times, multiples=tuple(args.multiples), sigma=sigma
    )
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    _omori_outputs(stats, out_dir, not args.no_figures)
    shown = ", ".join(
        f"Omega({m:g}sigma)={stats.mean_exponent[m]:.4g}" for m in stats.multiples
    )
    print(f"wrote {out_dir}/omori_summary.json: sigma={stats.sigma:.4g}, {shown}")
    return EXIT_OK


# ---------------------------------------------------------------- pipeline


def _validate_pipeline_config(cfg: dict, args) -> list:
    missing = []
    if "input" not in cfg:
        missing.append("input")
    else:
        kind = cfg["input"].get("kind")
        if kind not in ("synth-ou", "csv", "ensemble"):
            missing.append("input.kind (one of synth-ou, csv, ensemble)")
        elif kind == "csv":
            missing.extend(
                f"input.{key}" for key in ("prices", "crash_date") if key not in cfg["input"]
            )
        elif kind == "ensemble" and "path" not in cfg["input"]:
            missing.append("input.path")
    if args.out_dir is None and "out_dir" not in cfg:
        missing.append("out_dir")
    return missing


def _pipeline_ensemble(cfg: dict, seed: int):
    section = cfg["input"]
    kind = section["kind"]
    if kind == "synth-ou":
        spec = synth.OuSpec(
            theta=section.get("theta", 0.5),
            D=section.get("D", 0.01),
            n_assets=section.get("n_assets", 500),
            n_days=section.get("n_days", 30),
            dt=section.get("dt", 0.01),
            seed=section.get("seed", seed),
        )
        return synth.generate_ou(spec)
    if kind == "csv":
        series, calendar = ingest.load_prices_with_calendar(section["prices"])
        crash_date = section["crash_date"]
        if crash_date not in calendar:
            raise DataError(f"crash date {crash_date} is not a trading day in the data")
        return ingest.compute_returns(series, calendar.index(crash_date))
    return ingest.read_ensemble_csv(section["path"])


def cmd_pipeline(args) -> int:
    if not args.config:
        raise UsageError("pipeline requires --config")
    cfg = _load_json(args.config)
    missing = _validate_pipeline_config(cfg, args)
    if missing:
        raise UsageError(f"pipeline config is missing keys: {', '.join(missing)}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = Path(args.out_dir or cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    render = cfg.get("figures", True)

    # ingest
    ensemble = _pipeline_ensemble(cfg, seed)
    ingest.write_ensemble_csv(ensemble, out_dir / "ensemble.csv")

    # estimate
    binning_cfg = cfg.get("binning", {})
    binning = density.BinningSpec(
        x_min=binning_cfg.get("x_min", -0.35),
        x_max=binning_cfg.get("x_max", 0.35),
        n_bins=binning_cfg.get("n_bins", 24),
    )
    field = kramers_moyal.estimate_coefficients(ensemble, binning)
    field = kramers_moyal.reconstruct_potential(field)
    kramers_moyal.write_field_csv(field, out_dir / "field.csv")
    _write_one_point_densities(ensemble, binning, out_dir / "densities.csv")

    # fit the model surfaces to the estimated field
    fit_cfg = cfg.get("fit", {})
    tol = fit_cfg.get("tol", 1e-10)
    max_iter = fit_cfg.get("max_iter", 10_000)
    pparams = _pipeline_params(cfg, "potential", surfaces.PotentialParams, surfaces.OCT87_POTENTIAL)
    dparams = _pipeline_params(cfg, "diffusion", surfaces.DiffusionParams, surfaces.OCT87_DIFFUSION)
    fitted = {}
    reports = {}
    for model in fit_cfg.get("models", ["diffusion", "potential"]):
        coords, values, init = _field_fit_data(field, model, pparams, dparams)
        if coords is None:
            continue
        report = surfaces.fit(model, coords, values, init.as_vector(), tol=tol, max_iter=max_iter)
        cls = type(init)
        fitted[model] = cls.from_vector(report.params)
        reports[model] = report
        _write_json(
            {"params": surfaces.params_to_dict(fitted[model]), "report": report.to_dict()},
            out_dir / f"fit_{model}.json",
        )
    if args.strict and any(not r.converged for r in reports.values()):
        bad = [m for m, r in reports.items() if not r.converged]
        print(f"surface fit(s) did not converge: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERICAL

    # simulate with the configured parameters (or the freshly fitted ones)
    sim_cfg = cfg.get("sim", {})
    if sim_cfg.get("use_fitted", False):
        pparams = fitted.get("potential", pparams)
        dparams = fitted.get("diffusion", dparams)
    config = simulate.SimConfig(
        t_start=sim_cfg.get("t_start", 0.0),
        t_end=sim_cfg.get("t_end", 25.0),
        substeps_per_day=sim_cfg.get("substeps_per_day", 50),
        n_accepted_target=sim_cfg.get("n_accepted_target", 150),
        decline_threshold=sim_cfg.get("decline_threshold", 0.25),
        max_attempts=sim_cfg.get("max_attempts", 20_000),
        seed=seed,
        x0=sim_cfg.get("x0", 0.0),
        s0=sim_cfg.get("s0", 1.0),
    )
    try:
        result = _run_simulation(
            pparams, dparams, config, out_dir,
            dump_trajectories=True, figures=render, strict=args.strict,
        )
    except _StrictNonConvergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERICAL

    # aftershock statistics on the accepted ensemble
    sigma = omori.return_std(result.mean_index_returns)
    stats = omori.ensemble_statistics(
        result.accepted_returns,
        result.return_times,
        multiples=tuple(cfg.get("omori", {}).get("multiples", [1.0, 1.5])),
        sigma=sigma,
    )
    _omori_outputs(stats, out_dir, render)

    if render:
        from . import figures as figmod

        fig_dir = _figures_dir(out_dir)
        figmod.save_field_figures(
            field, fig_dir / "estimated_potential.png", fig_dir / "estimated_diffusion.png"
        )
        figmod.save_model_potential_figure(pparams, fig_dir / "model_potential.png")
        figmod.save_model_diffusion_figure(
            dparams, fig_dir / "model_diffusion.png", t_floor=config.step
        )
    print(f"pipeline complete: artifacts in {out_dir}")
    return EXIT_OK


def _pipeline_params(cfg, key, cls, default):
    if key in cfg:
        return surfaces.params_from_dict(cls, cfg[key])
    return default


def _field_fit_data(field, model, pparams, dparams):
    ok = field.supported
    tt = np.broadcast_to(field.t_axis[:, None].astype(float), ok.shape)
    xx = np.broadcast_to(field.binning.centers[None, :], ok.shape)
    if model == surfaces.DIFFUSION:
        mask = ok & np.isfinite(field.diffusion) & (tt != 0.0)
        if not np.any(mask):
            return None, None, None
        return tt[mask], field.diffusion[mask], dparams
    if model == surfaces.POTENTIAL:
        mask = ok & np.isfinite(field.potential)
        if not np.any(mask):
            return None, None, None
        coords = np.column_stack([xx[mask], tt[mask]])
        return coords, field.potential[mask], pparams
    raise DataError(f"pipeline cannot fit model {model!r} from the field")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crashdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--out-dir", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--strict", action="store_true",
                       help="exit 3 when a fit fails to converge")
        return p

    p = common(sub.add_parser("ingest", help="prices CSV -> return ensemble CSV"))
    p.add_argument("--prices", required=True, help="long-format CSV: asset,date,close")
    p.add_argument("--crash-date", required=True, help="ISO date mapped to trading day 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("synth", help="generate a mean-reverting oracle ensemble"))
    p.add_argument("--theta", type=float, default=0.5, help="mean-reversion rate per day")
    p.add_argument("--noise", type=float, default=0.01, help="diffusion constant per day")
    p.add_argument("--assets", type=int, default=500)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--dt", type=float, default=0.01, help="integration substep in days")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("estimate", help="ensemble CSV -> coefficient field CSV"))
    p.add_argument("--ensemble", required=True)
    p.add_argument("--x-min", type=float, default=None)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--min-count", type=int, default=density.MIN_ROW_COUNT,
                   help="paired samples needed to trust a conditioning bin")
    p.add_argument("--densities", default=None, help="also export one-point densities here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("fit", help="least-squares fit of a model surface"))
    p.add_argument("--model", required=True, choices=surfaces.MODELS)
    p.add_argument("--data", required=True,
                   help="CSV with header t,value (x,t,value for the potential)")
    p.add_argument("--init", default=None, help="JSON with starting parameters")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--t-floor", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("simulate", help="simulate and fit the averaged index"))
    p.add_argument("--potential", default=None, help="potential params JSON")
    p.add_argument("--diffusion", default=None, help="diffusion params JSON")
    p.add_argument("--t-start", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--substeps", type=int, default=None)
    p.add_argument("--target", type=int, default=None, help="accepted trajectories wanted")
    p.add_argument("--decline-threshold", type=float, default=None)
    p.add_argument("--max-attempts", type=int, default=None)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--s0", type=float, default=None)
    p.add_argument("--dump-trajectories", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("omori", help="exceedance counts and exponents"))
    p.add_argument("--returns", required=True,
                   help="trajectory dump CSV (traj,t,x,s) from simulate")
    p.add_argument("--multiples", type=float, nargs="+", default=[1.0, 1.5])
    p.add_argument("--sigma", type=float, default=None,
                   help="threshold base; default: std of the mean-index returns")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_omori)

    p = common(sub.add_parser("pipeline", help="run every stage from one JSON config"))
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CrashdynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
