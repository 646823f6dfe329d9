"""Command-line interface: simulate, fit, summarize, criteria, benchmark.

Every command is deterministic given its inputs and seed, resolves its
configuration through flags > environment > config file > defaults, and
writes the fully resolved configuration to ``run_config.txt`` in the output
directory.  Exit codes: 2 invalid configuration, 3 chain failure (partial
outputs retained), 4 draw-container version mismatch, 5 dataset digest
mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    EXIT_CHAIN,
    EXIT_CONFIG,
    EXIT_HASH,
    EXIT_VERSION,
    ConfigError,
    Settings,
)
from .criteria import compute_criteria
from .io import (
    FormatError,
    VersionError,
    dataset_hash,
    load_dataset,
    read_draws,
    save_dataset,
    write_draws,
    write_report_rows,
    write_summary,
    atomic_write_text,
)
from .posterior import SummaryOptions, summarize
from .sampler import run_chain
from .simgen import (
    FitConfig,
    generate,
    run_experiment,
    run_selection_experiment,
)
from .splines import BasisConfig, build_basis

_FMT = "{:.17g}".format


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=os.environ.get("FUNFACTOR_CONFIG"),
                        help="INI config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")


def _chain_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chains", type=int, default=None)
    parser.add_argument("--iterations", type=int, default=None)
    parser.add_argument("--burnin", type=int, default=None)
    parser.add_argument("--thin", type=int, default=None)


def _settings(args, extra_overrides=None) -> Settings:
    overrides = {
        ("chain", "seed"): getattr(args, "seed", None),
        ("chain", "chains"): getattr(args, "chains", None),
        ("chain", "iterations"): getattr(args, "iterations", None),
        ("chain", "burnin"): getattr(args, "burnin", None),
        ("chain", "thin"): getattr(args, "thin", None),
        ("bands", "alpha"): getattr(args, "alpha", None),
        ("output", "dir"): getattr(args, "out", None),
    }
    overrides.update(extra_overrides or {})
    return Settings(config_path=args.config, overrides=overrides)


def _provenance(settings: Settings, out_dir: Path) -> None:
    atomic_write_text(out_dir / "run_config.txt", settings.effective())


def _basis_meta(cfg: BasisConfig) -> dict:
    return {"degree": cfg.degree, "interior_knots": list(cfg.interior_knots),
            "domain": list(cfg.domain)}


def _basis_from_meta(meta: dict) -> BasisConfig:
    return BasisConfig(degree=int(meta["degree"]),
                       interior_knots=tuple(meta["interior_knots"]),
                       domain=(meta["domain"][0], meta["domain"][1]))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    settings = _settings(args, {
        ("scenario", "case"): args.case,
        ("scenario", "subjects"): args.subjects,
    })
    spec = settings.scenario()
    seed = settings.get_int("chain", "seed")
    out = Path(settings.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    _provenance(settings, out)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    basis_s, basis_t = settings.basis("s"), settings.basis("t")
    data, truth = generate(spec, rng, smooth_basis=(basis_s, basis_t))
    save_dataset(data, out / "dataset.csv")

    s, t = data.s_grid, data.t_grid
    lines = ["s,t,value"]
    for i in range(s.size):
        for j in range(t.size):
            lines.append(f"{_FMT(s[i])},{_FMT(t[j])},{_FMT(truth.mean[i, j])}")
    atomic_write_text(out / "truth_mean.csv", "\n".join(lines) + "\n")

    G4 = truth.gram.reshape(s.size, t.size, s.size, t.size)
    lines = ["s,t,s2,t2,value"]
    for a in range(s.size):
        for b in range(t.size):
            for c in range(s.size):
                for e in range(t.size):
                    lines.append(",".join(_FMT(v) for v in
                                          (s[a], t[b], s[c], t[e], G4[a, b, c, e])))
    atomic_write_text(out / "truth_gram.csv", "\n".join(lines) + "\n")

    lines = ["axis,component,point,value"]
    for axis, funcs, pts in (("S", truth.eigen_s, s), ("T", truth.eigen_t, t)):
        for j in range(funcs.shape[1]):
            for i in range(pts.size):
                lines.append(f"{axis},{j + 1},{_FMT(pts[i])},{_FMT(funcs[i, j])}")
    atomic_write_text(out / "truth_eigenfunctions.csv", "\n".join(lines) + "\n")
    print(f"simulated case {spec.case_id}: {data.n} subjects on "
          f"{spec.n_s}x{spec.n_t} grid -> {out}")
    return 0


def cmd_fit(args) -> int:
    settings = _settings(args, {("data", "path"): args.data})
    data_path = settings.get("data", "path")
    if not data_path:
        raise ConfigError("no dataset path given (--data or [data] path)")
    data = load_dataset(data_path)
    basis_s, basis_t = settings.basis("s"), settings.basis("t")
    hyper = settings.hyper()
    chain = settings.chain()
    p1, p2 = basis_s.dim, basis_t.dim
    if hyper.q1 > p1 or hyper.q2 > p2:
        raise ConfigError(f"ranks ({hyper.q1}, {hyper.q2}) exceed basis dims "
                          f"({p1}, {p2})")
    out = Path(settings.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    _provenance(settings, out)

    draws = run_chain(data, hyper, basis_s, basis_t, chain)

    trace_lines = ["chain,iteration,loglik"]
    for cid, trace in sorted(draws.diagnostics.get("loglik_trace", {}).items()):
        for it, ll in enumerate(trace):
            trace_lines.append(f"{cid},{it},{_FMT(ll)}")
    atomic_write_text(out / "loglik_trace.csv", "\n".join(trace_lines) + "\n")

    diag_lines = ["key,value"]
    for k, v in sorted(draws.acceptance_rates.items()):
        diag_lines.append(f"acceptance_{k},{_FMT(v)}")
    diag_lines.append(
        f"trunc_gamma_fallbacks,{draws.diagnostics.get('trunc_gamma_fallbacks', 0)}")
    for f in draws.failures:
        diag_lines.append(f"chain_{f.chain_id}_failure,{f.message!r}")
    atomic_write_text(out / "diagnostics.csv", "\n".join(diag_lines) + "\n")

    if draws.states:
        meta = {
            "package_version": __version__,
            "basis_s": _basis_meta(basis_s),
            "basis_t": _basis_meta(basis_t),
            "s_grid": [float(v) for v in data.s_grid],
            "t_grid": [float(v) for v in data.t_grid],
            "hyper": {k: getattr(hyper, k) for k in
                      ("q1", "q2", "nu1", "nu2", "r1", "r2", "a_sigma",
                       "b_sigma", "a_h", "b_h", "a_phi", "b_phi")},
            "chain": {"n_iterations": chain.n_iterations,
                      "burn_in": chain.burn_in, "thin": chain.thin,
                      "n_chains": chain.n_chains, "seed": chain.seed,
                      "mh_step_sd": chain.mh_step_sd},
            "dataset_hash": dataset_hash(data),
            "x_mean": [float(v) for v in
                       (data.X.mean(axis=0) if data.n else [])],
        }
        write_draws(out / "draws.ffd", draws, meta)

    if args.figures:
        from .figures import plot_loglik_traces
        plot_loglik_traces(draws, out / "loglik_trace.png")

    if draws.failures:
        for f in draws.failures:
            print(f"chain {f.chain_id} failed at iteration {f.iteration}: "
                  f"{f.message}", file=sys.stderr)
        return EXIT_CHAIN
    print(f"stored {len(draws.states)} draws from {chain.n_chains} chain(s) "
          f"-> {out / 'draws.ffd'}")
    return 0


def cmd_summarize(args) -> int:
    settings = _settings(args)
    draws, header = read_draws(args.draws)
    meta = header["meta"]
    basis_s = _basis_from_meta(meta["basis_s"])
    basis_t = _basis_from_meta(meta["basis_t"])
    alpha = settings.get_float("bands", "alpha")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    n_comp = (args.components if args.components is not None
              else settings.get_int("bands", "components"))

    if args.grid_s:
        lo, hi = basis_s.domain
        s_points = np.linspace(lo, hi, args.grid_s)
    else:
        s_points = np.asarray(meta["s_grid"])
    if args.grid_t:
        lo, hi = basis_t.domain
        t_points = np.linspace(lo, hi, args.grid_t)
    else:
        t_points = np.asarray(meta["t_grid"])

    if args.x is not None:
        x = np.array([float(v) for v in args.x.split(",")])
    elif meta.get("x_mean"):
        x = np.asarray(meta["x_mean"])
    else:
        x = None

    out = Path(settings.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    _provenance(settings, out)

    opts = SummaryOptions(basis_s=basis_s, basis_t=basis_t, alpha=alpha,
                          n_components=n_comp, x=x)
    bundle = summarize(draws, s_points, t_points, opts)
    written = write_summary(bundle, out)
    if args.figures:
        from .figures import plot_eigenfunctions, plot_marginals, plot_mean_surface
        written.append(plot_mean_surface(bundle, out / "mean_surface.png"))
        written.append(plot_marginals(bundle, out / "marginals.png"))
        written.append(plot_eigenfunctions(bundle, out / "eigenfunctions.png"))
    print("wrote " + ", ".join(p.name for p in written) + f" -> {out}")
    return 0


def cmd_criteria(args) -> int:
    settings = _settings(args)
    data = load_dataset(args.data)
    digest = dataset_hash(data)
    out = Path(settings.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    _provenance(settings, out)

    rows = []
    for path in args.draws:
        draws, header = read_draws(path)
        meta = header["meta"]
        if meta.get("dataset_hash") != digest:
            print(f"{path}: dataset digest mismatch (fit on different data)",
                  file=sys.stderr)
            return EXIT_HASH
        basis_s = _basis_from_meta(meta["basis_s"])
        basis_t = _basis_from_meta(meta["basis_t"])
        B1 = build_basis(basis_s, data.s_grid)
        B2 = build_basis(basis_t, data.t_grid)
        report = compute_criteria(draws, data, B1, B2)
        rows.append((path, basis_s.dim, basis_t.dim, report))

    mins = {crit: min(getattr(r[3], crit) for r in rows)
            for crit in ("dic", "bic1", "bic2")}
    lines = ["model,p1,p2,dic,bic1,bic2,p_dic,n_fixed,n_total,n_obs,"
             "min_dic,min_bic1,min_bic2"]
    print(f"{'model':40s} {'p1':>3} {'p2':>3} {'DIC':>14} {'BIC1':>14} {'BIC2':>14}")
    for path, p1, p2, rep in rows:
        flags = {crit: getattr(rep, crit) == mins[crit]
                 for crit in ("dic", "bic1", "bic2")}
        marks = "".join("*" if flags[c] else " " for c in ("dic", "bic1", "bic2"))
        print(f"{str(path):40s} {p1:3d} {p2:3d} {rep.dic:14.2f} "
              f"{rep.bic1:14.2f} {rep.bic2:14.2f}  {marks}")
        lines.append(",".join([
            str(path), str(p1), str(p2), _FMT(rep.dic), _FMT(rep.bic1),
            _FMT(rep.bic2), _FMT(rep.p_dic), str(rep.n_fixed),
            str(rep.n_total), str(rep.n_obs),
            str(int(flags["dic"])), str(int(flags["bic1"])),
            str(int(flags["bic2"]))]))
    atomic_write_text(out / "criteria.csv", "\n".join(lines) + "\n")
    return 0


def cmd_benchmark(args) -> int:
    settings = _settings(args, {
        ("scenario", "case"): args.case,
        ("scenario", "subjects"): args.subjects,
    })
    spec = settings.scenario()
    seed = settings.get_int("chain", "seed")
    out = Path(settings.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    _provenance(settings, out)

    if args.mode == "selection":
        candidates = []
        for part in args.candidates.split(";"):
            p1c, p2c = part.split(",")
            candidates.append((int(p1c), int(p2c)))
        summary = run_selection_experiment(
            spec, candidates, n_replications=args.reps, seed=seed,
            hyper=replace(settings.hyper(), q1=args.q, q2=args.q)
            if args.q else settings.hyper(),
            chain=settings.chain())
        lines = ["p1,p2,criterion,mean,se,n"]
        for cand in candidates:
            for crit in ("dic", "bic1", "bic2"):
                cell = summary[cand][crit]
                lines.append(f"{cand[0]},{cand[1]},{crit},"
                             f"{_FMT(cell['mean'])},{_FMT(cell['se'])},{cell['n']}")
        atomic_write_text(out / "selection.csv", "\n".join(lines) + "\n")
        print(json.dumps({str(k): v for k, v in summary.items()}, indent=2,
                         default=str))
        return 0

    estimators = tuple(args.estimators.split(","))
    fit = FitConfig(basis_s=settings.basis("s"), basis_t=settings.basis("t"),
                    hyper=settings.hyper(), chain=settings.chain(),
                    alpha=settings.get_float("bands", "alpha"), n_components=2)
    report = run_experiment(spec, fit, n_replications=args.reps, seed=seed,
                            estimators=estimators)
    rows = report.rows()
    write_report_rows(rows, out / "benchmark.csv")
    if args.figures:
        from .figures import plot_benchmark
        plot_benchmark(rows, out / "benchmark.png")
    for r in rows:
        print(f"case {r['case']} n={r['n']} {r['quantity']:5s} "
              f"{r['estimator']:9s} median={r['median']:.4f} "
              f"({r['q10']:.4f}, {r['q90']:.4f})")
    if report.failures:
        print(f"{len(report.failures)} replication failure(s) recorded",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funfactor",
        description="Bayesian sandwich factor models for longitudinal "
                    "functional data")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset + truth")
    _common_flags(p)
    p.add_argument("--case", type=int, default=None, choices=(1, 2, 3))
    p.add_argument("--subjects", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    _common_flags(p)
    _chain_flags(p)
    p.add_argument("--data", default=None, help="long-format CSV dataset")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior summaries from a draw file")
    _common_flags(p)
    p.add_argument("--draws", required=True, help="draw container from fit")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--grid-s", type=int, default=None,
                   help="evaluation grid size on s (default: data grid)")
    p.add_argument("--grid-t", type=int, default=None)
    p.add_argument("--x", default=None,
                   help="covariate vector for the mean surface, comma-separated")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("criteria", help="information criteria for fitted models")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("draws", nargs="+", help="draw container(s)")
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("benchmark", help="Monte Carlo benchmark experiments")
    _common_flags(p)
    _chain_flags(p)
    p.add_argument("--case", type=int, default=None, choices=(1, 2, 3))
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--mode", choices=("errors", "selection"), default="errors")
    p.add_argument("--estimators", default="bayes,empirical")
    p.add_argument("--candidates", default="5,5;10,10;15,15",
                   help="selection mode: semicolon-separated p1,p2 pairs")
    p.add_argument("--q", type=int, default=None,
                   help="selection mode: latent rank for both axes")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"input format error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VersionError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VERSION
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
