"""Command-line entry point: ``ptpmx <subcommand> ...``.

All times are microseconds, loads are fractions of the link rate and every
file written is CSV.  Exit status is 0 on success, 1 on usage or input
errors and 2 when ``verify`` finds a failing property.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cf
from . import estimators as est
from . import evaluation as ev
from . import obs as ob
from . import pdf as pd
from . import properties
from . import queuesim as qs

SIM_STREAM = 2
EXIT_OK, EXIT_USAGE, EXIT_PROPERTY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{message} (see {self.prog} --help)")


def _csv_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _int_list(text):
    try:
        return tuple(int(x) for x in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _p_list(text):
    try:
        return cf.parse_p_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- shared pieces ----------------------------------------------------------

def _load_config(path):
    if path is None:
        return cf.from_parser(cf.configparser.ConfigParser())
    return cf.load(path)


def _seed(args, cfg=None):
    """``--seed`` wins, then ``PTPMX_SEED``, then the config file."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(cf.SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise cf.ConfigError(f"{cf.SEED_ENV}: not an integer: {env!r}") from None
    return cfg.evaluation.seed if cfg is not None else 0


def simulate_pdfs(traffic: cf.TrafficSettings, bin_us: float, seed: int):
    """Forward and reverse delay pdfs of a scenario, each on its own substream."""
    out = []
    for i, direction in enumerate(("forward", "reverse")):
        rng = ev.trial_rng(seed, SIM_STREAM, i)
        out.append(qs.delay_pdf(traffic.scenario, direction, traffic.probes, bin_us, rng,
                                priority=traffic.priority, warmup_packets=traffic.warmup_packets,
                                warmup_us=traffic.warmup_us))
    return out


def _pdfs_for(cfg: cf.ScenarioConfig, seed: int, f1=None, f2=None):
    f1 = f1 or cfg.estimation.f1
    f2 = f2 or cfg.estimation.f2
    if (f1 is None) != (f2 is None):
        raise UsageError("--f1 and --f2 must be given together")
    if f1 is not None:
        return pd.read_pdf_csv(f1), pd.read_pdf_csv(f2)
    return simulate_pdfs(cfg.traffic, cfg.estimation.bin_us, seed)


def _add_workers(p):
    p.add_argument("--workers", type=int, default=None, metavar="N",
                   help="worker processes for Monte Carlo trials (results do not depend on N; default 1)")


def _workers(args, cfg=None):
    n = args.workers if args.workers is not None else (cfg.evaluation.workers if cfg else 1)
    if n < 1:
        raise UsageError("--workers must be >= 1")
    return n


def _add_threshold(p):
    p.add_argument("--accuracy-us", type=float, default=None,
                   help="synchronization accuracy requirement in us (default 1.25)")
    p.add_argument("--sigma-level", type=float, default=None,
                   help="certainty level in standard deviations (default 5)")


def _threshold(args, cfg=None):
    base = cfg.threshold if cfg else ev.ThresholdSpec()
    acc = args.accuracy_us if args.accuracy_us is not None else base.accuracy
    sig = args.sigma_level if args.sigma_level is not None else base.sigma_level
    if not (acc > 0 and sig > 0):
        raise UsageError("--accuracy-us and --sigma-level must be positive")
    return ev.ThresholdSpec(acc, sig)


# -- subcommands --------------------------------------------------------------

def _traffic_from_flags(args, traffic: cf.TrafficSettings) -> cf.TrafficSettings:
    """Apply the command-line traffic overrides on top of the config file."""
    sc = traffic.scenario
    flow = args.flow or sc.flow_type
    model = qs.MODELS[args.model] if args.model else None

    def direction(cfg: qs.DirectionConfig, load, inline_load):
        cross, cross_model = cfg.cross_load, cfg.cross_model
        inline, inline_model = cfg.inline_load, cfg.inline_model
        if flow == "inline":
            inline = load if load is not None else inline
            inline_model = model or inline_model
            cross = 0.0
        else:
            cross = load if load is not None else cross
            cross_model = model or cross_model
            inline = inline_load if inline_load is not None else (inline if flow == "mixed" else 0.0)
        return qs.DirectionConfig(cross, cross_model, inline, inline_model)

    scenario = qs.TrafficScenario(
        args.link_gbps * 1e9 if args.link_gbps else sc.link_rate,
        args.switches or sc.num_switches, flow,
        direction(sc.forward, args.fwd_load, args.fwd_inline_load),
        direction(sc.reverse, args.rev_load, args.rev_inline_load))
    return replace(traffic, scenario=scenario, probes=args.probes or traffic.probes)


def cmd_simulate_delays(args):
    cfg = _load_config(args.scenario)
    traffic = _traffic_from_flags(args, cfg.traffic)
    bin_us = args.bin_us or cfg.estimation.bin_us
    seed = _seed(args, cfg)
    if args.out:
        paths = [Path(x) for x in args.out]
    else:
        paths = [Path(args.out_dir) / "f1.csv", Path(args.out_dir) / "f2.csv"]
    for i, (direction, path) in enumerate(zip(("forward", "reverse"), paths)):
        path.parent.mkdir(parents=True, exist_ok=True)
        rng = ev.trial_rng(seed, SIM_STREAM, i)
        trace = qs.simulate_cascade(traffic.scenario, direction, traffic.probes, rng,
                                    priority=traffic.priority, warmup_packets=traffic.warmup_packets,
                                    warmup_us=traffic.warmup_us)
        pd.write_pdf_csv(pd.from_samples(trace.ete_delays, bin_us), path)
        if args.traces:
            trace.write_csv(path.with_name(path.stem + "_trace.csv"))
    print(f"wrote {paths[0]} and {paths[1]}")


def cmd_estimate(args):
    f1, f2 = pd.read_pdf_csv(args.f1), pd.read_pdf_csv(args.f2)
    if args.bin_us:
        f1, f2 = pd.rebin(f1, args.bin_us), pd.rebin(f2, args.bin_us)
    o = ob.read_obs_csv(args.obs)
    if args.model and args.model.upper() != o.kind.variant:
        raise UsageError(f"--model {args.model} does not match the {o.kind.variant}-model observation file")
    bias = est.BiasTable.read_csv(args.bias_table) if args.bias_table else None
    names = args.estimator or ("minimax",)
    rows = []
    for name in names:
        if name != "minimax" and name not in est.FILTERS:
            raise UsageError(f"unknown estimator {name!r}; choose minimax or {', '.join(est.FILTERS)}")
        r = est.estimate(o, f1, f2, name, args.step_us, bias)
        compensated = name != "minimax" and bias is not None
        step = "exact" if name == "minimax" and r.step is None else (repr(r.step) if r.step else "")
        print(f"{name}: {r.estimate:.9f} us")
        rows.append(f"{name},{o.kind.variant},{o.kind.P},{o.kind.B or 0},{r.estimate!r},"
                    f"{int(compensated)},{r.grid_bins_used},{r.log_normalizer!r},{step}")
    if args.out:
        _emit("estimator,model,P,B,estimate_us,bias_compensated,grid_bins_used,log_normalizer,step_us\n"
              + "\n".join(rows) + "\n", args.out)


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_bias_table(args):
    f1, f2 = pd.read_pdf_csv(args.f1), pd.read_pdf_csv(args.f2)
    bad = [f for f in args.filters if f not in est.FILTERS]
    if bad:
        raise UsageError(f"unknown filter {bad[0]!r}; choose {', '.join(est.FILTERS)}")
    seed = _seed(args)
    table = est.BiasTable()
    for P in args.p:
        table.update(ev.bias_for(args.filters, P, f1, f2, seed, args.trials))
    table.write_csv(args.out)
    print(f"wrote {args.out}")


def cmd_benchmark(args):
    cfg = _load_config(args.scenario)
    e, v = cfg.estimation, cfg.evaluation
    seed = _seed(args, cfg)
    models = tuple(m.upper() for m in args.models) if args.models else e.models
    estimators = args.estimators or e.estimators
    P_values = args.p or v.P_values
    trials = args.trials or v.trials
    B = args.b or v.B
    step = args.step_us if args.step_us is not None else e.step_us
    bias_trials = args.bias_trials or v.bias_trials
    for m in models:
        if m not in ("K", "S", "M"):
            raise UsageError(f"unknown model {m!r}; choose k, s or m")
    for n in estimators:
        if n != "minimax" and n not in est.FILTERS:
            raise UsageError(f"unknown estimator {n!r}; choose minimax or {', '.join(est.FILTERS)}")
    f1, f2 = _pdfs_for(cfg, seed, args.f1, args.f2)
    est._common_width(f1, f2)
    bias = est.BiasTable.read_csv(args.bias_table or e.bias_table) if (args.bias_table or e.bias_table) else None
    workers = _workers(args, cfg)
    curves = []
    for m in models:
        # conventional filters only make sense for the two-direction S data
        names = estimators if m == "S" else tuple(n for n in estimators if n == "minimax")
        if not names:
            continue
        curves += ev.curve(names, m, P_values, B if m == "M" else None, f1, f2, trials, seed,
                           step=step, bias=bias, bias_trials=bias_trials, workers=workers)
    ev.write_curves_csv(curves, args.out, _threshold(args, cfg))
    print(f"wrote {args.out}")


def cmd_corollary(args):
    seed = _seed(args)
    if args.f1 and args.f2:
        f1, f2 = pd.read_pdf_csv(args.f1), pd.read_pdf_csv(args.f2)
    elif args.f1 or args.f2:
        raise UsageError("--f1 and --f2 must be given together")
    else:
        cfg = qs.DirectionConfig(args.load, qs.MODELS[args.model])
        f1 = pd.from_samples(qs.simulate_cross_single_node(cfg, 1e9, args.probes, ev.trial_rng(seed, SIM_STREAM, 0)),
                             args.bin_us)
        f2 = pd.from_samples(qs.simulate_cross_single_node(cfg, 1e9, args.probes, ev.trial_rng(seed, SIM_STREAM, 1)),
                             args.bin_us)
    rows = ev.corollary_check(f1, f2, args.k, args.l, args.P, args.trials, seed, step=args.step_us,
                              workers=_workers(args), slack=args.slack)
    ev.write_corollary_csv(rows, args.out)
    for r in rows:
        print(f"K={r.K} L={r.L} rho(KL)={r.rho_KL:.6g} K*rho(L)={r.K * r.rho_L:.6g} holds={int(r.holds)}")
    return EXIT_OK if all(r.holds for r in rows) else EXIT_PROPERTY


def cmd_verify(args):
    extra = {}
    for path in args.pdf or ():
        extra[Path(path).name] = pd.read_pdf_csv(path, validate=False)
    report = properties.property_suite(_seed(args), _threshold(args), extra)
    _emit(report.to_csv(), args.out)
    failed = [r.name for r in report.results if not r.passed]
    if failed:
        print(f"failed properties: {' '.join(failed)}", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


# desk-scale scenarios behind each MSE figure; loads are fractions
def _cross(fwd, rev, n):
    return qs.TrafficScenario(1e9, n, "cross", qs.DirectionConfig(fwd, qs.TM1), qs.DirectionConfig(rev, qs.TM1))


def _mixed(fwd_inline, rev_inline, n, cross=0.2):
    mk = lambda inline: qs.DirectionConfig(cross, qs.TM2, inline, qs.UNIFORM_INLINE)  # noqa: E731
    return qs.TrafficScenario(1e9, n, "mixed", mk(fwd_inline), mk(rev_inline))


FIGURES = {
    "mse_symm_cross_20": lambda n: _cross(0.2, 0.2, n),
    "mse_symm_cross_40": lambda n: _cross(0.4, 0.4, n),
    "mse_symm_cross_60": lambda n: _cross(0.6, 0.6, n),
    "mse_symm_cross_80": lambda n: _cross(0.8, 0.8, n),
    "mse_symm_mixed_low": lambda n: _mixed(0.2, 0.2, n),
    "mse_symm_mixed_high": lambda n: _mixed(0.4, 0.4, n),
    "mse_asymm_cross": lambda n: _cross(0.8, 0.2, n),
    "mse_asymm_mixed": lambda n: _mixed(0.4, 0.2, n),
}
FIGURE_ESTIMATORS = ("minimax",) + est.FILTERS


def figure_curves(name, switches, probes, bin_us, P_values, trials, seed, *, bias_trials, workers=1,
                  step=None):
    traffic = cf.TrafficSettings(FIGURES[name](switches), probes)
    f1, f2 = simulate_pdfs(traffic, bin_us, seed)
    curves = ev.curve(["minimax"], "K", P_values, None, f1, f2, trials, seed, step=step, workers=workers)
    curves += ev.curve(FIGURE_ESTIMATORS, "S", P_values, None, f1, f2, trials, seed, step=step,
                       bias_trials=bias_trials, workers=workers)
    return curves


def cmd_plot_data(args):
    names = list(FIGURES) if args.figure == "all" else [args.figure]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args)
    threshold = _threshold(args)
    for name in names:
        curves = figure_curves(name, args.switches, args.probes, args.bin_us, args.p, args.trials, seed,
                               bias_trials=args.bias_trials, workers=_workers(args), step=args.step_us)
        ev.write_curves_csv(curves, out / f"{name}.csv", threshold)
        print(f"wrote {out / (name + '.csv')}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ptpmx", description="Minimax clock-offset estimation for packet timing protocols. "
                                          "Times in microseconds (us), loads as fractions of link rate.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate-delays", help="simulate queuing delays and write forward/reverse pdf CSVs")
    s.add_argument("--scenario", metavar="FILE", help="scenario config file (key = value sections)")
    s.add_argument("--switches", type=int, help="switches along the path (count)")
    s.add_argument("--flow", choices=("cross", "inline", "mixed"), help="background flow type")
    s.add_argument("--fwd-load", type=float, help="forward load (fraction of link rate; inline load for inline flow)")
    s.add_argument("--rev-load", type=float, help="reverse load (fraction of link rate)")
    s.add_argument("--fwd-inline-load", type=float, help="forward inline load for mixed flow (fraction)")
    s.add_argument("--rev-inline-load", type=float, help="reverse inline load for mixed flow (fraction)")
    s.add_argument("--model", choices=sorted(qs.MODELS), help="packet-size model of the loads above")
    s.add_argument("--link-gbps", type=float, help="link rate in Gbit/s (default 1)")
    s.add_argument("--probes", type=int, help="probe packets per direction (count)")
    s.add_argument("--bin-us", type=float, help="pdf bin width in us (default from config, else 0.01)")
    s.add_argument("--seed", type=int, help="random seed (integer)")
    s.add_argument("--out", nargs=2, metavar=("FWD", "REV"), help="forward and reverse pdf CSV paths")
    s.add_argument("--out-dir", default=".", metavar="DIR", help="directory for f1.csv / f2.csv when --out is absent")
    s.add_argument("--traces", action="store_true", help="also write per-node probe delays (us) next to each pdf")
    s.set_defaults(func=cmd_simulate_delays)

    s = sub.add_parser("estimate", help="estimate the offset (us) from an observation CSV")
    s.add_argument("--obs", required=True, metavar="FILE", help="observations CSV (values in us)")
    s.add_argument("--f1", required=True, metavar="FILE", help="forward delay pdf CSV (bin width in us)")
    s.add_argument("--f2", required=True, metavar="FILE", help="reverse delay pdf CSV (bin width in us)")
    s.add_argument("--model", choices=("k", "s", "m", "K", "S", "M"), help="expected observation model")
    s.add_argument("--estimator", "--estimators", type=_csv_list, dest="estimator",
                   help="minimax, min, max, mean or median; comma list allowed (default minimax)")
    s.add_argument("--bin-us", type=float, help="rebin both pdfs to this width in us (a whole multiple)")
    s.add_argument("--bias-table", metavar="FILE", help="bias CSV (us) used to compensate conventional filters")
    s.add_argument("--step-us", type=float, help="Riemann spacing in us (default: exact or adaptive integration)")
    s.add_argument("--out", metavar="FILE", help="also write the estimate report CSV here")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("bias-table", help="Monte Carlo bias of conventional filters, in us")
    s.add_argument("--f1", required=True, metavar="FILE", help="forward delay pdf CSV")
    s.add_argument("--f2", required=True, metavar="FILE", help="reverse delay pdf CSV")
    s.add_argument("--filters", type=_csv_list, default=est.FILTERS, help="comma list of filters (default all)")
    s.add_argument("--p", type=_p_list, default=(1, 2, 4, 8, 16, 32, 64, 128, 256),
                   help="samples per direction: comma list or a..b powers of two (count)")
    s.add_argument("--trials", type=int, default=ev.DEFAULT_BIAS_TRIALS, help="Monte Carlo trials (count)")
    s.add_argument("--seed", type=int, help="random seed (integer)")
    s.add_argument("--out", default="bias.csv", metavar="FILE", help="output CSV (mu_us, se_us)")
    s.set_defaults(func=cmd_bias_table)

    s = sub.add_parser("benchmark", help="MSE-versus-P curves (us^2) for a scenario")
    s.add_argument("--scenario", metavar="FILE", help="scenario config file")
    s.add_argument("--f1", metavar="FILE", help="forward pdf CSV (skips simulation)")
    s.add_argument("--f2", metavar="FILE", help="reverse pdf CSV (skips simulation)")
    s.add_argument("--estimators", type=_csv_list, help="comma list: minimax, min, max, mean, median")
    s.add_argument("--models", type=_csv_list, help="comma list of observation models: k, s, m")
    s.add_argument("--p", type=_p_list, help="samples per direction: comma list or a..b powers of two")
    s.add_argument("--b", type=int, help="past blocks for the M model (count)")
    s.add_argument("--trials", type=int, help="Monte Carlo trials per P (count)")
    s.add_argument("--bias-trials", type=int, help="Monte Carlo trials per bias entry (count)")
    s.add_argument("--bias-table", metavar="FILE", help="precomputed bias CSV (us)")
    s.add_argument("--step-us", type=float, help="Riemann spacing in us (default: exact or adaptive)")
    s.add_argument("--seed", type=int, help="random seed (integer; overrides PTPMX_SEED and config)")
    s.add_argument("--out", default="curves.csv", metavar="FILE", help="output CSV (mse_us2, ci_us2)")
    _add_threshold(s)
    _add_workers(s)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("corollary", help="check that minimax MSE grows at least linearly with nodes")
    s.add_argument("--f1", metavar="FILE", help="single-node forward pdf CSV")
    s.add_argument("--f2", metavar="FILE", help="single-node reverse pdf CSV")
    s.add_argument("--load", type=float, default=0.4, help="cross-traffic load when simulating (fraction, default 0.4)")
    s.add_argument("--model", choices=sorted(qs.MODELS), default="tm1", help="packet-size model when simulating")
    s.add_argument("--probes", type=int, default=200_000, help="probes when simulating (count)")
    s.add_argument("--bin-us", type=float, default=0.01, help="pdf bin width in us (default 0.01)")
    s.add_argument("--k", type=_int_list, default=(1, 2, 4), help="comma list of split factors K (count)")
    s.add_argument("--l", type=int, default=1, help="nodes per sub-cascade L (count)")
    s.add_argument("--P", type=int, default=4, help="samples per direction (count, default 4)")
    s.add_argument("--trials", type=int, default=ev.DEFAULT_TRIALS, help="Monte Carlo trials (count)")
    s.add_argument("--slack", type=float, default=0.05, help="relative slack on the bound (fraction, default 0.05)")
    s.add_argument("--step-us", type=float, help="Riemann spacing in us (default exact)")
    s.add_argument("--seed", type=int, help="random seed (integer)")
    s.add_argument("--out", default="corollary.csv", metavar="FILE", help="output CSV (us^2)")
    _add_workers(s)
    s.set_defaults(func=cmd_corollary)

    s = sub.add_parser("verify", help="run the property self-checks")
    s.add_argument("--seed", type=int, help="random seed (integer)")
    s.add_argument("--pdf", action="append", metavar="FILE",
                   help="extra pdf CSV to include in the normalization check (repeatable)")
    s.add_argument("--out", metavar="FILE", help="write the report CSV here instead of stdout")
    _add_threshold(s)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("plot-data", help="per-figure MSE CSVs (us^2) for external plotting")
    s.add_argument("--figure", choices=["all", *FIGURES], default="all", help="figure to generate")
    s.add_argument("--out-dir", default=".", metavar="DIR", help="output directory")
    s.add_argument("--switches", type=int, default=4, help="switches per path (count, default 4)")
    s.add_argument("--probes", type=int, default=200_000, help="probes per direction (count)")
    s.add_argument("--bin-us", type=float, default=0.01, help="pdf bin width in us (default 0.01)")
    s.add_argument("--p", type=_p_list, default=(1, 2, 4, 8, 16, 32, 64, 128, 256),
                   help="samples per direction: comma list or a..b powers of two")
    s.add_argument("--trials", type=int, default=ev.DEFAULT_TRIALS, help="Monte Carlo trials per P (count)")
    s.add_argument("--bias-trials", type=int, default=ev.DEFAULT_BIAS_TRIALS,
                   help="Monte Carlo trials per bias entry (count)")
    s.add_argument("--step-us", type=float, help="Riemann spacing in us (default exact)")
    s.add_argument("--seed", type=int, help="random seed (integer)")
    _add_threshold(s)
    _add_workers(s)
    s.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        code = args.func(args)
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"ptpmx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (cf.ConfigError, pd.PdfError, ob.ShapeError, est.EmptyPosterior, qs.UnstableQueue,
            OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.filename}: {exc.strerror}"
        print(f"ptpmx: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
