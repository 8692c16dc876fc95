"""Command-line front end.

Subcommands: run, sweep, rates, verify-lyapunov, datagen, plot.  Exit
codes: 0 success, 1 usage error, 2 runtime error, 3 verification failure.
"""
import argparse
import os
import sys

from . import harness, theory
from .data import SynthSpec, serialize_libsvm, synth_generate

_CONFIG_FLAG_KEYS = ("method", "data", "family", "lam", "alpha", "step",
                     "batch", "step_rule", "passes", "seed", "stride",
                     "synth_n", "synth_p", "synth_nnz", "synth_het",
                     "synth_noise", "synth_seed")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(sub):
    sub.add_argument("--config", help="config file (key = value lines)")
    for key in _CONFIG_FLAG_KEYS:
        sub.add_argument("--" + key.replace("_", "-"))
    sub.add_argument("--out", default=".", help="output directory")


def _load_config(args):
    overrides = {}
    for key in _CONFIG_FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.config:
        return harness.ExperimentConfig.from_file(args.config, overrides)
    return harness.ExperimentConfig.from_mapping(overrides)


def _write_reference(reference, path):
    with open(path, "w") as fh:
        fh.write("f_star = %.17g\n" % reference.f_star)
        fh.write("grad_norm_at_star = %.17g\n" % reference.grad_norm_at_star)
        fh.write("sigma_sq = %.17g\n" % reference.sigma_sq)


def _cmd_run(args):
    config = _load_config(args)
    trace = harness.run_experiment(config)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, config.method + ".csv")
    svg_path = os.path.join(args.out, config.method + ".svg")
    harness.emit_csv(trace, csv_path)
    harness.emit_svg([(config.method, trace)], svg_path)
    _write_reference(trace.reference, os.path.join(args.out, "reference.txt"))
    last = trace.rows[-1]
    print("%s: %.6g passes, final suboptimality %.6g" %
          (config.method, last[0], last[2]))
    print("wrote %s, %s" % (csv_path, svg_path))
    return 0


def _cmd_sweep(args):
    config = _load_config(args)
    grid = None
    if args.alpha_grid:
        grid = [float(tok) for tok in args.alpha_grid.split(",") if tok]
    result = harness.grid_sweep(config, alpha_grid=grid)
    os.makedirs(args.out, exist_ok=True)
    labeled = []
    for alpha in sorted(result.traces):
        trace = result.traces[alpha]
        label = "%s_a%g" % (config.method, alpha)
        harness.emit_csv(trace, os.path.join(args.out, label + ".csv"))
        labeled.append((label, trace))
    harness.emit_svg(labeled, os.path.join(args.out, "sweep.svg"))
    for warning in result.warnings:
        print("warning: %s" % warning)
    if result.best_alpha is None:
        print("no finite result in the grid")
        return 2
    print("best alpha %.6g with final suboptimality %.6g" %
          (result.best_alpha, result.best_trace.final_suboptimality))
    return 0


def _parse_kv(spec):
    out = {}
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        key, sep, value = tok.partition("=")
        if not sep:
            raise ValueError("expected key=value, got %r" % tok)
        out[key.strip()] = float(value)
    return out


def _cmd_rates(args):
    table = theory.rate_table(args.n, args.mu, args.L)
    for key, value in table:
        print("%-12s %.4f" % (key, value))
    if args.least_squares:
        kv = _parse_kv(args.least_squares)
        allowed = {"lam", "p", "eig_max", "row_sq_max", "col_sq_max",
                   "eig_min", "eig_min_gram"}
        unknown = set(kv) - allowed
        if unknown:
            raise ValueError("unknown least-squares keys: %s"
                             % ", ".join(sorted(unknown)))
        for need in ("lam", "eig_max", "row_sq_max", "col_sq_max"):
            if need not in kv:
                raise ValueError("--least-squares needs %s" % need)
        rows = theory.least_squares_rates(
            args.n, int(kv.get("p", args.n)), kv["lam"], kv["eig_max"],
            kv["row_sq_max"], kv["col_sq_max"], kv.get("eig_min", 0.0),
            kv.get("eig_min_gram", 0.0))
        print()
        print("%-16s %-12s %s" % ("", "rate", "exp bound"))
        for key, rate, bound in rows:
            print("%-16s %.10f %.10f" % (key, rate, bound))
    return 0


def _parse_grid(text, cast):
    return [cast(tok) for tok in text.split(",") if tok.strip()]


def _cmd_verify_lyapunov(args):
    n_values = _parse_grid(args.n_grid, int)
    mu_values = _parse_grid(args.mu_grid, float)
    report = theory.verify_grid(n_values, mu_values, big_l=args.L,
                                tol=args.tol)
    csv = report.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    else:
        sys.stdout.write(csv)
    points = len(n_values) * len(mu_values)
    if report.violations:
        print("%d violations over %d grid points" %
              (len(report.violations), points), file=sys.stderr)
        return 3
    print("all constraints hold over %d grid points" % points,
          file=sys.stderr)
    return 0


def _cmd_datagen(args):
    fields = {"n": None, "p": None, "nnz": None, "het": 1.0, "noise": 0.0,
              "seed": 0}
    if args.spec:
        with open(args.spec) as fh:
            mapping = harness.parse_config(fh.read())
        unknown = set(mapping) - set(fields)
        if unknown:
            raise ValueError("unknown spec keys: %s"
                             % ", ".join(sorted(unknown)))
        fields.update(mapping)
    for key in fields:
        value = getattr(args, key)
        if value is not None:
            fields[key] = value
    if fields["n"] is None or fields["p"] is None:
        raise ValueError("datagen needs n and p")
    spec = SynthSpec(int(fields["n"]), int(fields["p"]),
                     nnz_per_row=(None if fields["nnz"] is None
                                  else int(fields["nnz"])),
                     label_noise=float(fields["noise"]),
                     heterogeneity=float(fields["het"]),
                     seed=int(fields["seed"]))
    ds = synth_generate(spec)
    with open(args.out, "w") as fh:
        fh.write(serialize_libsvm(ds))
    print("wrote %s (%d examples, %d features)" % (args.out, ds.n, ds.p))
    return 0


def _cmd_plot(args):
    labeled = []
    for path in args.traces.split(","):
        path = path.strip()
        if not path:
            continue
        label = os.path.splitext(os.path.basename(path))[0]
        with open(path) as fh:
            labeled.append((label, harness.parse_trace_csv(fh.read(),
                                                           label=label)))
    if not labeled:
        raise ValueError("no trace files given")
    harness.emit_svg(labeled, args.out)
    print("wrote %s" % args.out)
    return 0


def build_parser():
    parser = _Parser(prog="sagopt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="step-size grid sweep")
    _add_config_flags(p)
    p.add_argument("--alpha-grid", help="comma-separated step sizes")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("rates", help="print rate comparison tables")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--least-squares",
                   help="key=value list: lam, p, eig_max, row_sq_max, "
                        "col_sq_max, eig_min, eig_min_gram")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("verify-lyapunov", help="check the rate certificate")
    p.add_argument("--n-grid",
                   default="2,3,4,5,8,16,32,64,128,256,512,1024,2048,4096")
    p.add_argument("--mu-grid", default="0,1e-6,1e-4,1e-2,0.1,0.5,1")
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=-1e-12)
    p.add_argument("--out", help="write the report CSV here "
                                 "(default stdout)")
    p.set_defaults(func=_cmd_verify_lyapunov)

    p = sub.add_parser("datagen", help="generate a synthetic dataset")
    p.add_argument("--spec", help="spec file: n, p, nnz, het, noise, seed")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--nnz", type=int)
    p.add_argument("--het", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_datagen)

    p = sub.add_parser("plot", help="plot trace CSVs as one SVG")
    p.add_argument("--traces", required=True,
                   help="comma-separated trace CSV files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
