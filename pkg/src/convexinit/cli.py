"""Command-line entry point: ``convexinit <command> [options]``.

Exit status is 0 on success, 1 when a computation fails with a domain error
and 2 for usage errors (bad flags, missing input files).
"""

import argparse
import os
import sys

import numpy as np

from . import kernels
from .errors import ConvexInitError
from .init import baseline_init_params, convex_init_params, jacobian_eigenvalues
from .levelset import level_trajectory
from .network import NetworkConfig, atomic_write, load_checkpoint, save_checkpoint
from .numerics import fork, make_rng
from .propagation import (
    MomentState,
    aggregate_layer_stats,
    analytic_forward_stats,
    correlated_gaussian,
    empirical_layer_stats,
    sampled_params,
    stack_network,
)
from .report import (
    format_csv,
    median_band,
    parse_csv,
    render_band_svg,
    render_histograms,
    render_svg,
)
from .training import load_train_config, train

__all__ = ["run", "main", "build_parser"]


class UsageError(Exception):
    pass


def _emit(text, out):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _vector(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from None


def _input_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    return path


def cmd_kernels(args):
    r_relu, r_val, r_mean, r_der = fork(make_rng(args.seed), 4)
    specs = []
    if args.alpha == 0:
        specs.append(("relu_kernel", kernels.relu_kernel(args.rho, args.var), r_relu, "value"))
    specs += [
        ("lrelu_kernel", kernels.lrelu_kernel(args.rho, args.var, args.alpha), r_val, "value"),
        ("lrelu_mean", kernels.lrelu_mean(args.var, args.alpha), r_mean, "mean"),
        ("lrelu_deriv_kernel", kernels.lrelu_deriv_kernel(args.rho, args.alpha), r_der,
         "derivative"),
    ]
    rows = []
    for name, closed, g, mode in specs:
        mc, se = kernels.kernel_mc_oracle(g, args.rho, args.var, args.alpha, args.samples, mode,
                                          n_shards=args.shards)
        rows.append([name, args.rho, args.var, args.alpha, closed, mc, se])
    header = ["kernel", "rho", "var", "alpha", "closed_form", "mc", "mc_stderr"]
    _emit(format_csv(header, rows), args.out)


def cmd_init_params(args):
    rows = []
    for N in args.N:
        if args.scheme == "convex":
            p = convex_init_params(N, args.alpha, args.rho_star, args.var_star, args.beta)
        else:
            p = baseline_init_params(args.scheme, N, args.alpha)
        rows.append(p.as_row())
    header = list(rows[0])
    _emit(format_csv(header, rows), args.out)


def cmd_stability(args):
    rows = []
    for N in range(args.n_min, args.n_max + 1):
        lam1, lam2 = jacobian_eigenvalues(args.rho_star, N, args.alpha)
        rows.append([N, lam1, lam2, int(lam2 < 1.0)])
    _emit(format_csv(["N", "lambda1", "lambda2", "stable"], rows), args.out)


def cmd_propagate(args):
    config = NetworkConfig(
        (args.width,) * (args.depth + 2), args.alpha, args.variant, False, args.init,
        args.rho_star, args.var_star, args.beta,
    )
    params = [sampled_params(config, args.width) for _ in range(args.depth)]
    analytic = analytic_forward_stats(params, MomentState(0.0, args.var_in, args.rho_in))
    runs = []
    for g in fork(make_rng(args.seed), args.seeds):
        g_net, g_data = fork(g, 2)
        net = stack_network(args.width, args.depth, g_net, args.variant, args.init, args.alpha,
                            args.rho_star, args.var_star, args.beta)
        batch = correlated_gaussian(g_data, args.batch, args.width, args.var_in, args.rho_in)
        runs.append(empirical_layer_stats(net, batch))
    empirical = aggregate_layer_stats(runs)
    header = ["layer", "analytic_mean", "analytic_var", "analytic_rho",
              "empirical_mean", "empirical_var", "empirical_rho"]
    rows = [
        [l, a.mean, a.var, a.rho, e.mean, e.var, e.rho]
        for l, (a, e) in enumerate(zip(analytic, empirical))
    ]
    _emit(format_csv(header, rows), args.out)
    if args.svg:
        layers = [(f"layer {l}", e.bin_edges, e.histogram) for l, e in enumerate(empirical)]
        atomic_write(args.svg, render_histograms(layers))


def cmd_train(args):
    config = load_train_config(_input_file(args.config))
    if args.seed is not None:
        config.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    net, curve = train(config)
    curve.save(os.path.join(args.out, "curve.csv"))
    save_checkpoint(net, os.path.join(args.out, "model.ckpt"))
    if curve.steps and not args.no_svg:
        steps = [s[0] for s in curve.steps]
        losses = [s[2] for s in curve.steps]
        svg = render_svg({"loss": (steps, losses)}, "step", "loss",
                         log_y=min(losses) > 0)
        atomic_write(os.path.join(args.out, "curve.svg"), svg)
    if curve.steps:
        last = curve.steps[-1]
        print(f"steps={last[0]} epochs={last[1]} final_loss={last[2]!r}", file=sys.stderr)


def cmd_levelset(args):
    net = load_checkpoint(_input_file(args.model))
    rng = make_rng(args.seed)
    traj = level_trajectory(net, args.output_index, args.ref, args.target, args.points,
                            rng=rng, n_restarts=args.restarts)
    d = traj.points.shape[1]
    header = ["index"] + [f"x{i}" for i in range(d)] + ["value_residual"]
    rows = [[i, *p, r] for i, (p, r) in enumerate(zip(traj.points, traj.residuals))]
    _emit(format_csv(header, rows), args.out)


def cmd_report(args):
    groups = {}
    for spec in args.groups:
        if "=" not in spec:
            raise UsageError(f"expected NAME=PATH[,PATH...], got {spec!r}")
        name, paths = spec.split("=", 1)
        curves = []
        for path in paths.split(","):
            with open(_input_file(path)) as fh:
                curves.append(parse_csv(fh.read())[1])
        groups[name] = curves
    rows = []
    for name, curves in groups.items():
        steps, med, q1, q3 = median_band(curves, args.column)
        rows.extend([name, int(s), m, a, b] for s, m, a, b in zip(steps, med, q1, q3))
    _emit(format_csv(["series", "step", "median", "q1", "q3"], rows), args.out)
    atomic_write(args.svg, render_band_svg(groups, args.column, log_y=not args.linear))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="convexinit",
        description="Signal-propagation initialisation for input-convex networks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="root random seed (default 0; for train, overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernels", parents=[common], help="closed-form kernels against Monte Carlo")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--var", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("init-params", parents=[common], help="initialisation parameters per fan-in")
    p.add_argument("--N", type=int, nargs="+", required=True)
    p.add_argument("--scheme", choices=("convex", "he", "lecun"), default="convex")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--rho-star", type=float, default=0.5)
    p.add_argument("--var-star", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_params)

    p = sub.add_parser("stability", parents=[common], help="Jacobian eigenvalues at the fixed point")
    p.add_argument("--rho-star", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("propagate", parents=[common], help="analytic vs empirical layer statistics")
    p.add_argument("--width", type=int, default=500)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--batch", type=int, default=10_000)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--variant", default="icnn_projection",
                   choices=("nonconvex", "icnn_projection", "icnn_exp_reparam"))
    p.add_argument("--init", default="convex_init", choices=("convex_init", "default_he", "lecun"))
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--rho-star", type=float, default=0.5)
    p.add_argument("--var-star", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--rho-in", type=float, default=0.5)
    p.add_argument("--var-in", type=float, default=1.0)
    p.add_argument("--out")
    p.add_argument("--svg", help="write per-layer histograms here")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("train", parents=[common], help="train a network from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("levelset", parents=[common], help="trace a level set of a trained ICNN")
    p.add_argument("--model", required=True)
    p.add_argument("--output-index", type=int, default=0)
    p.add_argument("--ref", type=_vector, required=True)
    p.add_argument("--target", type=_vector, required=True)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_levelset)

    p = sub.add_parser("report", parents=[common], help="median and inter-quartile band over curve files")
    p.add_argument("groups", nargs="+", metavar="NAME=PATH[,PATH...]")
    p.add_argument("--column", default="loss")
    p.add_argument("--svg", required=True)
    p.add_argument("--linear", action="store_true", help="linear y axis")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.seed is None and args.command != "train":
        args.seed = 0
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"convexinit: error: {exc}", file=sys.stderr)
        return 2
    except ConvexInitError as exc:
        print(f"convexinit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
