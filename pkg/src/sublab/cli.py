"""Command-line entry point: ``sublab <command> [options]``.

Every file-writing command leaves ``manifest.json`` in its output directory;
``sublab replay <manifest>`` re-runs the command from it. Exit codes are 0
(success), 2 (usage or invalid input), 3 (numerical non-convergence or too
few samples) and 4 (internal invariant violation, e.g. a non-finite value
about to be written).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import io
from . import simulation as sim
from . import spectral
from .exceptions import ConvergenceError, InsufficientSamplesError, SublabError
from .groups import HomogeneousNorm, bcdh_product, dilate, load_group

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

# options that never influence results and are left out of manifests
_VOLATILE = {"out", "workers", "func", "command"}


class UsageError(SublabError):
    pass


# -- argument parsing helpers -------------------------------------------------

def parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse point {text!r}") from None


def parse_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def parse_tgrid(text: str, default_n: int = 41) -> np.ndarray:
    """``"a..b"``, ``"a..b:n"`` (``n`` evenly spaced points) or ``"t1,t2,..."``."""
    text = text.strip()
    if ".." in text:
        rng, _, n = text.partition(":")
        a, _, b = rng.partition("..")
        try:
            a, b = float(a), float(b)
            n = int(n) if n else default_n
        except ValueError:
            raise UsageError(f"cannot parse time grid {text!r}") from None
        if n < 2 or not b > a:
            raise UsageError(f"time grid {text!r} needs b > a and at least 2 points")
        return np.linspace(a, b, n)
    return np.array(parse_list(text))


def parse_mesh(text: str) -> float:
    """Mesh width as a decimal or a fraction such as ``1/48``."""
    try:
        num, _, den = text.partition("/")
        value = float(num) / float(den) if den else float(num)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"cannot parse mesh width {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("mesh width must be positive")
    return value


def _workers(args):
    w = getattr(args, "workers", None)
    if w is None and os.environ.get("SUBLAB_WORKERS"):
        try:
            w = int(os.environ["SUBLAB_WORKERS"])
        except ValueError:
            raise UsageError("SUBLAB_WORKERS must be an integer") from None
    return w


def _spec(args):
    try:
        return load_group(args.group)
    except SublabError as exc:
        raise UsageError(str(exc)) from None


def _norm_kind(args, spec):
    if args.norm:
        return args.norm
    return "gauge16" if spec.step <= 2 else "layermax"


def _domain(args, spec):
    center = parse_point(args.center) if args.center else None
    return sim.Domain.ball(spec, _norm_kind(args, spec), args.radius, center)


def _config(args, horizon=None):
    return sim.SimConfig(step_size=args.steps, horizon=horizon if horizon is not None else args.horizon,
                         trajectories=args.trajectories, base_seed=args.seed, scheme=args.scheme,
                         workers=_workers(args))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out: Path, outputs):
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE}
    io.write_json(out / "manifest.json", {
        "command": args.command,
        "arguments": arguments,
        "version": __version__,
        "outputs": sorted(outputs),
    })


def _bracket(lam1):
    lo, hi = spectral.gap_bounds()
    return {"lower": lo, "upper": hi, "inside": bool(lo <= lam1 <= hi)}


# -- commands ----------------------------------------------------------------------

def cmd_group(args):
    spec = _spec(args)
    print(f"name  {spec.name}")
    print(f"N     {spec.dim}")
    print(f"Q     {spec.homogeneous_dim}")
    print(f"step  {spec.step}")
    print("sigma " + ",".join(str(int(s)) for s in spec.weights))
    for i, j, k, c in spec.brackets:
        print(f"[e{i},e{j}] = {c:g} e{k}")
    fmt = lambda v: ",".join(f"{float(x):.12g}" for x in np.atleast_1d(v))  # noqa: E731
    if args.mul:
        x, y = (parse_point(p) for p in args.mul)
        print("mul   " + fmt(bcdh_product(spec, x, y)))
    if args.dilate:
        a, x = float(args.dilate[0]), parse_point(args.dilate[1])
        print("dil   " + fmt(dilate(spec, a, x)))
    if args.eval_norm:
        norm = HomogeneousNorm(spec, _norm_kind(args, spec))
        print(f"norm  {norm.kind} " + fmt(norm(parse_point(args.eval_norm))))
    return EXIT_OK


def _eigensystem(args, spec, domain):
    op = spectral.assemble(spec, domain, args.mesh, args.difference)
    return spectral.leading_eigenpairs(op, args.k, args.tol, args.method)


def cmd_spectral(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    system = _eigensystem(args, spec, domain)
    out = _outdir(args)
    n = np.arange(1, system.k + 1)
    io.write_csv(out / "eigenvalues.csv", ("n", "lambda", "residual", "c_n"),
                 [n, system.eigenvalues, system.residuals, system.mass])
    io.write_eigensystem_csv(out / "eigenfunctions.csv", system)
    diag = spectral.eigenfunction_diagnostics(system)
    summary = io.eigensystem_summary(system)
    summary.update(
        lambda1=system.eigenvalues[0],
        bracket=_bracket(system.eigenvalues[0]),
        diagnostics={"sup_norms": diag.sup_norms, "sup_ratios": diag.sup_ratios,
                     "boundary_max": diag.boundary_max,
                     "ground_state_one_signed": diag.ground_state_one_signed},
    )
    io.write_json(out / "summary.json", summary)
    _manifest(args, out, ["eigenvalues.csv", "eigenfunctions.csv", "summary.json"])
    print(f"lambda_1 = {system.eigenvalues[0]:.6f} ({system.operator.size} nodes, {system.method})")
    return EXIT_OK


def cmd_simulate(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    config = _config(args)
    start = parse_point(args.start) if args.start else None
    batch = sim.sample_exit_batch(domain, config, start)
    tgrid = parse_tgrid(args.tgrid) if args.tgrid else np.linspace(0.0, config.n_steps * config.step_size, 41)
    curve = sim.survival_curve(batch, tgrid)
    out = _outdir(args)
    io.write_exit_batch_csv(out / "exits.csv", batch)
    io.write_survival_csv(out / "survival.csv", curve)
    summary = {"domain": domain.describe(), "config": {k: v for k, v in config.to_dict().items() if k != "workers"},
               "censored": int(batch.censored.sum()), "trajectories": batch.size}
    if args.fit:
        a, b = parse_list(args.fit)
        rate, intercept = sim.decay_rate(curve, a, b)
        summary["decay_rate"] = {"window": [a, b], "rate": rate, "intercept": intercept}
        print(f"decay rate = {rate:.6f}")
    io.write_json(out / "summary.json", summary)
    _manifest(args, out, ["exits.csv", "survival.csv", "summary.json"])
    return EXIT_OK


def cmd_smalldev(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    config = _config(args, horizon=args.steps)
    eps = parse_list(args.eps)
    report = asy.small_deviation_experiment(domain, config, eps, args.t, method=args.method_sd)
    out = _outdir(args)
    io.write_small_deviation_csv(out / "smalldev.csv", report)
    summary = {"domain": domain.describe(), "t": report.t, "method": report.method,
               "rates_over_t": report.rates / report.t, "extrapolated": report.extrapolated,
               "slope": report.slope, "lambda_estimate": report.lambda_estimate,
               "bracket": _bracket(report.lambda_estimate) if report.lambda_estimate is not None else None}
    outputs = ["smalldev.csv", "summary.json"]
    if args.mesh:
        system = _eigensystem(args, spec, domain)
        summary["grid_lambda1"] = system.eigenvalues[0]
    io.write_json(out / "summary.json", summary)
    _manifest(args, out, outputs)
    for e, r in zip(report.epsilons, report.rates / report.t):
        print(f"eps={e:g}  rate/t={r:.6f}")
    if report.lambda_estimate is not None:
        print(f"extrapolated lambda_1 = {report.lambda_estimate:.6f}")
    return EXIT_OK


def cmd_heatcontent(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    tgrid = parse_tgrid(args.tgrid)
    config = _config(args, horizon=max(float(tgrid.max()), args.steps))
    system = _eigensystem(args, spec, domain)
    curve = asy.heat_content(domain, config, tgrid, system)
    out = _outdir(args)
    io.write_heat_content_csv(out / "heatcontent.csv", curve)
    lam = curve.lambda1
    summary = {"domain": domain.describe(), "lambda1": lam, "c1_squared": curve.c1_squared,
               "volume": curve.volume, "volume_estimate": curve.volume_estimate,
               "volume_ci": list(curve.volume_ci), "proposals": curve.proposals,
               "accepted": curve.accepted}
    if np.any(curve.window(2 / lam, 4 / lam)):
        mean, spread = curve.plateau(2 / lam, 4 / lam)
        summary["plateau"] = {"window": [2 / lam, 4 / lam], "mean": mean, "relative_spread": spread}
    io.write_json(out / "summary.json", summary)
    _manifest(args, out, ["heatcontent.csv", "summary.json"])
    print(f"volume {curve.volume_estimate:.6f} (exact {curve.volume:.6f}), c1^2 = {curve.c1_squared:.6f}")
    return EXIT_OK


def cmd_scalingcheck(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    config = _config(args, horizon=args.steps)
    reports = [sim.scaling_check(domain, config, e, args.t) for e in parse_list(args.eps)]
    out = _outdir(args)
    io.write_scaling_csv(out / "scaling.csv", reports)
    io.write_json(out / "summary.json", {"domain": domain.describe(), "t": args.t,
                                         "max_abs_z": max(abs(r.z) for r in reports)})
    _manifest(args, out, ["scaling.csv", "summary.json"])
    for r in reports:
        print(f"eps={r.epsilon:g}  stretched={r.stretched:.5f}  dilated={r.dilated:.5f}  z={r.z:+.3f}")
    return EXIT_OK


def _default_boundary_points(domain):
    spec = domain.spec
    x = np.zeros(spec.dim)
    x[0] = domain.radius
    pts = [x]
    if spec.step == 2 and domain.norm.kind != "layermax":
        pole = np.zeros(spec.dim)
        pole[spec.layer_slices[1].start] = domain.norm.layer_bounds(domain.radius)[spec.layer_slices[1].start]
        pts.append(pole)
    c = domain.center_point
    return np.array([bcdh_product(spec, c, p) for p in pts])


def cmd_regularity(args):
    spec = _spec(args)
    domain = _domain(args, spec)
    config = _config(args, horizon=args.steps)
    if args.points:
        pts = np.array([parse_point(p) for p in args.points.split(";")])
    else:
        pts = _default_boundary_points(domain)
    tgrid = parse_tgrid(args.tgrid)
    report = asy.boundary_regularity_probe(domain, config, pts, tgrid)
    out = _outdir(args)
    io.write_regularity_csv(out / "regularity.csv", report)
    io.write_json(out / "summary.json", {"domain": domain.describe(), "points": report.points,
                                         "step_sizes": report.step_sizes, "suspect": report.suspect,
                                         "threshold": report.threshold})
    _manifest(args, out, ["regularity.csv", "summary.json"])
    for p, s in zip(report.points, report.suspect):
        print(f"point {','.join(f'{v:g}' for v in p)}: {'suspect' if s else 'consistent with regular'}")
    return EXIT_OK


def cmd_replay(args):
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if doc.get("command") not in _COMMANDS or doc.get("command") == "replay":
        raise UsageError(f"manifest names an unknown command {doc.get('command')!r}")
    parser = build_parser()
    ns = parser.parse_args([doc["command"]])
    for key, value in doc.get("arguments", {}).items():
        setattr(ns, key, value)
    ns.out = args.out if args.out else str(Path(args.manifest).parent)
    ns.workers = args.workers
    return ns.func(ns)


_COMMANDS = {
    "group": cmd_group, "spectral": cmd_spectral, "simulate": cmd_simulate, "smalldev": cmd_smalldev,
    "heatcontent": cmd_heatcontent, "scalingcheck": cmd_scalingcheck, "regularity": cmd_regularity,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sublab", description="Hypoelliptic diffusions on Carnot groups.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim_opts=True, mesh=False):
        p.add_argument("--group", default="heisenberg", help="catalog name or JSON spec path")
        p.add_argument("--norm", choices=("gauge16", "gaugerho", "layermax"), default=None)
        p.add_argument("--radius", type=float, default=1.0)
        p.add_argument("--center", default=None, help="ball center, comma separated")
        p.add_argument("--out", default="sublab-out")
        p.add_argument("--workers", type=int, default=None)
        if sim_opts:
            p.add_argument("--steps", type=float, default=1e-3, help="time step size h")
            p.add_argument("--horizon", type=float, default=1.0)
            p.add_argument("--trajectories", type=int, default=100000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--scheme", choices=sorted(sim.SCHEMES), default="geometric_euler")
        if mesh:
            p.add_argument("--mesh", type=parse_mesh, default=None if sim_opts else 1 / 24)
            p.add_argument("--k", type=int, default=6, help="number of eigenpairs")
            p.add_argument("--tol", type=float, default=1e-6)
            p.add_argument("--method", dest="method", choices=("auto", "heat", "lobpcg"), default="auto")
            p.add_argument("--difference", choices=("forward", "centered", "lattice"), default="forward")

    p = sub.add_parser("group", help="describe a group and evaluate its law")
    p.add_argument("name", nargs="?", default=None)
    p.add_argument("--group", default=None)
    p.add_argument("--norm", choices=("gauge16", "gaugerho", "layermax"), default=None)
    p.add_argument("--mul", nargs=2, metavar=("X", "Y"))
    p.add_argument("--dilate", nargs=2, metavar=("A", "X"))
    p.add_argument("--eval-norm", metavar="X")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("spectral", help="Dirichlet eigenpairs on a gauge ball")
    common(p, sim_opts=False, mesh=True)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("simulate", help="exit times and survival curve")
    common(p)
    p.add_argument("--start", default=None)
    p.add_argument("--tgrid", default=None)
    p.add_argument("--fit", default=None, help="decay-rate window 'a,b'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("smalldev", help="small-deviation rates over an eps grid")
    common(p, mesh=True)
    p.add_argument("--eps", default="1,0.8,0.7,0.6")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--smalldev-method", dest="method_sd", choices=asy.SMALLDEV_METHODS, default="stretch")
    p.set_defaults(func=cmd_smalldev)

    p = sub.add_parser("heatcontent", help="heat content against the eigen-series")
    common(p, mesh=True)
    p.add_argument("--tgrid", "--t", dest="tgrid", default="0..1.5:31")
    p.set_defaults(func=cmd_heatcontent, mesh=1 / 24, k=10)

    p = sub.add_parser("scalingcheck", help="dilated domain vs stretched time")
    common(p)
    p.add_argument("--eps", default="0.5,0.25")
    p.add_argument("--t", type=float, default=0.0625)
    p.set_defaults(func=cmd_scalingcheck)

    p = sub.add_parser("regularity", help="survival from boundary points")
    common(p)
    p.add_argument("--points", default=None, help="boundary points 'x1,x2,..;y1,y2,..'")
    p.add_argument("--tgrid", default="0.001,0.004,0.016")
    p.set_defaults(func=cmd_regularity, steps=1e-4)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.command == "group":
        if args.name and args.group:
            print("error: give the group either positionally or with --group", file=sys.stderr)
            return EXIT_USAGE
        args.group = args.name or args.group or "heisenberg"
    try:
        return args.func(args)
    except io.OutputInvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConvergenceError, InsufficientSamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SublabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
