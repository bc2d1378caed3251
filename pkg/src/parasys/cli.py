"""Command-line front end.

Every subcommand writes its CSV tables and a ``manifest.yaml`` (configuration echo,
package versions, seed, output list) into ``--out``.  Exit codes: 0 success, 1 a
validation check failed, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import classifier, counterexamples, fundsol, gridio, norms, potentials, symbol
from .field import GridFunction, GridResolutionError, GridSpec
from .sysfile import SpecError, load_system

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, rows: list[dict], fields: list[str] | None = None) -> Path:
    fields = fields or list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fields})
    return path


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, args: argparse.Namespace, outputs: list[Path], status: str) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": args.command,
        "status": status,
        "config": config,
        "seed": args.seed,
        "threads": args.threads,
        "versions": {"parasys": _version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": [p.name for p in outputs],
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / "manifest.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def _load(path) -> symbol.ParabolicSystem:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"system spec not found: {p}")
    try:
        return load_system(p)
    except SpecError as exc:
        raise UsageError(f"{p}: {exc}") from None


def _alpha(text: str | None, n: int, b: int) -> tuple[int, ...]:
    if text is None:
        return (2 * b,) + (0,) * (n - 1)
    try:
        a = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad multi-index {text!r}; expected comma-separated integers") from None
    if len(a) != n or sum(a) != 2 * b or min(a) < 0:
        raise UsageError(f"multi-index {list(a)} must have {n} non-negative entries summing to {2 * b}")
    return a


# -- subcommands ------------------------------------------------------------------------------------


def cmd_check(args, out: Path):
    system = _load(args.spec)
    par = symbol.check_parabolicity(system, args.samples)
    ell = symbol.check_strong_ellipticity(system, args.samples)
    rows = [
        {"check": "parabolicity", "result": par.is_parabolic, "value": par.delta_hat,
         "detail": f"margin={par.margin!r}; worst_root={par.worst_root}"},
        {"check": "strong-ellipticity", "result": ell.is_strongly_elliptic, "value": ell.K_hat,
         "detail": f"convention={ell.convention}; K_signed={ell.K_hat_signed!r}"},
    ]
    print(f"parabolic: {'yes' if par.is_parabolic else 'NOT parabolic'} (delta_hat={par.delta_hat:.6g}, "
          f"worst root {par.worst_root:.6g})")
    print(f"strongly elliptic: {'yes' if ell.is_strongly_elliptic else 'no'} (K_hat={ell.K_hat:.6g})")
    return [write_csv(out / "check.csv", rows)], True


def cmd_fundsol(args, out: Path):
    system = _load(args.spec)
    if not symbol.check_parabolicity(system).is_parabolic:
        raise UsageError("fundamental matrix needs a parabolic system")
    fm = fundsol.FundamentalMatrix(system)
    rep = fundsol.check_properties(fm, seed=args.seed)
    rows = [dict(r, passed=rep.passed[r["property"]]) for r in rep.rows()]
    outputs = [write_csv(out / "properties.csv", rows)]
    alpha = _alpha(args.alpha, system.n, system.b) if args.alpha else (0,) * system.n
    axis, vals = fundsol.kernel_table(fm, alpha, args.times, args.half_width, args.points)
    nodes = np.stack(np.meshgrid(*[axis] * system.n, indexing="ij"), -1).reshape(-1, system.n)
    entries = [f"G{i}{j}" for i in range(system.m) for j in range(system.m)]
    table = []
    for t, block in zip(args.times, vals):
        for x, v in zip(nodes, block.reshape(len(nodes), -1)):
            table.append({"t": t, **{f"x{i + 1}": float(c) for i, c in enumerate(x)},
                          **{e: float(val) for e, val in zip(entries, v)}})
    outputs.append(write_csv(out / "kernel.csv", table))
    for k, ok in rep.passed.items():
        print(f"{k}: {'pass' if ok else 'FAIL'}")
    return outputs, all(rep.passed.values())


def cmd_classify(args, out: Path):
    try:
        q = classifier.RegularityQuery(args.n, args.b, args.s, args.p, args.lam)
    except classifier.QueryError as exc:
        raise UsageError(str(exc)) from None
    res = classifier.classify(q)
    print(res.describe())
    row = {"n": q.n, "b": q.b, "s": q.s, "p_in": str(q.p), "lambda": str(q.lam), **res.as_row()}
    return [write_csv(out / "classify.csv", [row])], True


def cmd_diagram(args, out: Path):
    try:
        svg, csv_path = classifier.emit_diagram(args.n, args.b, out / f"diagram_n{args.n}_b{args.b}")
    except classifier.QueryError as exc:
        raise UsageError(str(exc)) from None
    print(f"wrote {svg}")
    return [svg, csv_path, csv_path.parent / (csv_path.stem + "_edges.csv")], True


def cmd_norms(args, out: Path):
    path = Path(args.field)
    if not path.is_file():
        raise UsageError(f"field file not found: {path}")
    try:
        u, _ = gridio.read_grid(path)
    except (gridio.GridFormatError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    b = args.b
    recs = [norms.NormRecord("lp", {"p": args.p}, norms.lp_norm(u, args.p))]
    try:
        recs.append(norms.NormRecord("sobolev", {"p": args.p, "b": b}, norms.sobolev_norm(u, b, args.p)))
    except (GridResolutionError, ValueError) as exc:
        print(f"sobolev norm skipped: {exc}", file=sys.stderr)
    try:
        if args.lam:
            cfg = norms.MorreyConfig.lattice(u.spec, args.p, args.lam, b, stride=args.stride)
            recs.append(norms.morrey_norm(u, cfg).record(cfg))
        if args.radii:
            prof = norms.oscillation_profile(u, sorted(args.radii, reverse=True), b, stride=args.stride)
            recs.extend(prof.records())
            trend = prof.vmo_trend()
            print(f"oscillation: BMO seminorm {prof.bmo_seminorm:.6g}; {trend['verdict']}")
        if args.sigma:
            h = norms.holder_seminorm(u, args.sigma, b, seed=args.seed, full_report=True)
            recs.append(norms.NormRecord("holder", {"sigma": args.sigma, "pairs": h.pairs_checked}, h.value))
    except (norms.NormError, GridResolutionError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    for r in recs:
        print(f"{r.kind} {r.params}: {r.value:.6g}")
    return [write_csv(out / "norms.csv", [r.as_row() for r in recs], list(norms.CSV_FIELDS))], True


def cmd_potential(args, out: Path):
    system = _load(args.spec)
    if not symbol.check_parabolicity(system).is_parabolic:
        raise UsageError("potentials need a parabolic system")
    alpha = _alpha(args.alpha, system.n, system.b)
    spec = GridSpec.cube(system.n, -np.pi, np.pi, 1.0, args.n_x, args.n_t)
    m = system.m

    def v_fn(t, xs):
        r2 = sum(x * x for x in xs)
        return [t * np.sin(xs[0] + k) * np.exp(-2 * r2) for k in range(m)]

    v = GridFunction.sample(spec, v_fn)
    rep = potentials.representation_residual(system, v, alpha)
    fm = fundsol.FundamentalMatrix(system)
    kern = potentials.CZKernel.from_fundamental(fm, alpha)
    corpus = potentials.trial_corpus(spec, m, args.corpus, args.seed)
    best, ratios = potentials.empirical_operator_norm(lambda f: potentials.singular_operator(kern, f), corpus)
    bound = potentials.multiplier_bound(fm, alpha, rep.F, seed=args.seed)
    rows = [{"check": "representation-formula", "value": rep.residual, "passed": rep.residual < args.tol}]
    rows += [{"check": "singular-operator-norm", "value": r, "passed": r <= bound * 1.05} for r in ratios]
    rows.append({"check": "multiplier-bound", "value": bound, "passed": best <= bound * 1.05})
    print(f"representation residual {rep.residual:.3e}; empirical ||K|| {best:.4f} (multiplier bound {bound:.4f})")
    ok = rep.residual < args.tol and best <= bound * 1.05
    return [write_csv(out / "potential.csv", rows)], ok


def cmd_counterexample(args, out: Path):
    outputs = []
    try:
        if args.family == "holder":
            rep = counterexamples.holder_counterexample(args.mu, args.p, args.n)
            print(rep.summary())
            outputs.append(write_csv(out / "holder.csv", rep.rows()))
            ok = rep.exponent_ok and rep.refutes_gamma and (rep.blow_up if args.mu < 0.5 else rep.lp_converged)
            return outputs, ok
        fn = counterexamples.FAMILIES[args.family]
        kwargs = {"n": args.n}
        if args.N:
            kwargs["N_values"] = args.N
        rep = fn(**kwargs)
    except (counterexamples.CounterexampleError, GridResolutionError) as exc:
        raise UsageError(str(exc)) from None
    print(rep.summary())
    outputs.append(write_csv(out / f"{args.family}_norms.csv", rep.rows()))
    outputs.append(write_csv(out / f"{args.family}_slopes.csv", rep.slope_rows()))
    return outputs, rep.passed


# -- parser ---------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parasys", description="Numerical checks for higher-order parabolic systems.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--out", type=Path, default=Path("parasys-out"), help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1, help="worker threads for linear algebra")
        p.set_defaults(func=func)
        return p

    p = add("check", cmd_check, "parabolicity and strong ellipticity of a system")
    p.add_argument("spec")
    p.add_argument("--samples", type=int, default=None)

    p = add("fundsol", cmd_fundsol, "build the fundamental matrix, check its properties, export a kernel table")
    p.add_argument("spec")
    p.add_argument("--alpha", default=None, help="derivative multi-index for the table, e.g. 2,0")
    p.add_argument("--times", type=float, nargs="+", default=[0.5, 1.0])
    p.add_argument("--half-width", type=float, default=2.0)
    p.add_argument("--points", type=int, default=17)

    p = add("classify", cmd_classify, "regularity class of D^s u")
    for name in ("n", "b", "s"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--p", required=True, help="integrability exponent; fractions like 3/2 stay exact")
    p.add_argument("--lambda", dest="lam", default="0")

    p = add("diagram", cmd_diagram, "emit the (1/p, lambda) region diagram")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=int, required=True)

    p = add("norms", cmd_norms, "norm suite on an imported grid function")
    p.add_argument("field")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--radii", type=float, nargs="*", default=None)
    p.add_argument("--stride", type=int, default=4)

    p = add("potential", cmd_potential, "representation-formula residual and singular-operator norms")
    p.add_argument("spec")
    p.add_argument("--alpha", default=None)
    p.add_argument("--n-x", type=int, default=64)
    p.add_argument("--n-t", type=int, default=21)
    p.add_argument("--corpus", type=int, default=6)
    p.add_argument("--tol", type=float, default=1e-2)

    p = add("counterexample", cmd_counterexample, "non-parabolic families and the Hoelder-failure field")
    p.add_argument("family", choices=sorted(counterexamples.FAMILIES) + ["holder"])
    p.add_argument("--N", type=int, nargs="+", default=None)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--mu", type=float, default=0.7)
    p.add_argument("--p", type=float, default=6.0)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs, ok = args.func(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_manifest(out, args, outputs, "ok" if ok else "validation failed")
    return EXIT_OK if ok else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
