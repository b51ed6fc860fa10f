"""Command-line entry point ``lipro``.

Exit codes: 0 success, 2 invalid input, 3 a check failed, 64 unknown
subcommand. JSON results go to ``--out`` (or stdout), tables are CSV and
curves SVG. With ``--out`` a manifest recording the command, parameters,
seed, version and input digests is written next to the output.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from .diffusion_lab import (
    CircleModel,
    ManifoldFamilyParams,
    TorusModel,
    empirical_modulus,
    modulus_bound,
    phi_tightness_limit,
    sample_bm_paths,
    sample_elliptic_paths,
)
from .lp_metric import (
    certificate_compose,
    certificate_verify,
    dlp_exact,
    dlp_upper_bound,
    EXACT_MAX_POINTS,
)
from .metric_core import cauchy_limit, lipschitz_distance
from .path_space import TimeGrid
from .prokhorov import prokhorov_bruteforce, prokhorov_distance
from .studies import coupled_convergence, fdd_study, mosco_study

EXIT_OK, EXIT_INVALID, EXIT_CHECK, EXIT_USAGE = 0, 2, 3, 64


class CheckFailed(Exception):
    """Raised after outputs are written when a verified property does not hold."""


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _seed(args):
    env = os.environ.get("LIPRO_SEED")
    return int(env) if env is not None else args.seed


class Run:
    """Collects inputs and outputs of one invocation for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs = {}
        self.outputs = []
        self.seed = None

    def read(self, path):
        self.inputs[str(path)] = lio.digest(path)
        return lio.load(path)

    def emit_json(self, doc):
        text = lio.dump(doc, self.args.out)
        if self.args.out is None:
            print(text)
        else:
            self.outputs.append(self.args.out)

    def emit_csv(self, header, rows):
        buf = _stdio.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        if self.args.out is None:
            sys.stdout.write(buf.getvalue())
        else:
            Path(self.args.out).write_text(buf.getvalue())
            self.outputs.append(self.args.out)

    def svg_path(self):
        if getattr(self.args, "svg", None):
            return self.args.svg
        if self.args.out:
            return str(Path(self.args.out).with_suffix(".svg"))
        return None

    def manifest(self):
        path = self.args.manifest or (self.args.out and f"{self.args.out}.manifest.json")
        if not path:
            return
        params = {
            k: v for k, v in vars(self.args).items() if k not in ("func", "manifest") and not callable(v)
        }
        doc = {
            "command": self.args.command,
            "params": params,
            "seed": self.seed,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        lio.dump(doc, path)


def _plot(path, series, xlabel, ylabel, logx=False):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "lipro"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", label=label)
    ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_dl(run):
    a = run.args
    X = lio.space_from_json(run.read(a.X))
    Y = lio.space_from_json(run.read(a.Y))
    res = lipschitz_distance(X, Y, jobs=a.jobs, exhaustive_limit=a.exhaustive_limit)
    witness = lio.map_to_json(res.witness) if res.witness is not None else None
    run.emit_json({"value": lio.number(res.value), "witness": witness, "method": res.method})


def _coupling_json(coupling):
    out = []
    for i, j in zip(*np.nonzero(coupling.mass.astype(float) > 0)):
        mass = coupling.mass[i, j]
        out.append(
            {
                "from": coupling.rows[i].tolist(),
                "to": coupling.cols[j].tolist(),
                "mass": str(mass) if not isinstance(mass, float) else mass,
            }
        )
    return out


def cmd_dp(run):
    a = run.args
    P = lio.measure_from_json(run.read(a.P))
    Q = lio.measure_from_json(run.read(a.Q))
    res = prokhorov_distance(P, Q)
    doc = {"value": res.value}
    if a.coupling:
        doc["coupling"] = _coupling_json(res.coupling)
    if a.oracle:
        doc["oracle"] = prokhorov_bruteforce(P, Q)
        doc["agree"] = abs(doc["oracle"] - res.value) <= 1e-9
    run.emit_json(doc)
    if a.oracle and not doc["agree"]:
        raise CheckFailed(f"flow value {res.value} and oracle {doc['oracle']} differ")


def cmd_dlp(run):
    a = run.args
    A = lio.pair_from_json(run.read(a.A))
    B = lio.pair_from_json(run.read(a.B))
    if a.maps:
        res = dlp_upper_bound(A, B, lio.maps_from_json(run.read(a.maps)))
    elif a.exact or len(A.space) <= EXACT_MAX_POINTS:
        res = dlp_exact(A, B)
    else:
        res = dlp_upper_bound(A, B)
    cert = lio.certificate_to_json(res.certificate) if res.certificate is not None else None
    run.emit_json({"value": lio.number(res.value), "certificate": cert, "mode": res.mode})


def _report_json(rep):
    return {k: (bool(v) if k == "accepted" else float(v)) for k, v in rep._asdict().items()}


def cmd_verify(run):
    a = run.args
    cert = lio.certificate_from_json(run.read(a.cert))
    A = lio.pair_from_json(run.read(a.A))
    B = lio.pair_from_json(run.read(a.B))
    rep = certificate_verify(cert, A, B, scale=a.scale)
    run.emit_json(_report_json(rep))
    if not rep.accepted:
        raise CheckFailed("certificate rejected")


def cmd_compose(run):
    a = run.args
    c1 = lio.certificate_from_json(run.read(a.cert1))
    c2 = lio.certificate_from_json(run.read(a.cert2))
    c = certificate_compose(c1, c2)
    doc = {"certificate": lio.certificate_to_json(c)}
    rep = None
    if a.pairs:
        A, _, C = (lio.pair_from_json(run.read(p)) for p in a.pairs)
        rep = certificate_verify(c, A, C)
        doc["verification"] = _report_json(rep)
    run.emit_json(doc)
    if rep is not None and not rep.accepted:
        raise CheckFailed("composed certificate rejected")


def _model(a):
    if a.family == "circle":
        cond = None
        if a.conductances:
            cond = lio.load(a.conductances)["conductances"]
        return CircleModel(a.L, a.nodes, cond, a.Lambda)
    return TorusModel(a.L, a.L2 or a.L, a.nodes, a.nodes2 or a.nodes)


def cmd_simulate(run):
    a = run.args
    run.seed = _seed(a)
    if a.conductances:
        run.inputs[a.conductances] = lio.digest(a.conductances)
    model = _model(a)
    grid = TimeGrid(a.T, a.m)
    if a.process == "elliptic":
        sample = sample_elliptic_paths(model, grid, a.count, run.seed, jobs=a.jobs)
    else:
        sample = sample_bm_paths(model, grid, a.count, run.seed, jobs=a.jobs)
    run.emit_json(lio.measure_to_json(sample.measure()))


def cmd_tightness(run):
    a = run.args
    bound, params = lio.bound_from_json(run.read(a.bound))
    if params is None:
        if a.L is None:
            raise ValueError("bound file has no family params; pass --L for a circle")
        params = ManifoldFamilyParams.circle(a.L)
    lambdas = _floats(a.lambda_grid) if a.lambda_grid else None
    table = phi_tightness_limit(bound, a.gamma / 2, lambdas, D=params.D)
    header = ["lambda", "phi_sup", "modulus_bound"]
    rows = [[lam, v, modulus_bound(bound, params, lam, a.gamma)] for lam, v in zip(table.lambdas, table.values)]
    violated = []
    if a.count:
        run.seed = _seed(a)
        L = 2 * params.D
        step = min(table.lambdas) if a.m is None else None
        m = a.m if a.m is not None else int(round(a.T / step))
        grid = TimeGrid(a.T, m)
        sample = sample_bm_paths(CircleModel(L, a.nodes), grid, a.count, run.seed, jobs=a.jobs)
        header += ["estimate", "ci_low", "ci_high"]
        for row in rows:
            est = empirical_modulus(sample, 0.0, row[0], a.gamma)
            row += [est.estimate, est.low, est.high]
            if est.high > row[2]:
                violated.append(row[0])
    run.emit_csv(header, rows)
    svg = run.svg_path()
    if svg:
        positive = [(r[0], r[2]) for r in rows if r[2] > 0]
        if positive:
            xs, ys = zip(*positive)
            _plot(svg, {"modulus bound": (xs, ys)}, "lambda", "bound", logx=True)
            run.outputs.append(svg)
    if violated:
        raise CheckFailed(f"empirical modulus exceeds the bound at lambda={violated}")


def cmd_mosco(run):
    a = run.args
    modes = _ints(a.modes)
    res = _ints(a.resolutions)
    table = mosco_study(a.L, res, a.limit, a.alpha, modes, stretch=a.stretch)
    rows = [[n, k, table.errors[i, j]] for i, n in enumerate(res) for j, k in enumerate(modes)]
    run.emit_csv(["resolution", "mode", "error"], rows)
    print(f"# {table.transfer}; slopes {[round(s, 3) for s in table.slopes]}", file=sys.stderr)
    svg = run.svg_path()
    if svg:
        _plot(svg, {f"mode {k}": (res, table.errors[:, j]) for j, k in enumerate(modes)}, "resolution", "L2 error", logx=True)
        run.outputs.append(svg)
    if not all(table.decreasing):
        raise CheckFailed("resolvent errors are not strictly decreasing")


def cmd_fdd(run):
    a = run.args
    doc = run.read(a.obs)
    times = _floats(a.times)
    obs = doc["observables"]
    if len(obs) != len(times):
        raise ValueError(f"{len(obs)} observables for {len(times)} times")
    density = doc.get("density", [{"offset": 1.0}])
    res = _ints(a.resolutions)
    table = fdd_study(a.L, res, a.limit, times, obs, density, stretch=a.stretch, tol0=a.tol0)
    rows = [
        [n, e, d, t] for n, e, d, t in zip(res, table.errors, table.density_norms, table.schedule)
    ]
    run.emit_csv(["resolution", "error", "density_norm", "tolerance"], rows)
    if table.sc3_failures:
        raise CheckFailed(f"initial densities miss the L2 schedule at i={table.sc3_failures}")


def cmd_converge(run):
    a = run.args
    run.seed = _seed(a)
    res = _ints(a.resolutions)
    rep = coupled_convergence(a.L, res, TimeGrid(a.T, a.m), a.count, run.seed, a.confidence, jobs=a.jobs)
    rows = [[r.i, n, r.eps, r.prokhorov, r.value] for r, n in zip(rep.rows, res)]
    run.emit_csv(["i", "nodes", "eps", "prokhorov_upper", "value"], rows)
    print(f"# {rep.mode}; slope {rep.slope:.4f}; non-monotone {rep.non_monotone}", file=sys.stderr)
    svg = run.svg_path()
    if svg:
        _plot(svg, {"certified value": (res, rep.values)}, "nodes", "d_LP upper bound", logx=True)
        run.outputs.append(svg)
    if rep.non_monotone:
        raise CheckFailed(f"values fail to decrease at i={rep.non_monotone}")


def cmd_cauchy(run):
    a = run.args
    lim = cauchy_limit(lio.cauchy_from_json(run.read(a.input)))
    run.emit_json(
        {
            "limit": lio.space_to_json(lim.space),
            "maps": [list(f.assignment) for f in lim.maps],
            "eps": lim.eps,
            "measured_defects": lim.measured_defects,
            "truncation": lim.truncation,
            "tail_defect": lim.tail_defect,
            "matrix_error_bound": lim.matrix_error_bound,
        }
    )


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (stdout if omitted)")
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    parser = argparse.ArgumentParser(prog="lipro", description="Lipschitz-Prokhorov distance toolkit")
    parser.add_argument("--version", action="version", version=f"lipro {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("dl", parents=[common], help="Lipschitz distance of two spaces")
    p.add_argument("X")
    p.add_argument("Y")
    p.add_argument("--exhaustive-limit", type=int, default=8)
    p.set_defaults(func=cmd_dl)

    p = sub.add_parser("dp", parents=[common], help="Prokhorov distance of two path measures")
    p.add_argument("P")
    p.add_argument("Q")
    p.add_argument("--oracle", action="store_true", help="cross-check by subset enumeration")
    p.add_argument("--coupling", action="store_true", help="include the witness coupling")
    p.set_defaults(func=cmd_dp)

    p = sub.add_parser("dlp", parents=[common], help="Lipschitz-Prokhorov distance of two pairs")
    p.add_argument("A")
    p.add_argument("B")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true")
    g.add_argument("--maps", help="candidate maps for an upper bound")
    p.set_defaults(func=cmd_dlp)

    p = sub.add_parser("verify", parents=[common], help="check an (eps, delta) certificate")
    p.add_argument("cert")
    p.add_argument("A")
    p.add_argument("B")
    p.add_argument("--scale", choices=("exp", "unit"), default="exp")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compose", parents=[common], help="compose two certificates")
    p.add_argument("cert1")
    p.add_argument("cert2")
    p.add_argument("pairs", nargs="*", help="optional A B C pair files to verify the result")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("simulate", parents=[common], help="sample diffusion paths")
    p.add_argument("--family", choices=("circle", "torus"), default="circle")
    p.add_argument("--process", choices=("bm", "elliptic"), default="bm")
    p.add_argument("--L", type=float, default=2 * math.pi)
    p.add_argument("--L2", type=float)
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--nodes2", type=int)
    p.add_argument("--conductances", help="JSON with a 'conductances' list")
    p.add_argument("--Lambda", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tightness", parents=[common], help="phi-bound tightness table")
    p.add_argument("--bound", required=True)
    p.add_argument("--lambda-grid")
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--L", type=float)
    p.add_argument("--count", type=int, default=0, help="also estimate the modulus from this many paths")
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_tightness)

    p = sub.add_parser("mosco", parents=[common], help="resolvent convergence study")
    p.add_argument("--family", choices=("circle",), default="circle")
    p.add_argument("--L", type=float, default=2 * math.pi)
    p.add_argument("--resolutions", default="16,32,64,128")
    p.add_argument("--limit", type=int, default=512)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--modes", default="1,2,3")
    p.add_argument("--stretch", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_mosco)

    p = sub.add_parser("fdd", parents=[common], help="finite-dimensional distribution study")
    p.add_argument("--times", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--L", type=float, default=2 * math.pi)
    p.add_argument("--resolutions", default="16,32,64,128")
    p.add_argument("--limit", type=int, default=512)
    p.add_argument("--tol0", type=float, default=0.5)
    p.add_argument("--stretch", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_fdd)

    p = sub.add_parser("converge", parents=[common], help="certified d_LP along the circle family")
    p.add_argument("--L", type=float, default=2 * math.pi)
    p.add_argument("--resolutions", default="16,32,64,128")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--count", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("cauchy-limit", parents=[common], help="limit of a Lipschitz-Cauchy sequence")
    p.add_argument("input")
    p.set_defaults(func=cmd_cauchy)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    first = next((x for x in argv if not x.startswith("-")), None)
    if first is None and not any(x in ("-h", "--help", "--version") for x in argv):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if first is not None and first not in commands:
        print(f"lipro: unknown command {first!r}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    run = Run(args)
    code = EXIT_OK
    try:
        args.func(run)
    except CheckFailed as exc:
        print(f"lipro: check failed: {exc}", file=sys.stderr)
        code = EXIT_CHECK
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"lipro: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run.manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
