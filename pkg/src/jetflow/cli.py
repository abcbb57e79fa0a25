"""Command-line front end.

Reads a TOML system definition, runs the constraint pipelines, and
emits JSON reports, bracket tables, or RK4 trajectories.  Reports are
deterministic: the same file and RNG seed produce byte-identical
output.  The environment variable JETFLOW_THREADS caps the worker
threads used for sample sweeps.

Exit codes: 0 success, 2 input or configuration error, 3 assumption
failure during analysis (a partial report is still written).
"""

import argparse
import json
import sys

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np

from . import expr_core as ec
from . import precosym as pre
from . import jet_geometry as jg
from . import constraint_engine as eng
from . import hamiltonian_side as hs
from . import sode_analysis as sa

__all__ = ["main", "load_config", "analyze", "ConfigError"]


class ConfigError(ValueError):
    """Malformed system-definition file."""


_RUN_KEYS = {"rng_seed", "tol_rank", "residual_tol", "projection_tol",
             "max_generations"}

_PARSE_ERRORS = (ec.ExprSyntaxError, ec.UnknownSymbolError)


def load_config(path):
    """Parse and validate a system definition."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("TOML syntax error in %s: %s" % (path, exc))

    if "system" not in raw:
        raise ConfigError("missing [system] section")
    sysec = raw["system"]
    try:
        n = int(sysec["n"])
        lagrangian = str(sysec["lagrangian"])
    except KeyError as exc:
        raise ConfigError("[system] needs key %s" % exc)
    if n < 1:
        raise ConfigError("n must be positive")

    seed = None
    if "seed" in raw:
        seed = [float(v) for v in raw["seed"].get("point", [])]
        if len(seed) != 2 * n + 1:
            raise ConfigError("seed point needs %d coordinates, got %d"
                              % (2 * n + 1, len(seed)))

    Y_E = None
    if "connection" in raw:
        Y_E = [str(s) for s in raw["connection"].get("Y", [])]
        if len(Y_E) != n:
            raise ConfigError("connection Y needs %d components" % n)

    ham = raw.get("hamiltonian", {})
    h0_override = ham.get("h0")
    extra_constraints = [str(s) for s in ham.get("constraints", [])]
    mtab = ec.SymbolTable.momentum(n)
    for s in ([h0_override] if h0_override else []) + extra_constraints:
        try:
            ec.parse(str(s), mtab)
        except _PARSE_ERRORS as exc:
            raise ConfigError("[hamiltonian] expression %r: %s" % (s, exc))

    run = raw.get("run", {})
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError("unknown [run] keys: %s" % sorted(unknown))

    table = ec.SymbolTable.lagrangian(n)
    try:
        ec.parse(lagrangian, table)
    except _PARSE_ERRORS as exc:
        raise ConfigError("lagrangian does not parse: %s" % exc)
    if Y_E is not None:
        ytab = ec.SymbolTable.momentum(n)
        for s in Y_E:
            try:
                expr = ec.parse(s, ytab)
            except _PARSE_ERRORS as exc:
                raise ConfigError("connection component %r: %s" % (s, exc))
            for k in range(1 + n, 1 + 2 * n):
                if _depends_on(expr, ytab, k):
                    raise ConfigError(
                        "connection component %r depends on %s"
                        % (s, ytab.names[k]))

    return {
        "path": path,
        "n": n,
        "lagrangian": lagrangian,
        "seed": seed,
        "Y_E": Y_E,
        "h0_override": h0_override,
        "extra_constraints": extra_constraints,
        "rng_seed": int(run.get("rng_seed", 0)),
        "tol_rank": float(run.get("tol_rank", pre.TOL_RANK)),
        "residual_tol": float(run.get("residual_tol", eng.RESIDUAL_TOL)),
        "projection_tol": float(run.get("projection_tol", eng.PROJ_TOL)),
        "max_generations": run.get("max_generations"),
    }


def _depends_on(expr, table, k):
    d = ec.diff(expr, table.names[k])
    probe = [0.1 * (i + 1) for i in range(len(table.names))]
    try:
        return abs(d.ev(probe)) > 1e-14
    except ec.DomainError:
        return True


_FAILURES = (pre.NotCosymplectic, pre.SplitFails, pre.LinAlgDegeneracy,
             eng.RankDrift, eng.SingularStabilityMatrix,
             eng.InconsistentCharacterizations, eng.NoSolutionAtPoint,
             jg.PivotDegeneracy, hs.NonAffineLagrangian, hs.NotProjectable,
             hs.CbarSingular, sa.NotProjectable)


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        return _num(v.item())
    if isinstance(v, float):
        return 0.0 if v == 0.0 else float(v)
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _tower_levels(levels):
    out = []
    for lv in levels:
        out.append({
            "generation": lv.generation,
            "constraint_descriptions": list(lv.descriptions),
            "rank": lv.cumulative_rank,
            "added_rank": lv.added_rank,
            "sample_residuals": [_num(lv.dynamics_residual)],
        })
    return out


def _lift(chart, field):
    """Intrinsic-chart scalar viewed on the full momentum chart."""

    def g(z, _f=field, _c=chart):
        return _f(_c.intrinsic_of(list(z)))

    return ec.ScalarField(g, chart.full_dim, name=field.name)


def _coordinate_pairs(n, table):
    names = [table.names[k] for k in range(1, 1 + 2 * n)]
    pairs = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            pairs.append((1 + i, 1 + j, names[i], names[j]))
    return pairs


def analyze(cfg):
    """Full pipeline; returns (report_dict, exit_code)."""
    warnings = []
    report = {
        "system": {"n": cfg["n"], "lagrangian": cfg["lagrangian"]},
        "towers": {},
        "warnings": warnings,
        "provenance": {
            "rng_seed": cfg["rng_seed"],
            "tolerances": {
                "tol_rank": _num(cfg["tol_rank"]),
                "residual_tol": _num(cfg["residual_tol"]),
                "projection_tol": _num(cfg["projection_tol"]),
            },
        },
    }
    if cfg["h0_override"]:
        report["provenance"]["h0_override"] = cfg["h0_override"]
    if cfg["Y_E"]:
        report["provenance"]["connection"] = list(cfg["Y_E"])
    code = 0
    try:
        system = jg.LagrangianSystem(cfg["n"], cfg["lagrangian"],
                                     seed=cfg["seed"],
                                     rng_seed=cfg["rng_seed"],
                                     tol=cfg["tol_rank"])
        report["system"]["seed"] = _num(list(system.seed))
        kfl = jg.ker_fl_basis(system, tol=cfg["tol_rank"])
        report["regularity"] = {
            "hessian_rank": system.n - kfl.m,
            "corank": kfl.m,
            "regular": kfl.m == 0,
        }
        report["provenance"]["pivots"] = {
            "hessian_pivot_cols": list(kfl.pivot_cols),
            "hessian_free_cols": list(kfl.free_cols),
        }

        problem = jg.dynamical_problem(system, rng_seed=cfg["rng_seed"],
                                       name="lagrangian")
        lag = eng.run(problem, max_generations=cfg["max_generations"])
        report["towers"]["lagrangian"] = _tower_levels(lag.levels)
        report.setdefault("termination", {})["lagrangian"] = lag.termination
        warnings.extend(lag.warnings)

        analysis = hs.hamiltonian_algorithm(system, Y_E=cfg["Y_E"],
                                            rng_seed=cfg["rng_seed"],
                                            tol=cfg["tol_rank"])
        ham = analysis.report
        report["towers"]["hamiltonian"] = _tower_levels(ham.levels)
        report["termination"]["hamiltonian"] = ham.termination
        warnings.extend(ham.warnings)

        fl_rec = hs.verify_fl_related(lag, analysis)
        report["fl_relation"] = _num({
            "primary_pullback": fl_rec["primary_pullback"],
            "generation_counts": fl_rec["generation_counts"],
            "matched": fl_rec["matched"],
        })

        el = sa.euler_lagrange_algorithm(
            system, rng_seed=cfg["rng_seed"], tol=cfg["tol_rank"],
            max_generations=cfg["max_generations"])
        report["towers"]["euler_lagrange"] = _tower_levels(el.levels)
        report["termination"]["euler_lagrange"] = el.termination
        warnings.extend(el.warnings)
        report["sode"] = {
            "projectability": dict(sorted(el.projectability.items())),
            "tags": dict(sorted(el.tags().items())),
            "gauge_dimension": len(el.gauge_fields),
            "tangency_residual": _num(el.tangency_residual),
        }
        flgen = sa.fl_generation_check(el, analysis)
        report["sode"]["fl_image"] = _num(flgen)

        report.update(_classification_block(system, analysis, cfg, warnings))
    except _FAILURES as exc:
        warnings.append("%s: %s" % (type(exc).__name__, exc))
        report["status"] = "assumption_failure"
        code = 3
    else:
        report["status"] = "ok"
    return report, code


def _classification_block(system, analysis, cfg, warnings):
    chart = analysis.chart
    n = system.n
    space = hs.build_canonical_space(n, Y_E=cfg["Y_E"])
    primaries = list(chart.primaries)
    finals = [_lift(chart, f) for f in analysis.constraint_fields]
    for k, s in enumerate(cfg["extra_constraints"]):
        expr = ec.parse(s, space.table)
        finals.append(ec.ScalarField.from_expr(expr, space.table,
                                               name="user[%d]" % k))
    start = list(chart.legendre(list(system.seed)))
    out = {}
    if not primaries and not finals:
        out["classification"] = {
            "second_class": [], "first_class": [],
            "counts": {"l0": 0, "k0": 0, "k0f": 0, "sf": 0, "kf": 0},
        }
        table = {}
        for i, j, a, b in _coordinate_pairs(n, space.table):
            F = ec.ScalarField(lambda z, _i=i: z[_i], space.dim, name=a)
            G = ec.ScalarField(lambda z, _j=j: z[_j], space.dim, name=b)
            table["{%s,%s}" % (a, b)] = _num(
                pre.core(hs.poisson_bracket(space, F, G)(start)))
        out["dirac_bracket_table"] = table
        return out

    cls = hs.classify_constraints(space, primaries, finals, start,
                                  tol=cfg["tol_rank"])
    out["classification"] = {
        "second_class": [f.name for f in cls.second_class],
        "first_class": [f.name for f in cls.first_class],
        "counts": _num({k: v for k, v in cls.counts.items()
                        if not isinstance(v, (list, tuple))}),
    }
    table = {}
    if cls.second_class:
        ctx = hs.DiracContext(space, cls)
        z0 = list(cls.anchor)
        for i, j, a, b in _coordinate_pairs(n, space.table):
            F = ec.ScalarField(lambda z, _i=i: z[_i], space.dim, name=a)
            G = ec.ScalarField(lambda z, _j=j: z[_j], space.dim, name=b)
            table["{%s,%s}" % (a, b)] = _num(
                pre.core(ctx.dirac_bracket(F, G)(z0)))
    else:
        z0 = list(cls.anchor)
        for i, j, a, b in _coordinate_pairs(n, space.table):
            F = ec.ScalarField(lambda z, _i=i: z[_i], space.dim, name=a)
            G = ec.ScalarField(lambda z, _j=j: z[_j], space.dim, name=b)
            table["{%s,%s}" % (a, b)] = _num(
                pre.core(hs.poisson_bracket(space, F, G)(z0)))
    out["dirac_bracket_table"] = table
    return out


def _emit(report, args):
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    if getattr(args, "json", False) or not getattr(args, "out", None):
        sys.stdout.write(text)


def cmd_analyze(args):
    cfg = load_config(args.file)
    report, code = analyze(cfg)
    _emit(report, args)
    return code


def cmd_bracket(args):
    cfg = load_config(args.file)
    n = cfg["n"]
    space = hs.build_canonical_space(n, Y_E=cfg["Y_E"])
    try:
        F = ec.ScalarField.from_expr(ec.parse(args.f, space.table),
                                     space.table, name=args.f)
        G = ec.ScalarField.from_expr(ec.parse(args.g, space.table),
                                     space.table, name=args.g)
    except _PARSE_ERRORS as exc:
        raise ConfigError("bracket argument: %s" % exc)

    system = jg.LagrangianSystem(n, cfg["lagrangian"], seed=cfg["seed"],
                                 rng_seed=cfg["rng_seed"],
                                 tol=cfg["tol_rank"])
    analysis = hs.hamiltonian_algorithm(system, Y_E=cfg["Y_E"],
                                        rng_seed=cfg["rng_seed"],
                                        tol=cfg["tol_rank"])
    chart = analysis.chart
    primaries = list(chart.primaries)
    finals = [_lift(chart, f) for f in analysis.constraint_fields]
    start = list(chart.legendre(list(system.seed)))

    pb = hs.poisson_bracket(space, F, G)
    rows = []
    if primaries or finals:
        cls = hs.classify_constraints(space, primaries, finals, start,
                                      tol=cfg["tol_rank"])
        ctx = hs.DiracContext(space, cls) if cls.second_class else None
        points = _bracket_points(primaries + finals, cls.anchor,
                                 cfg["rng_seed"])
        for z in points:
            row = {"point": _num(list(z)),
                   "poisson": _num(pre.core(pb(list(z))))}
            if ctx is not None:
                row["dirac"] = _num(pre.core(ctx.dirac_bracket(F, G)(list(z))))
            else:
                row["dirac"] = row["poisson"]
            rows.append(row)
    else:
        points = _bracket_points([], start, cfg["rng_seed"])
        for z in points:
            v = _num(pre.core(pb(list(z))))
            rows.append({"point": _num(list(z)), "poisson": v, "dirac": v})

    doc = {"f": args.f, "g": args.g, "rows": rows}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    return 0


def _bracket_points(constraints, anchor, rng_seed):
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed).spawn(4)[3])
    points = [list(anchor)]
    tries = 0
    while len(points) < 11 and tries < 100:
        tries += 1
        x0 = list(np.asarray(anchor) + rng.normal(0.0, 0.3, len(anchor)))
        if constraints:
            x = eng.gauss_newton_project(constraints, x0)
            if x is None:
                continue
            points.append(list(x))
        else:
            points.append(x0)
    return points


def cmd_integrate(args):
    cfg = load_config(args.file)
    system = jg.LagrangianSystem(cfg["n"], cfg["lagrangian"],
                                 seed=cfg["seed"], rng_seed=cfg["rng_seed"],
                                 tol=cfg["tol_rank"])
    el = sa.euler_lagrange_algorithm(system, rng_seed=cfg["rng_seed"],
                                     tol=cfg["tol_rank"],
                                     max_generations=cfg["max_generations"])
    if el.termination != "final" or el.X_final is None:
        sys.stderr.write("no final second-order dynamics: %s\n"
                         % el.termination)
        return 3
    x = list(system.seed)
    if el.constraints:
        x = eng.gauss_newton_project(el.constraints, x)
        if x is None:
            sys.stderr.write("seed cannot be projected onto the final "
                             "constraint set\n")
            return 3
        x = list(x)

    field = el.X_final
    names = [system.table.names[k] for k in range(system.dim)]
    header = names + ["drift:%s" % f.name for f in el.constraints]
    lines = [",".join(header)]
    h = args.step
    steps = int(round(args.horizon / h))
    state = [float(v) for v in x]
    for k in range(steps + 1):
        drifts = [abs(pre.core(f(list(state)))) for f in el.constraints]
        row = [repr(float(v)) for v in state] + \
              [repr(float(d)) for d in drifts]
        lines.append(",".join(row))
        if k == steps:
            break
        state = _rk4_step(field, state, h)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _rk4_step(field, x, h):
    def f(y):
        return [pre.core(c) for c in field(list(y))]

    k1 = f(x)
    k2 = f([xi + 0.5 * h * ki for xi, ki in zip(x, k1)])
    k3 = f([xi + 0.5 * h * ki for xi, ki in zip(x, k2)])
    k4 = f([xi + h * ki for xi, ki in zip(x, k3)])
    return [xi + h / 6.0 * (a + 2 * b + 2 * c + d)
            for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="jetflow",
        description="Constraint-algorithm workbench for time-dependent "
                    "singular Lagrangians.",
        epilog="JETFLOW_THREADS caps the sampling worker threads.")
    sub = ap.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="run the full pipeline")
    pa.add_argument("file")
    pa.add_argument("--out", help="write the JSON report to this path")
    pa.add_argument("--json", action="store_true",
                    help="also print the report to stdout when --out is set")
    pa.set_defaults(fn=cmd_analyze)

    pb = sub.add_parser("bracket", help="evaluate Poisson and Dirac brackets")
    pb.add_argument("file")
    pb.add_argument("--f", required=True, help="expression in t,q,p")
    pb.add_argument("--g", required=True, help="expression in t,q,p")
    pb.set_defaults(fn=cmd_bracket)

    pi = sub.add_parser("integrate", help="RK4 trajectory of the final field")
    pi.add_argument("file")
    pi.add_argument("--horizon", type=float, required=True)
    pi.add_argument("--step", type=float, required=True)
    pi.add_argument("--out", help="write CSV to this path")
    pi.set_defaults(fn=cmd_integrate)
    return ap


def main(argv=None):
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2
    except _PARSE_ERRORS as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2
    except _FAILURES as exc:
        sys.stderr.write("assumption failure: %s: %s\n"
                         % (type(exc).__name__, exc))
        return 3


if __name__ == "__main__":
    sys.exit(main())
