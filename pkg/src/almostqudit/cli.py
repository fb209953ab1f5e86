"""Command-line front end.

Every subcommand writes a CSV table (stdout unless ``--out`` is given) and,
next to an ``--out`` file, a JSON run manifest.  Exit codes: 0 success,
2 configuration error, 3 solver failure, 4 failed ``--check``.

Config files are YAML::

    scenario:
      n_x: 4             # preparations
      n_b: [2, 2]        # outcomes per setting
      d: 2
      epsilon: 0.0       # one value or one per preparation
      classical: false
    witness:             # preset rac / cert4 / cert3, or explicit terms
      preset: rac
      digits: 2
      alphabet: 2
      # terms: [[b, x, y, coefficient], ...]
    level: 2             # or "2+RVM+VRM"
    extras: ["r0 V M0|1"]
    symmetry:            # preset rac / cert, or explicit generators
      generators:
        - {x: [1, 0, 3, 2], y: [0, 1], b: [[1, 0], [0, 1]]}
    solver: {backend: native, gap_tol: 1.0e-7}
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import scenarios as sc
from .errors import DomainError, ParseError, ResourceError, SolverFailure
from .moments import Scenario, SymmetryGroup, build_moment_problem, build_monomial_list, parse_relabeling, symmetrize
from .sdp import SolverSettings, solve, write_sdpa

log = logging.getLogger("almostqudit")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    """A ``--check`` assertion did not hold."""


@dataclass
class RunRecord:
    config_hash: str
    command: str
    solver: dict
    wall_time: float = 0.0
    results: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    seeds: list = field(default_factory=list)


# --------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Parse a YAML config, reporting syntax errors with their line."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"{path}: {getattr(exc, 'problem', exc)}", line) from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping", 1)
    return data


def _require(mapping, key, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise DomainError(f"config: missing '{where}{key}'")
    return mapping[key]


def scenario_from_config(cfg: dict) -> Scenario:
    s = _require(cfg, "scenario", "")
    n_b = _require(s, "n_b", "scenario.")
    if isinstance(n_b, int):
        n_b = [n_b] * int(_require(s, "n_y", "scenario."))
    return Scenario(int(_require(s, "n_x", "scenario.")), tuple(int(b) for b in n_b), int(s.get("d", 2)),
                    s.get("epsilon", 0.0), bool(s.get("classical", False)))


def witness_from_config(cfg: dict, scenario: Scenario) -> sc.Witness:
    w = _require(cfg, "witness", "")
    preset = w.get("preset")
    if preset == "rac":
        witness = sc.rac_witness(int(w.get("digits", 2)), int(w.get("alphabet", 2)))
    elif preset == "cert4":
        witness = sc.measurement_cert_witness()
    elif preset == "cert3":
        witness = sc.ternary_cert_witnesses()[int(w.get("omitted", 0))]
    elif preset is None:
        terms = _require(w, "terms", "witness.")
        c = np.zeros((max(scenario.n_b), scenario.n_x, scenario.n_y))
        for k, term in enumerate(terms):
            try:
                b, x, y, coef = term
                c[int(b), int(x), int(y)] += float(coef)
            except (ValueError, TypeError, IndexError):
                raise DomainError(f"config: witness.terms[{k}] must be [b, x, y, coefficient] in range") from None
        witness = sc.Witness(c, w.get("name", "custom"))
    else:
        raise DomainError(f"config: unknown witness preset {preset!r}")
    shape = (max(scenario.n_b), scenario.n_x, scenario.n_y)
    if witness.coefficients.shape != shape:
        raise DomainError(f"config: witness shape {witness.coefficients.shape} does not fit scenario {shape}")
    return witness


def symmetry_from_config(cfg: dict, scenario: Scenario) -> SymmetryGroup | None:
    s = cfg.get("symmetry")
    if not s:
        return None
    if s.get("preset") == "rac":
        w = cfg.get("witness", {})
        return sc.rac_symmetry(scenario, int(w.get("digits", 2)), int(w.get("alphabet", 2)))
    if s.get("preset") == "cert":
        return sc.cert_symmetry(scenario, int(cfg.get("witness", {}).get("omitted", 0)))
    gens = [parse_relabeling(g, scenario) for g in _require(s, "generators", "symmetry.")]
    return SymmetryGroup(scenario, gens)


def solver_from_config(cfg: dict) -> SolverSettings:
    s = dict(cfg.get("solver") or {})
    unknown = set(s) - set(SolverSettings.__dataclass_fields__)
    if unknown:
        raise DomainError(f"config: unknown solver option(s) {sorted(unknown)}")
    return SolverSettings(**s)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# output


def _grid(text, default):
    """``"0,1e-3"`` or ``"start:stop:num"`` (inclusive linspace) to a list of floats."""
    if text is None:
        return list(default)
    if text.count(":") == 2:
        a, b, n = text.split(":")
        return [float(v) for v in np.linspace(float(a), float(b), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return v


def emit(rows, columns, args, record: RunRecord):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    record.results = rows
    if args.out:
        out = Path(args.out)
        out.write_text(buf.getvalue())
        manifest = out.with_suffix(".manifest.json")
        record.artifacts += [str(out), str(manifest)]
        manifest.write_text(json.dumps(asdict(record), indent=2, default=_jsonable))
    else:
        sys.stdout.write(buf.getvalue())


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _pool_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _check(cond, message):
    if not cond:
        raise CheckFailed(message)
    log.info("check passed: %s", message)


# --------------------------------------------------------------------------
# subcommands


_KNOWN_BOUNDS = {
    ("rac2x2", 2, False): sc.RAC_QUBIT,
    ("rac2x2", 2, True): 0.75,
    ("rac2x2", 3, False): (6 + math.sqrt(2)) / 8,
    ("cert4", 2, False): sc.CERT_QUATERNARY,
}


def cmd_bound(args) -> RunRecord:
    cfg = load_config(args.config)
    scenario = scenario_from_config(cfg)
    if args.epsilon_override is not None:
        scenario = scenario.with_epsilon(args.epsilon_override)
    if args.classical:
        scenario = Scenario(scenario.n_x, scenario.n_b, scenario.d, scenario.epsilons, True)
    witness = witness_from_config(cfg, scenario)
    level = args.level if args.level is not None else cfg.get("level", 2)
    settings = solver_from_config(cfg)
    record = RunRecord(config_hash(cfg), "bound", asdict(settings))
    start = time.perf_counter()
    monomials = build_monomial_list(scenario, level, cfg.get("extras", ()))
    problem = build_moment_problem(scenario, monomials, objective=witness)
    symmetry = symmetry_from_config(cfg, scenario)
    if symmetry is not None:
        problem = symmetrize(problem, symmetry)
    sdp = problem.to_sdp()
    if args.export_sdpa:
        write_sdpa(sdp, args.export_sdpa)
        record.artifacts.append(str(args.export_sdpa))
    sol = solve(sdp, settings)
    record.wall_time = time.perf_counter() - start
    row = {"level": str(level), "epsilon": float(max(scenario.epsilons)), "d": scenario.d,
           "classical": scenario.classical, "status": sol.status, "bound": float(sol.dual_value),
           "slack": float(sol.slack), "primal": float(sol.primal_value), "monomials": problem.size,
           "variables": problem.num_vars, "seconds": round(record.wall_time, 3)}
    emit([row], list(row), args, record)
    if not sol.ok:
        raise SolverFailure(f"solver status {sol.status}: {sol.message}", sol)
    if args.check:
        expected = args.expect
        if expected is None and not any(scenario.epsilons):
            expected = _KNOWN_BOUNDS.get((witness.name, scenario.d, scenario.classical))
        if expected is None:
            raise CheckFailed("no reference value for this config; pass --expect")
        _check(abs(sol.dual_value - expected) <= args.tol,
               f"bound {sol.dual_value:.9f} vs reference {expected:.9f} (tol {args.tol})")
    return record


def _randomness_point(task):
    p, eps, level, restarts, seed = task
    scenario = sc.rac_scenario(epsilon=eps)
    witness = sc.rac_witness()
    row = {"p_RAC": p, "epsilon": eps}
    try:
        g = sc.guessing_probability(scenario, witness, p, level=level)
        row["P_g_upper"] = g.p_guess
        row["R_lower"] = g.randomness
    except (DomainError, SolverFailure) as exc:
        row["R_lower"], row["note"] = float("nan"), str(exc)
    from .seesaw import guess_witness, seesaw_constrained

    ss = seesaw_constrained(scenario, guess_witness(scenario, 0, 0, 0), witness, p, restarts=restarts, seed=seed)
    row["P_g_seesaw"] = ss.value
    row["R_upper"] = -math.log2(ss.value) if ss.value > 0 else float("nan")
    return row


def cmd_randomness(args) -> RunRecord:
    ps = _grid(args.observed, [sc.RAC_QUBIT])
    epss = _grid(args.epsilon, [0.0, 1e-3])
    level = args.level or 2
    record = RunRecord(config_hash([ps, epss, level, args.restarts, args.seed]), "randomness",
                       asdict(SolverSettings()), seeds=[args.seed + k for k in range(args.restarts)])
    start = time.perf_counter()
    tasks = [(p, e, level, args.restarts, args.seed) for e in epss for p in ps]
    rows = _pool_map(_randomness_point, tasks, args.workers)
    # the perturbative estimate needs the exact-qubit curve R0(p)
    qubit = sc.rac_scenario()
    witness = sc.rac_witness()
    cache = {}

    def r0(p):
        key = round(p, 12)
        if key not in cache:
            if p <= 0.75:
                cache[key] = 0.0
            else:
                try:
                    cache[key] = sc.guessing_probability(qubit, witness, min(p, sc.RAC_QUBIT), level=level).randomness
                except DomainError:
                    cache[key] = 0.0
        return cache[key]

    for row in rows:
        row["R_perturbative"] = sc.perturbative_randomness(row["p_RAC"], [row["epsilon"]] * qubit.n_x, 0, r0)
    record.wall_time = time.perf_counter() - start
    columns = ["p_RAC", "epsilon", "R_lower", "R_upper", "R_perturbative", "P_g_upper", "P_g_seesaw", "note"]
    emit(rows, columns, args, record)
    if args.check:
        for row in rows:
            _check(row["R_upper"] >= row["R_lower"] - 1e-3, f"bracket at p={row['p_RAC']}, eps={row['epsilon']}")
            if abs(row["p_RAC"] - sc.RAC_QUBIT) < 1e-9 and row["epsilon"] == 0.0:
                _check(abs(row["R_lower"] - 0.228) <= 0.005, f"R(eps=0) = {row['R_lower']:.4f} ~ 0.228")
            if abs(row["p_RAC"] - sc.RAC_QUBIT) < 1e-9 and row["epsilon"] == 1e-3:
                _check(abs(row["R_lower"] - 0.152) <= 0.01, f"R(eps=1e-3) = {row['R_lower']:.4f} ~ 0.152")
            if row["epsilon"] >= 1e-2 and row["p_RAC"] <= sc.RAC_QUBIT:
                _check(row["R_perturbative"] == 0.0, f"no perturbative randomness at eps={row['epsilon']}")
    return record


def _cert_point(task):
    eps, level, restarts, seed = task
    from .seesaw import seesaw_maximize

    upper, _ = sc.cert_ternary_bound(eps, level)
    ss = seesaw_maximize(sc.cert_scenario(eps, 3), sc.ternary_cert_witnesses()[0], restarts=restarts, seed=seed)
    return {"epsilon": eps, "A_ternary_upper": upper, "A_ternary_seesaw": ss.value}


def cmd_certify_measurement(args) -> RunRecord:
    epss = _grid(args.epsilon, [0.0, 5e-4, 3.5e-3])
    level = args.level or "2+RMM"
    record = RunRecord(config_hash([epss, level, args.restarts, args.seed]), "certify-measurement",
                       asdict(SolverSettings()), seeds=[args.seed + k for k in range(args.restarts)])
    start = time.perf_counter()
    rows = _pool_map(_cert_point, [(e, level, args.restarts, args.seed) for e in epss], args.workers)
    quaternary = sc.hierarchy_bound(sc.cert_scenario(0.0), sc.measurement_cert_witness(), 2).value
    ternary0, _ = sc.cert_ternary_bound(0.0, level)
    witness = sc.ternary_cert_witnesses()[0]
    for row in rows:
        row["A_quaternary"] = quaternary
        row["A_perturbative"] = sc.perturbative_bound(witness, ternary0, row["epsilon"])
    record.wall_time = time.perf_counter() - start
    emit(rows, ["epsilon", "A_ternary_upper", "A_ternary_seesaw", "A_quaternary", "A_perturbative"], args, record)
    if args.check:
        _check(abs(quaternary - sc.CERT_QUATERNARY) <= 1e-6, f"quaternary optimum {quaternary:.8f}")
        _check(abs(ternary0 - 0.78367) <= 5e-4, f"ternary bound at eps=0 {ternary0:.6f}")
        for row in rows:
            _check(row["A_ternary_seesaw"] <= row["A_ternary_upper"] + 1e-6, f"bracket at eps={row['epsilon']}")
            if row["epsilon"] >= 5e-4:
                _check(row["A_ternary_upper"] >= 0.78514, f"ternary bound at eps={row['epsilon']} reaches 0.78514")
    return record


def _bigrac_point(task):
    d, level, restarts, seed = task
    from .seesaw import seesaw_maximize

    scenario = sc.rac_scenario(3, 3, d=d)
    witness = sc.rac_witness(3, 3)
    t0 = time.perf_counter()
    upper = sc.hierarchy_bound(scenario, witness, level, symmetry=sc.rac_symmetry(scenario, 3, 3))
    lower = seesaw_maximize(scenario, witness, D=d, restarts=restarts, seed=seed, tol=1e-7)
    return {"d": d, "upper": upper.value, "lower": lower.value, "status": upper.solution.status,
            "variables": upper.num_vars, "seconds": round(time.perf_counter() - t0, 2)}


def cmd_bigrac(args) -> RunRecord:
    ds = list(range(args.dmin, args.dmax + 1))
    level = args.level or sc.BIGRAC_LEVEL
    record = RunRecord(config_hash([ds, level, args.restarts, args.seed]), "bigrac", asdict(SolverSettings()),
                       seeds=[args.seed + k for k in range(args.restarts)])
    start = time.perf_counter()
    rows = _pool_map(_bigrac_point, [(d, level, args.restarts, args.seed) for d in ds], args.workers)
    record.wall_time = time.perf_counter() - start
    emit(rows, ["d", "upper", "lower", "status", "variables", "seconds"], args, record)
    if args.check:
        for row in rows:
            _check(row["lower"] <= row["upper"] + 1e-6, f"bracket at d={row['d']}")
        for a, b in zip(rows, rows[1:]):
            _check(b["upper"] >= a["upper"] - 1e-6, f"upper bound nondecreasing from d={a['d']} to d={b['d']}")
    return record


def _selftest_point(task):
    from .seesaw import selftest_fidelity

    eps, theta = task
    p, f = selftest_fidelity(theta, eps)
    return {"epsilon": eps, "theta": theta, "p_RAC": p, "F_upper": f}


def cmd_selftest(args) -> RunRecord:
    from .seesaw import shared_randomness_curve

    thetas = _grid(args.theta, np.linspace(0, math.pi / 4, 9))
    epss = _grid(args.epsilon, [0.0, 1e-3])
    record = RunRecord(config_hash([thetas, epss]), "selftest", asdict(SolverSettings()))
    start = time.perf_counter()
    rows = _pool_map(_selftest_point, [(e, t) for e in epss for t in thetas], args.workers)
    for eps in epss:
        mine = [r for r in rows if r["epsilon"] == eps]
        curve = shared_randomness_curve([(r["p_RAC"], r["F_upper"]) for r in mine])
        for r in mine:
            r["F_shared"] = float(np.interp(r["p_RAC"], curve[:, 0], curve[:, 1]))
    record.wall_time = time.perf_counter() - start
    emit(rows, ["epsilon", "theta", "p_RAC", "F_upper", "F_shared"], args, record)
    if args.check:
        for r in rows:
            _check(r["F_shared"] <= r["F_upper"] + 1e-6, "shared randomness cannot raise the fidelity bound")
            if abs(r["theta"] - math.pi / 4) > 1e-12:
                continue
            _check(r["F_upper"] >= 1 - r["epsilon"] - 1e-6, "partial trace keeps fidelity at least 1 - eps")
            if r["epsilon"] == 0:
                _check(abs(r["F_upper"] - 1) < 1e-6 and abs(r["p_RAC"] - sc.RAC_QUBIT) < 1e-9, "BB84 point")
    return record


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="almostqudit", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        p.add_argument("--out", help="CSV path; a .manifest.json is written next to it")
        p.add_argument("--check", action="store_true", help="assert reference values, exit 4 on violation")
        p.add_argument("--level", default=None, help="hierarchy level, e.g. 2 or 2+RVM")
        if grid:
            p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
            p.add_argument("--restarts", type=int, default=10)
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bound", help="upper bound on a witness from a config file")
    p.add_argument("config")
    p.add_argument("--epsilon-override", type=float, default=None)
    p.add_argument("--classical", action="store_true")
    p.add_argument("--export-sdpa", default=None, metavar="PATH")
    p.add_argument("--expect", type=float, default=None, help="reference value for --check")
    p.add_argument("--tol", type=float, default=1e-6)
    common(p, grid=False)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("randomness", help="certified randomness of the 2-bit RAC")
    p.add_argument("--observed", default=None, help="p_RAC grid: 'a,b,c' or 'start:stop:num'")
    p.add_argument("--epsilon", default=None, help="epsilon grid")
    common(p)
    p.set_defaults(func=cmd_randomness)

    p = sub.add_parser("certify-measurement", help="ternary restriction of the four-outcome certificate")
    p.add_argument("--epsilon", default=None)
    common(p)
    p.set_defaults(func=cmd_certify_measurement)

    p = sub.add_parser("bigrac", help="three-trit RAC bounds versus d")
    p.add_argument("--dmin", type=int, default=2)
    p.add_argument("--dmax", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_bigrac)

    p = sub.add_parser("selftest", help="fidelity to BB84 of the four-level family")
    p.add_argument("--theta", default=None)
    p.add_argument("--epsilon", default=None)
    common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ParseError, DomainError, ResourceError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
