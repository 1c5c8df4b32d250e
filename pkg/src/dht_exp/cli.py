"""Command-line front end: ``dht-exp {d2, dht-bound, lab}``.

Curves go out as CSV (``#`` metadata lines, a header row, 9 significant
digits) or JSON. Whenever ``--out`` is given a ``<out>.manifest.json``
sidecar records the command, the configuration, the seed, the version, the
wall time and the SHA-256 of the output.
Exit codes: 0 ok, 2 parse error, 3 infeasible parameters, 4 size guard.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from decimal import Decimal, InvalidOperation

import numpy as np

from . import __version__
from .cd_lab import (
    CdCode,
    CoverError,
    EnsembleSpec,
    SizeGuardError,
    cd_np_exact,
    chernoff_parameter_exact,
    draw_hierarchical,
    enumerate_tally,
    enumerator_expectation_exact,
    ensemble_rng,
    greedy_cover,
    induced_distribution,
    rate_count,
    type_class_code,
)
from .dht_bounds import OperatingPoint, SearchConfig, e2_converse, e2_curve, no_loss_check
from .exponent_solver import arc_forms
from .ordinary_ht import critical_point, d2_chernoff, d2_primal
from .prob_core import (
    HypothesisPair,
    ProbError,
    TypeDescriptor,
    binary_example,
    chernoff_diag_lam,
    mutual_information,
    type_class_size,
    type_enumerate,
)

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SIZE = 0, 2, 3, 4
PRESETS = {"binary-example": binary_example}
MC_SLACK = 0.15          # nats, ensemble Chernoff criterion
Z_LIMIT = 3.0            # standard errors, enumerator criterion
COVER_EXTRA = 5          # permutations above the covering estimate


class ParseError(Exception):
    pass


# --------------------------------------------------------------------------
# input

def _num(v) -> float:
    if isinstance(v, str):
        try:
            return float(Decimal(v))
        except InvalidOperation as e:
            raise ParseError(f"not a number: {v!r}") from e
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    raise ParseError(f"not a number: {v!r}")


def _matrix(v, nx, ny, name):
    a = np.array([_num(t) for t in np.ravel(np.array(v, dtype=object))], dtype=float) if v is not None else None
    if a is None or a.size != nx * ny:
        raise ParseError(f"{name} must hold {nx}x{ny} entries")
    return a.reshape(nx, ny)


def load_problem(path: str | None, preset: str | None) -> HypothesisPair:
    if preset is not None:
        if preset not in PRESETS:
            raise ParseError(f"unknown preset {preset!r}")
        return PRESETS[preset]()
    if path is None:
        raise ParseError("one of --problem or --preset is required")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read problem file: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError("problem file must be a JSON object")
    if "preset" in doc:
        return load_problem(None, doc["preset"])
    try:
        nx, ny = int(doc["nx"]), int(doc["ny"])
        p = _matrix(doc.get("p_xy"), nx, ny, "p_xy")
        pb = _matrix(doc.get("pbar_xy"), nx, ny, "pbar_xy")
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed problem file: {e}") from e
    try:
        return HypothesisPair(p, pb)
    except ProbError as e:
        raise ParseError(str(e)) from e


def parse_range(text: str) -> np.ndarray:
    """``start:end:step`` (inclusive end) or a single value."""
    try:
        parts = [Decimal(t) for t in text.split(":")]
    except InvalidOperation as e:
        raise ParseError(f"bad range {text!r}") from e
    if len(parts) == 1:
        return np.array([float(parts[0])])
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ParseError(f"bad range {text!r}")
    k = int((parts[1] - parts[0]) / parts[2])
    # decimal arithmetic keeps 0:0.1:0.01 exactly on its grid
    return np.array([float(parts[0] + i * parts[2]) for i in range(k + 1)])


def parse_list(text: str, cast=float) -> list:
    try:
        return [cast(Decimal(t)) if cast is float else cast(t) for t in text.split(",") if t.strip()]
    except (InvalidOperation, ValueError) as e:
        raise ParseError(f"bad list {text!r}") from e


def parse_seq(text: str) -> list[int]:
    t = text.replace(",", "")
    if not t.isdigit():
        raise ParseError(f"bad sequence {text!r}")
    return [int(c) for c in t]


# --------------------------------------------------------------------------
# output

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    if v == 0:
        return "0"
    return f"{v:.9g}"


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return fmt(v) if not math.isfinite(v) else float(fmt(v))
    return v


def render_csv(meta: dict, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v) if not isinstance(v, str) else v for v in r) + "\n")
    return buf.getvalue()


def render_json(meta: dict, header: list[str], rows: list[list]) -> str:
    doc = {"meta": meta, "rows": [dict(zip(header, r)) for r in rows]}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"


def emit(text: str, args, config: dict, t0: float) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    data = text.encode("utf-8")
    with open(args.out, "wb") as f:
        f.write(data)
    manifest = {
        "command": ["dht-exp"] + list(args.argv),
        "config": _jsonable(config),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "output": os.path.basename(args.out),
        "output_sha256": hashlib.sha256(data).hexdigest(),
    }
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def verify_manifest(out_path: str) -> bool:
    """Recompute the digest of an output file against its sidecar."""
    with open(out_path + ".manifest.json", encoding="utf-8") as f:
        m = json.load(f)
    with open(out_path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest() == m["output_sha256"]


def threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DHT_EXP_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ParseError("DHT_EXP_THREADS must be an integer") from None


# --------------------------------------------------------------------------
# commands

def cmd_d2(args, pair: HypothesisPair, t0: float) -> None:
    """Ordinary reliability function of the joint laws (or one marginal)."""
    if args.marginal == "joint":
        p, pb = pair.p_xy.ravel(), pair.pbar_xy.ravel()
    elif args.marginal == "x":
        p, pb = pair.p_x, pair.pbar_x
    else:
        p, pb = pair.p_xy.sum(0), pair.pbar_xy.sum(0)
    d1s = np.sort(parse_range(args.d1))
    if np.any(d1s < 0):
        raise ProbError("D1 must be nonnegative")
    crit = critical_point(p, pb)
    rows = []
    for d1 in d1s:
        rows.append([d1, d2_primal(p, pb, d1), d2_chernoff(p, pb, d1), bool(d1 > crit)])
    meta = {"tool": f"dht-exp {__version__}", "command": "d2", "marginal": args.marginal,
            "critical_point": fmt(crit)}
    header = ["D1", "D2_primal", "D2_dual", "past_critical"]
    text = render_csv(meta, header, rows) if args.format == "csv" else render_json(meta, header, rows)
    emit(text, args, {"marginal": args.marginal, "d1": args.d1}, t0)


def search_config(args) -> SearchConfig:
    kw = {}
    if args.qx_res is not None:
        kw["qx_resolution"] = args.qx_res
    if args.u_card is not None:
        kw["u_cardinality"] = args.u_card
    if args.u_res is not None:
        kw["u_resolution"] = args.u_res
    if args.rb_grid is not None:
        kw["rb_grid_size"] = args.rb_grid
    if args.rb_search is not None:
        kw["rb_search"] = args.rb_search
    if args.tau_max is not None:
        kw["tau_max"] = args.tau_max
    if args.tau_points is not None:
        kw["tau_points"] = args.tau_points
    if args.scheme is not None:
        kw["scheme"] = args.scheme
    cfg = SearchConfig(**kw)
    return cfg


def _rate_rows(job):
    pair, R, e1s, cfg = job
    reps = e2_curve(R, e1s, pair, cfg)
    out = []
    for E1, rep in zip(e1s, reps):
        conv = e2_converse(OperatingPoint(R, E1), pair)
        q = ";".join(fmt(v) for v in rep.qx) if rep.qx is not None else ""
        out.append([R, E1, rep.value, conv, q, rep.tau if rep.tau is not None else math.nan])
    return out


def cmd_dht_bound(args, pair: HypothesisPair, t0: float) -> None:
    rates = parse_list(args.rates)
    e1s = parse_range(args.e1)
    if not rates or any(r < 0 for r in rates) or np.any(e1s < 0):
        raise ProbError("rates and E1 values must be nonnegative")
    cfg = search_config(args)
    if args.doubled:
        cfg = cfg.doubled(pair.nx)
    jobs = [(pair, R, list(e1s), cfg) for R in rates]
    nthreads = threads(args)
    if nthreads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(nthreads, len(jobs))) as ex:
            parts = list(ex.map(_rate_rows, jobs))
    else:
        parts = [_rate_rows(j) for j in jobs]
    rows = [r for part in parts for r in part]
    cfg_echo = asdict(cfg) | {"qx_resolution": cfg.qx_res(pair.nx), "u_cardinality": cfg.u_card(pair.nx)}
    meta = {"tool": f"dht-exp {__version__}", "command": "dht-bound",
            "problem": args.preset or os.path.basename(args.problem),
            "config": json.dumps(_jsonable(cfg_echo), sort_keys=True)}
    if args.no_loss_check:
        for R in rates:
            rep = no_loss_check(R, pair, cfg)
            meta[f"no_loss R={fmt(R)}"] = (f"{'holds' if rep.holds else 'fails'} margin={fmt(rep.margin)}"
                                           + "".join(f" E1={fmt(c['E1'])}:{'agree' if c['agree'] else 'differ'}"
                                                     for c in rep.checks))
    header = ["R", "E1", "E2_lower", "E2_converse", "qx_star", "tau_star"]
    text = render_csv(meta, header, rows) if args.format == "csv" else render_json(meta, header, rows)
    emit(text, args, {"rates": rates, "e1": args.e1, "search": cfg_echo}, t0)


def _pair_type(text: str, n: int, shape) -> TypeDescriptor:
    counts = parse_list(text, int)
    t = TypeDescriptor(tuple(counts), shape)
    if t.n != n:
        raise ProbError("type counts must sum to n")
    return t


def _default_qux(n: int) -> TypeDescriptor:
    # U uniform, X | U=0 uniform, X | U=1 deterministic
    if n % 4:
        raise ProbError("the default Q_UX needs n divisible by 4; pass --q-ux")
    return TypeDescriptor((n // 4, n // 4, 0, n // 2), (2, 2))


def _ensemble(args, pair) -> EnsembleSpec:
    if args.seed is None:
        raise ParseError("randomised commands require --seed")
    nu = args.u_card or 2
    q = _pair_type(args.q_ux, args.n, (nu, pair.nx)) if args.q_ux else _default_qux(args.n)
    return EnsembleSpec(args.n, q, args.rho_c, args.rho_s, args.seed)


def lab_chernoff_mc(args, pair):
    spec = _ensemble(args, pair)
    lam = args.lam
    vals = []
    for i in range(args.trials):
        d = draw_hierarchical(spec, i)
        vals.append(math.exp(args.n * chernoff_parameter_exact(d, pair, lam)))
    emp = -math.log(float(np.mean(vals))) / args.n
    n = args.n
    rho_c = math.log(spec.n_clouds) / n
    rho = math.log(spec.n_clouds * spec.n_satellites) / n
    qux = spec.q_ux.pmf()
    a = arc_forms(rho, rho_c, qux, lam, pair)
    dl = chernoff_diag_lam(qux.sum(0), lam, pair)
    target = min(dl, a.a_rc)
    return {"empirical_exponent": emp, "d_lambda": dl, "a_rc": a.a_rc, "target": target,
            "rho_c": rho_c, "rho": rho, "slack": MC_SLACK, "pass": bool(emp >= target - MC_SLACK)}


def lab_enumerators(args, pair):
    spec = _ensemble(args, pair)
    ny = pair.ny
    y = parse_seq(args.y) if args.y else [i * ny // args.n for i in range(args.n)]
    if len(y) != args.n:
        raise ProbError("y must have length n")
    counts = []
    for i in range(args.trials):
        counts.append(enumerate_tally(draw_hierarchical(spec, i), y, ny).n)
    keys = sorted(set().union(*counts), key=lambda k: k.counts)
    rows, ok = [], True
    for k in keys:
        v = np.array([c[k] for c in counts], dtype=float)
        exact = float(enumerator_expectation_exact(spec, k, y, ny))
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        z = (v.mean() - exact) / se if se > 0 else (0.0 if v.mean() == exact else math.inf)
        ok &= abs(z) <= Z_LIMIT
        q = k.pmf().reshape(k.shape)
        rows.append({"q_uy": list(k.counts), "exact": exact, "mc_mean": float(v.mean()), "se": se, "z": z,
                     "exponent": math.log(spec.n_clouds) / args.n - mutual_information(q)})
    return {"y": y, "n_clouds": spec.n_clouds, "n_satellites": spec.n_satellites, "types": rows,
            "z_limit": Z_LIMIT, "pass": bool(ok)}


def lab_cover(args, pair):
    if args.seed is None:
        raise ParseError("randomised commands require --seed")
    q = _pair_type(args.type, args.n, ()) if args.type else TypeDescriptor(
        tuple(np.bincount(np.arange(args.n) % pair.nx, minlength=pair.nx)))
    size = type_class_size(q)
    if size > 2**16:
        raise SizeGuardError(f"type class of size {size} is too large")
    k = args.code_size or max(1, size // 10)
    if not 1 <= k <= size:
        raise ProbError("code size must lie in [1, |T|]")
    members = list(type_enumerate(q))
    pick = ensemble_rng(args.seed, 1).choice(size, size=k, replace=False)
    base = CdCode(tuple(members[i] for i in sorted(pick)), len(q.counts))
    res = greedy_cover(q, base, args.seed, max_perms=args.max_perms)
    union = set().union(*(b.codewords for b in res.bins))
    disjoint = sum(len(b) for b in res.bins) == len(union)
    bound = math.ceil(size / k * math.log(size)) + COVER_EXTRA
    return {"type": list(q.counts), "type_class_size": size, "code_size": k,
            "permutations_drawn": res.n_drawn, "permutations_used": len(res.perms), "bins": len(res.bins),
            "bin_sizes": [len(b) for b in res.bins], "partition": bool(disjoint and len(union) == size),
            "permutation_bound": bound, "pass": bool(len(res.perms) <= bound)}


def lab_np(args, pair):
    if args.x:
        code = CdCode((tuple(parse_seq(args.x)),), pair.nx)
    elif args.type:
        code = type_class_code(_pair_type(args.type, args.n, ()), pair.nx)
    else:
        code = CdCode(((0,) * args.n,), pair.nx)
    if code.n != args.n:
        raise ProbError("codeword length must equal n")
    if code.n > 16:
        raise SizeGuardError("n is limited to 16")
    p1, p2 = cd_np_exact(code, pair, args.T, args.eta)
    return {"n": code.n, "code_size": len(code), "T": args.T, "eta": args.eta, "p1": p1, "p2": p2}


LAB = {"chernoff-mc": lab_chernoff_mc, "enumerators": lab_enumerators, "cover": lab_cover, "np": lab_np}


def cmd_lab(args, pair, t0):
    if args.n < 1:
        raise ProbError("n must be positive")
    if pair.ny ** args.n > 2**16 and args.sub != "cover":
        raise SizeGuardError(f"|Y|^n = {pair.ny ** args.n} exceeds the desk-scale limit")
    report = {"subcommand": args.sub, "version": __version__, "seed": args.seed}
    report.update(LAB[args.sub](args, pair))
    emit(json.dumps(_jsonable(report), indent=2) + "\n", args, {"subcommand": args.sub, "n": args.n,
                                                                 "trials": args.trials}, t0)


# --------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--problem", help="JSON problem file")
    src.add_argument("--preset", help="named instance, e.g. binary-example")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker processes (default $DHT_EXP_THREADS or 1)")
    common.add_argument("--out", help="output path; a manifest sidecar is written next to it")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = _Parser(prog="dht-exp", description="Error exponents for distributed hypothesis testing.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    d2 = sub.add_parser("d2", parents=[common], help="ordinary HT reliability curve")
    d2.add_argument("--d1", default="0:0.1:0.01", help="start:end:step")
    d2.add_argument("--marginal", choices=("joint", "x", "y"), default="joint")

    b = sub.add_parser("dht-bound", parents=[common], help="achievable and converse DHT exponents")
    b.add_argument("--rates", required=True, help="comma separated rates (nats)")
    b.add_argument("--e1", default="0:0.1:0.01", help="start:end:step")
    b.add_argument("--tau-max", type=float)
    b.add_argument("--tau-points", type=int)
    b.add_argument("--u-card", type=int)
    b.add_argument("--u-res", type=int)
    b.add_argument("--qx-res", type=int)
    b.add_argument("--rb-grid", type=int)
    b.add_argument("--rb-search", choices=("crossing", "grid"))
    b.add_argument("--scheme", choices=("full", "binning", "quantization"))
    b.add_argument("--doubled", action="store_true", help="double every grid density")
    b.add_argument("--no-loss-check", action="store_true")

    lab = sub.add_parser("lab", parents=[common], help="exact and Monte-Carlo experiments")
    lab.add_argument("sub", choices=sorted(LAB))
    lab.add_argument("--n", type=int, default=8)
    lab.add_argument("--trials", type=int, default=200)
    lab.add_argument("--lam", type=float, default=0.5)
    lab.add_argument("--q-ux", help="joint (U, X) counts, row-major")
    lab.add_argument("--u-card", type=int)
    lab.add_argument("--rho-c", type=float, default=0.15)
    lab.add_argument("--rho-s", type=float, default=0.15)
    lab.add_argument("--y", help="output sequence for enumerators")
    lab.add_argument("--type", help="type counts for cover/np")
    lab.add_argument("--code-size", type=int)
    lab.add_argument("--max-perms", type=int, default=10000)
    lab.add_argument("--x", help="single codeword for np")
    lab.add_argument("--T", type=float, default=0.0)
    lab.add_argument("--eta", type=float, default=0.0)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.cmd == "lab" and args.preset is None and args.problem is None:
            args.preset = "binary-example"
        pair = load_problem(args.problem, args.preset)
        {"d2": cmd_d2, "dht-bound": cmd_dht_bound, "lab": cmd_lab}[args.cmd](args, pair, t0)
    except ParseError as e:
        print(f"dht-exp: error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (SizeGuardError, OverflowError) as e:
        print(f"dht-exp: size guard: {e}", file=sys.stderr)
        return EXIT_SIZE
    except (ProbError, CoverError) as e:
        print(f"dht-exp: infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
